//! Python bindings for `qtmlab`.
//!
//! ```python
//! import pyqtmlab as q
//! v = q.ValueProfile([[1.0, 0.0], [0.0, 0.4]])
//! eq = q.solve_equilibrium(v, q.MechanismParams.half_max(v))
//! print(eq.p, eq.certified())
//! ```

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use qtmlab::analysis::{self, BoundKind, BoundReport};
use qtmlab::equilibrium::{self, EquilibriumSolution, SolveOptions, SolveRoute};
use qtmlab::instance::{self, ExternalWelfare};
use qtmlab::squap::{self, SquapConfig, Variant};

fn err(e: qtmlab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Agents' values, one row per agent and one column per alternative.
#[pyclass(name = "ValueProfile", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyValueProfile(qtmlab::ValueProfile);

#[pymethods]
impl PyValueProfile {
    #[new]
    fn new(values: Vec<Vec<f64>>) -> PyResult<Self> {
        qtmlab::ValueProfile::new(values).map(Self).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        self.0.values().to_vec()
    }

    fn aggregates(&self) -> Vec<f64> {
        self.0.aggregates()
    }

    fn max_value(&self) -> f64 {
        self.0.max_value()
    }

    /// Copy with alternatives sorted by decreasing total value.
    fn canonical(&self) -> Self {
        Self(self.0.canonical())
    }

    /// Spread, gap, disagreement (None unless m = 2) and max value.
    #[pyo3(signature = (b=None))]
    fn stats<'py>(&self, py: Python<'py>, b: Option<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
        let ext = b.map(ExternalWelfare::truthful).transpose().map_err(err)?;
        let s = instance::compute_stats(&self.0, ext.as_ref()).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("spread", s.spread)?;
        d.set_item("gap", s.gap)?;
        d.set_item("disagreement", s.disagreement)?;
        d.set_item("max_value", s.max_value)?;
        d.set_item("order", s.order)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("ValueProfile(n={}, m={})", self.0.n(), self.0.m())
    }
}

#[pyclass(name = "MechanismParams", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyMechanismParams(qtmlab::MechanismParams);

#[pymethods]
impl PyMechanismParams {
    #[new]
    fn new(c: f64) -> PyResult<Self> {
        qtmlab::MechanismParams::new(c).map(Self).map_err(err)
    }

    /// `c` equal to half the largest value in the profile.
    #[staticmethod]
    fn half_max(profile: &PyValueProfile) -> PyResult<Self> {
        qtmlab::MechanismParams::half_max(&profile.0)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn c(&self) -> f64 {
        self.0.c
    }

    #[getter]
    fn concave(&self) -> bool {
        self.0.concave
    }

    fn __repr__(&self) -> String {
        format!("MechanismParams(c={})", self.0.c)
    }
}

#[pyclass(name = "Equilibrium", frozen)]
struct PyEquilibrium(EquilibriumSolution);

#[pymethods]
impl PyEquilibrium {
    /// Aggregate votes per alternative.
    #[getter(A)]
    fn aggregates(&self) -> Vec<f64> {
        self.0.aggregates.clone()
    }

    #[getter]
    fn p(&self) -> Vec<f64> {
        self.0.p.probabilities().to_vec()
    }

    #[getter]
    fn votes(&self) -> Vec<Vec<f64>> {
        self.0.votes.rows().to_vec()
    }

    #[getter]
    fn foc_residual(&self) -> f64 {
        self.0.foc_residual
    }

    #[getter]
    fn br_slack(&self) -> f64 {
        self.0.br_slack
    }

    #[getter]
    fn status(&self) -> String {
        serde_json::to_value(self.0.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }

    #[pyo3(signature = (foc_tol=1e-10, br_tol=1e-6))]
    fn certified(&self, foc_tol: f64, br_tol: f64) -> bool {
        self.0.is_certified(foc_tol, br_tol)
    }

    fn __repr__(&self) -> String {
        format!("Equilibrium(p={:?}, status={})", self.p(), self.status())
    }
}

fn options(route: &str) -> PyResult<SolveOptions> {
    let route = match route {
        "auto" => SolveRoute::Auto,
        "fixed-point" => SolveRoute::FixedPoint,
        other => return Err(PyValueError::new_err(format!("unknown route {other:?}"))),
    };
    Ok(SolveOptions {
        route,
        ..SolveOptions::default()
    })
}

#[pyfunction]
fn softmax(aggregates: Vec<f64>) -> PyResult<Vec<f64>> {
    qtmlab::softmax(&aggregates)
        .map(|p| p.probabilities().to_vec())
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (profile, params, route="auto"))]
fn solve_equilibrium(
    profile: &PyValueProfile,
    params: &PyMechanismParams,
    route: &str,
) -> PyResult<PyEquilibrium> {
    equilibrium::solve_equilibrium(&profile.0, &params.0, &options(route)?)
        .map(PyEquilibrium)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (profile, params, starts=8, seed=0))]
fn solve_all_equilibria(
    profile: &PyValueProfile,
    params: &PyMechanismParams,
    starts: usize,
    seed: u64,
) -> PyResult<Vec<PyEquilibrium>> {
    equilibrium::solve_all_equilibria(
        &profile.0,
        &params.0,
        &SolveOptions::default(),
        starts,
        seed,
    )
    .map(|v| v.into_iter().map(PyEquilibrium).collect())
    .map_err(err)
}

/// `(A_1, p_1)` for two alternatives with totals `v1 >= v2`.
#[pyfunction]
#[pyo3(signature = (v1, v2, c, tol=1e-12))]
fn solve_two_alt(v1: f64, v2: f64, c: f64, tol: f64) -> PyResult<(f64, f64)> {
    let params = qtmlab::MechanismParams::new(c).map_err(err)?;
    let s = equilibrium::solve_two_alt(v1, v2, &params, tol).map_err(err)?;
    Ok((s.a1, s.p[0]))
}

#[pyfunction]
#[pyo3(signature = (votes, c, redistribute=false))]
fn settle<'py>(
    py: Python<'py>,
    votes: Vec<Vec<f64>>,
    c: f64,
    redistribute: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let votes = qtmlab::VoteProfile::new(votes).map_err(err)?;
    let params = qtmlab::MechanismParams::new(c).map_err(err)?;
    let r = qtmlab::qtm::settle(&votes, &params, redistribute).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("charges", r.per_agent_charge)?;
    d.set_item("rebates", r.per_agent_rebate)?;
    d.set_item("revenue", r.revenue)?;
    d.set_item("net", r.net_transfers)?;
    Ok(d)
}

#[pyfunction]
fn ppoa(p: Vec<f64>, welfare: Vec<f64>) -> PyResult<f64> {
    let p = qtmlab::SoftmaxOutcome::from_probabilities(p).map_err(err)?;
    analysis::ppoa(&p, &welfare).map_err(err)
}

#[pyfunction]
fn bound_spread(t: f64) -> f64 {
    analysis::bound_spread(t)
}

#[pyfunction]
fn bound_gap(g: f64) -> f64 {
    analysis::bound_gap(g)
}

#[pyfunction]
fn bound_p1(c: f64, delta: f64) -> f64 {
    analysis::bound_p1(c, delta)
}

#[pyfunction]
fn bound_m(m: usize) -> f64 {
    analysis::bound_m(m)
}

#[pyfunction]
fn bound_squap(t: f64, alpha: f64) -> f64 {
    analysis::bound_squap(t, alpha)
}

fn report_dict<'py>(py: Python<'py>, r: &BoundReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("name", &r.name)?;
    d.set_item(
        "kind",
        match r.kind {
            BoundKind::Lower => "lower",
            BoundKind::Upper => "upper",
        },
    )?;
    d.set_item("value", r.value)?;
    d.set_item("measured", r.satisfied_by)?;
    d.set_item("margin", r.margin)?;
    d.set_item("applicable", r.applicable)?;
    d.set_item("holds", r.holds())?;
    Ok(d)
}

/// Bound reports for a solved instance; pass `b` for external welfare.
#[pyfunction]
#[pyo3(signature = (eq, profile, params, b=None))]
fn certify<'py>(
    py: Python<'py>,
    eq: &PyEquilibrium,
    profile: &PyValueProfile,
    params: &PyMechanismParams,
    b: Option<Vec<f64>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let ext = b.map(ExternalWelfare::truthful).transpose().map_err(err)?;
    analysis::certify_instance(&eq.0, &profile.0, &params.0, ext.as_ref())
        .map_err(err)?
        .iter()
        .map(|r| report_dict(py, r))
        .collect()
}

#[pyfunction]
fn generate_with_spread(m: usize, target: f64, seed: u64) -> PyResult<PyValueProfile> {
    instance::generate_with_spread(m, target, seed)
        .map(PyValueProfile)
        .map_err(err)
}

/// Runs the two-stage mechanism. `config` is a JSON object with the same
/// fields as the CLI's `squap` section; the run comes back as JSON text.
#[pyfunction]
fn run_squap(profile: &PyValueProfile, b: Vec<f64>, config: &str) -> PyResult<String> {
    let cfg: SquapConfig =
        serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let run = match cfg.variant {
        Variant::Impractical => squap::run_impractical_squap(&profile.0, &b, &cfg),
        Variant::Practical => squap::run_practical_squap(&profile.0, &b, &cfg),
    }
    .map_err(err)?;
    serde_json::to_string(&run).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn pyqtmlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyValueProfile>()?;
    m.add_class::<PyMechanismParams>()?;
    m.add_class::<PyEquilibrium>()?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(solve_equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(solve_all_equilibria, m)?)?;
    m.add_function(wrap_pyfunction!(solve_two_alt, m)?)?;
    m.add_function(wrap_pyfunction!(settle, m)?)?;
    m.add_function(wrap_pyfunction!(ppoa, m)?)?;
    m.add_function(wrap_pyfunction!(bound_spread, m)?)?;
    m.add_function(wrap_pyfunction!(bound_gap, m)?)?;
    m.add_function(wrap_pyfunction!(bound_p1, m)?)?;
    m.add_function(wrap_pyfunction!(bound_m, m)?)?;
    m.add_function(wrap_pyfunction!(bound_squap, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(generate_with_spread, m)?)?;
    m.add_function(wrap_pyfunction!(run_squap, m)?)?;
    Ok(())
}
