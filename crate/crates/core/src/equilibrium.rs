//! Pure-strategy Nash equilibria of the QTM through the first-order
//! conditions
//!
//! ```text
//! a[i][k] = p_k / (2c) * (v[i][k] - sum_l p_l v[i][l])
//! A_k     = p_k / (2c) * (V_k    - sum_l p_l V_l)
//! ```
//!
//! The aggregate condition is solved first (bisection for two alternatives,
//! a damped fixed-point iteration otherwise), individual votes are read off
//! the solved distribution, and the result is certified by measuring the FOC
//! residual and the best-response slack of every agent.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{MechanismParams, ValueProfile};
use crate::qtm::{hessian_at, own_utility, softmax, SoftmaxOutcome, VoteProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    NotApplicable,
}

/// Solution of the two-alternative aggregate condition.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoAltSolution {
    /// `A_1`; `A_2 = -A_1`.
    pub a1: f64,
    pub p: SoftmaxOutcome,
    pub residual: f64,
    pub status: SolveStatus,
}

/// `A - dV / (2c (e^A + e^-A)^2)`, increasing in `A >= 0`.
pub fn two_alt_residual(a1: f64, delta: f64, c: f64) -> f64 {
    let cosh = a1.cosh();
    a1 - delta / (8.0 * c * cosh * cosh)
}

/// Solves `A_1 = p_1 p_2 (V_1 - V_2) / (2c)` with `A_2 = -A_1` by bisection
/// on `[0, (V_1 - V_2) / (8c)]`.
///
/// Requires canonical order `V_1 >= V_2`.
pub fn solve_two_alt(
    v1: f64,
    v2: f64,
    params: &MechanismParams,
    tol: f64,
) -> Result<TwoAltSolution> {
    if !(v1.is_finite() && v2.is_finite()) {
        return Err(Error::NonFinite("aggregate values"));
    }
    if v1 < v2 {
        return Err(Error::NotCanonical { v1, v2 });
    }
    let c = params.c;
    let delta = v1 - v2;
    let (mut lo, mut hi) = (0.0_f64, delta / (8.0 * c));
    let mut best = (0.0, two_alt_residual(0.0, delta, c));
    while best.1 != 0.0 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            let r_hi = two_alt_residual(hi, delta, c);
            if r_hi.abs() < best.1.abs() {
                best = (hi, r_hi);
            }
            break;
        }
        let r = two_alt_residual(mid, delta, c);
        if r.abs() < best.1.abs() {
            best = (mid, r);
        }
        if r > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (a1, residual) = best;
    let status = if residual.abs() <= tol {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIterations
    };
    Ok(TwoAltSolution {
        a1,
        p: softmax(&[a1, -a1])?,
        residual: residual.abs(),
        status,
    })
}

/// Damped fixed-point settings for the aggregate condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FixedPointConfig {
    /// Largest damping `lambda` in `A <- (1 - lambda) A + lambda F(A)`.
    pub damping: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_iter: 100_000,
            tol: 1e-10,
        }
    }
}

/// Solved aggregate votes and the induced distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSolution {
    pub aggregates: Vec<f64>,
    pub p: SoftmaxOutcome,
    /// `max_k |A_k - F_k(A)|`.
    pub residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// `F_k(A) = p_k / (2c) (W_k - sum_l p_l W_l)` with `p = softmax(A)`.
pub fn foc_map(welfare: &[f64], c: f64, aggregates: &[f64]) -> (SoftmaxOutcome, Vec<f64>) {
    let p = softmax(aggregates).expect("finite aggregates");
    let mean = p.expectation(welfare);
    let f = welfare
        .iter()
        .enumerate()
        .map(|(k, w)| p[k] / (2.0 * c) * (w - mean))
        .collect();
    (p, f)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `F` is the gradient of `E_p W / (2c)`, so fixed points of `F` are the
/// critical points of this potential and the damped iteration is gradient
/// ascent on it.
fn potential(welfare: &[f64], c: f64, aggregates: &[f64]) -> f64 {
    let p = softmax(aggregates).expect("finite aggregates");
    p.expectation(welfare) / (2.0 * c) - 0.5 * aggregates.iter().map(|a| a * a).sum::<f64>()
}

fn check_welfare(welfare: &[f64]) -> Result<()> {
    if welfare.len() < 2 {
        return Err(Error::InvalidParameter(
            "at least two alternatives are required".into(),
        ));
    }
    if welfare.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("welfare totals"));
    }
    Ok(())
}

/// Solves `A = F(A)` starting from `A = 0`.
pub fn solve_foc_fixed_point(
    welfare: &[f64],
    params: &MechanismParams,
    config: &FixedPointConfig,
) -> Result<AggregateSolution> {
    solve_foc_fixed_point_from(welfare, params, config, &vec![0.0; welfare.len()])
}

/// Damped iteration `A <- A + lambda (F(A) - A)`. The step starts at the
/// configured damping and is halved until the potential increases
/// sufficiently; a few Newton steps on `A - F(A)` finish the solve.
pub fn solve_foc_fixed_point_from(
    welfare: &[f64],
    params: &MechanismParams,
    config: &FixedPointConfig,
    init: &[f64],
) -> Result<AggregateSolution> {
    check_welfare(welfare)?;
    if init.len() != welfare.len() {
        return Err(Error::DimensionMismatch {
            what: "initial aggregates",
            expected: welfare.len(),
            actual: init.len(),
        });
    }
    if !(config.damping > 0.0 && config.damping <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "damping must lie in (0, 1], got {}",
            config.damping
        )));
    }
    let c = params.c;
    let mut a = init.to_vec();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < config.max_iter {
        let (_, f) = foc_map(welfare, c, &a);
        let g: Vec<f64> = f.iter().zip(&a).map(|(f, a)| f - a).collect();
        residual = g.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if residual <= config.tol {
            break;
        }
        let psi = potential(welfare, c, &a);
        let g2: f64 = g.iter().map(|x| x * x).sum();
        let mut step = config.damping;
        let mut candidate: Vec<f64>;
        loop {
            candidate = a.iter().zip(&g).map(|(a, g)| a + step * g).collect();
            let gain = potential(welfare, c, &candidate) - psi;
            if gain >= 1e-4 * step * g2 || step < 1e-12 {
                break;
            }
            // close to the solution the gain is below rounding of the
            // potential; fall back to the residual
            if gain.abs() <= 1e-12 * (1.0 + psi.abs()) {
                let (_, fc) = foc_map(welfare, c, &candidate);
                if max_abs_diff(&fc, &candidate) < residual {
                    break;
                }
            }
            step *= 0.5;
        }
        a = candidate;
        iterations += 1;
    }
    if iterations < config.max_iter {
        iterations += newton_polish(
            welfare,
            c,
            &mut a,
            &mut residual,
            config.max_iter - iterations,
        );
    }
    let (p, _) = foc_map(welfare, c, &a);
    let status = if residual <= config.tol {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIterations
    };
    Ok(AggregateSolution {
        aggregates: a,
        p,
        residual,
        iterations,
        status,
    })
}

/// Returns the number of Newton steps taken.
fn newton_polish(
    welfare: &[f64],
    c: f64,
    a: &mut Vec<f64>,
    residual: &mut f64,
    budget: usize,
) -> usize {
    let m = welfare.len();
    let mut steps = 0;
    while steps < budget.min(20) {
        let (p, f) = foc_map(welfare, c, a);
        let current = max_abs_diff(&f, a);
        *residual = current;
        if current == 0.0 {
            return steps;
        }
        let mean = p.expectation(welfare);
        // Jacobian of F: the Hessian of E_p W / (2c)
        let jac = DMatrix::from_fn(m, m, |k, l| {
            let delta = if k == l { 1.0 } else { 0.0 };
            (p[k] * (delta - p[l]) * (welfare[k] - mean) - p[k] * p[l] * (welfare[l] - mean))
                / (2.0 * c)
        });
        let system = DMatrix::identity(m, m) - jac;
        let rhs = DVector::from_iterator(m, f.iter().zip(a.iter()).map(|(f, a)| f - a));
        let Some(step) = system.lu().solve(&rhs) else {
            return steps;
        };
        let candidate: Vec<f64> = a.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
        if candidate.iter().any(|x| !x.is_finite()) {
            return steps;
        }
        let (_, fc) = foc_map(welfare, c, &candidate);
        let next = max_abs_diff(&fc, &candidate);
        if next >= current {
            return steps;
        }
        *a = candidate;
        *residual = next;
        steps += 1;
    }
    steps
}

/// Solves the aggregate condition for any welfare vector: bisection when
/// `m = 2` (in either order), the damped fixed point otherwise.
pub fn solve_aggregate(
    welfare: &[f64],
    params: &MechanismParams,
    config: &FixedPointConfig,
) -> Result<AggregateSolution> {
    check_welfare(welfare)?;
    if welfare.len() == 2 {
        let flipped = welfare[1] > welfare[0];
        let (hi, lo) = if flipped {
            (welfare[1], welfare[0])
        } else {
            (welfare[0], welfare[1])
        };
        let sol = solve_two_alt(hi, lo, params, config.tol)?;
        let aggregates = if flipped {
            vec![-sol.a1, sol.a1]
        } else {
            vec![sol.a1, -sol.a1]
        };
        let (p, f) = foc_map(welfare, params.c, &aggregates);
        Ok(AggregateSolution {
            residual: max_abs_diff(&f, &aggregates),
            aggregates,
            p,
            iterations: 0,
            status: sol.status,
        })
    } else {
        solve_foc_fixed_point(welfare, params, config)
    }
}

/// Runs the fixed point from `A = 0` and from `starts` random points and
/// returns every distinct converged solution, the `A = 0` one first.
pub fn multi_start_aggregate(
    welfare: &[f64],
    params: &MechanismParams,
    config: &FixedPointConfig,
    starts: usize,
    seed: u64,
) -> Result<Vec<AggregateSolution>> {
    check_welfare(welfare)?;
    let m = welfare.len();
    let spread = welfare.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - welfare.iter().copied().fold(f64::INFINITY, f64::min);
    let radius = 2.0 + 0.5 * (1.0 + spread / (2.0 * params.c)).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found: Vec<AggregateSolution> = Vec::new();
    let mut inits = vec![vec![0.0; m]];
    inits.extend((0..starts).map(|_| {
        (0..m)
            .map(|_| rng.random_range(-radius..=radius))
            .collect::<Vec<f64>>()
    }));
    for init in inits {
        let sol = solve_foc_fixed_point_from(welfare, params, config, &init)?;
        if sol.status != SolveStatus::Converged {
            continue;
        }
        if found
            .iter()
            .all(|f| max_abs_diff(&f.aggregates, &sol.aggregates) > 1e-6)
        {
            found.push(sol);
        }
    }
    if found.is_empty() {
        return Err(Error::NoConvergence {
            solver: "multi-start fixed point",
            iterations: config.max_iter,
            residual: f64::NAN,
        });
    }
    Ok(found)
}

/// Individual FOC votes `a[i][k] = p_k / (2c) (v[i][k] - E_p v_i)`.
pub fn votes_from_aggregate(
    values: &ValueProfile,
    p: &SoftmaxOutcome,
    params: &MechanismParams,
) -> Result<VoteProfile> {
    if p.len() != values.m() {
        return Err(Error::DimensionMismatch {
            what: "alternatives",
            expected: values.m(),
            actual: p.len(),
        });
    }
    let rows = values
        .values()
        .iter()
        .map(|v| {
            let mean = p.expectation(v);
            v.iter()
                .enumerate()
                .map(|(k, x)| p[k] / (2.0 * params.c) * (x - mean))
                .collect()
        })
        .collect();
    VoteProfile::new(rows)
}

/// Maximizer of an agent's own utility against fixed opponents.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub votes: Vec<f64>,
    /// Utility excluding the redistribution term.
    pub utility: f64,
    pub gradient_norm: f64,
    pub on_boundary: bool,
    /// Set when `c < max_k v_k / 2`: the objective may be nonconcave and the
    /// result comes from a multi-start local search.
    pub heuristic: bool,
}

fn own_gradient(
    own: &[f64],
    opponents: &[f64],
    values: &[f64],
    c: f64,
) -> (SoftmaxOutcome, Vec<f64>) {
    let total: Vec<f64> = own.iter().zip(opponents).map(|(a, o)| a + o).collect();
    let p = softmax(&total).expect("finite votes");
    let mean = p.expectation(values);
    let g = (0..own.len())
        .map(|k| p[k] * (values[k] - mean) - 2.0 * c * own[k])
        .collect();
    (p, g)
}

fn projected_norm(own: &[f64], g: &[f64], radius: f64) -> f64 {
    own.iter()
        .zip(g)
        .map(|(&a, &g)| {
            if (a >= radius && g > 0.0) || (a <= -radius && g < 0.0) {
                0.0
            } else {
                g * g
            }
        })
        .sum::<f64>()
        .sqrt()
}

/// Projected ascent from `start` inside `[-radius, radius]^m`. Steps follow
/// the Newton direction where the Hessian is negative definite and the
/// gradient elsewhere, with Armijo backtracking.
fn local_ascent(
    start: &[f64],
    opponents: &[f64],
    values: &[f64],
    c: f64,
    radius: f64,
) -> (Vec<f64>, f64, f64) {
    let project = |x: f64| x.clamp(-radius, radius);
    let f = |a: &[f64]| own_utility(a, opponents, values, c);
    let mut a: Vec<f64> = start.iter().map(|&x| project(x)).collect();
    let mut fa = f(&a);
    let mut gnorm = f64::INFINITY;
    for _ in 0..500 {
        let (p, g) = own_gradient(&a, opponents, values, c);
        gnorm = projected_norm(&a, &g, radius);
        if gnorm <= 1e-14 {
            break;
        }
        let h = hessian_at(&p, values, c);
        let gv = DVector::from_column_slice(&g);
        let newton = (-h).cholesky().map(|chol| chol.solve(&gv));
        let mut directions = Vec::with_capacity(2);
        if let Some(d) = newton {
            if d.dot(&gv) > 0.0 {
                directions.push(d.iter().copied().collect::<Vec<f64>>());
            }
        }
        directions.push(g.clone());
        let mut moved = false;
        for (attempt, dir) in directions.iter().enumerate() {
            let is_newton = attempt == 0 && directions.len() == 2;
            let mut t = 1.0;
            for _ in 0..60 {
                let cand: Vec<f64> = a.iter().zip(dir).map(|(a, d)| project(a + t * d)).collect();
                let fc = f(&cand);
                let ascent: f64 = g
                    .iter()
                    .zip(cand.iter().zip(&a))
                    .map(|(g, (x, y))| g * (x - y))
                    .sum();
                let accept = fc >= fa + 1e-4 * ascent && cand != a;
                // near the optimum the utility gain falls below rounding;
                // accept a full Newton step that still shrinks the gradient
                let polish = is_newton && t == 1.0 && !accept && cand != a && {
                    let (_, gc) = own_gradient(&cand, opponents, values, c);
                    projected_norm(&cand, &gc, radius) < gnorm
                };
                if accept || polish {
                    a = cand;
                    fa = fc;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if moved {
                break;
            }
        }
        if !moved {
            break;
        }
    }
    (a, fa, gnorm)
}

/// Best response of an agent with values `values` to opponents' aggregate
/// votes, searched over the dominated-strategy box.
pub fn best_response(
    opponents: &[f64],
    values: &[f64],
    params: &MechanismParams,
) -> Result<BestResponse> {
    if opponents.len() != values.len() {
        return Err(Error::DimensionMismatch {
            what: "alternatives",
            expected: values.len(),
            actual: opponents.len(),
        });
    }
    if opponents.iter().chain(values).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("best-response inputs"));
    }
    let m = values.len();
    let c = params.c;
    let vmax = values.iter().copied().fold(0.0, f64::max);
    let radius = (vmax / c).sqrt();
    let heuristic = c < 0.5 * vmax;
    let zero = vec![0.0; m];
    let (votes, utility, gradient_norm) = if radius == 0.0 {
        let u = own_utility(&zero, opponents, values, c);
        (zero, u, 0.0)
    } else if !heuristic {
        local_ascent(&zero, opponents, values, c, radius)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut starts = vec![zero];
        for k in 0..m {
            for sign in [1.0, -1.0] {
                let mut s = vec![0.0; m];
                s[k] = sign * 0.5 * radius;
                starts.push(s);
            }
        }
        starts.extend((0..8).map(|_| (0..m).map(|_| rng.random_range(-radius..=radius)).collect()));
        starts
            .iter()
            .map(|s| local_ascent(s, opponents, values, c, radius))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one start")
    };
    let on_boundary = votes.iter().any(|a| a.abs() >= radius - 1e-12) && radius > 0.0;
    Ok(BestResponse {
        votes,
        utility,
        gradient_norm,
        on_boundary,
        heuristic,
    })
}

/// Largest violation of the individual and aggregate first-order conditions,
/// with `p = softmax(sum_i a_i)`.
pub fn foc_residual(
    votes: &VoteProfile,
    values: &ValueProfile,
    params: &MechanismParams,
) -> Result<f64> {
    votes.check_against(values)?;
    let aggregates = votes.aggregates();
    let p = softmax(&aggregates)?;
    let fitted = votes_from_aggregate(values, &p, params)?;
    let individual = votes
        .rows()
        .iter()
        .zip(fitted.rows())
        .map(|(a, b)| max_abs_diff(a, b))
        .fold(0.0, f64::max);
    let (_, f) = foc_map(&values.aggregates(), params.c, &aggregates);
    Ok(individual.max(max_abs_diff(&aggregates, &f)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Certificate {
    pub foc_residual: f64,
    /// Largest utility gain any agent can get by best-responding.
    pub br_slack: f64,
    pub certified: bool,
}

/// Certifies a vote profile as an equilibrium when both the FOC residual and
/// the best-response slack are within `tol`.
pub fn verify_equilibrium(
    votes: &VoteProfile,
    values: &ValueProfile,
    params: &MechanismParams,
    tol: f64,
) -> Result<Certificate> {
    let foc = foc_residual(votes, values, params)?;
    let slack = br_slack(votes, values, params)?;
    Ok(Certificate {
        foc_residual: foc,
        br_slack: slack,
        certified: foc <= tol && slack <= tol,
    })
}

pub fn br_slack(
    votes: &VoteProfile,
    values: &ValueProfile,
    params: &MechanismParams,
) -> Result<f64> {
    votes.check_against(values)?;
    let mut slack = 0.0_f64;
    for i in 0..values.n() {
        let opp = votes.aggregates_without(i);
        let current = own_utility(votes.row(i), &opp, values.agent(i), params.c);
        let br = best_response(&opp, values.agent(i), params)?;
        slack = slack.max(br.utility - current);
    }
    Ok(slack)
}

/// A solved and certified equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EquilibriumSolution {
    #[serde(skip)]
    pub votes: VoteProfile,
    #[serde(rename = "A")]
    pub aggregates: Vec<f64>,
    pub p: SoftmaxOutcome,
    pub foc_residual: f64,
    pub br_slack: f64,
    pub status: SolveStatus,
}

impl EquilibriumSolution {
    pub fn is_certified(&self, foc_tol: f64, br_tol: f64) -> bool {
        self.status == SolveStatus::Converged
            && self.foc_residual <= foc_tol
            && self.br_slack <= br_tol
    }

    /// Packages a given vote profile with its diagnostics.
    pub fn from_votes(
        votes: VoteProfile,
        values: &ValueProfile,
        params: &MechanismParams,
        status: SolveStatus,
    ) -> Result<Self> {
        let aggregates = votes.aggregates();
        let p = softmax(&aggregates)?;
        let foc = foc_residual(&votes, values, params)?;
        let slack = br_slack(&votes, values, params)?;
        Ok(Self {
            votes,
            aggregates,
            p,
            foc_residual: foc,
            br_slack: slack,
            status,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveRoute {
    /// Bisection for two alternatives, fixed point otherwise.
    #[default]
    Auto,
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SolveOptions {
    pub fixed_point: FixedPointConfig,
    pub route: SolveRoute,
}

fn solution_from_aggregate(
    agg: AggregateSolution,
    values: &ValueProfile,
    params: &MechanismParams,
    tol: f64,
) -> Result<EquilibriumSolution> {
    let votes = votes_from_aggregate(values, &agg.p, params)?;
    let mut sol = EquilibriumSolution::from_votes(votes, values, params, agg.status)?;
    if sol.status == SolveStatus::Converged && sol.foc_residual > tol {
        sol.status = SolveStatus::MaxIterations;
    }
    Ok(sol)
}

/// Solves for the equilibrium reached from `A = 0` and certifies it.
pub fn solve_equilibrium(
    values: &ValueProfile,
    params: &MechanismParams,
    options: &SolveOptions,
) -> Result<EquilibriumSolution> {
    let welfare = values.aggregates();
    let agg = match options.route {
        SolveRoute::Auto => solve_aggregate(&welfare, params, &options.fixed_point)?,
        SolveRoute::FixedPoint => solve_foc_fixed_point(&welfare, params, &options.fixed_point)?,
    };
    solution_from_aggregate(agg, values, params, options.fixed_point.tol)
}

/// Every distinct equilibrium found from `A = 0` plus `starts` random starts.
pub fn solve_all_equilibria(
    values: &ValueProfile,
    params: &MechanismParams,
    options: &SolveOptions,
    starts: usize,
    seed: u64,
) -> Result<Vec<EquilibriumSolution>> {
    let welfare = values.aggregates();
    multi_start_aggregate(&welfare, params, &options.fixed_point, starts, seed)?
        .into_iter()
        .map(|agg| solution_from_aggregate(agg, values, params, options.fixed_point.tol))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// The initial profile followed by the profile after each round.
    pub profiles: Vec<VoteProfile>,
    /// FOC residual of each entry of `profiles`.
    pub residuals: Vec<f64>,
}

/// Round-robin best-response dynamics: each round updates every agent in
/// index order against the current votes of the others.
pub fn best_response_dynamics(
    values: &ValueProfile,
    params: &MechanismParams,
    init: &VoteProfile,
    rounds: usize,
) -> Result<Trajectory> {
    init.check_against(values)?;
    let mut current = init.clone();
    let mut profiles = vec![current.clone()];
    let mut residuals = vec![foc_residual(&current, values, params)?];
    let mut aggregates = current.aggregates();
    for _ in 0..rounds {
        for i in 0..values.n() {
            let opp: Vec<f64> = aggregates
                .iter()
                .zip(current.row(i))
                .map(|(a, x)| a - x)
                .collect();
            let br = best_response(&opp, values.agent(i), params)?;
            aggregates = opp.iter().zip(&br.votes).map(|(o, x)| o + x).collect();
            current.set_row(i, &br.votes);
        }
        // re-sum to keep rounding from accumulating
        aggregates = current.aggregates();
        residuals.push(foc_residual(&current, values, params)?);
        profiles.push(current.clone());
    }
    Ok(Trajectory {
        profiles,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(c: f64) -> MechanismParams {
        MechanismParams::new(c).unwrap()
    }

    /// Independent bracketing oracle: regula falsi on the same equation.
    fn regula_falsi(delta: f64, c: f64) -> f64 {
        let f = |a: f64| a - delta / (2.0 * c * (a.exp() + (-a).exp()).powi(2));
        let (mut lo, mut hi) = (0.0_f64, delta / (8.0 * c));
        let (mut flo, mut fhi) = (f(lo), f(hi));
        let mut side = 0;
        for _ in 0..500 {
            let x = (lo * fhi - hi * flo) / (fhi - flo);
            let fx = f(x);
            if fx.abs() < 1e-15 {
                return x;
            }
            if fx > 0.0 {
                hi = x;
                fhi = fx;
                if side == 1 {
                    flo *= 0.5;
                }
                side = 1;
            } else {
                lo = x;
                flo = fx;
                if side == -1 {
                    fhi *= 0.5;
                }
                side = -1;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn two_alt_tie_is_uniform() {
        let s = solve_two_alt(3.0, 3.0, &params(0.5), 1e-12).unwrap();
        assert_eq!(s.a1, 0.0);
        assert_eq!(s.p.probabilities(), &[0.5, 0.5]);
    }

    #[test]
    fn two_alt_gap_ten() {
        let s = solve_two_alt(10.0, 0.0, &params(0.5), 1e-12).unwrap();
        // frozen from a 40-digit bisection
        assert!((s.a1 - 1.019_324_009_266_894_7).abs() < 1e-12, "{}", s.a1);
        assert!((s.p[0] - 0.884_795_528_915_436_6).abs() < 1e-12);
        assert!((s.a1 - regula_falsi(10.0, 0.5)).abs() < 1e-12);
        let floor = 1.0 - 0.4_f64.powf(2.0 / 3.0);
        assert!((floor - 0.457_116_476_681_018_7).abs() < 1e-15);
        assert!(s.p[0] >= floor);
        assert_eq!(s.status, SolveStatus::Converged);
    }

    #[test]
    fn two_alt_requires_canonical_order() {
        assert!(matches!(
            solve_two_alt(1.0, 2.0, &params(0.5), 1e-12),
            Err(Error::NotCanonical { .. })
        ));
    }

    #[test]
    fn two_alt_agrees_with_regula_falsi() {
        for (delta, c) in [(0.1, 0.5), (3.0, 0.25), (57.0, 0.5), (1e4, 0.5), (2.0, 7.0)] {
            let s = solve_two_alt(delta, 0.0, &params(c), 1e-12).unwrap();
            assert!(
                (s.a1 - regula_falsi(delta, c)).abs() < 1e-10,
                "delta {delta}"
            );
            assert!(s.residual <= 1e-12);
        }
    }

    #[test]
    fn fixed_point_symmetric() {
        let s = solve_foc_fixed_point(&[2.0, 2.0, 2.0], &params(0.5), &FixedPointConfig::default())
            .unwrap();
        assert!(s.aggregates.iter().all(|a| a.abs() < 1e-15));
        assert!(s
            .p
            .probabilities()
            .iter()
            .all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn fixed_point_matches_bisection_for_two_alternatives() {
        for (v1, v2, c) in [
            (10.0, 0.0, 0.5),
            (4.0, 3.5, 0.5),
            (300.0, 20.0, 0.5),
            (1.0, 0.0, 2.0),
        ] {
            let fp =
                solve_foc_fixed_point(&[v1, v2], &params(c), &FixedPointConfig::default()).unwrap();
            let bis = solve_two_alt(v1, v2, &params(c), 1e-12).unwrap();
            assert_eq!(fp.status, SolveStatus::Converged);
            assert!((fp.aggregates[0] - bis.a1).abs() < 1e-9, "{v1} {v2}");
            assert!((fp.aggregates[1] + bis.a1).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_point_three_alternatives() {
        let s = solve_foc_fixed_point(&[3.0, 2.0, 1.0], &params(0.5), &FixedPointConfig::default())
            .unwrap();
        assert_eq!(s.status, SolveStatus::Converged);
        assert!(s.residual < 1e-10);
        assert!(s.aggregates.iter().sum::<f64>().abs() < 1e-9);
        // 40-digit damped iteration
        let expected = [
            0.358_565_746_163_125_5,
            -0.066_117_116_963_269_1,
            -0.292_448_629_199_856_37,
        ];
        for (a, e) in s.aggregates.iter().zip(expected) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn fixed_point_reports_iteration_cap() {
        let config = FixedPointConfig {
            max_iter: 1,
            tol: 1e-300,
            ..Default::default()
        };
        let s = solve_foc_fixed_point(&[3.0, 2.0, 1.0], &params(0.5), &config).unwrap();
        assert_eq!(s.status, SolveStatus::MaxIterations);
    }

    #[test]
    fn votes_for_indifferent_agent_are_zero() {
        let v = ValueProfile::new(vec![vec![0.7, 0.7, 0.7], vec![1.0, 0.0, 0.2]]).unwrap();
        let p = softmax(&[0.3, -0.1, 0.5]).unwrap();
        let a = votes_from_aggregate(&v, &p, &params(0.5)).unwrap();
        assert!(a.row(0).iter().all(|x| x.abs() < 1e-16));
    }

    #[test]
    fn single_owner_votes_reproduce_aggregate() {
        let v = ValueProfile::new(vec![vec![1.0, 0.4, 0.0], vec![0.0; 3]]).unwrap();
        let prm = params(0.5);
        let agg =
            solve_foc_fixed_point(&v.aggregates(), &prm, &FixedPointConfig::default()).unwrap();
        let a = votes_from_aggregate(&v, &agg.p, &prm).unwrap();
        for (x, y) in a.row(0).iter().zip(&agg.aggregates) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn best_response_of_indifferent_agent_is_zero() {
        let br = best_response(&[0.4, -0.4], &[0.0, 0.0], &params(0.5)).unwrap();
        assert_eq!(br.votes, vec![0.0, 0.0]);
        assert!(!br.heuristic);
    }

    #[test]
    fn best_response_recovers_foc_votes() {
        let v = ValueProfile::new(vec![
            vec![1.0, 0.2, 0.5],
            vec![0.1, 0.9, 0.3],
            vec![0.4, 0.4, 1.0],
        ])
        .unwrap();
        let prm = MechanismParams::half_max(&v).unwrap();
        let eq = solve_equilibrium(&v, &prm, &SolveOptions::default()).unwrap();
        for i in 0..3 {
            let opp = eq.votes.aggregates_without(i);
            let br = best_response(&opp, v.agent(i), &prm).unwrap();
            for (x, y) in br.votes.iter().zip(eq.votes.row(i)) {
                assert!((x - y).abs() < 1e-8);
            }
            assert!(br.gradient_norm <= 1e-9);
        }
    }

    #[test]
    fn best_response_beats_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values = [0.9, 0.1, 0.6];
        let prm = params(0.45);
        let opp = [0.3, -0.2, 0.1];
        let br = best_response(&opp, &values, &prm).unwrap();
        let r = (0.9_f64 / 0.45).sqrt();
        for _ in 0..10_000 {
            let probe: Vec<f64> = (0..3).map(|_| rng.random_range(-r..=r)).collect();
            assert!(br.utility >= own_utility(&probe, &opp, &values, prm.c));
        }
    }

    #[test]
    fn best_response_flags_nonconcave_regime() {
        let br = best_response(&[0.0, 0.0], &[1.0, 0.0], &params(0.1)).unwrap();
        assert!(br.heuristic);
        assert!(br.utility >= own_utility(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], 0.1));
    }

    #[test]
    fn verifier_detects_non_equilibria() {
        let v = ValueProfile::new(vec![vec![1.0, 0.0], vec![0.3, 0.8], vec![0.9, 0.1]]).unwrap();
        let prm = MechanismParams::half_max(&v).unwrap();
        let eq = solve_equilibrium(&v, &prm, &SolveOptions::default()).unwrap();
        let cert = verify_equilibrium(&eq.votes, &v, &prm, 1e-10).unwrap();
        assert!(cert.certified);
        assert!(cert.br_slack <= 1e-6);

        let mut bumped = eq.votes.clone();
        let row: Vec<f64> = bumped.row(1).iter().map(|x| x + 0.1).collect();
        bumped.set_row(1, &row);
        let cert = verify_equilibrium(&bumped, &v, &prm, 1e-10).unwrap();
        assert!(cert.foc_residual > 0.0 && cert.br_slack > 0.0);
        assert!(!cert.certified);

        let zero = verify_equilibrium(&VoteProfile::zeros(3, 2), &v, &prm, 1e-10).unwrap();
        assert!(zero.br_slack > 0.0);
    }

    #[test]
    fn dynamics_stays_at_fixed_point() {
        let v = ValueProfile::new(vec![vec![1.0, 0.0], vec![0.3, 0.8], vec![0.9, 0.1]]).unwrap();
        let prm = MechanismParams::half_max(&v).unwrap();
        let eq = solve_equilibrium(&v, &prm, &SolveOptions::default()).unwrap();
        let traj = best_response_dynamics(&v, &prm, &eq.votes, 5).unwrap();
        assert!(traj.residuals.iter().all(|r| *r <= 1e-10));
    }

    #[test]
    fn dynamics_symmetric_zero_start_stays_zero() {
        let v = ValueProfile::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let prm = MechanismParams::half_max(&v).unwrap();
        let traj = best_response_dynamics(&v, &prm, &VoteProfile::zeros(2, 2), 3).unwrap();
        let last = traj.profiles.last().unwrap();
        // the first agent moves, then the second offsets; the aggregate stays at zero
        assert!(last.aggregates().iter().all(|a| a.abs() < 1e-12));
    }
}
