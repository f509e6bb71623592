//! Price of anarchy and the closed-form efficiency, revenue and deviation
//! bounds, evaluated against solved instances.

use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumSolution;
use crate::error::{Error, Result};
use crate::instance::{compute_stats, ExternalWelfare, MechanismParams, ValueProfile};
use crate::qtm::{settle, SoftmaxOutcome};

/// Absolute slack allowed before a bound counts as violated, scaled up for
/// bounds larger than one.
pub const BOUND_TOL: f64 = 1e-9;

/// `sum_k p_k W_k / max_k W_k`.
pub fn ppoa(p: &SoftmaxOutcome, welfare: &[f64]) -> Result<f64> {
    if p.len() != welfare.len() {
        return Err(Error::DimensionMismatch {
            what: "alternatives",
            expected: welfare.len(),
            actual: p.len(),
        });
    }
    let best = welfare.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if best.is_nan() || best <= 0.0 {
        return Err(Error::DegenerateInstance);
    }
    Ok(p.expectation(welfare) / best)
}

/// Smallest pPoA over several equilibria.
pub fn worst_ppoa(solutions: &[EquilibriumSolution], welfare: &[f64]) -> Result<f64> {
    solutions
        .iter()
        .map(|s| ppoa(&s.p, welfare))
        .try_fold(f64::INFINITY, |acc, x| Ok(acc.min(x?)))
}

/// `max{1/2, 1 - (2/T)^(2/5)}` for spread `T`.
pub fn bound_spread(t: f64) -> f64 {
    (1.0 - (2.0 / t).powf(0.4)).max(0.5)
}

/// `max{1/2, 1 - (4/G)^(2/3)}` for gap `G`.
pub fn bound_gap(g: f64) -> f64 {
    (1.0 - (4.0 / g).powf(2.0 / 3.0)).max(0.5)
}

/// `1 - (8c / dV)^(2/3)`, a floor on `p_1` with two alternatives.
pub fn bound_p1(c: f64, delta: f64) -> f64 {
    1.0 - (8.0 * c / delta).powf(2.0 / 3.0)
}

/// `1/m`.
pub fn bound_m(m: usize) -> f64 {
    1.0 / m as f64
}

/// `1 - 2 alpha / T - (4/T)^(2/5)` for the two-stage mechanism.
pub fn bound_squap(t: f64, alpha: f64) -> f64 {
    1.0 - 2.0 * alpha / t - (4.0 / t).powf(0.4)
}

/// Bounds on the top aggregate vote `A_1` with two alternatives.
pub fn a1_sandwich(delta: f64, c: f64) -> (f64, f64) {
    (
        ((delta / (8.0 * c)).ln() / 3.0).max(0.0),
        0.5 * (delta / (2.0 * c)).ln(),
    )
}

/// Explicit revenue bounds with two alternatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RevenueSandwich {
    pub lower: f64,
    pub upper: f64,
    pub disagreement: f64,
    pub delta: f64,
    /// `dV > 8c`: both logarithms positive, the regime the bounds are
    /// certified for.
    pub certified: bool,
}

/// `(2c/9) D max{0, ln(dV/8c)}^2 <= revenue <= (c/2) D ln(dV/2c)^2`.
pub fn revenue_sandwich(
    values: &ValueProfile,
    params: &MechanismParams,
) -> Result<RevenueSandwich> {
    if values.m() != 2 {
        return Err(Error::InvalidParameter(
            "the revenue bounds are for two alternatives".into(),
        ));
    }
    let v = values.aggregates();
    let delta = (v[0] - v[1]).abs();
    if delta == 0.0 {
        return Err(Error::InvalidParameter(
            "revenue bounds need V_1 > V_2".into(),
        ));
    }
    let stats = compute_stats(values, None)?;
    let d = stats.disagreement.expect("two alternatives without a tie");
    let c = params.c;
    let low_log = (delta / (8.0 * c)).ln().max(0.0);
    let high_log = (delta / (2.0 * c)).ln();
    Ok(RevenueSandwich {
        lower: 2.0 * c / 9.0 * d * low_log * low_log,
        upper: 0.5 * c * d * high_log * high_log,
        disagreement: d,
        delta,
        certified: delta > 8.0 * c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// The measured quantity must be at least the bound.
    Lower,
    /// The measured quantity must be at most the bound.
    Upper,
}

/// One bound evaluated on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundReport {
    pub name: String,
    pub kind: BoundKind,
    pub value: f64,
    pub satisfied_by: f64,
    /// Signed slack: `satisfied_by - value` for lower bounds and
    /// `value - satisfied_by` for upper bounds.
    pub margin: f64,
    /// Whether the instance lies in the regime the bound is certified for.
    pub applicable: bool,
}

impl BoundReport {
    pub fn lower(name: &str, value: f64, measured: f64, applicable: bool) -> Self {
        Self {
            name: name.into(),
            kind: BoundKind::Lower,
            value,
            satisfied_by: measured,
            margin: measured - value,
            applicable,
        }
    }

    pub fn upper(name: &str, value: f64, measured: f64, applicable: bool) -> Self {
        Self {
            name: name.into(),
            kind: BoundKind::Upper,
            value,
            satisfied_by: measured,
            margin: value - measured,
            applicable,
        }
    }

    /// Margin within tolerance; out-of-regime reports always hold.
    pub fn holds(&self) -> bool {
        !self.applicable || self.margin >= -BOUND_TOL * self.value.abs().max(1.0)
    }
}

fn is_half_max(params: &MechanismParams, x: f64) -> bool {
    (params.c - 0.5 * x).abs() <= 1e-12 * x
}

/// Evaluates every bound that applies to a solved instance.
///
/// Two alternatives: `p_1 >= 1/2`, the gap floor on `p_1`, the spread and gap
/// pPoA bounds (certified at `c = max v / 2`), the revenue and `A_1`
/// sandwiches (certified for `dV > 8c`, no external welfare). More
/// alternatives: `pPoA >= 1/m`. With external welfare the totals `V + B`
/// replace `V`, and only the pPoA bounds are reported.
pub fn certify_instance(
    eq: &EquilibriumSolution,
    values: &ValueProfile,
    params: &MechanismParams,
    external: Option<&ExternalWelfare>,
) -> Result<Vec<BoundReport>> {
    let stats = compute_stats(values, external)?;
    let aggregates = values.aggregates();
    let welfare = match external {
        Some(ext) => ext.total_welfare(&aggregates),
        None => aggregates,
    };
    let measured = ppoa(&eq.p, &welfare)?;
    let x = stats.max_value;
    let tight_c = is_half_max(params, x);
    let mut out = Vec::new();
    if values.m() == 2 {
        let (top, second) = (stats.order[0], stats.order[1]);
        let delta = welfare[top] - welfare[second];
        let p_top = eq.p[top];
        if external.is_none() {
            out.push(BoundReport::lower("p1-half", 0.5, p_top, true));
            if delta > 0.0 {
                out.push(BoundReport::lower(
                    "p1-gap",
                    bound_p1(params.c, delta),
                    p_top,
                    true,
                ));
            }
        }
        out.push(BoundReport::lower(
            "spread",
            bound_spread(stats.spread),
            measured,
            tight_c,
        ));
        out.push(BoundReport::lower(
            "gap",
            bound_gap(stats.gap),
            measured,
            tight_c && external.is_none(),
        ));
        if external.is_none() && delta > 0.0 {
            let rev = settle(&eq.votes, params, false)?.revenue;
            let sandwich = revenue_sandwich(values, params)?;
            out.push(BoundReport::lower(
                "revenue-lower",
                sandwich.lower,
                rev,
                sandwich.certified,
            ));
            out.push(BoundReport::upper(
                "revenue-upper",
                sandwich.upper,
                rev,
                sandwich.certified,
            ));
            let (lo, hi) = a1_sandwich(delta, params.c);
            let a1 = eq.aggregates[top];
            out.push(BoundReport::lower("a1-lower", lo, a1, sandwich.certified));
            out.push(BoundReport::upper("a1-upper", hi, a1, sandwich.certified));
        }
    } else {
        out.push(BoundReport::lower(
            "one-over-m",
            bound_m(values.m()),
            measured,
            true,
        ));
    }
    Ok(out)
}

/// Formats with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub const BOUND_CSV_HEADER: &str =
    "# qtmlab bound-report v1\ninstance,bound,kind,value,measured,margin,applicable\n";

/// CSV with one line per (instance id, report).
pub fn bounds_to_csv<'a, I>(rows: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a BoundReport)>,
{
    let mut out = String::from(BOUND_CSV_HEADER);
    for (id, r) in rows {
        out.push_str(&format!(
            "{id},{},{},{},{},{},{}\n",
            r.name,
            match r.kind {
                BoundKind::Lower => "lower",
                BoundKind::Upper => "upper",
            },
            fmt_f64(r.value),
            fmt_f64(r.satisfied_by),
            fmt_f64(r.margin),
            r.applicable
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_equilibrium, SolveOptions};
    use crate::qtm::softmax;

    #[test]
    fn ppoa_examples() {
        let point = SoftmaxOutcome::from_probabilities(vec![1.0 - 1e-300, 1e-300]).unwrap();
        assert_eq!(ppoa(&point, &[3.0, 1.0]).unwrap(), 1.0);
        let uniform = softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(ppoa(&uniform, &[4.0, 2.0]).unwrap(), 0.75);
        let p = softmax(&[-2.0, 1.0]).unwrap();
        assert!((ppoa(&p, &[2.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(ppoa(&uniform, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn bound_values() {
        // 40-digit evaluations
        assert!((bound_spread(32.0) - 0.670_123_022_306_776_5).abs() < 1e-15);
        assert_eq!(bound_spread(2.0), 0.5);
        assert!((bound_squap(100.0, 1.0) - 0.704_054_067_707_757).abs() < 1e-15);
        assert!((bound_p1(0.5, 10.0) - 0.457_116_476_681_018_7).abs() < 1e-15);
        assert_eq!(bound_m(4), 0.25);
        assert_eq!(bound_gap(4.0), 0.5);
        // independent power routine: exp(0.4 ln x)
        let alt = 1.0 - 0.02 - (0.4 * 0.04_f64.ln()).exp();
        assert!((bound_squap(100.0, 1.0) - alt).abs() < 1e-15);
    }

    #[test]
    fn bounds_are_monotone() {
        let grid: Vec<f64> = (0..400)
            .map(|j| 10f64.powf(-1.0 + j as f64 * 0.015))
            .collect();
        for w in grid.windows(2) {
            assert!(bound_spread(w[1]) >= bound_spread(w[0]));
            assert!(bound_gap(w[1]) >= bound_gap(w[0]));
        }
    }

    #[test]
    fn revenue_sandwich_small_example() {
        let v = ValueProfile::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let prm = MechanismParams::new(0.5).unwrap();
        let s = revenue_sandwich(&v, &prm).unwrap();
        assert_eq!(s.lower, 0.0);
        assert!((s.upper - 0.060_056_626_739_775_18).abs() < 1e-15);
        assert!((s.disagreement - 0.5).abs() < 1e-15);
        assert!(!s.certified);
    }

    #[test]
    fn revenue_sandwich_rejects_ties() {
        let v = ValueProfile::new(vec![vec![1.0, 1.0]]).unwrap();
        assert!(revenue_sandwich(&v, &MechanismParams::new(0.5).unwrap()).is_err());
    }

    #[test]
    fn small_gap_revenue_exceeds_upper_formula() {
        // dV = 2c * 2 is below the certified regime; the upper formula fails
        let v = ValueProfile::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let prm = MechanismParams::new(0.5).unwrap();
        let eq = solve_equilibrium(&v, &prm, &SolveOptions::default()).unwrap();
        let rev = settle(&eq.votes, &prm, false).unwrap().revenue;
        assert!((rev - 0.088_585_337_052_840_34).abs() < 1e-12);
        let s = revenue_sandwich(&v, &prm).unwrap();
        assert!(rev > s.upper && rev >= s.lower);
        let reports = certify_instance(&eq, &v, &prm, None).unwrap();
        let upper = reports.iter().find(|r| r.name == "revenue-upper").unwrap();
        assert!(!upper.applicable && upper.margin < 0.0 && upper.holds());
    }

    #[test]
    fn symmetric_instance_certifies() {
        let v = ValueProfile::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let prm = MechanismParams::half_max(&v).unwrap();
        let eq = solve_equilibrium(&v, &prm, &SolveOptions::default()).unwrap();
        let reports = certify_instance(&eq, &v, &prm, None).unwrap();
        assert!(reports.iter().all(|r| r.margin >= 0.0));
    }

    #[test]
    fn csv_layout() {
        let r = BoundReport::lower("spread", 0.5, 0.75, true);
        let csv = bounds_to_csv([("a", &r)]);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with('#'));
        assert_eq!(
            lines.next().unwrap(),
            "instance,bound,kind,value,measured,margin,applicable"
        );
        assert_eq!(
            lines.next().unwrap(),
            "a,spread,lower,5.0000000000000000e-1,7.5000000000000000e-1,2.5000000000000000e-1,true"
        );
    }
}
