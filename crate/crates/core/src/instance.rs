//! Shared domain types: value profiles, mechanism parameters, external
//! welfare, instance statistics and seeded instance generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonnegative values `v[i][k]` of agent `i` for alternative `k`.
///
/// The canonical order of alternatives (nonincreasing aggregate value, ties
/// broken by original index) is computed at construction and stored; the
/// values themselves are kept in the order they were given.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueProfile {
    values: Vec<Vec<f64>>,
    m: usize,
    order: Vec<usize>,
}

impl ValueProfile {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::InvalidProfile(
                "at least one agent is required".into(),
            ));
        }
        let m = values[0].len();
        if m < 2 {
            return Err(Error::InvalidProfile(format!(
                "at least two alternatives are required, got {m}"
            )));
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidProfile(format!(
                    "agent {i} has {} values, expected {m}",
                    row.len()
                )));
            }
            for (k, &x) in row.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::InvalidProfile(format!(
                        "value of agent {i} for alternative {k} is not finite"
                    )));
                }
                if x < 0.0 {
                    return Err(Error::InvalidProfile(format!(
                        "value of agent {i} for alternative {k} is negative ({x})"
                    )));
                }
            }
        }
        let aggregates = column_sums(&values, m);
        if aggregates.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidProfile("aggregate value overflowed".into()));
        }
        let order = descending_order(&aggregates);
        Ok(Self { values, m, order })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    /// Aggregate values `V_k = sum_i v[i][k]`.
    pub fn aggregates(&self) -> Vec<f64> {
        column_sums(&self.values, self.m)
    }

    /// Largest single value `max_{i,k} v[i][k]`.
    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|row| row.iter().copied())
            .fold(0.0, f64::max)
    }

    /// Largest value held by agent `i`.
    pub fn agent_max(&self, i: usize) -> f64 {
        self.values[i].iter().copied().fold(0.0, f64::max)
    }

    /// Canonical permutation: `order()[k]` is the original index of the
    /// alternative ranked `k`-th by aggregate value.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Reindexes alternatives so that new alternative `k` is old `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.m)?;
        let values = self
            .values
            .iter()
            .map(|row| perm.iter().map(|&k| row[k]).collect())
            .collect();
        Self::new(values)
    }

    /// The profile with alternatives in canonical (nonincreasing aggregate) order.
    pub fn canonical(&self) -> Self {
        self.permuted(&self.order)
            .expect("stored order is a valid permutation")
    }

    /// Appends the agents of `other` after the agents of `self`.
    pub fn concat(&self, other: &ValueProfile) -> Result<Self> {
        if other.m != self.m {
            return Err(Error::DimensionMismatch {
                what: "alternatives",
                expected: self.m,
                actual: other.m,
            });
        }
        let mut values = self.values.clone();
        values.extend(other.values.iter().cloned());
        Self::new(values)
    }
}

pub(crate) fn column_sums(rows: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut sums = vec![0.0; m];
    for row in rows {
        for (s, x) in sums.iter_mut().zip(row) {
            *s += x;
        }
    }
    sums
}

/// Indices sorted by nonincreasing value; ties keep the original order.
pub fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

pub(crate) fn check_permutation(perm: &[usize], m: usize) -> Result<()> {
    if perm.len() != m {
        return Err(Error::DimensionMismatch {
            what: "permutation",
            expected: m,
            actual: perm.len(),
        });
    }
    let mut seen = vec![false; m];
    for &k in perm {
        if k >= m || seen[k] {
            return Err(Error::InvalidParameter(format!(
                "{perm:?} is not a permutation"
            )));
        }
        seen[k] = true;
    }
    Ok(())
}

/// Mechanism parameter `c > 0`, the quadratic cost coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub c: f64,
    /// Whether `c >= max_{i,k} v[i][k] / 2` for the profile the parameters were
    /// built against (the regime where utilities are strictly concave).
    pub concave: bool,
}

impl MechanismParams {
    /// Parameters not yet checked against any profile.
    pub fn new(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "c must be positive, got {c}"
            )));
        }
        Ok(Self { c, concave: false })
    }

    pub fn for_profile(c: f64, profile: &ValueProfile) -> Result<Self> {
        let mut params = Self::new(c)?;
        params.concave = c >= 0.5 * profile.max_value();
        Ok(params)
    }

    /// The smallest concave-regime choice, `c = max_{i,k} v[i][k] / 2`.
    pub fn half_max(profile: &ValueProfile) -> Result<Self> {
        let max = profile.max_value();
        if max <= 0.0 {
            return Err(Error::DegenerateInstance);
        }
        Self::for_profile(0.5 * max, profile)
    }
}

/// True external welfare impacts `b` and elicited estimates `bhat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalWelfare {
    pub b: Vec<f64>,
    pub bhat: Vec<f64>,
}

impl ExternalWelfare {
    pub fn new(b: Vec<f64>, bhat: Vec<f64>) -> Result<Self> {
        if b.len() != bhat.len() {
            return Err(Error::DimensionMismatch {
                what: "external welfare estimates",
                expected: b.len(),
                actual: bhat.len(),
            });
        }
        if b.iter().chain(&bhat).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("external welfare"));
        }
        if let Some(x) = b.iter().find(|x| **x < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "external welfare impacts must be nonnegative, got {x}"
            )));
        }
        Ok(Self { b, bhat })
    }

    /// Estimates equal to the truth.
    pub fn truthful(b: Vec<f64>) -> Result<Self> {
        Self::new(b.clone(), b)
    }

    /// `W_k = V_k + B_k`.
    pub fn total_welfare(&self, aggregates: &[f64]) -> Vec<f64> {
        aggregates.iter().zip(&self.b).map(|(v, b)| v + b).collect()
    }

    /// `What_k = V_k + Bhat_k`.
    pub fn estimated_welfare(&self, aggregates: &[f64]) -> Vec<f64> {
        aggregates
            .iter()
            .zip(&self.bhat)
            .map(|(v, b)| v + b)
            .collect()
    }
}

/// Spread, gap and disagreement of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InstanceStats {
    pub spread: f64,
    pub gap: f64,
    /// Absent when the top two welfare totals tie or `m > 2`.
    pub disagreement: Option<f64>,
    pub max_value: f64,
    /// Canonical order of alternatives by total welfare.
    pub order: Vec<usize>,
}

/// Computes `T`, `G` and `D` for a profile, optionally with external welfare.
///
/// With external welfare the totals `W = V + B` replace `V` throughout.
pub fn compute_stats(
    profile: &ValueProfile,
    external: Option<&ExternalWelfare>,
) -> Result<InstanceStats> {
    let max_value = profile.max_value();
    if max_value <= 0.0 {
        return Err(Error::DegenerateInstance);
    }
    let aggregates = profile.aggregates();
    let welfare = match external {
        Some(ext) => {
            if ext.b.len() != profile.m() {
                return Err(Error::DimensionMismatch {
                    what: "external welfare",
                    expected: profile.m(),
                    actual: ext.b.len(),
                });
            }
            ext.total_welfare(&aggregates)
        }
        None => aggregates,
    };
    let order = descending_order(&welfare);
    let (top, second) = (order[0], order[1]);
    let diff = welfare[top] - welfare[second];
    let disagreement = if profile.m() == 2 && diff > 0.0 {
        let num: f64 = profile
            .values()
            .iter()
            .map(|row| (row[top] - row[second]).powi(2))
            .sum();
        Some(num / (diff * diff))
    } else {
        None
    };
    Ok(InstanceStats {
        spread: welfare[top] / max_value,
        gap: diff / max_value,
        disagreement,
        max_value,
        order,
    })
}

/// Value distribution for generated instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "camelCase")]
pub enum ValueFamily {
    /// i.i.d. uniform on `[low, high]`.
    Uniform { low: f64, high: f64 },
    /// Every agent values `alternative` at `value` and the rest at zero.
    Constant { alternative: usize, value: f64 },
    /// Each agent backs alternative 0 with probability `first_share`,
    /// otherwise alternative 1, with value `strength` on the backed one.
    #[serde(rename_all = "camelCase")]
    TwoCamp { first_share: f64, strength: f64 },
}

impl ValueFamily {
    fn upper_bound(&self) -> f64 {
        match *self {
            ValueFamily::Uniform { high, .. } => high,
            ValueFamily::Constant { value, .. } => value,
            ValueFamily::TwoCamp { strength, .. } => strength,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n: usize,
    pub m: usize,
    #[serde(flatten)]
    pub family: ValueFamily,
}

/// Draws a profile from `spec`; identical `(spec, seed)` give identical output.
pub fn generate_instance(spec: &GeneratorSpec, seed: u64) -> Result<ValueProfile> {
    if spec.n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if spec.m < 2 {
        return Err(Error::InvalidParameter(format!(
            "m must be at least 2, got {}",
            spec.m
        )));
    }
    let bound = spec.family.upper_bound();
    if !(bound.is_finite() && bound >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "value bound {bound} is invalid"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = match spec.family {
        ValueFamily::Uniform { low, high } => {
            if !(low >= 0.0 && low <= high) {
                return Err(Error::InvalidParameter(format!(
                    "uniform bounds must satisfy 0 <= low <= high, got [{low}, {high}]"
                )));
            }
            (0..spec.n)
                .map(|_| {
                    (0..spec.m)
                        .map(|_| low + (high - low) * rng.random::<f64>())
                        .collect()
                })
                .collect()
        }
        ValueFamily::Constant { alternative, value } => {
            if alternative >= spec.m {
                return Err(Error::InvalidParameter(format!(
                    "alternative {alternative} out of range for m = {}",
                    spec.m
                )));
            }
            let mut row = vec![0.0; spec.m];
            row[alternative] = value;
            vec![row; spec.n]
        }
        ValueFamily::TwoCamp {
            first_share,
            strength,
        } => {
            if !(0.0..=1.0).contains(&first_share) {
                return Err(Error::InvalidParameter(format!(
                    "first_share must lie in [0, 1], got {first_share}"
                )));
            }
            (0..spec.n)
                .map(|_| {
                    let mut row = vec![0.0; spec.m];
                    let k = usize::from(rng.random::<f64>() >= first_share);
                    row[k] = strength;
                    row
                })
                .collect()
        }
    };
    ValueProfile::new(values)
}

/// Draws a uniform[0,1] profile whose spread `V_1 / max v` equals `target`.
///
/// One agent holds the maximum value 1; the remaining agents are scaled by a
/// common factor in `[0, 1]` found by bisection, so the spread is hit to
/// within `1e-12` relative.
pub fn generate_with_spread(m: usize, target: f64, seed: u64) -> Result<ValueProfile> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "m must be at least 2, got {m}"
        )));
    }
    if !(target.is_finite() && target >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target spread must be at least 1, got {target}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchor = vec![0.0; m];
    anchor[rng.random_range(0..m)] = 1.0;
    let mut rest: Vec<Vec<f64>> = Vec::new();
    let mut rest_sums = vec![0.0; m];
    let top = |s: f64, rest_sums: &[f64]| {
        anchor
            .iter()
            .zip(rest_sums)
            .map(|(a, r)| a + s * r)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    while top(1.0, &rest_sums) < target {
        let row: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        for (s, x) in rest_sums.iter_mut().zip(&row) {
            *s += x;
        }
        rest.push(row);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if top(mid, &rest_sums) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON {
            break;
        }
    }
    let scale = hi;
    let mut values = vec![anchor.clone()];
    values.extend(
        rest.into_iter()
            .map(|row| row.into_iter().map(|x| x * scale).collect()),
    );
    ValueProfile::new(values)
}

/// JSON instance file: `{"n":…, "m":…, "values":[[…]], "B":[…]}` with
/// agents as the outer array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n: usize,
    pub m: usize,
    pub values: Vec<Vec<f64>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
}

/// A loaded instance with alternatives in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub profile: ValueProfile,
    pub external: Option<ExternalWelfare>,
    /// `order[k]` is the file index of canonical alternative `k`.
    pub order: Vec<usize>,
}

impl InstanceFile {
    pub fn from_profile(profile: &ValueProfile, b: Option<Vec<f64>>) -> Self {
        Self {
            n: profile.n(),
            m: profile.m(),
            values: profile.values().to_vec(),
            b,
        }
    }

    /// Validates the file and reindexes alternatives by nonincreasing total
    /// welfare (`V`, or `V + B` when `B` is present).
    pub fn into_instance(self) -> Result<Instance> {
        if self.values.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "agents",
                expected: self.n,
                actual: self.values.len(),
            });
        }
        let raw = ValueProfile::new(self.values)?;
        if raw.m() != self.m {
            return Err(Error::DimensionMismatch {
                what: "alternatives",
                expected: self.m,
                actual: raw.m(),
            });
        }
        let external = self.b.map(ExternalWelfare::truthful).transpose()?;
        let order = match &external {
            Some(ext) => {
                if ext.b.len() != self.m {
                    return Err(Error::DimensionMismatch {
                        what: "external welfare",
                        expected: self.m,
                        actual: ext.b.len(),
                    });
                }
                descending_order(&ext.total_welfare(&raw.aggregates()))
            }
            None => raw.order().to_vec(),
        };
        let profile = raw.permuted(&order)?;
        let external = external.map(|ext| ExternalWelfare {
            b: order.iter().map(|&k| ext.b[k]).collect(),
            bhat: order.iter().map(|&k| ext.bhat[k]).collect(),
        });
        Ok(Instance {
            profile,
            external,
            order,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(rows: &[&[f64]]) -> ValueProfile {
        ValueProfile::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn stats_two_identical_agents() {
        let p = profile(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let s = compute_stats(&p, None).unwrap();
        assert_eq!(s.spread, 2.0);
        assert_eq!(s.gap, 2.0);
        assert_eq!(s.disagreement, Some(0.5));
        assert_eq!(s.max_value, 1.0);
    }

    #[test]
    fn stats_tie_has_no_disagreement() {
        let p = profile(&[&[1.0, 1.0], &[0.5, 0.5]]);
        let s = compute_stats(&p, None).unwrap();
        assert_eq!(s.gap, 0.0);
        assert_eq!(s.disagreement, None);
    }

    #[test]
    fn stats_reject_all_zero() {
        let p = profile(&[&[0.0, 0.0]]);
        assert_eq!(compute_stats(&p, None), Err(Error::DegenerateInstance));
    }

    #[test]
    fn stats_reindex_by_total_welfare() {
        let p = profile(&[&[0.0, 2.0], &[1.0, 0.0]]);
        let ext = ExternalWelfare::truthful(vec![3.0, 0.0]).unwrap();
        let s = compute_stats(&p, Some(&ext)).unwrap();
        // W = (4, 2)
        assert_eq!(s.order, vec![0, 1]);
        assert_eq!(s.spread, 2.0);
        assert_eq!(s.gap, 1.0);
        assert_eq!(compute_stats(&p, None).unwrap().order, vec![1, 0]);
    }

    #[test]
    fn profile_rejects_bad_shapes() {
        assert!(ValueProfile::new(vec![]).is_err());
        assert!(ValueProfile::new(vec![vec![1.0]]).is_err());
        assert!(ValueProfile::new(vec![vec![1.0, 0.0], vec![1.0]]).is_err());
        assert!(ValueProfile::new(vec![vec![-1.0, 0.0]]).is_err());
        assert!(ValueProfile::new(vec![vec![f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn canonical_order_breaks_ties_by_index() {
        let p = profile(&[&[1.0, 2.0, 2.0]]);
        assert_eq!(p.order(), &[1, 2, 0]);
        assert_eq!(p.canonical().agent(0), &[2.0, 2.0, 1.0]);
    }

    #[test]
    fn constant_generator() {
        let spec = GeneratorSpec {
            n: 1,
            m: 2,
            family: ValueFamily::Constant {
                alternative: 0,
                value: 1.0,
            },
        };
        let p = generate_instance(&spec, 3).unwrap();
        assert_eq!(p.values(), &[vec![1.0, 0.0]]);
    }

    #[test]
    fn generator_rejects_invalid_spec() {
        let uniform = ValueFamily::Uniform {
            low: 0.0,
            high: 1.0,
        };
        for (n, m) in [(0, 2), (3, 1)] {
            let spec = GeneratorSpec {
                n,
                m,
                family: uniform.clone(),
            };
            assert!(generate_instance(&spec, 0).is_err());
        }
    }

    #[test]
    fn generator_is_deterministic_and_bounded() {
        let spec = GeneratorSpec {
            n: 40,
            m: 3,
            family: ValueFamily::Uniform {
                low: 0.0,
                high: 2.0,
            },
        };
        let a = generate_instance(&spec, 11).unwrap();
        let b = generate_instance(&spec, 11).unwrap();
        assert_eq!(a, b);
        assert!(a
            .values()
            .iter()
            .flatten()
            .all(|&x| (0.0..=2.0).contains(&x)));
        assert_ne!(a, generate_instance(&spec, 12).unwrap());
    }

    #[test]
    fn uniform_generator_mean() {
        let spec = GeneratorSpec {
            n: 1000,
            m: 2,
            family: ValueFamily::Uniform {
                low: 0.0,
                high: 1.0,
            },
        };
        let p = generate_instance(&spec, 5).unwrap();
        let mean = p.values().iter().flatten().sum::<f64>() / 2000.0;
        assert!((mean - 0.5).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn spread_generator_hits_target() {
        for (m, t) in [(2, 4.0), (2, 256.0), (3, 17.5)] {
            let p = generate_with_spread(m, t, 9).unwrap();
            let s = compute_stats(&p, None).unwrap();
            assert!((s.spread - t).abs() <= 1e-12 * t, "{} vs {t}", s.spread);
        }
    }

    #[test]
    fn instance_file_roundtrip_and_reindex() {
        let json = r#"{"n":2,"m":2,"values":[[0.0,1.0],[0.2,0.5]],"B":[1.0,0.0]}"#;
        let file: InstanceFile = serde_json::from_str(json).unwrap();
        let inst = file.clone().into_instance().unwrap();
        // V = (0.2, 1.5), W = (1.2, 1.5): alternative 1 comes first
        assert_eq!(inst.order, vec![1, 0]);
        assert_eq!(inst.profile.agent(0), &[1.0, 0.0]);
        assert_eq!(inst.external.unwrap().b, vec![0.0, 1.0]);
        let back: InstanceFile =
            serde_json::from_str(&serde_json::to_string(&file).unwrap()).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn instance_file_checks_counts() {
        let file: InstanceFile =
            serde_json::from_str(r#"{"n":3,"m":2,"values":[[0.0,1.0]]}"#).unwrap();
        assert!(file.into_instance().is_err());
    }
}
