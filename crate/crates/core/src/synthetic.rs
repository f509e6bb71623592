//! Synthetic Players QTM: the mechanism casts extra votes on behalf of
//! external welfare so that the equilibrium tracks `W = V + B` instead of
//! `V` alone.
//!
//! The committed (impractical) variant assumes the value totals `V` are
//! known, solves the welfare FOC once and announces fixed synthetic votes.
//! The practical two-alternative variant instead solves a fixed point in
//! `p_1` after agents have voted.

use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    solve_aggregate, solve_equilibrium, votes_from_aggregate, EquilibriumSolution,
    FixedPointConfig, SolveOptions, SolveRoute, SolveStatus,
};
use crate::error::{Error, Result};
use crate::instance::{ExternalWelfare, MechanismParams, ValueProfile};
use crate::qtm::{own_utility, softmax, SoftmaxOutcome, VoteProfile};

/// How the synthetic-vote equations are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FocScaling {
    /// `p_k / (2c)`, consistent with the agents' first-order conditions.
    #[default]
    HalfC,
    /// `p_k` with no cost factor; equivalent to solving with `c = 1/2`.
    Unscaled,
}

impl FocScaling {
    /// The cost coefficient the synthetic equations behave as if they had.
    pub fn effective_c(self, params: &MechanismParams) -> f64 {
        match self {
            FocScaling::HalfC => params.c,
            FocScaling::Unscaled => 0.5,
        }
    }
}

/// Announced aggregate votes and the synthetic votes behind them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticCommitment {
    #[serde(rename = "A")]
    pub aggregates: Vec<f64>,
    #[serde(rename = "aMech")]
    pub a_mech: Vec<f64>,
    pub p: SoftmaxOutcome,
    /// Estimated welfare totals `V + Bhat` the commitment was solved for.
    #[serde(rename = "W")]
    pub welfare: Vec<f64>,
    pub params: MechanismParams,
    #[serde(skip)]
    pub scaling: FocScaling,
    #[serde(skip)]
    pub status: SolveStatus,
}

/// Synthetic votes `p_k / (2c) (Bhat_k - sum_l p_l Bhat_l)`.
pub fn synthetic_votes(p: &SoftmaxOutcome, bhat: &[f64], c_eff: f64) -> Vec<f64> {
    let mean = p.expectation(bhat);
    bhat.iter()
        .enumerate()
        .map(|(k, b)| p[k] / (2.0 * c_eff) * (b - mean))
        .collect()
}

/// Solves the welfare FOC for `W = V + Bhat` and derives the synthetic votes.
pub fn commit(
    aggregates: &[f64],
    bhat: &[f64],
    params: &MechanismParams,
    scaling: FocScaling,
    config: &FixedPointConfig,
) -> Result<SyntheticCommitment> {
    if aggregates.len() != bhat.len() {
        return Err(Error::DimensionMismatch {
            what: "external welfare estimates",
            expected: aggregates.len(),
            actual: bhat.len(),
        });
    }
    let c_eff = scaling.effective_c(params);
    let welfare: Vec<f64> = aggregates.iter().zip(bhat).map(|(v, b)| v + b).collect();
    let eff = MechanismParams::new(c_eff)?;
    let sol = solve_aggregate(&welfare, &eff, config)?;
    if sol.status != SolveStatus::Converged {
        return Err(Error::NoConvergence {
            solver: "synthetic commitment",
            iterations: sol.iterations,
            residual: sol.residual,
        });
    }
    let a_mech = synthetic_votes(&sol.p, bhat, c_eff);
    Ok(SyntheticCommitment {
        aggregates: sol.aggregates,
        a_mech,
        p: sol.p,
        welfare,
        params: *params,
        scaling,
        status: sol.status,
    })
}

/// Agents' focal votes at the announced distribution. These always use the
/// real cost `c`; under [`FocScaling::Unscaled`] with `c != 1/2` they do not
/// reproduce the announced totals.
pub fn focal_votes(values: &ValueProfile, commitment: &SyntheticCommitment) -> Result<VoteProfile> {
    votes_from_aggregate(values, &commitment.p, &commitment.params)
}

/// Output `softmax(aMech + sum_i a_i)` of the committed mechanism.
pub fn run_impractical(
    commitment: &SyntheticCommitment,
    votes: &VoteProfile,
) -> Result<SoftmaxOutcome> {
    if votes.m() != commitment.a_mech.len() {
        return Err(Error::DimensionMismatch {
            what: "alternatives",
            expected: commitment.a_mech.len(),
            actual: votes.m(),
        });
    }
    let totals: Vec<f64> = votes
        .aggregates()
        .iter()
        .zip(&commitment.a_mech)
        .map(|(a, s)| a + s)
        .collect();
    softmax(&totals)
}

/// Root of the practical two-alternative fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PracticalSolution {
    pub p1: f64,
    pub residual: f64,
    pub iterations: usize,
    pub bisection: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `p - sigma(dS + p (1 - p) dBhat / c)`: negative as `p -> 0`, positive as
/// `p -> 1`.
pub fn practical_residual(p1: f64, delta_s: f64, delta_b: f64, c_eff: f64) -> f64 {
    p1 - sigmoid(delta_s + p1 * (1.0 - p1) * delta_b / c_eff)
}

/// Solves `p_1 = sigma(S_1 - S_2 + p_1 p_2 (Bhat_1 - Bhat_2) / c)` given the
/// agents' vote sums. Damped iteration from `p_1 = 1/2`; bisection on
/// `(0, 1)` if that does not reach `tol`.
pub fn solve_practical_two_alt(
    sums: [f64; 2],
    bhat: [f64; 2],
    params: &MechanismParams,
    scaling: FocScaling,
    tol: f64,
) -> Result<PracticalSolution> {
    if sums.iter().chain(&bhat).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("practical fixed point inputs"));
    }
    let c_eff = scaling.effective_c(params);
    let (ds, db) = (sums[0] - sums[1], bhat[0] - bhat[1]);
    let r = |p: f64| practical_residual(p, ds, db, c_eff);
    let mut p = 0.5;
    for it in 1..=1000 {
        p -= 0.5 * r(p);
        if r(p).abs() <= tol {
            return Ok(PracticalSolution {
                p1: p,
                residual: r(p).abs(),
                iterations: it,
                bisection: false,
            });
        }
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut iterations = 1000;
    let mut best = (0.5, r(0.5));
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let v = r(mid);
        if v.abs() < best.1.abs() {
            best = (mid, v);
        }
        if v == 0.0 {
            break;
        }
        if v > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    assert!(
        best.1.is_finite(),
        "the practical residual changes sign on (0, 1) for finite inputs"
    );
    Ok(PracticalSolution {
        p1: best.0,
        residual: best.1.abs(),
        iterations,
        bisection: true,
    })
}

/// Smallest admissible number of synthetic players for values `b`.
pub fn min_synthetic_players(b: &[f64], params: &MechanismParams) -> usize {
    let max = b.iter().copied().fold(0.0, f64::max);
    (max / (2.0 * params.c)).ceil() as usize
}

/// Default synthetic player count, one above the minimum.
pub fn default_synthetic_players(b: &[f64], params: &MechanismParams) -> usize {
    min_synthetic_players(b, params) + 1
}

/// Solves the synthetic game: `n_hat` extra players each valuing alternative
/// `k` at `Bhat_k / n_hat`, alongside the real agents, as a plain QTM.
///
/// Estimates below zero are shifted up by their minimum first; a common
/// shift of one player's values does not change any first-order condition.
/// The solve always uses the fixed-point route.
pub fn synthetic_game_oracle(
    values: &ValueProfile,
    bhat: &[f64],
    params: &MechanismParams,
    n_hat: usize,
) -> Result<EquilibriumSolution> {
    if bhat.len() != values.m() {
        return Err(Error::DimensionMismatch {
            what: "external welfare estimates",
            expected: values.m(),
            actual: bhat.len(),
        });
    }
    let low = bhat.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let shifted: Vec<f64> = bhat.iter().map(|b| b - low).collect();
    let needed = min_synthetic_players(&shifted, params);
    if n_hat == 0 || n_hat < needed {
        return Err(Error::InvalidParameter(format!(
            "need at least {} synthetic players, got {n_hat}",
            needed.max(1)
        )));
    }
    let row: Vec<f64> = shifted.iter().map(|b| b / n_hat as f64).collect();
    let synthetic = ValueProfile::new(vec![row; n_hat])?;
    let game = values.concat(&synthetic)?;
    let options = SolveOptions {
        route: SolveRoute::FixedPoint,
        ..Default::default()
    };
    solve_equilibrium(&game, params, &options)
}

/// Outcome of one agent searching for a profitable deviation in the
/// practical variant while everyone else plays focal votes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ManipulationReport {
    pub deviator: usize,
    pub baseline_p1: f64,
    pub manipulated_p1: f64,
    pub deviation: Vec<f64>,
    pub utility_gain: f64,
    pub baseline_welfare_ratio: f64,
    pub manipulated_welfare_ratio: f64,
    /// `baseline_welfare_ratio - manipulated_welfare_ratio`.
    pub welfare_loss: f64,
}

/// Grid search over votes `(x, -x)` with `|x|` up to the dominated-box radius
/// for agent `deviator`; everyone else keeps the focal votes from the
/// committed variant. Welfare is measured against the true totals.
pub fn practical_manipulation(
    values: &ValueProfile,
    external: &ExternalWelfare,
    params: &MechanismParams,
    scaling: FocScaling,
    deviator: usize,
    grid: usize,
) -> Result<ManipulationReport> {
    if values.m() != 2 {
        return Err(Error::InvalidParameter(
            "the practical variant is defined for two alternatives".into(),
        ));
    }
    if deviator >= values.n() {
        return Err(Error::InvalidParameter(format!(
            "deviator {deviator} out of range for {} agents",
            values.n()
        )));
    }
    if grid < 2 {
        return Err(Error::InvalidParameter(
            "grid needs at least two points".into(),
        ));
    }
    let aggregates = values.aggregates();
    let commitment = commit(
        &aggregates,
        &external.bhat,
        params,
        scaling,
        &FixedPointConfig::default(),
    )?;
    let focal = focal_votes(values, &commitment)?;
    let truth = external.total_welfare(&aggregates);
    let best_w = truth[0].max(truth[1]);
    let ratio = |p1: f64| {
        if best_w > 0.0 {
            (p1 * truth[0] + (1.0 - p1) * truth[1]) / best_w
        } else {
            1.0
        }
    };
    let bhat = [external.bhat[0], external.bhat[1]];
    let others = focal.aggregates_without(deviator);
    let v = values.agent(deviator);
    let outcome = |own: &[f64]| -> Result<(f64, f64)> {
        let sums = [others[0] + own[0], others[1] + own[1]];
        let sol = solve_practical_two_alt(sums, bhat, params, scaling, 1e-13)?;
        let u =
            sol.p1 * v[0] + (1.0 - sol.p1) * v[1] - params.c * (own[0] * own[0] + own[1] * own[1]);
        Ok((sol.p1, u))
    };
    let baseline_votes = focal.row(deviator).to_vec();
    let (base_p1, base_u) = outcome(&baseline_votes)?;
    let mut best = (baseline_votes, base_p1, base_u);
    let radius = (values.agent_max(deviator) / params.c).sqrt();
    for j in 0..grid {
        let x = -radius + 2.0 * radius * j as f64 / (grid - 1) as f64;
        let own = [x, -x];
        let (p1, u) = outcome(&own)?;
        if u > best.2 {
            best = (own.to_vec(), p1, u);
        }
    }
    let base_ratio = ratio(base_p1);
    let manip_ratio = ratio(best.1);
    Ok(ManipulationReport {
        deviator,
        baseline_p1: base_p1,
        manipulated_p1: best.1,
        deviation: best.0,
        utility_gain: best.2 - base_u,
        baseline_welfare_ratio: base_ratio,
        manipulated_welfare_ratio: manip_ratio,
        welfare_loss: base_ratio - manip_ratio,
    })
}

/// Utility of agent `i` under the committed mechanism when it plays `own`
/// against the others' votes, without redistribution.
pub fn committed_utility(
    commitment: &SyntheticCommitment,
    votes: &VoteProfile,
    values: &ValueProfile,
    i: usize,
    own: &[f64],
) -> f64 {
    let opp: Vec<f64> = votes
        .aggregates_without(i)
        .iter()
        .zip(&commitment.a_mech)
        .map(|(a, s)| a + s)
        .collect();
    own_utility(own, &opp, values.agent(i), commitment.params.c)
}
