//! The two-stage mechanism: an aggregation stage estimates external welfare,
//! then the Synthetic Players QTM decides using those estimates.
//!
//! Stage-2 agents play the focal votes of the committed variant; stage-1
//! participants report the truth except for one optional manipulator who
//! also votes in stage 2.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    alternative_independence_check, market_payoff_weighted, simulate_efficient_market,
    simulate_wagering, wagering_payoffs_weighted, AggregationStage, DecisionStake, Manipulation,
    OutcomeModel, Weighting,
};
use crate::analysis::{bound_squap, ppoa, BoundReport};
use crate::equilibrium::FixedPointConfig;
use crate::error::{Error, Result};
use crate::instance::{MechanismParams, ValueProfile};
use crate::qtm::{own_utility, settle, PaymentReport, SoftmaxOutcome, VoteProfile};
use crate::synthetic::{
    commit, focal_votes, run_impractical, solve_practical_two_alt, FocScaling, SyntheticCommitment,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationKind {
    #[default]
    Market,
    Wagering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Synthetic votes committed before agents vote.
    #[default]
    Impractical,
    /// Two-alternative fixed point solved after agents vote; never certified.
    Practical,
}

fn default_forecasters() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SquapConfig {
    #[serde(default)]
    pub aggregation: AggregationKind,
    /// Liquidity `beta = epsilon * max v`; the deviation bound is
    /// `sqrt(epsilon) * max v`.
    pub epsilon: f64,
    /// Defaults to `max v / 2`.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub redistribute: bool,
    /// Agent who also manipulates the aggregation stage.
    #[serde(default)]
    pub manipulator: Option<usize>,
    /// Number of wagering participants.
    #[serde(default = "default_forecasters")]
    pub forecasters: usize,
    /// Market prior `B0`; defaults to zeros.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    /// Outcome variances; defaults to a point mass at `B`.
    #[serde(default)]
    pub variances: Option<Vec<f64>>,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub scaling: FocScaling,
    #[serde(default)]
    pub seed: u64,
}

impl SquapConfig {
    pub fn new(aggregation: AggregationKind, epsilon: f64) -> Self {
        Self {
            aggregation,
            epsilon,
            c: None,
            redistribute: false,
            manipulator: None,
            forecasters: default_forecasters(),
            initial: None,
            variances: None,
            weighting: Weighting::Importance,
            variant: Variant::Impractical,
            scaling: FocScaling::HalfC,
            seed: 0,
        }
    }
}

/// Everything a two-stage run produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SquapRun {
    pub config: SquapConfig,
    #[serde(rename = "B")]
    pub truth: Vec<f64>,
    #[serde(rename = "Bhat")]
    pub bhat: Vec<f64>,
    pub manipulation: Option<Manipulation>,
    pub commitment: Option<SyntheticCommitment>,
    pub decision: SoftmaxOutcome,
    pub chosen: usize,
    pub bstar: f64,
    pub payments: PaymentReport,
    pub aggregation_payoffs: Vec<f64>,
    pub welfare: f64,
    pub welfare_ratio: f64,
    pub spread: f64,
    pub alpha: f64,
    pub max_value: f64,
    pub bounds: Vec<BoundReport>,
    pub certified: bool,
    #[serde(skip)]
    pub votes: VoteProfile,
    #[serde(skip)]
    pub stage: Option<AggregationStage>,
    #[serde(skip)]
    pub outcome: Option<OutcomeModel>,
}

struct Prepared {
    params: MechanismParams,
    x: f64,
    outcome: OutcomeModel,
    stage: AggregationStage,
    bhat: Vec<f64>,
    manipulation: Option<Manipulation>,
}

fn prepare(values: &ValueProfile, truth: &[f64], config: &SquapConfig) -> Result<Prepared> {
    let m = values.m();
    if truth.len() != m {
        return Err(Error::DimensionMismatch {
            what: "external welfare",
            expected: m,
            actual: truth.len(),
        });
    }
    if truth.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(Error::InvalidParameter(
            "external welfare must be finite and nonnegative".into(),
        ));
    }
    if !(config.epsilon > 0.0 && config.epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {}",
            config.epsilon
        )));
    }
    let x = values.max_value();
    if x <= 0.0 {
        return Err(Error::DegenerateInstance);
    }
    let params = MechanismParams::for_profile(config.c.unwrap_or(0.5 * x), values)?;
    let outcome = match &config.variances {
        Some(var) => OutcomeModel::gaussian(truth.to_vec(), var.clone())?,
        None => OutcomeModel::point_mass(truth.to_vec())?,
    };
    let beta = config.epsilon * x;
    let stake = config
        .manipulator
        .map(|i| DecisionStake::new(values.clone(), i, params))
        .transpose()?
        .map(|mut s| {
            s.scaling = config.scaling;
            s
        });
    let (stage, bhat, manipulation) = match config.aggregation {
        AggregationKind::Market => {
            let initial = config.initial.clone().unwrap_or_else(|| vec![0.0; m]);
            let run = simulate_efficient_market(truth, &initial, beta, stake.as_ref())
                .map_err(|e| e.in_stage("aggregation"))?;
            (
                AggregationStage::Market(run.state),
                run.bhat,
                run.manipulation,
            )
        }
        AggregationKind::Wagering => {
            let run = simulate_wagering(truth, config.forecasters, beta, stake.as_ref())
                .map_err(|e| e.in_stage("aggregation"))?;
            (
                AggregationStage::Wagering(run.state),
                run.bhat,
                run.manipulation,
            )
        }
    };
    Ok(Prepared {
        params,
        x,
        outcome,
        stage,
        bhat,
        manipulation,
    })
}

fn sample_index<R: Rng>(p: &SoftmaxOutcome, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, pk) in p.probabilities().iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

fn stage_payoffs(
    stage: &AggregationStage,
    k: usize,
    p: &SoftmaxOutcome,
    bstar: f64,
    weighting: Weighting,
) -> Result<Vec<f64>> {
    match stage {
        AggregationStage::Market(s) => (1..=s.len())
            .map(|t| market_payoff_weighted(t, s, k, p, bstar, weighting))
            .collect(),
        AggregationStage::Wagering(s) => wagering_payoffs_weighted(s, k, p, bstar, weighting),
    }
}

/// Largest loss any agent suffers from switching to zero votes in the
/// decision stage, all else fixed.
pub fn zero_vote_loss(
    votes: &VoteProfile,
    values: &ValueProfile,
    extra: &[f64],
    params: &MechanismParams,
) -> f64 {
    let m = values.m();
    (0..values.n())
        .map(|i| {
            let opp: Vec<f64> = votes
                .aggregates_without(i)
                .iter()
                .zip(extra)
                .map(|(a, s)| a + s)
                .collect();
            let v = values.agent(i);
            own_utility(votes.row(i), &opp, v, params.c)
                - own_utility(&vec![0.0; m], &opp, v, params.c)
        })
        .fold(0.0, f64::max)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    values: &ValueProfile,
    truth: &[f64],
    config: &SquapConfig,
    prep: Prepared,
    commitment: Option<SyntheticCommitment>,
    votes: VoteProfile,
    decision: SoftmaxOutcome,
    extra: Vec<f64>,
) -> Result<SquapRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let chosen = sample_index(&decision, &mut rng);
    let bstar = prep.outcome.sample(chosen, &mut rng);
    let payments =
        settle(&votes, &prep.params, config.redistribute).map_err(|e| e.in_stage("settlement"))?;
    let aggregation_payoffs =
        stage_payoffs(&prep.stage, chosen, &decision, bstar, config.weighting)
            .map_err(|e| e.in_stage("settlement"))?;
    let w: Vec<f64> = values
        .aggregates()
        .iter()
        .zip(truth)
        .map(|(v, b)| v + b)
        .collect();
    let welfare = decision.expectation(&w);
    let welfare_ratio = ppoa(&decision, &w)?;
    let best = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = best / prep.x;
    let alpha = config.epsilon.sqrt();

    let two = values.m() == 2;
    let clean = config.variant == Variant::Impractical
        && !config.redistribute
        && config.weighting == Weighting::Importance;
    let tight_c = (prep.params.c - 0.5 * prep.x).abs() <= 1e-12 * prep.x;
    let deviation = prep
        .bhat
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let independence =
        alternative_independence_check(&prep.stage, &prep.outcome, &decision, config.weighting)?;
    let loss = zero_vote_loss(&votes, values, &extra, &prep.params);
    let bounds = vec![
        BoundReport::lower(
            "squap",
            bound_squap(spread, alpha),
            welfare_ratio,
            two && clean && tight_c,
        ),
        BoundReport::upper("deviation", alpha * prep.x, deviation, clean),
        BoundReport::upper("alternative-independence", 1e-10, independence, clean),
        BoundReport::upper(
            "zero-vote-loss",
            prep.x,
            loss,
            config.variant == Variant::Impractical,
        ),
    ];
    let certified = clean && two && bounds.iter().all(|b| b.applicable && b.holds());
    Ok(SquapRun {
        config: config.clone(),
        truth: truth.to_vec(),
        bhat: prep.bhat,
        manipulation: prep.manipulation,
        commitment,
        decision,
        chosen,
        bstar,
        payments,
        aggregation_payoffs,
        welfare,
        welfare_ratio,
        spread,
        alpha,
        max_value: prep.x,
        bounds,
        certified,
        votes,
        stage: Some(prep.stage),
        outcome: Some(prep.outcome),
    })
}

/// Aggregation stage, committed synthetic votes on `V + Bhat`, focal agent
/// votes, then settlement at an alternative sampled with the run's seed.
pub fn run_impractical_squap(
    values: &ValueProfile,
    truth: &[f64],
    config: &SquapConfig,
) -> Result<SquapRun> {
    let mut config = config.clone();
    config.variant = Variant::Impractical;
    let prep = prepare(values, truth, &config)?;
    let com = commit(
        &values.aggregates(),
        &prep.bhat,
        &prep.params,
        config.scaling,
        &FixedPointConfig::default(),
    )
    .map_err(|e| e.in_stage("decision"))?;
    let votes = focal_votes(values, &com).map_err(|e| e.in_stage("decision"))?;
    let decision = run_impractical(&com, &votes).map_err(|e| e.in_stage("decision"))?;
    let extra = com.a_mech.clone();
    finish(
        values,
        truth,
        &config,
        prep,
        Some(com),
        votes,
        decision,
        extra,
    )
}

/// Same composition, but the decision is the practical fixed point on the
/// agents' submitted vote sums (focal votes from the committed variant).
pub fn run_practical_squap(
    values: &ValueProfile,
    truth: &[f64],
    config: &SquapConfig,
) -> Result<SquapRun> {
    if values.m() != 2 {
        return Err(Error::InvalidParameter(
            "the practical variant is defined for two alternatives".into(),
        ));
    }
    let mut config = config.clone();
    config.variant = Variant::Practical;
    let prep = prepare(values, truth, &config)?;
    let com = commit(
        &values.aggregates(),
        &prep.bhat,
        &prep.params,
        config.scaling,
        &FixedPointConfig::default(),
    )
    .map_err(|e| e.in_stage("decision"))?;
    let votes = focal_votes(values, &com).map_err(|e| e.in_stage("decision"))?;
    let sums = votes.aggregates();
    let sol = solve_practical_two_alt(
        [sums[0], sums[1]],
        [prep.bhat[0], prep.bhat[1]],
        &prep.params,
        config.scaling,
        1e-14,
    )
    .map_err(|e| e.in_stage("decision"))?;
    let decision = SoftmaxOutcome::from_probabilities(vec![sol.p1, 1.0 - sol.p1])
        .map_err(|e| e.in_stage("decision"))?;
    // synthetic votes implied by the solved p, for the zero-vote comparison
    let extra = {
        let p1p2 = sol.p1 * (1.0 - sol.p1);
        let c_eff = config.scaling.effective_c(&prep.params);
        let a = p1p2 * (prep.bhat[0] - prep.bhat[1]) / (2.0 * c_eff);
        vec![a, -a]
    };
    finish(values, truth, &config, prep, None, votes, decision, extra)
}

/// Asserts `max_k |Bhat_k - B_k| <= alpha x`.
pub fn accuracy_bound_check(run: &SquapRun, alpha: f64, x: f64) -> bool {
    run.bhat
        .iter()
        .zip(&run.truth)
        .all(|(a, b)| (a - b).abs() <= alpha * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SelfFunding {
    pub expected_revenue: f64,
    pub expected_market_spend: f64,
    pub feasible: bool,
}

/// Mean decision-stage revenue (no redistribution) against the mean market
/// spend bound `(1/beta) sum_k (B0_k - B_k)^2` over a batch of runs.
pub fn self_funding_check(runs: &[SquapRun]) -> Result<SelfFunding> {
    if runs.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let mut revenue = 0.0;
    let mut spend = 0.0;
    for run in runs {
        if run.truth.len() != 2 {
            return Err(Error::InvalidParameter(
                "self-funding is checked with two alternatives".into(),
            ));
        }
        let params = MechanismParams::new(run.config.c.unwrap_or(0.5 * run.max_value))?;
        revenue += settle(&run.votes, &params, false)?.revenue;
        let beta = run.config.epsilon * run.max_value;
        let initial = run.config.initial.clone().unwrap_or_else(|| vec![0.0; 2]);
        spend += match run.config.aggregation {
            AggregationKind::Market => {
                crate::aggregation::market_spend_bound(&initial, &run.truth, beta)
            }
            AggregationKind::Wagering => 0.0,
        };
    }
    let n = runs.len() as f64;
    let (revenue, spend) = (revenue / n, spend / n);
    Ok(SelfFunding {
        expected_revenue: revenue,
        expected_market_spend: spend,
        feasible: revenue >= spend,
    })
}

/// A two-alternative instance with `n` uniform agents whose largest value is
/// exactly 1, plus external welfare scaled so the spread `W_1 / max v`
/// equals `target`.
pub fn generate_squap_instance(
    n: usize,
    target: f64,
    seed: u64,
) -> Result<(ValueProfile, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one agent".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let max = rows.iter().flatten().copied().fold(0.0, f64::max);
    rows.iter_mut().flatten().for_each(|x| *x /= max);
    let values = ValueProfile::new(rows)?;
    let v = values.aggregates();
    let top = v[0].max(v[1]);
    if target < top {
        return Err(Error::InvalidParameter(format!(
            "spread {target} is below the agents' own total {top}"
        )));
    }
    let dir = [rng.random::<f64>() + 0.1, rng.random::<f64>() + 0.1];
    let spread_at = |s: f64| (v[0] + s * dir[0]).max(v[1] + s * dir[1]);
    let (mut lo, mut hi) = (0.0_f64, target / dir[0].min(dir[1]));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if spread_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = hi;
    let mut b = vec![s * dir[0], s * dir[1]];
    // pin the top total exactly to the target
    let k = if v[0] + b[0] >= v[1] + b[1] { 0 } else { 1 };
    b[k] = (target - v[k]).max(0.0);
    Ok((values, b))
}
