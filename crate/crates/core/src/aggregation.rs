//! Information-aggregation stage: the quadratic score, the importance-weighted
//! decision market and the equal-wager decision wagering mechanism, plus a
//! last-trader manipulator who also holds a stake in the decision.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::equilibrium::FixedPointConfig;
use crate::error::{Error, Result};
use crate::instance::{MechanismParams, ValueProfile};
use crate::qtm::SoftmaxOutcome;
use crate::synthetic::{commit, FocScaling};

/// `-(bhat - bstar)^2 / beta`.
pub fn quadratic_score(bhat: f64, bstar: f64, beta: f64) -> f64 {
    let d = bhat - bstar;
    -d * d / beta
}

/// `-(1/beta) sum_k (bhat_k - B_k)^2`, the expected score up to a variance
/// term that no report can influence.
pub fn expected_score(bhat: &[f64], truth: &[f64], beta: f64) -> f64 {
    -bhat
        .iter()
        .zip(truth)
        .map(|(b, t)| (b - t) * (b - t))
        .sum::<f64>()
        / beta
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "beta must be positive, got {beta}"
        )))
    }
}

fn check_vector(what: &'static str, v: &[f64], m: usize) -> Result<()> {
    if v.len() != m {
        return Err(Error::DimensionMismatch {
            what,
            expected: m,
            actual: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

/// How a realized score is scaled by the probability of the chosen
/// alternative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Weighting {
    /// `1 / p_k`.
    #[default]
    Importance,
    /// Weight 1; not alternative-independent.
    Unweighted,
    /// `min(1 / p_k, max_weight)`.
    Clipped { max_weight: f64 },
}

impl Weighting {
    pub fn weight(self, p_k: f64) -> f64 {
        match self {
            Weighting::Importance => 1.0 / p_k,
            Weighting::Unweighted => 1.0,
            Weighting::Clipped { max_weight } => (1.0 / p_k).min(max_weight),
        }
    }
}

fn check_choice(k: usize, p: &SoftmaxOutcome, m: usize) -> Result<()> {
    if p.len() != m {
        return Err(Error::DimensionMismatch {
            what: "decision distribution",
            expected: m,
            actual: p.len(),
        });
    }
    if k >= m {
        return Err(Error::InvalidParameter(format!(
            "alternative {k} out of range for {m} alternatives"
        )));
    }
    Ok(())
}

/// Decision market: an initial estimate followed by each trader's report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    beta: f64,
    initial: Vec<f64>,
    history: Vec<Vec<f64>>,
}

impl MarketState {
    pub fn new(beta: f64, initial: Vec<f64>) -> Result<Self> {
        check_beta(beta)?;
        if initial.is_empty() {
            return Err(Error::InvalidParameter("market needs alternatives".into()));
        }
        check_vector("initial estimate", &initial, initial.len())?;
        Ok(Self {
            beta,
            initial,
            history: Vec::new(),
        })
    }

    pub fn trade(&mut self, report: Vec<f64>) -> Result<()> {
        check_vector("market report", &report, self.initial.len())?;
        self.history.push(report);
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn m(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn history(&self) -> &[Vec<f64>] {
        &self.history
    }

    /// Number of trades.
    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Estimate after `t` trades; `t = 0` is the initial estimate.
    pub fn estimate(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.initial
        } else {
            &self.history[t - 1]
        }
    }

    /// Current (final) estimate.
    pub fn latest(&self) -> &[f64] {
        self.estimate(self.len())
    }
}

/// Importance-weighted payoff of trader `t` (1-based) once alternative `k`
/// was chosen from `p` and `bstar` observed.
pub fn market_payoff(
    t: usize,
    state: &MarketState,
    k: usize,
    p: &SoftmaxOutcome,
    bstar: f64,
) -> Result<f64> {
    market_payoff_weighted(t, state, k, p, bstar, Weighting::Importance)
}

pub fn market_payoff_weighted(
    t: usize,
    state: &MarketState,
    k: usize,
    p: &SoftmaxOutcome,
    bstar: f64,
    weighting: Weighting,
) -> Result<f64> {
    check_choice(k, p, state.m())?;
    if t == 0 || t > state.len() {
        return Err(Error::InvalidParameter(format!(
            "trader {t} out of range 1..={}",
            state.len()
        )));
    }
    let now = quadratic_score(state.estimate(t)[k], bstar, state.beta);
    let before = quadratic_score(state.estimate(t - 1)[k], bstar, state.beta);
    Ok(weighting.weight(p[k]) * (now - before))
}

/// Sum of all traders' payoffs, which telescopes to
/// `w(p_k) [s(final) - s(initial)]`.
pub fn market_total_spend(
    state: &MarketState,
    k: usize,
    p: &SoftmaxOutcome,
    bstar: f64,
    weighting: Weighting,
) -> Result<f64> {
    check_choice(k, p, state.m())?;
    let now = quadratic_score(state.latest()[k], bstar, state.beta);
    let before = quadratic_score(state.initial[k], bstar, state.beta);
    Ok(weighting.weight(p[k]) * (now - before))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeFamily {
    #[default]
    PointMass,
    Gaussian,
}

/// Distribution of the realized external welfare `bstar` for each
/// alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub family: OutcomeFamily,
}

impl OutcomeModel {
    pub fn point_mass(means: Vec<f64>) -> Result<Self> {
        check_vector("outcome means", &means, means.len())?;
        let m = means.len();
        Ok(Self {
            means,
            variances: vec![0.0; m],
            family: OutcomeFamily::PointMass,
        })
    }

    pub fn gaussian(means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        check_vector("outcome means", &means, means.len())?;
        check_vector("outcome variances", &variances, means.len())?;
        if variances.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidParameter(
                "variances must be nonnegative".into(),
            ));
        }
        Ok(Self {
            means,
            variances,
            family: OutcomeFamily::Gaussian,
        })
    }

    pub fn m(&self) -> usize {
        self.means.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> f64 {
        match self.family {
            OutcomeFamily::PointMass => self.means[k],
            OutcomeFamily::Gaussian => Normal::new(self.means[k], self.variances[k].sqrt())
                .expect("validated variance")
                .sample(rng),
        }
    }

    /// `E s(bhat, bstar) = -((bhat - B_k)^2 + Var_k) / beta`.
    pub fn expected_score(&self, bhat: f64, k: usize, beta: f64) -> f64 {
        let d = bhat - self.means[k];
        -(d * d + self.variances[k]) / beta
    }
}

/// Expected spend of the market over `k ~ p` and `bstar`; with importance
/// weighting this is `(1/beta) sum_k [(B0_k - B_k)^2 - (final_k - B_k)^2]`.
pub fn expected_market_spend(
    state: &MarketState,
    outcome: &OutcomeModel,
    p: &SoftmaxOutcome,
    weighting: Weighting,
) -> Result<f64> {
    check_choice(0, p, state.m())?;
    check_vector("outcome means", &outcome.means, state.m())?;
    Ok((0..state.m())
        .map(|k| {
            p[k] * weighting.weight(p[k])
                * (outcome.expected_score(state.latest()[k], k, state.beta)
                    - outcome.expected_score(state.initial[k], k, state.beta))
        })
        .sum())
}

/// Spend bound `(1/beta) sum_k (B0_k - B_k)^2` under efficient markets.
pub fn market_spend_bound(initial: &[f64], truth: &[f64], beta: f64) -> f64 {
    -expected_score(initial, truth, beta)
}

/// Certified deviation bound `sqrt(eps) x` for liquidity `beta = eps x`.
pub fn market_deviation_bound(epsilon: f64, x: f64) -> Result<f64> {
    if !(epsilon > 0.0 && x > 0.0 && epsilon.is_finite() && x.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "epsilon and x must be positive, got {epsilon} and {x}"
        )));
    }
    Ok(epsilon.sqrt() * x)
}

/// An aggregation participant who also votes in the decision stage. Its stake
/// in a report `bhat` is its utility at the committed equilibrium for
/// `V + bhat`: expected value minus its own vote cost, without redistribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionStake {
    pub values: ValueProfile,
    pub agent: usize,
    pub params: MechanismParams,
    pub scaling: FocScaling,
}

impl DecisionStake {
    pub fn new(values: ValueProfile, agent: usize, params: MechanismParams) -> Result<Self> {
        if agent >= values.n() {
            return Err(Error::InvalidParameter(format!(
                "agent {agent} out of range for {} agents",
                values.n()
            )));
        }
        Ok(Self {
            values,
            agent,
            params,
            scaling: FocScaling::HalfC,
        })
    }

    pub fn utility(&self, bhat: &[f64]) -> Result<f64> {
        let com = commit(
            &self.values.aggregates(),
            bhat,
            &self.params,
            self.scaling,
            &FixedPointConfig::default(),
        )?;
        let v = self.values.agent(self.agent);
        let mean = com.p.expectation(v);
        let cost: f64 = v
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let a = com.p[k] / (2.0 * self.params.c) * (x - mean);
                a * a
            })
            .sum::<f64>()
            * self.params.c;
        Ok(mean - cost)
    }

    /// Largest value of any agent, the `x` of the deviation bounds.
    pub fn x(&self) -> f64 {
        self.values.max_value()
    }
}

/// Result of the manipulator's search over reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manipulation {
    pub report: Vec<f64>,
    /// Objective gain over reporting the truth.
    pub gain: f64,
    pub converged: bool,
    pub sweeps: usize,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, f64) {
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Maximizes `score_weight * expected_score(r; truth) + stake(aggregate(r))`
/// over the manipulator's report `r` by coordinate-wise golden-section search
/// within `truth +- 10 x`, from five starts. A report is only adopted if it
/// beats reporting the truth.
fn manipulate<A>(
    truth: &[f64],
    beta: f64,
    score_weight: f64,
    stake: &DecisionStake,
    aggregate: A,
) -> Result<Manipulation>
where
    A: Fn(&[f64]) -> Vec<f64>,
{
    let m = truth.len();
    let x = stake.x();
    let radius = 10.0 * x;
    let mut failure = None;
    let mut objective = |r: &[f64]| -> f64 {
        match stake.utility(&aggregate(r)) {
            Ok(u) => score_weight * expected_score(r, truth, beta) + u,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NEG_INFINITY
            }
        }
    };
    let base = objective(truth);
    let scale = (beta * x / score_weight).sqrt();
    let mut best = (truth.to_vec(), base);
    let mut converged = true;
    let mut total_sweeps = 0;
    for s in [0.0, 0.5, -0.5, 1.0, -1.0] {
        let mut r: Vec<f64> = truth
            .iter()
            .enumerate()
            .map(|(k, t)| t + if k % 2 == 0 { s } else { -s } * scale)
            .collect();
        let mut value = objective(&r);
        let mut done = false;
        for _ in 0..100 {
            total_sweeps += 1;
            let before = value;
            for k in 0..m {
                let (lo, hi) = (truth[k] - radius, truth[k] + radius);
                let mut probe = r.clone();
                let (xk, fk) = golden_section(
                    |y| {
                        probe[k] = y;
                        objective(&probe)
                    },
                    lo,
                    hi,
                    1e-10 * (1.0 + radius),
                );
                if fk > value {
                    r[k] = xk;
                    value = fk;
                }
            }
            if value - before <= 1e-14 * (1.0 + value.abs()) {
                done = true;
                break;
            }
        }
        converged &= done;
        if value > best.1 {
            best = (r, value);
        }
    }
    if let Some(e) = failure {
        return Err(e.in_stage("manipulator"));
    }
    Ok(Manipulation {
        gain: best.1 - base,
        report: best.0,
        converged,
        sweeps: total_sweeps,
    })
}

/// An efficient-market run: a trader moves the estimate from the initial
/// value to the truth, then an optional manipulator trades last.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketRun {
    pub state: MarketState,
    pub bhat: Vec<f64>,
    pub manipulation: Option<Manipulation>,
}

pub fn simulate_efficient_market(
    truth: &[f64],
    initial: &[f64],
    beta: f64,
    manipulator: Option<&DecisionStake>,
) -> Result<MarketRun> {
    let mut state = MarketState::new(beta, initial.to_vec())?;
    check_vector("true external welfare", truth, state.m())?;
    state.trade(truth.to_vec())?;
    let manipulation = match manipulator {
        None => None,
        Some(stake) => {
            check_vector("true external welfare", truth, stake.values.m())?;
            let res = manipulate(truth, beta, 1.0, stake, |r| r.to_vec())?;
            state.trade(res.report.clone())?;
            Some(res)
        }
    };
    Ok(MarketRun {
        bhat: state.latest().to_vec(),
        state,
        manipulation,
    })
}

/// Equal-wager decision wagering: every forecaster submits an estimate for
/// every alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WagerState {
    beta: f64,
    predictions: Vec<Vec<f64>>,
}

impl WagerState {
    pub fn new(beta: f64, predictions: Vec<Vec<f64>>) -> Result<Self> {
        check_beta(beta)?;
        let Some(first) = predictions.first() else {
            return Err(Error::InvalidParameter(
                "wagering needs a forecaster".into(),
            ));
        };
        let m = first.len();
        if m == 0 {
            return Err(Error::InvalidParameter(
                "wagering needs alternatives".into(),
            ));
        }
        for row in &predictions {
            check_vector("wager prediction", row, m)?;
        }
        Ok(Self { beta, predictions })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n(&self) -> usize {
        self.predictions.len()
    }

    pub fn m(&self) -> usize {
        self.predictions[0].len()
    }

    pub fn predictions(&self) -> &[Vec<f64>] {
        &self.predictions
    }
}

/// `pi_i = w(p_k) [s_i - (1/N) sum_j s_j]`, importance weighted.
pub fn wagering_payoffs(
    state: &WagerState,
    k: usize,
    p: &SoftmaxOutcome,
    bstar: f64,
) -> Result<Vec<f64>> {
    wagering_payoffs_weighted(state, k, p, bstar, Weighting::Importance)
}

pub fn wagering_payoffs_weighted(
    state: &WagerState,
    k: usize,
    p: &SoftmaxOutcome,
    bstar: f64,
    weighting: Weighting,
) -> Result<Vec<f64>> {
    check_choice(k, p, state.m())?;
    let scores: Vec<f64> = state
        .predictions
        .iter()
        .map(|row| quadratic_score(row[k], bstar, state.beta))
        .collect();
    Ok(relative_payoffs(&scores, weighting.weight(p[k])))
}

fn relative_payoffs(scores: &[f64], weight: f64) -> Vec<f64> {
    // compensated sum keeps the payoffs balanced to rounding of the scores
    let (mut sum, mut carry) = (0.0_f64, 0.0_f64);
    for &s in scores {
        let t = sum + s;
        carry += if sum.abs() >= s.abs() {
            (sum - t) + s
        } else {
            (s - t) + sum
        };
        sum = t;
    }
    let mean = (sum + carry) / scores.len() as f64;
    scores.iter().map(|s| weight * (s - mean)).collect()
}

/// Average prediction per alternative.
pub fn wagering_aggregate(state: &WagerState) -> Vec<f64> {
    average_rows(&state.predictions)
}

fn average_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    (0..rows[0].len())
        .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WagerRun {
    pub state: WagerState,
    pub bhat: Vec<f64>,
    pub manipulation: Option<Manipulation>,
}

/// Wagering with `forecasters` participants who all know the truth. If a
/// manipulator is supplied it is forecaster 0 and optimizes its report; the
/// others report truthfully.
pub fn simulate_wagering(
    truth: &[f64],
    forecasters: usize,
    beta: f64,
    manipulator: Option<&DecisionStake>,
) -> Result<WagerRun> {
    check_beta(beta)?;
    if truth.is_empty() {
        return Err(Error::InvalidParameter(
            "wagering needs alternatives".into(),
        ));
    }
    check_vector("true external welfare", truth, truth.len())?;
    if forecasters == 0 || (manipulator.is_some() && forecasters < 2) {
        return Err(Error::InvalidParameter(format!(
            "need at least {} forecasters, got {forecasters}",
            if manipulator.is_some() { 2 } else { 1 }
        )));
    }
    let mut predictions = vec![truth.to_vec(); forecasters];
    let manipulation = match manipulator {
        None => None,
        Some(stake) => {
            check_vector("true external welfare", truth, stake.values.m())?;
            let n = forecasters as f64;
            // the manipulator's own score enters its payoff with weight 1 - 1/N
            let res = manipulate(truth, beta, 1.0 - 1.0 / n, stake, |r| {
                r.iter()
                    .zip(truth)
                    .map(|(x, t)| (x + (n - 1.0) * t) / n)
                    .collect()
            })?;
            predictions[0] = res.report.clone();
            Some(res)
        }
    };
    let state = WagerState::new(beta, predictions)?;
    Ok(WagerRun {
        bhat: wagering_aggregate(&state),
        state,
        manipulation,
    })
}

/// Participants of an aggregation stage, for the independence check.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregationStage {
    Market(MarketState),
    Wagering(WagerState),
}

impl AggregationStage {
    pub fn m(&self) -> usize {
        match self {
            AggregationStage::Market(s) => s.m(),
            AggregationStage::Wagering(s) => s.m(),
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            AggregationStage::Market(s) => s.beta(),
            AggregationStage::Wagering(s) => s.beta(),
        }
    }

    /// Expected net payment of every participant when `k` is drawn from `q`
    /// and the weights are computed from `q`.
    pub fn expected_payments(
        &self,
        outcome: &OutcomeModel,
        q: &SoftmaxOutcome,
        weighting: Weighting,
    ) -> Result<Vec<f64>> {
        let m = self.m();
        check_choice(0, q, m)?;
        check_vector("outcome means", &outcome.means, m)?;
        let beta = self.beta();
        match self {
            AggregationStage::Market(s) => Ok((1..=s.len())
                .map(|t| {
                    (0..m)
                        .map(|k| {
                            q[k] * weighting.weight(q[k])
                                * (outcome.expected_score(s.estimate(t)[k], k, beta)
                                    - outcome.expected_score(s.estimate(t - 1)[k], k, beta))
                        })
                        .sum()
                })
                .collect()),
            AggregationStage::Wagering(s) => {
                let mut total = vec![0.0; s.n()];
                for k in 0..m {
                    let scores: Vec<f64> = s
                        .predictions
                        .iter()
                        .map(|r| outcome.expected_score(r[k], k, beta))
                        .collect();
                    for (acc, pay) in total
                        .iter_mut()
                        .zip(relative_payoffs(&scores, weighting.weight(q[k])))
                    {
                        *acc += q[k] * pay;
                    }
                }
                Ok(total)
            }
        }
    }
}

/// Decision rules that force each alternative in turn: half the mass on `k`,
/// the rest spread uniformly so every alternative stays possible.
pub fn forced_rules(m: usize) -> Vec<SoftmaxOutcome> {
    (0..m)
        .map(|k| {
            let p = (0..m)
                .map(|l| 0.5 / m as f64 + if l == k { 0.5 } else { 0.0 })
                .collect();
            SoftmaxOutcome::from_probabilities(p).expect("valid distribution")
        })
        .collect()
}

/// Largest spread, over participants, of the expected net payment across the
/// decision rules in [`forced_rules`] and the run's own `p`.
pub fn alternative_independence_check(
    stage: &AggregationStage,
    outcome: &OutcomeModel,
    p: &SoftmaxOutcome,
    weighting: Weighting,
) -> Result<f64> {
    let mut rules = forced_rules(stage.m());
    rules.push(p.clone());
    let table = rules
        .iter()
        .map(|q| stage.expected_payments(outcome, q, weighting))
        .collect::<Result<Vec<_>>>()?;
    let participants = table[0].len();
    Ok((0..participants)
        .map(|i| {
            let col = table.iter().map(|row| row[i]);
            let hi = col.clone().fold(f64::NEG_INFINITY, f64::max);
            let lo = col.fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .fold(0.0, f64::max))
}

/// One trade or wager in a run transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub t: usize,
    #[serde(rename = "bhat")]
    pub bhat: Vec<f64>,
    pub payoffs: Vec<f64>,
    pub k: usize,
    pub bstar: f64,
}

pub fn market_transcript(
    state: &MarketState,
    k: usize,
    p: &SoftmaxOutcome,
    bstar: f64,
    weighting: Weighting,
) -> Result<Vec<TranscriptRecord>> {
    (1..=state.len())
        .map(|t| {
            Ok(TranscriptRecord {
                t,
                bhat: state.estimate(t).to_vec(),
                payoffs: vec![market_payoff_weighted(t, state, k, p, bstar, weighting)?],
                k,
                bstar,
            })
        })
        .collect()
}

pub fn wagering_transcript(
    state: &WagerState,
    k: usize,
    p: &SoftmaxOutcome,
    bstar: f64,
    weighting: Weighting,
) -> Result<Vec<TranscriptRecord>> {
    let payoffs = wagering_payoffs_weighted(state, k, p, bstar, weighting)?;
    Ok(state
        .predictions
        .iter()
        .zip(payoffs)
        .enumerate()
        .map(|(i, (row, pay))| TranscriptRecord {
            t: i + 1,
            bhat: row.clone(),
            payoffs: vec![pay],
            k,
            bstar,
        })
        .collect())
}

/// Serializes records one JSON object per line.
pub fn to_json_lines(records: &[TranscriptRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("plain data serializes"));
        out.push('\n');
    }
    out
}
