//! The Quadratic Transfers Mechanism: softmax selection, utilities,
//! payments with optional redistribution, the dominated-strategy box and the
//! closed-form utility Hessian.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{column_sums, ExternalWelfare, MechanismParams, ValueProfile};

/// Votes `a[i][k]` of agent `i` on alternative `k`; negative votes oppose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteProfile {
    votes: Vec<Vec<f64>>,
}

impl VoteProfile {
    pub fn new(votes: Vec<Vec<f64>>) -> Result<Self> {
        let m = votes.first().map(Vec::len).unwrap_or(0);
        if votes.is_empty() || m == 0 {
            return Err(Error::InvalidParameter("vote profile is empty".into()));
        }
        for row in &votes {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "votes per agent",
                    expected: m,
                    actual: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("votes"));
            }
        }
        Ok(Self { votes })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            votes: vec![vec![0.0; m]; n],
        }
    }

    pub fn n(&self) -> usize {
        self.votes.len()
    }

    pub fn m(&self) -> usize {
        self.votes[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.votes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.votes[i]
    }

    pub fn set_row(&mut self, i: usize, row: &[f64]) {
        self.votes[i].copy_from_slice(row);
    }

    /// Aggregate votes `A_k = sum_i a[i][k]`.
    pub fn aggregates(&self) -> Vec<f64> {
        column_sums(&self.votes, self.m())
    }

    /// Aggregate votes of everyone except agent `i`.
    pub fn aggregates_without(&self, i: usize) -> Vec<f64> {
        self.aggregates()
            .iter()
            .zip(&self.votes[i])
            .map(|(a, x)| a - x)
            .collect()
    }

    pub(crate) fn check_against(&self, values: &ValueProfile) -> Result<()> {
        if self.n() != values.n() {
            return Err(Error::DimensionMismatch {
                what: "agents",
                expected: values.n(),
                actual: self.n(),
            });
        }
        if self.m() != values.m() {
            return Err(Error::DimensionMismatch {
                what: "alternatives",
                expected: values.m(),
                actual: self.m(),
            });
        }
        Ok(())
    }
}

/// Selection probabilities over alternatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SoftmaxOutcome {
    p: Vec<f64>,
}

impl SoftmaxOutcome {
    /// Wraps an explicit distribution; entries must be positive and sum to one.
    pub fn from_probabilities(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(Error::InvalidParameter(
                "probabilities must be finite and strictly positive".into(),
            ));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { p })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// `sum_k p_k x_k`.
    pub fn expectation(&self, x: &[f64]) -> f64 {
        self.p.iter().zip(x).map(|(p, x)| p * x).sum()
    }
}

impl std::ops::Index<usize> for SoftmaxOutcome {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.p[k]
    }
}

/// `p_k = exp(A_k) / sum_l exp(A_l)`, evaluated after subtracting `max A`.
///
/// Entries underflow to zero only when an aggregate trails the leader by more
/// than about 745.
pub fn softmax(aggregates: &[f64]) -> Result<SoftmaxOutcome> {
    if aggregates.is_empty() {
        return Err(Error::InvalidParameter("softmax of an empty vector".into()));
    }
    if aggregates.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let max = aggregates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = aggregates.iter().map(|a| (a - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(SoftmaxOutcome {
        p: exps.into_iter().map(|e| e / total).collect(),
    })
}

fn sum_squares(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum()
}

/// Agent `i`'s expected utility
/// `sum_k p_k v[i][k] - c |a_i|^2 (+ c/(n-1) sum_{j != i} |a_j|^2)`.
pub fn utility(
    i: usize,
    votes: &VoteProfile,
    values: &ValueProfile,
    params: &MechanismParams,
    redistribute: bool,
) -> Result<f64> {
    votes.check_against(values)?;
    if i >= values.n() {
        return Err(Error::InvalidParameter(format!("agent {i} out of range")));
    }
    let n = values.n();
    if redistribute && n < 2 {
        return Err(Error::RedistributionNeedsTwoAgents);
    }
    let p = softmax(&votes.aggregates())?;
    let mut u = p.expectation(values.agent(i)) - params.c * sum_squares(votes.row(i));
    if redistribute {
        let others: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| sum_squares(votes.row(j)))
            .sum();
        u += params.c * others / (n - 1) as f64;
    }
    Ok(u)
}

/// The part of agent utility an agent controls, given opponents' aggregate
/// votes: `sum_k p_k(own + opp) v_k - c |own|^2`.
pub fn own_utility(own: &[f64], opponents: &[f64], values: &[f64], c: f64) -> f64 {
    let total: Vec<f64> = own.iter().zip(opponents).map(|(a, o)| a + o).collect();
    let p = softmax(&total).expect("finite votes");
    p.expectation(values) - c * sum_squares(own)
}

/// Charges, rebates and revenue of a vote profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PaymentReport {
    /// `c |a_i|^2` per agent.
    pub per_agent_charge: Vec<f64>,
    /// Redistribution receipts; zero when redistribution is off.
    pub per_agent_rebate: Vec<f64>,
    /// Total charges before redistribution.
    pub revenue: f64,
    /// Net payment of each agent (charge minus rebate).
    pub net_transfers: Vec<f64>,
}

/// Settles payments; with `redistribute` each agent receives an equal share
/// of everyone else's charges, making the mechanism budget balanced.
pub fn settle(
    votes: &VoteProfile,
    params: &MechanismParams,
    redistribute: bool,
) -> Result<PaymentReport> {
    let n = votes.n();
    if redistribute && n < 2 {
        return Err(Error::RedistributionNeedsTwoAgents);
    }
    let charges: Vec<f64> = votes
        .rows()
        .iter()
        .map(|row| params.c * sum_squares(row))
        .collect();
    let revenue: f64 = charges.iter().sum();
    let rebates: Vec<f64> = if redistribute {
        charges
            .iter()
            .map(|ch| (revenue - ch) / (n - 1) as f64)
            .collect()
    } else {
        vec![0.0; n]
    };
    let net = charges.iter().zip(&rebates).map(|(c, r)| c - r).collect();
    Ok(PaymentReport {
        per_agent_charge: charges,
        per_agent_rebate: rebates,
        revenue,
        net_transfers: net,
    })
}

/// Per-agent radius `sqrt(max_l v[i][l] / c)`; any vote beyond it is strictly
/// dominated by voting zero everywhere.
pub fn dominated_box(values: &ValueProfile, params: &MechanismParams) -> Vec<f64> {
    (0..values.n())
        .map(|i| (values.agent_max(i) / params.c).sqrt())
        .collect()
}

/// Hessian of agent utility with respect to the agent's own votes.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianReport {
    pub h: DMatrix<f64>,
    pub max_eigenvalue: f64,
    pub negative_definite: bool,
}

/// Closed-form Hessian of `u_i` at selection probabilities `p`:
/// `H_kk = p_k (2 p_k - 1)(E_p v - v_k) - 2c`,
/// `H_kl = p_k p_l (2 E_p v - v_k - v_l)`.
pub fn hessian_at(p: &SoftmaxOutcome, values: &[f64], c: f64) -> DMatrix<f64> {
    let m = p.len();
    let e = p.expectation(values);
    DMatrix::from_fn(m, m, |k, l| {
        if k == l {
            p[k] * (2.0 * p[k] - 1.0) * (e - values[k]) - 2.0 * c
        } else {
            p[k] * p[l] * (2.0 * e - values[k] - values[l])
        }
    })
}

pub fn hessian(
    i: usize,
    votes: &VoteProfile,
    values: &ValueProfile,
    params: &MechanismParams,
) -> Result<HessianReport> {
    votes.check_against(values)?;
    let p = softmax(&votes.aggregates())?;
    let h = hessian_at(&p, values.agent(i), params.c);
    let max_eigenvalue = SymmetricEigen::new(h.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(HessianReport {
        h,
        max_eigenvalue,
        negative_definite: max_eigenvalue < 0.0,
    })
}

/// Expected welfare `sum_k p_k V_k`, plus `sum_k p_k B_k` when external
/// welfare is supplied.
pub fn welfare(
    p: &SoftmaxOutcome,
    values: &ValueProfile,
    external: Option<&ExternalWelfare>,
) -> Result<f64> {
    if p.len() != values.m() {
        return Err(Error::DimensionMismatch {
            what: "alternatives",
            expected: values.m(),
            actual: p.len(),
        });
    }
    let aggregates = values.aggregates();
    match external {
        Some(ext) => {
            if ext.b.len() != values.m() {
                return Err(Error::DimensionMismatch {
                    what: "external welfare",
                    expected: values.m(),
                    actual: ext.b.len(),
                });
            }
            Ok(p.expectation(&ext.total_welfare(&aggregates)))
        }
        None => Ok(p.expectation(&aggregates)),
    }
}
