//! Exact affine form `T Q = A Q + b` of every update rule's evaluation operator.
//!
//! For the n-step kinds the operator is a composition of one-step operators:
//! `(T^mu)^{n-1} T^pi` (uncorrected) and `(T^pi)^n` (importance weighted).
//! For the trace kinds, with `P_c[(x,a),(y,b)] = P(y|x,a) mu(b|y) c(y,b)`,
//!
//! ```text
//! R Q = Q + (I - gamma P_c)^{-1} (T^{pi_alpha} Q - Q)
//!     = gamma (I - gamma P_c)^{-1} (P^{pi_alpha} - P_c) Q + (I - gamma P_c)^{-1} r
//! ```
//!
//! where `pi_alpha = alpha pi + (1 - alpha) mu`. Since `mu c <= pi_alpha`
//! entrywise the linear part is nonnegative, so its row sums are exactly the
//! per-pair sup-norm Lipschitz constants.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dp::{discounted_visitation, exact_q, greedy, mixture, policy_matrix, solve, state_action_matrix};
use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy, QTable, StateActionDist};
use crate::rules::{RuleKind, UpdateRule};
use crate::sampler::{variance, McConfig};

#[derive(Clone, Debug)]
pub struct AffineOperator {
    pub linear: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub gamma: f64,
    pub rule: UpdateRule,
    n_states: usize,
    n_actions: usize,
}

impl AffineOperator {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn apply(&self, q: &QTable) -> QTable {
        let out = &self.linear * q.to_dvector() + &self.offset;
        QTable::from_dvector(self.n_states, self.n_actions, &out)
    }

    /// Absolute row sums of the linear part.
    pub fn row_rates(&self) -> Vec<f64> {
        self.linear
            .row_iter()
            .map(|row| row.iter().map(|v| v.abs()).sum())
            .collect()
    }
}

/// Checks that `mu` covers the support of `pi` at every non-terminal state.
pub fn check_support(mdp: &Mdp, target: &Policy, behaviour: &Policy) -> Result<()> {
    for x in (0..mdp.n_states()).filter(|&x| !mdp.is_terminal(x)) {
        for a in 0..mdp.n_actions() {
            if target.prob(x, a) > 0.0 && behaviour.prob(x, a) == 0.0 {
                return Err(Error::ZeroBehaviourProbability { state: x, action: a });
            }
        }
    }
    Ok(())
}

/// `P_c` for a trace rule.
pub(crate) fn trace_matrix(mdp: &Mdp, rule: &UpdateRule, target: &Policy, behaviour: &Policy) -> DMatrix<f64> {
    state_action_matrix(mdp, |y, b| {
        if mdp.is_terminal(y) {
            return 0.0;
        }
        let mu = behaviour.prob(y, b);
        mu * rule.trace_coefficient(target.prob(y, b), mu)
    })
}

pub fn build_operator(
    mdp: &Mdp,
    rule: UpdateRule,
    target: &Policy,
    behaviour: &Policy,
) -> Result<AffineOperator> {
    rule.validate()?;
    mdp.check_policy(target)?;
    mdp.check_policy(behaviour)?;
    let gamma = mdp.gamma();
    let n = mdp.n_pairs();
    let r = mdp.reward_vector();

    let (linear, offset) = match rule.kind {
        RuleKind::NStepUncorrected | RuleKind::NStepImportanceWeighted => {
            if rule.kind == RuleKind::NStepImportanceWeighted {
                check_support(mdp, target, behaviour)?;
            }
            let p_pi = policy_matrix(mdp, target) * gamma;
            let p_inner = if rule.kind == RuleKind::NStepUncorrected {
                policy_matrix(mdp, behaviour) * gamma
            } else {
                p_pi.clone()
            };
            let mut a = p_pi;
            let mut b = r.clone();
            for _ in 1..rule.n {
                a = &p_inner * &a;
                b = &r + &p_inner * &b;
            }
            (a, b)
        }
        RuleKind::Retrace | RuleKind::TreeBackup => {
            let pi_alpha = mixture(target, behaviour, rule.alpha)?;
            let p_alpha = policy_matrix(mdp, &pi_alpha);
            let p_c = trace_matrix(mdp, &rule, target, behaviour);
            let lu = (DMatrix::identity(n, n) - &p_c * gamma).lu();
            let linear = lu
                .solve(&((p_alpha - p_c) * gamma))
                .ok_or(Error::Singular("trace operator"))?;
            let offset = lu.solve(&r).ok_or(Error::Singular("trace operator"))?;
            (linear, offset)
        }
    };

    Ok(AffineOperator {
        linear,
        offset,
        gamma,
        rule,
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionProfile {
    pub per_pair: Vec<f64>,
    pub sup_rate: f64,
    pub nu_avg: f64,
}

pub fn contraction_profile(op: &AffineOperator, nu: &StateActionDist) -> ContractionProfile {
    let per_pair = op.row_rates();
    let sup_rate = per_pair.iter().copied().fold(0.0, f64::max);
    let nu_avg = nu.average(&per_pair);
    ContractionProfile {
        per_pair,
        sup_rate,
        nu_avg,
    }
}

/// Solves `(I - A) Q = b`.
pub fn fixed_point(op: &AffineOperator) -> Result<QTable> {
    let sup = op.row_rates().into_iter().fold(0.0, f64::max);
    if !(sup < 1.0) {
        return Err(Error::NonContractive(sup));
    }
    let n = op.offset.len();
    let q = solve(DMatrix::identity(n, n) - &op.linear, &op.offset, "fixed point")?;
    Ok(QTable::from_dvector(op.n_states, op.n_actions, &q))
}

/// `||Q^pi - Q_hat||_2` where `Q_hat` is the operator's fixed point.
pub fn fixed_point_bias(op: &AffineOperator, mdp: &Mdp, target: &Policy) -> Result<f64> {
    let q_hat = fixed_point(op)?;
    let q_pi = exact_q(mdp, target)?;
    Ok(q_pi.l2_distance(&q_hat))
}

/// One evaluated `(rule, parameter)` point of a trade-off sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub rule: UpdateRule,
    pub contraction_sup: f64,
    pub contraction_nu: f64,
    pub bias_l2: f64,
    pub root_variance: f64,
    pub seed: u64,
    pub mdp_id: String,
}

/// Exact contraction and bias of `rule` plus its Monte Carlo root variance at
/// `q0`, with `nu` the initial pairs under `behaviour`.
#[allow(clippy::too_many_arguments)]
pub fn tradeoff_point(
    mdp: &Mdp,
    rule: UpdateRule,
    target: &Policy,
    behaviour: &Policy,
    q0: &QTable,
    mc: &McConfig,
    seed: u64,
    mdp_id: &str,
) -> Result<TradeoffPoint> {
    let op = build_operator(mdp, rule, target, behaviour)?;
    let nu = StateActionDist::initial_pairs(mdp, behaviour);
    let profile = contraction_profile(&op, &nu);
    let bias_l2 = fixed_point_bias(&op, mdp, target)?;
    let var = variance(mdp, rule, q0, &nu, target, behaviour, mc)?;
    Ok(TradeoffPoint {
        rule,
        contraction_sup: profile.sup_rate,
        contraction_nu: profile.nu_avg,
        bias_l2,
        root_variance: var.root(),
        seed,
        mdp_id: mdp_id.to_string(),
    })
}

/// Smallest `alpha` found whose alpha-Retrace fixed point has the same greedy
/// policy as `Q^pi`, with the sup contraction at that `alpha` and at 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyAlpha {
    pub alpha: f64,
    pub sup_rate: f64,
    pub sup_rate_at_one: f64,
}

/// Scans `alpha` over `0, 0.05, ..., 0.95` and then `1 - 2^-k` for
/// `k = 5..=50`. Returns `None` if no `alpha < 1` matches.
pub fn greedy_preserving_alpha(mdp: &Mdp, target: &Policy, behaviour: &Policy) -> Result<Option<GreedyAlpha>> {
    let want = greedy(&exact_q(mdp, target)?);
    let sup = |op: &AffineOperator| op.row_rates().into_iter().fold(0.0, f64::max);
    let sup_rate_at_one = sup(&build_operator(mdp, UpdateRule::retrace(1.0), target, behaviour)?);
    let grid = (0..20).map(|i| i as f64 * 0.05).chain((5..=50).map(|k| 1.0 - 0.5f64.powi(k)));
    for alpha in grid {
        let op = build_operator(mdp, UpdateRule::retrace(alpha), target, behaviour)?;
        if greedy(&fixed_point(&op)?) == want {
            return Ok(Some(GreedyAlpha {
                alpha,
                sup_rate: sup(&op),
                sup_rate_at_one,
            }));
        }
    }
    Ok(None)
}

/// Whether `pi` and `mu` differ at some non-terminal state visited with
/// positive probability at time `t >= 1` when following `behaviour` from
/// `start`. Only those states carry trace coefficients.
pub fn distinguishable(
    mdp: &Mdp,
    pi: &Policy,
    mu: &Policy,
    behaviour: &Policy,
    start: (usize, usize),
) -> Result<bool> {
    const SUPPORT_TOL: f64 = 1e-14;
    let d = discounted_visitation(mdp, behaviour, start)?;
    let origin = mdp.pair(start.0, start.1);
    let gamma = mdp.gamma();
    for y in (0..mdp.n_states()).filter(|&y| !mdp.is_terminal(y)) {
        let mass: f64 = (0..mdp.n_actions())
            .map(|b| {
                let w = d.weight(y, b);
                // remove the time-0 atom at the start pair
                if mdp.pair(y, b) == origin {
                    w - (1.0 - gamma)
                } else {
                    w
                }
            })
            .sum();
        let differs = pi.row(y).iter().zip(mu.row(y)).any(|(p, m)| (p - m).abs() > 1e-15);
        if mass > SUPPORT_TOL && differs {
            return Ok(true);
        }
    }
    Ok(false)
}
