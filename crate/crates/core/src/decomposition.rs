//! Monte Carlo check of the error decomposition
//! `E||T_hat Q - Q^pi||_inf <= sqrt(V) + Gamma ||Q - Q_fix||_inf + ||Q_fix - Q^pi||_2`
//! and its squared variant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::exact_q;
use crate::error::Result;
use crate::mdp::{Mdp, Policy, QTable};
use crate::operator::{build_operator, fixed_point};
use crate::rules::UpdateRule;
use crate::sampler::{mean_and_se, residual_table, sample_trajectory_with, McConfig, Start, TailPolicy, TargetEvaluator};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub lhs: f64,
    pub lhs_std_error: f64,
    /// `sqrt(E||T_hat Q - T Q||_2^2)`.
    pub variance_term: f64,
    pub variance_std_error: f64,
    pub contraction_term: f64,
    pub bias_term: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub slack: f64,
    /// `lhs <= rhs + 3 se` with the two Monte Carlo errors combined.
    pub holds: bool,

    pub lhs_squared: f64,
    pub lhs_squared_std_error: f64,
    pub rhs_squared: f64,
    pub slack_squared: f64,
    pub holds_squared: bool,

    pub n_replicates: usize,
}

impl DecompositionReport {
    pub fn std_error(&self) -> f64 {
        self.lhs_std_error.hypot(self.variance_std_error)
    }
}

/// Replicate `k` draws one trajectory from every state-action pair, using
/// child stream `j` of child `k` of `mc.rng` for pair `j`, to realise the
/// random table `T_hat Q`.
pub fn decomposition_check(
    mdp: &Mdp,
    rule: UpdateRule,
    target_policy: &Policy,
    behaviour: &Policy,
    q0: &QTable,
    mc: &McConfig,
) -> Result<DecompositionReport> {
    mc.validate(&rule)?;
    mdp.check_table(q0)?;
    let op = build_operator(mdp, rule, target_policy, behaviour)?;
    let q_fix = fixed_point(&op)?;
    let q_pi = exact_q(mdp, target_policy)?;
    let tq = op.apply(q0);
    let residual = residual_table(&tq, q0);
    let tail = (mc.tail == TailPolicy::AnalyticTail).then_some(&residual);
    let eval = TargetEvaluator::new(rule, target_policy, behaviour, mdp.gamma())?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let horizon = mc.effective_horizon(&rule);

    let samples: Vec<(f64, f64, f64)> = (0..mc.n_trajectories as u64)
        .into_par_iter()
        .map(|k| {
            let rep = mc.rng.child(k);
            let mut table = QTable::zeros(ns, na);
            for x in 0..ns {
                for a in 0..na {
                    let mut rng = rep.child(mdp.pair(x, a) as u64).rng();
                    let traj = sample_trajectory_with(mdp, behaviour, Start::Pair(x, a), horizon, mc.reward_noise, &mut rng);
                    let t = eval.target_at(q0, &traj, 0, tail)?.expect("horizon >= n was validated");
                    table.set(x, a, t);
                }
            }
            let dev = table.l2_distance(&tq);
            let err2 = table.l2_distance(&q_pi);
            Ok((table.linf_distance(&q_pi), err2 * err2, dev * dev))
        })
        .collect::<Result<_>>()?;

    let col = |f: fn(&(f64, f64, f64)) -> f64| samples.iter().map(f).collect::<Vec<_>>();
    let (lhs, lhs_se) = mean_and_se(&col(|s| s.0));
    let (lhs2, lhs2_se) = mean_and_se(&col(|s| s.1));
    let (var, var_se) = mean_and_se(&col(|s| s.2));

    let sup_rate = op.row_rates().into_iter().fold(0.0, f64::max);
    let gap = q0.linf_distance(&q_fix);
    let bias = q_fix.l2_distance(&q_pi);
    let variance_term = var.sqrt();
    // delta method for the square root
    let variance_std_error = if variance_term > 0.0 {
        var_se / (2.0 * variance_term)
    } else {
        0.0
    };
    let contraction_term = sup_rate * gap;
    let rhs = variance_term + contraction_term + bias;
    let se = lhs_se.hypot(variance_std_error);

    let pairs = (ns * na) as f64;
    let rhs_squared = 3.0 * (var + sup_rate * sup_rate * pairs * gap * gap + bias * bias);
    let se_squared = lhs2_se.hypot(3.0 * var_se);

    Ok(DecompositionReport {
        lhs,
        lhs_std_error: lhs_se,
        variance_term,
        variance_std_error,
        contraction_term,
        bias_term: bias,
        rhs,
        slack: rhs - lhs,
        holds: lhs <= rhs + 3.0 * se,
        lhs_squared: lhs2,
        lhs_squared_std_error: lhs2_se,
        rhs_squared,
        slack_squared: rhs_squared - lhs2,
        holds_squared: lhs2 <= rhs_squared + 3.0 * se_squared,
        n_replicates: samples.len(),
    })
}
