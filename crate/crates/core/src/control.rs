//! Modified policy iteration with pluggable off-policy evaluation.

use serde::{Deserialize, Serialize};

use crate::ctrace::{contraction_estimate, rm_step, CtraceState, StepSchedule};
use crate::dp::{exact_q, greedy, mixture, optimal_policy, state_values, VALUE_ITERATION_TOL};
use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy, QTable};
use crate::rng::RngStream;
use crate::rules::UpdateRule;
use crate::sampler::{TargetEvaluator, TdLearner, UpdateMode};

/// How `Q` of the current target is estimated each round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Evaluation {
    /// TD-style learning from behaviour data with a fixed rule. For the trace
    /// kinds the rule's `alpha` mixes greedy and behaviour policies.
    Sampled(UpdateRule),
    /// `Q` replaced by the exact value of `alpha greedy + (1 - alpha) mu`.
    Exact { alpha: f64 },
    /// alpha-Retrace with `alpha` adapted by C-trace on every segment.
    Ctrace {
        target_rate: f64,
        phi0: f64,
        schedule: StepSchedule,
    },
}

impl Evaluation {
    pub fn label(&self) -> (String, f64) {
        match *self {
            Evaluation::Sampled(rule) => (rule.kind.name().to_string(), rule.param()),
            Evaluation::Exact { alpha } => ("exact".to_string(), alpha),
            Evaluation::Ctrace { target_rate, .. } => ("ctrace".to_string(), target_rate),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum BehaviourSchedule {
    #[default]
    FixedUniform,
    /// `epsilon`-soft greedy policy of the current `Q`.
    GreedyEpsilon(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlConfig {
    pub rounds: usize,
    pub env_steps_per_round: u64,
    pub evaluation: Evaluation,
    pub behaviour: BehaviourSchedule,
    pub learning_rate: f64,
    pub segment_len: usize,
    pub mode: UpdateMode,
    pub rng: RngStream,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            env_steps_per_round: 100,
            evaluation: Evaluation::Sampled(UpdateRule::retrace(1.0)),
            behaviour: BehaviourSchedule::FixedUniform,
            learning_rate: 0.1,
            segment_len: 100,
            mode: UpdateMode::EveryOffset,
            rng: RngStream::from_seed(0),
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.env_steps_per_round == 0 {
            return Err(Error::OutOfRange {
                name: "env_steps_per_round",
                value: 0.0,
                range: ">= 1",
            });
        }
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return Err(Error::OutOfRange {
                name: "learning_rate",
                value: self.learning_rate,
                range: "[0, 1]",
            });
        }
        if let BehaviourSchedule::GreedyEpsilon(eps) = self.behaviour {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::OutOfRange {
                    name: "epsilon",
                    value: eps,
                    range: "[0, 1]",
                });
            }
        }
        match self.evaluation {
            Evaluation::Sampled(rule) => rule.validate(),
            Evaluation::Exact { alpha } => UpdateRule::retrace(alpha).validate(),
            Evaluation::Ctrace { .. } => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub round: usize,
    pub env_steps_total: u64,
    pub suboptimality: f64,
}

#[derive(Clone, Debug)]
pub struct ControlRun {
    /// Greedy policy of the final `Q`.
    pub policy: Policy,
    pub q: QTable,
    /// Round 0 is the greedy policy of `Q = 0`.
    pub curve: Vec<ControlPoint>,
    /// `alpha` after each round under C-trace evaluation.
    pub alphas: Vec<f64>,
}

/// Mean over uniformly drawn start states of `V^*(x) - V^policy(x)`.
pub fn suboptimality(mdp: &Mdp, policy: &Policy) -> Result<f64> {
    gap_to(mdp, &optimal_values(mdp)?, policy)
}

fn optimal_values(mdp: &Mdp) -> Result<Vec<f64>> {
    let opt = optimal_policy(mdp, VALUE_ITERATION_TOL)?;
    Ok(state_values(mdp, &opt, &exact_q(mdp, &opt)?))
}

fn gap_to(mdp: &Mdp, v_opt: &[f64], policy: &Policy) -> Result<f64> {
    let v = state_values(mdp, policy, &exact_q(mdp, policy)?);
    Ok(v_opt.iter().zip(&v).map(|(a, b)| a - b).sum::<f64>() / mdp.n_states() as f64)
}

/// Each round evaluates the current greedy target from
/// `env_steps_per_round` behaviour steps, continuing from the previous `Q`
/// and episode, then takes the greedy policy of the result.
pub fn policy_iteration(mdp: &Mdp, cfg: &ControlConfig) -> Result<ControlRun> {
    cfg.validate()?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let v_opt = optimal_values(mdp)?;
    let subopt = |policy: &Policy| gap_to(mdp, &v_opt, policy);

    let mut learner = TdLearner::new(mdp, cfg.rng, cfg.segment_len);
    learner.mode = cfg.mode;
    let mut greedy_pi = greedy(&learner.q);
    let mut mu = Policy::uniform(ns, na);
    let mut ctrace = match cfg.evaluation {
        Evaluation::Ctrace {
            target_rate,
            phi0,
            schedule,
        } => Some(CtraceState::new(phi0, target_rate, schedule, gamma)?),
        _ => None,
    };
    let mut curve = vec![ControlPoint {
        round: 0,
        env_steps_total: 0,
        suboptimality: subopt(&greedy_pi)?,
    }];
    let mut alphas = Vec::new();

    for round in 1..=cfg.rounds {
        match cfg.evaluation {
            Evaluation::Sampled(rule) => {
                let eval = TargetEvaluator::new(rule, &greedy_pi, &mu, gamma)?;
                learner.run(mdp, &eval, &mu, cfg.env_steps_per_round, cfg.learning_rate)?;
            }
            Evaluation::Exact { alpha } => {
                learner.q = exact_q(mdp, &mixture(&greedy_pi, &mu, alpha)?)?;
            }
            Evaluation::Ctrace { .. } => {
                let state = ctrace.as_mut().expect("initialised for C-trace evaluation");
                let end = learner.env_steps() + cfg.env_steps_per_round;
                while learner.env_steps() < end {
                    let budget = (end - learner.env_steps()) as usize;
                    let traj = learner.next_segment(mdp, &mu, budget);
                    let alpha = state.alpha();
                    // a segment cut before termination can only show traces
                    // of its own length
                    let cut = (!traj.terminated).then(|| traj.len() - 1);
                    state.truncation = cut;
                    let c_hat = contraction_estimate(&traj, alpha, &greedy_pi, &mu, gamma, cut)?;
                    *state = rm_step(*state, c_hat);
                    let eval = TargetEvaluator::new(UpdateRule::retrace(alpha), &greedy_pi, &mu, gamma)?;
                    learner.apply(&eval, &traj, cfg.learning_rate)?;
                }
                alphas.push(state.alpha());
            }
        }
        greedy_pi = greedy(&learner.q);
        if let BehaviourSchedule::GreedyEpsilon(eps) = cfg.behaviour {
            mu = greedy_pi.epsilon_soft(eps)?;
        }
        curve.push(ControlPoint {
            round,
            env_steps_total: learner.env_steps(),
            suboptimality: subopt(&greedy_pi)?,
        });
    }
    Ok(ControlRun {
        policy: greedy_pi,
        q: learner.q,
        curve,
        alphas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::value_iteration;
    use crate::envs::{gen_chain, CHAIN_LEFT};

    #[test]
    fn suboptimality_examples() {
        let chain = gen_chain(6).unwrap();
        let opt = optimal_policy(&chain, 1e-12).unwrap();
        assert!(suboptimality(&chain, &opt).unwrap().abs() < 1e-10);

        let one = Mdp::new(1, 2, vec![1.0, 1.0], vec![1.0, 0.0], 0.0, vec![1.0], vec![false]).unwrap();
        let s = suboptimality(&one, &Policy::uniform(1, 2)).unwrap();
        assert!((s - 0.5).abs() < 1e-15);

        // always-left earns 0 everywhere, so the gap is the mean optimal value
        let left = Policy::deterministic(2, &[CHAIN_LEFT; 6]).unwrap();
        let v = value_iteration(&chain, 1e-13).unwrap();
        let expected = v.iter().sum::<f64>() / 6.0;
        assert!((suboptimality(&chain, &left).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn zero_rounds_returns_initial_greedy_policy() {
        let chain = gen_chain(6).unwrap();
        let run = policy_iteration(&chain, &ControlConfig { rounds: 0, ..Default::default() }).unwrap();
        assert_eq!(run.policy, greedy(&QTable::zeros(6, 2)));
        assert_eq!(run.curve.len(), 1);
    }

    #[test]
    fn exact_policy_iteration_converges_monotonically() {
        let chain = gen_chain(6).unwrap();
        let cfg = ControlConfig {
            rounds: 12,
            evaluation: Evaluation::Exact { alpha: 1.0 },
            ..Default::default()
        };
        let run = policy_iteration(&chain, &cfg).unwrap();
        assert!(run.curve.last().unwrap().suboptimality.abs() < 1e-10);
        for w in run.curve.windows(2) {
            assert!(w[1].suboptimality <= w[0].suboptimality + 1e-10);
        }
        assert_eq!(run.policy, optimal_policy(&chain, 1e-12).unwrap());
    }

    #[test]
    fn sampled_runs_replay_bit_exactly() {
        let chain = gen_chain(8).unwrap();
        let cfg = ControlConfig {
            rounds: 30,
            evaluation: Evaluation::Sampled(UpdateRule::retrace(0.5)),
            behaviour: BehaviourSchedule::GreedyEpsilon(0.3),
            rng: RngStream::from_seed(3),
            ..Default::default()
        };
        let a = policy_iteration(&chain, &cfg).unwrap();
        let b = policy_iteration(&chain, &cfg).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.q, b.q);
        assert_eq!(a.curve.last().unwrap().env_steps_total, 3000);
    }

    #[test]
    fn ctrace_control_adapts_alpha() {
        let chain = gen_chain(8).unwrap();
        let cfg = ControlConfig {
            rounds: 50,
            evaluation: Evaluation::Ctrace {
                target_rate: 0.5,
                phi0: 0.0,
                schedule: StepSchedule::default(),
            },
            ..Default::default()
        };
        let run = policy_iteration(&chain, &cfg).unwrap();
        assert_eq!(run.alphas.len(), 50);
        assert!(run.alphas.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}
