//! Trajectory simulation, stochastic update targets and their Monte Carlo
//! statistics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::exact_q;
use crate::error::{Error, Result};
use crate::mdp::{sample_index, Mdp, Policy, QTable, StateActionDist};
use crate::operator::build_operator;
use crate::rng::RngStream;
use crate::rules::{RuleKind, UpdateRule};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

/// A behaviour-policy trajectory `(x_t, a_t, r_t)_{t < len}` together with
/// the state reached after the last step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// State following the last step; terminal iff `terminated`.
    pub last_state: usize,
    pub terminated: bool,
    pub horizon_cap: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `x_i` for `0 <= i <= len`.
    #[inline]
    pub fn state_at(&self, i: usize) -> usize {
        if i < self.steps.len() {
            self.steps[i].state
        } else {
            self.last_state
        }
    }

    #[inline]
    fn ends_terminal_at(&self, i: usize) -> bool {
        self.terminated && i == self.steps.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Start {
    /// Fixed first state-action pair.
    Pair(usize, usize),
    /// Fixed first state, action drawn from the behaviour policy.
    State(usize),
    /// State drawn from the MDP's initial distribution.
    Initial,
}

/// Optional additive noise on observed rewards. Off by default; it exists to
/// give deterministic-reward MDPs nonzero one-step variance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum RewardNoise {
    #[default]
    None,
    Gaussian(f64),
    /// `+scale` or `-scale` with equal probability.
    Rademacher(f64),
}

impl RewardNoise {
    #[inline]
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RewardNoise::None => 0.0,
            RewardNoise::Gaussian(sd) => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }
            RewardNoise::Rademacher(scale) => {
                if rng.random::<bool>() {
                    scale
                } else {
                    -scale
                }
            }
        }
    }
}

pub fn sample_trajectory(
    mdp: &Mdp,
    behaviour: &Policy,
    start: Start,
    horizon: usize,
    stream: RngStream,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::OutOfRange {
            name: "horizon",
            value: 0.0,
            range: ">= 1",
        });
    }
    mdp.check_policy(behaviour)?;
    Ok(sample_trajectory_with(
        mdp,
        behaviour,
        start,
        horizon,
        RewardNoise::None,
        &mut stream.rng(),
    ))
}

/// Follows `behaviour` for at most `horizon` steps, stopping early on entering
/// a terminal state.
pub fn sample_trajectory_with<R: Rng + ?Sized>(
    mdp: &Mdp,
    behaviour: &Policy,
    start: Start,
    horizon: usize,
    noise: RewardNoise,
    rng: &mut R,
) -> Trajectory {
    let (mut x, mut a) = match start {
        Start::Pair(x, a) => (x, a),
        Start::State(x) => (x, behaviour.sample_action(x, rng)),
        Start::Initial => {
            let x = sample_index(mdp.initial_dist(), rng);
            (x, behaviour.sample_action(x, rng))
        }
    };
    let mut steps = Vec::with_capacity(horizon.min(1024));
    loop {
        let reward = mdp.reward(x, a) + noise.sample(rng);
        steps.push(Step {
            state: x,
            action: a,
            reward,
        });
        let y = sample_index(mdp.next_dist(x, a), rng);
        if mdp.is_terminal(y) || steps.len() == horizon {
            return Trajectory {
                steps,
                last_state: y,
                terminated: mdp.is_terminal(y),
                horizon_cap: horizon,
            };
        }
        x = y;
        a = behaviour.sample_action(x, rng);
    }
}

/// Computes forward-view update targets of one rule on trajectories.
///
/// Bootstrap values use the target policy for the n-step kinds and the
/// mixture `pi_alpha` for the trace kinds; the value after a terminal
/// transition is 0.
#[derive(Clone, Debug)]
pub struct TargetEvaluator<'a> {
    rule: UpdateRule,
    target: &'a Policy,
    behaviour: &'a Policy,
    bootstrap: Policy,
    gamma: f64,
}

impl<'a> TargetEvaluator<'a> {
    pub fn new(rule: UpdateRule, target: &'a Policy, behaviour: &'a Policy, gamma: f64) -> Result<Self> {
        rule.validate()?;
        if target.n_states() != behaviour.n_states() || target.n_actions() != behaviour.n_actions() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", target.n_states(), target.n_actions()),
                found: format!("{}x{}", behaviour.n_states(), behaviour.n_actions()),
            });
        }
        let bootstrap = if rule.kind.is_trace() {
            crate::dp::mixture(target, behaviour, rule.alpha)?
        } else {
            target.clone()
        };
        Ok(Self {
            rule,
            target,
            behaviour,
            bootstrap,
            gamma,
        })
    }

    pub fn rule(&self) -> UpdateRule {
        self.rule
    }

    #[inline]
    fn value_at(&self, q: &QTable, traj: &Trajectory, i: usize) -> f64 {
        if traj.ends_terminal_at(i) {
            return 0.0;
        }
        let x = traj.state_at(i);
        q.row(x).iter().zip(self.bootstrap.row(x)).map(|(v, p)| v * p).sum()
    }

    #[inline]
    fn coefficient(&self, x: usize, a: usize) -> f64 {
        self.rule
            .trace_coefficient(self.target.prob(x, a), self.behaviour.prob(x, a))
    }

    fn ratio(&self, step: &Step) -> Result<f64> {
        let mu = self.behaviour.prob(step.state, step.action);
        if mu == 0.0 {
            return Err(Error::ZeroBehaviourProbability {
                state: step.state,
                action: step.action,
            });
        }
        Ok(self.target.prob(step.state, step.action) / mu)
    }

    /// Target for `Q(x_offset, a_offset)`, or `None` when an n-step rule
    /// runs past the end of a truncated trajectory.
    ///
    /// `tail`, if given, is the exact residual `R Q - Q` of the trace
    /// operator; it closes the forward sum beyond the last step so the target
    /// is unbiased for the infinite-horizon operator.
    pub fn target_at(
        &self,
        q: &QTable,
        traj: &Trajectory,
        offset: usize,
        tail: Option<&QTable>,
    ) -> Result<Option<f64>> {
        if offset >= traj.len() {
            return Err(Error::TrajectoryTooShort(format!(
                "offset {offset} in trajectory of length {}",
                traj.len()
            )));
        }
        match self.rule.kind {
            RuleKind::NStepUncorrected | RuleKind::NStepImportanceWeighted => self.n_step(q, traj, offset),
            RuleKind::Retrace | RuleKind::TreeBackup => {
                Ok(Some(self.trace_targets(q, traj, tail, offset)?[0]))
            }
        }
    }

    /// Targets for every offset of the trajectory.
    pub fn all_targets(&self, q: &QTable, traj: &Trajectory, tail: Option<&QTable>) -> Result<Vec<Option<f64>>> {
        match self.rule.kind {
            RuleKind::NStepUncorrected | RuleKind::NStepImportanceWeighted => {
                (0..traj.len()).map(|t| self.n_step(q, traj, t)).collect()
            }
            RuleKind::Retrace | RuleKind::TreeBackup => {
                Ok(self.trace_targets(q, traj, tail, 0)?.into_iter().map(Some).collect())
            }
        }
    }

    fn n_step(&self, q: &QTable, traj: &Trajectory, t: usize) -> Result<Option<f64>> {
        let n = self.rule.n;
        let remaining = traj.len() - t;
        if remaining < n && !traj.terminated {
            return Ok(None);
        }
        let weighted = self.rule.kind == RuleKind::NStepImportanceWeighted;
        let m = remaining.min(n);
        let mut total = 0.0;
        let mut weight = 1.0;
        let mut discount = 1.0;
        for s in 0..m {
            let step = &traj.steps[t + s];
            if weighted && s > 0 {
                weight *= self.ratio(step)?;
            }
            total += weight * discount * step.reward;
            discount *= self.gamma;
        }
        if m == n {
            total += weight * discount * self.value_at(q, traj, t + n);
        }
        Ok(Some(total))
    }

    /// Backward recursion `D_t = delta_t + gamma c_{t+1} D_{t+1}`, returning
    /// `Q(x_t, a_t) + D_t` for `t >= from`.
    fn trace_targets(&self, q: &QTable, traj: &Trajectory, tail: Option<&QTable>, from: usize) -> Result<Vec<f64>> {
        let len = traj.len();
        let g = self.gamma;
        let mut carry = match tail {
            Some(res) if !traj.terminated => {
                let x = traj.last_state;
                (0..q.n_actions())
                    .map(|a| self.behaviour.prob(x, a) * self.coefficient(x, a) * res.get(x, a))
                    .sum()
            }
            _ => 0.0,
        };
        let mut out = vec![0.0; len - from];
        let mut next_value = self.value_at(q, traj, len);
        for t in (from..len).rev() {
            let step = &traj.steps[t];
            let q_t = q.get(step.state, step.action);
            let delta = step.reward + g * next_value - q_t;
            let d = delta + g * carry;
            out[t - from] = q_t + d;
            carry = self.coefficient(step.state, step.action) * d;
            next_value = self.value_at(q, traj, t);
        }
        Ok(out)
    }
}

/// Scalar update target for `Q(x_0, a_0)`.
///
/// Trajectories shorter than `n` that end in a terminal state bootstrap with
/// 0; a truncated trajectory that is too short for an n-step rule is an error.
pub fn target(
    rule: UpdateRule,
    q: &QTable,
    traj: &Trajectory,
    target_policy: &Policy,
    behaviour: &Policy,
    gamma: f64,
) -> Result<f64> {
    TargetEvaluator::new(rule, target_policy, behaviour, gamma)?
        .target_at(q, traj, 0, None)?
        .ok_or_else(|| {
            Error::TrajectoryTooShort(format!(
                "{rule} needs {} steps, trajectory has {}",
                rule.n,
                traj.len()
            ))
        })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailPolicy {
    /// Cut the trajectory at the horizon.
    #[default]
    Absorb,
    /// Close the forward sum beyond the horizon with the exact operator.
    AnalyticTail,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McConfig {
    pub n_trajectories: usize,
    pub horizon: usize,
    pub rng: RngStream,
    pub tail: TailPolicy,
    pub reward_noise: RewardNoise,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 5000,
            horizon: 100,
            rng: RngStream::from_seed(0),
            tail: TailPolicy::Absorb,
            reward_noise: RewardNoise::None,
        }
    }
}

impl McConfig {
    /// Steps actually simulated for `rule`: an n-step target never looks past
    /// step `n`.
    pub fn effective_horizon(&self, rule: &UpdateRule) -> usize {
        if rule.kind.is_n_step() {
            self.horizon.min(rule.n)
        } else {
            self.horizon
        }
    }

    pub fn validate(&self, rule: &UpdateRule) -> Result<()> {
        if self.n_trajectories < 2 {
            return Err(Error::OutOfRange {
                name: "n_trajectories",
                value: self.n_trajectories as f64,
                range: ">= 2",
            });
        }
        if self.horizon == 0 || (rule.kind.is_n_step() && self.horizon < rule.n) {
            return Err(Error::OutOfRange {
                name: "horizon",
                value: self.horizon as f64,
                range: ">= max(1, n)",
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub mean_square: f64,
    pub std_error: f64,
    pub n_samples: usize,
    /// `gamma^H R_max / (1 - gamma)` for trace rules cut at the horizon;
    /// zero under the analytic tail and for n-step rules.
    pub tail_bound: f64,
}

impl VarianceEstimate {
    pub fn root(&self) -> f64 {
        self.mean_square.sqrt()
    }
}

/// Sample mean and standard error of the mean.
pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Estimates `E_{(x0,a0)~nu} E_mu[(T_hat(Q, traj) - (T Q)(x0, a0))^2]`,
/// centring on the exact operator value.
///
/// Trajectory `k` uses the child stream `k` of `cfg.rng` and samples are
/// reduced in index order, so the result does not depend on the number of
/// worker threads.
#[allow(clippy::too_many_arguments)]
pub fn variance(
    mdp: &Mdp,
    rule: UpdateRule,
    q: &QTable,
    nu: &StateActionDist,
    target_policy: &Policy,
    behaviour: &Policy,
    cfg: &McConfig,
) -> Result<VarianceEstimate> {
    cfg.validate(&rule)?;
    mdp.check_table(q)?;
    let op = build_operator(mdp, rule, target_policy, behaviour)?;
    let tq = op.apply(q);
    let residual = residual_table(&tq, q);
    let tail = (cfg.tail == TailPolicy::AnalyticTail).then_some(&residual);
    let eval = TargetEvaluator::new(rule, target_policy, behaviour, mdp.gamma())?;
    let horizon = cfg.effective_horizon(&rule);

    let squares: Vec<f64> = (0..cfg.n_trajectories as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = cfg.rng.child(k).rng();
            let (x, a) = nu.sample(&mut rng);
            let traj = sample_trajectory_with(mdp, behaviour, Start::Pair(x, a), horizon, cfg.reward_noise, &mut rng);
            let t = eval
                .target_at(q, &traj, 0, tail)?
                .expect("horizon >= n was validated");
            let d = t - tq.get(x, a);
            Ok(d * d)
        })
        .collect::<Result<_>>()?;

    let (mean_square, std_error) = mean_and_se(&squares);
    let tail_bound = if cfg.tail == TailPolicy::AnalyticTail || rule.kind.is_n_step() {
        0.0
    } else {
        mdp.gamma().powi(cfg.horizon as i32) * mdp.r_max() / (1.0 - mdp.gamma())
    };
    Ok(VarianceEstimate {
        mean_square,
        std_error,
        n_samples: squares.len(),
        tail_bound,
    })
}

pub(crate) fn residual_table(tq: &QTable, q: &QTable) -> QTable {
    let mut r = tq.clone();
    r.values_mut()
        .iter_mut()
        .zip(q.values())
        .for_each(|(a, b)| *a -= b);
    r
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateMode {
    /// Every visited pair receives its own suffix target.
    #[default]
    EveryOffset,
    /// Only the first pair of each segment is updated.
    FirstStepOnly,
}

/// Online tabular learner that consumes environment steps segment by segment.
///
/// Episodes continue across segments: a segment that ends without reaching a
/// terminal state is resumed from its last state by the next one. Targets for
/// a segment are computed against the table as it was when the segment
/// started, then applied in order.
#[derive(Clone, Debug)]
pub struct TdLearner {
    pub q: QTable,
    cursor: Option<usize>,
    env_steps: u64,
    rng: ChaCha8Rng,
    pub segment_len: usize,
    pub mode: UpdateMode,
    pub reward_noise: RewardNoise,
}

impl TdLearner {
    pub fn new(mdp: &Mdp, stream: RngStream, segment_len: usize) -> Self {
        Self {
            q: QTable::zeros(mdp.n_states(), mdp.n_actions()),
            cursor: None,
            env_steps: 0,
            rng: stream.rng(),
            segment_len: segment_len.max(1),
            mode: UpdateMode::EveryOffset,
            reward_noise: RewardNoise::None,
        }
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Samples the next segment of at most `max_len` steps.
    pub fn next_segment(&mut self, mdp: &Mdp, behaviour: &Policy, max_len: usize) -> Trajectory {
        let start = match self.cursor {
            Some(x) => Start::State(x),
            None => Start::Initial,
        };
        let len = max_len.clamp(1, self.segment_len);
        let traj = sample_trajectory_with(mdp, behaviour, start, len, self.reward_noise, &mut self.rng);
        self.cursor = (!traj.terminated).then_some(traj.last_state);
        self.env_steps += traj.len() as u64;
        traj
    }

    /// Moves the table toward the segment's targets with step size `lr`.
    pub fn apply(&mut self, eval: &TargetEvaluator<'_>, traj: &Trajectory, lr: f64) -> Result<()> {
        let targets = match self.mode {
            UpdateMode::EveryOffset => eval.all_targets(&self.q, traj, None)?,
            UpdateMode::FirstStepOnly => vec![eval.target_at(&self.q, traj, 0, None)?],
        };
        for (step, t) in traj.steps.iter().zip(targets) {
            // n-step targets are unavailable within n steps of a truncation
            if let Some(t) = t {
                let old = self.q.get(step.state, step.action);
                self.q.set(step.state, step.action, old + lr * (t - old));
            }
        }
        Ok(())
    }

    /// Consumes exactly `steps` environment steps.
    pub fn run(&mut self, mdp: &Mdp, eval: &TargetEvaluator<'_>, behaviour: &Policy, steps: u64, lr: f64) -> Result<()> {
        let end = self.env_steps + steps;
        while self.env_steps < end {
            let budget = (end - self.env_steps) as usize;
            let traj = self.next_segment(mdp, behaviour, budget);
            self.apply(eval, &traj, lr)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TdConfig {
    pub learning_rate: f64,
    pub n_steps: u64,
    pub eval_every: u64,
    pub segment_len: usize,
    pub mode: UpdateMode,
    pub rng: RngStream,
}

impl Default for TdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            n_steps: 100_000,
            eval_every: 1000,
            segment_len: 100,
            mode: UpdateMode::EveryOffset,
            rng: RngStream::from_seed(0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub env_steps: u64,
    pub l2_error: f64,
}

/// Learns `Q^pi` from behaviour data, recording `||Q - Q^pi||_2` at step 0 and
/// every `eval_every` environment steps. Segments never straddle a checkpoint.
pub fn td_eval_loop(
    mdp: &Mdp,
    rule: UpdateRule,
    target_policy: &Policy,
    behaviour: &Policy,
    cfg: &TdConfig,
) -> Result<Vec<CurvePoint>> {
    if !(0.0..=1.0).contains(&cfg.learning_rate) {
        return Err(Error::OutOfRange {
            name: "learning_rate",
            value: cfg.learning_rate,
            range: "[0, 1]",
        });
    }
    if cfg.eval_every == 0 {
        return Err(Error::OutOfRange {
            name: "eval_every",
            value: 0.0,
            range: ">= 1",
        });
    }
    mdp.check_policy(target_policy)?;
    mdp.check_policy(behaviour)?;
    let q_pi = exact_q(mdp, target_policy)?;
    let eval = TargetEvaluator::new(rule, target_policy, behaviour, mdp.gamma())?;
    let mut learner = TdLearner::new(mdp, cfg.rng, cfg.segment_len);
    learner.mode = cfg.mode;

    let mut curve = vec![CurvePoint {
        env_steps: 0,
        l2_error: learner.q.l2_distance(&q_pi),
    }];
    let mut checkpoint = 0;
    while checkpoint < cfg.n_steps {
        checkpoint = (checkpoint + cfg.eval_every).min(cfg.n_steps);
        learner.run(mdp, &eval, behaviour, checkpoint - learner.env_steps(), cfg.learning_rate)?;
        curve.push(CurvePoint {
            env_steps: checkpoint,
            l2_error: learner.q.l2_distance(&q_pi),
        });
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::optimal_policy;
    use crate::envs::{gen_chain, gen_dirichlet_uniform, CHAIN_LEFT, CHAIN_RIGHT};

    fn always_right(ns: usize) -> Policy {
        Policy::deterministic(2, &vec![CHAIN_RIGHT; ns]).unwrap()
    }

    #[test]
    fn chain_trajectory_by_hand() {
        let chain = gen_chain(4).unwrap();
        let traj = sample_trajectory(&chain, &always_right(4), Start::Pair(0, CHAIN_RIGHT), 100, RngStream::from_seed(0)).unwrap();
        let got: Vec<(usize, usize, f64)> = traj.steps.iter().map(|s| (s.state, s.action, s.reward)).collect();
        assert_eq!(got, vec![(0, 1, -1.0), (1, 1, -1.0), (2, 1, 50.0)]);
        assert!(traj.terminated);
        assert_eq!(traj.last_state, 3);
    }

    #[test]
    fn horizon_one_gives_one_step() {
        let mdp = gen_dirichlet_uniform(4, 2, RngStream::from_seed(1)).unwrap();
        let traj = sample_trajectory(&mdp, &Policy::uniform(4, 2), Start::Initial, 1, RngStream::from_seed(2)).unwrap();
        assert_eq!(traj.len(), 1);
        assert!(!traj.terminated);
        assert!(sample_trajectory(&mdp, &Policy::uniform(4, 2), Start::Initial, 0, RngStream::from_seed(2)).is_err());
    }

    #[test]
    fn trajectories_replay_per_seed() {
        let mdp = gen_dirichlet_uniform(5, 3, RngStream::from_seed(1)).unwrap();
        let mu = Policy::uniform(5, 3);
        let a = sample_trajectory(&mdp, &mu, Start::Initial, 50, RngStream::new(3, 4)).unwrap();
        let b = sample_trajectory(&mdp, &mu, Start::Initial, 50, RngStream::new(3, 4)).unwrap();
        assert_eq!(a, b);
    }

    fn handmade(steps: &[(usize, usize, f64)], last_state: usize, terminated: bool) -> Trajectory {
        Trajectory {
            steps: steps
                .iter()
                .map(|&(state, action, reward)| Step { state, action, reward })
                .collect(),
            last_state,
            terminated,
            horizon_cap: 100,
        }
    }

    #[test]
    fn retrace_target_by_hand() {
        // rewards 1 then 2, then termination; q = 0, pi = mu deterministic
        let pi = Policy::deterministic(1, &[0, 0, 0]).unwrap();
        let traj = handmade(&[(0, 0, 1.0), (1, 0, 2.0)], 2, true);
        let q = QTable::zeros(3, 1);
        let t = target(UpdateRule::retrace(1.0), &q, &traj, &pi, &pi, 0.5).unwrap();
        assert_eq!(t, 2.0);
    }

    #[test]
    fn retrace_target_matches_term_by_term_sum() {
        // Q(x0,a0) + sum_s gamma^s prod_{u=1}^s c_u delta_s, evaluated directly
        let pi = Policy::new(3, 2, vec![0.8, 0.2, 0.3, 0.7, 0.5, 0.5]).unwrap();
        let mu = Policy::new(3, 2, vec![0.5, 0.5, 0.6, 0.4, 0.1, 0.9]).unwrap();
        let q = QTable::from_vec(3, 2, vec![1.0, -2.0, 0.5, 3.0, -1.0, 2.5]).unwrap();
        let traj = handmade(&[(0, 1, 0.3), (1, 0, -0.7), (2, 1, 1.1), (1, 1, 0.2)], 0, false);
        let g = 0.9;
        for alpha in [0.0, 0.4, 1.0] {
            let rule = UpdateRule::retrace(alpha);
            let pa = crate::dp::mixture(&pi, &mu, alpha).unwrap();
            let v = |x: usize| (0..2).map(|a| pa.prob(x, a) * q.get(x, a)).sum::<f64>();
            let mut expected = q.get(0, 1);
            for s in 0..4 {
                let st = traj.steps[s];
                let delta = st.reward + g * v(traj.state_at(s + 1)) - q.get(st.state, st.action);
                let trace: f64 = (1..=s)
                    .map(|u| {
                        let su = traj.steps[u];
                        let ratio: f64 = (pi.prob(su.state, su.action) / mu.prob(su.state, su.action)).min(1.0);
                        (1.0 - alpha) + alpha * ratio
                    })
                    .product();
                expected += g.powi(s as i32) * trace * delta;
            }
            let got = target(rule, &q, &traj, &pi, &mu, g).unwrap();
            assert!((got - expected).abs() < 1e-12, "alpha {alpha}");
        }
    }

    #[test]
    fn n_step_targets_by_hand() {
        let pi = Policy::new(2, 2, vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        let mu = Policy::new(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let q = QTable::from_vec(2, 2, vec![4.0, 8.0, 2.0, 6.0]).unwrap();
        let traj = handmade(&[(0, 1, 1.0), (1, 0, 2.0), (0, 1, 3.0)], 1, false);
        let g = 0.5;
        // uncorrected, n = 2: r0 + g r1 + g^2 E_pi Q(x2)
        let v0 = 0.25 * 4.0 + 0.75 * 8.0;
        let t = target(UpdateRule::uncorrected(2), &q, &traj, &pi, &mu, g).unwrap();
        assert_eq!(t, 1.0 + 0.5 * 2.0 + 0.25 * v0);
        // importance, n = 2: rho_1 = pi(0|1)/mu(0|1) = 2
        let t = target(UpdateRule::importance(2), &q, &traj, &pi, &mu, g).unwrap();
        assert_eq!(t, 1.0 + 2.0 * 0.5 * 2.0 + 2.0 * 0.25 * v0);
        // n = 3 bootstraps from the state after the trajectory: E_pi Q(1) = 2
        let t = target(UpdateRule::importance(3), &q, &traj, &pi, &mu, g).unwrap();
        let rho2 = 0.75 / 0.5;
        assert!((t - (1.0 + 2.0 * 0.5 * 2.0 + 2.0 * rho2 * 0.25 * 3.0 + 2.0 * rho2 * 0.125 * 2.0)).abs() < 1e-12);
        // too long for a truncated trajectory
        assert!(target(UpdateRule::uncorrected(4), &q, &traj, &pi, &mu, g).is_err());
    }

    #[test]
    fn short_episodes_bootstrap_zero() {
        let pi = Policy::uniform(2, 1);
        let q = QTable::constant(2, 1, 100.0);
        let traj = handmade(&[(0, 0, 1.0), (0, 0, 1.0)], 1, true);
        for rule in [UpdateRule::uncorrected(5), UpdateRule::importance(5)] {
            assert_eq!(target(rule, &q, &traj, &pi, &pi, 0.5).unwrap(), 1.5);
        }
    }

    #[test]
    fn one_step_rules_agree() {
        let mdp = gen_dirichlet_uniform(4, 3, RngStream::from_seed(5)).unwrap();
        let pi = Policy::dirichlet(4, 3, RngStream::new(5, 1));
        let mu = Policy::dirichlet(4, 3, RngStream::new(5, 2));
        let q = QTable::from_vec(4, 3, (0..12).map(|i| i as f64 / 3.0).collect()).unwrap();
        for k in 0..20 {
            let traj = sample_trajectory(&mdp, &mu, Start::Initial, 10, RngStream::new(9, k)).unwrap();
            let a = target(UpdateRule::uncorrected(1), &q, &traj, &pi, &mu, 0.9).unwrap();
            let b = target(UpdateRule::importance(1), &q, &traj, &pi, &mu, 0.9).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_behaviour_probability_is_an_error_for_importance_weighting() {
        let pi = Policy::uniform(2, 2);
        let mu = Policy::new(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let q = QTable::zeros(2, 2);
        let traj = handmade(&[(0, 0, 1.0), (1, 1, 1.0)], 0, false);
        let err = target(UpdateRule::importance(2), &q, &traj, &pi, &mu, 0.9);
        assert!(matches!(err, Err(Error::ZeroBehaviourProbability { state: 1, action: 1 })));
    }

    #[test]
    fn targets_at_fixed_point_are_exact_on_deterministic_problems() {
        let chain = gen_chain(6).unwrap();
        let right = always_right(6);
        let q = exact_q(&chain, &right).unwrap();
        for rule in [UpdateRule::uncorrected(3), UpdateRule::importance(2), UpdateRule::retrace(1.0), UpdateRule::tree_backup(1.0)] {
            for x in 0..5 {
                let traj = sample_trajectory(&chain, &right, Start::Pair(x, CHAIN_RIGHT), 100, RngStream::from_seed(0)).unwrap();
                let t = target(rule, &q, &traj, &right, &right, chain.gamma()).unwrap();
                assert!((t - q.get(x, CHAIN_RIGHT)).abs() < 1e-12, "{rule} x={x}");
            }
        }
    }

    #[test]
    fn all_targets_agree_with_single_offset_targets() {
        let mdp = gen_dirichlet_uniform(4, 2, RngStream::from_seed(8)).unwrap();
        let pi = Policy::dirichlet(4, 2, RngStream::new(8, 1));
        let mu = Policy::dirichlet(4, 2, RngStream::new(8, 2));
        let q = QTable::from_vec(4, 2, vec![0.1, 0.5, -0.3, 1.2, 0.0, 0.7, -1.0, 0.4]).unwrap();
        let traj = sample_trajectory(&mdp, &mu, Start::Initial, 30, RngStream::from_seed(3)).unwrap();
        for rule in [UpdateRule::uncorrected(4), UpdateRule::importance(2), UpdateRule::retrace(0.6), UpdateRule::tree_backup(0.3)] {
            let eval = TargetEvaluator::new(rule, &pi, &mu, 0.9).unwrap();
            let all = eval.all_targets(&q, &traj, None).unwrap();
            for t in 0..traj.len() {
                let sub = Trajectory {
                    steps: traj.steps[t..].to_vec(),
                    ..traj.clone()
                };
                assert_eq!(eval.target_at(&q, &sub, 0, None).unwrap(), all[t]);
            }
        }
    }

    #[test]
    fn deterministic_problem_has_zero_variance() {
        let chain = gen_chain(6).unwrap();
        let right = always_right(6);
        let nu = StateActionDist::initial_pairs(&chain, &right);
        let q = QTable::zeros(6, 2);
        let opt = optimal_policy(&chain, 1e-12).unwrap();
        for rule in [UpdateRule::uncorrected(3), UpdateRule::retrace(0.5)] {
            let est = variance(&chain, rule, &q, &nu, &opt, &right, &McConfig { n_trajectories: 200, ..Default::default() }).unwrap();
            assert!(est.mean_square < 1e-12, "{rule}: {}", est.mean_square);
        }
    }

    #[test]
    fn rademacher_reward_noise_has_unit_variance() {
        let one = Mdp::new(1, 1, vec![1.0], vec![0.0], 0.0, vec![1.0], vec![false]).unwrap();
        let pi = Policy::uniform(1, 1);
        let cfg = McConfig {
            n_trajectories: 4000,
            horizon: 1,
            reward_noise: RewardNoise::Rademacher(1.0),
            ..Default::default()
        };
        let est = variance(&one, UpdateRule::uncorrected(1), &QTable::zeros(1, 1), &StateActionDist::uniform(1, 1), &pi, &pi, &cfg).unwrap();
        // every squared deviation is exactly 1
        assert!((est.mean_square - 1.0).abs() <= 3.0 * est.std_error + 1e-12);
        let cfg = McConfig { reward_noise: RewardNoise::Gaussian(1.0), ..cfg };
        let est = variance(&one, UpdateRule::uncorrected(1), &QTable::zeros(1, 1), &StateActionDist::uniform(1, 1), &pi, &pi, &cfg).unwrap();
        assert!((est.mean_square - 1.0).abs() <= 3.0 * est.std_error);
    }

    #[test]
    fn variance_is_independent_of_worker_count() {
        let mdp = gen_dirichlet_uniform(5, 3, RngStream::from_seed(2)).unwrap();
        let pi = Policy::dirichlet(5, 3, RngStream::new(2, 1));
        let mu = Policy::dirichlet(5, 3, RngStream::new(2, 2));
        let nu = StateActionDist::initial_pairs(&mdp, &mu);
        let q = QTable::zeros(5, 3);
        let cfg = McConfig { n_trajectories: 500, ..Default::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| variance(&mdp, UpdateRule::importance(2), &q, &nu, &pi, &mu, &cfg).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn zero_learning_rate_leaves_error_constant() {
        let chain = gen_chain(6).unwrap();
        let opt = optimal_policy(&chain, 1e-12).unwrap();
        let mu = Policy::uniform(6, 2);
        let cfg = TdConfig { learning_rate: 0.0, n_steps: 2000, eval_every: 500, ..Default::default() };
        let curve = td_eval_loop(&chain, UpdateRule::retrace(1.0), &opt, &mu, &cfg).unwrap();
        let q_pi = exact_q(&chain, &opt).unwrap();
        assert_eq!(curve.len(), 5);
        assert_eq!(curve.last().unwrap().env_steps, 2000);
        assert!(curve.iter().all(|p| p.l2_error == q_pi.l2_norm()));
    }

    #[test]
    fn on_policy_retrace_learns_chain6() {
        let chain = gen_chain(6).unwrap();
        let mu = Policy::uniform(6, 2);
        let cfg = TdConfig { n_steps: 100_000, eval_every: 10_000, ..Default::default() };
        let curve = td_eval_loop(&chain, UpdateRule::retrace(1.0), &mu, &mu, &cfg).unwrap();
        let q_pi = exact_q(&chain, &mu).unwrap();
        let last = curve.last().unwrap().l2_error;
        assert!(last <= 0.05 * q_pi.l2_norm(), "final error {last}, |Q| {}", q_pi.l2_norm());
    }

    #[test]
    fn first_step_only_mode_updates_one_pair_per_segment() {
        let chain = gen_chain(6).unwrap();
        let mu = Policy::uniform(6, 2);
        let eval = TargetEvaluator::new(UpdateRule::retrace(1.0), &mu, &mu, 0.9).unwrap();
        let mut learner = TdLearner::new(&chain, RngStream::from_seed(1), 10);
        learner.mode = UpdateMode::FirstStepOnly;
        let traj = learner.next_segment(&chain, &mu, 10);
        learner.apply(&eval, &traj, 1.0).unwrap();
        let changed = learner.q.values().iter().filter(|&&v| v != 0.0).count();
        assert!(changed <= 1);
        let _ = CHAIN_LEFT;
    }
}
