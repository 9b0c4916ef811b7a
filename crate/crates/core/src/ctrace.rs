//! C-trace: alpha-Retrace with the mixture coefficient adapted online by a
//! Robbins-Monro iteration toward a target contraction rate.

use serde::{Deserialize, Serialize};

use crate::dp::{exact_q, mixture};
use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy, QTable, StateActionDist};
use crate::operator::{build_operator, contraction_profile};
use crate::rng::RngStream;
use crate::rules::UpdateRule;
use crate::sampler::{sample_trajectory_with, RewardNoise, Start, TargetEvaluator, Trajectory};

/// `phi` is kept in `[-PHI_CLAMP, PHI_CLAMP]`.
pub const PHI_CLAMP: f64 = 20.0;

pub fn alpha_of(phi: f64) -> f64 {
    1.0 / (1.0 + (-phi).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    Constant(f64),
    /// `scale / (k + 1)^power`.
    Polynomial { scale: f64, power: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Polynomial {
            scale: 0.5,
            power: 0.7,
        }
    }
}

impl StepSchedule {
    pub fn at(&self, k: u64) -> f64 {
        match *self {
            StepSchedule::Constant(c) => c,
            StepSchedule::Polynomial { scale, power } => scale / ((k + 1) as f64).powf(power),
        }
    }

    /// True when the schedule satisfies the Robbins-Monro conditions.
    pub fn is_robbins_monro(&self) -> bool {
        match *self {
            StepSchedule::Constant(_) => false,
            StepSchedule::Polynomial { scale, power } => scale > 0.0 && power > 0.5 && power <= 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtraceState {
    pub phi: f64,
    pub target_rate: f64,
    pub schedule: StepSchedule,
    pub iteration: u64,
    /// Trace cut `N` of the truncated-trajectory variant; the target becomes
    /// `max(target_rate, gamma^N)`.
    pub truncation: Option<usize>,
    pub gamma: f64,
    pub clamp_events: u64,
}

impl CtraceState {
    pub fn new(phi: f64, target_rate: f64, schedule: StepSchedule, gamma: f64) -> Result<Self> {
        if !(0.0..=gamma).contains(&target_rate) {
            return Err(Error::OutOfRange {
                name: "target_rate",
                value: target_rate,
                range: "[0, gamma]",
            });
        }
        Ok(Self {
            phi: phi.clamp(-PHI_CLAMP, PHI_CLAMP),
            target_rate,
            schedule,
            iteration: 0,
            truncation: None,
            gamma,
            clamp_events: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        alpha_of(self.phi)
    }

    pub fn effective_target(&self) -> f64 {
        match self.truncation {
            None => self.target_rate,
            Some(n) => self.target_rate.max(self.gamma.powi(n as i32)),
        }
    }
}

pub fn rm_step(state: CtraceState, c_hat: f64) -> CtraceState {
    let eps = state.schedule.at(state.iteration);
    let raw = state.phi - eps * (c_hat - state.effective_target());
    let phi = raw.clamp(-PHI_CLAMP, PHI_CLAMP);
    let clamped = phi != raw;
    if clamped && state.clamp_events == 0 {
        log::info!("phi clamped at {phi} (iteration {})", state.iteration);
    }
    CtraceState {
        phi,
        iteration: state.iteration + 1,
        clamp_events: state.clamp_events + clamped as u64,
        ..state
    }
}

/// Single-trajectory estimate of the alpha-Retrace contraction rate at the
/// trajectory's first pair:
/// `1 - (1 - gamma) sum_t gamma^t prod_{s=1}^t c_s`.
///
/// Without truncation the sum runs to infinity; beyond the last step the
/// trace product is frozen, which is exact when the trajectory ended in a
/// terminal state. With truncation `N` the sum stops at `t = N`.
pub fn contraction_estimate(
    traj: &Trajectory,
    alpha: f64,
    target_policy: &Policy,
    behaviour: &Policy,
    gamma: f64,
    truncation: Option<usize>,
) -> Result<f64> {
    let rule = UpdateRule::retrace(alpha);
    rule.validate()?;
    let len = traj.len();
    let last = match truncation {
        Some(n) if traj.terminated => n,
        Some(n) => n.min(len.saturating_sub(1)),
        None => len.saturating_sub(1),
    };
    let mut sum = 0.0;
    let mut product = 1.0;
    let mut discount = 1.0;
    for t in 0..=last {
        if t >= 1 && t < len {
            let step = &traj.steps[t];
            let mu = behaviour.prob(step.state, step.action);
            if mu == 0.0 {
                return Err(Error::ZeroBehaviourProbability {
                    state: step.state,
                    action: step.action,
                });
            }
            product *= rule.trace_coefficient(target_policy.prob(step.state, step.action), mu);
        }
        sum += discount * product;
        discount *= gamma;
    }
    if truncation.is_none() {
        sum += product * discount / (1.0 - gamma);
    }
    Ok(1.0 - (1.0 - gamma) * sum)
}

/// As [`contraction_estimate`] without truncation, but a trajectory cut
/// before termination is closed with the exact expected tail: `sums` holds
/// `sum_t gamma^t prod c` per pair, i.e. `(1 - C(x, a)) / (1 - gamma)`.
pub fn contraction_estimate_with_tail(
    traj: &Trajectory,
    alpha: f64,
    target_policy: &Policy,
    behaviour: &Policy,
    gamma: f64,
    sums: &QTable,
) -> Result<f64> {
    let base = contraction_estimate(traj, alpha, target_policy, behaviour, gamma, None)?;
    if traj.terminated {
        return Ok(base);
    }
    // undo the frozen closure and replace it with the exact continuation
    let rule = UpdateRule::retrace(alpha);
    let len = traj.len();
    let product: f64 = traj.steps[1..]
        .iter()
        .map(|s| rule.trace_coefficient(target_policy.prob(s.state, s.action), behaviour.prob(s.state, s.action)))
        .product();
    let discount = gamma.powi(len as i32);
    let x = traj.last_state;
    let continuation: f64 = (0..sums.n_actions())
        .map(|a| {
            let c = rule.trace_coefficient(target_policy.prob(x, a), behaviour.prob(x, a));
            behaviour.prob(x, a) * c * sums.get(x, a)
        })
        .sum();
    let frozen = product * discount / (1.0 - gamma);
    Ok(base + (1.0 - gamma) * (frozen - product * discount * continuation))
}

/// Per-pair `sum_t gamma^t prod c` for alpha-Retrace, from the exact profile.
pub fn trace_sums(mdp: &Mdp, alpha: f64, target_policy: &Policy, behaviour: &Policy) -> Result<QTable> {
    let op = build_operator(mdp, UpdateRule::retrace(alpha), target_policy, behaviour)?;
    let g = mdp.gamma();
    let v = op.row_rates().iter().map(|c| (1.0 - c) / (1.0 - g)).collect();
    QTable::from_vec(mdp.n_states(), mdp.n_actions(), v)
}

/// Exact `C_nu(alpha) = sum nu(x, a) C(alpha | x, a)`.
pub fn exact_c_nu(mdp: &Mdp, target_policy: &Policy, behaviour: &Policy, alpha: f64, nu: &StateActionDist) -> Result<f64> {
    let op = build_operator(mdp, UpdateRule::retrace(alpha), target_policy, behaviour)?;
    Ok(contraction_profile(&op, nu).nu_avg)
}

/// Bisection for `alpha` with `C_nu(alpha) = rate`, returning 0 or 1 when the
/// rate lies outside `[C_nu(0), C_nu(1)]`.
pub fn solve_alpha_for_rate(
    mdp: &Mdp,
    target_policy: &Policy,
    behaviour: &Policy,
    nu: &StateActionDist,
    rate: f64,
    tol: f64,
) -> Result<f64> {
    let c = |alpha| exact_c_nu(mdp, target_policy, behaviour, alpha, nu);
    if rate >= c(1.0)? {
        return Ok(1.0);
    }
    if rate <= c(0.0)? {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if c(mid)? < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CtraceConfig {
    pub target_rate: f64,
    pub phi0: f64,
    pub schedule: StepSchedule,
    /// Step sizes for the Q updates; `None` reuses `schedule`.
    pub q_schedule: Option<StepSchedule>,
    pub n_episodes: u64,
    /// Cap on episode length.
    pub horizon: usize,
    pub truncation: Option<usize>,
    pub log_every: u64,
    pub rng: RngStream,
    pub reward_noise: RewardNoise,
}

impl Default for CtraceConfig {
    fn default() -> Self {
        Self {
            target_rate: 0.5,
            phi0: 0.0,
            schedule: StepSchedule::default(),
            q_schedule: None,
            n_episodes: 10_000,
            horizon: 10_000,
            truncation: None,
            log_every: 100,
            rng: RngStream::from_seed(0),
            reward_noise: RewardNoise::None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtraceLogRow {
    pub episode: u64,
    pub phi: f64,
    pub alpha: f64,
    pub c_hat: f64,
    pub exact_c_nu: f64,
    pub q_error_inf: f64,
}

#[derive(Clone, Debug)]
pub struct CtraceRun {
    pub log: Vec<CtraceLogRow>,
    pub state: CtraceState,
    pub q: QTable,
    /// Offline root of `C_nu(alpha) = target_rate`.
    pub alpha_star: f64,
    /// `Q` of the mixture target at `alpha_star`.
    pub q_star: QTable,
    pub final_c_nu: f64,
    pub final_q_error_inf: f64,
    pub env_steps: u64,
}

impl CtraceRun {
    pub fn final_alpha(&self) -> f64 {
        self.state.alpha()
    }

    pub fn rate_gap(&self) -> f64 {
        (self.final_c_nu - self.state.target_rate).abs()
    }

    pub fn relative_q_error(&self) -> f64 {
        self.final_q_error_inf / self.q_star.linf_norm()
    }
}

/// Interleaves C-trace updates of `phi` with alpha-Retrace evaluation.
///
/// Episode `k` starts from `nu = initial_dist x behaviour`; its contraction
/// estimate at `alpha(phi_k)` drives one Robbins-Monro step, and the
/// alpha(phi_k)-Retrace targets of every visited pair are applied with step
/// size `eps_k`. Row `k` of the log is written every `log_every` episodes and
/// after the last one.
pub fn ctrace_eval_loop(mdp: &Mdp, target_policy: &Policy, behaviour: &Policy, cfg: &CtraceConfig) -> Result<CtraceRun> {
    mdp.check_policy(target_policy)?;
    mdp.check_policy(behaviour)?;
    if cfg.horizon == 0 || cfg.log_every == 0 {
        return Err(Error::OutOfRange {
            name: "horizon/log_every",
            value: 0.0,
            range: ">= 1",
        });
    }
    let gamma = mdp.gamma();
    let nu = StateActionDist::initial_pairs(mdp, behaviour);
    let c_one = exact_c_nu(mdp, target_policy, behaviour, 1.0, &nu)?;
    if c_one < cfg.target_rate {
        log::warn!("target rate {} exceeds C_nu(1) = {c_one}; alpha will drift to 1", cfg.target_rate);
    }
    let alpha_star = solve_alpha_for_rate(mdp, target_policy, behaviour, &nu, cfg.target_rate, 1e-12)?;
    let q_star = exact_q(mdp, &mixture(target_policy, behaviour, alpha_star)?)?;

    let mut state = CtraceState::new(cfg.phi0, cfg.target_rate, cfg.schedule, gamma)?;
    state.truncation = cfg.truncation;
    let q_schedule = cfg.q_schedule.unwrap_or(cfg.schedule);
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let mut rng = cfg.rng.rng();
    let mut log = Vec::new();
    let mut env_steps = 0;

    for k in 0..cfg.n_episodes {
        let traj = sample_trajectory_with(mdp, behaviour, Start::Initial, cfg.horizon, cfg.reward_noise, &mut rng);
        env_steps += traj.len() as u64;
        let alpha = state.alpha();
        let c_hat = contraction_estimate(&traj, alpha, target_policy, behaviour, gamma, cfg.truncation)?;
        state = rm_step(state, c_hat);

        let eval = TargetEvaluator::new(UpdateRule::retrace(alpha), target_policy, behaviour, gamma)?;
        let targets = eval.all_targets(&q, &traj, None)?;
        let lr = q_schedule.at(k);
        for (step, t) in traj.steps.iter().zip(targets) {
            let t = t.expect("trace targets exist at every offset");
            let old = q.get(step.state, step.action);
            q.set(step.state, step.action, old + lr * (t - old));
        }

        if (k + 1) % cfg.log_every == 0 || k + 1 == cfg.n_episodes {
            log.push(CtraceLogRow {
                episode: k + 1,
                phi: state.phi,
                alpha: state.alpha(),
                c_hat,
                exact_c_nu: exact_c_nu(mdp, target_policy, behaviour, state.alpha(), &nu)?,
                q_error_inf: q.linf_distance(&q_star),
            });
        }
    }
    if state.clamp_events > 0 {
        log::warn!("phi was clamped {} times", state.clamp_events);
    }
    let final_c_nu = exact_c_nu(mdp, target_policy, behaviour, state.alpha(), &nu)?;
    let final_q_error_inf = q.linf_distance(&q_star);
    Ok(CtraceRun {
        log,
        state,
        q,
        alpha_star,
        q_star,
        final_c_nu,
        final_q_error_inf,
        env_steps,
    })
}
