//! Textual constructors for environments, policies and control evaluations.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use tradeoff_core::dp::{optimal_policy, VALUE_ITERATION_TOL};
use tradeoff_core::envs::{gen_chain_with, gen_dirichlet_uniform, gen_garnet, ChainOptions};
use tradeoff_core::{Evaluation, Mdp, Policy, RngStream, StepSchedule, UpdateRule};

#[derive(Clone, Debug, PartialEq)]
pub enum EnvSpec {
    Dirichlet { n_states: usize, n_actions: usize },
    Garnet { n_states: usize, n_actions: usize, branching: usize },
    Chain { n_states: usize, left_reward: f64 },
    File(PathBuf),
}

impl EnvSpec {
    /// Builds the instance for one seed. `gamma` overrides the default
    /// discount; file MDPs keep their own unless overridden.
    pub fn build(&self, stream: RngStream, gamma: Option<f64>) -> anyhow::Result<Mdp> {
        let mdp = match *self {
            EnvSpec::Dirichlet { n_states, n_actions } => gen_dirichlet_uniform(n_states, n_actions, stream)?,
            EnvSpec::Garnet {
                n_states,
                n_actions,
                branching,
            } => gen_garnet(n_states, n_actions, branching, stream)?,
            EnvSpec::Chain { n_states, left_reward } => gen_chain_with(
                n_states,
                ChainOptions {
                    left_reward,
                    ..Default::default()
                },
            )?,
            EnvSpec::File(ref path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
                Mdp::from_json(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?
            }
        };
        Ok(match gamma {
            Some(g) => mdp.with_gamma(g)?,
            None => mdp,
        })
    }

    /// Stable identifier of the instance built for `seed`.
    pub fn id(&self, seed: u64) -> String {
        match self {
            EnvSpec::Dirichlet { n_states, n_actions } => format!("dirichlet-{n_states}x{n_actions}-s{seed}"),
            EnvSpec::Garnet {
                n_states,
                n_actions,
                branching,
            } => format!("garnet-{n_states}x{n_actions}b{branching}-s{seed}"),
            EnvSpec::Chain { n_states, .. } => format!("chain-{n_states}"),
            EnvSpec::File(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicySpec {
    Uniform,
    /// Flat-Dirichlet rows; `Some(seed)` pins the draw across instances.
    Dirichlet(Option<u64>),
    Optimal,
    /// Optimal policy with `epsilon` of the uniform policy mixed in.
    EpsilonGreedy(f64),
}

impl PolicySpec {
    pub fn build(&self, mdp: &Mdp, stream: RngStream) -> anyhow::Result<Policy> {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        Ok(match *self {
            PolicySpec::Uniform => Policy::uniform(ns, na),
            PolicySpec::Dirichlet(None) => Policy::dirichlet(ns, na, stream),
            PolicySpec::Dirichlet(Some(seed)) => Policy::dirichlet(ns, na, RngStream::from_seed(seed)),
            PolicySpec::Optimal => optimal_policy(mdp, VALUE_ITERATION_TOL)?,
            PolicySpec::EpsilonGreedy(eps) => optimal_policy(mdp, VALUE_ITERATION_TOL)?.epsilon_soft(eps)?,
        })
    }
}

fn call<'a>(s: &'a str, name: &str) -> Option<&'a str> {
    s.strip_prefix(name)?.trim_start().strip_prefix('(')?.strip_suffix(')').map(str::trim)
}

impl FromStr for PolicySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let bad = || format!("unknown policy {s:?} (expected uniform, dirichlet, dirichlet(seed), optimal or epsilon-greedy(eps))");
        match s {
            "uniform" => return Ok(PolicySpec::Uniform),
            "dirichlet" => return Ok(PolicySpec::Dirichlet(None)),
            "optimal" => return Ok(PolicySpec::Optimal),
            _ => {}
        }
        if let Some(arg) = call(s, "dirichlet") {
            return arg.parse().map(|n| PolicySpec::Dirichlet(Some(n))).map_err(|_| bad());
        }
        if let Some(arg) = call(s, "epsilon-greedy") {
            let eps: f64 = arg.parse().map_err(|_| bad())?;
            if !(0.0..=1.0).contains(&eps) {
                return Err(format!("epsilon {eps} outside [0, 1]"));
            }
            return Ok(PolicySpec::EpsilonGreedy(eps));
        }
        Err(bad())
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Uniform => f.write_str("uniform"),
            PolicySpec::Dirichlet(None) => f.write_str("dirichlet"),
            PolicySpec::Dirichlet(Some(n)) => write!(f, "dirichlet({n})"),
            PolicySpec::Optimal => f.write_str("optimal"),
            PolicySpec::EpsilonGreedy(e) => write!(f, "epsilon-greedy({e})"),
        }
    }
}

/// A control-loop evaluation: an update rule, `exact(alpha)` or
/// `ctrace(rate)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalSpec {
    Rule(UpdateRule),
    Exact(f64),
    Ctrace(f64),
}

impl EvalSpec {
    pub fn evaluation(&self, phi0: f64, schedule: StepSchedule) -> Evaluation {
        match *self {
            EvalSpec::Rule(r) => Evaluation::Sampled(r),
            EvalSpec::Exact(alpha) => Evaluation::Exact { alpha },
            EvalSpec::Ctrace(target_rate) => Evaluation::Ctrace {
                target_rate,
                phi0,
                schedule,
            },
        }
    }
}

impl FromStr for EvalSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let unit = |arg: &str, what: &str| -> Result<f64, String> {
            match arg.parse::<f64>() {
                Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
                _ => Err(format!("{what} in {s:?} must be a number in [0, 1]")),
            }
        };
        if let Some(arg) = call(s, "exact") {
            return unit(arg, "alpha").map(EvalSpec::Exact);
        }
        if let Some(arg) = call(s, "ctrace") {
            return unit(arg, "rate").map(EvalSpec::Ctrace);
        }
        s.parse().map(EvalSpec::Rule).map_err(|e: tradeoff_core::Error| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_specs_round_trip() {
        for text in ["uniform", "dirichlet", "dirichlet(7)", "optimal", "epsilon-greedy(0.1)"] {
            let p: PolicySpec = text.parse().unwrap();
            assert_eq!(p.to_string(), text);
        }
        assert!("greedy".parse::<PolicySpec>().is_err());
        assert!("epsilon-greedy(1.5)".parse::<PolicySpec>().is_err());
        assert!("dirichlet(-1)".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn eval_specs() {
        assert_eq!("exact(0.5)".parse::<EvalSpec>().unwrap(), EvalSpec::Exact(0.5));
        assert_eq!("ctrace(0.6)".parse::<EvalSpec>().unwrap(), EvalSpec::Ctrace(0.6));
        assert_eq!("retrace(1)".parse::<EvalSpec>().unwrap(), EvalSpec::Rule(UpdateRule::retrace(1.0)));
        assert!("exact(2)".parse::<EvalSpec>().is_err());
        assert!("q-learning".parse::<EvalSpec>().is_err());
    }

    #[test]
    fn pinned_dirichlet_ignores_the_instance_stream() {
        let mdp = gen_dirichlet_uniform(3, 2, RngStream::from_seed(1)).unwrap();
        let a = PolicySpec::Dirichlet(Some(4)).build(&mdp, RngStream::from_seed(1)).unwrap();
        let b = PolicySpec::Dirichlet(Some(4)).build(&mdp, RngStream::from_seed(2)).unwrap();
        assert_eq!(a, b);
        let c = PolicySpec::Dirichlet(None).build(&mdp, RngStream::from_seed(2)).unwrap();
        assert_ne!(a, c);
    }
}
