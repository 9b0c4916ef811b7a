//! Run configuration: a versioned TOML document. Unknown keys are rejected
//! and semantic errors point at the offending line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::specs::{EnvSpec, EvalSpec, PolicySpec};
use tradeoff_core::sampler::{TailPolicy, UpdateMode};
use tradeoff_core::UpdateRule;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}:{line}:{column}: {message}")]
    Invalid {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {key}: {message}")]
    InvalidDefault {
        path: String,
        key: &'static str,
        message: String,
    },
}

type Sp<T> = Spanned<T>;

fn sp<T>(v: T) -> Sp<T> {
    Spanned::new(0..0, v)
}

macro_rules! default_fn {
    ($name:ident, $t:ty, $v:expr) => {
        fn $name() -> Sp<$t> {
            sp($v)
        }
    };
}

default_fn!(d_seed, u64, 0);
default_fn!(d_seeds, usize, 1);
default_fn!(d_empty, Vec<f64>, Vec::new());
default_fn!(d_false, bool, false);
default_fn!(d_env_kind, String, "dirichlet".into());
default_fn!(d_n_states, usize, 5);
default_fn!(d_n_actions, usize, 3);
default_fn!(d_branching, usize, 5);
default_fn!(d_left_reward, f64, 0.0);
default_fn!(d_policy, String, "dirichlet".into());
default_fn!(d_n_traj, usize, 5000);
default_fn!(d_horizon, usize, 100);
default_fn!(d_tail, String, "absorb".into());
default_fn!(d_lambda, f64, 1.0);
default_fn!(d_rule, String, "retrace(1)".into());
default_fn!(d_lr, f64, 0.1);
default_fn!(d_n_steps, u64, 100_000);
default_fn!(d_eval_every, u64, 1000);
default_fn!(d_segment, usize, 100);
default_fn!(d_mode, String, "every-offset".into());
default_fn!(d_rounds, usize, 200);
default_fn!(d_steps_round, u64, 100);
default_fn!(d_behaviour_schedule, String, "uniform".into());
default_fn!(d_episodes, u64, 10_000);
default_fn!(d_step_scale, f64, 0.5);
default_fn!(d_step_power, f64, 0.7);
default_fn!(d_ct_horizon, usize, 10_000);
default_fn!(d_log_every, u64, 100);
default_fn!(d_phi0, f64, 0.0);
default_fn!(d_bootstrap, usize, 200);

fn d_uncorrected() -> Sp<Vec<usize>> {
    sp((1..=20).collect())
}
fn d_importance() -> Sp<Vec<usize>> {
    sp(vec![1, 2, 3])
}
fn d_alpha_grid() -> Sp<Vec<f64>> {
    sp(alpha_grid())
}
fn d_eval_rules() -> Vec<Sp<String>> {
    vec![sp("retrace(0)".into()), sp("retrace(1)".into())]
}
fn d_control_evals() -> Vec<Sp<String>> {
    vec![sp("retrace(0.25)".into()), sp("retrace(1)".into())]
}

/// `0, 0.05, ..., 1`, built from integers so every entry is the nearest
/// double to its decimal.
pub fn alpha_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: Sp<u32>,
    #[serde(default = "d_seed")]
    pub seed: Sp<u64>,
    /// Number of seeded instances; instance `i` uses seed `seed + i`.
    #[serde(default = "d_seeds")]
    pub seeds: Sp<usize>,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub policies: PolicySection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
    #[serde(default)]
    pub eval_curve: EvalCurveSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub ctrace: CtraceSection,
    #[serde(default)]
    pub summary: SummarySection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    /// `dirichlet`, `garnet`, `chain` or `file`.
    #[serde(default = "d_env_kind")]
    pub kind: Sp<String>,
    #[serde(default = "d_n_states")]
    pub n_states: Sp<usize>,
    #[serde(default = "d_n_actions")]
    pub n_actions: Sp<usize>,
    #[serde(default = "d_branching")]
    pub branching: Sp<usize>,
    #[serde(default = "d_left_reward")]
    pub left_reward: Sp<f64>,
    #[serde(default)]
    pub gamma: Option<Sp<f64>>,
    /// MDP document for `kind = "file"`, relative to the config file.
    #[serde(default)]
    pub path: Option<Sp<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    #[serde(default = "d_policy")]
    pub target: Sp<String>,
    #[serde(default = "d_policy")]
    pub behaviour: Sp<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default = "d_n_traj")]
    pub n_trajectories: Sp<usize>,
    #[serde(default = "d_horizon")]
    pub horizon: Sp<usize>,
    /// `absorb` or `analytic`.
    #[serde(default = "d_tail")]
    pub tail: Sp<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "d_uncorrected")]
    pub uncorrected: Sp<Vec<usize>>,
    #[serde(default = "d_importance")]
    pub importance: Sp<Vec<usize>>,
    #[serde(default = "d_alpha_grid")]
    pub retrace: Sp<Vec<f64>>,
    #[serde(default = "d_empty")]
    pub treebackup: Sp<Vec<f64>>,
    #[serde(default = "d_lambda")]
    pub lambda: Sp<f64>,
    /// Wider grids: uncorrected 1..=50, importance 1..=4, TreeBackup.
    #[serde(default = "d_false")]
    pub extended: Sp<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    #[serde(default = "d_rule")]
    pub rule: Sp<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCurveSection {
    #[serde(default = "d_eval_rules")]
    pub rules: Vec<Sp<String>>,
    #[serde(default = "d_lr")]
    pub learning_rate: Sp<f64>,
    #[serde(default = "d_n_steps")]
    pub n_steps: Sp<u64>,
    #[serde(default = "d_eval_every")]
    pub eval_every: Sp<u64>,
    #[serde(default = "d_segment")]
    pub segment_len: Sp<usize>,
    /// `every-offset` or `first-step`.
    #[serde(default = "d_mode")]
    pub mode: Sp<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    /// Rules, `exact(alpha)` or `ctrace(rate)`.
    #[serde(default = "d_control_evals")]
    pub evaluations: Vec<Sp<String>>,
    #[serde(default = "d_rounds")]
    pub rounds: Sp<usize>,
    #[serde(default = "d_steps_round")]
    pub steps_per_round: Sp<u64>,
    /// `uniform` or `greedy-epsilon(eps)`.
    #[serde(default = "d_behaviour_schedule")]
    pub behaviour: Sp<String>,
    #[serde(default = "d_lr")]
    pub learning_rate: Sp<f64>,
    #[serde(default = "d_segment")]
    pub segment_len: Sp<usize>,
    #[serde(default = "d_mode")]
    pub mode: Sp<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtraceSection {
    /// Target contraction rate. Exactly one of this and `target_alpha`.
    #[serde(default)]
    pub target_rate: Option<Sp<f64>>,
    /// Sets the target rate to the exact `C_nu` at this `alpha`.
    #[serde(default)]
    pub target_alpha: Option<Sp<f64>>,
    #[serde(default = "d_episodes")]
    pub n_episodes: Sp<u64>,
    #[serde(default = "d_step_scale")]
    pub step_scale: Sp<f64>,
    #[serde(default = "d_step_power")]
    pub step_power: Sp<f64>,
    /// Separate Q step sizes `q_step_scale / (k + 1)^step_power`.
    #[serde(default)]
    pub q_step_scale: Option<Sp<f64>>,
    #[serde(default = "d_ct_horizon")]
    pub horizon: Sp<usize>,
    #[serde(default)]
    pub truncation: Option<Sp<usize>>,
    #[serde(default = "d_log_every")]
    pub log_every: Sp<u64>,
    #[serde(default = "d_phi0")]
    pub phi0: Sp<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarySection {
    #[serde(default = "d_bootstrap")]
    pub bootstrap: Sp<usize>,
}

macro_rules! section_default {
    ($t:ty { $($f:ident: $d:expr),* $(,)? }) => {
        impl Default for $t {
            fn default() -> Self {
                Self { $($f: $d),* }
            }
        }
    };
}

section_default!(EnvSection {
    kind: d_env_kind(),
    n_states: d_n_states(),
    n_actions: d_n_actions(),
    branching: d_branching(),
    left_reward: d_left_reward(),
    gamma: None,
    path: None,
});
section_default!(PolicySection {
    target: d_policy(),
    behaviour: d_policy(),
});
section_default!(McSection {
    n_trajectories: d_n_traj(),
    horizon: d_horizon(),
    tail: d_tail(),
});
section_default!(SweepSection {
    uncorrected: d_uncorrected(),
    importance: d_importance(),
    retrace: d_alpha_grid(),
    treebackup: sp(Vec::new()),
    lambda: d_lambda(),
    extended: sp(false),
});
section_default!(AnalyzeSection { rule: d_rule() });
section_default!(EvalCurveSection {
    rules: d_eval_rules(),
    learning_rate: d_lr(),
    n_steps: d_n_steps(),
    eval_every: d_eval_every(),
    segment_len: d_segment(),
    mode: d_mode(),
});
section_default!(ControlSection {
    evaluations: d_control_evals(),
    rounds: d_rounds(),
    steps_per_round: d_steps_round(),
    behaviour: d_behaviour_schedule(),
    learning_rate: d_lr(),
    segment_len: d_segment(),
    mode: d_mode(),
});
section_default!(CtraceSection {
    target_rate: None,
    target_alpha: None,
    n_episodes: d_episodes(),
    step_scale: d_step_scale(),
    step_power: d_step_power(),
    q_step_scale: None,
    horizon: d_ct_horizon(),
    truncation: None,
    log_every: d_log_every(),
    phi0: d_phi0(),
});
section_default!(SummarySection {
    bootstrap: d_bootstrap(),
});

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: sp(CONFIG_VERSION),
            seed: sp(0),
            seeds: d_seeds(),
            env: EnvSection::default(),
            policies: PolicySection::default(),
            mc: McSection::default(),
            sweep: SweepSection::default(),
            analyze: AnalyzeSection::default(),
            eval_curve: EvalCurveSection::default(),
            control: ControlSection::default(),
            ctrace: CtraceSection::default(),
            summary: SummarySection::default(),
        }
    }
}

/// A parsed but unvalidated config, so command-line overrides can be applied
/// first.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub raw: RunConfig,
    text: String,
    shown: String,
    base_dir: PathBuf,
}

impl Loaded {
    pub fn override_seed(&mut self, seed: u64) {
        self.raw.seed = sp(seed);
    }

    pub fn override_extended(&mut self) {
        self.raw.sweep.extended = sp(true);
    }

    pub fn validate(self) -> Result<Validated, ConfigError> {
        self.raw.validate(&self.shown, &self.text, self.base_dir)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CtraceTarget {
    Rate(f64),
    AtAlpha(f64),
}

/// Configuration after parsing and validation.
#[derive(Debug, Clone)]
pub struct Validated {
    pub raw: RunConfig,
    pub base_dir: PathBuf,
    pub seed: u64,
    pub seeds: usize,
    pub env: EnvSpec,
    pub gamma: Option<f64>,
    pub target: PolicySpec,
    pub behaviour: PolicySpec,
    pub n_trajectories: usize,
    pub horizon: usize,
    pub tail: TailPolicy,
    pub sweep_rules: Vec<UpdateRule>,
    pub analyze_rule: UpdateRule,
    pub eval_rules: Vec<UpdateRule>,
    pub eval_mode: UpdateMode,
    pub control_evals: Vec<EvalSpec>,
    pub control_mode: UpdateMode,
    pub control_epsilon: Option<f64>,
    pub ctrace_target: CtraceTarget,
    pub bootstrap: usize,
}

/// Turns spans into `line:column` diagnostics.
struct Locator<'a> {
    path: &'a str,
    text: &'a str,
}

impl Locator<'_> {
    fn err<T>(&self, key: &'static str, spanned: &Sp<T>, message: impl Into<String>) -> ConfigError {
        let span = spanned.span();
        if span.start == 0 && span.end == 0 {
            return ConfigError::InvalidDefault {
                path: self.path.to_string(),
                key,
                message: message.into(),
            };
        }
        let before = &self.text[..span.start.min(self.text.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        ConfigError::Invalid {
            path: self.path.to_string(),
            line,
            column,
            message: format!("{key}: {}", message.into()),
        }
    }

    fn positive<T: Copy + PartialOrd + Default + std::fmt::Display>(&self, key: &'static str, v: &Sp<T>) -> Result<T, ConfigError> {
        let x = *v.get_ref();
        if x > T::default() {
            Ok(x)
        } else {
            Err(self.err(key, v, format!("must be positive (got {x})")))
        }
    }

    fn unit<T>(&self, key: &'static str, v: &Sp<f64>, _: T) -> Result<f64, ConfigError> {
        let x = *v.get_ref();
        if (0.0..=1.0).contains(&x) {
            Ok(x)
        } else {
            Err(self.err(key, v, format!("must lie in [0, 1] (got {x})")))
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &'static str, v: &Sp<String>) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        v.get_ref().parse().map_err(|e: T::Err| self.err(key, v, e.to_string()))
    }
}

fn parse_mode(loc: &Locator<'_>, key: &'static str, v: &Sp<String>) -> Result<UpdateMode, ConfigError> {
    match v.get_ref().as_str() {
        "every-offset" => Ok(UpdateMode::EveryOffset),
        "first-step" => Ok(UpdateMode::FirstStepOnly),
        other => Err(loc.err(key, v, format!("expected \"every-offset\" or \"first-step\", got {other:?}"))),
    }
}

impl RunConfig {
    /// Reads a config file without validating it; `None` gives the defaults.
    pub fn read(path: Option<&Path>) -> Result<Loaded, ConfigError> {
        match path {
            None => Ok(Loaded {
                raw: RunConfig::default(),
                text: String::new(),
                shown: "<defaults>".into(),
                base_dir: PathBuf::from("."),
            }),
            Some(p) => {
                let shown = p.display().to_string();
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: shown.clone(),
                    source,
                })?;
                let raw = toml::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: shown.clone(),
                    message: e.to_string(),
                })?;
                let base_dir = p.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
                Ok(Loaded {
                    raw,
                    text,
                    shown,
                    base_dir,
                })
            }
        }
    }

    /// Canonical TOML of the effective configuration; hashed into manifests.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn parse_str(text: &str, path: &str, base_dir: PathBuf) -> Result<Validated, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate(path, text, base_dir)
    }

    pub fn validate(self, path: &str, text: &str, base_dir: PathBuf) -> Result<Validated, ConfigError> {
        let loc = Locator { path, text };
        if *self.version.get_ref() != CONFIG_VERSION {
            return Err(loc.err(
                "version",
                &self.version,
                format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version.get_ref()),
            ));
        }
        let seeds = loc.positive("seeds", &self.seeds)?;

        let e = &self.env;
        let env = match e.kind.get_ref().as_str() {
            "dirichlet" => EnvSpec::Dirichlet {
                n_states: loc.positive("env.n_states", &e.n_states)?,
                n_actions: loc.positive("env.n_actions", &e.n_actions)?,
            },
            "garnet" => {
                let n_states = loc.positive("env.n_states", &e.n_states)?;
                let branching = loc.positive("env.branching", &e.branching)?;
                if branching > n_states {
                    return Err(loc.err("env.branching", &e.branching, "exceeds env.n_states"));
                }
                EnvSpec::Garnet {
                    n_states,
                    n_actions: loc.positive("env.n_actions", &e.n_actions)?,
                    branching,
                }
            }
            "chain" => {
                let n_states = *e.n_states.get_ref();
                if n_states < 2 {
                    return Err(loc.err("env.n_states", &e.n_states, "a chain needs at least 2 states"));
                }
                EnvSpec::Chain {
                    n_states,
                    left_reward: *e.left_reward.get_ref(),
                }
            }
            "file" => {
                let p = e
                    .path
                    .as_ref()
                    .ok_or_else(|| loc.err("env.path", &e.kind, "kind = \"file\" needs env.path"))?;
                let full = base_dir.join(p.get_ref());
                if !full.is_file() {
                    return Err(loc.err("env.path", p, format!("no such file: {}", full.display())));
                }
                EnvSpec::File(full)
            }
            other => {
                return Err(loc.err(
                    "env.kind",
                    &e.kind,
                    format!("unknown environment {other:?} (expected dirichlet, garnet, chain or file)"),
                ))
            }
        };
        let gamma = match &e.gamma {
            Some(g) if !(0.0..1.0).contains(g.get_ref()) => {
                return Err(loc.err("env.gamma", g, "must lie in [0, 1)"));
            }
            Some(g) => Some(*g.get_ref()),
            None => None,
        };

        let target = loc.parse("policies.target", &self.policies.target)?;
        let behaviour = loc.parse("policies.behaviour", &self.policies.behaviour)?;

        let n_trajectories = loc.positive("mc.n_trajectories", &self.mc.n_trajectories)?;
        if n_trajectories < 2 {
            return Err(loc.err("mc.n_trajectories", &self.mc.n_trajectories, "needs at least 2 trajectories"));
        }
        let horizon = loc.positive("mc.horizon", &self.mc.horizon)?;
        let tail = match self.mc.tail.get_ref().as_str() {
            "absorb" => TailPolicy::Absorb,
            "analytic" => TailPolicy::AnalyticTail,
            other => {
                return Err(loc.err("mc.tail", &self.mc.tail, format!("expected \"absorb\" or \"analytic\", got {other:?}")));
            }
        };

        let sweep_rules = self.sweep_rules(&loc, horizon)?;
        let analyze_rule = loc.parse("analyze.rule", &self.analyze.rule)?;

        let ec = &self.eval_curve;
        let eval_rules = ec
            .rules
            .iter()
            .map(|r| loc.parse("eval_curve.rules", r))
            .collect::<Result<Vec<UpdateRule>, _>>()?;
        if eval_rules.is_empty() {
            return Err(ConfigError::InvalidDefault {
                path: path.to_string(),
                key: "eval_curve.rules",
                message: "must not be empty".into(),
            });
        }
        loc.unit("eval_curve.learning_rate", &ec.learning_rate, ())?;
        loc.positive("eval_curve.n_steps", &ec.n_steps)?;
        loc.positive("eval_curve.eval_every", &ec.eval_every)?;
        loc.positive("eval_curve.segment_len", &ec.segment_len)?;
        let eval_mode = parse_mode(&loc, "eval_curve.mode", &ec.mode)?;

        let c = &self.control;
        let control_evals = c
            .evaluations
            .iter()
            .map(|r| loc.parse("control.evaluations", r))
            .collect::<Result<Vec<EvalSpec>, _>>()?;
        if control_evals.is_empty() {
            return Err(ConfigError::InvalidDefault {
                path: path.to_string(),
                key: "control.evaluations",
                message: "must not be empty".into(),
            });
        }
        loc.positive("control.steps_per_round", &c.steps_per_round)?;
        loc.unit("control.learning_rate", &c.learning_rate, ())?;
        loc.positive("control.segment_len", &c.segment_len)?;
        let control_mode = parse_mode(&loc, "control.mode", &c.mode)?;
        let control_epsilon = parse_behaviour_schedule(c.behaviour.get_ref())
            .map_err(|m| loc.err("control.behaviour", &c.behaviour, m))?;

        let t = &self.ctrace;
        let ctrace_target = match (&t.target_rate, &t.target_alpha) {
            (Some(r), None) => CtraceTarget::Rate(loc.unit("ctrace.target_rate", r, ())?),
            (None, Some(a)) => CtraceTarget::AtAlpha(loc.unit("ctrace.target_alpha", a, ())?),
            (None, None) => CtraceTarget::AtAlpha(0.5),
            (Some(r), Some(_)) => {
                return Err(loc.err("ctrace.target_rate", r, "set only one of target_rate and target_alpha"));
            }
        };
        loc.positive("ctrace.n_episodes", &t.n_episodes)?;
        loc.positive("ctrace.step_scale", &t.step_scale)?;
        loc.positive("ctrace.horizon", &t.horizon)?;
        loc.positive("ctrace.log_every", &t.log_every)?;
        if let Some(q) = &t.q_step_scale {
            loc.positive("ctrace.q_step_scale", q)?;
        }
        let bootstrap = loc.positive("summary.bootstrap", &self.summary.bootstrap)?;

        Ok(Validated {
            seed: *self.seed.get_ref(),
            seeds,
            env,
            gamma,
            target,
            behaviour,
            n_trajectories,
            horizon,
            tail,
            sweep_rules,
            analyze_rule,
            eval_rules,
            eval_mode,
            control_evals,
            control_mode,
            control_epsilon,
            ctrace_target,
            bootstrap,
            base_dir,
            raw: self,
        })
    }

    fn sweep_rules(&self, loc: &Locator<'_>, horizon: usize) -> Result<Vec<UpdateRule>, ConfigError> {
        let s = &self.sweep;
        let extended = *s.extended.get_ref();
        let lambda = *s.lambda.get_ref();
        if !(0.0..=1.0).contains(&lambda) {
            return Err(loc.err("sweep.lambda", &s.lambda, "must lie in [0, 1]"));
        }
        let uncorrected: Vec<usize> = if extended { (1..=50).collect() } else { s.uncorrected.get_ref().clone() };
        let importance: Vec<usize> = if extended { (1..=4).collect() } else { s.importance.get_ref().clone() };
        let treebackup: Vec<f64> = if extended && s.treebackup.get_ref().is_empty() {
            alpha_grid()
        } else {
            s.treebackup.get_ref().clone()
        };
        for (key, list) in [("sweep.uncorrected", &s.uncorrected), ("sweep.importance", &s.importance)] {
            if list.get_ref().iter().any(|&n| n == 0 || n > horizon) {
                return Err(loc.err(key, list, format!("every n must lie in 1..={horizon} (mc.horizon)")));
            }
        }
        for (key, list) in [("sweep.retrace", &s.retrace), ("sweep.treebackup", &s.treebackup)] {
            if list.get_ref().iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(loc.err(key, list, "every alpha must lie in [0, 1]"));
            }
        }
        let mut rules: Vec<UpdateRule> = uncorrected.into_iter().map(UpdateRule::uncorrected).collect();
        rules.extend(importance.into_iter().map(UpdateRule::importance));
        rules.extend(s.retrace.get_ref().iter().map(|&a| UpdateRule::retrace(a).with_lambda(lambda)));
        rules.extend(treebackup.into_iter().map(|a| UpdateRule::tree_backup(a).with_lambda(lambda)));
        if rules.is_empty() {
            return Err(loc.err("sweep", &s.uncorrected, "the rule grid is empty"));
        }
        Ok(rules)
    }
}

/// `uniform` or `greedy-epsilon(eps)`.
fn parse_behaviour_schedule(s: &str) -> Result<Option<f64>, String> {
    let s = s.trim();
    if s == "uniform" {
        return Ok(None);
    }
    let eps = s
        .strip_prefix("greedy-epsilon(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| format!("expected \"uniform\" or \"greedy-epsilon(eps)\", got {s:?}"))?;
    let eps: f64 = eps.trim().parse().map_err(|_| format!("bad epsilon in {s:?}"))?;
    if !(0.0..=1.0).contains(&eps) {
        return Err(format!("epsilon {eps} outside [0, 1]"));
    }
    Ok(Some(eps))
}
