//! Subcommand pipelines.
//!
//! Instance `i` of a run uses seed `master + i` and the stream
//! `RngStream::from_seed(master + i)`, whose children feed the separate
//! consumers: 0 environment, 1 target policy, 2 behaviour policy, 3 Monte
//! Carlo variance, 4 TD evaluation, 5 control, 6 C-trace. Bootstrap draws use
//! child 7 of the master stream. Every grid point of an instance sees the same
//! streams, so rules are compared on common random numbers, and results never
//! depend on how many workers ran them.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use tradeoff_core::control::{policy_iteration, BehaviourSchedule, ControlPoint};
use tradeoff_core::ctrace::{ctrace_eval_loop, exact_c_nu, CtraceLogRow};
use tradeoff_core::dp::exact_q;
use tradeoff_core::operator::{build_operator, contraction_profile, fixed_point, tradeoff_point};
use tradeoff_core::sampler::{td_eval_loop, CurvePoint, RewardNoise, TdConfig};
use tradeoff_core::{
    ControlConfig, CtraceConfig, Mdp, McConfig, Policy, QTable, RngStream, StateActionDist, StepSchedule,
    TradeoffPoint, UpdateRule,
};

use crate::config::{CtraceTarget, Validated};
use crate::output::{fmt_f64, fmt_opt, OutDir};
use crate::stats::{bootstrap, Summary};

pub const ENV_STREAM: u64 = 0;
pub const TARGET_STREAM: u64 = 1;
pub const BEHAVIOUR_STREAM: u64 = 2;
pub const MC_STREAM: u64 = 3;
pub const TD_STREAM: u64 = 4;
pub const CONTROL_STREAM: u64 = 5;
pub const CTRACE_STREAM: u64 = 6;
pub const BOOTSTRAP_STREAM: u64 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenMdp,
    Analyze,
    Sweep,
    EvalCurve,
    Control,
    Ctrace,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::GenMdp,
        Command::Analyze,
        Command::Sweep,
        Command::EvalCurve,
        Command::Control,
        Command::Ctrace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenMdp => "gen-mdp",
            Command::Analyze => "analyze",
            Command::Sweep => "sweep",
            Command::EvalCurve => "eval-curve",
            Command::Control => "control",
            Command::Ctrace => "ctrace",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command {s:?}"))
    }
}

/// One seeded problem: MDP plus target and behaviour policies.
#[derive(Clone, Debug)]
pub struct Instance {
    pub seed: u64,
    pub stream: RngStream,
    pub mdp: Mdp,
    pub target: Policy,
    pub behaviour: Policy,
    pub mdp_id: String,
}

pub fn instance(cfg: &Validated, index: usize) -> anyhow::Result<Instance> {
    let seed = cfg.seed.wrapping_add(index as u64);
    let stream = RngStream::from_seed(seed);
    let mdp = cfg.env.build(stream.child(ENV_STREAM), cfg.gamma)?;
    let target = cfg.target.build(&mdp, stream.child(TARGET_STREAM))?;
    let behaviour = cfg.behaviour.build(&mdp, stream.child(BEHAVIOUR_STREAM))?;
    Ok(Instance {
        seed,
        stream,
        mdp_id: cfg.env.id(seed),
        mdp,
        target,
        behaviour,
    })
}

#[derive(Debug)]
pub struct RunReport {
    pub manifest: PathBuf,
    pub failed_seeds: Vec<u64>,
}

/// Runs `cmd` on the current rayon pool and writes its artifacts to `out`.
/// Seeds that fail are logged, skipped in summaries and listed in the
/// manifest and report.
pub fn run(cmd: Command, cfg: &Validated, out: &Path) -> anyhow::Result<RunReport> {
    let mut dir = OutDir::create(out)?;
    info!("{cmd}: {} seed(s) from {} into {}", cfg.seeds, cfg.seed, out.display());
    let seeds: Vec<u64> = (0..cfg.seeds).map(|i| cfg.seed.wrapping_add(i as u64)).collect();
    let results: Vec<anyhow::Result<()>> = match cmd {
        Command::GenMdp => gen_mdp(cfg, &mut dir)?,
        Command::Analyze => analyze(cfg, &mut dir)?,
        Command::Sweep => sweep(cfg, &mut dir)?,
        Command::EvalCurve => eval_curve(cfg, &mut dir)?,
        Command::Control => control(cfg, &mut dir)?,
        Command::Ctrace => ctrace(cfg, &mut dir)?,
    };
    let mut failed = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        if let Err(e) = r {
            warn!("seed {seed} failed: {e:#}");
            failed.push(*seed);
        }
    }
    let manifest = dir.finish(cmd.name(), &cfg.raw.canonical(), cfg.seed, cfg.seeds, &failed)?;
    Ok(RunReport {
        manifest,
        failed_seeds: failed,
    })
}

/// Runs `cmd` on a dedicated pool of `jobs` workers, or the global pool.
pub fn run_with_jobs(cmd: Command, cfg: &Validated, out: &Path, jobs: Option<usize>) -> anyhow::Result<RunReport> {
    match jobs {
        None => run(cmd, cfg, out),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            pool.install(|| run(cmd, cfg, out))
        }
    }
}

/// Builds every instance and maps `f` over them in parallel, keeping seed
/// order.
fn per_seed<T: Send>(
    cfg: &Validated,
    f: impl Fn(&Instance) -> anyhow::Result<T> + Sync,
) -> Vec<anyhow::Result<T>> {
    (0..cfg.seeds)
        .into_par_iter()
        .map(|i| instance(cfg, i).and_then(|inst| f(&inst)))
        .collect()
}

/// Like [`per_seed`] but with one job per (seed, item), so seeds with many
/// grid points still spread over all workers.
fn per_seed_item<I: Sync, T: Send>(
    cfg: &Validated,
    items: &[I],
    f: impl Fn(&Instance, usize, &I) -> anyhow::Result<T> + Sync,
) -> Vec<anyhow::Result<Vec<T>>> {
    let instances: Vec<anyhow::Result<Instance>> = (0..cfg.seeds).into_par_iter().map(|i| instance(cfg, i)).collect();
    let jobs: Vec<(usize, usize)> = (0..cfg.seeds).flat_map(|i| (0..items.len()).map(move |j| (i, j))).collect();
    let mut done: Vec<Option<anyhow::Result<T>>> = jobs
        .par_iter()
        .map(|&(i, j)| match &instances[i] {
            Ok(inst) => Some(f(inst, j, &items[j])),
            Err(_) => None,
        })
        .collect::<Vec<_>>();
    let mut out = Vec::with_capacity(cfg.seeds);
    let mut it = done.drain(..);
    for inst in instances {
        let chunk: Vec<Option<anyhow::Result<T>>> = it.by_ref().take(items.len()).collect();
        out.push(match inst {
            Err(e) => Err(e),
            Ok(_) => chunk.into_iter().map(|r| r.expect("job ran")).collect(),
        });
    }
    out
}

/// Applies `emit` to the successful seeds and strips the payloads.
fn emit_each<T>(
    cfg: &Validated,
    results: Vec<anyhow::Result<T>>,
    mut emit: impl FnMut(u64, &T) -> anyhow::Result<()>,
) -> anyhow::Result<(Vec<anyhow::Result<()>>, Vec<(u64, T)>)> {
    let mut status = Vec::with_capacity(results.len());
    let mut ok = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        let seed = cfg.seed.wrapping_add(i as u64);
        match r {
            Ok(v) => {
                emit(seed, &v)?;
                ok.push((seed, v));
                status.push(Ok(()));
            }
            Err(e) => status.push(Err(e)),
        }
    }
    Ok((status, ok))
}

fn boot(cfg: &Validated, group: u64, values: &[f64]) -> Summary {
    bootstrap(
        values,
        cfg.bootstrap,
        RngStream::from_seed(cfg.seed).child(BOOTSTRAP_STREAM).child(group),
    )
}

fn summary_cells(s: &Summary) -> [String; 5] {
    [
        fmt_f64(s.mean),
        fmt_f64(s.std_error),
        fmt_f64(s.q05),
        fmt_f64(s.q95),
        s.n.to_string(),
    ]
}

const SUMMARY_TAIL: [&str; 5] = ["mean", "std_error", "q05", "q95", "n_seeds"];

fn header(head: &[&'static str]) -> Vec<&'static str> {
    head.iter().chain(SUMMARY_TAIL.iter()).copied().collect()
}

fn gen_mdp(cfg: &Validated, dir: &mut OutDir) -> anyhow::Result<Vec<anyhow::Result<()>>> {
    let results = per_seed(cfg, |inst| Ok(inst.mdp.to_json()?));
    let (status, _) = emit_each(cfg, results, |seed, text| {
        let mut text = text.clone();
        text.push('\n');
        dir.write_bytes(&format!("mdp_seed{seed}.json"), text.as_bytes())?;
        Ok(())
    })?;
    Ok(status)
}

/// Exact analysis of one rule on one instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub seed: u64,
    pub mdp_id: String,
    pub rule: String,
    pub gamma: f64,
    pub target: String,
    pub behaviour: String,
    /// Per-pair contraction rates, indexed `[state][action]`.
    pub per_pair: Vec<Vec<f64>>,
    pub sup_rate: f64,
    /// Average over the initial pairs under the behaviour policy.
    pub nu_rate: f64,
    pub fixed_point: Vec<Vec<f64>>,
    pub q_pi: Vec<Vec<f64>>,
    pub bias_l2: f64,
    pub fixed_point_residual_inf: f64,
}

fn rows(q: &QTable) -> Vec<Vec<f64>> {
    (0..q.n_states()).map(|x| q.row(x).to_vec()).collect()
}

pub fn analysis(inst: &Instance, rule: UpdateRule, target: &str, behaviour: &str) -> anyhow::Result<AnalysisReport> {
    let op = build_operator(&inst.mdp, rule, &inst.target, &inst.behaviour)?;
    let nu = StateActionDist::initial_pairs(&inst.mdp, &inst.behaviour);
    let profile = contraction_profile(&op, &nu);
    let q_fix = fixed_point(&op)?;
    let q_pi = exact_q(&inst.mdp, &inst.target)?;
    let per_pair = QTable::from_vec(inst.mdp.n_states(), inst.mdp.n_actions(), profile.per_pair)?;
    Ok(AnalysisReport {
        seed: inst.seed,
        mdp_id: inst.mdp_id.clone(),
        rule: rule.to_string(),
        gamma: inst.mdp.gamma(),
        target: target.to_string(),
        behaviour: behaviour.to_string(),
        per_pair: rows(&per_pair),
        sup_rate: profile.sup_rate,
        nu_rate: profile.nu_avg,
        bias_l2: q_fix.l2_distance(&q_pi),
        fixed_point_residual_inf: op.apply(&q_fix).linf_distance(&q_fix),
        fixed_point: rows(&q_fix),
        q_pi: rows(&q_pi),
    })
}

fn analyze(cfg: &Validated, dir: &mut OutDir) -> anyhow::Result<Vec<anyhow::Result<()>>> {
    let (t, b) = (cfg.target.to_string(), cfg.behaviour.to_string());
    let results = per_seed(cfg, |inst| analysis(inst, cfg.analyze_rule, &t, &b));
    let (status, _) = emit_each(cfg, results, |seed, report| {
        dir.write_json(&format!("analysis_seed{seed}.json"), report)?;
        Ok(())
    })?;
    Ok(status)
}

pub const SWEEP_HEADER: [&str; 10] = [
    "rule",
    "n",
    "alpha",
    "lambda",
    "contraction_sup",
    "contraction_nu",
    "bias_l2",
    "root_variance",
    "seed",
    "mdp_id",
];

/// `n` for the n-step kinds, `alpha` and `lambda` for the trace kinds; the
/// unused cells stay empty.
fn rule_cells(rule: &UpdateRule) -> [String; 4] {
    let n_step = rule.kind.is_n_step();
    [
        rule.kind.name().to_string(),
        if n_step { rule.n.to_string() } else { String::new() },
        fmt_opt((!n_step).then_some(rule.alpha)),
        fmt_opt((!n_step).then_some(rule.lambda)),
    ]
}

fn sweep_row(p: &TradeoffPoint) -> Vec<String> {
    let mut row: Vec<String> = rule_cells(&p.rule).into();
    row.extend([
        fmt_f64(p.contraction_sup),
        fmt_f64(p.contraction_nu),
        fmt_f64(p.bias_l2),
        fmt_f64(p.root_variance),
        p.seed.to_string(),
        p.mdp_id.clone(),
    ]);
    row
}

pub fn mc_config(cfg: &Validated, inst: &Instance) -> McConfig {
    McConfig {
        n_trajectories: cfg.n_trajectories,
        horizon: cfg.horizon,
        rng: inst.stream.child(MC_STREAM),
        tail: cfg.tail,
        reward_noise: RewardNoise::None,
    }
}

fn sweep(cfg: &Validated, dir: &mut OutDir) -> anyhow::Result<Vec<anyhow::Result<()>>> {
    let results = per_seed_item(cfg, &cfg.sweep_rules, |inst, _, &rule| {
        let q0 = QTable::zeros(inst.mdp.n_states(), inst.mdp.n_actions());
        let mc = mc_config(cfg, inst);
        tradeoff_point(&inst.mdp, rule, &inst.target, &inst.behaviour, &q0, &mc, inst.seed, &inst.mdp_id)
            .map_err(|e| anyhow::anyhow!("{rule}: {e}"))
    });
    let (status, ok) = emit_each(cfg, results, |seed, points| {
        let rows: Vec<_> = points.iter().map(sweep_row).collect();
        dir.write_csv(&format!("sweep_seed{seed}.csv"), &SWEEP_HEADER, &rows)?;
        Ok(())
    })?;
    if !ok.is_empty() {
        let metrics: [(&str, fn(&TradeoffPoint) -> f64); 4] = [
            ("contraction_sup", |p| p.contraction_sup),
            ("contraction_nu", |p| p.contraction_nu),
            ("bias_l2", |p| p.bias_l2),
            ("root_variance", |p| p.root_variance),
        ];
        let mut rows = Vec::new();
        for (j, rule) in cfg.sweep_rules.iter().enumerate() {
            for (m, (name, get)) in metrics.iter().enumerate() {
                let xs: Vec<f64> = ok.iter().map(|(_, pts)| get(&pts[j])).collect();
                let s = boot(cfg, (j * metrics.len() + m) as u64, &xs);
                let mut row: Vec<String> = rule_cells(rule).into();
                row.push(name.to_string());
                row.extend(summary_cells(&s));
                rows.push(row);
            }
        }
        dir.write_csv(
            "sweep_summary.csv",
            &header(&["rule", "n", "alpha", "lambda", "metric"]),
            &rows,
        )?;
    }
    Ok(status)
}

pub const CURVE_HEADER: [&str; 5] = ["env_steps", "l2_error", "seed", "rule", "param"];

fn label_cells(rule: &UpdateRule) -> [String; 2] {
    [rule.kind.name().to_string(), fmt_f64(rule.param())]
}

pub fn td_config(cfg: &Validated, inst: &Instance) -> TdConfig {
    let e = &cfg.raw.eval_curve;
    TdConfig {
        learning_rate: *e.learning_rate.get_ref(),
        n_steps: *e.n_steps.get_ref(),
        eval_every: *e.eval_every.get_ref(),
        segment_len: *e.segment_len.get_ref(),
        mode: cfg.eval_mode,
        rng: inst.stream.child(TD_STREAM),
    }
}

fn eval_curve(cfg: &Validated, dir: &mut OutDir) -> anyhow::Result<Vec<anyhow::Result<()>>> {
    let results = per_seed_item(cfg, &cfg.eval_rules, |inst, _, &rule| {
        td_eval_loop(&inst.mdp, rule, &inst.target, &inst.behaviour, &td_config(cfg, inst))
            .map_err(|e| anyhow::anyhow!("{rule}: {e}"))
    });
    let (status, ok) = emit_each(cfg, results, |seed, curves: &Vec<Vec<CurvePoint>>| {
        let mut rows = Vec::new();
        for (rule, curve) in cfg.eval_rules.iter().zip(curves) {
            for p in curve {
                let [name, param] = label_cells(rule);
                rows.push(vec![p.env_steps.to_string(), fmt_f64(p.l2_error), seed.to_string(), name, param]);
            }
        }
        dir.write_csv(&format!("eval_curve_seed{seed}.csv"), &CURVE_HEADER, &rows)?;
        Ok(())
    })?;
    if let Some((_, first)) = ok.first() {
        let mut rows = Vec::new();
        let mut group = 0;
        for (j, rule) in cfg.eval_rules.iter().enumerate() {
            for (k, point) in first[j].iter().enumerate() {
                let xs: Vec<f64> = ok.iter().map(|(_, c)| c[j][k].l2_error).collect();
                let s = boot(cfg, group, &xs);
                group += 1;
                let mut row: Vec<String> = label_cells(rule).into();
                row.push(point.env_steps.to_string());
                row.extend(summary_cells(&s));
                rows.push(row);
            }
        }
        dir.write_csv("eval_curve_summary.csv", &header(&["rule", "param", "env_steps"]), &rows)?;
    }
    Ok(status)
}

pub const CONTROL_HEADER: [&str; 6] = ["round", "env_steps_total", "suboptimality", "rule", "param", "seed"];

fn ctrace_schedule(cfg: &Validated) -> StepSchedule {
    StepSchedule::Polynomial {
        scale: *cfg.raw.ctrace.step_scale.get_ref(),
        power: *cfg.raw.ctrace.step_power.get_ref(),
    }
}

pub fn control_config(cfg: &Validated, inst: &Instance, j: usize) -> ControlConfig {
    let c = &cfg.raw.control;
    ControlConfig {
        rounds: *c.rounds.get_ref(),
        env_steps_per_round: *c.steps_per_round.get_ref(),
        evaluation: cfg.control_evals[j].evaluation(*cfg.raw.ctrace.phi0.get_ref(), ctrace_schedule(cfg)),
        behaviour: cfg
            .control_epsilon
            .map_or(BehaviourSchedule::FixedUniform, BehaviourSchedule::GreedyEpsilon),
        learning_rate: *c.learning_rate.get_ref(),
        segment_len: *c.segment_len.get_ref(),
        mode: cfg.control_mode,
        rng: inst.stream.child(CONTROL_STREAM),
    }
}

fn control(cfg: &Validated, dir: &mut OutDir) -> anyhow::Result<Vec<anyhow::Result<()>>> {
    let results = per_seed_item(cfg, &cfg.control_evals, |inst, j, spec| {
        let run = policy_iteration(&inst.mdp, &control_config(cfg, inst, j)).map_err(|e| anyhow::anyhow!("{spec:?}: {e}"))?;
        Ok(run.curve)
    });
    let labels: Vec<(String, f64)> = (0..cfg.control_evals.len())
        .map(|j| cfg.control_evals[j].evaluation(0.0, StepSchedule::default()).label())
        .collect();
    let (status, ok) = emit_each(cfg, results, |seed, curves: &Vec<Vec<ControlPoint>>| {
        let mut rows = Vec::new();
        for ((name, param), curve) in labels.iter().zip(curves) {
            for p in curve {
                rows.push(vec![
                    p.round.to_string(),
                    p.env_steps_total.to_string(),
                    fmt_f64(p.suboptimality),
                    name.clone(),
                    fmt_f64(*param),
                    seed.to_string(),
                ]);
            }
        }
        dir.write_csv(&format!("control_seed{seed}.csv"), &CONTROL_HEADER, &rows)?;
        Ok(())
    })?;
    if let Some((_, first)) = ok.first() {
        let mut rows = Vec::new();
        let mut group = 0;
        for (j, (name, param)) in labels.iter().enumerate() {
            for (k, point) in first[j].iter().enumerate() {
                let xs: Vec<f64> = ok.iter().map(|(_, c)| c[j][k].suboptimality).collect();
                let s = boot(cfg, group, &xs);
                group += 1;
                let mut row = vec![
                    name.clone(),
                    fmt_f64(*param),
                    point.round.to_string(),
                    point.env_steps_total.to_string(),
                ];
                row.extend(summary_cells(&s));
                rows.push(row);
            }
        }
        dir.write_csv(
            "control_summary.csv",
            &header(&["rule", "param", "round", "env_steps_total"]),
            &rows,
        )?;
    }
    Ok(status)
}

pub const CTRACE_HEADER: [&str; 6] = ["episode", "phi", "alpha", "c_hat", "exact_c_nu", "q_error_inf"];

pub const CTRACE_SUMMARY_HEADER: [&str; 11] = [
    "seed",
    "target_rate",
    "alpha_star",
    "final_alpha",
    "final_phi",
    "final_c_nu",
    "rate_gap",
    "final_q_error_inf",
    "relative_q_error",
    "env_steps",
    "clamp_events",
];

/// Per-seed outcome of a C-trace run.
#[derive(Clone, Debug, PartialEq)]
pub struct CtraceOutcome {
    pub log: Vec<CtraceLogRow>,
    pub summary: Vec<String>,
    pub rate_gap: f64,
    pub relative_q_error: f64,
    pub final_alpha: f64,
}

pub fn ctrace_config(cfg: &Validated, inst: &Instance) -> anyhow::Result<CtraceConfig> {
    let t = &cfg.raw.ctrace;
    let target_rate = match cfg.ctrace_target {
        CtraceTarget::Rate(r) => r,
        CtraceTarget::AtAlpha(a) => {
            let nu = StateActionDist::initial_pairs(&inst.mdp, &inst.behaviour);
            exact_c_nu(&inst.mdp, &inst.target, &inst.behaviour, a, &nu)?
        }
    };
    let power = *t.step_power.get_ref();
    Ok(CtraceConfig {
        target_rate,
        phi0: *t.phi0.get_ref(),
        schedule: ctrace_schedule(cfg),
        q_schedule: t
            .q_step_scale
            .as_ref()
            .map(|s| StepSchedule::Polynomial { scale: *s.get_ref(), power }),
        n_episodes: *t.n_episodes.get_ref(),
        horizon: *t.horizon.get_ref(),
        truncation: t.truncation.as_ref().map(|n| *n.get_ref()),
        log_every: *t.log_every.get_ref(),
        rng: inst.stream.child(CTRACE_STREAM),
        reward_noise: RewardNoise::None,
    })
}

fn ctrace(cfg: &Validated, dir: &mut OutDir) -> anyhow::Result<Vec<anyhow::Result<()>>> {
    let results = per_seed(cfg, |inst| {
        let c = ctrace_config(cfg, inst)?;
        let run = ctrace_eval_loop(&inst.mdp, &inst.target, &inst.behaviour, &c)?;
        Ok(CtraceOutcome {
            summary: vec![
                inst.seed.to_string(),
                fmt_f64(c.target_rate),
                fmt_f64(run.alpha_star),
                fmt_f64(run.final_alpha()),
                fmt_f64(run.state.phi),
                fmt_f64(run.final_c_nu),
                fmt_f64(run.rate_gap()),
                fmt_f64(run.final_q_error_inf),
                fmt_f64(run.relative_q_error()),
                run.env_steps.to_string(),
                run.state.clamp_events.to_string(),
            ],
            rate_gap: run.rate_gap(),
            relative_q_error: run.relative_q_error(),
            final_alpha: run.final_alpha(),
            log: run.log,
        })
    });
    let (status, ok) = emit_each(cfg, results, |seed, o| {
        let rows: Vec<_> = o
            .log
            .iter()
            .map(|r| {
                vec![
                    r.episode.to_string(),
                    fmt_f64(r.phi),
                    fmt_f64(r.alpha),
                    fmt_f64(r.c_hat),
                    fmt_f64(r.exact_c_nu),
                    fmt_f64(r.q_error_inf),
                ]
            })
            .collect();
        dir.write_csv(&format!("ctrace_seed{seed}.csv"), &CTRACE_HEADER, &rows)?;
        Ok(())
    })?;
    if !ok.is_empty() {
        let rows: Vec<_> = ok.iter().map(|(_, o)| o.summary.clone()).collect();
        dir.write_csv("ctrace_summary.csv", &CTRACE_SUMMARY_HEADER, &rows)?;
        let metrics: [(&str, fn(&CtraceOutcome) -> f64); 3] = [
            ("rate_gap", |o| o.rate_gap),
            ("relative_q_error", |o| o.relative_q_error),
            ("final_alpha", |o| o.final_alpha),
        ];
        let rows: Vec<_> = metrics
            .iter()
            .enumerate()
            .map(|(m, (name, get))| {
                let xs: Vec<f64> = ok.iter().map(|(_, o)| get(o)).collect();
                let mut row = vec![name.to_string()];
                row.extend(summary_cells(&boot(cfg, m as u64, &xs)));
                row
            })
            .collect();
        dir.write_csv("ctrace_stats.csv", &header(&["metric"]), &rows)?;
    }
    Ok(status)
}
