use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tradeoff_bench::{chain, garnet, random};
use tradeoff_core::ctrace::{ctrace_eval_loop, StepSchedule};
use tradeoff_core::operator::{build_operator, fixed_point};
use tradeoff_core::sampler::{variance, McConfig};
use tradeoff_core::{CtraceConfig, QTable, RngStream, StateActionDist, UpdateRule};

fn operators(c: &mut Criterion) {
    let mut g = c.benchmark_group("build_operator");
    for (name, p) in [("random5x3", random(5, 3, 0)), ("garnet50x4", garnet(50, 4, 5, 0)), ("chain20", chain(20))] {
        for rule in [UpdateRule::uncorrected(10), UpdateRule::importance(10), UpdateRule::retrace(0.5)] {
            g.bench_with_input(BenchmarkId::new(name, rule), &rule, |b, &rule| {
                b.iter(|| build_operator(&p.mdp, rule, &p.target, &p.behaviour).unwrap())
            });
        }
    }
    g.finish();

    let p = garnet(50, 4, 5, 0);
    let op = build_operator(&p.mdp, UpdateRule::retrace(1.0), &p.target, &p.behaviour).unwrap();
    c.bench_function("fixed_point/garnet50x4", |b| b.iter(|| fixed_point(black_box(&op)).unwrap()));
}

fn sampling(c: &mut Criterion) {
    let p = random(5, 3, 0);
    let q0 = QTable::zeros(5, 3);
    let nu = StateActionDist::initial_pairs(&p.mdp, &p.behaviour);
    let mut g = c.benchmark_group("variance");
    g.sample_size(10);
    for rule in [UpdateRule::uncorrected(5), UpdateRule::retrace(0.5)] {
        let mc = McConfig {
            n_trajectories: 500,
            horizon: 100,
            rng: RngStream::from_seed(1),
            ..Default::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(rule), &rule, |b, &rule| {
            b.iter(|| variance(&p.mdp, rule, &q0, &nu, &p.target, &p.behaviour, &mc).unwrap())
        });
    }
    g.finish();

    let p = chain(20);
    let cfg = CtraceConfig {
        target_rate: 0.6,
        n_episodes: 200,
        schedule: StepSchedule::Polynomial { scale: 0.5, power: 0.7 },
        ..Default::default()
    };
    let mut g = c.benchmark_group("ctrace");
    g.sample_size(10);
    g.bench_function("chain20_200_episodes", |b| {
        b.iter(|| ctrace_eval_loop(&p.mdp, &p.target, &p.behaviour, &cfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, operators, sampling);
criterion_main!(benches);
