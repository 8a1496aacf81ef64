use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;

use tvpursuit::harness::{phase, Config, ExperimentConfig, ExperimentKind};
use tvpursuit::problem::gen_design;
use tvpursuit::verification::rip_constant_with;
use tvpursuit::ExecMode;

fn modes() -> [(&'static str, ExecMode); 2] {
    [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)]
}

fn rip(c: &mut Criterion) {
    let a: DMatrix<f64> = gen_design(12, 16, 3);
    let mut group = c.benchmark_group("rip_constant_k3");
    for (name, mode) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| rip_constant_with(&a, 3, mode).unwrap())
        });
    }
    group.finish();
}

fn phase_cells(c: &mut Criterion) {
    let mut group = c.benchmark_group("phase_transition_cells");
    group.sample_size(10);
    for (name, mode) in modes() {
        let mut cfg = Config::default();
        for kv in ["d=32", "s=3", "s_prime=1", "n1=20", "path_sizes=2,3", "sweep=8,16", "replications=4"] {
            cfg.set(kv).unwrap();
        }
        cfg.insert("mode", name);
        let cfg = ExperimentConfig::from_config(ExperimentKind::PhaseTransition, &cfg).unwrap();
        assert_eq!(cfg.mode, mode);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| phase::run_phase_transition(&cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, rip, phase_cells);
criterion_main!(benches);
