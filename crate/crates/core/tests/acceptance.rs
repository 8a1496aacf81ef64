//! Acceptance criteria, one line each. Runs as a plain binary so the lines
//! are always printed. Failing criteria are reported but only change the exit
//! status when `TVPURSUIT_ACCEPTANCE_STRICT` is set.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use tvpursuit::graph::make_path;
use tvpursuit::harness::{self, convergence, noisy, phase, Config, ExperimentConfig, ExperimentKind, Family, Method};
use tvpursuit::optim::root::{root_subproblem, BbConfig};
use tvpursuit::optim::{least_norm_affine, pinv, shrink_delta};
use tvpursuit::problem::{gen_design, gen_designs, gen_signals, measure, DesignSharing, SignalScheme};
use tvpursuit::reformulation::build_augmented;
use tvpursuit::rng;
use tvpursuit::verification::{kernel_condition_check, recovery_iff_rnsp, rip_constant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn experiment(kind: ExperimentKind, pairs: &[&str]) -> ExperimentConfig {
    let mut c = Config::default();
    for kv in pairs {
        c.set(kv).expect("valid override");
    }
    ExperimentConfig::from_config(kind, &c).expect("valid config")
}

fn phase_config() -> ExperimentConfig {
    experiment(ExperimentKind::PhaseTransition, &["path_sizes=2,4,8", "sweep=8,48", "methods=tvbp,independent_bp"])
}

fn phase_transition(out: &harness::ExperimentOutput) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [2, 4, 8] {
        let hi = phase::probability(&out.main, Family::Path, n, 48, Method::Tvbp).map_or(f64::NAN, |p| p.0);
        let lo = phase::probability(&out.main, Family::Path, n, 8, Method::Tvbp).map_or(f64::NAN, |p| p.0);
        pass &= hi >= 0.9 && lo <= 0.2;
        parts.push(format!("n={n}: P(48)={hi} P(8)={lo}"));
    }
    outcome(pass, parts.join("; "))
}

fn baseline_separation(out: &harness::ExperimentOutput) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [2, 4, 8] {
        let p = phase::probability(&out.main, Family::Path, n, 48, Method::IndependentBp).map_or(f64::NAN, |p| p.0);
        pass &= p <= 0.2;
        parts.push(format!("n={n}: P_indep(48)={p}"));
    }
    outcome(pass, parts.join("; "))
}

fn admm_convergence() -> Outcome {
    let cfg = experiment(ExperimentKind::Convergence, &["families=tree,path", "tree_sizes=7", "path_sizes=7"]);
    let out = match convergence::run_convergence(&cfg) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    if !out.aborted.is_empty() {
        return outcome(false, format!("aborted: {:?}", out.aborted));
    }
    let tree = convergence::trace(&out.main, Family::Tree, 7);
    let path = convergence::trace(&out.main, Family::Path, 7);
    let final_tree = tree.last().copied().unwrap_or(f64::NAN);
    let fit = convergence::log_linear_fit(&tree, 50, 300, 1e-12);
    let (slope, resid) = fit.unwrap_or((f64::NAN, f64::NAN));
    let (p300, t300) = (path[300], tree[300]);
    let pass = final_tree <= 1e-6 && fit.is_some_and(|(s, r)| s < 0.0 && r <= 1.0) && p300 >= t300;
    outcome(
        pass,
        format!(
            "tree err(500)={final_tree:.3e}; log10 fit 50-300 slope={slope:.4} max|resid|={resid:.3} decades; err(300) path={p300:.3e} tree={t300:.3e}"
        ),
    )
}

fn noisy_comparison() -> Outcome {
    let cfg = experiment(ExperimentKind::NoisyComparison, &["families=path", "path_sizes=8,16"]);
    let out = match noisy::run_noisy_comparison(&cfg) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let mut pass = out.cell_failures.is_empty();
    let mut parts = Vec::new();
    for n in [8, 16] {
        let (tv, tv_se) = noisy::error_of(&out.main, Family::Path, n, Method::Tvbpd).unwrap_or((f64::NAN, f64::NAN));
        let (gl, gl_se) =
            noisy::error_of(&out.main, Family::Path, n, Method::GroupLasso).unwrap_or((f64::NAN, f64::NAN));
        let se = (tv_se * tv_se + gl_se * gl_se).sqrt();
        pass &= gl - tv > se;
        parts.push(format!("n={n}: tvbpd={tv:.3}+-{tv_se:.3} group_lasso={gl:.3}+-{gl_se:.3} margin={:.3} se_diff={se:.3}", gl - tv));
    }
    if !out.cell_failures.is_empty() {
        parts.push(format!("failures: {:?}", out.cell_failures));
    }
    outcome(pass, parts.join("; "))
}

fn oracle_equivalence() -> Outcome {
    let (mut holds, mut recovers, mut bad) = (0, 0, 0);
    for i in 0..100u64 {
        let seed = rng::derive_str(11, &format!("acceptance/oracle/{i}"));
        let a = gen_design(6, 10, seed);
        let mut r = rng::stream(seed);
        let mut x = DVector::zeros(10);
        x[r.random_range(0..10)] = if r.random::<bool>() { 1.0 } else { -1.0 };
        match recovery_iff_rnsp(&a, &x) {
            Ok(audit) => {
                holds += usize::from(audit.rnsp_holds);
                recovers += usize::from(audit.bp_recovers);
                bad += usize::from(!audit.consistent());
            }
            Err(e) => return outcome(false, format!("instance {i}: {e}")),
        }
    }
    outcome(bad == 0, format!("100 instances: rnsp_holds={holds} bp_recovers={recovers} violations={bad}"))
}

fn kernel_condition() -> Outcome {
    let fixture = |sharing, seed| {
        let g = make_path(4).unwrap();
        let ens = gen_signals(&g, 10, 1, 1, SignalScheme::DisjointPm1, seed).unwrap();
        let designs = gen_designs(&[4; 4], 10, sharing, seed).unwrap();
        let meas = measure(&designs, &ens, 0.0, seed).unwrap();
        let aug = build_augmented(&g, &designs, &meas).unwrap();
        (g, aug)
    };
    let (mut shared_pass, mut worst) = (0, 0.0f64);
    let mut distinct_violations = 0;
    for seed in 0..20u64 {
        let (g, aug) = fixture(DesignSharing::SharedNonRoot, seed);
        match kernel_condition_check(&aug, &g, true) {
            Ok(rep) => {
                shared_pass += usize::from(rep.passes && rep.violations.iter().all(|&v| v <= 1e-8));
                worst = rep.violations.iter().copied().fold(worst, f64::max);
            }
            Err(e) => return outcome(false, format!("shared seed {seed}: {e}")),
        }
        let (g, aug) = fixture(DesignSharing::Independent, seed);
        match kernel_condition_check(&aug, &g, false) {
            Ok(rep) => distinct_violations += rep.failing_vectors(),
            Err(e) => return outcome(false, format!("distinct seed {seed}: {e}")),
        }
    }
    outcome(
        shared_pass == 20 && distinct_violations > 0,
        format!("shared: {shared_pass}/20 pass (worst {worst:.2e}); distinct: {distinct_violations} violating basis vectors"),
    )
}

/// Minimiser of `|x| + (rho/2) x^2 - t x` by bisection on its right derivative.
fn scalar_shrink_oracle(t: f64, rho: f64) -> f64 {
    let right = |x: f64| if x >= 0.0 { 1.0 + rho * x - t } else { -1.0 + rho * x - t };
    let (mut lo, mut hi) = (-(t.abs() + 2.0) / rho, (t.abs() + 2.0) / rho);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if right(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn gaussian(r: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

fn subproblem_suite() -> Outcome {
    let mut r = rng::stream(99);
    let mut shrink_err: f64 = 0.0;
    for _ in 0..1000 {
        let rho: f64 = r.random_range(0.1..20.0);
        let gamma = DVector::from_fn(1, |_, _| r.sample::<f64, _>(StandardNormal) * 3.0);
        let zi = DVector::from_fn(1, |_, _| r.sample::<f64, _>(StandardNormal));
        let zj = DVector::from_fn(1, |_, _| r.sample::<f64, _>(StandardNormal));
        let got = shrink_delta(&gamma, rho, &zi, &zj)[0];
        let want = scalar_shrink_oracle(gamma[0] + rho * (zi[0] - zj[0]), rho);
        shrink_err = shrink_err.max((got - want).abs());
    }

    let mut ln_err: f64 = 0.0;
    for _ in 0..50 {
        let a = gaussian(&mut r, 3, 5);
        let b = DVector::from_fn(3, |_, _| r.sample::<f64, _>(StandardNormal));
        let lin = DVector::from_fn(5, |_, _| r.sample::<f64, _>(StandardNormal));
        let got = match least_norm_affine(&a, &b, &lin) {
            Ok(x) => x,
            Err(e) => return outcome(false, format!("least_norm_affine: {e}")),
        };
        // [2I A^T; A 0] [x; mu] = [-a; b]
        let mut k = DMatrix::zeros(8, 8);
        k.view_mut((0, 0), (5, 5)).copy_from(&(DMatrix::<f64>::identity(5, 5) * 2.0));
        k.view_mut((0, 5), (5, 3)).copy_from(&a.transpose());
        k.view_mut((5, 0), (3, 5)).copy_from(&a);
        let mut rhs = DVector::zeros(8);
        rhs.rows_mut(0, 5).copy_from(&(-&lin));
        rhs.rows_mut(5, 3).copy_from(&b);
        let sol = k.lu().solve(&rhs).expect("nonsingular KKT system");
        ln_err = ln_err.max((got - sol.rows(0, 5)).amax());
    }

    let mut kkt: f64 = 0.0;
    for _ in 0..50 {
        let a = gaussian(&mut r, 4, 6);
        let x0 = DVector::from_fn(6, |_, _| r.sample::<f64, _>(StandardNormal));
        let b = &a * x0;
        let nu = DVector::from_fn(6, |_, _| r.sample::<f64, _>(StandardNormal));
        let c: f64 = r.random_range(0.5..5.0);
        let cfg = BbConfig { max_iters: 5000, ..BbConfig::default() };
        let sol = match root_subproblem(&a, &b, &nu, c, &cfg) {
            Ok(s) => s,
            Err(e) => return outcome(false, format!("root_subproblem: {e}")),
        };
        let primal = (&a * &sol.x - &b).norm();
        let g = &nu + &sol.x * (2.0 * c) - a.tr_mul(&sol.lambda);
        let stat = (0..6)
            .map(|i| {
                if sol.x[i] != 0.0 {
                    (g[i] + sol.x[i].signum()).abs()
                } else {
                    (g[i].abs() - 1.0).max(0.0)
                }
            })
            .fold(0.0, f64::max);
        kkt = kkt.max(primal).max(stat);
    }

    let mut penrose: f64 = 0.0;
    for i in 0..20 {
        let a = if i % 2 == 0 {
            gaussian(&mut r, 4, 7)
        } else {
            // rank 2
            gaussian(&mut r, 5, 2) * gaussian(&mut r, 2, 6)
        };
        let p = match pinv(&a) {
            Ok(p) => p,
            Err(e) => return outcome(false, format!("pinv: {e}")),
        };
        let ap = &a * &p;
        let pa = &p * &a;
        penrose = penrose
            .max((&ap * &a - &a).amax())
            .max((&pa * &p - &p).amax())
            .max((&ap - ap.transpose()).amax())
            .max((&pa - pa.transpose()).amax());
    }

    let pass = shrink_err <= 1e-10 && ln_err <= 1e-8 && kkt <= 1e-6 && penrose <= 1e-8;
    outcome(
        pass,
        format!(
            "shrink_delta max err={shrink_err:.2e} (1000); least_norm_affine vs KKT={ln_err:.2e} (50); root KKT residual={kkt:.2e} (50); pinv Penrose={penrose:.2e} (20)"
        ),
    )
}

fn rip_brute_force() -> Outcome {
    let mut monotone_bad = 0;
    let mut svd_err: f64 = 0.0;
    for seed in 0..20u64 {
        let a = gen_design(6, 10, rng::derive_str(5, &format!("acceptance/rip/{seed}")));
        let mut prev = 0.0;
        for k in 1..=4 {
            let rep = rip_constant(&a, k).expect("within budget");
            if rep.delta < prev - 1e-12 {
                monotone_bad += 1;
            }
            prev = rep.delta;
            let cols: Vec<usize> = (0..10).collect();
            let mut oracle: f64 = 0.0;
            let mut supports = Vec::new();
            subsets(&cols, k, 0, &mut Vec::new(), &mut supports);
            for s in supports {
                let sv = a.select_columns(&s).singular_values();
                let (hi, lo) = (sv.max(), sv.min());
                oracle = oracle.max((hi * hi - 1.0).max(1.0 - lo * lo));
            }
            svd_err = svd_err.max((rep.delta - oracle).abs());
        }
    }
    let mut ortho: f64 = 0.0;
    let mut r = rng::stream(3);
    let q = gaussian(&mut r, 12, 5).qr().q();
    for k in 1..=5 {
        ortho = ortho.max(rip_constant(&q, k).expect("within budget").delta.abs());
    }
    let pass = monotone_bad == 0 && ortho <= 1e-12 && svd_err <= 1e-10;
    outcome(
        pass,
        format!("monotone violations={monotone_bad} (20 matrices, k=1..4); orthonormal delta={ortho:.2e}; svd oracle err={svd_err:.2e}"),
    )
}

fn subsets(cols: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for i in start..cols.len() {
        cur.push(cols[i]);
        subsets(cols, k, i + 1, cur, out);
        cur.pop();
    }
}

fn determinism() -> Outcome {
    let runs: Vec<(ExperimentKind, Vec<&str>)> = vec![
        (ExperimentKind::PhaseTransition, vec!["d=32", "s=3", "s_prime=1", "n1=20", "path_sizes=2,3", "sweep=8,32", "replications=3"]),
        (ExperimentKind::Convergence, vec!["d=40", "s=4", "s_prime=1", "sweep=20", "tree_sizes=3", "path_sizes=3", "rounds=40"]),
        (ExperimentKind::NoisyComparison, vec!["d=40", "s=3", "s_prime=1", "n1=30", "sweep=30", "path_sizes=2", "tree_sizes=3", "replications=2", "lambda_count=3"]),
        (ExperimentKind::UnmixDemo, vec!["replications=2", "grid_rows=2", "grid_cols=2"]),
        (ExperimentKind::VerifySuite, vec!["replications=3"]),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (kind, pairs) in runs {
        let cfg = experiment(kind, &pairs);
        let mut seq = pairs.clone();
        seq.push("mode=sequential");
        let cfg_seq = experiment(kind, &seq);
        let (a, b, c) = (harness::run(&cfg), harness::run(&cfg), harness::run(&cfg_seq));
        let same = match (a, b, c) {
            (Ok(a), Ok(b), Ok(c)) => {
                let render = |o: &harness::ExperimentOutput| {
                    let mut s = o.main.render();
                    for (_, t) in &o.extra {
                        s.push_str(&t.render());
                    }
                    s
                };
                render(&a) == render(&b) && a.bodies() == c.bodies()
            }
            _ => false,
        };
        pass &= same;
        parts.push(format!("{}={}", kind.name(), if same { "identical" } else { "DIFFERENT" }));
    }
    outcome(pass, parts.join(" "))
}

fn main() {
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut timed = |name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!("{} {name}: {} [{secs:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o, secs));
    };
    let t = Instant::now();
    let phase_out = phase::run_phase_transition(&phase_config()).expect("phase transition runs");
    println!("(phase transition grid ran in {:.1}s)", t.elapsed().as_secs_f64());
    timed("phase_transition", &|| phase_transition(&phase_out));
    timed("baseline_separation", &|| baseline_separation(&phase_out));
    timed("admm_convergence", &admm_convergence);
    timed("noisy_comparison", &noisy_comparison);
    timed("oracle_equivalence", &oracle_equivalence);
    timed("kernel_condition", &kernel_condition);
    timed("subproblem_suite", &subproblem_suite);
    timed("rip_brute_force", &rip_brute_force);
    timed("determinism", &determinism);
    let failed: Vec<&str> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failing: {}", failed.join(", "));
        if std::env::var_os("TVPURSUIT_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
