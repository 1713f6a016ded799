//! Acceptance suite. Runs as a plain binary and prints one PASS/FAIL line per
//! criterion; exits nonzero when any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use mulab::datagen::{is_nested, make_synthetic, sequential_schedule, split_random, Dataset, Split, SyntheticSpec};
use mulab::eval::{avg_gap, mean_abs_diff, mia_from_confidences};
use mulab::harness::{mean_std, run_experiment, CellRecord, RunManifest, ScenarioConfig};
use mulab::harness::{ExperimentConfig, MethodEntry};
use mulab::losses::{ce_loss, info_nce_anchor};
use mulab::model::ModelConfig;
use mulab::scalar::{decimal, format_rounded, Rational};
use mulab::theory::{err_bound, rho_max, separation_condition};
use mulab::unlearn::{
    coun, ft, l1_sparse, neggrad_plus, not_unlearn, run_method, sequential_unlearn, train_original, with_cl_module,
    Method, MethodConfig, TrainConfig, UnlearnRun,
};
use mulab::{Model, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rat(s: &str) -> Rational {
    decimal(s).expect("decimal literal")
}

fn row(v: [&str; 4]) -> [Rational; 4] {
    v.map(rat)
}

fn c1_avg_gap_parity() -> Outcome {
    let retrain = row(["100.00", "4.81", "94.67", "11.02"]);
    let ft = row(["99.99", "3.76", "94.70", "9.51"]);
    let coun = row(["99.99", "4.12", "94.57", "10.81"]);
    let g_ft = format_rounded(&avg_gap(&ft, &retrain), 2);
    let g_coun = format_rounded(&avg_gap(&coun, &retrain), 2);
    check(g_ft == "0.65" && g_coun == "0.25", format!("FT {g_ft}, CoUn {g_coun}"))
}

fn c2_table1_parity() -> Outcome {
    let classes = [0, 1, 2, 3];
    let zeros = vec![Rational::from_integer(0); 4];
    let coun_diffs: Vec<_> = ["0.00", "0.28", "0.49", "0.53"].map(rat).to_vec();
    let from_diffs = format_rounded(
        &mean_abs_diff(&coun_diffs, &zeros, &classes).map_err(|e| e.to_string())?,
        2,
    );
    let pct = |v: [&str; 4]| v.map(rat).to_vec();
    let retrain = pct(["0.00", "69.32", "13.47", "12.60"]);
    let ft = pct(["0.00", "70.29", "12.38", "13.12"]);
    let coun = pct(["0.00", "69.60", "13.96", "13.13"]);
    let g = |m: &[Rational]| mean_abs_diff(m, &retrain, &classes).map(|x| format_rounded(&x, 2));
    let (g_ft, g_coun) = (g(&ft).map_err(|e| e.to_string())?, g(&coun).map_err(|e| e.to_string())?);
    check(
        from_diffs == "0.33" && g_coun == "0.33" && g_ft == "0.65",
        format!("CoUn diffs {from_diffs}, CoUn {g_coun}, FT {g_ft}"),
    )
}

fn c3_gradients() -> Outcome {
    let (mut worst_rel, mut worst_coord, mut failures) = (0.0f64, 0.0f64, Vec::new());
    for seed in 0..20 {
        for (name, gc) in common::gradient_errors(seed) {
            worst_rel = worst_rel.max(gc.rel_err);
            worst_coord = worst_coord.max(gc.max_coord_err);
            if !(gc.rel_err <= common::GRAD_TOL) {
                failures.push(format!("{name}@{seed}"));
            }
        }
    }
    check(
        failures.is_empty(),
        format!("4 objectives x 20 seeds, max rel err {worst_rel:.2e}, max coord err {worst_coord:.2e}, failing {failures:?}"),
    )
}

fn c4_loss_oracles() -> Outcome {
    let z = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let mut worst = 0.0f64;
    for tau in [1.0, 0.5, 0.1] {
        let got = info_nce_anchor(z.row(0), &z, 0, tau).map_err(|e| e.to_string())?;
        worst = worst.max((got - (1.0 + (-1.0 / tau).exp()).ln()).abs());
    }
    let mut worst_ce = 0.0f64;
    for k in 2..=5 {
        let logits = Tensor::zeros(&[3, k]);
        let mut y = Tensor::zeros(&[3, k]);
        for i in 0..3 {
            y.data_mut()[i * k + i % k] = 1.0;
        }
        let got = ce_loss(&y, &logits).map_err(|e| e.to_string())?;
        worst_ce = worst_ce.max((got - (k as f64).ln()).abs());
    }
    check(
        worst <= 1e-12 && worst_ce <= 1e-12,
        format!("InfoNCE max err {worst:.1e}, CE max err {worst_ce:.1e}"),
    )
}

fn benchmark_data() -> (Dataset, Dataset) {
    make_synthetic(&SyntheticSpec::ring_benchmark(0)).unwrap()
}

fn original_for(train: &Dataset, seed: u64) -> Model {
    let mc = ModelConfig {
        seed,
        ..ModelConfig::default()
    };
    train_original(train, &mc, &TrainConfig::original(seed)).unwrap()
}

fn same_run(a: &UnlearnRun, b: &UnlearnRun) -> bool {
    a.final_model == b.final_model && a.per_epoch_log == b.per_epoch_log && a.flops == b.flops
}

fn c5_degenerate_equivalence() -> Outcome {
    let (train, test) = benchmark_data();
    let mut pairs = 0;
    let mut broken = Vec::new();
    for seed in [0u64, 1] {
        let m = original_for(&train, seed);
        let s = split_random(&train, test.len(), 0.1, seed).unwrap();
        let cfg = TrainConfig::unlearning(seed);
        let base = ft(&m, &train, &s, &cfg).unwrap();
        let variants = [
            ("coun(0)", coun(&m, &train, &s, &cfg, 0.0, 0.1).unwrap()),
            ("neggrad_plus(1)", neggrad_plus(&m, &train, &s, 1.0, &cfg).unwrap()),
            ("l1_sparse(0)", l1_sparse(&m, &train, &s, 0.0, 4, &cfg).unwrap()),
            ("not([])", not_unlearn(&m, &train, &s, &[], &cfg).unwrap()),
        ];
        for (name, run) in &variants {
            pairs += 1;
            if !same_run(run, &base) {
                broken.push(format!("{name}@{seed}"));
            }
        }
        let wrapped = with_cl_module(Method::Ft.into(), 1.0, 0.1).unwrap();
        let w = run_method(&m, &train, &s, &wrapped, &cfg).unwrap();
        let c = coun(&m, &train, &s, &cfg, 1.0, 0.1).unwrap();
        pairs += 1;
        if !same_run(&w, &c) {
            broken.push(format!("ft+cl vs coun@{seed}"));
        }
    }
    check(
        broken.is_empty(),
        format!("{pairs} pairs bitwise identical, broken {broken:?}"),
    )
}

/// The two classes whose centers are nearest to `class`.
fn nearest_classes(spec: &SyntheticSpec, class: usize) -> [usize; 2] {
    let c = spec.center_matrix().unwrap();
    let d = |j: usize| c[class].iter().zip(&c[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut others: Vec<usize> = (0..c.len()).filter(|&j| j != class).collect();
    others.sort_by(|&a, &b| d(a).total_cmp(&d(b)));
    [others[0], others[1]]
}

fn c6_classwise_retrain(dir: &std::path::Path) -> Outcome {
    let class = 0;
    let cfg = ExperimentConfig {
        scenario: ScenarioConfig::Classwise { class },
        methods: vec![MethodEntry::named("ft")],
        theory: None,
        ..ExperimentConfig::benchmark()
    };
    let adj = nearest_classes(&cfg.dataset, class);
    let manifest = run_experiment(&cfg, dir, 1).map_err(|e| e.to_string())?;
    let retrain: Vec<&CellRecord> = manifest.cells.iter().filter(|c| c.method == "retrain").collect();
    let mut ua = Vec::new();
    let mut share = Vec::new();
    for c in &retrain {
        ua.push(c.metrics.as_ref().ok_or("retrain cell failed")?.ua);
        let p = &c.predictions.as_ref().ok_or("retrain cell has no predictions")?.percent;
        share.push(p[adj[0]] + p[adj[1]]);
    }
    let (ua, share) = (mean_std(&ua), mean_std(&share));
    check(
        retrain.len() == 10 && ua.mean >= 95.0 && share.mean >= 60.0,
        format!(
            "{} seeds, UA {:.2} ± {:.2}, share in classes {adj:?} {:.2}% ± {:.2}",
            retrain.len(),
            ua.mean,
            ua.std,
            share.mean,
            share.std
        ),
    )
}

/// Per-seed avg_gap of (method, cl_module) cells.
fn gaps(m: &RunManifest, method: &str, cl: bool) -> Vec<f64> {
    m.cells
        .iter()
        .filter(|c| c.method == method && (c.cl_module != "none") == cl)
        .filter_map(|c| c.metrics.as_ref().and_then(|x| x.avg_gap))
        .collect()
}

fn c7_ordering(m: &RunManifest) -> Outcome {
    let (c, f) = (mean_std(&gaps(m, "coun", false)), mean_std(&gaps(m, "ft", false)));
    let n = gaps(m, "coun", false).len().min(gaps(m, "ft", false).len());
    check(
        n == 10 && c.mean <= f.mean,
        format!(
            "CoUn {:.3} ± {:.3}, FT {:.3} ± {:.3} over {n} seeds",
            c.mean, c.std, f.mean, f.std
        ),
    )
}

fn c8_cl_boost(m: &RunManifest) -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for (base, wrapped) in [
        ("ft", ("coun", false)),
        ("neggrad_plus", ("neggrad_plus", true)),
        ("l1_sparse", ("l1_sparse", true)),
        ("not", ("not", true)),
    ] {
        let (b, w) = (gaps(m, base, false), gaps(m, wrapped.0, wrapped.1));
        if b.len() != 10 || w.len() != 10 {
            return Err(format!("{base}: {} / {} seeds", b.len(), w.len()));
        }
        let (b, w) = (mean_std(&b).mean, mean_std(&w).mean);
        if w <= b {
            wins += 1;
        }
        parts.push(format!("{base} {b:.2}->{w:.2}"));
    }
    check(wins >= 3, format!("{wins}/4 improved: {}", parts.join(", ")))
}

fn c9_lemma1(m: &RunManifest) -> Outcome {
    let checks: Vec<_> = m
        .cells
        .iter()
        .filter(|c| c.method == "coun" && c.cl_module == "none")
        .filter_map(|c| c.lemma1.as_ref())
        .collect();
    let holds = checks.iter().filter(|l| l.holds).count();
    check(
        checks.len() == 10 && holds >= 8,
        format!("R_r <= R_u in {holds}/{} seeds", checks.len()),
    )
}

fn c10_theory() -> Outcome {
    let ex = rho_max(0.9, 0.1, 0.01, 2.0, 0.05, 0.25f64).map_err(|e| e.to_string())?;
    let collapse = rho_max(1.0, 0.1, 0.0, 3.0, 0.0, 0.25f64).map_err(|e| e.to_string())?;
    let eb = err_bound(1.0, 0.0f64);
    let rho = rho_max(1.0, 0.1, 0.0, 1.0, 0.0, 0.25f64).map_err(|e| e.to_string())?;
    let mu = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let cond = separation_condition(&mu, rho);
    let want_rhs = 0.5 - 0.1 - 0.2f64.sqrt();
    let cond_ok = cond.len() == 2 && cond.iter().all(|p| !p.holds && (p.rhs - want_rhs).abs() <= 1e-12);
    let values_ok = (ex - 0.598).abs() <= 1e-12 && (collapse - 0.3).abs() <= 1e-12 && eb.abs() <= 1e-12;

    let mut r = ChaCha8Rng::seed_from_u64(10);
    let mut violations = 0;
    for _ in 0..100 {
        let sigma: f64 = r.random_range(0.05..=1.0);
        let (d, e, l, rr) = (
            r.random_range(0.0..2.0),
            r.random_range(0.0..1.0),
            r.random_range(0.0..5.0),
            r.random_range(0.0..1.0),
        );
        let p: f64 = r.random_range(0.05..0.5);
        let base = rho_max(sigma, d, e, l, rr, p).unwrap();
        let up = r.random_range(0.0..1.0);
        let bumped = [
            rho_max(sigma, d + up, e, l, rr, p).unwrap(),
            rho_max(sigma, d, e + up, l, rr, p).unwrap(),
            rho_max(sigma, d, e, l + up, rr, p).unwrap(),
            rho_max(sigma, d, e, l, rr + up, p).unwrap(),
        ];
        violations += bumped.iter().filter(|&&b| b < base).count();
        if rho_max(sigma, d, e, l, rr, (p + up).min(1.0)).unwrap() > base {
            violations += 1;
        }
        let s2 = (sigma + up).min(1.0);
        if err_bound(s2, rr) > err_bound(sigma, rr) {
            violations += 1;
        }
    }
    check(
        values_ok && cond_ok && violations == 0,
        format!("rho 0.598 err {:.1e}, L·δ collapse {collapse}, err_bound {eb}, condition fails with rhs {want_rhs:.4}: {cond_ok}, monotonicity violations {violations}/100 points", (ex - 0.598).abs()),
    )
}

fn c11_mia() -> Outcome {
    let retain = [0.99; 5];
    let test = [0.6; 5];
    let low = mia_from_confidences(&retain, &test, &[0.5, 0.6, 0.55]).unwrap().mia;
    let high = mia_from_confidences(&retain, &test, &[0.99, 1.0]).unwrap().mia;
    let cube = |v: &[f64]| v.iter().map(|x| x * x * x).collect::<Vec<_>>();
    let (mut invariant, mut exhaustive) = (0, 0);
    for seed in 0..50 {
        let (r, t, f) = common::mia_instance(seed);
        let got = mia_from_confidences(&r, &t, &f).unwrap().mia;
        if mia_from_confidences(&cube(&r), &cube(&t), &cube(&f)).unwrap().mia == got {
            invariant += 1;
        }
        if common::exhaustive_mia(&r, &t, &f) == got {
            exhaustive += 1;
        }
    }
    check(
        low == 100.0 && high == 0.0 && invariant == 50 && exhaustive == 50,
        format!("separated {low}/{high}, cube-invariant {invariant}/50, exhaustive match {exhaustive}/50"),
    )
}

fn c12_isolation(m: &RunManifest) -> Outcome {
    let isolated = ["retrain", "ft", "coun", "l1_sparse", "not"];
    let cells: Vec<_> = m
        .cells
        .iter()
        .filter(|c| isolated.contains(&c.method.as_str()))
        .collect();
    let reads: usize = cells.iter().map(|c| c.forget_reads).sum();
    let ngp: usize = m
        .cells
        .iter()
        .filter(|c| c.method == "neggrad_plus")
        .map(|c| c.forget_reads)
        .sum();
    check(
        !cells.is_empty() && reads == 0 && cells.iter().all(|c| c.is_ok()),
        format!(
            "{} retain-only cells, {reads} forget reads (neggrad_plus for contrast: {ngp})",
            cells.len()
        ),
    )
}

fn c13_determinism(dir_a: &std::path::Path, dir_b: &std::path::Path, cfg: &ExperimentConfig) -> Outcome {
    let a = std::fs::read(dir_a.join(cfg.hash()).join("results.csv")).map_err(|e| e.to_string())?;
    let b = std::fs::read(dir_b.join(cfg.hash()).join("results.csv")).map_err(|e| e.to_string())?;
    check(
        a == b && !a.is_empty(),
        format!("results.csv {} vs {} bytes, identical: {}", a.len(), b.len(), a == b),
    )
}

/// Dense-layer FLOPs per sample: `2·in·out` plus bias plus ReLU.
fn dense_flops(dims: &[usize], relu: bool) -> u128 {
    dims.windows(2)
        .map(|w| (2 * w[0] * w[1] + w[1] + if relu { w[1] } else { 0 }) as u128)
        .sum()
}

fn c14_flops(m: &RunManifest) -> Outcome {
    let spec = &m.config.dataset;
    let mc = ModelConfig::default();
    let mut dims = vec![spec.input_dim];
    dims.extend(&mc.hidden_dims);
    dims.push(mc.repr_dim);
    let e = dense_flops(&dims, true);
    let h = dense_flops(&[mc.repr_dim, spec.num_classes], false);
    let epochs = TrainConfig::unlearning(0).epochs as u128;
    let (train, test) = benchmark_data();
    let mut ok = true;
    let mut ratio = 0.0;
    for seed in &m.config.seeds {
        let cell = |name: &str| {
            m.cells
                .iter()
                .find(|c| c.seed == *seed && c.method == name && c.cl_module == "none")
                .and_then(|c| c.metrics.as_ref())
                .map(|x| x.flops)
        };
        let n = split_random(&train, test.len(), 0.1, *seed).unwrap().retain_idx.len() as u128;
        let (Some(f), Some(c)) = (cell("ft"), cell("coun")) else {
            return Err(format!("seed {seed}: missing ft/coun"));
        };
        ok &= f == epochs * n * 3 * (e + h) && c == epochs * n * 3 * (2 * e + h);
        ratio = c as f64 / f as f64;
    }
    ok &= ratio > 1.0 && ratio <= 2.0;

    let model = original_for(&train, 0);
    let s = split_random(&train, test.len(), 0.1, 0).unwrap();
    let mut linear = true;
    for method in [MethodConfig::from(Method::Ft), MethodConfig::from(Method::coun())] {
        let f = |epochs| {
            let cfg = TrainConfig {
                epochs,
                ..TrainConfig::unlearning(0)
            };
            run_method(&model, &train, &s, &method, &cfg).unwrap().flops
        };
        let one = f(1);
        linear &= [2usize, 3, 5].iter().all(|&k| f(k) == k as u128 * one);
    }
    check(
        ok && linear,
        format!("CoUn/FT = {ratio:.4}, hand count matches: {ok}, exact linearity in epochs: {linear}"),
    )
}

fn split_chain(stages: &[UnlearnRun], theta_o: &Model) -> bool {
    stages[0].initial_model == *theta_o && stages.windows(2).all(|w| w[1].initial_model == w[0].final_model)
}

fn c15_sequential(dir: &std::path::Path) -> Outcome {
    let cfg = ExperimentConfig {
        scenario: ScenarioConfig::Sequential {
            step_ratio: 0.02,
            stages: 5,
            epochs_per_stage: 10,
        },
        seeds: vec![0],
        methods: vec![MethodEntry::named("coun")],
        theory: None,
        ..ExperimentConfig::benchmark()
    };
    let manifest = run_experiment(&cfg, dir, 1).map_err(|e| e.to_string())?;
    let mut stage_gaps = Vec::new();
    for stage in 1..=5 {
        let find = |name: &str| manifest.cells.iter().find(|c| c.stage == stage && c.method == name);
        let reference = find("retrain").and_then(|c| c.metrics.as_ref()).map(|m| m.avg_gap);
        let gap = find("coun").and_then(|c| c.metrics.as_ref()).and_then(|m| m.avg_gap);
        match (reference, gap) {
            (Some(Some(z)), Some(g)) if z == 0.0 => stage_gaps.push(g),
            _ => return Err(format!("stage {stage} missing retrain reference or CoUn avg_gap")),
        }
    }

    let (train, test) = benchmark_data();
    let schedule: Vec<Split> = sequential_schedule(&train, test.len(), 0.02, 5, 0).unwrap();
    let nested = is_nested(&schedule);
    let sizes: Vec<usize> = schedule.iter().map(|s| s.forget_idx.len()).collect();
    let theta_o = original_for(&train, 0);
    let runs = sequential_unlearn(
        &theta_o,
        &train,
        &schedule,
        &Method::coun().into(),
        &TrainConfig::unlearning(0),
        10,
    )
    .unwrap();
    let chained = split_chain(&runs, &theta_o);
    let epochs: usize = runs.iter().map(|r| r.per_epoch_log.len()).sum();
    let gaps: Vec<String> = stage_gaps.iter().map(|g| format!("{g:.2}")).collect();
    check(
        nested && chained && epochs == 50 && sizes == [16, 32, 48, 64, 80],
        format!(
            "nested {nested}, forget sizes {sizes:?}, chained {chained}, {epochs} epochs, CoUn avg_gap per stage [{}]",
            gaps.join(", ")
        ),
    )
}

fn run(n: usize, name: &str, failures: &mut usize, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match out {
        Ok(d) => println!("PASS {n:>2} {name}: {d} [{secs:.1}s]"),
        Err(d) => {
            *failures += 1;
            println!("FAIL {n:>2} {name}: {d} [{secs:.1}s]");
        }
    }
}

fn main() {
    let mut failures = 0;
    run(1, "avg_gap formula parity", &mut failures, c1_avg_gap_parity);
    run(2, "prediction-difference parity", &mut failures, c2_table1_parity);
    run(3, "autodiff vs finite differences", &mut failures, c3_gradients);
    run(4, "loss oracles", &mut failures, c4_loss_oracles);
    run(5, "degenerate equivalences", &mut failures, c5_degenerate_equivalence);
    run(10, "bound formulas", &mut failures, c10_theory);
    run(11, "membership attack soundness", &mut failures, c11_mia);

    let scratch = tempfile::tempdir().expect("tempdir");
    run(6, "class-wise retrain emulation", &mut failures, || {
        c6_classwise_retrain(scratch.path())
    });

    let cfg = ExperimentConfig::benchmark();
    let (dir_a, dir_b) = (
        tempfile::tempdir().expect("tempdir"),
        tempfile::tempdir().expect("tempdir"),
    );
    let start = Instant::now();
    let bench = run_experiment(&cfg, dir_a.path(), 1);
    println!("     benchmark run: {:.1}s", start.elapsed().as_secs_f64());
    match &bench {
        Ok(m) => {
            run(7, "CoUn vs FT ordering", &mut failures, || c7_ordering(m));
            run(8, "CL module boost", &mut failures, || c8_cl_boost(m));
            run(9, "retain vs forget view-gap risk", &mut failures, || c9_lemma1(m));
            run(12, "forget-data isolation", &mut failures, || c12_isolation(m));
            run(13, "determinism", &mut failures, || {
                run_experiment(&cfg, dir_b.path(), 1).map_err(|e| e.to_string())?;
                c13_determinism(dir_a.path(), dir_b.path(), &cfg)
            });
            run(14, "FLOP accounting", &mut failures, || c14_flops(m));
        }
        Err(e) => {
            for (n, name) in [
                (7, "CoUn vs FT ordering"),
                (8, "CL module boost"),
                (9, "retain vs forget view-gap risk"),
                (12, "forget-data isolation"),
                (13, "determinism"),
                (14, "FLOP accounting"),
            ] {
                failures += 1;
                println!("FAIL {n:>2} {name}: benchmark run failed: {e}");
            }
        }
    }
    run(15, "sequential unlearning", &mut failures, || {
        c15_sequential(scratch.path())
    });

    println!("{} of 15 criteria passed", 15 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
