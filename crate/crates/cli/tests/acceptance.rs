//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use sde_core::hsic::{hsic, permutation_test};
use sde_core::io::write_activation_file;
use sde_core::kernel::resolve_pair;
use sde_core::rng::{derive_seed, stream_rng};
use sde_core::stats::{jsd, jsd_of_samples, mann_whitney_one_sided, Histogram, UMethod};
use sde_core::synth::{make_synthetic_set, SynthSpec};
use sde_core::toy::{evaluate_checkpoint, generate_toy_data, run_fixed_batch_experiment, ToyConfig, ToyModel};
use sde_core::verdict::{is_in_training, unlearn_eval, MatchConfig, ReferenceBundle};
use sde_core::{ActivationMatrix, KernelSpec};

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn hsic_oracle() -> Check {
    let started = Instant::now();
    let mut rng = common::rng(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=16);
        let (dx, dy) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let x = common::normal_matrix(n, dx, &mut rng);
        let y = common::normal_matrix(n, dy, &mut rng);
        let kernel = KernelSpec::sqrt_dim();
        let (sx, sy) = resolve_pair(&kernel, &x, &y).map_err(|e| e.to_string())?;
        let got = hsic(&x, &y, &kernel).map_err(|e| e.to_string())?;
        worst = worst.max((got - common::naive_hsic(&x, &y, sx, sy).max(0.0)).abs());
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(worst <= 1e-10 && secs < 5.0, format!("max |err| = {worst:.2e}, {secs:.2}s"))
}

fn centering_annihilation() -> Check {
    let mut rng = common::rng(7);
    let mut nonzero = 0;
    for case in 0..100 {
        let n = rng.random_range(2..=40);
        let d = rng.random_range(1..=8);
        let c: f64 = rng.random_range(-5.0..5.0);
        let x = ActivationMatrix::from_flat(n, d, vec![c; n * d], "").unwrap();
        let y = common::normal_matrix(n, rng.random_range(1..=8), &mut rng);
        let kernel = if case % 2 == 0 { KernelSpec::sqrt_dim() } else { KernelSpec::fixed(rng.random_range(0.1..3.0)) };
        if hsic(&x, &y, &kernel).map_err(|e| e.to_string())? != 0.0 {
            nonzero += 1;
        }
    }
    ensure(nonzero == 0, format!("{nonzero}/100 non-zero"))
}

fn null_calibration() -> Check {
    let started = Instant::now();
    let kernel = KernelSpec::sqrt_dim();
    let (mut below, mut above) = (0, 0);
    for seed in 0..100u64 {
        let mut rng = common::rng(seed);
        let x = common::normal_matrix(200, 8, &mut rng);
        let y = common::normal_matrix(200, 8, &mut rng);
        let noise = common::normal_matrix(200, 8, &mut rng);
        let dep: Vec<f64> = x.values().iter().zip(noise.values()).map(|(a, e)| a + 0.1 * e).collect();
        let dep = ActivationMatrix::from_flat(200, 8, dep, "").unwrap();

        let indep = permutation_test(&x, &y, &kernel, 200, seed).map_err(|e| e.to_string())?;
        if indep.observed < indep.null_quantile(0.99) {
            below += 1;
        }
        let coupled = permutation_test(&x, &dep, &kernel, 200, seed).map_err(|e| e.to_string())?;
        if coupled.observed > coupled.null_quantile(0.99) {
            above += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(
        below >= 95 && above >= 95 && secs < 120.0,
        format!("independent below q99: {below}/100, dependent above q99: {above}/100, {secs:.1}s"),
    )
}

fn mann_whitney_exhaustive() -> Check {
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for n in 2..=8usize {
        for mask in 1u32..(1 << n) - 1 {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for r in 0..n {
                if mask & (1 << r) != 0 { a.push(r as f64) } else { b.push(r as f64) }
            }
            let r = mann_whitney_one_sided(&a, &b).map_err(|e| e.to_string())?;
            if r.method != UMethod::Exact {
                return Err(format!("{a:?} vs {b:?} not evaluated exactly"));
            }
            worst = worst.max((r.p_value - common::enumerated_u_pvalue(&a, &b)).abs());
            cases += 1;
        }
    }
    ensure(worst < 1e-15, format!("{cases} rank configurations, max |err| = {worst:.1e}"))
}

fn jsd_suite() -> Check {
    let mut rng = common::rng(3);
    for _ in 0..500 {
        let a: Vec<f64> = (0..rng.random_range(1..300)).map(|_| rng.random_range(-4.0..4.0)).collect();
        let b: Vec<f64> = (0..rng.random_range(1..300)).map(|_| rng.random_range(-2.0..6.0)).collect();
        let ab = jsd_of_samples(&a, &b, 32).map_err(|e| e.to_string())?;
        let ba = jsd_of_samples(&b, &a, 32).map_err(|e| e.to_string())?;
        if ab.to_bits() != ba.to_bits() || !(0.0..=1.0).contains(&ab) {
            return Err(format!("asymmetric or out of range: {ab} vs {ba}"));
        }
        if jsd_of_samples(&a, &a, 32).map_err(|e| e.to_string())? != 0.0 {
            return Err("identical samples gave non-zero divergence".into());
        }
    }
    let h = |m: Vec<f64>| Histogram { bin_edges: vec![0.0, 0.5, 1.0], masses: m };
    let disjoint = jsd(&h(vec![1.0, 0.0]), &h(vec![0.0, 1.0])).unwrap();
    let disjoint_smoothed = jsd_of_samples(&[0.0; 50], &[1.0; 50], 32).unwrap();
    let hand = jsd(&h(vec![1.0, 0.0]), &h(vec![0.5, 0.5])).unwrap();
    ensure(
        (disjoint - 1.0).abs() <= 1e-8 && (disjoint_smoothed - 1.0).abs() <= 1e-8 && (hand - 0.311278).abs() <= 1e-6,
        format!("disjoint {disjoint}, smoothed disjoint {disjoint_smoothed:.10}, hand case {hand:.7}"),
    )
}

fn fixed_batch_experiment() -> Check {
    let started = Instant::now();
    let cfg = ToyConfig::default();
    let exp = run_fixed_batch_experiment(&cfg).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let mut epoch0: Vec<f64> = vec![exp.records[0].p_value];
    for seed in 1..5 {
        let c = ToyConfig { seed, ..cfg };
        let data = generate_toy_data(&c).map_err(|e| e.to_string())?;
        epoch0.push(evaluate_checkpoint(&c, &data, &ToyModel::init(&c), 0).map_err(|e| e.to_string())?.p_value);
    }
    epoch0.sort_by(f64::total_cmp);
    let median0 = epoch0[2];
    ensure(
        exp.final_p_value < 1e-6 && median0 > 0.01 && exp.gap_spearman > 0.8 && secs < 300.0,
        format!(
            "final p = {:.3e} (need < 1e-6), epoch-0 median p = {median0:.3e} (need > 0.01), gap Spearman = {:.3} (need > 0.8), train acc {:.3}, {secs:.1}s",
            exp.final_p_value, exp.gap_spearman, exp.train_accuracy
        ),
    )
}

fn gradient_check() -> Check {
    let cfg = ToyConfig::default();
    let data = generate_toy_data(&cfg).map_err(|e| e.to_string())?;
    let model = ToyModel::init(&cfg);
    let (xs, labels) = (&data.x[..32 * data.d], &data.labels[..32]);
    let (_, grad) = model.loss_and_grad(xs, labels);
    let mut rng = stream_rng(41, 0);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let idx = rng.random_range(0..model.param_count());
        let (mut plus, mut minus) = (model.clone(), model.clone());
        *plus.param_mut(idx) += h;
        *minus.param_mut(idx) -= h;
        let numeric = (plus.loss(xs, labels) - minus.loss(xs, labels)) / (2.0 * h);
        let analytic = grad.param(idx);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
    }
    ensure(worst < 1e-6, format!("max relative error {worst:.2e} over 20 coordinates"))
}

fn synthetic_end_to_end() -> Check {
    let started = Instant::now();
    let (n, d) = (1000, 64);
    let synth = |s: f64, seed: u64| make_synthetic_set(&SynthSpec { n, d, strength: s, seed }).unwrap();
    let (mut oot_ok, mut it_ok) = (0, 0);
    for trial in 0..100u64 {
        let bundle = ReferenceBundle::build(
            synth(3.0, derive_seed(trial, 1)),
            synth(0.0, derive_seed(trial, 2)),
            MatchConfig::default(),
            trial,
        )
        .map_err(|e| e.to_string())?;
        if !is_in_training(&synth(0.0, derive_seed(trial, 3)), &bundle, trial).map_err(|e| e.to_string())?.in_training {
            oot_ok += 1;
        }
        if is_in_training(&synth(3.0, derive_seed(trial, 4)), &bundle, trial).map_err(|e| e.to_string())?.in_training {
            it_ok += 1;
        }
    }

    let bundle = ReferenceBundle::build(synth(3.0, 11), synth(0.0, 12), MatchConfig::default(), 5).unwrap();
    let mut otr_exact = true;
    for (strength, m) in [(0.0, 7), (1.0, 9), (3.0, 5)] {
        let pool = make_synthetic_set(&SynthSpec { n: 2 * n, d, strength, seed: 13 }).unwrap();
        let r = unlearn_eval(&pool, &bundle, n, m, 5).map_err(|e| e.to_string())?;
        let counted = r.verdicts.iter().filter(|v| !v.in_training).count();
        otr_exact &= r.oot_count == counted && r.otr == counted as f64 / m as f64 && r.m == m;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(
        oot_ok >= 90 && it_ok >= 90 && otr_exact,
        format!("s=0 out-of-training {oot_ok}/100, s=3 in-training {it_ok}/100, OTR exact: {otr_exact}, {secs:.1}s"),
    )
}

fn timed_audit(size: usize) -> f64 {
    let d = 512;
    let synth = |n: usize, s: f64, seed: u64| make_synthetic_set(&SynthSpec { n, d, strength: s, seed }).unwrap();
    let (s_it, s_oot, pool) = (synth(size, 3.0, 1), synth(size, 0.0, 2), synth(2 * size, 1.0, 3));
    let started = Instant::now();
    let bundle = ReferenceBundle::build(s_it, s_oot, MatchConfig::default(), 0).unwrap();
    unlearn_eval(&pool, &bundle, size, 100, 0).unwrap();
    started.elapsed().as_secs_f64()
}

fn performance_envelope() -> Check {
    let small = timed_audit(1000);
    let large = timed_audit(2000);
    let ratio = large / small;
    ensure(
        large < 577.0 && (3.0..=6.0).contains(&ratio),
        format!("|S|=1000: {small:.1}s, |S|=2000: {large:.1}s (limit 577s), ratio {ratio:.2}"),
    )
}

fn sde(args: &[&str], threads: Option<&str>, dir: &Path) -> Result<serde_json::Value, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sde"));
    cmd.args(args).current_dir(dir).env_remove("SDE_THREADS");
    if let Some(t) = threads {
        cmd.args(["--threads", t]);
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| format!("{args:?}: {e}"))
}

fn cli_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let write = |name: &str, n: usize, s: f64, seed: u64| {
        let m = make_synthetic_set(&SynthSpec { n, d: 16, strength: s, seed }).unwrap();
        write_activation_file(dir.join(name), &m.cast::<f32>()).unwrap();
    };
    write("it.act", 200, 3.0, 1);
    write("oot.act", 200, 0.0, 2);
    write("target.act", 200, 2.0, 3);
    write("pool.act", 600, 1.0, 4);
    std::fs::create_dir(dir.join("targets")).unwrap();
    let mut labels = String::from("file,in_training\n");
    for i in 0..6u64 {
        let label = i % 2 == 0;
        let file = format!("targets/t{i}.act");
        write(&file, 200, if label { 3.0 } else { 0.0 }, 10 + i);
        labels.push_str(&format!("t{i}.act,{}\n", u8::from(label)));
    }
    std::fs::write(dir.join("labels.csv"), labels).unwrap();

    let commands: Vec<Vec<&str>> = vec![
        vec!["hsic", "it.act", "oot.act"],
        vec!["--sigma", "median", "hsic", "it.act", "target.act"],
        vec!["splithalf", "it.act", "-T", "200", "--seed", "7"],
        vec!["classify", "target.act", "--it", "it.act", "--oot", "oot.act"],
        vec!["evaluate", "pool.act", "--it", "it.act", "--oot", "oot.act", "-n", "200", "-m", "6", "--out", "eval.json"],
        vec!["f1", "--targets", "targets", "--labels", "labels.csv", "--it", "it.act", "--oot", "oot.act"],
        vec!["baseline", "mmd", "target.act", "--it", "it.act", "--oot", "oot.act"],
        vec!["baseline", "wasserstein", "target.act", "--it", "it.act", "--oot", "oot.act", "--projections", "32"],
        vec!["bandwidth", "median", "it.act", "oot.act"],
        vec!["bandwidth", "sqrt-dim", "it.act"],
        vec!["toy-experiment", "--points", "1280", "--hidden", "16", "--epochs", "3", "--same-batches", "4", "-T", "50"],
        vec!["replay", "eval.json"],
    ];
    let mut checked = 0;
    let mut evaluate_results = None;
    for args in &commands {
        let runs = [sde(args, None, dir)?, sde(args, None, dir)?, sde(args, Some("1"), dir)?, sde(args, Some("3"), dir)?];
        let canon: Vec<String> = runs.iter().map(|r| r["results"].to_string()).collect();
        if canon.iter().any(|c| c != &canon[0]) {
            return Err(format!("{args:?}: results differ between runs"));
        }
        match args[0] {
            "evaluate" => evaluate_results = Some(canon[0].clone()),
            "replay" if evaluate_results.as_ref() != Some(&canon[0]) => {
                return Err("replayed report differs from the original".into());
            }
            _ => {}
        }
        checked += 1;
    }

    let mut synth_bytes = Vec::new();
    for (i, threads) in [None, None, Some("1"), Some("3")].into_iter().enumerate() {
        let name = format!("s{i}.act");
        sde(&["synth", "-n", "300", "-d", "8", "-s", "2", "--seed", "1", "-o", &name], threads, dir)?;
        synth_bytes.push(std::fs::read(dir.join(&name)).unwrap());
    }
    if synth_bytes.iter().any(|b| b != &synth_bytes[0]) {
        return Err("synth output differs between runs".into());
    }
    checked += 1;
    ensure(true, format!("{checked} invocations identical across 4 runs each (threads default/default/1/3), replay reproduces"))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Check)> = vec![
        ("hsic oracle equivalence", hsic_oracle),
        ("centering annihilation", centering_annihilation),
        ("null calibration", null_calibration),
        ("mann-whitney exact vs enumeration", mann_whitney_exhaustive),
        ("jsd suite", jsd_suite),
        ("fixed-batch experiment", fixed_batch_experiment),
        ("gradient check", gradient_check),
        ("synthetic pipeline end-to-end", synthetic_end_to_end),
        ("performance envelope", performance_envelope),
        ("cli determinism", cli_determinism),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {failures} failing");
    if failures > 0 {
        std::process::exit(1);
    }
}
