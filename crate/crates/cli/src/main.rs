use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sde_core::baseline::{baseline_distance, BaselineSpec};
use sde_core::hsic::{estimate_hsic_distribution, hsic, make_split};
use sde_core::io::{read_activation_file, write_activation_file};
use sde_core::kernel::{resolve_bandwidth, resolve_pair};
use sde_core::synth::{make_synthetic_set, SynthSpec};
use sde_core::toy::{run_fixed_batch_experiment, ToyConfig};
use sde_core::verdict::{check_reference_sanity, evaluate_target, f1_protocol, unlearn_eval, MatchConfig, ReferenceBundle};
use sde_core::{Activations64, BandwidthRule, KernelSpec, Result, SdeError, Verdict};

mod report;

use report::Report;

#[derive(Debug, Clone, Parser, Serialize, Deserialize)]
#[command(name = "sde", version, about = "Split-half dependence evaluation for subset membership and unlearning audits")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CommonArgs {
    /// Kernel bandwidth: `sqrt-dim`, `median`, or a positive number.
    #[arg(long, global = true, default_value = "sqrt-dim")]
    pub sigma: String,

    /// Permutations per split-half distribution.
    #[arg(short = 'T', long = "permutations", global = true, default_value_t = 200)]
    pub permutations: usize,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Histogram bins for the Jensen–Shannon divergence.
    #[arg(long, global = true, default_value_t = 32)]
    pub bins: usize,

    /// Significance level of the reference-set gate.
    #[arg(long, global = true, default_value_t = 0.01)]
    pub alpha: f64,

    /// Write the JSON report here (it is also printed to stdout).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub out: Option<PathBuf>,

    /// Worker threads. Affects speed only.
    #[arg(long, global = true, env = "SDE_THREADS")]
    #[serde(skip)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Mmd,
    Wasserstein,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    SqrtDim,
    Median,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// HSIC between two paired activation files.
    Hsic { x: PathBuf, y: PathBuf },

    /// Split-half dependence distribution of one subset.
    Splithalf { subset: PathBuf },

    /// In-training decision for one target subset.
    Classify {
        target: PathBuf,
        #[arg(long)]
        it: PathBuf,
        #[arg(long)]
        oot: PathBuf,
    },

    /// Out-of-training rate over random subsets of a forgetting pool.
    Evaluate {
        forget_pool: PathBuf,
        #[arg(long)]
        it: PathBuf,
        #[arg(long)]
        oot: PathBuf,
        /// Rows per target subset.
        #[arg(short = 'n', default_value_t = 1000)]
        subset_size: usize,
        /// Number of target subsets.
        #[arg(short = 'm', default_value_t = 100)]
        m: usize,
    },

    /// F1 over labeled target subsets (positive class: in-training).
    F1 {
        /// Directory holding the target activation files.
        #[arg(long)]
        targets: PathBuf,
        /// CSV with header `file,in_training`.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        it: PathBuf,
        #[arg(long)]
        oot: PathBuf,
    },

    /// Nearest-reference decision under a distribution distance.
    Baseline {
        metric: Metric,
        target: PathBuf,
        #[arg(long)]
        it: PathBuf,
        #[arg(long)]
        oot: PathBuf,
        /// Directions for sliced Wasserstein.
        #[arg(long, default_value_t = 64)]
        projections: usize,
    },

    /// Fixed-batch membership experiment on a from-scratch MLP.
    ToyExperiment {
        #[arg(long, default_value_t = 10_000)]
        points: usize,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 128)]
        hidden: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        /// Whole batches forming the same-batch subset.
        #[arg(long, default_value_t = 8)]
        same_batches: usize,
        /// Write the per-epoch curve as CSV.
        #[arg(long)]
        #[serde(skip)]
        csv: Option<PathBuf>,
    },

    /// Resolve a bandwidth rule on activation data.
    Bandwidth { rule: Rule, x: PathBuf, y: Option<PathBuf> },

    /// Write a synthetic activation set with a shared component.
    Synth {
        #[arg(short = 'n', default_value_t = 1000)]
        rows: usize,
        #[arg(short = 'd', default_value_t = 64)]
        dim: usize,
        #[arg(short = 's', default_value_t = 0.0)]
        strength: f64,
        #[arg(short = 'o')]
        #[serde(skip)]
        output: PathBuf,
    },

    /// Re-run the configuration echoed in an earlier report.
    Replay { report: PathBuf },
}

fn load(path: &PathBuf) -> Result<Activations64> {
    read_activation_file(path)
        .map(|a| a.to_f64())
        .map_err(|e| match e {
            SdeError::Io(io) => SdeError::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
            other => other,
        })
}

impl CommonArgs {
    fn kernel(&self) -> Result<KernelSpec> {
        let rule: BandwidthRule = self.sigma.parse()?;
        if let BandwidthRule::Fixed(s) = rule {
            return KernelSpec::new(rule).resolved(s);
        }
        Ok(KernelSpec::new(rule))
    }

    fn match_config(&self) -> Result<MatchConfig> {
        Ok(MatchConfig { kernel: self.kernel()?, permutations: self.permutations, bins: self.bins, alpha: self.alpha })
    }

    fn bundle(&self, it: &PathBuf, oot: &PathBuf) -> Result<ReferenceBundle<f64>> {
        ReferenceBundle::build(load(it)?, load(oot)?, self.match_config()?, self.seed)
    }
}

fn parse_labels(text: &str) -> Result<Vec<(String, bool)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("file")) {
            continue;
        }
        let (file, label) = line
            .split_once(',')
            .ok_or(SdeError::Parse { line: i + 1, msg: "expected `file,in_training`".into() })?;
        let label = match label.trim().to_ascii_lowercase().as_str() {
            "1" | "true" | "in" => true,
            "0" | "false" | "out" => false,
            other => return Err(SdeError::Parse { line: i + 1, msg: format!("bad label {other:?}") }),
        };
        out.push((file.trim().to_string(), label));
    }
    Ok(out)
}

fn run(cli: &Cli, report: &mut Report) -> Result<()> {
    let common = &cli.common;
    match &cli.command {
        Command::Hsic { x, y } => {
            let (x, y) = (load(x)?, load(y)?);
            let kernel = common.kernel()?;
            let (sx, sy) = resolve_pair(&kernel, &x, &y)?;
            let value = hsic(&x, &y, &kernel)?;
            report.set_results(serde_json::json!({ "hsic": value, "sigma_x": sx, "sigma_y": sy, "n": x.rows() }));
        }
        Command::Splithalf { subset } => {
            let s = load(subset)?;
            let plan = make_split(&s, common.seed)?;
            let mut dist = estimate_hsic_distribution(&s, &common.kernel()?, common.permutations, common.seed)?;
            dist.subset_id = subset.display().to_string();
            report.set_results(serde_json::json!({
                "half_size": plan.half_size(),
                "mean": dist.mean(),
                "sigma": dist.kernel.resolved_sigma,
                "values": dist.values,
            }));
        }
        Command::Classify { target, it, oot } => {
            let bundle = common.bundle(it, oot)?;
            let sanity = check_reference_sanity(&bundle, common.alpha)?;
            report.warn_if_gate_failed(&sanity);
            let started = Instant::now();
            let eval = evaluate_target(&load(target)?, &bundle, &target.display().to_string(), common.seed)?;
            report.time("references", bundle.build_seconds);
            report.time("target", started.elapsed().as_secs_f64());
            report.set_results(serde_json::json!({
                "verdict": eval.verdict,
                "sanity": sanity,
                "distributions": {
                    "target": eval.distribution.values,
                    "s_it": bundle.h_it.values,
                    "s_oot": bundle.h_oot.values,
                },
            }));
        }
        Command::Evaluate { forget_pool, it, oot, subset_size, m } => {
            if *m == 0 {
                return Err(SdeError::InvalidParameter("OTR undefined for m = 0".into()));
            }
            let bundle = common.bundle(it, oot)?;
            let pool = load(forget_pool)?;
            let mut eval = unlearn_eval(&pool, &bundle, *subset_size, *m, common.seed)?;
            if let Some(s) = &eval.sanity {
                report.warn_if_gate_failed(s);
            }
            eval.config_echo = report.config_echo.clone();
            for (k, v) in std::mem::take(&mut eval.wall_times) {
                report.time(&k, v);
            }
            let mut value = serde_json::to_value(&eval)?;
            if let Some(obj) = value.as_object_mut() {
                obj.remove("wall_times");
            }
            report.set_results(value);
        }
        Command::F1 { targets, labels, it, oot } => {
            let bundle = common.bundle(it, oot)?;
            let entries = parse_labels(&std::fs::read_to_string(labels)?)?;
            let mut labeled = Vec::with_capacity(entries.len());
            for (file, label) in &entries {
                labeled.push((load(&targets.join(file))?, *label));
            }
            let sanity = check_reference_sanity(&bundle, common.alpha)?;
            report.warn_if_gate_failed(&sanity);
            let mut result = f1_protocol(&labeled, &bundle, common.seed)?;
            for (v, (file, _)) in result.verdicts.iter_mut().zip(&entries) {
                v.target_id = file.clone();
            }
            report.set_results(serde_json::json!({ "f1": result, "sanity": sanity }));
        }
        Command::Baseline { metric, target, it, oot, projections } => {
            let (target, s_it, s_oot) = (load(target)?, load(it)?, load(oot)?);
            let spec = match metric {
                Metric::Mmd => BaselineSpec::mmd(common.kernel()?),
                Metric::Wasserstein => BaselineSpec::sliced_wasserstein(*projections, common.seed),
            };
            let verdict = Verdict::from_distances(
                "target",
                baseline_distance(&target, &s_it, &spec)?,
                baseline_distance(&target, &s_oot, &spec)?,
            );
            report.set_results(serde_json::json!({ "metric": metric, "spec": spec, "verdict": verdict }));
        }
        Command::ToyExperiment { points, dim, batch_size, hidden, epochs, lr, same_batches, csv } => {
            let cfg = ToyConfig {
                n_points: *points,
                d: *dim,
                batch_size: *batch_size,
                hidden: *hidden,
                epochs: *epochs,
                learning_rate: *lr,
                same_batches: *same_batches,
                permutations: common.permutations,
                seed: common.seed,
                ..ToyConfig::default()
            };
            let started = Instant::now();
            let exp = run_fixed_batch_experiment(&cfg)?;
            report.time("experiment", started.elapsed().as_secs_f64());
            if let Some(path) = csv {
                std::fs::write(path, exp.to_csv())?;
            }
            report.set_results(serde_json::to_value(&exp)?);
        }
        Command::Bandwidth { rule, x, y } => {
            let x = load(x)?;
            let y = y.as_ref().map(load).transpose()?;
            let rule = match rule {
                Rule::SqrtDim => BandwidthRule::SqrtDim,
                Rule::Median => BandwidthRule::Median,
            };
            let sigma = resolve_bandwidth(rule, &x, y.as_ref())?;
            report.set_results(serde_json::json!({ "rule": rule.to_string(), "sigma": sigma }));
        }
        Command::Synth { rows, dim, strength, output } => {
            let m = make_synthetic_set(&SynthSpec { n: *rows, d: *dim, strength: *strength, seed: common.seed })?;
            write_activation_file(output, &m.cast::<f32>())?;
            report.set_results(serde_json::json!({ "rows": rows, "dim": dim, "strength": strength }));
        }
        Command::Replay { report: path } => {
            let earlier: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            let echo = earlier
                .get("config_echo")
                .cloned()
                .ok_or_else(|| SdeError::InvalidParameter("report has no config_echo".into()))?;
            let mut replayed: Cli = serde_json::from_value(echo)?;
            if matches!(replayed.command, Command::Replay { .. } | Command::Synth { .. }) {
                return Err(SdeError::InvalidParameter("cannot replay this command".into()));
            }
            replayed.common.out = None;
            let mut inner = Report::new(&replayed)?;
            run(&replayed, &mut inner)?;
            report.set_results(inner.results);
            report.warnings.extend(inner.warnings);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size thread pool: {e}");
        }
    }

    let outcome = Report::new(&cli).and_then(|mut report| {
        let started = Instant::now();
        run(&cli, &mut report)?;
        report.time("total", started.elapsed().as_secs_f64());
        report.emit(cli.common.out.as_deref())
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_degenerate() { 3 } else { 2 })
        }
    }
}
