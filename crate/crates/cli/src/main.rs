use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rmtprune::experiment::{
    self, analyze_container, emit_plot_data, run_experiment, sparsify_sweep, verify_rmt, EpochRow, PlotConfig,
    PlotKind, RunConfig, Task, VerifyConfig,
};
use rmtprune::nn::container;
use rmtprune::Error;

#[derive(Parser, Debug)]
#[command(name = "rmtprune", version, about = "Marchenko-Pastur pruning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent seeds (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Paired normal/pruned training runs.
    Train(Common),
    /// Spectral audit of a saved weight container.
    Analyze(Common),
    /// Accuracy against parameter count under magnitude sparsification.
    SparsifySweep(Common),
    /// Fixed-seed checks of the random-matrix machinery.
    VerifyRmt {
        #[command(flatten)]
        common: Common,
        /// Replace every property tolerance.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Plot-ready tables from run outputs.
    PlotData {
        #[command(flatten)]
        common: Common,
        /// accuracy_vs_epoch, acc_vs_params or esd_histogram.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// 0-based slot for histograms of a container.
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(e) if e.is_numerical() => 3,
        _ => 1,
    }
}

fn load_config(common: &Common, expect: &[Task]) -> rmtprune::Result<RunConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config PATH is required for this subcommand".into()))?;
    let mut cfg = RunConfig::from_path(path)?;
    if !expect.contains(&cfg.task) {
        return Err(Error::Config(format!(
            "{}: task {:?} does not match this subcommand (expected one of {expect:?})",
            path.display(),
            cfg.task
        )));
    }
    apply_overrides(&mut cfg, common);
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, common: &Common) {
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn fmt_acc(a: Option<f64>) -> String {
    a.map_or_else(|| "-".into(), |v| format!("{:.4}", v))
}

fn train(common: &Common) -> anyhow::Result<()> {
    let cfg = load_config(common, &[Task::Classify, Task::Regress])?;
    let progress = |r: &EpochRow| {
        eprintln!(
            "seed {} {:<6} epoch {:>3}  train_loss {:.4}  test_loss {:.4}  test_acc {}  params {}",
            r.seed,
            r.variant.name(),
            r.epoch,
            r.train_loss,
            r.test_loss,
            fmt_acc(r.test_acc),
            r.params
        )
    };
    let report = run_experiment::<f32>(&cfg, &progress)?;
    for &seed in &report.seeds {
        for v in [experiment::Variant::Normal, experiment::Variant::Pruned] {
            if let Some(r) = report.final_row(seed, v) {
                println!(
                    "seed {seed} {}: test_acc {} test_loss {:.5} params {} ({:+.2}% vs initial)",
                    v.name(),
                    fmt_acc(r.test_acc),
                    r.test_loss,
                    r.params,
                    100.0 * (r.params as f64 / report.initial_params as f64 - 1.0)
                );
            }
        }
    }
    println!("outputs written to {}", cfg.out_dir.display());
    Ok(())
}

fn analyze(common: &Common) -> anyhow::Result<()> {
    let cfg = load_config(common, &[Task::Analyze])?;
    let a = cfg.analyze.as_ref().expect("validated");
    let (layers, spectra) = analyze_container(&a.container, a.alpha, a.beta, a.gamma)?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    for (l, s) in spectra.iter().enumerate() {
        s.write_csv(&cfg.out_dir.join(format!("layer{l}_spectrum.csv")))?;
    }
    write_json(&cfg.out_dir.join("analysis.json"), &layers)?;
    for l in &layers {
        println!(
            "layer {} ({}x{}{}): lambda_+ {} gof {} ({}) spikes {} recommended_k {} split_params {}",
            l.layer,
            l.out_dim,
            l.in_dim,
            if l.split { ", split" } else { "" },
            l.lambda_plus.map_or("-".into(), |v| format!("{v:.5}")),
            l.gof_statistic.map_or("-".into(), |v| format!("{v:.4}")),
            match (&l.skipped, l.gof_pass) {
                (Some(why), _) => format!("skipped: {why}"),
                (None, true) => "pass".into(),
                (None, false) => "fail".into(),
            },
            l.spike_count.map_or("-".into(), |v| v.to_string()),
            l.recommended_k.map_or("-".into(), |v| v.to_string()),
            l.split_params.map_or("-".into(), |v| v.to_string()),
        );
    }
    Ok(())
}

fn sweep(common: &Common) -> anyhow::Result<()> {
    let cfg = load_config(common, &[Task::SparsifySweep])?;
    let s = cfg.sweep.as_ref().expect("validated");
    let net = container::load::<f32>(&s.container)?;
    let (_, test) = cfg.dataset.as_ref().expect("validated").load::<f32>()?;
    let points = sparsify_sweep(&net, &s.xi_grid, &test, s.baseline_params)?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let mut csv = String::from("xi,total,nonzero,kept_fraction,accuracy,loss\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.xi,
            p.total,
            p.nonzero,
            p.kept_fraction,
            p.accuracy.map_or(String::new(), |a| a.to_string()),
            p.loss
        ));
        println!(
            "xi {:<10} nonzero {:>9} ({:6.2}%) accuracy {}",
            p.xi,
            p.nonzero,
            100.0 * p.kept_fraction,
            fmt_acc(p.accuracy)
        );
    }
    let path = cfg.out_dir.join("sweep.csv");
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    write_json(&cfg.out_dir.join("sweep.json"), &points)
}

fn verify(common: &Common, tolerance: Option<f64>) -> anyhow::Result<()> {
    let (mut vc, out) = match &common.config {
        Some(_) => {
            let cfg = load_config(common, &[Task::VerifyRmt])?;
            (cfg.verify.clone().unwrap_or_default(), Some(cfg.out_dir))
        }
        None => (VerifyConfig::default(), common.out.clone()),
    };
    if let Some(s) = common.seed {
        vc.seed = s;
    }
    if let Some(t) = tolerance {
        if !(t >= 0.0) {
            return Err(Error::Config(format!("--tolerance must be >= 0, got {t}")).into());
        }
        vc.tolerance = Some(t);
    }
    let report = verify_rmt(&vc);
    for p in &report.properties {
        println!(
            "{} {:<28} error {:<12.4e} tolerance {:<10.1e} {}",
            if p.pass { "PASS" } else { "FAIL" },
            p.name,
            p.error,
            p.tolerance,
            p.detail
        );
    }
    println!(
        "{} passed, {} failed (seed {})",
        report.passed, report.failed, report.seed
    );
    if let Some(dir) = out {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("verify.json"), &report)?;
    }
    Ok(())
}

fn plot(
    common: &Common,
    kind: Option<&str>,
    input: Option<PathBuf>,
    layer: Option<usize>,
    bins: Option<usize>,
) -> anyhow::Result<()> {
    let (base, out) = match &common.config {
        Some(path) => {
            let mut cfg = RunConfig::from_path(path)?;
            apply_overrides(&mut cfg, common);
            (cfg.plot.clone(), cfg.out_dir)
        }
        None => (None, common.out.clone().unwrap_or_else(|| PathBuf::from("out"))),
    };
    let kind: PlotKind = match (kind, &base) {
        (Some(k), _) => k.parse()?,
        (None, Some(b)) => b.kind,
        (None, None) => return Err(Error::Config("--kind (or a `plot` config section) is required".into()).into()),
    };
    let p = PlotConfig {
        kind,
        input: input
            .or_else(|| base.as_ref().map(|b| b.input.clone()))
            .ok_or_else(|| Error::Config("--input (or plot.input) is required".into()))?,
        layer: layer.or(base.as_ref().map(|b| b.layer)).unwrap_or(0),
        bins: bins.or(base.as_ref().map(|b| b.bins)).unwrap_or(50),
    };
    if p.bins == 0 {
        return Err(Error::Config("--bins must be >= 1".into()).into());
    }
    let (csv, side) = emit_plot_data(p.kind, &p.input, p.layer, p.bins, &out)?;
    println!("wrote {} and {}", csv.display(), side.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = match &cli.command {
        Command::Train(c) | Command::Analyze(c) | Command::SparsifySweep(c) => c,
        Command::VerifyRmt { common, .. } | Command::PlotData { common, .. } => common,
    };
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match &cli.command {
        Command::Train(c) => train(c),
        Command::Analyze(c) => analyze(c),
        Command::SparsifySweep(c) => sweep(c),
        Command::VerifyRmt { common, tolerance } => verify(common, *tolerance),
        Command::PlotData {
            common,
            kind,
            input,
            layer,
            bins,
        } => plot(common, kind.as_deref(), input.clone(), *layer, *bins),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
