use std::path::PathBuf;
use std::process::ExitCode;

use alterlang_core::pipeline::{run_experiment, run_stage, ExperimentConfig, Seeds, Stage};
use anyhow::{bail, Context};
use clap::Parser;

/// Train language-ID probes on a toy MLM, erase them with INLP, push masked
/// states toward either language and report the resulting shifts.
#[derive(Debug, Parser)]
#[command(name = "alterlang", version)]
struct Args {
    /// JSON experiment config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory (overrides `out_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Master seed; every stage seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,

    /// One of gen-corpus, train-mlm, export-states, select-iters,
    /// train-inlp, alter-eval, alpha-sweep, report, or `run` for all.
    #[arg(long, default_value = "run")]
    stage: String,

    /// Push magnitude for alter-eval and the completion samples.
    #[arg(long)]
    alpha: Option<f64>,

    /// Fix the number of INLP directions instead of selecting it.
    #[arg(long)]
    iters: Option<usize>,

    /// K for the MLM-top-K selection criterion.
    #[arg(long)]
    topk: Option<usize>,
}

fn build_config(args: &Args) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seeds = Seeds::from_master(seed);
    }
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
    }
    if let Some(m) = args.iters {
        config.iterations = Some(m);
    }
    if let Some(k) = args.topk {
        config.topk = k;
    }
    config.validate().context("invalid config")?;
    let out = match args.out.clone().or_else(|| config.out_dir.clone()) {
        Some(out) => out,
        None => bail!("no output directory: pass --out or set out_dir in the config"),
    };
    Ok((config, out))
}

fn run(args: &Args) -> anyhow::Result<()> {
    let (config, out) = build_config(args)?;
    if args.stage == "run" {
        let bundle = run_experiment(&config, &out)?;
        if let Some(m) = &bundle.metrics {
            print!("{}", m.to_csv());
        }
    } else {
        let stage: Stage = args.stage.parse()?;
        run_stage(&config, &out, stage)?;
    }
    log::info!("outputs in {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
