//! `floodrag` command-line driver. Each subcommand runs one pipeline stage
//! over the run directory named in the configuration.
//!
//! Exit status: 0 on success, 1 on error, 2 when a stage finished but some
//! rows failed validation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use floodrag_core::config::{AblationConfig, RunConfig};
use floodrag_core::model::records_to_csv;
use floodrag_core::pipeline::{MetricsReport, Pipeline, StageReport};
use floodrag_core::synthetic::{generate, SyntheticSpec};

#[derive(Parser)]
#[command(
    name = "floodrag",
    version,
    about = "Retrieval-augmented flood damage nowcasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides the configured output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Overrides the configured training CSV.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Overrides the configured test CSV.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Overrides the configured mock script.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Answer unscripted mock prompts with the rule-based responder.
    #[arg(long)]
    synthetic_fallback: bool,
    /// Run the numeric stages on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Per-boundary divergence profile of the training predictors.
    Profile(Common),
    /// Text modes for training and test rows.
    Textmode(Common),
    /// Reasoning trajectories for the knowledge base.
    BuildKb(Common),
    /// Prototype and hard-example libraries per HUC12 and globally.
    Freeshots(Common),
    /// Predictions for the test rows.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Ablation configuration (I, II, III or IV).
        #[arg(long)]
        ablation: Option<AblationConfig>,
    },
    /// Prediction and reasoning metrics of the last predict run.
    Evaluate(Common),
    /// Runs configurations I to IV and tabulates them.
    Ablation(Common),
    /// Every stage from profile to evaluate.
    Run(Common),
    /// Writes a seeded synthetic train/test pair.
    Synth {
        /// Directory for train.csv and test.csv.
        #[arg(short, long, default_value = "data")]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        records: usize,
        #[arg(long, default_value_t = 140)]
        train: usize,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(t) = &common.train {
        cfg.train_path = t.clone();
    }
    if let Some(t) = &common.test {
        cfg.test_path = t.clone();
    }
    if let Some(s) = &common.script {
        cfg.mock.script = Some(s.clone());
    }
    if common.synthetic_fallback {
        cfg.mock.synthetic_fallback = true;
    }
    if common.sequential {
        cfg.parallel = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pipeline(common: &Common) -> Result<Pipeline> {
    Ok(Pipeline::new(load_config(common)?)?)
}

fn report_stage(r: &StageReport) -> bool {
    println!("{}: {} ok, {} failed", r.stage, r.ok, r.failed);
    r.is_clean()
}

fn report_metrics(m: &MetricsReport) {
    println!(
        "config {}: {} targets, {} scored, {} failed, {} downgrades",
        m.config, m.n_targets, m.n_scored, m.n_failed, m.downgrades_fired
    );
    if let Some(p) = &m.prediction {
        println!(
            "macro_f1 {:.4}  accuracy {:.4}  severity {:.4}",
            p.macro_f1, p.overall_accuracy, p.severity_score
        );
    }
    if let Some(r) = &m.reasoning {
        println!("LRA {:.4}  SFC {:.4}  FDC {:.4}", r.lra, r.sfc, r.fdc);
    }
}

fn write_synth(out: &Path, spec: &SyntheticSpec) -> Result<()> {
    let (train, test) = generate(spec)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, rows) in [("train.csv", &train), ("test.csv", &test)] {
        let p = out.join(name);
        std::fs::write(&p, records_to_csv(rows))
            .with_context(|| format!("writing {}", p.display()))?;
        println!("wrote {} rows to {}", rows.len(), p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    Ok(match cli.command {
        Command::Profile(c) => {
            let p = pipeline(&c)?;
            let profile = p.profile()?;
            println!(
                "salient set: {:?}",
                profile
                    .salient_set
                    .iter()
                    .map(|f| f.key())
                    .collect::<Vec<_>>()
            );
            true
        }
        Command::Textmode(c) => report_stage(&pipeline(&c)?.textmode()?),
        Command::BuildKb(c) => report_stage(&pipeline(&c)?.build_kb()?),
        Command::Freeshots(c) => {
            let libs = pipeline(&c)?.freeshots()?;
            for (scope, lib) in &libs {
                println!("library {scope}: {} entries", lib.n_entries);
            }
            true
        }
        Command::Predict { common, ablation } => {
            let mut cfg = load_config(&common)?;
            if let Some(a) = ablation {
                cfg.ablation = a;
            }
            report_stage(&Pipeline::new(cfg)?.predict()?)
        }
        Command::Evaluate(c) => {
            let m = pipeline(&c)?.evaluate()?;
            report_metrics(&m);
            m.n_failed == 0
        }
        Command::Ablation(c) => {
            let p = pipeline(&c)?;
            let (rows, reports) = p.ablation()?;
            for r in &rows {
                report_metrics(&r.metrics);
            }
            reports.iter().all(StageReport::is_clean)
        }
        Command::Run(c) => {
            let (reports, m) = pipeline(&c)?.run_all()?;
            let clean = !reports.iter().map(report_stage).collect::<Vec<_>>().contains(&false);
            report_metrics(&m);
            clean
        }
        Command::Synth {
            out,
            seed,
            records,
            train,
        } => {
            let spec = SyntheticSpec {
                seed,
                n_records: records,
                n_train: train,
                ..SyntheticSpec::default()
            };
            write_synth(&out, &spec)?;
            true
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
