use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use docqa::harness::{
    gradcheck_suite, run_curve, run_eval, run_preprocess, run_rank, run_synth, run_train,
    Overrides, RunConfig,
};
use docqa::inference::curve_to_csv;
use docqa::training::TrainingMode;
use docqa::Error;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "docqa",
    version,
    about = "Multi-paragraph extractive question answering"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<TrainingMode>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    k_max: Option<usize>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding documents, questions and word vectors.
    #[arg(long, global = true, env = "DOCQA_DATA_DIR")]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus to the data directory.
    Synth,
    /// Tokenize, merge, label and rank paragraphs.
    Preprocess,
    /// Fit the linear paragraph ranker and report selection rates.
    Rank,
    /// Train (or resume) and write a checkpoint.
    Train,
    /// Predict the test split and score it.
    Eval,
    /// EM and F1 for each paragraph budget up to --k-max.
    Curve,
    /// Finite-difference checks of every primitive, layer and objective.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
}

fn parse_mode(s: &str) -> Result<TrainingMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn config(c: &Common) -> docqa::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        mode: c.mode,
        epochs: c.epochs,
        seed: c.seed,
        k_max: c.k_max,
        workers: c.workers,
        out_dir: c.out.clone(),
        data_dir: c.data_dir.clone(),
    });
    cfg.finalize()
}

fn run(cli: &Cli) -> docqa::Result<bool> {
    let cfg = config(&cli.common)?;
    match &cli.command {
        Command::Synth => {
            run_synth(&cfg)?;
            println!("{}", json!({"data_dir": cfg.data_dir}));
        }
        Command::Preprocess => {
            let d = run_preprocess(&cfg)?;
            println!(
                "{}",
                json!({"train": d.train.len(), "test": d.test.len(), "out_dir": cfg.out_dir})
            );
        }
        Command::Rank => println!("{}", serde_json::to_string(&run_rank(&cfg)?)?),
        Command::Train => {
            let metrics = run_train(&cfg)?;
            for m in &metrics {
                println!("{}", serde_json::to_string(m)?);
            }
        }
        Command::Eval => {
            let r = run_eval(&cfg)?;
            println!("{}", json!({"em": r.em, "f1": r.f1, "missing": r.missing}));
        }
        Command::Curve => print!("{}", curve_to_csv(&run_curve(&cfg)?)),
        Command::Gradcheck { points } => {
            let rows =
                docqa::harness::with_workers(&cfg, || gradcheck_suite(*points, cfg.train.seed))??;
            for r in &rows {
                println!(
                    "{:<26} {:<10} {:.3e} {}",
                    r.name,
                    r.group,
                    r.max_rel_error,
                    if r.passed() { "PASS" } else { "FAIL" }
                );
            }
            if let Some(bad) = rows.iter().find(|r| !r.passed()) {
                eprintln!(
                    "{}",
                    json!({"error": "gradcheck", "message": format!("{} error {:e} exceeds {:e}", bad.name, bad.max_rel_error, bad.tolerance)})
                );
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
