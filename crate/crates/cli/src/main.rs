//! `cullab`: pretrain a toy base model, run sequential unlearning, ablate,
//! evaluate and summarise. Exit codes: 0 success, 2 usage or config error,
//! 3 base-model gate failure, 4 numerical divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cullab::experiment::pipeline::{eval_run_dir, report_csv, Experiment};
use cullab::experiment::{ExperimentConfig, SCHEMA};
use cullab::Error;

/// Overrides the output directory when `--out` is not given.
const OUT_ENV: &str = "CULLAB_OUT";
const DEFAULT_OUT: &str = "cullab-out";

#[derive(Parser)]
#[command(name = "cullab", version, about = "Continual unlearning on toy conditional diffusion models")]
struct Cli {
    /// Print the annotated default configuration and exit.
    #[arg(long)]
    print_schema: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; falls back to $CULLAB_OUT, then the config, then ./cullab-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, replacing the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sequential unlearning steps, replacing the config's.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base model and check its quality gates.
    Pretrain(ExperimentArgs),
    /// Run the configured unlearning sequence from the base model, resuming if interrupted.
    Run(ExperimentArgs),
    /// Run and evaluate the ablation variants from the shared base model.
    Ablate {
        #[command(flatten)]
        args: ExperimentArgs,
        /// Run only this variant.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate a run directory into metrics.csv and metrics.json.
    Eval { dir: PathBuf },
    /// Summarise evaluated run directories, one row per run.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write report.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::PretrainGate(_) => 3,
        Error::Divergence { .. } | Error::NonFinite { .. } => 4,
        _ => 2,
    }
}

fn experiment(a: ExperimentArgs) -> Result<Experiment, Error> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    let out = a
        .out
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Experiment::new(cfg, out)
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Pretrain(a) => {
            let x = experiment(a)?;
            let report = x.pretrain()?;
            println!("base model passed: {}", report.summary());
            println!("wrote {}", x.base_dir().display());
        }
        Command::Run(a) => {
            let x = experiment(a)?;
            let ckpts = x.run()?;
            println!("wrote {} checkpoints to {}", ckpts.len() - 1, x.run_dir().display());
        }
        Command::Ablate { args, variant } => {
            let x = experiment(args)?;
            for (name, r) in x.ablate(variant.as_deref())? {
                let f = r.final_row();
                println!(
                    "{name}: UA {} RRA {} GRA {} CAS {}",
                    fmt(f.ua),
                    fmt(f.rra),
                    fmt(Some(f.gra)),
                    fmt(f.cas)
                );
            }
        }
        Command::Eval { dir } => {
            let r = eval_run_dir(&dir)?;
            print!("{}", r.to_csv());
        }
        Command::Report { dirs, out } => {
            let csv = report_csv(&dirs)?;
            if let Some(out) = out {
                cullab::experiment::artifacts::write_artifact(
                    &out.join(cullab::experiment::artifacts::REPORT_FILE),
                    csv.as_bytes(),
                )?;
            }
            print!("{csv}");
        }
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_schema {
        print!("{SCHEMA}");
        return ExitCode::SUCCESS;
    }
    let Some(cmd) = cli.command else {
        eprintln!("cullab: no command given; see `cullab --help`");
        return ExitCode::from(2);
    };
    match execute(cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cullab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
