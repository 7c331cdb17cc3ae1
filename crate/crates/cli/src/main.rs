use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qst_core::config::Config;
use qst_core::oracle::Mutations;
use qst_core::runner::{cmd_calibrate, cmd_figure, cmd_oracle_check, cmd_tomo, CommandOutcome, RunOptions};

#[derive(Parser, Debug)]
#[command(name = "qst", version, about = "Simulate heralded telecom photons stored in a solid-state memory")]
struct Cli {
    /// TOML file merged over the bundled defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; defaults to the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trial budget; 0 gives model curves only.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the model parameters to the anchors and store the calibration.
    Calibrate,
    /// Write one figure (or all) as CSV and SVG.
    Figure {
        /// Figure id (2a, 2b, 2c, 3a, 3b, 3c, 4a, 7, 8, 10a, 10b, 11, 12) or `all`.
        #[arg(long)]
        figure: String,
    },
    /// Simulated state tomography of the three prepared qubits.
    Tomo,
    /// Run the independent cross-checks.
    OracleCheck {
        /// Conjugate the memory filter phase; the causality check must fail.
        #[arg(long)]
        flip_afc_phase: bool,
        /// Use a wrong background-dilution formula; the mixed-statistics check must fail.
        #[arg(long)]
        perturb_g2_formula: bool,
    },
}

fn run(cli: Cli) -> qst_core::Result<CommandOutcome> {
    let config = Config::load(cli.config.as_deref())?;
    let mut opts = RunOptions::new(config, cli.out);
    if let Some(s) = cli.seed {
        opts.seed = s;
    }
    opts.trials = cli.trials;
    opts.workers = cli.workers;
    std::fs::create_dir_all(&opts.out)?;
    match cli.command {
        Command::Calibrate => cmd_calibrate(&opts),
        Command::Figure { figure } => cmd_figure(&opts, &figure),
        Command::Tomo => cmd_tomo(&opts).map(|(o, _)| o),
        Command::OracleCheck { flip_afc_phase, perturb_g2_formula } => {
            cmd_oracle_check(&opts, &Mutations { flip_afc_phase, perturb_g2_formula }).map(|(o, _)| o)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(o) => {
            print!("{}", o.report);
            println!("manifest: {}", o.manifest.display());
            if o.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("one or more checks failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, qst_core::Error::MissingCalibration(_)) {
                eprintln!("run `qst calibrate` with the same --config and --out first");
            }
            ExitCode::from(2)
        }
    }
}
