use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relsens::config::Method;
use relsens::pipeline::{self, CurveMode, RunOptions};
use relsens::Error;

/// Value-of-information sensitivity for structural reliability problems.
#[derive(Parser)]
#[command(name = "relsens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration file without running it.
    Validate { config: PathBuf },
    /// Compute EVPPI for every input and write the report files.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// EVPPI against the cost ratio c_r/c_F; writes sweep.csv.
    Sweep {
        config: PathBuf,
        /// `logspace:start:stop:count`, `linspace:start:stop:count` or a comma list.
        #[arg(long, default_value = "logspace:1e-5:0.3:40")]
        ratios: String,
        #[command(flatten)]
        opts: Overrides,
    },
    /// FORM EVPPI against |α| for a set of reliability indices; writes curves.csv.
    FormCurves {
        /// Reliability indices, comma separated.
        #[arg(long, value_delimiter = ',', conflicts_with = "pf")]
        beta: Vec<f64>,
        /// Failure probabilities, comma separated, as an alternative to --beta.
        #[arg(long, value_delimiter = ',')]
        pf: Vec<f64>,
        /// Cost ratio c_r/c_F (safety mode).
        #[arg(long, default_value_t = 1e-3)]
        ratio: f64,
        #[arg(long, default_value = "safety")]
        mode: String,
        #[arg(long, default_value = "out/form_curves")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Overrides {
    /// Seed for sampling methods; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// analytic, form, mc or subset.
    #[arg(long)]
    method: Option<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

impl Overrides {
    fn into_options(self) -> Result<RunOptions, Error> {
        Ok(RunOptions {
            seed: self.seed,
            method: self.method.as_deref().map(str::parse::<Method>).transpose()?,
            out: self.out,
            threads: self.threads,
        })
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Validate { config } => {
            let s = pipeline::cmd_validate(&config)?;
            println!("{}: valid", config.display());
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Run { config, opts } => {
            let r = pipeline::cmd_run(&config, &opts.into_options()?)?;
            if let Some(p) = r.report.get("pf") {
                println!("pF = {p}");
            }
            if let Some(d) = r.report.get("design") {
                println!("a_opt = {}, pF(a_opt) = {}", d["a_opt"], d["pf_opt"]);
            }
            print!("{}", std::fs::read_to_string(r.out_dir.join("evppi_table.csv"))?);
            println!("wrote {}", r.out_dir.display());
        }
        Command::Sweep { config, ratios, opts } => {
            let path = pipeline::cmd_sweep(&config, &ratios, &opts.into_options()?)?;
            println!("wrote {}", path.display());
        }
        Command::FormCurves { beta, pf, ratio, mode, out } => {
            let betas = if pf.is_empty() {
                beta
            } else {
                pf.iter().map(|&p| pipeline::beta_of_pf(p)).collect::<Result<_, _>>()?
            };
            if betas.is_empty() {
                return Err(Error::Config { path: "beta".into(), message: "give --beta or --pf".into() });
            }
            let path = pipeline::cmd_form_curves(&betas, ratio, mode.parse::<CurveMode>()?, &out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
