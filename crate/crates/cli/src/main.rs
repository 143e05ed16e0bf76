use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use eqprune::config::ExperimentConfig;
use eqprune::experiment::{self, resolve_data, RunArtifacts};
use eqprune::verify::suite::{self, Scope};
use eqprune::{BenefitGradient, BenefitMode, Dataset, EpochMetrics};

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "eqprune", version, about = "Neuron pruning through a participation game")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its run directory.
    #[command(allow_negative_numbers = true)]
    Train {
        /// `key = value` file, or a summary.json from an earlier run.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        quiet: bool,
    },
    /// Train the four reference configurations and print the result table.
    #[command(allow_negative_numbers = true)]
    ReproduceTable {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        overrides: Overrides,
        /// Do not rerun rows that miss their band with the other benefit mode.
        #[arg(long)]
        no_fallback: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Run the oracle checks.
    Verify {
        #[arg(value_parser = parse_scope, default_value = "all")]
        scope: Scope,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Summarize a checkpoint and write its participation.csv.
    Inspect {
        checkpoint: PathBuf,
        /// Defaults to participation.csv next to the checkpoint.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn parse_scope(s: &str) -> Result<Scope, String> {
    s.parse().map_err(|e: eqprune::Error| e.to_string())
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    train_images: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// Directory holding the four MNIST files [env: EQPRUNE_DATA_DIR].
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output root; runs go to `<out>/<name>/`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_theta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    lr_s: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    benefit_mode: Option<BenefitMode>,
    #[arg(long)]
    benefit_gradient: Option<BenefitGradient>,
    #[arg(long)]
    s_update_every: Option<usize>,
    /// Comma-separated hidden widths, e.g. `512,256`.
    #[arg(long)]
    hidden: Option<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        let pairs: [(&str, Option<String>); 15] = [
            ("name", self.name.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("lr_theta", self.lr_theta.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("beta", self.beta.map(|v| v.to_string())),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("eta", self.eta.map(|v| v.to_string())),
            ("lr_s", self.lr_s.map(|v| v.to_string())),
            ("epsilon", self.epsilon.map(|v| v.to_string())),
            ("benefit_mode", self.benefit_mode.map(|v| v.to_string())),
            ("benefit_gradient", self.benefit_gradient.map(|v| v.to_string())),
            ("s_update_every", self.s_update_every.map(|v| v.to_string())),
            ("hidden", self.hidden.clone()),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, &v).map_err(|m| anyhow::anyhow!("--{}: {m}", key.replace('_', "-")))?;
            }
        }
        Ok(())
    }
}

impl DataArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        let d = &mut cfg.data;
        for (slot, arg) in [
            (&mut d.train_images, &self.train_images),
            (&mut d.train_labels, &self.train_labels),
            (&mut d.test_images, &self.test_images),
            (&mut d.test_labels, &self.test_labels),
        ] {
            if arg.is_some() {
                *slot = arg.clone();
            }
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
    }

    fn load(&self, cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
        let paths = resolve_data(cfg, self.data_dir.as_deref())?;
        let (train, test) = paths.load().context("loading MNIST")?;
        Ok((train, test))
    }
}

fn progress(quiet: bool, name: &str, m: &EpochMetrics) {
    if !quiet {
        eprintln!(
            "[{name}] epoch {:>3}  loss {:.4}  acc {:.2}%  sparsity {:.2}%  mean s {:.4}  active {}  residual {:.2e}",
            m.epoch,
            m.train_loss,
            100.0 * m.test_accuracy,
            100.0 * m.sparsity,
            m.mean_participation,
            m.active_neurons,
            m.equilibrium_residual
        );
    }
}

fn report_run(run: &RunArtifacts) {
    let s = &run.outcome.summary;
    println!(
        "{}: accuracy {:.2}% (before pruning {:.2}%), sparsity {:.2}%, {} neurons kept, {:.1}s -> {}",
        run.summary.name,
        100.0 * s.test_accuracy,
        100.0 * s.test_accuracy_before_prune,
        100.0 * s.sparsity,
        s.active_neurons,
        s.wall_clock_seconds,
        run.dir.display()
    );
    if let Some(d) = &s.divergence {
        eprintln!("diverged at epoch {} batch {}: {}", d.epoch, d.batch, d.message);
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Train {
            config,
            data,
            overrides,
            quiet,
        } => {
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            data.apply(&mut cfg);
            overrides.apply(&mut cfg)?;
            cfg.validate()?;
            let (train, test) = data.load(&cfg)?;
            let name = cfg.name.clone();
            let run = experiment::run_experiment(&cfg, &train, &test, None, |m| progress(quiet, &name, m))?;
            report_run(&run);
            Ok(if run.diverged() { EXIT_DIVERGED } else { EXIT_OK })
        }
        Command::ReproduceTable {
            data,
            overrides,
            no_fallback,
            quiet,
        } => {
            let mut base = ExperimentConfig::default();
            data.apply(&mut base);
            overrides.apply(&mut base)?;
            base.validate()?;
            let (train, test) = data.load(&base)?;
            let entries = experiment::reproduce_table(&base, &train, &test, !no_fallback, |n, m| {
                progress(quiet, n, m)
            })?;
            experiment::write_table(&base.out_dir, &entries)?;
            print!("{}", experiment::table_text(&entries));
            let diverged = entries.iter().any(|e| e.runs.iter().any(|r| r.diverged()));
            Ok(if diverged { EXIT_DIVERGED } else { EXIT_OK })
        }
        Command::Verify { scope, seed } => {
            let report = suite::run(scope, seed);
            for c in &report.checks {
                println!("{c}");
            }
            Ok(if report.passed() { EXIT_OK } else { EXIT_VERIFY })
        }
        Command::Inspect { checkpoint, csv } => {
            let csv = csv.unwrap_or_else(|| sibling(&checkpoint, "participation.csv"));
            let report = experiment::inspect(&checkpoint, &csv)?;
            print!("{report}");
            println!("wrote {}", csv.display());
            Ok(EXIT_OK)
        }
    }
}

fn sibling(path: &Path, file: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(file)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
