use std::path::PathBuf;
use std::process::ExitCode;

use causal_egm::datagen::DatasetKind;
use causal_egm::egm::TreatmentKind;
use causal_egm::error::{Error, Result};
use causal_egm::runner::{
    cmd_appendix_b, cmd_benchmark, cmd_estimate, cmd_simulate, cmd_train, Estimate, GridSpec,
    RunConfig,
};
use clap::{Args, Parser, Subcommand};

/// Simulate data, train CausalEGM, estimate effects and run benchmarks.
#[derive(Parser, Debug)]
#[command(name = "causalegm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of training iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a simulated dataset and its true dose-response curve.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
    },
    /// Train one model and save it with its loss trace.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train on this CSV instead of simulated data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a saved model on a dataset.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `observed`, `quantile` or `lo:hi:count`.
        #[arg(long)]
        grid: Option<String>,
        /// Expected treatment kind; must match the model.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Run every configured method over the configured seeds.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Seeds run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Partially fixed encoder-decoder experiment.
    AppendixB {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    if let Some(iterations) = common.iterations {
        config.iterations = iterations;
        config.appendix_b.iterations = iterations;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            common,
            dataset,
            n,
            p,
        } => {
            let mut config = load(&common)?;
            if let Some(d) = dataset {
                config.dataset = DatasetKind::parse(&d)?;
            }
            config.n = n.unwrap_or(config.n);
            config.p = p.unwrap_or(config.p);
            config.validate()?;
            let sim = cmd_simulate(&config, config.seeds[0], &config.out_dir)?;
            println!(
                "wrote {} rows to {}",
                sim.data.n(),
                config.out_dir.join("data.csv").display()
            );
        }
        Command::Train { common, data } => {
            let mut config = load(&common)?;
            if data.is_some() {
                config.data_path = data;
            }
            config.validate()?;
            let (_, trace) = cmd_train(&config, config.seeds[0], &config.out_dir)?;
            if let Some(last) = trace.last() {
                println!("final losses: {last:?}");
            }
        }
        Command::Estimate {
            common,
            model,
            data,
            grid,
            kind,
        } => {
            let mut config = load(&common)?;
            if let Some(g) = grid {
                config.grid = GridSpec::parse(&g)?;
            }
            let kind = kind.as_deref().map(TreatmentKind::parse).transpose()?;
            match cmd_estimate(&config, &model, &data, kind, &config.out_dir)? {
                Estimate::Adrf(e) => println!("estimated the curve at {} points", e.len()),
                Estimate::Binary(e) => println!("ate {}", e.ate),
            }
        }
        Command::Benchmark { common, jobs } => {
            let config = load(&common)?;
            let report = cmd_benchmark(&config, jobs, &config.out_dir)?;
            for row in &report.summary {
                let r = &row.report;
                println!(
                    "{:<26} {:<10} {:.4} ± {:.4}",
                    row.method.as_str(),
                    r.metric,
                    r.mean,
                    r.sd
                );
            }
        }
        Command::AppendixB { common } => {
            let config = load(&common)?;
            config.validate()?;
            let r = cmd_appendix_b(&config, config.seeds[0], &config.out_dir)?;
            println!(
                "theoretical {:.4}, best held-out {:.4} at iteration {}, delta {:.4}",
                r.theoretical, r.best, r.best_iteration, r.delta
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
