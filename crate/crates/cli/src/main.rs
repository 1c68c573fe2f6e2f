use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use repgan::datasets::{parse_points_csv, write_points_csv};
use repgan::harness::{
    append_summary_row, parse_train_job, run_experiment, run_training, sample_method, validate_config,
    write_chains_csv, MethodKind, MethodSpec, RunOptions, DEFAULT_DRS_BURN_IN,
};
use repgan::metrics::{evaluate, parse_target, pooled_acceptance_ratio, MetricSettings};
use repgan::nets::GanModel;
use repgan::oracle::{run_suite, Suite};
use repgan::samplers::GammaRule;

#[derive(Parser)]
#[command(name = "repgan", version, about = "Latent MCMC sampling for toy GANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a training job (or the training part of an experiment config).
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw samples from a saved model with one method.
    Sample {
        #[arg(long)]
        model: PathBuf,
        /// gan, drs, mh, ddls or rep.
        #[arg(long)]
        method: MethodKind,
        /// Langevin step size (ddls and rep only).
        #[arg(long)]
        tau: Option<f64>,
        /// Chain length, counting the initial sample.
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 1000)]
        chains: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// DRS burn-in size.
        #[arg(long)]
        burn_in: Option<usize>,
        /// DRS acceptance percentile.
        #[arg(long)]
        gamma_percentile: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        single_thread: bool,
    },
    /// Run oracle checks and print a JSON report.
    Verify {
        /// all, balance, pushforward or stationarity.
        #[arg(long, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a samples CSV against a target.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        /// `grid:N_SIDE:SPACING:STD` or `swiss-roll:NOISE`.
        #[arg(long)]
        target: String,
        /// Summary CSV to append a row to.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Row label in the summary; defaults to the samples file stem.
        #[arg(long)]
        label: Option<String>,
    },
    /// Run an experiment config (or replay a manifest) end to end.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        single_thread: bool,
    },
}

type CliResult = Result<bool, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Train { config, out } => {
            let job = parse_train_job(&read(&config)?)?;
            run_training(&job, &out)?;
            info!("wrote model to {}", out.join("model.json").display());
            Ok(true)
        }
        Command::Sample {
            model,
            method,
            tau,
            steps,
            chains,
            seed,
            burn_in,
            gamma_percentile,
            out,
            single_thread,
        } => sample(
            &model,
            MethodSpec {
                name: None,
                method,
                tau,
                gamma: gamma_percentile.map(GammaRule::Percentile),
                burn_in: burn_in.or((method == MethodKind::Drs).then_some(DEFAULT_DRS_BURN_IN)),
            },
            steps,
            chains,
            seed,
            &out,
            single_thread,
        ),
        Command::Verify { suite, seed, out } => {
            let report = run_suite(suite, seed)?;
            let json = serde_json::to_string_pretty(&report)?;
            println!("{json}");
            if let Some(p) = out {
                fs::write(p, &json)?;
            }
            for c in &report.checks {
                eprintln!("{} {}", if c.pass { "PASS" } else { "FAIL" }, c.name);
            }
            Ok(report.pass)
        }
        Command::Eval {
            samples,
            target,
            summary,
            label,
        } => {
            let target = parse_target(&target)?;
            let points = parse_points_csv(fs::File::open(&samples)?)?;
            let report = evaluate(&points, &target, &MetricSettings::default(), None)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(p) = summary {
                let label = label.unwrap_or_else(|| {
                    samples
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default()
                });
                append_summary_row(&p, &label, "external", None, &report)?;
            }
            Ok(true)
        }
        Command::Run {
            config,
            out,
            single_thread,
        } => {
            let cfg = validate_config(&read(&config)?)?;
            let outcome = run_experiment(
                &cfg,
                &RunOptions {
                    single_thread,
                    output_dir: out,
                },
            )?;
            for r in &outcome.results {
                let cov = r
                    .report
                    .modes_covered
                    .as_ref()
                    .map(|m| format!(" modes {}/{}", m.covered, m.total))
                    .unwrap_or_default();
                let acc = r
                    .report
                    .acceptance_ratio
                    .map(|a| format!(" acceptance {a:.3}"))
                    .unwrap_or_default();
                println!("{}:{cov}{acc}", r.label);
            }
            println!("run directory: {}", outcome.dir.display());
            Ok(true)
        }
    }
}

fn read(p: &Path) -> Result<String, Box<dyn std::error::Error>> {
    fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()).into())
}

fn sample(
    model_path: &Path,
    spec: MethodSpec,
    steps: usize,
    chains: usize,
    seed: u64,
    out: &Path,
    single_thread: bool,
) -> CliResult {
    if spec.method.is_chain() && spec.tau.is_none() && spec.method != MethodKind::MhGan {
        return Err(format!("--tau is required for {}", spec.method.as_str()).into());
    }
    if let Some(t) = spec.tau {
        if !(t > 0.0 && t.is_finite()) {
            return Err(format!("--tau must be > 0, got {t}").into());
        }
    }
    if !model_path.exists() {
        return Err(repgan::error::Error::MissingCheckpoint(model_path.to_path_buf()).into());
    }
    let model = GanModel::load(model_path)?;
    let output = sample_method(&model, &spec, chains, steps, seed, !single_thread)?;
    fs::create_dir_all(out)?;
    let label = spec.label();
    write_points_csv(fs::File::create(out.join(format!("samples_{label}.csv")))?, &output.samples)?;
    if let Some(recs) = &output.records {
        write_chains_csv(fs::File::create(out.join(format!("chains_{label}.csv")))?, recs)?;
        if let Some(a) = pooled_acceptance_ratio(recs) {
            println!("{label}: acceptance ratio {a:.4}");
        }
    }
    println!("{label}: {} samples written to {}", output.samples.len(), out.display());
    Ok(true)
}
