use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use metadyn::config::RunConfig;
use metadyn::experiment::{run_experiment, ExperimentName};
use metadyn::harness::ScenarioKind;
use metadyn::run::{eval_run, train_run, RunDir};
use metadyn::tensor::Checkpoint;
use metadyn::Error;

/// Root under which run and experiment directories are created.
const OUTPUT_ROOT_VAR: &str = "METADYN_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "metadyn", version, about = "Meta-learned adaptive dynamics models with MPC")]
struct Cli {
    /// Worker threads for evaluation and sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML run configuration; defaults apply to everything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `meta.K=16`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Master seed (same as `--set seed=S`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; otherwise derived from the config hash under the
    /// output root.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = OUTPUT_ROOT_VAR, default_value = "runs")]
    output_root: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train (or train a baseline) into a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from the latest checkpoint of an existing run.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a finished run on a test scenario.
    Eval {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Defaults to the scenario in the run's config.
        #[arg(long)]
        scenario: Option<Scenario>,
    },
    /// Run a named experiment and write its CSV bundle.
    Experiment {
        name: Experiment,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print checkpoint metadata of a run directory or checkpoint file.
    Inspect { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Scenario {
    FastAdaptation,
    Generalization,
}

impl From<Scenario> for ScenarioKind {
    fn from(s: Scenario) -> Self {
        match s {
            Scenario::FastAdaptation => ScenarioKind::FastAdaptation,
            Scenario::Generalization => ScenarioKind::Generalization,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Fig4,
    Sensitivity,
    Distribution,
    Compare,
}

impl From<Experiment> for ExperimentName {
    fn from(e: Experiment) -> Self {
        match e {
            Experiment::Fig4 => ExperimentName::Fig4,
            Experiment::Sensitivity => ExperimentName::Sensitivity,
            Experiment::Distribution => ExperimentName::Distribution,
            Experiment::Compare => ExperimentName::Compare,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Argument(_) => 3,
        Error::Data { .. } | Error::Dimension { .. } => 4,
        Error::Artifact(_) | Error::Json(_) => 5,
        Error::Numeric { .. } => 6,
        Error::Control(_) => 7,
        Error::Io(_) => 8,
    }
}

impl ConfigArgs {
    fn load(&self) -> metadyn::Result<RunConfig> {
        let mut sets = self.sets.clone();
        if let Some(s) = self.seed {
            sets.push(format!("seed={s}"));
        }
        match &self.config {
            Some(p) => RunConfig::load(p, &sets),
            None => RunConfig::parse("", &sets),
        }
    }

    fn dir(&self, cfg: &RunConfig, prefix: &str) -> metadyn::Result<PathBuf> {
        if let Some(o) = &self.out {
            return Ok(o.clone());
        }
        Ok(match &cfg.output_dir {
            Some(d) => self.output_root.join(d),
            None => {
                let hash = cfg.hash()?;
                self.output_root.join(format!("{prefix}_{}", &hash[..12]))
            }
        })
    }
}

fn inspect(path: &Path) -> metadyn::Result<()> {
    if path.is_dir() {
        let dir = RunDir::new(path);
        let cfg = dir.load_config()?;
        println!("config hash: {}", cfg.hash()?);
        println!("method: {}", cfg.method.label());
        let mut shown = false;
        for p in [dir.latest_checkpoint()?, Some(dir.model())].into_iter().flatten() {
            if p.is_file() {
                print_header(&p)?;
                shown = true;
            }
        }
        if !shown {
            return Err(Error::Artifact(format!("no checkpoints in {}", path.display())));
        }
        return Ok(());
    }
    print_header(path)
}

fn print_header(path: &Path) -> metadyn::Result<()> {
    let h = Checkpoint::read_header(path)?;
    println!("{}:", path.display());
    println!("  ordering version: {}", h.ordering_version);
    for b in &h.blocks {
        println!("  block {}: {} values", b.name, b.len);
    }
    if let Some(extra) = h.metadata.get("extra") {
        println!("  metadata: {}", serde_json::to_string(extra)?);
    }
    Ok(())
}

fn run(cli: Cli) -> metadyn::Result<()> {
    let workers = cli.workers.max(1);
    match cli.command {
        Command::Train { cfg, resume } => {
            let config = cfg.load()?;
            let dir = RunDir::new(cfg.dir(&config, config.method.key())?);
            let out = train_run(&config, &dir, resume, None)?;
            if let Some(last) = out.log.last() {
                println!(
                    "iteration {}: meta loss {:.6}, pre {:.6}, post {:.6}",
                    last.iteration, last.meta_loss, last.pre_update_eval_error, last.post_update_eval_error
                );
            }
            println!("{} trained on {} env steps", out.method.variant.label(), out.method.env_steps);
            println!("run directory: {}", dir.root.display());
        }
        Command::Eval { run, scenario } => {
            let dir = RunDir::new(run);
            let kind = match scenario {
                Some(s) => s.into(),
                None => dir.load_config()?.eval.scenario,
            };
            let (report, files) = eval_run(&dir, kind, workers)?;
            let s = report.summary();
            println!(
                "{} on {}: mean return {:.3} (std {:.3}) over {} episodes; median error pre {:.5} post {:.5}",
                s.meta.method, s.meta.scenario, s.mean_return, s.std_return, s.episodes, s.median_pre_error,
                s.median_post_error
            );
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Experiment { name, cfg } => {
            let config = cfg.load()?;
            let name: ExperimentName = name.into();
            let out = cfg.dir(&config, name.key())?;
            run_experiment(name, &config, &out, workers)?;
            println!("results in {}", out.display());
        }
        Command::Inspect { path } => inspect(&path)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
