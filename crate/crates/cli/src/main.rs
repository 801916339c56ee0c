use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybrid_sod::cli_store::{self, RunConfig, TrainOptions};
use hybrid_sod::data::synth::SynthConfig;
use hybrid_sod::orchestrator::AblationMode;
use hybrid_sod::{Error, Result};

/// Salient object detection from hybrid labels.
#[derive(Parser)]
#[command(name = "hybrid-sod", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the dataset, build groups and write the run manifest.
    Prepare(RunArgs),
    /// Print the iteration schedule.
    Schedule {
        #[command(flatten)]
        run: RunArgs,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Train (or resume) the alternating pipeline.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Stop after this many completed iterations; a later `train` resumes.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Predict saliency maps with a trained saliency network.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score predicted maps against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "dataset")]
        dataset: String,
        /// Directory for the JSON report and PR curve CSV.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        per_image: bool,
        /// Print the JSON report instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic shape dataset.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 48)]
        size: usize,
        #[arg(long, default_value_t = 20)]
        num_real: usize,
        #[arg(long, default_value_t = 40)]
        val: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Configuration file plus flag overrides (flag > file > default).
#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory; relative paths go under $HYBRID_SOD_OUTPUT when set.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// full, m1, m2, m3, no1, no2, no3 or no4.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    num_groups: Option<usize>,
    #[arg(long)]
    num_real: Option<usize>,
    #[arg(long)]
    generate_coarse: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.data {
            cfg.data.root = v.clone();
        }
        if let Some(v) = &self.output {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.mode {
            cfg.ablation_mode = v.parse::<AblationMode>()?;
        }
        if let Some(v) = self.epochs {
            cfg.optimizer.epochs = v;
        }
        if let Some(v) = self.num_groups {
            cfg.data.num_groups = v;
        }
        if let Some(v) = self.num_real {
            cfg.data.num_real = v;
        }
        if self.generate_coarse {
            cfg.data.generate_coarse = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn show_path(p: &Path) -> String {
    p.display().to_string()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(args) => {
            let cfg = args.resolve()?;
            let m = cli_store::cmd_prepare(&cfg)?;
            println!(
                "{}: {} training samples, {} groups, {} iterations",
                show_path(&cfg.resolved_output()),
                m.dataset.train,
                m.partition.num_groups(),
                m.program.len()
            );
        }
        Command::Schedule { run, json } => {
            let cfg = run.resolve()?;
            let s = cli_store::cmd_schedule(cfg.data.num_groups, cfg.data.num_real)?;
            if json {
                println!("{}", serde_json_pretty(&s)?);
            } else {
                print!("{}", s.describe());
            }
        }
        Command::Train { run, stop_after } => {
            let cfg = run.resolve()?;
            let s = cli_store::cmd_train(&cfg, &TrainOptions { stop_after })?;
            match (&s.final_snet, s.finished) {
                (Some(p), true) => println!("finished after {} iterations; final model {}", s.completed, show_path(p)),
                _ => println!("stopped after {} iterations in {}", s.completed, show_path(&s.run_dir)),
            }
        }
        Command::Predict { checkpoint, images, output } => {
            let written = cli_store::cmd_predict(&checkpoint, &images, &output)?;
            println!("wrote {} maps to {}", written.len(), show_path(&output));
        }
        Command::Eval { pred, gt, dataset, output, per_image, json } => {
            let report = cli_store::cmd_eval(&pred, &gt, &dataset, output.as_deref(), per_image)?;
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.table());
            }
        }
        Command::Synth { output, count, size, num_real, val, seed } => {
            let cfg = SynthConfig { count, size, seed, ..SynthConfig::default() };
            cli_store::cmd_synth(&output, &cfg, num_real, val)?;
            println!(
                "wrote {count} images ({num_real} real labels) and {val} validation images to {}",
                show_path(&output)
            );
        }
    }
    Ok(())
}

fn serde_json_pretty<S: serde::Serialize>(v: &S) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
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

fn exit_code(e: &Error) -> u8 {
    e.exit_code().clamp(1, 255) as u8
}
