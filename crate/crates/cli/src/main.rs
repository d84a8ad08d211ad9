use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use evdecode::ablate::Arm;
use evdecode::commands::{self, TrainHeadsArgs};
use evdecode::config::RunConfig;
use evdecode_core::fusion::FusionMode;
use evdecode_core::synth::SynthConfig;
use evdecode_core::tuning::{TemperatureCriterion, TemporalObjective, TuneOptions};

#[derive(Parser)]
#[command(name = "evdecode", version, about = "Fuse, tune, decode and evaluate multi-label video event streams")]
struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true, env = "EVDECODE_WORKERS")]
    workers: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Generator seed (overrides the config file).
        #[arg(long)]
        seed: Option<u64>,
        /// Generator settings (TOML); missing keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Taxonomy to generate for (defaults to the built-in one).
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Train head ensembles on feature matrices and write their streams.
    TrainHeads {
        #[arg(long)]
        taxonomy: PathBuf,
        /// Training feature matrix (binary container).
        #[arg(long)]
        features: PathBuf,
        /// Training frame labels (JSONL), rows in the feature order.
        #[arg(long)]
        labels: PathBuf,
        /// Ensemble spec (JSON); defaults to two backbones of five heads.
        #[arg(long)]
        heads: Option<PathBuf>,
        /// Features to predict on (defaults to the training features).
        #[arg(long, requires = "predict_labels")]
        predict_features: Option<PathBuf>,
        /// Frame labels giving video ids and lengths of the prediction rows.
        #[arg(long, requires = "predict_features")]
        predict_labels: Option<PathBuf>,
        /// Output head streams (JSONL).
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive fusion weights from validation streams.
    FuseWeights {
        #[command(flatten)]
        data: DataArgs,
        /// Use equal weights for the heads of each backbone.
        #[arg(long)]
        uniform_models: bool,
        /// Use equal weights for the backbones.
        #[arg(long)]
        uniform_backbones: bool,
        /// Restrict fusion to these backbones.
        #[arg(long, value_delimiter = ',')]
        backbone: Vec<u32>,
        /// Output weights (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also write the validation statistics behind the weights.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Choose the calibration temperature for a weights file.
    Calibrate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        weights: PathBuf,
        /// Candidate temperatures, comma separated.
        #[arg(long, default_value = "0.5,0.75,1,1.5,2,3")]
        temperature_grid: String,
        /// nll, mean-f1 or frame-map.
        #[arg(long, default_value = "nll")]
        objective: String,
        /// Output weights with the chosen temperature.
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune temperature, decoding parameters and class thresholds.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        tuning: TuneArgs,
        /// Decoding variant: full, per-label-only or tuple-based.
        #[arg(long, default_value = "full")]
        arm: String,
        /// Output tuning report (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse, calibrate and decode streams into events.
    Decode {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Tuning report from `tune`.
        #[arg(long)]
        tune: PathBuf,
        /// Head streams (JSONL).
        #[arg(long)]
        streams: PathBuf,
        /// Output events (CSV).
        #[arg(long)]
        out: PathBuf,
    },
    /// Temporal mAP at IoU 0.5 and 0.95.
    Eval {
        #[arg(long)]
        taxonomy: PathBuf,
        /// Predicted events (CSV).
        #[arg(long)]
        pred: PathBuf,
        /// Ground truth: frame labels (.jsonl) or events (.csv).
        #[arg(long)]
        gt: PathBuf,
        /// Output directory for eval.json and eval.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every ablation arm and write a comparison table.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the whole pipeline, skipping stages whose inputs are unchanged.
    Run {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    taxonomy: PathBuf,
    /// Head streams (JSONL).
    #[arg(long)]
    streams: PathBuf,
    /// Frame ground truth (JSONL).
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    /// Threshold search target: map50, map95 or mean.
    #[arg(long)]
    objective: Option<String>,
    /// Maximum local-search cycles.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Initial local-search step.
    #[arg(long)]
    delta0: Option<f64>,
    /// Candidate temperatures, comma separated.
    #[arg(long)]
    temperature_grid: Option<String>,
    /// Temperature criterion: nll, mean-f1 or frame-map.
    #[arg(long)]
    temperature_objective: Option<String>,
}

impl TuneArgs {
    fn apply(&self, opts: &mut TuneOptions) -> Result<()> {
        if let Some(o) = &self.objective {
            opts.search.objective = TemporalObjective::parse(o)?;
        }
        if let Some(m) = self.max_iters {
            opts.search.max_iters = m;
        }
        if let Some(d) = self.delta0 {
            opts.search.delta0 = d;
        }
        if let Some(g) = &self.temperature_grid {
            opts.temperature_grid = commands::parse_floats(g)?;
        }
        if let Some(t) = &self.temperature_objective {
            opts.temperature_criterion = TemperatureCriterion::parse(t)?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus directory, used when no config is given.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Synthetic corpus seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    tuning: TuneArgs,
}

impl RunArgs {
    /// Flags override the file, which overrides defaults.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.data) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(data)) => RunConfig::for_data(data, self.out.clone().unwrap_or_else(|| PathBuf::from("out"))),
            (None, None) => anyhow::bail!("either --config or --data is required"),
        };
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.synth.get_or_insert_with(SynthConfig::default).seed = seed;
        }
        self.tuning.apply(&mut cfg.tune)?;
        Ok(cfg)
    }
}

fn stages_for(arm: &str) -> Result<evdecode_core::decode::DecodeStages> {
    let arm = Arm::parse(arm, None)?;
    anyhow::ensure!(
        matches!(arm, Arm::Full | Arm::PerLabelOnly | Arm::TupleBased),
        "tune --arm accepts full, per-label-only or tuple-based"
    );
    Ok(arm.stages())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            seed,
            config,
            taxonomy,
        } => {
            let mut cfg: SynthConfig = commands::load_toml_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let files = commands::synth(&out, &cfg, taxonomy.as_deref())?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Command::TrainHeads {
            taxonomy,
            features,
            labels,
            heads,
            predict_features,
            predict_labels,
            out,
        } => {
            commands::train_heads(&TrainHeadsArgs {
                taxonomy: &taxonomy,
                features: &features,
                labels: &labels,
                heads: heads.as_deref(),
                predict_features: predict_features.as_deref(),
                predict_labels: predict_labels.as_deref(),
                out: &out,
            })?;
            println!("wrote {}", out.display());
        }
        Command::FuseWeights {
            data,
            uniform_models,
            uniform_backbones,
            backbone,
            out,
            report,
        } => {
            let mode = FusionMode {
                weighted_models: !uniform_models,
                weighted_backbones: !uniform_backbones,
                backbones: (!backbone.is_empty()).then_some(backbone),
            };
            let w = commands::fuse_weights(&data.taxonomy, &data.streams, &data.gt, &mode, &out, report.as_deref())?;
            for (b, beta) in &w.beta {
                println!("backbone {b}: beta {beta:.4}");
            }
        }
        Command::Calibrate {
            data,
            weights,
            temperature_grid,
            objective,
            out,
        } => {
            let grid = commands::parse_floats(&temperature_grid)?;
            let criterion = TemperatureCriterion::parse(&objective)?;
            let (w, scores) =
                commands::calibrate(&data.taxonomy, &weights, &data.streams, &data.gt, &grid, criterion, &out)?;
            for (t, s) in scores {
                println!("T = {t:<6} score {s:.6}");
            }
            println!("chosen T = {}", w.temperature);
        }
        Command::Tune {
            data,
            weights,
            tuning,
            arm,
            out,
        } => {
            let mut opts = TuneOptions {
                stages: stages_for(&arm)?,
                ..TuneOptions::default()
            };
            tuning.apply(&mut opts)?;
            let r = commands::tune(&data.taxonomy, &weights, &data.streams, &data.gt, &opts, &out)?;
            println!("T = {}, objective {:.4}", r.temperature, r.final_objective);
        }
        Command::Decode {
            taxonomy,
            weights,
            tune,
            streams,
            out,
        } => {
            let events = commands::decode(&taxonomy, &weights, &tune, &streams, &out)?;
            println!("wrote {} events to {}", events.len(), out.display());
        }
        Command::Eval { taxonomy, pred, gt, out } => {
            let space = commands::taxonomy(&taxonomy)?;
            let report = commands::eval(&taxonomy, &pred, &gt, &out)?;
            print!("{}", report.to_text(&space));
        }
        Command::Ablate { run } => {
            let table = commands::ablate(&run.resolve()?)?;
            print!("{}", table.to_text());
        }
        Command::Run { run } => {
            let cfg = run.resolve()?;
            let manifest = commands::run(&cfg)?;
            for (name, skipped) in commands::skipped_stages(&manifest) {
                println!("{name:<14} {}", if skipped { "skipped" } else { "done" });
            }
            let eval = std::fs::read_to_string(cfg.out.join("eval.txt")).context("reading eval report")?;
            print!("{eval}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
