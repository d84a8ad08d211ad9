//! Subcommand implementations. Each reads its inputs from disk and writes its
//! primary outputs deterministically.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use evdecode_core::decode::DecodeConfig;
use evdecode_core::dhe::{self, EnsembleSpec};
use evdecode_core::fusion::{FusionMode, FusionWeights};
use evdecode_core::streams::{load_events, load_ground_truth, load_streams, write_events, write_streams};
use evdecode_core::synth::{generate_corpus, write_corpus, SynthConfig};
use evdecode_core::taxonomy::load_taxonomy;
use evdecode_core::tuning::{grid_search_temperature, init_thresholds_f1, TemperatureCriterion, TemperatureObjective, TuneOptions, TuneReport};
use evdecode_core::{EventRecord, LabelSpace, ProbStream, Source};

use crate::ablate::{run_ablation, AblationTable};
use crate::config::RunConfig;
use crate::manifest::{digest_config, RunManifest, Stage};
use crate::pipeline::{self, gt_events, Dataset, EvalReport};

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn taxonomy(path: &Path) -> Result<LabelSpace> {
    load_taxonomy(path).with_context(|| format!("loading taxonomy {}", path.display()))
}

pub fn load_weights(path: &Path) -> Result<FusionWeights> {
    let w = FusionWeights::from_json(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
    w.validate()?;
    Ok(w)
}

pub fn load_tune_report(path: &Path, space: &LabelSpace) -> Result<TuneReport> {
    let r = TuneReport::from_json(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
    r.validate(space)?;
    Ok(r)
}

/// Generates a corpus; the taxonomy defaults to the built-in capsule one.
pub fn synth(out: &Path, cfg: &SynthConfig, taxonomy_path: Option<&Path>) -> Result<Vec<PathBuf>> {
    let space = match taxonomy_path {
        Some(p) => taxonomy(p)?,
        None => LabelSpace::default_capsule(),
    };
    let corpus = generate_corpus(cfg, &space)?;
    Ok(write_corpus(&corpus, out)?)
}

pub struct TrainHeadsArgs<'a> {
    pub taxonomy: &'a Path,
    pub features: &'a Path,
    pub labels: &'a Path,
    pub heads: Option<&'a Path>,
    pub predict_features: Option<&'a Path>,
    pub predict_labels: Option<&'a Path>,
    pub out: &'a Path,
}

/// Trains every head of the ensemble and writes their predictions as
/// head streams.
pub fn train_heads(args: &TrainHeadsArgs<'_>) -> Result<()> {
    let space = taxonomy(args.taxonomy)?;
    let features = dhe::read_features(args.features)?;
    let gts = load_ground_truth(args.labels, &space)?;
    let labels = dhe::stack_labels(&gts)?;
    let spec = match args.heads {
        Some(p) => serde_json::from_str::<EnsembleSpec>(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => EnsembleSpec::default_ensemble(),
    }
    .resolve(&labels);

    let (pred_features, pred_gts) = match (args.predict_features, args.predict_labels) {
        (Some(f), Some(l)) => (dhe::read_features(f)?, load_ground_truth(l, &space)?),
        (None, None) => (features.clone(), gts.clone()),
        _ => bail!("--predict-features and --predict-labels must be given together"),
    };

    let streams: Vec<Vec<ProbStream>> = spec
        .heads
        .par_iter()
        .map(|m| {
            let head = dhe::train_head(&features, &labels, &m.spec)
                .with_context(|| format!("training head b{}/m{}", m.backbone, m.model))?;
            log::info!("head b{}/m{}: final loss {:.5}", m.backbone, m.model, head.final_loss());
            let probs = dhe::predict_probs(&head.params, &pred_features)?;
            let source = Source::Head {
                backbone: m.backbone,
                model: m.model,
            };
            Ok(dhe::split_predictions(&probs, &pred_gts, source)?)
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<ProbStream> = streams.into_iter().flatten().collect();
    all.sort_by(|a, b| (a.video_id(), a.source()).cmp(&(b.video_id(), b.source())));
    write_streams(args.out, &all)?;
    Ok(())
}

pub fn fuse_weights(
    taxonomy_path: &Path,
    streams: &Path,
    gt: &Path,
    mode: &FusionMode,
    out: &Path,
    report_out: Option<&Path>,
) -> Result<FusionWeights> {
    let space = taxonomy(taxonomy_path)?;
    let val = Dataset::load(streams, gt, &space)?;
    let (weights, report) = pipeline::fit_weights(&val, mode)?;
    write_text(out, &(weights.to_json()? + "\n"))?;
    if let Some(p) = report_out {
        write_text(p, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(weights)
}

/// Chooses a temperature for existing weights and writes them back.
pub fn calibrate(
    taxonomy_path: &Path,
    weights_path: &Path,
    streams: &Path,
    gt: &Path,
    grid: &[f64],
    criterion: TemperatureCriterion,
    out: &Path,
) -> Result<(FusionWeights, Vec<(f64, f64)>)> {
    let space = taxonomy(taxonomy_path)?;
    let val = Dataset::load(streams, gt, &space)?;
    let mut weights = load_weights(weights_path)?;
    weights.temperature = 1.0;
    let fused = pipeline::fuse(&val.streams, &weights)?;
    let objective = match criterion {
        TemperatureCriterion::Nll => TemperatureObjective::Nll,
        TemperatureCriterion::FrameMap => TemperatureObjective::FrameMap,
        TemperatureCriterion::MeanF1 => {
            let pairs = fused
                .iter()
                .map(|s| (s.probs(), val.gts[s.video_id()].labels()));
            TemperatureObjective::MeanF1 {
                thresholds: init_thresholds_f1(pairs, &space)?,
            }
        }
    };
    let (t, scores) = grid_search_temperature(&fused, &val.gts, grid, &objective)?;
    weights.temperature = t;
    write_text(out, &(weights.to_json()? + "\n"))?;
    Ok((weights, scores))
}

pub fn tune(
    taxonomy_path: &Path,
    weights_path: &Path,
    streams: &Path,
    gt: &Path,
    opts: &TuneOptions,
    out: &Path,
) -> Result<TuneReport> {
    let space = taxonomy(taxonomy_path)?;
    let val = Dataset::load(streams, gt, &space)?;
    let weights = load_weights(weights_path)?;
    let report = pipeline::tune(&val, &weights, &space, &DecodeConfig::default_for(&space), opts)?;
    write_text(out, &(report.to_json()? + "\n"))?;
    Ok(report)
}

/// Fuses with the tuned temperature, decodes and writes the events CSV.
pub fn decode(
    taxonomy_path: &Path,
    weights_path: &Path,
    tune_path: &Path,
    streams: &Path,
    out: &Path,
) -> Result<Vec<EventRecord>> {
    let space = taxonomy(taxonomy_path)?;
    let mut weights = load_weights(weights_path)?;
    let report = load_tune_report(tune_path, &space)?;
    weights.temperature = report.temperature;
    let set = load_streams(streams).with_context(|| format!("loading streams {}", streams.display()))?;
    let fused = pipeline::fuse(&set, &weights)?;
    let events = pipeline::decode(&fused, &space, &report.decode, report.stages)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_events(out, &events)?;
    Ok(events)
}

/// Ground truth given as frame labels (`.jsonl`) or events (`.csv`).
pub fn load_gt_events(path: &Path, space: &LabelSpace) -> Result<Vec<EventRecord>> {
    if path.extension().is_some_and(|e| e == "csv") {
        Ok(load_events(path)?)
    } else {
        Ok(gt_events(&load_ground_truth(path, space)?))
    }
}

/// Scores predicted events; writes `eval.json` and `eval.txt` into `out`.
pub fn eval(taxonomy_path: &Path, pred: &Path, gt: &Path, out: &Path) -> Result<EvalReport> {
    let space = taxonomy(taxonomy_path)?;
    let preds = load_events(pred)?;
    let gts = load_gt_events(gt, &space)?;
    let report = pipeline::evaluate(&preds, &gts, &space)?;
    for v in &report.map_50.excluded_videos {
        log::warn!("video {v} has predictions but no ground-truth events; excluded");
    }
    write_text(&out.join("eval.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_text(&out.join("eval.txt"), &report.to_text(&space))?;
    Ok(report)
}

fn ensure_corpus(cfg: &RunConfig) -> Result<()> {
    if let Some(synth_cfg) = &cfg.synth {
        if !cfg.data.taxonomy_path().is_file() {
            synth(&cfg.data.dir, synth_cfg, None)?;
        }
    }
    Ok(())
}

/// Seven-arm ablation; writes `ablation.csv`, `ablation.txt` and
/// `ablation.json` into the run's output directory.
pub fn ablate(cfg: &RunConfig) -> Result<AblationTable> {
    cfg.check_inputs()?;
    ensure_corpus(cfg)?;
    let space = taxonomy(&cfg.data.taxonomy_path())?;
    let load = |split: &str| Dataset::load(&cfg.data.streams(split), &cfg.data.gt(split), &space);
    let tune_on = load(&cfg.data.tune_split)?;
    let eval_on = load(&cfg.data.eval_split)?;
    let table = run_ablation(&space, &tune_on, &eval_on, &DecodeConfig::default_for(&space), &cfg.tune)?;
    write_text(&cfg.out.join("ablation.csv"), &table.to_csv())?;
    write_text(&cfg.out.join("ablation.txt"), &table.to_text())?;
    write_text(&cfg.out.join("ablation.json"), &(serde_json::to_string_pretty(&table)? + "\n"))?;
    Ok(table)
}

/// Output locations of a full run.
pub struct RunOutputs {
    pub weights: PathBuf,
    pub fusion_report: PathBuf,
    pub tune: PathBuf,
    pub events: PathBuf,
    pub eval_json: PathBuf,
    pub eval_txt: PathBuf,
}

impl RunOutputs {
    pub fn new(out: &Path) -> Self {
        Self {
            weights: out.join("weights.json"),
            fusion_report: out.join("fusion_report.json"),
            tune: out.join("tune.json"),
            events: out.join("events.csv"),
            eval_json: out.join("eval.json"),
            eval_txt: out.join("eval.txt"),
        }
    }
}

/// Full pipeline with per-stage skipping. Returns the manifest.
pub fn run(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.check_inputs()?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let previous = RunManifest::load(&cfg.out);
    let seed = cfg.synth.as_ref().map(|s| s.seed);
    let mut manifest = RunManifest::new(seed, digest_config(cfg)?);
    let data = &cfg.data;
    let tax = data.taxonomy_path();
    let (tune_split, eval_split) = (data.tune_split.as_str(), data.eval_split.as_str());
    let o = RunOutputs::new(&cfg.out);

    if let Some(synth_cfg) = &cfg.synth {
        let mut outputs = vec![tax.clone(), data.dir.join("split.json")];
        for split in ["train", "val", "test"] {
            outputs.extend([data.streams(split), data.gt(split), data.dir.join(format!("gt_events_{split}.csv"))]);
            if synth_cfg.feature_dim > 0 {
                outputs.push(data.dir.join(format!("features_{split}.evfm")));
            }
        }
        Stage {
            name: "synth",
            inputs: vec![],
            outputs,
            config_digest: digest_config(synth_cfg)?,
        }
        .run(previous.as_ref(), &mut manifest, || synth(&data.dir, synth_cfg, None).map(drop))?;
    }

    Stage {
        name: "fuse-weights",
        inputs: vec![tax.clone(), data.streams(tune_split), data.gt(tune_split)],
        outputs: vec![o.weights.clone(), o.fusion_report.clone()],
        config_digest: digest_config(&cfg.fusion)?,
    }
    .run(previous.as_ref(), &mut manifest, || {
        fuse_weights(
            &tax,
            &data.streams(tune_split),
            &data.gt(tune_split),
            &cfg.fusion,
            &o.weights,
            Some(&o.fusion_report),
        )
        .map(drop)
    })?;

    Stage {
        name: "tune",
        inputs: vec![tax.clone(), o.weights.clone(), data.streams(tune_split), data.gt(tune_split)],
        outputs: vec![o.tune.clone()],
        config_digest: digest_config(&cfg.tune)?,
    }
    .run(previous.as_ref(), &mut manifest, || {
        tune(&tax, &o.weights, &data.streams(tune_split), &data.gt(tune_split), &cfg.tune, &o.tune).map(drop)
    })?;

    Stage {
        name: "decode",
        inputs: vec![tax.clone(), o.weights.clone(), o.tune.clone(), data.streams(eval_split)],
        outputs: vec![o.events.clone()],
        config_digest: digest_config(&())?,
    }
    .run(previous.as_ref(), &mut manifest, || {
        decode(&tax, &o.weights, &o.tune, &data.streams(eval_split), &o.events).map(drop)
    })?;

    Stage {
        name: "eval",
        inputs: vec![tax.clone(), o.events.clone(), data.gt(eval_split)],
        outputs: vec![o.eval_json.clone(), o.eval_txt.clone()],
        config_digest: digest_config(&())?,
    }
    .run(previous.as_ref(), &mut manifest, || {
        eval(&tax, &o.events, &data.gt(eval_split), &cfg.out).map(drop)
    })?;

    manifest.save(&cfg.out)?;
    Ok(manifest)
}

/// Parses a comma-separated list of floats.
pub fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().with_context(|| format!("invalid number {x:?}")))
        .collect()
}

/// Reads an optional TOML file into a default-filled config.
pub fn load_toml_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => toml::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display())),
        None => Ok(T::default()),
    }
}

/// Stage names in execution order with their skip flags.
pub fn skipped_stages(m: &RunManifest) -> Vec<(String, bool)> {
    m.stages.iter().map(|(n, r)| (n.clone(), r.skipped)).collect()
}
