//! Stage functions shared by the subcommands, the `run` driver and the
//! ablation study.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use evdecode_core::decode::{decode_all, DecodeConfig, DecodeStages};
use evdecode_core::fusion::{fit_fusion_weights, fuse_set, FusionMode, FusionReport, FusionWeights};
use evdecode_core::metrics::{temporal_map, TemporalMapResult};
use evdecode_core::streams::{load_ground_truth, load_streams, sort_events};
use evdecode_core::tuning::{tune_all, TuneOptions, TuneReport};
use evdecode_core::{EventRecord, GroundTruth, LabelSpace, ProbStream, StreamSet};

/// Head streams of one split with their frame ground truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub streams: StreamSet,
    pub gts: BTreeMap<String, GroundTruth>,
}

impl Dataset {
    pub fn new(streams: StreamSet, gts: BTreeMap<String, GroundTruth>) -> Result<Self> {
        for id in streams.video_ids() {
            anyhow::ensure!(gts.contains_key(id), "video {id} has streams but no ground truth");
        }
        Ok(Self { streams, gts })
    }

    pub fn load(streams: &Path, gt: &Path, space: &LabelSpace) -> Result<Self> {
        let s = load_streams(streams).with_context(|| format!("loading streams {}", streams.display()))?;
        let g = load_ground_truth(gt, space).with_context(|| format!("loading ground truth {}", gt.display()))?;
        Self::new(s, g)
    }

    pub fn gt_events(&self) -> Vec<EventRecord> {
        gt_events(&self.gts)
    }
}

pub fn gt_events(gts: &BTreeMap<String, GroundTruth>) -> Vec<EventRecord> {
    let mut ev: Vec<EventRecord> = gts.values().flat_map(GroundTruth::events).collect();
    sort_events(&mut ev);
    ev
}

pub fn fit_weights(val: &Dataset, mode: &FusionMode) -> Result<(FusionWeights, FusionReport)> {
    Ok(fit_fusion_weights(&val.streams, &val.gts, mode)?)
}

/// Fused, calibrated streams in video-id order.
pub fn fuse(set: &StreamSet, weights: &FusionWeights) -> Result<Vec<ProbStream>> {
    Ok(fuse_set(set, weights)?)
}

/// Tunes temperature, decode parameters and thresholds on validation data.
/// The weights' own temperature is ignored.
pub fn tune(
    val: &Dataset,
    weights: &FusionWeights,
    space: &LabelSpace,
    base: &DecodeConfig,
    opts: &TuneOptions,
) -> Result<TuneReport> {
    let mut uncalibrated = weights.clone();
    uncalibrated.temperature = 1.0;
    let fused = fuse(&val.streams, &uncalibrated)?;
    Ok(tune_all(&fused, &val.gts, space, base, opts)?)
}

pub fn decode(streams: &[ProbStream], space: &LabelSpace, cfg: &DecodeConfig, stages: DecodeStages) -> Result<Vec<EventRecord>> {
    Ok(decode_all(streams, space, cfg, stages)?)
}

/// Temporal mAP at the two reporting thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_50: TemporalMapResult,
    pub map_95: TemporalMapResult,
}

impl EvalReport {
    pub fn overall_50(&self) -> f64 {
        self.map_50.overall.unwrap_or(0.0)
    }

    pub fn overall_95(&self) -> f64 {
        self.map_95.overall.unwrap_or(0.0)
    }

    /// Plain-text summary with per-video and per-class scores.
    pub fn to_text(&self, space: &LabelSpace) -> String {
        let mut out = String::new();
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        out.push_str(&format!(
            "tmAP@0.5  {}\ntmAP@0.95 {}\n\n",
            fmt(self.map_50.overall),
            fmt(self.map_95.overall)
        ));
        out.push_str(&format!("{:<16} {:>9} {:>9}\n", "video", "@0.5", "@0.95"));
        for (video, m50) in &self.map_50.per_video {
            let m95 = self.map_95.per_video.get(video).map(|v| v.map);
            out.push_str(&format!("{video:<16} {:>9.4} {:>9}\n", m50.map, fmt(m95)));
        }
        out.push_str(&format!("\n{:<16} {:>9} {:>9}\n", "class", "@0.5", "@0.95"));
        for (class, ap50) in &self.map_50.per_class_ap {
            let name = space.class(*class).map_or("?", |c| c.name.as_str());
            let ap95 = self.map_95.per_class_ap.get(class).copied();
            out.push_str(&format!("{name:<16} {ap50:>9.4} {:>9}\n", fmt(ap95)));
        }
        if !self.map_50.excluded_videos.is_empty() {
            out.push_str(&format!(
                "\nexcluded (no ground truth): {}\n",
                self.map_50.excluded_videos.join(", ")
            ));
        }
        out
    }
}

pub fn evaluate(preds: &[EventRecord], gts: &[EventRecord], space: &LabelSpace) -> Result<EvalReport> {
    Ok(EvalReport {
        map_50: temporal_map(preds, gts, space, 0.5)?,
        map_95: temporal_map(preds, gts, space, 0.95)?,
    })
}
