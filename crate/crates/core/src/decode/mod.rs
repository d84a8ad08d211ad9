//! Anatomy-aware temporal event decoding.
//!
//! Stages, in order: per-class smoothing, region exclusivity with monotone
//! transit, landmark gating, thresholding, opening then closing, region
//! coverage, and event extraction (per label, or tuple-based for ablation).

pub mod anatomy;
pub mod events;
pub mod morphology;
pub mod smooth;

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use anatomy::{
    enforce_region_constraints, ensure_region_coverage, gate_landmarks, monotone_greedy,
    monotone_viterbi, regions_are_monotone, MonotonicMode,
};
pub use events::{events_per_label, events_tuple_based};
pub use morphology::{closing, open_close, opening};
pub use smooth::moving_average;

use crate::error::{Error, Result};
use crate::streams::{sort_events, EventRecord, ProbStream};
use crate::taxonomy::{ClassId, ClassKind, LabelSpace};

/// A value per class kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PerKind<T> {
    pub region: T,
    pub landmark: T,
    pub pathology: T,
}

impl<T: Copy> PerKind<T> {
    pub fn splat(v: T) -> Self {
        Self {
            region: v,
            landmark: v,
            pathology: v,
        }
    }

    pub fn get(&self, kind: ClassKind) -> T {
        match kind {
            ClassKind::Region => self.region,
            ClassKind::Landmark => self.landmark,
            ClassKind::Pathology => self.pathology,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Odd smoothing window per class kind.
    pub smoothing_window: PerKind<usize>,
    /// Per-class window overrides.
    #[serde(default)]
    pub window_overrides: BTreeMap<ClassId, usize>,
    /// Per-class thresholds in (0, 1).
    pub thresholds: Vec<f64>,
    pub open_len: PerKind<usize>,
    pub close_len: PerKind<usize>,
    /// Shortest forward region run the greedy transit mode accepts.
    pub min_region_run: usize,
    pub monotonic_mode: MonotonicMode,
}

impl DecodeConfig {
    /// Defaults: wide windows for regions, narrow for pathologies, and a
    /// 0.5 threshold everywhere.
    pub fn default_for(space: &LabelSpace) -> Self {
        Self {
            smoothing_window: PerKind {
                region: 31,
                landmark: 9,
                pathology: 5,
            },
            window_overrides: BTreeMap::new(),
            thresholds: vec![0.5; space.n_classes()],
            open_len: PerKind {
                region: 1,
                landmark: 3,
                pathology: 3,
            },
            close_len: PerKind {
                region: 1,
                landmark: 5,
                pathology: 5,
            },
            min_region_run: 25,
            monotonic_mode: MonotonicMode::Viterbi,
        }
    }

    /// Windows 1, morphology 1 and the given threshold for every class.
    pub fn identity(space: &LabelSpace, threshold: f64) -> Self {
        Self {
            smoothing_window: PerKind::splat(1),
            window_overrides: BTreeMap::new(),
            thresholds: vec![threshold; space.n_classes()],
            open_len: PerKind::splat(1),
            close_len: PerKind::splat(1),
            min_region_run: 1,
            monotonic_mode: MonotonicMode::Viterbi,
        }
    }

    pub fn window_for(&self, space: &LabelSpace, class: ClassId) -> usize {
        self.window_overrides
            .get(&class)
            .copied()
            .unwrap_or_else(|| self.smoothing_window.get(space.kind(class)))
    }

    pub fn validate(&self, space: &LabelSpace) -> Result<()> {
        let n = space.n_classes();
        if self.thresholds.len() != n {
            return Err(Error::Shape(format!("{} thresholds for {n} classes", self.thresholds.len())));
        }
        if let Some((c, t)) = self
            .thresholds
            .iter()
            .enumerate()
            .find(|(_, t)| !(**t > 0.0 && **t < 1.0))
        {
            return Err(Error::Range(format!("threshold {t} for class {c} not in (0, 1)")));
        }
        for c in 0..n {
            let w = self.window_for(space, c);
            if w == 0 || w % 2 == 0 {
                return Err(Error::InvalidArgument(format!(
                    "smoothing window {w} for class {c} must be odd and positive"
                )));
            }
        }
        if let Some(&bad) = self.window_overrides.keys().find(|&&c| c >= n) {
            return Err(Error::Range(format!("window override for unknown class {bad}")));
        }
        for kind in [ClassKind::Region, ClassKind::Landmark, ClassKind::Pathology] {
            if self.open_len.get(kind) == 0 || self.close_len.get(kind) == 0 {
                return Err(Error::InvalidArgument(format!(
                    "morphology lengths for {kind} must be >= 1"
                )));
            }
        }
        if self.min_region_run == 0 {
            return Err(Error::InvalidArgument("min_region_run must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EventMode {
    #[default]
    PerLabel,
    TupleBased,
}

/// Which decoding stages run. Disabling `constraints` skips region
/// exclusivity, transit order, landmark gating and coverage together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeStages {
    pub smoothing: bool,
    pub constraints: bool,
    pub morphology: bool,
    pub events: EventMode,
}

impl DecodeStages {
    pub const FULL: DecodeStages = DecodeStages {
        smoothing: true,
        constraints: true,
        morphology: true,
        events: EventMode::PerLabel,
    };

    /// Thresholding and run extraction only.
    pub const PER_LABEL_ONLY: DecodeStages = DecodeStages {
        smoothing: false,
        constraints: false,
        morphology: false,
        events: EventMode::PerLabel,
    };

    pub const TUPLE_BASED: DecodeStages = DecodeStages {
        events: EventMode::TupleBased,
        ..DecodeStages::FULL
    };
}

impl Default for DecodeStages {
    fn default() -> Self {
        Self::FULL
    }
}

/// Per-class binary sequences (classes x frames).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryTimeline {
    pub rows: Vec<Vec<bool>>,
}

/// Threshold-independent part of decoding, cached so threshold search can
/// re-run only the final stages.
#[derive(Debug, Clone)]
pub struct PreparedVideo {
    pub video_id: String,
    /// Smoothed probabilities before any masking; used for event scores.
    pub smoothed: Array2<f64>,
    /// Probabilities after region masking and landmark gating.
    pub constrained: Array2<f64>,
    /// Assigned region class per frame, when constraints are enabled.
    pub assignment: Option<Vec<ClassId>>,
}

/// Class-specific temporal smoothing.
pub fn smooth(stream: &ProbStream, space: &LabelSpace, cfg: &DecodeConfig) -> Result<ProbStream> {
    let windows: Vec<usize> = (0..stream.n_classes()).map(|c| cfg.window_for(space, c)).collect();
    ProbStream::new(
        stream.video_id(),
        stream.source(),
        smooth::smooth_columns(stream.probs(), &windows)?,
    )
}

pub fn prepare(
    stream: &ProbStream,
    space: &LabelSpace,
    cfg: &DecodeConfig,
    stages: DecodeStages,
) -> Result<PreparedVideo> {
    if stream.n_classes() != space.n_classes() {
        return Err(Error::Shape(format!(
            "stream {} has {} classes, taxonomy {}",
            stream.video_id(),
            stream.n_classes(),
            space.n_classes()
        )));
    }
    cfg.validate(space)?;
    let smoothed = if stages.smoothing {
        smooth(stream, space, cfg)?.probs().clone()
    } else {
        stream.probs().clone()
    };
    let (constrained, assignment) = if stages.constraints {
        let (mut masked, assignment) =
            enforce_region_constraints(&smoothed, space, cfg.monotonic_mode, cfg.min_region_run);
        gate_landmarks(&mut masked, &assignment, space);
        (masked, Some(assignment))
    } else {
        (smoothed.clone(), None)
    };
    Ok(PreparedVideo {
        video_id: stream.video_id().to_string(),
        smoothed,
        constrained,
        assignment,
    })
}

/// Thresholds then applies opening and closing per class kind.
pub fn binarize_and_refine(
    probs: &Array2<f64>,
    space: &LabelSpace,
    cfg: &DecodeConfig,
    morphology: bool,
) -> BinaryTimeline {
    let rows = (0..probs.ncols())
        .map(|c| {
            let theta = cfg.thresholds[c];
            let bits: Vec<bool> = probs.column(c).iter().map(|&p| p >= theta).collect();
            if morphology {
                let kind = space.kind(c);
                open_close(&bits, cfg.open_len.get(kind), cfg.close_len.get(kind))
            } else {
                bits
            }
        })
        .collect();
    BinaryTimeline { rows }
}

/// Thresholding onwards, on a prepared video.
pub fn finish(
    prepared: &PreparedVideo,
    space: &LabelSpace,
    cfg: &DecodeConfig,
    stages: DecodeStages,
) -> BinaryTimeline {
    let mut timeline = binarize_and_refine(&prepared.constrained, space, cfg, stages.morphology);
    if let Some(assignment) = &prepared.assignment {
        ensure_region_coverage(&mut timeline.rows, assignment, space);
    }
    timeline
}

pub fn extract_events(prepared: &PreparedVideo, timeline: &BinaryTimeline, mode: EventMode) -> Vec<EventRecord> {
    match mode {
        EventMode::PerLabel => events_per_label(&prepared.video_id, &timeline.rows, &prepared.smoothed),
        EventMode::TupleBased => {
            events_tuple_based(&prepared.video_id, &timeline.rows, &prepared.smoothed)
        }
    }
}

/// Decodes a prepared video into events.
pub fn decode_prepared(
    prepared: &PreparedVideo,
    space: &LabelSpace,
    cfg: &DecodeConfig,
    stages: DecodeStages,
) -> Vec<EventRecord> {
    let timeline = finish(prepared, space, cfg, stages);
    extract_events(prepared, &timeline, stages.events)
}

/// Full decoding of one video.
pub fn decode_ated(
    stream: &ProbStream,
    space: &LabelSpace,
    cfg: &DecodeConfig,
    stages: DecodeStages,
) -> Result<Vec<EventRecord>> {
    let prepared = prepare(stream, space, cfg, stages)?;
    Ok(decode_prepared(&prepared, space, cfg, stages))
}

/// Decodes many videos in parallel; events come back in canonical order.
pub fn decode_all(
    streams: &[ProbStream],
    space: &LabelSpace,
    cfg: &DecodeConfig,
    stages: DecodeStages,
) -> Result<Vec<EventRecord>> {
    let per_video: Vec<Vec<EventRecord>> = streams
        .par_iter()
        .map(|s| decode_ated(s, space, cfg, stages))
        .collect::<Result<_>>()?;
    let mut events: Vec<EventRecord> = per_video.into_iter().flatten().collect();
    sort_events(&mut events);
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::Source;

    fn space() -> LabelSpace {
        LabelSpace::default_capsule()
    }

    #[test]
    fn config_validation() {
        let s = space();
        let mut cfg = DecodeConfig::default_for(&s);
        assert!(cfg.validate(&s).is_ok());
        cfg.smoothing_window.pathology = 4;
        assert!(cfg.validate(&s).is_err());
        let mut cfg = DecodeConfig::default_for(&s);
        cfg.thresholds[3] = 1.0;
        assert!(cfg.validate(&s).is_err());
        let mut cfg = DecodeConfig::default_for(&s);
        cfg.close_len.landmark = 0;
        assert!(cfg.validate(&s).is_err());
        let mut cfg = DecodeConfig::default_for(&s);
        cfg.window_overrides.insert(8, 11);
        assert_eq!(cfg.window_for(&s, 8), 11);
        assert!(cfg.validate(&s).is_ok());
    }

    #[test]
    fn binarize_then_refine() {
        let s = LabelSpace::from_toml_str(
            r#"
            region_order = [0]
            [[classes]]
            id = 0
            name = "r"
            kind = "region"
            [[classes]]
            id = 1
            name = "p"
            kind = "pathology"
            "#,
        )
        .unwrap();
        let mut cfg = DecodeConfig::identity(&s, 0.5);
        cfg.open_len.pathology = 2;
        cfg.close_len.pathology = 2;
        let col = [0.1, 0.9, 0.8, 0.2, 0.7, 0.1, 0.9, 0.9];
        let mut probs = Array2::zeros((8, 2));
        for (t, &p) in col.iter().enumerate() {
            probs[[t, 1]] = p;
        }
        let tl = binarize_and_refine(&probs, &s, &cfg, true);
        // the lone frame 4 is opened away, leaving a gap of 3 that closing(2) keeps
        let expected: Vec<bool> = [0, 1, 1, 0, 0, 0, 1, 1].iter().map(|&x| x == 1).collect();
        assert_eq!(tl.rows[1], expected);
    }

    #[test]
    fn decoded_regions_are_exclusive_and_monotone() {
        let s = space();
        let n = 40;
        let mut probs = Array2::from_elem((n, s.n_classes()), 0.05);
        for t in 0..n {
            // noisy region evidence with a backward blip at frame 20
            let rank = if t == 20 { 0 } else { (t / 8).min(4) };
            probs[[t, s.region_order()[rank]]] = 0.9;
        }
        let stream = ProbStream::new("v", Source::Fused, probs).unwrap();
        let cfg = DecodeConfig::identity(&s, 0.5);
        let prepared = prepare(&stream, &s, &cfg, DecodeStages::FULL).unwrap();
        let tl = finish(&prepared, &s, &cfg, DecodeStages::FULL);
        assert!(regions_are_monotone(&tl.rows, &s));
    }

    #[test]
    fn empty_stream_decodes_to_nothing() {
        let s = space();
        let stream = ProbStream::new("v", Source::Fused, Array2::zeros((0, s.n_classes()))).unwrap();
        let ev = decode_ated(&stream, &s, &DecodeConfig::default_for(&s), DecodeStages::FULL).unwrap();
        assert!(ev.is_empty());
    }
}
