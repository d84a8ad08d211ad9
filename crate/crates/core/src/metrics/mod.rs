//! Frame-level and event-level average precision.
//!
//! Both levels share one AP definition: rank by score, then integrate the
//! precision envelope (all-point interpolation) over recall.

mod oracle;
mod temporal;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use oracle::{oracle_best_ap, oracle_match, ORACLE_MAX_EVENTS};
pub use temporal::{
    greedy_match, overall_average, temporal_ap, temporal_iou, temporal_map, TemporalMapResult,
    VideoMap,
};

use crate::error::{Error, Result};
use crate::streams::{GroundTruth, ProbStream};
use crate::taxonomy::ClassId;

/// AP of a ranked hit sequence against `n_positives` relevant items, using
/// the monotone precision envelope.
pub fn ranked_average_precision(hits: &[bool], n_positives: usize) -> Option<f64> {
    if n_positives == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
    }
    let mut envelope = 0.0f64;
    let mut sum = 0.0;
    for (k, &hit) in hits.iter().enumerate().rev() {
        envelope = envelope.max(precision[k]);
        if hit {
            sum += envelope;
        }
    }
    Some(sum / n_positives as f64)
}

/// Frame-level AP of `scores` against binary `labels`.
///
/// Ranks by descending score with ties kept in input order. Returns
/// `Ok(None)` when there are no positives.
pub fn frame_ap(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let hits: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
    Ok(ranked_average_precision(&hits, n_pos))
}

/// Per-class AP plus the mean over classes that have positives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub per_class_ap: BTreeMap<ClassId, Option<f64>>,
    pub map: Option<f64>,
}

impl ApResult {
    pub fn from_per_class(per_class_ap: BTreeMap<ClassId, Option<f64>>) -> Self {
        let defined: Vec<f64> = per_class_ap.values().filter_map(|v| *v).collect();
        let map = if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        };
        Self { per_class_ap, map }
    }
}

/// Frame-level AP per class over all frames of the given videos, concatenated
/// in video-id order. Each stream must have matching ground truth.
pub fn frame_map<'a>(
    streams: impl IntoIterator<Item = &'a ProbStream>,
    gts: &BTreeMap<String, GroundTruth>,
) -> Result<ApResult> {
    let mut streams: Vec<&ProbStream> = streams.into_iter().collect();
    streams.sort_by(|a, b| a.video_id().cmp(b.video_id()));
    let n_classes = streams.first().map_or(0, |s| s.n_classes());
    let mut scores: Vec<Vec<f64>> = vec![Vec::new(); n_classes];
    let mut labels: Vec<Vec<bool>> = vec![Vec::new(); n_classes];
    for s in streams {
        let gt = gts.get(s.video_id()).ok_or_else(|| {
            Error::InvalidArgument(format!("no ground truth for video {}", s.video_id()))
        })?;
        if gt.n_frames() != s.n_frames() || gt.labels().ncols() != s.n_classes() {
            return Err(Error::Shape(format!(
                "video {}: stream {:?} vs ground truth {:?}",
                s.video_id(),
                s.probs().dim(),
                gt.labels().dim()
            )));
        }
        for c in 0..n_classes {
            scores[c].extend(s.class_series(c).iter());
            labels[c].extend(gt.labels().column(c).iter());
        }
    }
    let mut per_class = BTreeMap::new();
    for c in 0..n_classes {
        per_class.insert(c, frame_ap(&scores[c], &labels[c])?);
    }
    Ok(ApResult::from_per_class(per_class))
}
