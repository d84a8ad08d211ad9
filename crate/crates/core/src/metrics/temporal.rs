use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ranked_average_precision;
use crate::error::{Error, Result};
use crate::streams::EventRecord;
use crate::taxonomy::{ClassId, LabelSpace};

/// Intersection over union of two half-open frame intervals.
pub fn temporal_iou(a: (usize, usize), b: (usize, usize)) -> Result<f64> {
    for &(s, e) in &[a, b] {
        if s >= e {
            return Err(Error::Interval { start: s, end: e });
        }
    }
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    Ok(inter as f64 / union as f64)
}

fn span(e: &EventRecord) -> (usize, usize) {
    (e.start_frame, e.end_frame)
}

fn rank_order(a: &EventRecord, b: &EventRecord) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start_frame.cmp(&b.start_frame))
        .then(a.class_id.cmp(&b.class_id))
        .then(a.video_id.cmp(&b.video_id))
        .then(a.end_frame.cmp(&b.end_frame))
}

/// Indices of `preds` in ranking order: score descending, then earlier
/// start, class id, video id.
pub(crate) fn ranked_indices(preds: &[EventRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| rank_order(&preds[i], &preds[j]).then(i.cmp(&j)));
    order
}

/// Greedy confidence-ordered matching. Returns the ranked prediction indices
/// and, for each, whether it was a true positive.
///
/// Each prediction takes the unmatched ground truth of the same video with
/// the highest IoU (lowest index on ties) when that IoU reaches `iou_thr`.
pub fn greedy_match(
    preds: &[EventRecord],
    gts: &[EventRecord],
    iou_thr: f64,
) -> Result<(Vec<usize>, Vec<bool>)> {
    let order = ranked_indices(preds);
    let mut used = vec![false; gts.len()];
    let mut hits = Vec::with_capacity(order.len());
    for &i in &order {
        let p = &preds[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if used[j] || g.video_id != p.video_id {
                continue;
            }
            let iou = temporal_iou(span(p), span(g))?;
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        match best {
            Some((j, iou)) if iou >= iou_thr => {
                used[j] = true;
                hits.push(true);
            }
            _ => hits.push(false),
        }
    }
    Ok((order, hits))
}

fn check_threshold(iou_thr: f64) -> Result<()> {
    if iou_thr > 0.0 && iou_thr <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("IoU threshold {iou_thr} not in (0, 1]")))
    }
}

/// Temporal AP of one class over any set of videos. Predictions only match
/// ground truth of the same video. `None` when `gts` is empty.
pub fn temporal_ap(preds: &[EventRecord], gts: &[EventRecord], iou_thr: f64) -> Result<Option<f64>> {
    check_threshold(iou_thr)?;
    if gts.is_empty() {
        return Ok(None);
    }
    let (_, hits) = greedy_match(preds, gts, iou_thr)?;
    Ok(ranked_average_precision(&hits, gts.len()))
}

/// Unweighted mean of per-video scores; `None` for an empty slice.
pub fn overall_average(per_video: &[f64]) -> Option<f64> {
    if per_video.is_empty() {
        None
    } else {
        Some(per_video.iter().sum::<f64>() / per_video.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMap {
    pub per_class_ap: BTreeMap<ClassId, f64>,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalMapResult {
    pub iou_threshold: f64,
    pub per_video: BTreeMap<String, VideoMap>,
    /// AP per class pooled over all evaluated videos.
    pub per_class_ap: BTreeMap<ClassId, f64>,
    /// Videos with predictions but no ground-truth events.
    pub excluded_videos: Vec<String>,
    pub overall: Option<f64>,
}

/// Temporal mAP: per video, the mean AP over classes with at least one
/// ground-truth event there; overall, the unweighted mean over videos.
pub fn temporal_map(
    preds: &[EventRecord],
    gts: &[EventRecord],
    space: &LabelSpace,
    iou_thr: f64,
) -> Result<TemporalMapResult> {
    check_threshold(iou_thr)?;
    let n = space.n_classes();
    for e in preds.iter().chain(gts) {
        if e.class_id >= n {
            return Err(Error::Range(format!("class id {} >= {n}", e.class_id)));
        }
        if e.start_frame >= e.end_frame {
            return Err(Error::Interval {
                start: e.start_frame,
                end: e.end_frame,
            });
        }
    }

    type Groups<'a> = BTreeMap<(&'a str, ClassId), Vec<EventRecord>>;
    fn group(events: &[EventRecord]) -> Groups<'_> {
        let mut m: Groups<'_> = BTreeMap::new();
        for e in events {
            m.entry((e.video_id.as_str(), e.class_id)).or_default().push(e.clone());
        }
        m
    }
    let pred_groups = group(preds);
    let gt_groups = group(gts);

    let mut per_video: BTreeMap<String, VideoMap> = BTreeMap::new();
    for (&(video, class), class_gts) in &gt_groups {
        let class_preds = pred_groups.get(&(video, class)).map_or(&[][..], Vec::as_slice);
        let ap = temporal_ap(class_preds, class_gts, iou_thr)?.expect("non-empty gts");
        per_video
            .entry(video.to_string())
            .or_insert_with(|| VideoMap {
                per_class_ap: BTreeMap::new(),
                map: 0.0,
            })
            .per_class_ap
            .insert(class, ap);
    }
    for v in per_video.values_mut() {
        v.map = v.per_class_ap.values().sum::<f64>() / v.per_class_ap.len() as f64;
    }

    let gt_videos: BTreeSet<&str> = gts.iter().map(|e| e.video_id.as_str()).collect();
    let excluded: Vec<String> = preds
        .iter()
        .map(|e| e.video_id.as_str())
        .filter(|v| !gt_videos.contains(v))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect();
    for v in &excluded {
        log::warn!("video {v} has no ground-truth events; excluded from temporal mAP");
    }

    let mut per_class_ap = BTreeMap::new();
    for class in 0..n {
        let cp: Vec<EventRecord> = preds
            .iter()
            .filter(|e| e.class_id == class && gt_videos.contains(e.video_id.as_str()))
            .cloned()
            .collect();
        let cg: Vec<EventRecord> = gts.iter().filter(|e| e.class_id == class).cloned().collect();
        if let Some(ap) = temporal_ap(&cp, &cg, iou_thr)? {
            per_class_ap.insert(class, ap);
        }
    }

    let maps: Vec<f64> = per_video.values().map(|v| v.map).collect();
    Ok(TemporalMapResult {
        iou_threshold: iou_thr,
        overall: overall_average(&maps),
        per_video,
        per_class_ap,
        excluded_videos: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(video: &str, class: ClassId, s: usize, e: usize, score: f64) -> EventRecord {
        EventRecord {
            video_id: video.into(),
            class_id: class,
            start_frame: s,
            end_frame: e,
            score,
        }
    }

    #[test]
    fn iou_examples() {
        assert!((temporal_iou((10, 20), (15, 25)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(temporal_iou((3, 9), (3, 9)).unwrap(), 1.0);
        assert_eq!(temporal_iou((0, 5), (5, 10)).unwrap(), 0.0);
        assert!(temporal_iou((5, 5), (0, 3)).is_err());
    }

    #[test]
    fn iou_symmetric_and_decreasing_under_shift() {
        let a = (100, 140);
        let mut last = 1.0;
        for shift in 0..50 {
            let b = (100 + shift, 140 + shift);
            let iou = temporal_iou(a, b).unwrap();
            assert_eq!(iou, temporal_iou(b, a).unwrap());
            assert!(iou <= last);
            assert_eq!(iou == 1.0, shift == 0);
            last = iou;
        }
        assert_eq!(last, 0.0);
    }

    #[test]
    fn ap_two_tps_first() {
        let gts = [ev("v", 0, 0, 10, 1.0), ev("v", 0, 20, 30, 1.0)];
        let preds = [ev("v", 0, 0, 9, 0.9), ev("v", 0, 21, 30, 0.8), ev("v", 0, 40, 50, 0.7)];
        assert_eq!(temporal_ap(&preds, &gts, 0.5).unwrap(), Some(1.0));
    }

    #[test]
    fn ap_trivial_cases() {
        let gts = [ev("v", 0, 5, 15, 1.0)];
        assert_eq!(temporal_ap(&[ev("v", 0, 5, 15, 0.3)], &gts, 0.95).unwrap(), Some(1.0));
        assert_eq!(temporal_ap(&[ev("v", 0, 30, 40, 0.3)], &gts, 0.5).unwrap(), Some(0.0));
        assert_eq!(temporal_ap(&[], &gts, 0.5).unwrap(), Some(0.0));
        assert_eq!(temporal_ap(&[ev("v", 0, 5, 15, 0.3)], &[], 0.5).unwrap(), None);
        assert!(temporal_ap(&[], &gts, 0.0).is_err());
    }

    #[test]
    fn predictions_only_match_their_own_video() {
        let gts = [ev("a", 0, 0, 10, 1.0)];
        let preds = [ev("b", 0, 0, 10, 0.9)];
        assert_eq!(temporal_ap(&preds, &gts, 0.5).unwrap(), Some(0.0));
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let gts = [ev("v", 0, 0, 10, 1.0)];
        let preds = [ev("v", 0, 0, 10, 0.9), ev("v", 0, 0, 10, 0.8)];
        let (_, hits) = greedy_match(&preds, &gts, 0.5).unwrap();
        assert_eq!(hits, vec![true, false]);
    }

    #[test]
    fn map_per_video_then_overall() {
        let space = LabelSpace::default_capsule();
        let gts = [
            ev("a", 8, 0, 10, 1.0),
            ev("a", 9, 0, 10, 1.0),
            ev("b", 8, 50, 60, 1.0),
        ];
        // class 8 in "a" perfect, class 9 in "a" missed, "b" perfect
        let preds = [ev("a", 8, 0, 10, 0.9), ev("b", 8, 50, 60, 0.8), ev("c", 8, 0, 5, 0.5)];
        let r = temporal_map(&preds, &gts, &space, 0.5).unwrap();
        assert_eq!(r.per_video["a"].map, 0.5);
        assert_eq!(r.per_video["b"].map, 1.0);
        assert_eq!(r.overall, Some(0.75));
        assert_eq!(r.excluded_videos, vec!["c".to_string()]);
        assert_eq!(r.per_class_ap[&8], 1.0);
        assert_eq!(r.per_class_ap[&9], 0.0);
    }

    #[test]
    fn perfect_single_prediction() {
        let space = LabelSpace::default_capsule();
        let gts = [ev("v", 10, 3, 30, 1.0)];
        let preds = [ev("v", 10, 3, 30, 0.6)];
        for thr in [0.5, 0.95] {
            assert_eq!(temporal_map(&preds, &gts, &space, thr).unwrap().overall, Some(1.0));
        }
    }

    #[test]
    fn overall_average_arithmetic() {
        let a = overall_average(&[0.4706, 0.2356, 0.3529]).unwrap();
        assert!((a - 0.3530).abs() < 5e-5);
        let b = overall_average(&[0.4412, 0.1765, 0.3529]).unwrap();
        assert!((b - 0.3235).abs() < 5e-5);
        assert_eq!(overall_average(&[]), None);
    }
}
