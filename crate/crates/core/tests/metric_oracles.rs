//! Frame and temporal AP against independent reference implementations.

use proptest::prelude::*;

use evdecode_core::metrics::{frame_ap, oracle_best_ap, temporal_ap, temporal_map};
use evdecode_core::tuning::f1_threshold;
use evdecode_core::{EventRecord, LabelSpace};

/// Interpolated AP from first principles: for every positive, the best
/// precision at any cut-off whose recall reaches that positive's rank.
fn reference_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let cuts: Vec<(usize, f64)> = (1..=idx.len())
        .map(|k| {
            let tp = idx[..k].iter().filter(|&&i| labels[i]).count();
            (tp, tp as f64 / k as f64)
        })
        .collect();
    let total: f64 = (1..=positives)
        .map(|r| {
            cuts.iter()
                .filter(|(tp, _)| *tp >= r)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum();
    Some(total / positives as f64)
}

fn ev(video: &str, class: usize, start: usize, end: usize, score: f64) -> EventRecord {
    EventRecord {
        video_id: video.into(),
        class_id: class,
        start_frame: start,
        end_frame: end,
        score,
    }
}

proptest! {
    #[test]
    fn frame_ap_matches_reference(
        pairs in prop::collection::vec((0u32..20, any::<bool>()), 1..40),
    ) {
        // Coarse scores force ties, which both sides break by input order.
        let scores: Vec<f64> = pairs.iter().map(|(s, _)| *s as f64 / 20.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|(_, y)| *y).collect();
        let got = frame_ap(&scores, &labels).unwrap();
        match (got, reference_ap(&scores, &labels)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn f1_threshold_matches_exhaustive_scan(
        pairs in prop::collection::vec((0u32..15, any::<bool>()), 1..40),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|(s, _)| *s as f64 / 15.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|(_, y)| *y).collect();
        let positives = labels.iter().filter(|&&y| y).count();
        let got = f1_threshold(&scores, &labels);
        if positives == 0 {
            prop_assert!(got.is_none());
        } else {
            let mut best = (f64::NAN, -1.0);
            let mut candidates = scores.clone();
            candidates.sort_by(|a, b| b.total_cmp(a));
            candidates.dedup();
            for theta in candidates {
                let tp = scores.iter().zip(&labels).filter(|(s, y)| **s >= theta && **y).count();
                let predicted = scores.iter().filter(|s| **s >= theta).count();
                let f1 = 2.0 * tp as f64 / (predicted + positives) as f64;
                if f1 > best.1 {
                    best = (theta, f1);
                }
            }
            let (theta, f1) = got.unwrap();
            prop_assert_eq!(theta, best.0);
            prop_assert!((f1 - best.1).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_ap_never_beats_best_assignment(
        preds in prop::collection::vec((0usize..40, 1usize..15), 0..6),
        gts in prop::collection::vec((0usize..40, 1usize..15), 1..6),
        thr in prop::sample::select(vec![0.5, 0.95]),
    ) {
        let p: Vec<EventRecord> = preds
            .iter()
            .enumerate()
            .map(|(i, &(s, l))| ev("v", 0, s, s + l, 1.0 - i as f64 * 0.1))
            .collect();
        let g: Vec<EventRecord> = gts.iter().map(|&(s, l)| ev("v", 0, s, s + l, 1.0)).collect();
        let greedy = temporal_ap(&p, &g, thr).unwrap().unwrap();
        let best = oracle_best_ap(&p, &g, thr).unwrap().unwrap();
        prop_assert!((0.0..=1.0).contains(&greedy));
        prop_assert!(greedy <= best + 1e-12);
    }
}

#[test]
fn perfect_predictions_score_one() {
    let space = LabelSpace::default_capsule();
    let gts = vec![
        ev("a", 0, 0, 50, 1.0),
        ev("a", 1, 50, 90, 1.0),
        ev("a", 8, 10, 20, 1.0),
        ev("a", 8, 60, 75, 1.0),
        ev("b", 3, 0, 100, 1.0),
    ];
    for thr in [0.5, 0.95] {
        let m = temporal_map(&gts, &gts, &space, thr).unwrap();
        assert_eq!(m.overall, Some(1.0));
        assert_eq!(m.per_video.len(), 2);
    }
}

#[test]
fn classes_without_ground_truth_do_not_count() {
    let space = LabelSpace::default_capsule();
    let gts = vec![ev("a", 8, 10, 20, 1.0)];
    // A spurious event of a class absent from the ground truth.
    let preds = vec![ev("a", 8, 10, 20, 0.9), ev("a", 9, 0, 5, 0.99)];
    let m = temporal_map(&preds, &gts, &space, 0.5).unwrap();
    assert_eq!(m.overall, Some(1.0));
}

#[test]
fn boundary_iou_counts_at_threshold() {
    // IoU exactly 0.5: [0, 10) against [0, 20).
    let gts = vec![ev("a", 0, 0, 20, 1.0)];
    let preds = vec![ev("a", 0, 0, 10, 0.9)];
    assert_eq!(temporal_ap(&preds, &gts, 0.5).unwrap(), Some(1.0));
    assert_eq!(temporal_ap(&preds, &gts, 0.95).unwrap(), Some(0.0));
}
