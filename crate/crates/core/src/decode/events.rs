use ndarray::Array2;

use crate::streams::{runs, EventRecord};

fn mean_score(scores: &Array2<f64>, class: usize, start: usize, end: usize) -> f64 {
    let sum: f64 = (start..end).map(|t| scores[[t, class]]).sum();
    (sum / (end - start) as f64).clamp(0.0, 1.0)
}

/// One event per maximal positive run, independently for every class.
/// Scores are the mean of `scores` over the event's frames.
pub fn events_per_label(video_id: &str, rows: &[Vec<bool>], scores: &Array2<f64>) -> Vec<EventRecord> {
    let mut out = Vec::new();
    for (class, row) in rows.iter().enumerate() {
        for (start, end) in runs(row.iter().copied()) {
            out.push(EventRecord {
                video_id: video_id.to_string(),
                class_id: class,
                start_frame: start,
                end_frame: end,
                score: mean_score(scores, class, start, end),
            });
        }
    }
    out
}

/// Tuple-based segmentation: the video is cut wherever the set of active
/// labels changes, and every active label in a segment becomes one event.
pub fn events_tuple_based(video_id: &str, rows: &[Vec<bool>], scores: &Array2<f64>) -> Vec<EventRecord> {
    let n = rows.first().map_or(0, Vec::len);
    let active_at = |t: usize| -> Vec<usize> { (0..rows.len()).filter(|&c| rows[c][t]).collect() };
    let mut out = Vec::new();
    let mut start = 0;
    let mut current = if n > 0 { active_at(0) } else { Vec::new() };
    for t in 1..=n {
        let next = if t < n { active_at(t) } else { Vec::new() };
        if t == n || next != current {
            for &class in &current {
                out.push(EventRecord {
                    video_id: video_id.to_string(),
                    class_id: class,
                    start_frame: start,
                    end_frame: t,
                    score: mean_score(scores, class, start, t),
                });
            }
            start = t;
            current = next;
        }
    }
    out.sort_by_key(|e| (e.class_id, e.start_frame));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_label_runs() {
        let rows = vec![vec![false, true, true, false, true, true, true, false]];
        let scores = Array2::from_elem((8, 1), 0.5);
        let ev = events_per_label("v", &rows, &scores);
        let spans: Vec<_> = ev.iter().map(|e| (e.start_frame, e.end_frame)).collect();
        assert_eq!(spans, vec![(1, 3), (4, 7)]);
        assert!(events_per_label("v", &[vec![false; 4]], &Array2::zeros((4, 1))).is_empty());
    }

    #[test]
    fn score_is_mean() {
        let rows = vec![vec![true, true]];
        let scores = ndarray::array![[0.8], [0.6]];
        let ev = events_per_label("v", &rows, &scores);
        assert!((ev[0].score - 0.7).abs() < 1e-15);
    }

    #[test]
    fn tuple_based_splits_on_label_change() {
        // class 0 region changes to class 1 at frame 5; pathology 2 spans [0, 10)
        let mut rows = vec![vec![false; 10]; 3];
        for t in 0..10 {
            rows[if t < 5 { 0 } else { 1 }][t] = true;
            rows[2][t] = true;
        }
        let scores = Array2::from_elem((10, 3), 0.9);
        let ev = events_tuple_based("v", &rows, &scores);
        let path: Vec<_> = ev
            .iter()
            .filter(|e| e.class_id == 2)
            .map(|e| (e.start_frame, e.end_frame))
            .collect();
        assert_eq!(path, vec![(0, 5), (5, 10)]);
        let per_label = events_per_label("v", &rows, &scores);
        assert_eq!(per_label.iter().filter(|e| e.class_id == 2).count(), 1);
    }

    #[test]
    fn tuple_based_equals_per_label_for_constant_sets() {
        let rows = vec![vec![true; 6], vec![false; 6], vec![true; 6]];
        let scores = Array2::from_elem((6, 3), 0.3);
        assert_eq!(
            events_tuple_based("v", &rows, &scores),
            events_per_label("v", &rows, &scores)
        );
    }
}
