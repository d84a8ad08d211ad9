//! Anatomical constraints: one region per frame, no backward transit through
//! the region order, and landmarks only near their valid regions.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::taxonomy::{ClassId, LabelSpace};

/// Floor applied to region probabilities before taking logs.
const REGION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MonotonicMode {
    /// Globally optimal monotone path by dynamic programming.
    #[default]
    Viterbi,
    /// Per-frame argmax with a ratchet that ignores short excursions.
    Greedy,
}

/// Per-frame region probabilities in rank order (frames x regions).
fn region_matrix(probs: &Array2<f64>, space: &LabelSpace) -> Array2<f64> {
    let order = space.region_order();
    Array2::from_shape_fn((probs.nrows(), order.len()), |(t, r)| probs[[t, order[r]]])
}

/// Most probable region sequence whose ranks never decrease. Returns ranks.
///
/// Ties prefer the lower rank, both in the transition and at the last frame.
pub fn monotone_viterbi(region_probs: &Array2<f64>) -> Vec<usize> {
    let (n, r_len) = region_probs.dim();
    if n == 0 {
        return Vec::new();
    }
    let lp = region_probs.mapv(|p| p.max(REGION_EPS).ln());
    let mut score = lp.row(0).to_vec();
    let mut back = vec![vec![0usize; r_len]; n];
    for t in 1..n {
        let mut best_prev = 0usize;
        let mut next = vec![0.0; r_len];
        for r in 0..r_len {
            if score[r] > score[best_prev] {
                best_prev = r;
            }
            back[t][r] = best_prev;
            next[r] = score[best_prev] + lp[[t, r]];
        }
        score = next;
    }
    let mut last = 0;
    for r in 1..r_len {
        if score[r] > score[last] {
            last = r;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t][path[t]];
    }
    path
}

fn argmax_rank(row: ndarray::ArrayView1<'_, f64>, from: usize) -> usize {
    let mut best = from;
    for r in from..row.len() {
        if row[r] > row[best] {
            best = r;
        }
    }
    best
}

/// Greedy monotone assignment. Frame-wise argmax runs are walked in order;
/// a run may advance the current rank only if it lasts at least
/// `min_region_run` frames (or ends the video). Every other frame is pinned
/// to the current rank.
pub fn monotone_greedy(region_probs: &Array2<f64>, min_region_run: usize) -> Vec<usize> {
    let n = region_probs.nrows();
    if n == 0 {
        return Vec::new();
    }
    let argmax: Vec<usize> = region_probs.rows().into_iter().map(|row| argmax_rank(row, 0)).collect();
    let mut runs: Vec<(usize, usize, usize)> = Vec::new();
    let mut start = 0;
    for t in 1..=n {
        if t == n || argmax[t] != argmax[start] {
            runs.push((start, t, argmax[start]));
            start = t;
        }
    }
    let mut out = vec![0; n];
    let mut current: Option<usize> = None;
    for (i, &(s, e, rank)) in runs.iter().enumerate() {
        let last = i + 1 == runs.len();
        let accept = match current {
            None => true,
            Some(cur) => rank == cur || (rank > cur && (e - s >= min_region_run || last)),
        };
        if accept {
            current = Some(rank);
        }
        let cur = current.expect("first run always accepted");
        out[s..e].fill(cur);
    }
    out
}

/// Chooses one region per frame under the transit order, zeroes every other
/// region probability, and returns the assigned region class per frame.
pub fn enforce_region_constraints(
    probs: &Array2<f64>,
    space: &LabelSpace,
    mode: MonotonicMode,
    min_region_run: usize,
) -> (Array2<f64>, Vec<ClassId>) {
    let regions = region_matrix(probs, space);
    let ranks = match mode {
        MonotonicMode::Viterbi => monotone_viterbi(&regions),
        MonotonicMode::Greedy => monotone_greedy(&regions, min_region_run),
    };
    let order = space.region_order();
    let assignment: Vec<ClassId> = ranks.iter().map(|&r| order[r]).collect();
    let mut masked = probs.clone();
    for (t, &chosen) in assignment.iter().enumerate() {
        for &region in order {
            if region != chosen {
                masked[[t, region]] = 0.0;
            }
        }
    }
    (masked, assignment)
}

/// Zeroes landmark probabilities at frames farther than the landmark's
/// tolerance from any frame assigned to one of its valid regions.
pub fn gate_landmarks(probs: &mut Array2<f64>, assignment: &[ClassId], space: &LabelSpace) {
    let n = assignment.len();
    for (&landmark, rule) in space.landmark_rules() {
        // prefix[t] = number of valid frames in [0, t)
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0usize);
        for &region in assignment {
            let last = *prefix.last().expect("non-empty");
            prefix.push(last + usize::from(rule.valid_regions.contains(&region)));
        }
        let tol = rule.tolerance_frames;
        for t in 0..n {
            let lo = t.saturating_sub(tol);
            let hi = (t + tol + 1).min(n);
            if prefix[hi] == prefix[lo] {
                probs[[t, landmark]] = 0.0;
            }
        }
    }
}

/// Forces the region rows of a timeline to exactly the assigned region.
pub fn ensure_region_coverage(rows: &mut [Vec<bool>], assignment: &[ClassId], space: &LabelSpace) {
    for &region in space.region_order() {
        for (t, &chosen) in assignment.iter().enumerate() {
            rows[region][t] = region == chosen;
        }
    }
}

/// True when every frame has exactly one region and region ranks never
/// decrease.
pub fn regions_are_monotone(rows: &[Vec<bool>], space: &LabelSpace) -> bool {
    let n = rows.first().map_or(0, Vec::len);
    let mut last_rank = 0;
    for t in 0..n {
        let on: Vec<usize> = space
            .region_order()
            .iter()
            .enumerate()
            .filter(|(_, &id)| rows[id][t])
            .map(|(r, _)| r)
            .collect();
        if on.len() != 1 || on[0] < last_rank {
            return false;
        }
        last_rank = on[0];
    }
    true
}
