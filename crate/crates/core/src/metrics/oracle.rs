//! Exhaustive matching oracle for small instances, used to check the greedy
//! matcher in tests.

use super::ranked_average_precision;
use super::temporal::{ranked_indices, temporal_iou};
use crate::error::{Error, Result};
use crate::streams::EventRecord;

pub const ORACLE_MAX_EVENTS: usize = 8;

struct Search {
    eligible: Vec<Vec<usize>>,
    used: Vec<bool>,
    hits: Vec<bool>,
    n_gts: usize,
    best_count: usize,
    best_ap: f64,
}

impl Search {
    fn run(&mut self, k: usize) {
        if k == self.eligible.len() {
            let count = self.hits.iter().filter(|&&h| h).count();
            self.best_count = self.best_count.max(count);
            if let Some(ap) = ranked_average_precision(&self.hits, self.n_gts) {
                self.best_ap = self.best_ap.max(ap);
            }
            return;
        }
        self.hits.push(false);
        self.run(k + 1);
        self.hits.pop();
        for idx in 0..self.eligible[k].len() {
            let j = self.eligible[k][idx];
            if self.used[j] {
                continue;
            }
            self.used[j] = true;
            self.hits.push(true);
            self.run(k + 1);
            self.hits.pop();
            self.used[j] = false;
        }
    }
}

fn search(preds: &[EventRecord], gts: &[EventRecord], iou_thr: f64) -> Result<Search> {
    if preds.len() > ORACLE_MAX_EVENTS || gts.len() > ORACLE_MAX_EVENTS {
        return Err(Error::InstanceTooLarge {
            preds: preds.len(),
            gts: gts.len(),
            max: ORACLE_MAX_EVENTS,
        });
    }
    let order = ranked_indices(preds);
    let mut eligible = Vec::with_capacity(order.len());
    for &i in &order {
        let p = &preds[i];
        let mut row = Vec::new();
        for (j, g) in gts.iter().enumerate() {
            if g.video_id == p.video_id
                && temporal_iou((p.start_frame, p.end_frame), (g.start_frame, g.end_frame))? >= iou_thr
            {
                row.push(j);
            }
        }
        eligible.push(row);
    }
    let mut s = Search {
        eligible,
        used: vec![false; gts.len()],
        hits: Vec::new(),
        n_gts: gts.len(),
        best_count: 0,
        best_ap: 0.0,
    };
    s.run(0);
    Ok(s)
}

/// Maximum number of one-to-one prediction/ground-truth pairs with
/// IoU >= `iou_thr`, by enumerating every assignment.
pub fn oracle_match(preds: &[EventRecord], gts: &[EventRecord], iou_thr: f64) -> Result<usize> {
    Ok(search(preds, gts, iou_thr)?.best_count)
}

/// Highest AP achievable by any valid assignment, under the same ranking
/// as the greedy matcher. `None` when `gts` is empty.
pub fn oracle_best_ap(preds: &[EventRecord], gts: &[EventRecord], iou_thr: f64) -> Result<Option<f64>> {
    if gts.is_empty() {
        return Ok(None);
    }
    Ok(Some(search(preds, gts, iou_thr)?.best_ap))
}
