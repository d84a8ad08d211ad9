//! Decoding primitives against brute-force references.

use ndarray::Array2;
use proptest::prelude::*;

use evdecode_core::decode::anatomy::monotone_viterbi;
use evdecode_core::decode::morphology::{closing, opening};
use evdecode_core::decode::smooth::moving_average;

/// Opening as the union of every length-`len` window fully inside `x`.
/// Frames outside the sequence count as `pad`.
fn window_opening(x: &[bool], len: usize, pad: bool) -> Vec<bool> {
    let n = x.len() as isize;
    let at = |i: isize| if i < 0 || i >= n { pad } else { x[i as usize] };
    let len = len as isize;
    (0..n)
        .map(|t| (t - len + 1..=t).any(|s| (s..s + len).all(at)))
        .collect()
}

/// Closing by duality: complement, open with true padding, complement.
/// The padding keeps gaps that touch an edge from being filled.
fn window_closing(x: &[bool], len: usize) -> Vec<bool> {
    let inv: Vec<bool> = x.iter().map(|b| !b).collect();
    window_opening(&inv, len, true).iter().map(|b| !b).collect()
}

fn log_score(probs: &Array2<f64>, path: &[usize]) -> f64 {
    path.iter().enumerate().map(|(t, &r)| probs[[t, r]].max(1e-12).ln()).sum()
}

/// Best score over every non-decreasing path.
fn best_monotone(probs: &Array2<f64>) -> f64 {
    fn go(probs: &Array2<f64>, t: usize, min: usize, acc: f64) -> f64 {
        if t == probs.nrows() {
            return acc;
        }
        (min..probs.ncols())
            .map(|r| go(probs, t + 1, r, acc + probs[[t, r]].max(1e-12).ln()))
            .fold(f64::NEG_INFINITY, f64::max)
    }
    go(probs, 0, 0, 0.0)
}

proptest! {
    #[test]
    fn opening_matches_window_union(x in prop::collection::vec(any::<bool>(), 0..40), len in 1usize..7) {
        prop_assert_eq!(opening(&x, len), window_opening(&x, len, false));
    }

    #[test]
    fn closing_matches_dual_opening(x in prop::collection::vec(any::<bool>(), 0..40), len in 1usize..7) {
        prop_assert_eq!(closing(&x, len), window_closing(&x, len));
    }

    #[test]
    fn opening_and_closing_are_idempotent(x in prop::collection::vec(any::<bool>(), 0..40), len in 1usize..7) {
        let o = opening(&x, len);
        prop_assert_eq!(opening(&o, len), o.clone());
        prop_assert!(o.iter().zip(&x).all(|(a, b)| !a || *b));
        let c = closing(&x, len);
        prop_assert_eq!(closing(&c, len), c.clone());
        prop_assert!(c.iter().zip(&x).all(|(a, b)| *a || !*b));
    }

    #[test]
    fn viterbi_is_optimal_and_monotone(
        values in prop::collection::vec(0.001f64..1.0, 3..=21),
        regions in 1usize..=3,
    ) {
        let frames = values.len() / regions;
        prop_assume!(frames >= 1 && frames <= 7);
        let probs = Array2::from_shape_fn((frames, regions), |(t, r)| values[t * regions + r]);
        let path = monotone_viterbi(&probs);
        prop_assert_eq!(path.len(), frames);
        prop_assert!(path.windows(2).all(|w| w[0] <= w[1]));
        let best = best_monotone(&probs);
        prop_assert!((log_score(&probs, &path) - best).abs() < 1e-9);
    }

    #[test]
    fn moving_average_matches_direct_mean(
        values in prop::collection::vec(0.0f64..1.0, 1..50),
        half in 0usize..5,
    ) {
        let window = 2 * half + 1;
        let got = moving_average(&values, window).unwrap();
        let n = values.len();
        for t in 0..n {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(n);
            let mean = values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            prop_assert!((got[t] - mean).abs() < 1e-12, "frame {}: {} vs {}", t, got[t], mean);
        }
    }
}

#[test]
fn window_one_is_identity() {
    let values = [0.1, 0.9, 0.4, 0.7];
    assert_eq!(moving_average(&values, 1).unwrap(), values.to_vec());
    let x = [true, false, true, true, false];
    assert_eq!(opening(&x, 1), x.to_vec());
    assert_eq!(closing(&x, 1), x.to_vec());
}
