//! 1-D binary morphology with a flat structuring element of length `len`.
//!
//! Opening deletes positive runs shorter than `len`; closing fills zero gaps
//! shorter than `len` that sit between two positive runs. Gaps touching the
//! sequence edges are never filled.

use crate::streams::runs;

pub fn opening(seq: &[bool], len: usize) -> Vec<bool> {
    let mut out = seq.to_vec();
    if len <= 1 {
        return out;
    }
    for (s, e) in runs(seq.iter().copied()) {
        if e - s < len {
            out[s..e].fill(false);
        }
    }
    out
}

pub fn closing(seq: &[bool], len: usize) -> Vec<bool> {
    let mut out = seq.to_vec();
    if len <= 1 {
        return out;
    }
    let positives = runs(seq.iter().copied());
    for pair in positives.windows(2) {
        let (gap_start, gap_end) = (pair[0].1, pair[1].0);
        if gap_end - gap_start < len {
            out[gap_start..gap_end].fill(true);
        }
    }
    out
}

/// Opening followed by closing.
pub fn open_close(seq: &[bool], open_len: usize, close_len: usize) -> Vec<bool> {
    closing(&opening(seq, open_len), close_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(bits: &[u8]) -> Vec<bool> {
        bits.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn opening_removes_short_runs() {
        assert_eq!(opening(&b(&[0, 1, 1, 0, 1, 0]), 2), b(&[0, 1, 1, 0, 0, 0]));
    }

    #[test]
    fn closing_fills_short_gaps() {
        assert_eq!(closing(&b(&[1, 0, 1]), 2), b(&[1, 1, 1]));
        assert_eq!(closing(&b(&[1, 0, 0, 1]), 2), b(&[1, 0, 0, 1]));
        // edge gaps stay open
        assert_eq!(closing(&b(&[0, 1, 0]), 5), b(&[0, 1, 0]));
    }

    #[test]
    fn length_one_is_identity() {
        let s = b(&[1, 0, 1, 1, 0]);
        assert_eq!(opening(&s, 1), s);
        assert_eq!(closing(&s, 1), s);
    }

    #[test]
    fn order_matters() {
        // witness: closing first bridges the gap, opening first erases both runs
        let s = b(&[1, 0, 1]);
        assert_eq!(opening(&closing(&s, 2), 2), b(&[1, 1, 1]));
        assert_eq!(closing(&opening(&s, 2), 2), b(&[0, 0, 0]));
    }

    proptest! {
        #[test]
        fn idempotent(s in prop::collection::vec(any::<bool>(), 0..80), len in 1usize..8) {
            let o = opening(&s, len);
            prop_assert_eq!(opening(&o, len), o);
            let c = closing(&s, len);
            prop_assert_eq!(closing(&c, len), c);
        }

        #[test]
        fn opening_shrinks_closing_grows(s in prop::collection::vec(any::<bool>(), 0..80), len in 1usize..8) {
            let o = opening(&s, len);
            let c = closing(&s, len);
            for i in 0..s.len() {
                prop_assert!(!o[i] || s[i]);
                prop_assert!(!s[i] || c[i]);
            }
        }
    }
}
