//! Imbalance-aware multi-label losses with analytic gradients wrt logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::logistic;

/// Floor applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

fn ln(x: f64) -> f64 {
    x.max(LOG_EPS).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Loss {
    /// Binary cross-entropy with a per-class positive weight.
    BcePosWeight { pos_weight: Vec<f64> },
    Focal { gamma: f64 },
    /// Asymmetric focusing with probability shifting of negatives by `clip`.
    Asymmetric { gamma_pos: f64, gamma_neg: f64, clip: f64 },
}

impl Loss {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            Loss::BcePosWeight { pos_weight } => {
                if pos_weight.len() != n_classes {
                    return bad(format!("{} positive weights for {n_classes} classes", pos_weight.len()));
                }
                if pos_weight.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return bad("positive weights must be finite and > 0".into());
                }
            }
            Loss::Focal { gamma } => {
                if !(gamma.is_finite() && *gamma >= 0.0) {
                    return bad(format!("focal gamma {gamma} must be >= 0"));
                }
            }
            Loss::Asymmetric { gamma_pos, gamma_neg, clip } => {
                if !(*gamma_pos >= 0.0 && *gamma_neg >= 0.0 && gamma_pos.is_finite() && gamma_neg.is_finite()) {
                    return bad("asymmetric gammas must be >= 0".into());
                }
                if !(0.0..1.0).contains(clip) {
                    return bad(format!("asymmetric clip {clip} must lie in [0, 1)"));
                }
            }
        }
        Ok(())
    }

    /// Loss and d loss / d z for one logit of class `class`.
    pub fn element(&self, class: usize, z: f64, y: bool) -> (f64, f64) {
        let p = logistic(z);
        match self {
            Loss::BcePosWeight { pos_weight } => {
                let w = pos_weight[class];
                if y {
                    (-w * ln(p), -w * (1.0 - p))
                } else {
                    (-ln(1.0 - p), p)
                }
            }
            Loss::Focal { gamma } => {
                if y {
                    focal_positive(p, *gamma)
                } else {
                    focal_negative(p, *gamma)
                }
            }
            Loss::Asymmetric { gamma_pos, gamma_neg, clip } => {
                if y {
                    focal_positive(p, *gamma_pos)
                } else {
                    shifted_negative(p, *gamma_neg, *clip)
                }
            }
        }
    }

    /// Summed loss over classes and its gradient.
    pub fn value_and_gradient(&self, z: &[f64], y: &[bool]) -> Result<(f64, Vec<f64>)> {
        if z.len() != y.len() {
            return Err(Error::Shape(format!("{} logits vs {} targets", z.len(), y.len())));
        }
        if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite logit {bad}")));
        }
        let mut total = 0.0;
        let grad = z
            .iter()
            .zip(y)
            .enumerate()
            .map(|(c, (&zc, &yc))| {
                let (l, g) = self.element(c, zc, yc);
                total += l;
                g
            })
            .collect();
        Ok((total, grad))
    }
}

fn focal_positive(p: f64, gamma: f64) -> (f64, f64) {
    let q = 1.0 - p;
    let loss = -q.powf(gamma) * ln(p);
    let grad = gamma * p * q.powf(gamma) * ln(p) - q.powf(gamma + 1.0);
    (loss, grad)
}

fn focal_negative(p: f64, gamma: f64) -> (f64, f64) {
    let q = 1.0 - p;
    let loss = -p.powf(gamma) * ln(q);
    let grad = -gamma * p.powf(gamma) * q * ln(q) + p.powf(gamma + 1.0);
    (loss, grad)
}

fn shifted_negative(p: f64, gamma: f64, clip: f64) -> (f64, f64) {
    let pm = (p - clip).max(0.0);
    if pm == 0.0 {
        return (0.0, 0.0);
    }
    let qm = 1.0 - pm;
    let loss = -pm.powf(gamma) * ln(qm);
    // d loss / d pm, then chain through p = logistic(z)
    let focus = if gamma == 0.0 { 0.0 } else { gamma * pm.powf(gamma - 1.0) * ln(qm) };
    let dpm = -focus + pm.powf(gamma) / qm;
    (loss, dpm * p * (1.0 - p))
}

/// Positive weights `#neg / #pos` per class, clamped to `[1, 100]`; classes
/// without positives get 1.
pub fn default_pos_weight(positives: &[usize], total: usize) -> Vec<f64> {
    positives
        .iter()
        .map(|&pos| {
            if pos == 0 {
                1.0
            } else {
                ((total - pos) as f64 / pos as f64).clamp(1.0, 100.0)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_values() {
        let bce = Loss::BcePosWeight { pos_weight: vec![2.0] };
        assert!((bce.element(0, 0.0, true).0 - 2.0 * 2f64.ln()).abs() < 1e-12);
        let focal = Loss::Focal { gamma: 2.0 };
        assert!((focal.element(0, 0.0, true).0 - 0.25 * 2f64.ln()).abs() < 1e-12);
        let asl = Loss::Asymmetric { gamma_pos: 0.0, gamma_neg: 1.0, clip: 0.05 };
        let expected = 0.45 * -(0.55f64.ln());
        assert!((asl.element(0, 0.0, false).0 - expected).abs() < 1e-12);
        assert!((expected - 0.2690).abs() < 1e-4);
    }

    #[test]
    fn clipped_negatives_are_free() {
        let asl = Loss::Asymmetric { gamma_pos: 0.0, gamma_neg: 4.0, clip: 0.2 };
        assert_eq!(asl.element(0, -3.0, false), (0.0, 0.0));
    }

    #[test]
    fn pos_weight_is_monotone() {
        let l = |w: f64| Loss::BcePosWeight { pos_weight: vec![w] }.element(0, -0.3, true).0;
        assert!(l(1.0) < l(2.0) && l(2.0) < l(5.0));
    }

    #[test]
    fn default_weights_clamped() {
        assert_eq!(default_pos_weight(&[1, 50, 0, 600], 1000), vec![100.0, 19.0, 1.0, 1.0]);
    }

    #[test]
    fn validation() {
        assert!(Loss::Focal { gamma: -1.0 }.validate(1).is_err());
        assert!(Loss::Asymmetric { gamma_pos: 0.0, gamma_neg: 4.0, clip: 1.0 }.validate(1).is_err());
        assert!(Loss::BcePosWeight { pos_weight: vec![1.0] }.validate(2).is_err());
        assert!(Loss::Focal { gamma: 2.0 }.value_and_gradient(&[f64::NAN], &[true]).is_err());
    }
}
