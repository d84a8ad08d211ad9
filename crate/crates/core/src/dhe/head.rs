//! Lightweight linear and one-hidden-layer heads trained by full-batch
//! gradient descent.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::loss::Loss;
use crate::error::{Error, Result};
use crate::fusion::logistic;
use crate::streams::{ProbStream, Source};

/// Logits are clamped to this magnitude before the logistic so outputs stay
/// strictly inside (0, 1).
const MAX_LOGIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub architecture: Architecture,
    pub loss: Loss,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl HeadSpec {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if let Architecture::Mlp { hidden: 0 } = self.architecture {
            return Err(Error::InvalidArgument("hidden width must be >= 1".into()));
        }
        self.loss.validate(n_classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HeadParams {
    Linear {
        w: Array2<f64>,
        b: Array1<f64>,
    },
    Mlp {
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    },
}

impl HeadParams {
    pub fn zeros(arch: Architecture, dim: usize, n_classes: usize) -> Self {
        match arch {
            Architecture::Linear => HeadParams::Linear {
                w: Array2::zeros((dim, n_classes)),
                b: Array1::zeros(n_classes),
            },
            Architecture::Mlp { hidden } => HeadParams::Mlp {
                w1: Array2::zeros((dim, hidden)),
                b1: Array1::zeros(hidden),
                w2: Array2::zeros((hidden, n_classes)),
                b2: Array1::zeros(n_classes),
            },
        }
    }

    /// Small seeded Gaussian initialization; biases start at zero.
    pub fn init(arch: Architecture, dim: usize, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |shape: (usize, usize), std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            Array2::from_shape_simple_fn(shape, || normal.sample(&mut rng))
        };
        match arch {
            Architecture::Linear => HeadParams::Linear {
                w: draw((dim, n_classes), 0.01),
                b: Array1::zeros(n_classes),
            },
            Architecture::Mlp { hidden } => {
                let w1 = draw((dim, hidden), (1.0 / dim.max(1) as f64).sqrt());
                let w2 = draw((hidden, n_classes), 0.01);
                HeadParams::Mlp {
                    w1,
                    b1: Array1::zeros(hidden),
                    w2,
                    b2: Array1::zeros(n_classes),
                }
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            HeadParams::Linear { w, .. } => w.nrows(),
            HeadParams::Mlp { w1, .. } => w1.nrows(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            HeadParams::Linear { b, .. } | HeadParams::Mlp { b2: b, .. } => b.len(),
        }
    }

    /// Logits (frames x classes) and, for MLPs, the hidden pre-activations.
    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Option<Array2<f64>>) {
        match self {
            HeadParams::Linear { w, b } => (x.dot(w) + b, None),
            HeadParams::Mlp { w1, b1, w2, b2 } => {
                let pre = x.dot(w1) + b1;
                let hidden = pre.mapv(|v| v.max(0.0));
                (hidden.dot(w2) + b2, Some(pre))
            }
        }
    }

    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "features have {} columns, head expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(self.forward(x).0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedHead {
    pub params: HeadParams,
    /// Mean loss before each epoch's update, then the final loss.
    pub loss_history: Vec<f64>,
}

impl TrainedHead {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history holds the final loss")
    }
}

/// Mean loss over frames and its gradient wrt logits, with untrained
/// classes masked out.
fn loss_and_logit_grad(
    loss: &Loss,
    logits: &Array2<f64>,
    labels: &Array2<bool>,
    trained: &[bool],
) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for ((t, c), &z) in logits.indexed_iter() {
        if !trained[c] {
            continue;
        }
        if !z.is_finite() {
            return Err(Error::Diverged(format!("logit {z} at frame {t}, class {c}")));
        }
        let (l, g) = loss.element(c, z, labels[[t, c]]);
        total += l;
        grad[[t, c]] = g / n;
    }
    let mean = total / n;
    if !mean.is_finite() {
        return Err(Error::Diverged(format!("loss became {mean}")));
    }
    Ok((mean, grad))
}

/// Full-batch gradient descent from a seeded initialization. Classes with no
/// positive frames are left untrained.
pub fn train_head(features: &Array2<f64>, labels: &Array2<bool>, spec: &HeadSpec) -> Result<TrainedHead> {
    if features.nrows() != labels.nrows() {
        return Err(Error::Shape(format!(
            "{} feature rows vs {} label rows",
            features.nrows(),
            labels.nrows()
        )));
    }
    let n_classes = labels.ncols();
    spec.validate(n_classes)?;
    let trained: Vec<bool> = labels.axis_iter(Axis(1)).map(|col| col.iter().any(|&y| y)).collect();
    for (c, _) in trained.iter().enumerate().filter(|(_, t)| !**t) {
        log::warn!("class {c} has no positive frames; left untrained");
    }

    let mut params = HeadParams::init(spec.architecture, features.ncols(), n_classes, spec.seed);
    let lr = spec.learning_rate;
    let mut history = Vec::with_capacity(spec.epochs + 1);
    for _ in 0..spec.epochs {
        let (logits, pre) = params.forward(features);
        let (loss, dz) = loss_and_logit_grad(&spec.loss, &logits, labels, &trained)?;
        history.push(loss);
        match &mut params {
            HeadParams::Linear { w, b } => {
                let dw = features.t().dot(&dz);
                let db = dz.sum_axis(Axis(0));
                w.scaled_add(-lr, &dw);
                b.scaled_add(-lr, &db);
            }
            HeadParams::Mlp { w1, b1, w2, b2 } => {
                let pre = pre.expect("mlp forward keeps activations");
                let hidden = pre.mapv(|v| v.max(0.0));
                let dw2 = hidden.t().dot(&dz);
                let db2 = dz.sum_axis(Axis(0));
                let mut dh = dz.dot(&w2.t());
                dh.zip_mut_with(&pre, |g, &p| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
                let dw1 = features.t().dot(&dh);
                let db1 = dh.sum_axis(Axis(0));
                w2.scaled_add(-lr, &dw2);
                b2.scaled_add(-lr, &db2);
                w1.scaled_add(-lr, &dw1);
                b1.scaled_add(-lr, &db1);
            }
        }
    }
    let (logits, _) = params.forward(features);
    let (loss, _) = loss_and_logit_grad(&spec.loss, &logits, labels, &trained)?;
    history.push(loss);
    Ok(TrainedHead {
        params,
        loss_history: history,
    })
}

/// Probabilities of a head on a feature matrix.
pub fn predict_probs(params: &HeadParams, features: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(params
        .logits(features)?
        .mapv(|z| logistic(z.clamp(-MAX_LOGIT, MAX_LOGIT))))
}

pub fn predict_head(
    params: &HeadParams,
    features: &Array2<f64>,
    video_id: &str,
    source: Source,
) -> Result<ProbStream> {
    ProbStream::new(video_id, source, predict_probs(params, features)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_half() {
        let params = HeadParams::zeros(Architecture::Mlp { hidden: 3 }, 4, 2);
        let p = predict_probs(&params, &Array2::from_elem((5, 4), 1.7)).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_epochs_returns_init() {
        let spec = HeadSpec {
            architecture: Architecture::Linear,
            loss: Loss::Focal { gamma: 2.0 },
            learning_rate: 0.1,
            epochs: 0,
            seed: 9,
        };
        let x = Array2::from_elem((3, 2), 1.0);
        let y = Array2::from_elem((3, 1), true);
        let head = train_head(&x, &y, &spec).unwrap();
        assert_eq!(head.params, HeadParams::init(Architecture::Linear, 2, 1, 9));
        assert_eq!(head.loss_history.len(), 1);
    }

    #[test]
    fn dimension_mismatch() {
        let params = HeadParams::zeros(Architecture::Linear, 3, 1);
        assert!(predict_probs(&params, &Array2::zeros((2, 4))).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let spec = HeadSpec {
            architecture: Architecture::Linear,
            loss: Loss::BcePosWeight { pos_weight: vec![1.0] },
            learning_rate: 0.1,
            epochs: 5,
            seed: 1,
        };
        let x = ndarray::array![[f64::NAN, 1.0], [0.0, 1.0]];
        let y = ndarray::array![[true], [false]];
        let r = train_head(&x, &y, &spec);
        assert!(matches!(r, Err(Error::Diverged(_))), "{r:?}");
    }
}
