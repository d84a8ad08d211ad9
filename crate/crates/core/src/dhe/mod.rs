//! Small head ensembles trained on per-frame feature matrices.

pub mod features;
pub mod head;
pub mod loss;

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

pub use features::{read_features, write_features};
pub use head::{predict_head, predict_probs, train_head, Architecture, HeadParams, HeadSpec, TrainedHead};
pub use loss::{default_pos_weight, Loss};

use crate::error::{Error, Result};
use crate::streams::{GroundTruth, ProbStream, Source};

/// One entry of a head-ensemble spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub backbone: u32,
    pub model: u32,
    pub spec: HeadSpec,
}

/// Spec file: the heads to train. A BCE head with an empty `pos_weight`
/// gets weights derived from the training labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub heads: Vec<EnsembleMember>,
}

impl EnsembleSpec {
    /// Two backbones, five heads each, mixing architectures and losses.
    pub fn default_ensemble() -> Self {
        let mk = |architecture, loss, seed| HeadSpec {
            architecture,
            loss,
            learning_rate: 0.5,
            epochs: 200,
            seed,
        };
        let mut heads = Vec::new();
        for backbone in 0..2u32 {
            let specs = [
                mk(Architecture::Linear, Loss::BcePosWeight { pos_weight: Vec::new() }, 1),
                mk(Architecture::Linear, Loss::Focal { gamma: 2.0 }, 2),
                mk(Architecture::Mlp { hidden: 16 }, Loss::BcePosWeight { pos_weight: Vec::new() }, 3),
                mk(Architecture::Mlp { hidden: 16 }, Loss::Focal { gamma: 2.0 }, 4),
                mk(
                    Architecture::Linear,
                    Loss::Asymmetric {
                        gamma_pos: 0.0,
                        gamma_neg: 4.0,
                        clip: 0.05,
                    },
                    5,
                ),
            ];
            for (model, mut spec) in specs.into_iter().enumerate() {
                spec.seed += 100 * u64::from(backbone);
                heads.push(EnsembleMember {
                    backbone,
                    model: model as u32,
                    spec,
                });
            }
        }
        Self { heads }
    }

    /// Fills derived positive weights.
    pub fn resolve(&self, labels: &Array2<bool>) -> Self {
        let positives: Vec<usize> = labels
            .columns()
            .into_iter()
            .map(|c| c.iter().filter(|&&y| y).count())
            .collect();
        let derived = default_pos_weight(&positives, labels.nrows());
        let mut out = self.clone();
        for m in &mut out.heads {
            if let Loss::BcePosWeight { pos_weight } = &mut m.spec.loss {
                if pos_weight.is_empty() {
                    *pos_weight = derived.clone();
                }
            }
        }
        out
    }
}

/// Stacks frame labels of all videos in video-id order; feature rows follow
/// the same order.
pub fn stack_labels(gts: &BTreeMap<String, GroundTruth>) -> Result<Array2<bool>> {
    let n_classes = gts.values().next().map_or(0, |g| g.labels().ncols());
    let total: usize = gts.values().map(GroundTruth::n_frames).sum();
    let mut out = Array2::from_elem((total, n_classes), false);
    let mut row = 0;
    for gt in gts.values() {
        if gt.labels().ncols() != n_classes {
            return Err(Error::Shape("ground truth class counts differ".into()));
        }
        out.slice_mut(s![row..row + gt.n_frames(), ..]).assign(gt.labels());
        row += gt.n_frames();
    }
    Ok(out)
}

/// Splits stacked predictions back into per-video streams.
pub fn split_predictions(
    probs: &Array2<f64>,
    gts: &BTreeMap<String, GroundTruth>,
    source: Source,
) -> Result<Vec<ProbStream>> {
    let total: usize = gts.values().map(GroundTruth::n_frames).sum();
    if total != probs.nrows() {
        return Err(Error::Shape(format!(
            "{} prediction rows for {total} labelled frames",
            probs.nrows()
        )));
    }
    let mut row = 0;
    let mut out = Vec::with_capacity(gts.len());
    for (video, gt) in gts {
        let block = probs.slice(s![row..row + gt.n_frames(), ..]).to_owned();
        out.push(ProbStream::new(video.clone(), source, block)?);
        row += gt.n_frames();
    }
    Ok(out)
}
