//! Validation-guided hierarchical fusion.
//!
//! Heads of each backbone are combined with class-wise weights proportional
//! to their validation AP; backbones are then combined with weights
//! proportional to their validation frame mAP; the result is temperature
//! calibrated.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{frame_ap, frame_map};
use crate::streams::{GroundTruth, ProbStream, Source, StreamSet, VideoStreams};

/// Logits are taken of probabilities clamped to `[EPS, 1 - EPS]`.
pub const LOGIT_EPS: f64 = 1e-6;

const SUM_TOL: f64 = 1e-9;

/// `alpha[backbone][model][class]`.
pub type ModelWeights = BTreeMap<u32, BTreeMap<u32, Vec<f64>>>;
/// `beta[backbone]`.
pub type BackboneWeights = BTreeMap<u32, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub alpha: ModelWeights,
    pub beta: BackboneWeights,
    pub temperature: f64,
}

impl FusionWeights {
    /// Equal weights for every listed head and backbone.
    pub fn uniform(models: &BTreeMap<u32, Vec<u32>>, n_classes: usize) -> Self {
        let alpha = models
            .iter()
            .map(|(&b, ms)| {
                let w = 1.0 / ms.len() as f64;
                (b, ms.iter().map(|&m| (m, vec![w; n_classes])).collect())
            })
            .collect();
        let beta = models.keys().map(|&b| (b, 1.0 / models.len() as f64)).collect();
        Self {
            alpha,
            beta,
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature {} must be finite and positive",
                self.temperature
            )));
        }
        if self.beta.is_empty() {
            return Err(Error::InvalidArgument("no backbone weights".into()));
        }
        check_simplex(self.beta.values().copied(), "beta")?;
        for (&b, models) in &self.alpha {
            let n_classes = models.values().next().map_or(0, Vec::len);
            if models.values().any(|w| w.len() != n_classes) {
                return Err(Error::Shape(format!("alpha for backbone {b} is ragged")));
            }
            for c in 0..n_classes {
                check_simplex(
                    models.values().map(|w| w[c]),
                    &format!("alpha[backbone {b}][class {c}]"),
                )?;
            }
        }
        for &b in self.beta.keys() {
            if !self.alpha.contains_key(&b) {
                return Err(Error::InvalidArgument(format!(
                    "beta references backbone {b} without model weights"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: Self = serde_json::from_str(text)?;
        w.validate()?;
        Ok(w)
    }
}

fn check_simplex(values: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for v in values {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Range(format!("{what}: weight {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(Error::Range(format!("{what}: weights sum to {sum}")));
    }
    Ok(())
}

fn normalize_or_uniform(values: &[f64]) -> Vec<f64> {
    let sum: f64 = values.iter().sum();
    if sum > 0.0 {
        values.iter().map(|v| v / sum).collect()
    } else {
        vec![1.0 / values.len() as f64; values.len()]
    }
}

/// Class-wise model weights from validation AP, keyed `(backbone, model)`.
///
/// Absent APs count as zero. A `(backbone, class)` whose APs are all zero
/// falls back to uniform weights.
pub fn compute_model_weights(val_aps: &BTreeMap<(u32, u32), Vec<Option<f64>>>) -> Result<ModelWeights> {
    let mut by_backbone: BTreeMap<u32, Vec<(u32, &Vec<Option<f64>>)>> = BTreeMap::new();
    for (&(b, m), aps) in val_aps {
        for (c, ap) in aps.iter().enumerate() {
            if let Some(v) = ap {
                if !(v.is_finite() && *v >= 0.0) {
                    return Err(Error::Range(format!(
                        "AP {v} for backbone {b}, model {m}, class {c}"
                    )));
                }
            }
        }
        by_backbone.entry(b).or_default().push((m, aps));
    }
    let mut alpha = ModelWeights::new();
    for (b, models) in by_backbone {
        let n_classes = models[0].1.len();
        if models.iter().any(|(_, aps)| aps.len() != n_classes) {
            return Err(Error::Shape(format!("AP table for backbone {b} is ragged")));
        }
        let mut per_model: BTreeMap<u32, Vec<f64>> =
            models.iter().map(|&(m, _)| (m, Vec::with_capacity(n_classes))).collect();
        for c in 0..n_classes {
            let raw: Vec<f64> = models.iter().map(|(_, aps)| aps[c].unwrap_or(0.0)).collect();
            for ((m, _), w) in models.iter().zip(normalize_or_uniform(&raw)) {
                per_model.get_mut(m).expect("model present").push(w);
            }
        }
        alpha.insert(b, per_model);
    }
    Ok(alpha)
}

/// Backbone weights proportional to validation frame mAP; uniform when all
/// are zero.
pub fn compute_backbone_weights(val_frame_maps: &BTreeMap<u32, f64>) -> Result<BackboneWeights> {
    if val_frame_maps.is_empty() {
        return Err(Error::InvalidArgument("no backbones".into()));
    }
    if let Some((b, v)) = val_frame_maps.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Range(format!("mAP {v} for backbone {b}")));
    }
    let raw: Vec<f64> = val_frame_maps.values().copied().collect();
    Ok(val_frame_maps.keys().copied().zip(normalize_or_uniform(&raw)).collect())
}

/// Per-entry convex combination; results are clamped to the range spanned
/// by the positively weighted inputs so rounding never escapes it.
fn convex_combine(
    video_id: &str,
    source: Source,
    inputs: &[(&ProbStream, &[f64])],
) -> Result<ProbStream> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to fuse".into()))?
        .0;
    let (t_len, c_len) = first.probs().dim();
    for (s, w) in inputs {
        if s.probs().dim() != (t_len, c_len) || s.video_id() != video_id {
            return Err(Error::Shape(format!(
                "{} {} {:?} does not align with {video_id} {:?}",
                s.video_id(),
                s.source(),
                s.probs().dim(),
                (t_len, c_len)
            )));
        }
        if w.len() != c_len {
            return Err(Error::Shape(format!("{} weights for {c_len} classes", w.len())));
        }
    }
    let mut out = Array2::<f64>::zeros((t_len, c_len));
    for t in 0..t_len {
        for c in 0..c_len {
            let mut acc = 0.0;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (s, w) in inputs {
                let p = s.get(t, c);
                acc += w[c] * p;
                if w[c] > 0.0 {
                    lo = lo.min(p);
                    hi = hi.max(p);
                }
            }
            out[[t, c]] = if lo <= hi { acc.clamp(lo, hi) } else { acc };
        }
    }
    ProbStream::new(video_id, source, out)
}

/// Fuses the heads of one backbone with class-wise weights.
pub fn fuse_models(
    backbone: u32,
    heads: &[(u32, &ProbStream)],
    alpha: &BTreeMap<u32, Vec<f64>>,
) -> Result<ProbStream> {
    let video_id = heads
        .first()
        .map(|(_, s)| s.video_id().to_string())
        .ok_or_else(|| Error::InvalidArgument(format!("backbone {backbone}: no head streams")))?;
    let mut inputs = Vec::with_capacity(alpha.len());
    for (m, w) in alpha {
        let stream = heads
            .iter()
            .find(|(id, _)| id == m)
            .map(|(_, s)| *s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "video {video_id}: weights reference missing stream b{backbone}/m{m}"
                ))
            })?;
        inputs.push((stream, w.as_slice()));
    }
    convex_combine(&video_id, Source::Backbone(backbone), &inputs)
}

/// Fuses per-backbone streams with scalar backbone weights.
pub fn fuse_backbones(streams: &[(u32, &ProbStream)], beta: &BackboneWeights) -> Result<ProbStream> {
    let first = streams
        .first()
        .ok_or_else(|| Error::InvalidArgument("no backbone streams".into()))?
        .1;
    let c_len = first.n_classes();
    let expanded: Vec<(u32, Vec<f64>)> = beta.iter().map(|(&b, &w)| (b, vec![w; c_len])).collect();
    let mut inputs = Vec::with_capacity(beta.len());
    for (b, w) in &expanded {
        let stream = streams
            .iter()
            .find(|(id, _)| id == b)
            .map(|(_, s)| *s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "video {}: weights reference missing backbone {b}",
                    first.video_id()
                ))
            })?;
        inputs.push((stream, w.as_slice()));
    }
    convex_combine(first.video_id(), Source::Fused, &inputs)
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    (p / (1.0 - p)).ln()
}

/// Temperature scaling of a single probability.
pub fn calibrate_value(p: f64, temperature: f64) -> f64 {
    logistic(logit(p) / temperature)
}

/// Temperature scaling of every entry.
pub fn calibrate(stream: &ProbStream, temperature: f64) -> Result<ProbStream> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature {temperature} must be finite and positive"
        )));
    }
    stream.map(stream.source(), |p| calibrate_value(p, temperature))
}

/// Full hierarchy for one video: heads -> backbones -> fused -> calibrated.
pub fn fuse_video(video: &VideoStreams, weights: &FusionWeights) -> Result<ProbStream> {
    let mut per_backbone = Vec::with_capacity(weights.beta.len());
    for &b in weights.beta.keys() {
        let alpha = weights
            .alpha
            .get(&b)
            .ok_or_else(|| Error::InvalidArgument(format!("no model weights for backbone {b}")))?;
        per_backbone.push((b, fuse_models(b, &video.heads(b), alpha)?));
    }
    let refs: Vec<(u32, &ProbStream)> = per_backbone.iter().map(|(b, s)| (*b, s)).collect();
    let fused = fuse_backbones(&refs, &weights.beta)?;
    calibrate(&fused, weights.temperature)
}

/// Fuses every video of the set; output ordered by video id.
pub fn fuse_set(set: &StreamSet, weights: &FusionWeights) -> Result<Vec<ProbStream>> {
    let videos: Vec<&VideoStreams> = set.videos().map(|(_, v)| v).collect();
    videos.into_par_iter().map(|v| fuse_video(v, weights)).collect()
}

/// Which parts of the hierarchy use validation-derived weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionMode {
    pub weighted_models: bool,
    pub weighted_backbones: bool,
    /// Restrict fusion to these backbones (all when `None`).
    pub backbones: Option<Vec<u32>>,
}

impl Default for FusionMode {
    fn default() -> Self {
        Self {
            weighted_models: true,
            weighted_backbones: true,
            backbones: None,
        }
    }
}

/// Validation statistics behind a set of fusion weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    /// `head_ap[backbone][model][class]`.
    pub head_ap: BTreeMap<u32, BTreeMap<u32, Vec<Option<f64>>>>,
    pub backbone_frame_map: BTreeMap<u32, Option<f64>>,
}

/// Derives model and backbone weights from validation streams and frame
/// ground truth. Temperature is left at 1.
pub fn fit_fusion_weights(
    val: &StreamSet,
    gts: &BTreeMap<String, GroundTruth>,
    mode: &FusionMode,
) -> Result<(FusionWeights, FusionReport)> {
    let sources = val.all_sources();
    let mut models: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for s in &sources {
        if let Source::Head { backbone, model } = *s {
            if mode.backbones.as_ref().is_none_or(|bs| bs.contains(&backbone)) {
                models.entry(backbone).or_default().push(model);
            }
        }
    }
    if models.is_empty() {
        return Err(Error::InvalidArgument("no head streams to fuse".into()));
    }
    let n_classes = val
        .videos()
        .next()
        .map(|(_, v)| v.n_classes())
        .unwrap_or_default();

    let keys: Vec<(u32, u32)> = models
        .iter()
        .flat_map(|(&b, ms)| ms.iter().map(move |&m| (b, m)))
        .collect();
    let head_aps: Vec<Vec<Option<f64>>> = keys
        .par_iter()
        .map(|&(backbone, model)| {
            let streams = collect_source(val, Source::Head { backbone, model })?;
            per_class_frame_ap(&streams, gts, n_classes)
        })
        .collect::<Result<_>>()?;
    let val_aps: BTreeMap<(u32, u32), Vec<Option<f64>>> =
        keys.iter().copied().zip(head_aps.iter().cloned()).collect();

    let mut weights = FusionWeights::uniform(&models, n_classes);
    if mode.weighted_models {
        weights.alpha = compute_model_weights(&val_aps)?;
    }

    let mut backbone_frame_map = BTreeMap::new();
    for (&b, alpha) in &weights.alpha {
        let fused: Vec<ProbStream> = val
            .videos()
            .map(|(_, v)| fuse_models(b, &v.heads(b), alpha))
            .collect::<Result<_>>()?;
        backbone_frame_map.insert(b, frame_map(&fused, gts)?.map);
    }
    if mode.weighted_backbones {
        let maps = backbone_frame_map
            .iter()
            .map(|(&b, m)| (b, m.unwrap_or(0.0)))
            .collect();
        weights.beta = compute_backbone_weights(&maps)?;
    }
    weights.validate()?;

    let mut head_ap: BTreeMap<u32, BTreeMap<u32, Vec<Option<f64>>>> = BTreeMap::new();
    for ((b, m), aps) in val_aps {
        head_ap.entry(b).or_default().insert(m, aps);
    }
    Ok((
        weights,
        FusionReport {
            head_ap,
            backbone_frame_map,
        },
    ))
}

fn collect_source(set: &StreamSet, source: Source) -> Result<Vec<&ProbStream>> {
    set.videos()
        .map(|(id, v)| {
            v.get(source).ok_or_else(|| {
                Error::InvalidArgument(format!("video {id} lacks stream {source}"))
            })
        })
        .collect()
}

fn per_class_frame_ap(
    streams: &[&ProbStream],
    gts: &BTreeMap<String, GroundTruth>,
    n_classes: usize,
) -> Result<Vec<Option<f64>>> {
    let mut out = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for s in streams {
            let gt = gts.get(s.video_id()).ok_or_else(|| {
                Error::InvalidArgument(format!("no ground truth for {}", s.video_id()))
            })?;
            if gt.n_frames() != s.n_frames() {
                return Err(Error::Shape(format!(
                    "video {}: {} stream frames vs {} labelled",
                    s.video_id(),
                    s.n_frames(),
                    gt.n_frames()
                )));
            }
            scores.extend(s.class_series(c).iter());
            labels.extend(gt.labels().column(c).iter());
        }
        out.push(frame_ap(&scores, &labels)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(rows: &[Vec<f64>]) -> ProbStream {
        ProbStream::from_rows("v", Source::Fused, rows).unwrap()
    }

    #[test]
    fn model_weight_examples() {
        let aps = BTreeMap::from([
            ((0, 0), vec![Some(0.2)]),
            ((0, 1), vec![Some(0.3)]),
            ((0, 2), vec![Some(0.5)]),
        ]);
        let alpha = compute_model_weights(&aps).unwrap();
        let w: Vec<f64> = alpha[&0].values().map(|v| v[0]).collect();
        for (a, b) in w.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }

        let equal: BTreeMap<_, _> = (0..5).map(|m| ((1, m), vec![Some(0.7)])).collect();
        let alpha = compute_model_weights(&equal).unwrap();
        assert!(alpha[&1].values().all(|v| (v[0] - 0.2).abs() < 1e-15));

        let zero: BTreeMap<_, _> = (0..5)
            .map(|m| ((1, m), vec![if m % 2 == 0 { Some(0.0) } else { None }]))
            .collect();
        let alpha = compute_model_weights(&zero).unwrap();
        assert!(alpha[&1].values().all(|v| v[0] == 0.2));

        let negative = BTreeMap::from([((0, 0), vec![Some(-0.1)])]);
        assert!(compute_model_weights(&negative).is_err());
    }

    #[test]
    fn backbone_weight_examples() {
        let beta = compute_backbone_weights(&BTreeMap::from([(0, 0.6), (1, 0.4)])).unwrap();
        assert!((beta[&0] - 0.6).abs() < 1e-15 && (beta[&1] - 0.4).abs() < 1e-15);
        let beta = compute_backbone_weights(&BTreeMap::from([(3, 0.25)])).unwrap();
        assert_eq!(beta[&3], 1.0);
        let beta = compute_backbone_weights(&BTreeMap::from([(0, 0.3), (1, 0.3)])).unwrap();
        assert_eq!((beta[&0], beta[&1]), (0.5, 0.5));
        assert!(compute_backbone_weights(&BTreeMap::from([(0, -1.0)])).is_err());
        assert!(compute_backbone_weights(&BTreeMap::new()).is_err());
    }

    #[test]
    fn fuse_models_examples() {
        let a = stream(&[vec![0.2]]);
        let b = stream(&[vec![0.6]]);
        let one = fuse_models(0, &[(0, &a)], &BTreeMap::from([(0, vec![1.0])])).unwrap();
        assert_eq!(one.probs(), a.probs());
        assert_eq!(one.source(), Source::Backbone(0));
        let half = fuse_models(
            0,
            &[(0, &a), (1, &b)],
            &BTreeMap::from([(0, vec![0.5]), (1, vec![0.5])]),
        )
        .unwrap();
        assert!((half.get(0, 0) - 0.4).abs() < 1e-15);
        let missing = fuse_models(0, &[(0, &a)], &BTreeMap::from([(0, vec![0.5]), (7, vec![0.5])]));
        assert!(missing.unwrap_err().to_string().contains("m7"));
    }

    #[test]
    fn fuse_backbones_examples() {
        let a = stream(&[vec![0.8]]);
        let b = stream(&[vec![0.2]]);
        let first = fuse_backbones(&[(0, &a), (1, &b)], &BTreeMap::from([(0, 1.0), (1, 0.0)])).unwrap();
        assert_eq!(first.probs(), a.probs());
        let mix = fuse_backbones(&[(0, &a), (1, &b)], &BTreeMap::from([(0, 0.75), (1, 0.25)])).unwrap();
        assert!((mix.get(0, 0) - 0.65).abs() < 1e-15);
    }

    #[test]
    fn calibration_examples() {
        let s = stream(&[vec![0.8, 0.5, 0.3]]);
        let c = calibrate(&s, 2.0).unwrap();
        assert!((c.get(0, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.get(0, 1), 0.5);
        let id = calibrate(&s, 1.0).unwrap();
        for (x, y) in id.probs().iter().zip(s.probs()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(calibrate(&s, 0.0).is_err());
        assert!(calibrate(&s, -1.0).is_err());
        // saturated inputs are clamped, never infinite
        let sat = calibrate(&stream(&[vec![0.0, 1.0]]), 0.5).unwrap();
        assert!(sat.get(0, 0) > 0.0 && sat.get(0, 1) < 1.0);
    }

    #[test]
    fn weights_json_round_trip() {
        let models = BTreeMap::from([(0, vec![0, 1]), (1, vec![0])]);
        let w = FusionWeights::uniform(&models, 3);
        let back = FusionWeights::from_json(&w.to_json().unwrap()).unwrap();
        assert_eq!(w, back);
        let mut bad = w.clone();
        bad.beta.insert(0, 0.9);
        assert!(bad.validate().is_err());
    }
}
