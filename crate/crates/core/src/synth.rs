//! Seeded synthetic corpus: capsule-style ground truth and noisy head
//! streams from two backbones.
//!
//! Randomness comes from one ChaCha8 seed split into independent streams:
//! stream 0 draws the head perturbations, stream `1 + 2v` the ground truth of
//! video `v`, stream `2 + 2v` its predictions and stream `2^40 + v` its
//! features. Within a stream, draws happen in a fixed documented order
//! (regions, landmarks in id order, pathologies in id order; then backbone
//! noise per class, then heads in model order), so a corpus is reproducible
//! byte-for-byte and videos can be generated in parallel.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::PerKind;
use crate::error::{Error, Result};
use crate::fusion::logistic;
use crate::streams::{
    sort_events, write_events, write_ground_truth, write_streams, EventRecord, GroundTruth, ProbStream, Source,
};
use crate::taxonomy::{save_taxonomy, ClassKind, LabelSpace};

/// Magnitude of the noise-free logit.
pub const IDEAL_LOGIT: f64 = 2.5;

const FEATURE_STREAM_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneNoise {
    /// Stationary logit-noise standard deviation per class kind.
    pub std: PerKind<f64>,
    /// AR(1) coefficient in [0, 1); 0 gives independent frames.
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadPerturbation {
    pub count: u32,
    pub bias_range: (f64, f64),
    pub scale_range: (f64, f64),
    /// Head-specific independent logit noise.
    pub noise_std: f64,
    /// Probability that a (head, class) pair sees only a weakened signal.
    pub blind_prob: f64,
    /// Signal gain of a weakened pair.
    pub blind_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub splits: SplitSizes,
    pub frames: (usize, usize),
    /// Mean share of each region in transit order; jittered per video.
    pub region_weights: Vec<f64>,
    pub region_jitter: f64,
    pub min_region_frames: usize,
    pub landmark_duration: (usize, usize),
    /// Events per 1000 frames, per pathology in id order.
    pub pathology_rates: Vec<f64>,
    pub pathology_duration: (usize, usize),
    /// Minimum gap between two events of the same pathology.
    pub pathology_gap: usize,
    pub backbones: Vec<BackboneNoise>,
    /// Probability that a backbone sees a class only through a weakened
    /// signal. No class is weak on every backbone.
    pub backbone_weak_prob: f64,
    pub backbone_weak_gain: f64,
    pub heads: HeadPerturbation,
    /// Width of the optional per-frame feature matrices (0 disables them).
    pub feature_dim: usize,
    pub feature_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_917,
            splits: SplitSizes {
                train: 12,
                val: 4,
                test: 4,
            },
            frames: (2800, 3200),
            region_weights: vec![0.03, 0.07, 0.25, 0.45, 0.20],
            region_jitter: 0.3,
            min_region_frames: 30,
            landmark_duration: (15, 45),
            pathology_rates: vec![1.0, 0.6, 0.4, 0.3, 0.8],
            pathology_duration: (20, 120),
            pathology_gap: 30,
            backbones: vec![
                BackboneNoise {
                    std: PerKind {
                        region: 1.0,
                        landmark: 1.2,
                        pathology: 1.5,
                    },
                    rho: 0.9,
                },
                BackboneNoise {
                    std: PerKind {
                        region: 1.5,
                        landmark: 1.5,
                        pathology: 1.0,
                    },
                    rho: 0.0,
                },
            ],
            backbone_weak_prob: 0.3,
            backbone_weak_gain: 0.05,
            heads: HeadPerturbation {
                count: 5,
                bias_range: (-0.5, 0.5),
                scale_range: (0.7, 1.3),
                noise_std: 1.0,
                blind_prob: 0.2,
                blind_gain: 0.1,
            },
            feature_dim: 16,
            feature_noise: 1.5,
        }
    }
}

impl SynthConfig {
    /// Lossless variant: no noise, no head perturbation.
    pub fn noise_free(mut self) -> Self {
        for b in &mut self.backbones {
            b.std = PerKind::splat(0.0);
        }
        self.heads.bias_range = (0.0, 0.0);
        self.heads.scale_range = (1.0, 1.0);
        self.heads.noise_std = 0.0;
        self.heads.blind_prob = 0.0;
        self.backbone_weak_prob = 0.0;
        self
    }

    pub fn validate(&self, space: &LabelSpace) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let n_path = space.ids_of_kind(ClassKind::Pathology).count();
        if self.region_weights.len() != space.n_regions() {
            return bad(format!(
                "{} region weights for {} regions",
                self.region_weights.len(),
                space.n_regions()
            ));
        }
        if self.region_weights.iter().any(|w| !(*w > 0.0)) {
            return bad("region weights must be positive".into());
        }
        if !(0.0..1.0).contains(&self.region_jitter) {
            return bad("region_jitter must lie in [0, 1)".into());
        }
        if self.pathology_rates.len() != n_path {
            return bad(format!(
                "{} pathology rates for {n_path} pathologies",
                self.pathology_rates.len()
            ));
        }
        if self.pathology_rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("pathology rates must be >= 0".into());
        }
        if n_path > 0 && !self.pathology_rates.iter().any(|&r| r > 0.0) {
            return bad("at least one pathology rate must be positive".into());
        }
        let ranges = [
            ("frames", self.frames),
            ("landmark_duration", self.landmark_duration),
            ("pathology_duration", self.pathology_duration),
        ];
        for (name, (lo, hi)) in ranges {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range ({lo}, {hi}) is invalid"));
            }
        }
        let min_len = self.min_region_frames.max(1) * space.n_regions();
        if self.frames.0 < min_len {
            return bad(format!("videos of {} frames cannot hold {min_len} region frames", self.frames.0));
        }
        if self.backbones.is_empty() {
            return bad("at least one backbone is required".into());
        }
        for b in &self.backbones {
            if !(0.0..1.0).contains(&b.rho) {
                return bad(format!("rho {} must lie in [0, 1)", b.rho));
            }
            if [b.std.region, b.std.landmark, b.std.pathology].iter().any(|s| !(*s >= 0.0)) {
                return bad("noise std must be >= 0".into());
            }
        }
        let h = &self.heads;
        if h.count == 0 {
            return bad("at least one head per backbone is required".into());
        }
        if h.bias_range.0 > h.bias_range.1 || h.scale_range.0 > h.scale_range.1 || h.scale_range.0 <= 0.0 {
            return bad("head bias/scale ranges are invalid".into());
        }
        if !(0.0..=1.0).contains(&self.backbone_weak_prob) || !(self.backbone_weak_gain >= 0.0) {
            return bad("backbone weakness settings are invalid".into());
        }
        if !(0.0..=1.0).contains(&h.blind_prob) || !(h.noise_std >= 0.0) {
            return bad("head noise settings are invalid".into());
        }
        if self.splits.total() == 0 {
            return bad("corpus must contain at least one video".into());
        }
        Ok(())
    }

    pub fn video_ids(&self) -> Vec<String> {
        (0..self.splits.total()).map(|i| format!("vid{i:03}")).collect()
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform_usize(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

fn uniform_f64(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Region block lengths in transit order, each at least `min_len`.
fn region_lengths(rng: &mut ChaCha8Rng, cfg: &SynthConfig, n_frames: usize) -> Vec<usize> {
    let r = cfg.region_weights.len();
    let min_len = cfg.min_region_frames.max(1);
    let shares: Vec<f64> = cfg
        .region_weights
        .iter()
        .map(|w| w * (1.0 + cfg.region_jitter * (2.0 * rng.random::<f64>() - 1.0)))
        .collect();
    let total: f64 = shares.iter().sum();
    let free = n_frames - min_len * r;
    let mut lengths: Vec<usize> = shares
        .iter()
        .map(|s| min_len + (s / total * free as f64).floor() as usize)
        .collect();
    let assigned: usize = lengths.iter().sum();
    // rounding remainder goes to the longest region
    let longest = (0..r).max_by_key(|&i| (lengths[i], std::cmp::Reverse(i))).unwrap_or(0);
    lengths[longest] += n_frames - assigned;
    lengths
}

/// Samples one video's ground truth.
pub fn generate_video_truth(cfg: &SynthConfig, space: &LabelSpace, index: usize) -> Result<GroundTruth> {
    let mut rng = rng_for(cfg.seed, 1 + 2 * index as u64);
    let n_frames = uniform_usize(&mut rng, cfg.frames);
    let mut labels = Array2::from_elem((n_frames, space.n_classes()), false);

    let lengths = region_lengths(&mut rng, cfg, n_frames);
    let mut boundaries = Vec::with_capacity(lengths.len());
    let mut start = 0;
    for (&region, &len) in space.region_order().iter().zip(&lengths) {
        for t in start..start + len {
            labels[[t, region]] = true;
        }
        start += len;
        boundaries.push(start);
    }
    boundaries.pop();

    for (&landmark, rule) in space.landmark_rules() {
        // the boundary between the two lowest-ranked valid regions
        let mut ranks: Vec<usize> = rule
            .valid_regions
            .iter()
            .filter_map(|&r| space.region_order().iter().position(|&x| x == r))
            .collect();
        ranks.sort_unstable();
        let Some(&first) = ranks.first() else { continue };
        let Some(&boundary) = boundaries.get(first) else { continue };
        let dur = uniform_usize(&mut rng, cfg.landmark_duration);
        let before = rng.random_range(1..dur.max(2)).min(dur);
        let s = boundary.saturating_sub(before);
        let e = (s + dur).min(n_frames);
        for t in s..e {
            labels[[t, landmark]] = true;
        }
    }

    let pathologies: Vec<usize> = space.ids_of_kind(ClassKind::Pathology).collect();
    for (&class, &rate) in pathologies.iter().zip(&cfg.pathology_rates) {
        if rate <= 0.0 {
            continue;
        }
        let lambda = rate * n_frames as f64 / 1000.0;
        let count = Poisson::new(lambda)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .sample(&mut rng) as usize;
        let mut placed: Vec<(usize, usize)> = Vec::with_capacity(count);
        for _ in 0..count {
            for _attempt in 0..50 {
                let dur = uniform_usize(&mut rng, cfg.pathology_duration).min(n_frames);
                let s = rng.random_range(0..=n_frames - dur);
                let e = s + dur;
                let clear = placed
                    .iter()
                    .all(|&(ps, pe)| e + cfg.pathology_gap <= ps || pe + cfg.pathology_gap <= s);
                if clear {
                    placed.push((s, e));
                    break;
                }
            }
        }
        for (s, e) in placed {
            for t in s..e {
                labels[[t, class]] = true;
            }
        }
    }

    GroundTruth::new(format!("vid{index:03}"), labels, space)
}

/// Per-(backbone, head) perturbation drawn once for the whole corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadDraw {
    pub backbone: u32,
    pub model: u32,
    pub bias: f64,
    pub scale: f64,
    /// Signal gain per class.
    pub gain: Vec<f64>,
}

pub fn draw_heads(cfg: &SynthConfig, n_classes: usize) -> Vec<HeadDraw> {
    let mut rng = rng_for(cfg.seed, 0);
    let n_backbones = cfg.backbones.len();
    let mut weak: Vec<Vec<bool>> = (0..n_backbones)
        .map(|_| (0..n_classes).map(|_| rng.random::<f64>() < cfg.backbone_weak_prob).collect())
        .collect();
    for class in 0..n_classes {
        if weak.iter().all(|w| w[class]) {
            weak[class % n_backbones][class] = false;
        }
    }
    let mut out = Vec::new();
    for backbone in 0..n_backbones {
        for model in 0..cfg.heads.count {
            let bias = uniform_f64(&mut rng, cfg.heads.bias_range);
            let scale = uniform_f64(&mut rng, cfg.heads.scale_range);
            let gain = (0..n_classes)
                .map(|class| {
                    let head = if rng.random::<f64>() < cfg.heads.blind_prob {
                        cfg.heads.blind_gain
                    } else {
                        1.0
                    };
                    let shared = if weak[backbone][class] { cfg.backbone_weak_gain } else { 1.0 };
                    // attenuations overlap rather than compound, so every head keeps some signal
                    head.min(shared)
                })
                .collect();
            out.push(HeadDraw {
                backbone: backbone as u32,
                model,
                bias,
                scale,
                gain,
            });
        }
    }
    out
}

/// Probabilities are stored with six decimals so files and in-memory
/// corpora agree exactly.
const PROB_SCALE: f64 = 1e6;

fn quantize(p: f64) -> f64 {
    ((p * PROB_SCALE).round() / PROB_SCALE).clamp(1.0 / PROB_SCALE, 1.0 - 1.0 / PROB_SCALE)
}

fn ar1(rng: &mut ChaCha8Rng, n: usize, std: f64, rho: f64, normal: &Normal<f64>) -> Vec<f64> {
    let innovation = std * (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut prev = 0.0;
    for t in 0..n {
        let e = normal.sample(rng);
        prev = if t == 0 { std * e } else { rho * prev + innovation * e };
        out.push(prev);
    }
    out
}

/// Head streams for one video, ordered by (backbone, model).
pub fn generate_video_predictions(
    cfg: &SynthConfig,
    space: &LabelSpace,
    gt: &GroundTruth,
    index: usize,
    heads: &[HeadDraw],
) -> Result<Vec<ProbStream>> {
    let mut rng = rng_for(cfg.seed, 2 + 2 * index as u64);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (n, c) = gt.labels().dim();
    let ideal = gt.labels().mapv(|y| if y { IDEAL_LOGIT } else { -IDEAL_LOGIT });

    let mut out = Vec::with_capacity(heads.len());
    for (b, noise) in cfg.backbones.iter().enumerate() {
        let mut shared = Array2::zeros((n, c));
        for class in 0..c {
            let std = noise.std.get(space.kind(class));
            if std > 0.0 {
                let series = ar1(&mut rng, n, std, noise.rho, &normal);
                for (t, v) in series.into_iter().enumerate() {
                    shared[[t, class]] = v;
                }
            }
        }
        for head in heads.iter().filter(|h| h.backbone as usize == b) {
            let mut probs = Array2::zeros((n, c));
            for t in 0..n {
                for class in 0..c {
                    let own = if cfg.heads.noise_std > 0.0 {
                        cfg.heads.noise_std * normal.sample(&mut rng)
                    } else {
                        0.0
                    };
                    let z = head.scale * (head.gain[class] * ideal[[t, class]] + shared[[t, class]] + own) + head.bias;
                    probs[[t, class]] = quantize(logistic(z));
                }
            }
            out.push(ProbStream::new(
                gt.video_id(),
                Source::Head {
                    backbone: head.backbone,
                    model: head.model,
                },
                probs,
            )?);
        }
    }
    Ok(out)
}

/// Noisy linear features of the frame labels, for head training.
pub fn generate_video_features(cfg: &SynthConfig, gt: &GroundTruth, index: usize) -> Array2<f64> {
    let c = gt.labels().ncols();
    let d = cfg.feature_dim;
    let mut mix_rng = rng_for(cfg.seed, FEATURE_STREAM_BASE - 1);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mixing = Array2::from_shape_simple_fn((c, d), || normal.sample(&mut mix_rng));
    let signs = gt.labels().mapv(|y| if y { 1.0 } else { -1.0 });
    let mut features = signs.dot(&mixing);
    let mut rng = rng_for(cfg.seed, FEATURE_STREAM_BASE + index as u64);
    features.mapv_inplace(|v| v + cfg.feature_noise * normal.sample(&mut rng));
    features
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One split of a generated corpus.
#[derive(Debug, Clone, Default)]
pub struct SplitData {
    pub gts: BTreeMap<String, GroundTruth>,
    /// Head streams, ordered by video then source.
    pub streams: Vec<ProbStream>,
    pub features: Option<Array2<f64>>,
}

impl SplitData {
    pub fn gt_events(&self) -> Vec<EventRecord> {
        let mut ev: Vec<EventRecord> = self.gts.values().flat_map(GroundTruth::events).collect();
        sort_events(&mut ev);
        ev
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub space: LabelSpace,
    pub splits: BTreeMap<Split, SplitData>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &SplitData {
        &self.splits[&split]
    }

    pub fn split_manifest(&self) -> BTreeMap<&'static str, Vec<String>> {
        self.splits
            .iter()
            .map(|(s, d)| (s.name(), d.gts.keys().cloned().collect()))
            .collect()
    }
}

/// Generates the whole corpus. Videos are produced in parallel from
/// independent streams, so the result does not depend on thread count.
pub fn generate_corpus(cfg: &SynthConfig, space: &LabelSpace) -> Result<Corpus> {
    cfg.validate(space)?;
    let heads = draw_heads(cfg, space.n_classes());
    type Video = (GroundTruth, Vec<ProbStream>, Option<Array2<f64>>);
    let videos: Vec<Video> = (0..cfg.splits.total())
        .into_par_iter()
        .map(|i| {
            let gt = generate_video_truth(cfg, space, i)?;
            let streams = generate_video_predictions(cfg, space, &gt, i, &heads)?;
            let features = (cfg.feature_dim > 0).then(|| generate_video_features(cfg, &gt, i));
            Ok((gt, streams, features))
        })
        .collect::<Result<_>>()?;

    let mut splits: BTreeMap<Split, SplitData> = Split::ALL.iter().map(|&s| (s, SplitData::default())).collect();
    for (i, (gt, streams, features)) in videos.into_iter().enumerate() {
        let split = if i < cfg.splits.train {
            Split::Train
        } else if i < cfg.splits.train + cfg.splits.val {
            Split::Val
        } else {
            Split::Test
        };
        let data = splits.get_mut(&split).expect("all splits present");
        data.gts.insert(gt.video_id().to_string(), gt);
        data.streams.extend(streams);
        if let Some(f) = features {
            data.features = Some(match data.features.take() {
                None => f,
                Some(prev) => ndarray::concatenate(ndarray::Axis(0), &[prev.view(), f.view()])
                    .map_err(|e| Error::Shape(e.to_string()))?,
            });
        }
    }
    Ok(Corpus {
        space: space.clone(),
        splits,
    })
}

/// Writes `taxonomy.toml`, `split.json` and, per split, `streams_*.jsonl`,
/// `gt_*.jsonl`, `gt_events_*.csv` and optionally `features_*.evfm`.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let tax = dir.join("taxonomy.toml");
    save_taxonomy(&corpus.space, &tax)?;
    written.push(tax);
    for (split, data) in &corpus.splits {
        let name = split.name();
        let streams = dir.join(format!("streams_{name}.jsonl"));
        write_streams(&streams, &data.streams)?;
        let gt = dir.join(format!("gt_{name}.jsonl"));
        write_ground_truth(&gt, data.gts.values())?;
        let events = dir.join(format!("gt_events_{name}.csv"));
        write_events(&events, &data.gt_events())?;
        written.extend([streams, gt, events]);
        if let Some(f) = &data.features {
            let path = dir.join(format!("features_{name}.evfm"));
            crate::dhe::write_features(&path, f)?;
            written.push(path);
        }
    }
    let manifest = dir.join("split.json");
    let text = serde_json::to_string_pretty(&corpus.split_manifest())?;
    std::fs::write(&manifest, text + "\n").map_err(|e| Error::io(&manifest, e))?;
    written.push(manifest);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            splits: SplitSizes { train: 1, val: 1, test: 1 },
            frames: (400, 500),
            feature_dim: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn regions_tile_video_in_order() {
        let space = LabelSpace::default_capsule();
        let cfg = small();
        for i in 0..20 {
            let gt = generate_video_truth(&cfg, &space, i).unwrap();
            let mut last = 0;
            let mut seen = vec![false; space.n_regions()];
            for t in 0..gt.n_frames() {
                let active: Vec<usize> = (0..space.n_regions())
                    .filter(|&r| gt.labels()[[t, space.region_order()[r]]])
                    .collect();
                assert_eq!(active.len(), 1);
                assert!(active[0] >= last);
                last = active[0];
                seen[last] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn zero_rate_class_has_no_events() {
        let space = LabelSpace::default_capsule();
        let mut cfg = small();
        cfg.pathology_rates[2] = 0.0;
        let class = space.ids_of_kind(ClassKind::Pathology).nth(2).unwrap();
        for i in 0..10 {
            let gt = generate_video_truth(&cfg, &space, i).unwrap();
            assert!(gt.labels().column(class).iter().all(|&y| !y));
        }
    }

    #[test]
    fn deterministic() {
        let space = LabelSpace::default_capsule();
        let a = generate_corpus(&small(), &space).unwrap();
        let b = generate_corpus(&small(), &space).unwrap();
        for s in Split::ALL {
            assert_eq!(a.split(s).streams, b.split(s).streams);
            assert_eq!(a.split(s).gts, b.split(s).gts);
            assert_eq!(a.split(s).features, b.split(s).features);
        }
    }

    #[test]
    fn rejects_short_videos() {
        let space = LabelSpace::default_capsule();
        let cfg = SynthConfig {
            frames: (10, 20),
            ..small()
        };
        assert!(generate_corpus(&cfg, &space).is_err());
    }
}
