//! Validation-set selection of temperature, class thresholds and decoding
//! parameters.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{self, DecodeConfig, DecodeStages, PerKind, PreparedVideo};
use crate::error::{Error, Result};
use crate::fusion::calibrate;
use crate::metrics::{frame_map, temporal_map};
use crate::streams::{EventRecord, GroundTruth, ProbStream};
use crate::taxonomy::LabelSpace;

const NLL_EPS: f64 = 1e-12;

/// Criterion for the temperature grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TemperatureObjective {
    /// Mean binary cross-entropy of the calibrated probabilities (minimized).
    Nll,
    /// Mean per-class F1 of `p >= threshold` (maximized).
    MeanF1 { thresholds: Vec<f64> },
    /// Frame-level mAP (maximized). Invariant to temperature.
    FrameMap,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty temperature grid".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::InvalidArgument(format!("temperature {t} must be positive")));
    }
    Ok(())
}

fn ground_truth_for<'a>(
    gts: &'a BTreeMap<String, GroundTruth>,
    stream: &ProbStream,
) -> Result<&'a GroundTruth> {
    let gt = gts
        .get(stream.video_id())
        .ok_or_else(|| Error::InvalidArgument(format!("no ground truth for video {}", stream.video_id())))?;
    if gt.labels().dim() != stream.probs().dim() {
        return Err(Error::Shape(format!(
            "video {}: stream {:?} vs ground truth {:?}",
            stream.video_id(),
            stream.probs().dim(),
            gt.labels().dim()
        )));
    }
    Ok(gt)
}

fn mean_nll(streams: &[ProbStream], gts: &BTreeMap<String, GroundTruth>) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in streams {
        let gt = ground_truth_for(gts, s)?;
        for (&p, &y) in s.probs().iter().zip(gt.labels().iter()) {
            let p = p.clamp(NLL_EPS, 1.0 - NLL_EPS);
            total -= if y { p.ln() } else { (1.0 - p).ln() };
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

fn f1(tp: usize, predicted: usize, positives: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (predicted + positives) as f64
    }
}

fn mean_f1(streams: &[ProbStream], gts: &BTreeMap<String, GroundTruth>, thresholds: &[f64]) -> Result<f64> {
    let n_classes = thresholds.len();
    let mut tp = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    let mut positives = vec![0usize; n_classes];
    for s in streams {
        let gt = ground_truth_for(gts, s)?;
        if s.n_classes() != n_classes {
            return Err(Error::Shape(format!("{n_classes} thresholds for {} classes", s.n_classes())));
        }
        for ((t, c), &p) in s.probs().indexed_iter() {
            let y = gt.labels()[[t, c]];
            let hit = p >= thresholds[c];
            tp[c] += usize::from(hit && y);
            predicted[c] += usize::from(hit);
            positives[c] += usize::from(y);
        }
    }
    let scored: Vec<f64> = (0..n_classes)
        .filter(|&c| positives[c] > 0)
        .map(|c| f1(tp[c], predicted[c], positives[c]))
        .collect();
    Ok(if scored.is_empty() { 0.0 } else { scored.iter().sum::<f64>() / scored.len() as f64 })
}

/// Evaluates every temperature on the calibrated validation streams and
/// returns the best one with the per-candidate scores (higher is better;
/// NLL is negated). Ties go to the smallest temperature.
pub fn grid_search_temperature(
    streams: &[ProbStream],
    gts: &BTreeMap<String, GroundTruth>,
    grid: &[f64],
    objective: &TemperatureObjective,
) -> Result<(f64, Vec<(f64, f64)>)> {
    check_grid(grid)?;
    let mut candidates = grid.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let scores: Vec<(f64, f64)> = candidates
        .par_iter()
        .map(|&t| {
            let calibrated: Vec<ProbStream> = streams.iter().map(|s| calibrate(s, t)).collect::<Result<_>>()?;
            let score = match objective {
                TemperatureObjective::Nll => -mean_nll(&calibrated, gts)?,
                TemperatureObjective::MeanF1 { thresholds } => mean_f1(&calibrated, gts, thresholds)?,
                TemperatureObjective::FrameMap => frame_map(&calibrated, gts)?.map.unwrap_or(0.0),
            };
            Ok((t, score))
        })
        .collect::<Result<_>>()?;
    let mut best = scores[0];
    for &(t, s) in &scores[1..] {
        if s > best.1 {
            best = (t, s);
        }
    }
    Ok((best.0, scores))
}

/// F1-optimal threshold over the distinct observed scores; ties go to the
/// larger threshold. `None` when there are no positives.
pub fn f1_threshold(scores: &[f64], labels: &[bool]) -> Option<(f64, f64)> {
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut best: Option<(f64, f64)> = None;
    let mut tp = 0;
    let mut i = 0;
    while i < order.len() {
        let theta = scores[order[i]];
        while i < order.len() && scores[order[i]] == theta {
            tp += usize::from(labels[order[i]]);
            i += 1;
        }
        let score = f1(tp, i, positives);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((theta, score));
        }
    }
    best
}

/// Smallest and largest thresholds the decoder accepts.
pub const THRESHOLD_MIN: f64 = 1e-6;
pub const THRESHOLD_MAX: f64 = 1.0 - 1e-6;

/// Per-class F1 initialization over (scores, labels) matrix pairs. Classes
/// without positive frames get 0.5.
pub fn init_thresholds_f1<'a>(
    pairs: impl IntoIterator<Item = (&'a Array2<f64>, &'a Array2<bool>)>,
    space: &LabelSpace,
) -> Result<Vec<f64>> {
    let n = space.n_classes();
    let mut scores: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut labels: Vec<Vec<bool>> = vec![Vec::new(); n];
    for (s, y) in pairs {
        if s.dim() != y.dim() || s.ncols() != n {
            return Err(Error::Shape(format!("scores {:?} vs labels {:?}", s.dim(), y.dim())));
        }
        for c in 0..n {
            scores[c].extend(s.column(c).iter());
            labels[c].extend(y.column(c).iter());
        }
    }
    Ok((0..n)
        .map(|c| match f1_threshold(&scores[c], &labels[c]) {
            Some((theta, _)) => theta.clamp(THRESHOLD_MIN, THRESHOLD_MAX),
            None => {
                log::warn!("class {c} has no positive validation frames; threshold 0.5");
                0.5
            }
        })
        .collect())
}

/// Target of threshold and decode-parameter search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalObjective {
    #[serde(rename = "map50")]
    Map50,
    #[serde(rename = "map95")]
    Map95,
    #[default]
    Mean,
}

impl TemporalObjective {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "map50" => Ok(Self::Map50),
            "map95" => Ok(Self::Map95),
            "mean" => Ok(Self::Mean),
            other => Err(Error::InvalidArgument(format!(
                "unknown objective {other:?} (expected map50, map95 or mean)"
            ))),
        }
    }

    pub fn evaluate(self, preds: &[EventRecord], gts: &[EventRecord], space: &LabelSpace) -> Result<f64> {
        let at = |thr: f64| -> Result<f64> { Ok(temporal_map(preds, gts, space, thr)?.overall.unwrap_or(0.0)) };
        Ok(match self {
            Self::Map50 => at(0.5)?,
            Self::Map95 => at(0.95)?,
            Self::Mean => 0.5 * (at(0.5)? + at(0.95)?),
        })
    }
}

/// Validation data for decode-level tuning: prepared videos plus their
/// ground-truth events.
pub struct TuningData<'a> {
    pub prepared: &'a [PreparedVideo],
    pub gt_events: &'a [EventRecord],
    pub space: &'a LabelSpace,
    pub stages: DecodeStages,
}

impl TuningData<'_> {
    /// Decodes every prepared video with `cfg` and scores the result.
    pub fn objective(&self, cfg: &DecodeConfig, objective: TemporalObjective) -> Result<f64> {
        let mut preds: Vec<EventRecord> = self
            .prepared
            .par_iter()
            .map(|p| decode::decode_prepared(p, self.space, cfg, self.stages))
            .flatten()
            .collect();
        crate::streams::sort_events(&mut preds);
        objective.evaluate(&preds, self.gt_events, self.space)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalSearchOptions {
    pub objective: TemporalObjective,
    pub delta0: f64,
    pub min_delta: f64,
    pub max_iters: usize,
}

impl Default for LocalSearchOptions {
    fn default() -> Self {
        Self {
            objective: TemporalObjective::Mean,
            delta0: 0.05,
            min_delta: 0.005,
            max_iters: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSearchResult {
    pub thresholds: Vec<f64>,
    pub objective: f64,
    /// Initial objective followed by every accepted improvement.
    pub trace: Vec<TracePoint>,
    pub cycles: usize,
}

/// Coordinate-wise hill climbing on the class thresholds. Each cycle visits
/// classes in id order and probes `theta + delta` and `theta - delta`; a probe
/// is kept only on strict improvement. The step halves after a cycle without
/// improvement.
pub fn local_search_thresholds(
    theta0: &[f64],
    base: &DecodeConfig,
    data: &TuningData<'_>,
    opts: &LocalSearchOptions,
) -> Result<LocalSearchResult> {
    if !(opts.delta0 > 0.0 && opts.min_delta > 0.0) {
        return Err(Error::InvalidArgument("search steps must be positive".into()));
    }
    let mut cfg = base.clone();
    cfg.thresholds = theta0.to_vec();
    cfg.validate(data.space)?;
    let mut best = data.objective(&cfg, opts.objective)?;
    let mut trace = vec![TracePoint { iteration: 0, objective: best }];
    let mut delta = opts.delta0;
    let mut cycles = 0;
    while delta >= opts.min_delta && cycles < opts.max_iters {
        cycles += 1;
        let mut improved = false;
        for c in 0..cfg.thresholds.len() {
            let current = cfg.thresholds[c];
            let probes: Vec<f64> = [current + delta, current - delta]
                .into_iter()
                .filter(|t| *t >= THRESHOLD_MIN && *t <= THRESHOLD_MAX)
                .collect();
            let results: Vec<f64> = probes
                .par_iter()
                .map(|&t| {
                    let mut probe = cfg.clone();
                    probe.thresholds[c] = t;
                    data.objective(&probe, opts.objective)
                })
                .collect::<Result<_>>()?;
            let mut accepted = None;
            for (&t, &score) in probes.iter().zip(&results) {
                if score > accepted.map_or(best, |(_, s)| s) {
                    accepted = Some((t, score));
                }
            }
            if let Some((t, score)) = accepted {
                cfg.thresholds[c] = t;
                best = score;
                improved = true;
                trace.push(TracePoint { iteration: cycles, objective: best });
            }
        }
        if !improved {
            delta *= 0.5;
        }
    }
    Ok(LocalSearchResult {
        thresholds: cfg.thresholds,
        objective: best,
        trace,
        cycles,
    })
}

/// Candidate smoothing and morphology settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeGrid {
    pub smoothing_window: Vec<PerKind<usize>>,
    pub open_len: Vec<PerKind<usize>>,
    pub close_len: Vec<PerKind<usize>>,
}

impl DecodeGrid {
    pub fn singleton(cfg: &DecodeConfig) -> Self {
        Self {
            smoothing_window: vec![cfg.smoothing_window],
            open_len: vec![cfg.open_len],
            close_len: vec![cfg.close_len],
        }
    }

    /// A small default grid around the decoder defaults.
    pub fn default_grid() -> Self {
        let w = |region, landmark, pathology| PerKind { region, landmark, pathology };
        Self {
            smoothing_window: vec![w(15, 5, 1), w(31, 9, 5), w(61, 15, 9)],
            open_len: vec![w(1, 1, 1), w(1, 3, 3), w(1, 5, 5)],
            close_len: vec![w(1, 5, 5), w(1, 9, 9)],
        }
    }

    pub fn len(&self) -> usize {
        self.smoothing_window.len() * self.open_len.len() * self.close_len.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Candidates in preference order: smaller windows first, then smaller
    /// morphology lengths.
    fn candidates(&self) -> Vec<(PerKind<usize>, PerKind<usize>, PerKind<usize>)> {
        let key = |p: &PerKind<usize>| (p.region + p.landmark + p.pathology, *p);
        let mut out = Vec::with_capacity(self.len());
        for w in &self.smoothing_window {
            for o in &self.open_len {
                for c in &self.close_len {
                    out.push((*w, *o, *c));
                }
            }
        }
        out.sort_by_key(|(w, o, c)| (key(w), key(o), key(c)));
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeSearchResult {
    pub config: DecodeConfig,
    pub objective: f64,
    pub evaluated: usize,
}

/// Exhaustive search over the decode grid. Each candidate re-runs the
/// threshold-independent stages, so `prepare` is called per smoothing
/// setting on the raw streams.
pub fn tune_decode_params(
    grid: &DecodeGrid,
    base: &DecodeConfig,
    streams: &[ProbStream],
    gt_events: &[EventRecord],
    space: &LabelSpace,
    stages: DecodeStages,
    objective: TemporalObjective,
) -> Result<DecodeSearchResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty decode parameter grid".into()));
    }
    let candidates = grid.candidates();
    let mut prepared_by_window: BTreeMap<PerKind<usize>, Vec<PreparedVideo>> = BTreeMap::new();
    for (w, _, _) in &candidates {
        if !prepared_by_window.contains_key(w) {
            let mut cfg = base.clone();
            cfg.smoothing_window = *w;
            let prepared = streams
                .par_iter()
                .map(|s| decode::prepare(s, space, &cfg, stages))
                .collect::<Result<Vec<_>>>()?;
            prepared_by_window.insert(*w, prepared);
        }
    }
    let scored: Vec<(DecodeConfig, f64)> = candidates
        .par_iter()
        .map(|(w, o, c)| {
            let mut cfg = base.clone();
            cfg.smoothing_window = *w;
            cfg.open_len = *o;
            cfg.close_len = *c;
            let data = TuningData {
                prepared: &prepared_by_window[w],
                gt_events,
                space,
                stages,
            };
            let score = data.objective(&cfg, objective)?;
            Ok((cfg, score))
        })
        .collect::<Result<_>>()?;
    let evaluated = scored.len();
    let mut best: Option<(DecodeConfig, f64)> = None;
    for (cfg, score) in scored {
        if best.as_ref().is_none_or(|(_, b)| score > *b) {
            best = Some((cfg, score));
        }
    }
    let (config, objective) = best.expect("grid is non-empty");
    Ok(DecodeSearchResult {
        config,
        objective,
        evaluated,
    })
}

/// Everything the tuning stage selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub temperature: f64,
    pub temperature_scores: Vec<(f64, f64)>,
    pub decode: DecodeConfig,
    pub stages: DecodeStages,
    pub objective: TemporalObjective,
    pub initial_thresholds: Vec<f64>,
    pub trace: Vec<TracePoint>,
    pub final_objective: f64,
}

impl TuneReport {
    pub fn validate(&self, space: &LabelSpace) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Range(format!("temperature {}", self.temperature)));
        }
        if self.trace.windows(2).any(|w| w[1].objective < w[0].objective) {
            return Err(Error::InvalidArgument("objective trace decreases".into()));
        }
        self.decode.validate(space)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Which temperature criterion the full tuning routine uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TemperatureCriterion {
    #[default]
    Nll,
    MeanF1,
    FrameMap,
}

impl TemperatureCriterion {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nll" => Ok(Self::Nll),
            "mean-f1" => Ok(Self::MeanF1),
            "frame-map" => Ok(Self::FrameMap),
            other => Err(Error::InvalidArgument(format!(
                "unknown temperature objective {other:?} (expected nll, mean-f1 or frame-map)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneOptions {
    pub temperature_grid: Vec<f64>,
    pub temperature_criterion: TemperatureCriterion,
    pub decode_grid: DecodeGrid,
    pub search: LocalSearchOptions,
    pub stages: DecodeStages,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            temperature_grid: vec![0.5, 0.75, 1.0, 1.5, 2.0, 3.0],
            temperature_criterion: TemperatureCriterion::Nll,
            decode_grid: DecodeGrid::default_grid(),
            search: LocalSearchOptions::default(),
            stages: DecodeStages::FULL,
        }
    }
}

fn labels_for<'a>(
    prepared: &'a [PreparedVideo],
    gts: &'a BTreeMap<String, GroundTruth>,
) -> Result<Vec<(&'a Array2<f64>, &'a Array2<bool>)>> {
    prepared
        .iter()
        .map(|p| {
            let gt = gts
                .get(&p.video_id)
                .ok_or_else(|| Error::InvalidArgument(format!("no ground truth for video {}", p.video_id)))?;
            Ok((&p.constrained, gt.labels()))
        })
        .collect()
}

/// Temperature, then decode parameters with F1-initialized thresholds, then
/// threshold local search. `fused` are uncalibrated fused validation streams.
pub fn tune_all(
    fused: &[ProbStream],
    gts: &BTreeMap<String, GroundTruth>,
    space: &LabelSpace,
    base: &DecodeConfig,
    opts: &TuneOptions,
) -> Result<TuneReport> {
    let stages = opts.stages;
    let gt_events: Vec<EventRecord> = {
        let mut ev: Vec<EventRecord> = gts.values().flat_map(GroundTruth::events).collect();
        crate::streams::sort_events(&mut ev);
        ev
    };

    let prepare_all = |streams: &[ProbStream], cfg: &DecodeConfig| -> Result<Vec<PreparedVideo>> {
        streams.par_iter().map(|s| decode::prepare(s, space, cfg, stages)).collect()
    };

    let criterion = match opts.temperature_criterion {
        TemperatureCriterion::Nll => TemperatureObjective::Nll,
        TemperatureCriterion::FrameMap => TemperatureObjective::FrameMap,
        TemperatureCriterion::MeanF1 => {
            let raw: Vec<(&Array2<f64>, &Array2<bool>)> = fused
                .iter()
                .map(|s| Ok((s.probs(), ground_truth_for(gts, s)?.labels())))
                .collect::<Result<_>>()?;
            TemperatureObjective::MeanF1 {
                thresholds: init_thresholds_f1(raw, space)?,
            }
        }
    };
    let (temperature, temperature_scores) = grid_search_temperature(fused, gts, &opts.temperature_grid, &criterion)?;
    let calibrated: Vec<ProbStream> = fused.iter().map(|s| calibrate(s, temperature)).collect::<Result<_>>()?;

    let mut cfg = base.clone();
    let prepared = prepare_all(&calibrated, &cfg)?;
    cfg.thresholds = init_thresholds_f1(labels_for(&prepared, gts)?, space)?;

    let searched = tune_decode_params(
        &opts.decode_grid,
        &cfg,
        &calibrated,
        &gt_events,
        space,
        stages,
        opts.search.objective,
    )?;
    cfg = searched.config;

    let prepared = prepare_all(&calibrated, &cfg)?;
    let initial_thresholds = init_thresholds_f1(labels_for(&prepared, gts)?, space)?;
    let data = TuningData {
        prepared: &prepared,
        gt_events: &gt_events,
        space,
        stages,
    };
    let result = local_search_thresholds(&initial_thresholds, &cfg, &data, &opts.search)?;
    cfg.thresholds = result.thresholds;

    Ok(TuneReport {
        temperature,
        temperature_scores,
        decode: cfg,
        stages,
        objective: opts.search.objective,
        initial_thresholds,
        trace: result.trace,
        final_objective: result.objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::Source;

    #[test]
    fn f1_threshold_examples() {
        let (t, f) = f1_threshold(&[0.9, 0.6, 0.4, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(t, 0.6);
        assert_eq!(f, 1.0);
        let (t, _) = f1_threshold(&[0.9, 0.3, 0.7], &[true, true, true]).unwrap();
        assert_eq!(t, 0.3);
        assert!(f1_threshold(&[0.1, 0.2], &[false, false]).is_none());
    }

    #[test]
    fn f1_threshold_matches_brute_force() {
        let scores = [0.8, 0.8, 0.5, 0.3, 0.3, 0.1, 0.9];
        let labels = [true, false, true, false, true, false, false];
        let p = labels.iter().filter(|&&y| y).count();
        let mut best = (f64::NEG_INFINITY, -1.0);
        for &theta in &scores {
            let tp = scores.iter().zip(&labels).filter(|(s, y)| **s >= theta && **y).count();
            let k = scores.iter().filter(|s| **s >= theta).count();
            let f = 2.0 * tp as f64 / (k + p) as f64;
            if f > best.1 || (f == best.1 && theta > best.0) {
                best = (theta, f);
            }
        }
        let (t, f) = f1_threshold(&scores, &labels).unwrap();
        assert_eq!((t, f), best);
    }

    #[test]
    fn no_positive_class_defaults() {
        let space = LabelSpace::default_capsule();
        let s = Array2::from_elem((4, space.n_classes()), 0.3);
        let y = Array2::from_elem((4, space.n_classes()), false);
        let th = init_thresholds_f1([(&s, &y)], &space).unwrap();
        assert!(th.iter().all(|&t| t == 0.5));
    }

    fn one_class_gt(labels: &[bool]) -> (LabelSpace, BTreeMap<String, GroundTruth>) {
        let space = LabelSpace::from_toml_str(
            "region_order = [0]\n[[classes]]\nid = 0\nname = \"r\"\nkind = \"region\"\n",
        )
        .unwrap();
        let arr = Array2::from_shape_vec((labels.len(), 1), labels.to_vec()).unwrap();
        let gt = GroundTruth::new("v", arr, &space).unwrap();
        (space, BTreeMap::from([("v".to_string(), gt)]))
    }

    #[test]
    fn temperature_grid_rejects_empty_and_singleton_is_chosen() {
        let (_, gts) = one_class_gt(&[true, false]);
        let s = ProbStream::from_rows("v", Source::Fused, &[vec![0.7], vec![0.2]]).unwrap();
        assert!(grid_search_temperature(&[s.clone()], &gts, &[], &TemperatureObjective::Nll).is_err());
        let (t, _) = grid_search_temperature(&[s], &gts, &[1.0], &TemperatureObjective::Nll).unwrap();
        assert_eq!(t, 1.0);
    }

    #[test]
    fn frame_map_ties_pick_smallest_temperature() {
        let (_, gts) = one_class_gt(&[true, false, true, false]);
        let s = ProbStream::from_rows("v", Source::Fused, &[vec![0.7], vec![0.4], vec![0.55], vec![0.6]]).unwrap();
        let (t, scores) =
            grid_search_temperature(&[s], &gts, &[2.0, 0.5, 1.0], &TemperatureObjective::FrameMap).unwrap();
        assert_eq!(t, 0.5);
        assert!(scores.windows(2).all(|w| w[0].1 == w[1].1));
    }

    #[test]
    fn f1_objective_prefers_sharpening_temperature() {
        // positives at 0.65 sit just under theta = 0.7; T = 0.5 pushes them over
        let labels = [true, true, false, false];
        let (_, gts) = one_class_gt(&labels);
        let s = ProbStream::from_rows("v", Source::Fused, &[vec![0.65], vec![0.65], vec![0.3], vec![0.3]]).unwrap();
        let obj = TemperatureObjective::MeanF1 { thresholds: vec![0.7] };
        let (t, scores) = grid_search_temperature(&[s.clone()], &gts, &[0.5, 1.0, 2.0], &obj).unwrap();
        // oracle: evaluate each candidate directly
        let direct: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&t| {
                let c = calibrate(&s, t).unwrap();
                let hits: Vec<bool> = c.probs().iter().map(|&p| p >= 0.7).collect();
                let tp = hits.iter().zip(&labels).filter(|(h, y)| **h && **y).count();
                let k = hits.iter().filter(|h| **h).count();
                if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (k + 2) as f64 }
            })
            .collect();
        assert_eq!(scores.iter().map(|s| s.1).collect::<Vec<_>>(), direct);
        assert_eq!(t, 0.5);
    }

    #[test]
    fn decode_grid_orders_small_first() {
        let w = |r, l, p| PerKind { region: r, landmark: l, pathology: p };
        let grid = DecodeGrid {
            smoothing_window: vec![w(9, 9, 9), w(1, 1, 1)],
            open_len: vec![w(3, 3, 3), w(1, 1, 1)],
            close_len: vec![w(1, 1, 1)],
        };
        let c = grid.candidates();
        assert_eq!(c[0].0, w(1, 1, 1));
        assert_eq!(c[0].1, w(1, 1, 1));
        assert_eq!(c.len(), 4);
    }

    #[test]
    fn objective_parse() {
        assert_eq!(TemporalObjective::parse("map95").unwrap(), TemporalObjective::Map95);
        assert!(TemporalObjective::parse("f1").is_err());
        assert_eq!(TemperatureCriterion::parse("frame-map").unwrap(), TemperatureCriterion::FrameMap);
    }
}
