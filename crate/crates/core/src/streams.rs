//! Probability streams, frame ground truth, and interval events, with their
//! on-disk formats (JSON Lines for frames, CSV for events).

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{ClassId, ClassKind, LabelSpace};

/// Where a probability stream came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    /// A single classification head `model` on top of `backbone`.
    Head { backbone: u32, model: u32 },
    /// Heads of one backbone fused together.
    Backbone(u32),
    /// Fully fused (and possibly calibrated) stream.
    Fused,
}

impl Source {
    fn from_ids(backbone: Option<u32>, model: Option<u32>) -> Option<Self> {
        match (backbone, model) {
            (Some(backbone), Some(model)) => Some(Source::Head { backbone, model }),
            (Some(b), None) => Some(Source::Backbone(b)),
            (None, None) => Some(Source::Fused),
            (None, Some(_)) => None,
        }
    }

    fn ids(self) -> (Option<u32>, Option<u32>) {
        match self {
            Source::Head { backbone, model } => (Some(backbone), Some(model)),
            Source::Backbone(b) => (Some(b), None),
            Source::Fused => (None, None),
        }
    }

    pub fn backbone(self) -> Option<u32> {
        self.ids().0
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Head { backbone, model } => write!(f, "b{backbone}/m{model}"),
            Source::Backbone(b) => write!(f, "b{b}"),
            Source::Fused => f.write_str("fused"),
        }
    }
}

/// Per-frame class probabilities for one video, stored frames x classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbStream {
    video_id: String,
    source: Source,
    tta: bool,
    probs: Array2<f64>,
}

fn check_probs(probs: &Array2<f64>) -> Result<()> {
    for ((t, c), &p) in probs.indexed_iter() {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::Range(format!(
                "probability {p} at frame {t}, class {c} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

impl ProbStream {
    pub fn new(video_id: impl Into<String>, source: Source, probs: Array2<f64>) -> Result<Self> {
        check_probs(&probs)?;
        Ok(Self {
            video_id: video_id.into(),
            source,
            tta: false,
            probs,
        })
    }

    /// Builds a stream from per-frame rows.
    pub fn from_rows(video_id: impl Into<String>, source: Source, rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("ragged probability rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let probs = Array2::from_shape_vec((rows.len(), c), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(video_id, source, probs)
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    /// True when produced by test-time-augmentation averaging.
    pub fn is_tta(&self) -> bool {
        self.tta
    }

    pub fn n_frames(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn get(&self, frame: usize, class: ClassId) -> f64 {
        self.probs[[frame, class]]
    }

    pub fn class_series(&self, class: ClassId) -> ArrayView1<'_, f64> {
        self.probs.column(class)
    }

    pub fn same_shape(&self, other: &ProbStream) -> bool {
        self.video_id == other.video_id && self.probs.dim() == other.probs.dim()
    }

    /// Applies `f` to every entry; the result must stay in [0, 1].
    pub fn map(&self, source: Source, f: impl Fn(f64) -> f64) -> Result<ProbStream> {
        ProbStream::new(self.video_id.clone(), source, self.probs.mapv(f))
    }
}

/// Elementwise mean of two aligned streams (test-time augmentation at the
/// probability level, e.g. original and flipped clips).
pub fn average_streams(a: &ProbStream, b: &ProbStream) -> Result<ProbStream> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "cannot average {} {:?} with {} {:?}",
            a.video_id,
            a.probs.dim(),
            b.video_id,
            b.probs.dim()
        )));
    }
    let source = if a.source == b.source { a.source } else { Source::Fused };
    let probs = ndarray::Zip::from(&a.probs)
        .and(&b.probs)
        .map_collect(|&x, &y| (x + y) * 0.5);
    let mut out = ProbStream::new(a.video_id.clone(), source, probs)?;
    out.tta = true;
    Ok(out)
}

/// All streams for one video; every source shares the frame count and C.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VideoStreams {
    n_frames: usize,
    n_classes: usize,
    sources: BTreeMap<Source, ProbStream>,
}

impl VideoStreams {
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, source: Source) -> Option<&ProbStream> {
        self.sources.get(&source)
    }

    pub fn sources(&self) -> impl Iterator<Item = (&Source, &ProbStream)> {
        self.sources.iter()
    }

    pub fn backbones(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self.sources.keys().filter_map(|s| s.backbone()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Head streams of `backbone`, ordered by model id.
    pub fn heads(&self, backbone: u32) -> Vec<(u32, &ProbStream)> {
        self.sources
            .iter()
            .filter_map(|(s, p)| match *s {
                Source::Head { backbone: b, model } if b == backbone => Some((model, p)),
                _ => None,
            })
            .collect()
    }
}

/// Streams for a collection of videos, keyed by video id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamSet {
    videos: BTreeMap<String, VideoStreams>,
}

impl StreamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, stream: ProbStream) -> Result<()> {
        let video = match self.videos.entry(stream.video_id.clone()) {
            Entry::Vacant(v) => v.insert(VideoStreams {
                n_frames: stream.n_frames(),
                n_classes: stream.n_classes(),
                sources: BTreeMap::new(),
            }),
            Entry::Occupied(o) => o.into_mut(),
        };
        if video.n_frames != stream.n_frames() || video.n_classes != stream.n_classes() {
            return Err(Error::Shape(format!(
                "video {}: source {} has {} frames x {} classes, expected {} x {}",
                stream.video_id,
                stream.source,
                stream.n_frames(),
                stream.n_classes(),
                video.n_frames,
                video.n_classes
            )));
        }
        if video.sources.contains_key(&stream.source) {
            return Err(Error::InvalidArgument(format!(
                "video {}: duplicate source {}",
                stream.video_id, stream.source
            )));
        }
        video.sources.insert(stream.source, stream);
        Ok(())
    }

    pub fn from_streams(streams: impl IntoIterator<Item = ProbStream>) -> Result<Self> {
        let mut set = Self::new();
        for s in streams {
            set.insert(s)?;
        }
        Ok(set)
    }

    pub fn video(&self, id: &str) -> Option<&VideoStreams> {
        self.videos.get(id)
    }

    pub fn videos(&self) -> impl Iterator<Item = (&String, &VideoStreams)> {
        self.videos.iter()
    }

    pub fn video_ids(&self) -> impl Iterator<Item = &String> {
        self.videos.keys()
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn streams(&self) -> impl Iterator<Item = &ProbStream> {
        self.videos.values().flat_map(|v| v.sources.values())
    }

    /// Restricts the set to the given videos (missing ids are ignored).
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a String>) -> StreamSet {
        let videos = ids
            .into_iter()
            .filter_map(|id| self.videos.get(id).map(|v| (id.clone(), v.clone())))
            .collect();
        StreamSet { videos }
    }

    /// Every source id present in at least one video.
    pub fn all_sources(&self) -> Vec<Source> {
        let mut out: Vec<Source> = self
            .videos
            .values()
            .flat_map(|v| v.sources.keys().copied())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Multi-hot frame labels for one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    video_id: String,
    labels: Array2<bool>,
}

impl GroundTruth {
    /// Builds ground truth, checking that no frame carries two regions.
    pub fn new(video_id: impl Into<String>, labels: Array2<bool>, space: &LabelSpace) -> Result<Self> {
        let video_id = video_id.into();
        if labels.ncols() != space.n_classes() {
            return Err(Error::Shape(format!(
                "ground truth for {video_id} has {} classes, taxonomy has {}",
                labels.ncols(),
                space.n_classes()
            )));
        }
        for (t, row) in labels.rows().into_iter().enumerate() {
            let regions = space.region_order().iter().filter(|&&r| row[r]).count();
            if regions > 1 {
                return Err(Error::InvalidArgument(format!(
                    "ground truth {video_id} frame {t}: {regions} regions positive"
                )));
            }
        }
        Ok(Self { video_id, labels })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn n_frames(&self) -> usize {
        self.labels.nrows()
    }

    pub fn labels(&self) -> &Array2<bool> {
        &self.labels
    }

    pub fn is_positive(&self, frame: usize, class: ClassId) -> bool {
        self.labels[[frame, class]]
    }

    /// Maximal runs of positive frames per class, as events with score 1.
    pub fn events(&self) -> Vec<EventRecord> {
        let mut out = Vec::new();
        for c in 0..self.labels.ncols() {
            for (start, end) in runs(self.labels.column(c).iter().copied()) {
                out.push(EventRecord {
                    video_id: self.video_id.clone(),
                    class_id: c,
                    start_frame: start,
                    end_frame: end,
                    score: 1.0,
                });
            }
        }
        out
    }
}

/// Maximal runs of `true` as half-open `(start, end)` pairs.
pub fn runs(values: impl IntoIterator<Item = bool>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut open = None;
    let mut len = 0;
    for (t, v) in values.into_iter().enumerate() {
        match (v, open) {
            (true, None) => open = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                open = None;
            }
            _ => {}
        }
        len = t + 1;
    }
    if let Some(s) = open {
        out.push((s, len));
    }
    out
}

/// A half-open frame interval `[start_frame, end_frame)` for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub video_id: String,
    pub class_id: ClassId,
    pub start_frame: usize,
    pub end_frame: usize,
    pub score: f64,
}

impl EventRecord {
    pub fn len(&self) -> usize {
        self.end_frame.saturating_sub(self.start_frame)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Canonical ordering: video, class, start.
pub fn sort_events(events: &mut [EventRecord]) {
    events.sort_by(|a, b| {
        (&a.video_id, a.class_id, a.start_frame, a.end_frame)
            .cmp(&(&b.video_id, b.class_id, b.start_frame, b.end_frame))
    });
}

/// Checks interval validity, score range and per-(video, class) disjointness.
pub fn validate_events(events: &[EventRecord], n_classes: usize) -> Result<()> {
    let mut last: BTreeMap<(&str, ClassId), usize> = BTreeMap::new();
    let mut sorted: Vec<&EventRecord> = events.iter().collect();
    sorted.sort_by_key(|e| (e.video_id.as_str(), e.class_id, e.start_frame));
    for e in sorted {
        if e.start_frame >= e.end_frame {
            return Err(Error::Interval {
                start: e.start_frame,
                end: e.end_frame,
            });
        }
        if e.class_id >= n_classes {
            return Err(Error::Range(format!("class id {} >= {n_classes}", e.class_id)));
        }
        if !(0.0..=1.0).contains(&e.score) {
            return Err(Error::Range(format!("event score {}", e.score)));
        }
        let key = (e.video_id.as_str(), e.class_id);
        if let Some(&end) = last.get(&key) {
            if e.start_frame < end {
                return Err(Error::InvalidArgument(format!(
                    "overlapping events for video {} class {} at frame {}",
                    e.video_id, e.class_id, e.start_frame
                )));
            }
        }
        last.insert(key, e.end_frame);
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct StreamRecord {
    video_id: String,
    backbone_id: Option<u32>,
    model_id: Option<u32>,
    frame_index: usize,
    probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    tta: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct GtRecord {
    video_id: String,
    frame_index: usize,
    labels: Vec<ClassId>,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

fn assemble_frames<T>(
    path: &Path,
    what: &str,
    frames: BTreeMap<usize, (usize, T)>,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(frames.len());
    for (expected, (index, (line, value))) in frames.into_iter().enumerate() {
        if index != expected {
            return Err(parse_err(
                path,
                line,
                format!("{what}: frame {expected} missing (next present is {index})"),
            ));
        }
        out.push(value);
    }
    Ok(out)
}

/// Reads probability streams from JSON Lines, one record per frame.
pub fn load_streams(path: impl AsRef<Path>) -> Result<StreamSet> {
    let path = path.as_ref();
    type Key = (String, Source);
    let mut grouped: BTreeMap<Key, (bool, BTreeMap<usize, (usize, Vec<f64>)>)> = BTreeMap::new();
    let mut widths: BTreeMap<String, (usize, usize)> = BTreeMap::new();

    for (line_no, line) in read_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StreamRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, line_no, e.to_string()))?;
        let source = Source::from_ids(rec.backbone_id, rec.model_id)
            .ok_or_else(|| parse_err(path, line_no, "model_id given without backbone_id"))?;
        for (c, &p) in rec.probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("probability {p} for class {c} outside [0, 1]"),
                ));
            }
        }
        match widths.entry(rec.video_id.clone()) {
            Entry::Vacant(v) => {
                v.insert((rec.probs.len(), line_no));
            }
            Entry::Occupied(o) => {
                let (c, first) = *o.get();
                if c != rec.probs.len() {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!(
                            "video {}: {} classes, but line {first} has {c}",
                            rec.video_id,
                            rec.probs.len()
                        ),
                    ));
                }
            }
        }
        let slot = grouped
            .entry((rec.video_id, source))
            .or_insert_with(|| (false, BTreeMap::new()));
        slot.0 |= rec.tta;
        if slot.1.insert(rec.frame_index, (line_no, rec.probs)).is_some() {
            return Err(parse_err(
                path,
                line_no,
                format!("duplicate frame_index {}", rec.frame_index),
            ));
        }
    }

    let mut set = StreamSet::new();
    for ((video, source), (tta, frames)) in grouped {
        let what = format!("video {video} source {source}");
        let rows = assemble_frames(path, &what, frames)?;
        let mut stream = ProbStream::from_rows(video, source, &rows)?;
        stream.tta = tta;
        set.insert(stream).map_err(|e| parse_err(path, 0, e.to_string()))?;
    }
    Ok(set)
}

pub fn write_streams<'a>(
    path: impl AsRef<Path>,
    streams: impl IntoIterator<Item = &'a ProbStream>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in streams {
        let (backbone_id, model_id) = s.source.ids();
        for (t, row) in s.probs.rows().into_iter().enumerate() {
            let rec = StreamRecord {
                video_id: s.video_id.clone(),
                backbone_id,
                model_id,
                frame_index: t,
                probs: row.to_vec(),
                tta: s.tta,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads frame ground truth, keyed by video id.
pub fn load_ground_truth(
    path: impl AsRef<Path>,
    space: &LabelSpace,
) -> Result<BTreeMap<String, GroundTruth>> {
    let path = path.as_ref();
    let n = space.n_classes();
    let mut grouped: BTreeMap<String, BTreeMap<usize, (usize, Vec<ClassId>)>> = BTreeMap::new();
    for (line_no, line) in read_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GtRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, line_no, e.to_string()))?;
        if let Some(&bad) = rec.labels.iter().find(|&&c| c >= n) {
            return Err(parse_err(path, line_no, format!("class id {bad} >= {n}")));
        }
        let regions = rec
            .labels
            .iter()
            .filter(|&&c| space.kind(c) == ClassKind::Region)
            .count();
        if regions > 1 {
            return Err(parse_err(path, line_no, format!("{regions} regions on one frame")));
        }
        let frames = grouped.entry(rec.video_id).or_default();
        if frames.insert(rec.frame_index, (line_no, rec.labels)).is_some() {
            return Err(parse_err(
                path,
                line_no,
                format!("duplicate frame_index {}", rec.frame_index),
            ));
        }
    }
    let mut out = BTreeMap::new();
    for (video, frames) in grouped {
        let rows = assemble_frames(path, &format!("video {video}"), frames)?;
        let mut labels = Array2::from_elem((rows.len(), n), false);
        for (t, row) in rows.iter().enumerate() {
            for &c in row {
                labels[[t, c]] = true;
            }
        }
        out.insert(video.clone(), GroundTruth::new(video, labels, space)?);
    }
    Ok(out)
}

pub fn write_ground_truth<'a>(
    path: impl AsRef<Path>,
    gts: impl IntoIterator<Item = &'a GroundTruth>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for gt in gts {
        for (t, row) in gt.labels.rows().into_iter().enumerate() {
            let rec = GtRecord {
                video_id: gt.video_id.clone(),
                frame_index: t,
                labels: row
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v)
                    .map(|(c, _)| c)
                    .collect(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_events(path: impl AsRef<Path>, events: &[EventRecord]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    // header is written by serialize only when there is at least one row
    if events.is_empty() {
        w.write_record(["video_id", "class_id", "start_frame", "end_frame", "score"])
            .map_err(csv_err)?;
    }
    for e in events {
        w.serialize(e).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<EventRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let e: EventRecord = rec.map_err(|e| parse_err(path, i + 2, e.to_string()))?;
        if e.start_frame >= e.end_frame {
            return Err(parse_err(
                path,
                i + 2,
                format!("empty interval [{}, {})", e.start_frame, e.end_frame),
            ));
        }
        out.push(e);
    }
    Ok(out)
}
