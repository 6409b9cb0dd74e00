//! Detection and annotation ingestion, per-frame label derivation,
//! annotation validation and dataset splitting.
//!
//! Two on-disk formats live here:
//!
//! * `detections.jsonl`: one JSON object per frame,
//!   `{"video_id":"v1","frame":0,"frame_w":640,"frame_h":480,"boxes":[...]}`
//!   where each box is `{"label":..,"id":..,"x":..,"y":..,"w":..,"h":..}` and
//!   `label` is one of `infant`, `left_hand`, `right_hand`, `object`
//!   (`id` only for objects).
//! * `annotations.csv`: header
//!   `video_id,reach_id,hand,object_id,onset_frame,offset_frame`, hand `L`/`R`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Largest RN/RF disagreement (in frames) tolerated between two annotators.
pub const ANNOTATOR_TOLERANCE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hand {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::Left, Hand::Right];

    pub fn tag(self) -> &'static str {
        match self {
            Hand::Left => "L",
            Hand::Right => "R",
        }
    }
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Hand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" => Ok(Hand::Left),
            "R" => Ok(Hand::Right),
            other => Err(Error::Annotation(format!("unknown hand tag `{other}`"))),
        }
    }
}

/// Per-frame ground truth and classifier target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum FrameLabel {
    NoR = 0,
    RN = 1,
    R = 2,
    RF = 3,
}

impl FrameLabel {
    pub const ALL: [FrameLabel; 4] = [FrameLabel::NoR, FrameLabel::RN, FrameLabel::R, FrameLabel::RF];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_reach(self) -> bool {
        self != FrameLabel::NoR
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_index: usize,
    pub infant: Option<BoundingBox>,
    pub left_hand: Option<BoundingBox>,
    pub right_hand: Option<BoundingBox>,
    pub objects: Vec<(String, BoundingBox)>,
    /// (width, height) in pixels.
    pub frame_size: (f64, f64),
}

impl FrameDetections {
    pub fn hand(&self, hand: Hand) -> Option<&BoundingBox> {
        match hand {
            Hand::Left => self.left_hand.as_ref(),
            Hand::Right => self.right_hand.as_ref(),
        }
    }

    pub fn object(&self, id: &str) -> Option<&BoundingBox> {
        self.objects.iter().find(|(oid, _)| oid == id).map(|(_, b)| b)
    }

    pub fn diagonal(&self) -> f64 {
        self.frame_size.0.hypot(self.frame_size.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSequence {
    pub video_id: String,
    pub frames: Vec<FrameDetections>,
}

impl VideoSequence {
    pub fn first_frame(&self) -> usize {
        self.frames.first().map_or(0, |f| f.frame_index)
    }

    pub fn last_frame(&self) -> usize {
        self.frames.last().map_or(0, |f| f.frame_index)
    }

    pub fn frame(&self, index: usize) -> Option<&FrameDetections> {
        self.frames
            .binary_search_by_key(&index, |f| f.frame_index)
            .ok()
            .map(|i| &self.frames[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReachEvent {
    pub hand: Hand,
    pub object_id: String,
    pub onset_frame: usize,
    pub offset_frame: usize,
}

impl ReachEvent {
    pub fn new(hand: Hand, object_id: impl Into<String>, onset_frame: usize, offset_frame: usize) -> Result<Self> {
        if onset_frame >= offset_frame {
            return Err(Error::Annotation(format!(
                "onset {onset_frame} is not before offset {offset_frame}"
            )));
        }
        Ok(ReachEvent {
            hand,
            object_id: object_id.into(),
            onset_frame,
            offset_frame,
        })
    }

    pub fn duration(&self) -> usize {
        self.offset_frame - self.onset_frame
    }
}

/// One row of `annotations.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub reach_id: u32,
    pub event: ReachEvent,
}

/// Annotations grouped by video id.
pub type AnnotationSet = BTreeMap<String, Vec<Annotation>>;

pub fn events_of(set: &AnnotationSet, video_id: &str) -> Vec<ReachEvent> {
    set.get(video_id)
        .map(|v| v.iter().map(|a| a.event.clone()).collect())
        .unwrap_or_default()
}

// ---------------------------------------------------------------------------
// detections.jsonl

#[derive(Debug, Serialize, Deserialize)]
struct RawFrame {
    video_id: String,
    frame: i64,
    frame_w: f64,
    frame_h: f64,
    boxes: Vec<RawBox>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawBox {
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

fn frame_from_raw(raw: RawFrame, line: usize) -> Result<(String, FrameDetections)> {
    let err = |msg: String| Error::Parse { line, msg };
    if raw.frame < 0 {
        return Err(err(format!("video `{}`: negative frame index {}", raw.video_id, raw.frame)));
    }
    if !(raw.frame_w > 0.0 && raw.frame_h > 0.0 && raw.frame_w.is_finite() && raw.frame_h.is_finite()) {
        return Err(err(format!(
            "video `{}` frame {}: frame size must be positive, got {}x{}",
            raw.video_id, raw.frame, raw.frame_w, raw.frame_h
        )));
    }
    let mut frame = FrameDetections {
        frame_index: raw.frame as usize,
        infant: None,
        left_hand: None,
        right_hand: None,
        objects: Vec::new(),
        frame_size: (raw.frame_w, raw.frame_h),
    };
    for b in raw.boxes {
        let bbox = BoundingBox::new(b.x, b.y, b.w, b.h).map_err(|e| {
            err(format!("video `{}` frame {} box `{}`: {e}", raw.video_id, raw.frame, b.label))
        })?;
        let slot = match b.label.as_str() {
            "infant" => &mut frame.infant,
            "left_hand" => &mut frame.left_hand,
            "right_hand" => &mut frame.right_hand,
            "object" => {
                let id = b.id.ok_or_else(|| {
                    err(format!("video `{}` frame {}: object box without id", raw.video_id, raw.frame))
                })?;
                if frame.object(&id).is_some() {
                    return Err(err(format!(
                        "video `{}` frame {}: duplicate object id `{id}`",
                        raw.video_id, raw.frame
                    )));
                }
                frame.objects.push((id, bbox));
                continue;
            }
            other => {
                return Err(err(format!(
                    "video `{}` frame {}: unknown box label `{other}`",
                    raw.video_id, raw.frame
                )))
            }
        };
        if slot.is_some() {
            return Err(err(format!(
                "video `{}` frame {}: more than one `{}` box",
                raw.video_id, raw.frame, b.label
            )));
        }
        *slot = Some(bbox);
    }
    Ok((raw.video_id, frame))
}

/// Parses `detections.jsonl`. Sequences come back ordered by video id with
/// frames sorted by frame index. Blank lines are ignored.
pub fn parse_detections<R: BufRead>(reader: R) -> Result<Vec<VideoSequence>> {
    let mut videos: BTreeMap<String, Vec<FrameDetections>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawFrame = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let (video_id, frame) = frame_from_raw(raw, line_no)?;
        videos.entry(video_id).or_default().push(frame);
    }
    let mut out = Vec::with_capacity(videos.len());
    for (video_id, mut frames) in videos {
        frames.sort_by_key(|f| f.frame_index);
        if let Some(w) = frames.windows(2).find(|w| w[0].frame_index == w[1].frame_index) {
            return Err(Error::Parse {
                line: 0,
                msg: format!("video `{video_id}`: duplicate frame {}", w[0].frame_index),
            });
        }
        out.push(VideoSequence { video_id, frames });
    }
    Ok(out)
}

fn raw_box(label: &str, id: Option<&str>, b: &BoundingBox) -> RawBox {
    RawBox {
        label: label.to_string(),
        id: id.map(str::to_string),
        x: b.x(),
        y: b.y(),
        w: b.w(),
        h: b.h(),
    }
}

pub fn write_detections<W: Write>(mut w: W, sequences: &[VideoSequence]) -> Result<()> {
    for seq in sequences {
        for f in &seq.frames {
            let mut boxes = Vec::new();
            if let Some(b) = &f.infant {
                boxes.push(raw_box("infant", None, b));
            }
            if let Some(b) = &f.left_hand {
                boxes.push(raw_box("left_hand", None, b));
            }
            if let Some(b) = &f.right_hand {
                boxes.push(raw_box("right_hand", None, b));
            }
            for (id, b) in &f.objects {
                boxes.push(raw_box("object", Some(id), b));
            }
            let raw = RawFrame {
                video_id: seq.video_id.clone(),
                frame: f.frame_index as i64,
                frame_w: f.frame_size.0,
                frame_h: f.frame_size.1,
                boxes,
            };
            serde_json::to_writer(&mut w, &raw)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// annotations.csv

const ANNOTATION_HEADER: [&str; 6] = ["video_id", "reach_id", "hand", "object_id", "onset_frame", "offset_frame"];

#[derive(Debug, Deserialize)]
struct RawAnnotation {
    video_id: String,
    reach_id: u32,
    hand: String,
    object_id: String,
    onset_frame: usize,
    offset_frame: usize,
}

pub fn parse_annotations<R: std::io::Read>(reader: R) -> Result<AnnotationSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header_ok = rdr
        .headers()
        .map(|h| h.iter().eq(ANNOTATION_HEADER.iter().copied()))
        .unwrap_or(false);
    if !header_ok {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `{}`", ANNOTATION_HEADER.join(",")),
        });
    }
    let mut out = AnnotationSet::new();
    for rec in rdr.deserialize::<RawAnnotation>() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let hand: Hand = rec.hand.parse()?;
        let event = ReachEvent::new(hand, rec.object_id, rec.onset_frame, rec.offset_frame)
            .map_err(|e| Error::Annotation(format!("video `{}` reach {}: {e}", rec.video_id, rec.reach_id)))?;
        out.entry(rec.video_id).or_default().push(Annotation {
            reach_id: rec.reach_id,
            event,
        });
    }
    Ok(out)
}

pub fn write_annotations<W: Write>(w: W, set: &AnnotationSet) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(ANNOTATION_HEADER).map_err(io)?;
    for (video_id, rows) in set {
        for a in rows {
            wtr.write_record([
                video_id.as_str(),
                &a.reach_id.to_string(),
                a.event.hand.tag(),
                &a.event.object_id,
                &a.event.onset_frame.to_string(),
                &a.event.offset_frame.to_string(),
            ])
            .map_err(io)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// labels <-> events

/// Per-frame labels for one hand-stream of `n_frames` frames.
pub fn labels_from_events(events: &[ReachEvent], n_frames: usize, hand: Hand) -> Result<Vec<FrameLabel>> {
    let mut mine: Vec<&ReachEvent> = events.iter().filter(|e| e.hand == hand).collect();
    mine.sort_by_key(|e| (e.onset_frame, e.offset_frame));
    let mut labels = vec![FrameLabel::NoR; n_frames];
    let mut last_offset: Option<usize> = None;
    for e in mine {
        if e.onset_frame >= e.offset_frame {
            return Err(Error::Annotation(format!(
                "onset {} is not before offset {}",
                e.onset_frame, e.offset_frame
            )));
        }
        if e.offset_frame >= n_frames {
            return Err(Error::Annotation(format!(
                "event ({}, {}) exceeds sequence of {n_frames} frames",
                e.onset_frame, e.offset_frame
            )));
        }
        if let Some(prev) = last_offset {
            if e.onset_frame <= prev {
                return Err(Error::Annotation(format!(
                    "overlapping {hand} events: onset {} at or before previous offset {prev}",
                    e.onset_frame
                )));
            }
        }
        labels[e.onset_frame] = FrameLabel::RN;
        for l in &mut labels[e.onset_frame + 1..e.offset_frame] {
            *l = FrameLabel::R;
        }
        labels[e.offset_frame] = FrameLabel::RF;
        last_offset = Some(e.offset_frame);
    }
    Ok(labels)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodedSpans {
    pub spans: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

/// Recovers `(onset, offset)` spans from a label sequence. Malformed runs are
/// dropped and described in `warnings`.
pub fn events_from_labels(labels: &[FrameLabel]) -> DecodedSpans {
    let mut out = DecodedSpans::default();
    let mut open: Option<usize> = None;
    let mut stray_from: Option<usize> = None;
    for (i, &l) in labels.iter().enumerate() {
        match l {
            FrameLabel::RN => {
                if let Some(o) = open {
                    out.warnings.push(format!("onset at {o} never closed; reopened at {i}"));
                }
                open = Some(i);
                stray_from = None;
            }
            FrameLabel::R => {
                if open.is_none() && stray_from.is_none() {
                    stray_from = Some(i);
                    out.warnings.push(format!("reach frames from {i} without an onset"));
                }
            }
            FrameLabel::RF => match open.take() {
                Some(o) => out.spans.push((o, i)),
                None => {
                    out.warnings.push(format!("offset at {i} without an onset"));
                    stray_from = None;
                }
            },
            FrameLabel::NoR => {
                if let Some(o) = open.take() {
                    out.warnings.push(format!("onset at {o} ended at {i} without an offset"));
                }
                stray_from = None;
            }
        }
    }
    if let Some(o) = open {
        out.warnings.push(format!("onset at {o} has no offset before the end"));
    }
    out
}

// ---------------------------------------------------------------------------
// validation

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ValidationFlag {
    FrameGap { after: usize, next: usize },
    OutOfBounds { event: usize, frame: usize },
    Overlap { first: usize, second: usize },
    MissingHandBox { event: usize, frame: usize },
    MissingObjectBox { event: usize, frame: usize, object_id: String },
    Disagreement { event: usize, second: usize, onset_diff: usize, offset_diff: usize },
    UnpairedPrimary { event: usize },
    UnpairedSecondary { second: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub flags: Vec<ValidationFlag>,
    pub merged: Vec<ReachEvent>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Checks events against the detections of `seq` and, when a second
/// annotator's events are given, pairs the two passes. Paired events within
/// [`ANNOTATOR_TOLERANCE`] are merged by the floor of the mean; disagreeing
/// pairs keep the first annotator's event and are flagged.
pub fn validate_annotations(
    seq: &VideoSequence,
    events: &[ReachEvent],
    second_pass: Option<&[ReachEvent]>,
) -> ValidationReport {
    let mut flags = Vec::new();
    for w in seq.frames.windows(2) {
        if w[1].frame_index != w[0].frame_index + 1 {
            flags.push(ValidationFlag::FrameGap {
                after: w[0].frame_index,
                next: w[1].frame_index,
            });
        }
    }

    let (lo, hi) = (seq.first_frame(), seq.last_frame());
    for (i, e) in events.iter().enumerate() {
        let mut in_bounds = true;
        for f in [e.onset_frame, e.offset_frame] {
            if f < lo || f > hi || seq.frames.is_empty() {
                flags.push(ValidationFlag::OutOfBounds { event: i, frame: f });
                in_bounds = false;
            }
        }
        if !in_bounds {
            continue;
        }
        for f in [e.onset_frame, e.offset_frame] {
            match seq.frame(f) {
                None => flags.push(ValidationFlag::MissingHandBox { event: i, frame: f }),
                Some(fd) => {
                    if fd.hand(e.hand).is_none() {
                        flags.push(ValidationFlag::MissingHandBox { event: i, frame: f });
                    }
                    if fd.object(&e.object_id).is_none() {
                        flags.push(ValidationFlag::MissingObjectBox {
                            event: i,
                            frame: f,
                            object_id: e.object_id.clone(),
                        });
                    }
                }
            }
        }
    }

    for i in 0..events.len() {
        for j in i + 1..events.len() {
            let (a, b) = (&events[i], &events[j]);
            if a.hand == b.hand && a.onset_frame <= b.offset_frame && b.onset_frame <= a.offset_frame {
                flags.push(ValidationFlag::Overlap { first: i, second: j });
            }
        }
    }

    let mut merged = events.to_vec();
    if let Some(second) = second_pass {
        let mut used = vec![false; second.len()];
        for (i, e) in events.iter().enumerate() {
            let best = second
                .iter()
                .enumerate()
                .filter(|(k, s)| !used[*k] && s.hand == e.hand && s.object_id == e.object_id)
                .min_by_key(|(k, s)| {
                    (
                        s.onset_frame.abs_diff(e.onset_frame) + s.offset_frame.abs_diff(e.offset_frame),
                        *k,
                    )
                });
            let Some((k, s)) = best else {
                flags.push(ValidationFlag::UnpairedPrimary { event: i });
                continue;
            };
            used[k] = true;
            let onset_diff = s.onset_frame.abs_diff(e.onset_frame);
            let offset_diff = s.offset_frame.abs_diff(e.offset_frame);
            if onset_diff > ANNOTATOR_TOLERANCE || offset_diff > ANNOTATOR_TOLERANCE {
                flags.push(ValidationFlag::Disagreement {
                    event: i,
                    second: k,
                    onset_diff,
                    offset_diff,
                });
            } else {
                merged[i].onset_frame = (e.onset_frame + s.onset_frame) / 2;
                merged[i].offset_frame = (e.offset_frame + s.offset_frame) / 2;
            }
        }
        for (k, u) in used.iter().enumerate() {
            if !u {
                flags.push(ValidationFlag::UnpairedSecondary { second: k });
            }
        }
    }
    ValidationReport { flags, merged }
}

// ---------------------------------------------------------------------------
// splitting

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Partition sizes for `n` samples: train and val are the ratio counts
/// rounded to nearest, test takes the remainder; each part keeps at least one
/// sample.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::Split(format!("ratios must be positive, got {a},{b},{c}")));
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("ratios must sum to 1, got {}", a + b + c)));
    }
    if n < 3 {
        return Err(Error::Split(format!("need at least 3 samples, got {n}")));
    }
    let mut train = ((n as f64 * a).round() as usize).max(1);
    let mut val = ((n as f64 * b).round() as usize).max(1);
    while train + val >= n {
        if train >= val {
            train -= 1;
        } else {
            val -= 1;
        }
    }
    Ok((train, val, n - train - val))
}

/// Deterministic shuffled split. Samples are whole reach clips; callers never
/// split individual frames.
pub fn split_dataset<T: Clone>(samples: &[T], ratios: (f64, f64, f64), seed: u64) -> Result<Split<T>> {
    let (n_train, n_val, _) = split_sizes(samples.len(), ratios)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}
