//! Per-frame `(d_norm, delta_d, iou)` features for one hand against its
//! target object.

use serde::{Deserialize, Serialize};

use crate::data::{labels_from_events, FrameDetections, FrameLabel, Hand, ReachEvent, VideoSequence};
use crate::error::{Error, Result};
use crate::geometry::{center, distance, iou};

pub const FEATURE_DIM: usize = 3;

/// Consecutive non-decreasing distance changes that release a sticky target.
const STICKY_RELEASE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Hand/object center distance over the frame diagonal.
    pub d_norm: f64,
    /// `d_norm[t] - d_norm[t-1]`; zero on the first valid frame.
    pub delta_d: f64,
    pub iou: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; FEATURE_DIM] {
        [self.d_norm, self.delta_d, self.iou]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Keep the object the hand started approaching.
    #[default]
    Sticky,
    /// Nearest object on every frame.
    PerFrame,
}

/// Features aligned one-to-one with the frames of a sequence. Frames without
/// a hand or object box are kept as gaps: `valid[i] == false`, distance and
/// IoU frozen at the last valid values and `delta_d == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStream {
    pub hand: Hand,
    pub frame_indices: Vec<usize>,
    pub vectors: Vec<FeatureVector>,
    pub valid: Vec<bool>,
    pub targets: Vec<Option<String>>,
}

impl FeatureStream {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Most frequently selected target; ties go to the smaller id.
    pub fn object_id(&self) -> Option<String> {
        let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
        for t in self.targets.iter().flatten() {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        let best = counts.values().copied().max()?;
        counts.into_iter().find(|(_, c)| *c == best).map(|(k, _)| k.to_string())
    }

    /// Target object at position `i`, falling back to the nearest earlier
    /// valid frame.
    pub fn target_at(&self, i: usize) -> Option<&str> {
        self.targets[..=i.min(self.len().saturating_sub(1))]
            .iter()
            .rev()
            .flatten()
            .next()
            .map(String::as_str)
    }
}

/// Nearest object to the hand by center distance, ties broken by id.
pub fn select_target(frame: &FrameDetections, hand: Hand) -> Option<String> {
    let h = center(frame.hand(hand)?);
    frame
        .objects
        .iter()
        .map(|(id, b)| (distance(h, center(b)), id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, id)| id.clone())
}

pub fn feature_stream(seq: &VideoSequence, hand: Hand, pairing: Pairing) -> Result<FeatureStream> {
    if seq.frames.is_empty() {
        return Err(Error::Dimension(format!("video `{}` has no frames", seq.video_id)));
    }
    let n = seq.frames.len();
    let mut out = FeatureStream {
        hand,
        frame_indices: Vec::with_capacity(n),
        vectors: Vec::with_capacity(n),
        valid: Vec::with_capacity(n),
        targets: Vec::with_capacity(n),
    };
    let mut last: Option<FeatureVector> = None;
    let mut stuck: Option<String> = None;
    let mut non_decreasing = 0usize;

    for frame in &seq.frames {
        out.frame_indices.push(frame.frame_index);
        let target = match (pairing, &stuck) {
            (Pairing::Sticky, Some(id)) if frame.object(id).is_some() => Some(id.clone()),
            _ => select_target(frame, hand),
        };
        let (Some(hb), Some(tid)) = (frame.hand(hand), target) else {
            let frozen = last.map_or_else(FeatureVector::default, |l| FeatureVector { delta_d: 0.0, ..l });
            out.vectors.push(frozen);
            out.valid.push(false);
            out.targets.push(None);
            continue;
        };
        if stuck.as_deref().is_some_and(|s| s != tid) {
            stuck = None;
            non_decreasing = 0;
        }
        let ob = frame.object(&tid).expect("target comes from this frame");
        let d_norm = distance(center(hb), center(ob)) / frame.diagonal();
        let delta_d = last.map_or(0.0, |l| d_norm - l.d_norm);
        let v = FeatureVector {
            d_norm,
            delta_d,
            iou: iou(hb, ob),
        };

        if pairing == Pairing::Sticky {
            match (&stuck, last.is_some()) {
                (None, true) if delta_d < 0.0 => {
                    stuck = Some(tid.clone());
                    non_decreasing = 0;
                }
                (Some(_), _) if delta_d < 0.0 => non_decreasing = 0,
                (Some(_), _) => {
                    non_decreasing += 1;
                    if non_decreasing >= STICKY_RELEASE {
                        stuck = None;
                        non_decreasing = 0;
                    }
                }
                _ => {}
            }
        }

        out.vectors.push(v);
        out.valid.push(true);
        out.targets.push(Some(tid));
        last = Some(v);
    }
    Ok(out)
}

/// A feature stream with per-frame ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledStream {
    pub video_id: String,
    pub stream: FeatureStream,
    pub labels: Vec<FrameLabel>,
    /// Ground-truth `(onset, offset)` as positions into the stream.
    pub truth: Vec<(usize, usize)>,
}

/// Builds the labeled stream for one hand of `seq` from annotated events
/// (which use absolute frame indices).
pub fn labeled_stream(
    seq: &VideoSequence,
    events: &[ReachEvent],
    hand: Hand,
    pairing: Pairing,
) -> Result<LabeledStream> {
    let stream = feature_stream(seq, hand, pairing)?;
    let last = seq.last_frame();
    let full = labels_from_events(events, last + 1, hand)?;
    let labels = stream.frame_indices.iter().map(|&f| full[f]).collect();
    let pos = |f: usize| stream.frame_indices.binary_search(&f).ok();
    let mut truth: Vec<(usize, usize)> = events
        .iter()
        .filter(|e| e.hand == hand)
        .filter_map(|e| Some((pos(e.onset_frame)?, pos(e.offset_frame)?)))
        .collect();
    truth.sort_unstable();
    Ok(LabeledStream {
        video_id: seq.video_id.clone(),
        stream,
        labels,
        truth,
    })
}
