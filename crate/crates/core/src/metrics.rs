//! Frame-level confusion, NoR/Reach precision and recall, and event-level
//! keyframe delays.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{FrameLabel, Hand, ReachEvent, VideoSequence};
use crate::error::{Error, Result};
use crate::events::{assemble_events, FusionPolicy};
use crate::features::{labeled_stream, LabeledStream, Pairing};
use crate::nn::{label_of, predict, Model};

/// Default onset window for pairing predicted with annotated events.
pub const DELAY_MATCH_WINDOW: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[truth][predicted]` over NoR, RN, R, RF.
    pub counts: [[u64; 4]; 4],
    /// `binary[truth][predicted]` over NoR, Reach.
    pub binary: [[u64; 2]; 2],
}

fn fold(l: FrameLabel) -> usize {
    usize::from(l.is_reach())
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: FrameLabel, pred: FrameLabel) {
        self.counts[truth.index()][pred.index()] += 1;
        self.binary[fold(truth)][fold(pred)] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for t in 0..4 {
            for p in 0..4 {
                self.counts[t][p] += other.counts[t][p];
            }
        }
        for t in 0..2 {
            for p in 0..2 {
                self.binary[t][p] += other.binary[t][p];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn ratio(num: u64, den: u64) -> Option<f64> {
        (den > 0).then(|| num as f64 / den as f64)
    }

    /// Four-class frame accuracy; `None` for an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        Self::ratio((0..4).map(|i| self.counts[i][i]).sum(), self.total())
    }

    pub fn binary_accuracy(&self) -> Option<f64> {
        Self::ratio(self.binary[0][0] + self.binary[1][1], self.total())
    }
}

pub fn confusion(pred: &[FrameLabel], truth: &[FrameLabel]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predicted labels for {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut m = ConfusionMatrix::default();
    for (p, t) in pred.iter().zip(truth) {
        m.add(*t, *p);
    }
    Ok(m)
}

/// Precision and recall of one class; `None` where the denominator is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub nor: ClassScores,
    pub reach: ClassScores,
}

pub fn precision_recall(m: &ConfusionMatrix) -> PrecisionRecall {
    let b = &m.binary;
    let class = |c: usize| {
        let tp = b[c][c];
        let predicted = b[0][c] + b[1][c];
        let actual = b[c][0] + b[c][1];
        ClassScores {
            precision: ConfusionMatrix::ratio(tp, predicted),
            recall: ConfusionMatrix::ratio(tp, actual),
        }
    };
    PrecisionRecall {
        nor: class(0),
        reach: class(1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMatch {
    pub truth: usize,
    pub predicted: usize,
    /// Predicted minus annotated frame; positive means late.
    pub onset_delay: i64,
    pub offset_delay: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DelayReport {
    pub matches: Vec<EventMatch>,
    pub missed: usize,
    pub spurious: usize,
}

fn signed(a: usize, b: usize) -> i64 {
    a as i64 - b as i64
}

/// Greedy one-to-one matching by nearest onset: candidate pairs of the same
/// hand with onsets at most `window` frames apart are taken in order of onset
/// distance (then truth index, then prediction index).
pub fn keyframe_delay(pred: &[ReachEvent], truth: &[ReachEvent], window: usize) -> DelayReport {
    let mut cands: Vec<(usize, usize, usize)> = Vec::new();
    for (ti, t) in truth.iter().enumerate() {
        for (pi, p) in pred.iter().enumerate() {
            let gap = t.onset_frame.abs_diff(p.onset_frame);
            if t.hand == p.hand && gap <= window {
                cands.push((gap, ti, pi));
            }
        }
    }
    cands.sort_unstable();
    let (mut used_t, mut used_p) = (vec![false; truth.len()], vec![false; pred.len()]);
    let mut matches = Vec::new();
    for (_, ti, pi) in cands {
        if used_t[ti] || used_p[pi] {
            continue;
        }
        used_t[ti] = true;
        used_p[pi] = true;
        matches.push(EventMatch {
            truth: ti,
            predicted: pi,
            onset_delay: signed(pred[pi].onset_frame, truth[ti].onset_frame),
            offset_delay: signed(pred[pi].offset_frame, truth[ti].offset_frame),
        });
    }
    matches.sort_by_key(|m| m.truth);
    DelayReport {
        missed: truth.len() - matches.len(),
        spurious: pred.len() - matches.len(),
        matches,
    }
}

/// One matched event in a report, with its video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedEvent {
    pub video_id: String,
    pub hand: Hand,
    pub truth_onset: usize,
    pub truth_offset: usize,
    pub onset_delay: i64,
    pub offset_delay: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub n_truth: usize,
    pub n_predicted: usize,
    pub matched: usize,
    pub missed: usize,
    pub spurious: usize,
    pub mean_onset_delay: Option<f64>,
    pub mean_offset_delay: Option<f64>,
    pub mean_abs_onset_delay: Option<f64>,
    pub mean_abs_offset_delay: Option<f64>,
    /// Fraction of annotated events matched with `|onset delay| <= 2` and
    /// `|offset delay| <= 1`.
    pub within_tolerance: Option<f64>,
    pub matches: Vec<MatchedEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_kind: String,
    pub iou_threshold: f64,
    pub policy: FusionPolicy,
    pub n_videos: usize,
    pub n_frames: u64,
    pub frame_accuracy: f64,
    pub binary_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub precision_recall: PrecisionRecall,
    pub events: EventSummary,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// A test clip with its annotated events.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalClip {
    pub sequence: VideoSequence,
    pub events: Vec<ReachEvent>,
}

/// Evaluates `model` on every hand of every clip: frame labels are the argmax
/// of the classifier scores (valid frames only), events come from
/// [`assemble_events`].
pub fn evaluate(model: &Model, theta: f64, clips: &[EvalClip], policy: &FusionPolicy, pairing: Pairing) -> Result<EvalReport> {
    let mut report = evaluate_with(theta, clips, policy, pairing, |ls| predict(model, &ls.stream))?;
    report.model_kind = model.kind().file_tag().into();
    Ok(report)
}

/// [`evaluate`] with an arbitrary per-stream scorer.
pub fn evaluate_with(
    theta: f64,
    clips: &[EvalClip],
    policy: &FusionPolicy,
    pairing: Pairing,
    mut scorer: impl FnMut(&LabeledStream) -> Result<Vec<Vec<f64>>>,
) -> Result<EvalReport> {
    if clips.is_empty() {
        return Err(Error::Evaluation("test set is empty".into()));
    }
    let mut cm = ConfusionMatrix::default();
    let mut matches = Vec::new();
    let (mut n_truth, mut n_pred, mut missed, mut spurious) = (0, 0, 0, 0);
    for clip in clips {
        for hand in Hand::BOTH {
            let ls = labeled_stream(&clip.sequence, &clip.events, hand, pairing)?;
            let scores = scorer(&ls)?;
            if scores.len() != ls.stream.len() {
                return Err(Error::Dimension(format!(
                    "video `{}`: {} score rows for {} frames",
                    clip.sequence.video_id,
                    scores.len(),
                    ls.stream.len()
                )));
            }
            for ((row, truth), valid) in scores.iter().zip(&ls.labels).zip(&ls.stream.valid) {
                if *valid {
                    cm.add(*truth, label_of(row));
                }
            }
            let pred = assemble_events(Some(&scores), &ls.stream, theta, policy)?;
            let truth: Vec<ReachEvent> = clip.events.iter().filter(|e| e.hand == hand).cloned().collect();
            let d = keyframe_delay(&pred, &truth, DELAY_MATCH_WINDOW);
            n_truth += truth.len();
            n_pred += pred.len();
            missed += d.missed;
            spurious += d.spurious;
            matches.extend(d.matches.iter().map(|m| MatchedEvent {
                video_id: clip.sequence.video_id.clone(),
                hand,
                truth_onset: truth[m.truth].onset_frame,
                truth_offset: truth[m.truth].offset_frame,
                onset_delay: m.onset_delay,
                offset_delay: m.offset_delay,
            }));
        }
    }
    let good = matches.iter().filter(|m| m.onset_delay.abs() <= 2 && m.offset_delay.abs() <= 1).count();
    let events = EventSummary {
        n_truth,
        n_predicted: n_pred,
        matched: matches.len(),
        missed,
        spurious,
        mean_onset_delay: mean(matches.iter().map(|m| m.onset_delay as f64)),
        mean_offset_delay: mean(matches.iter().map(|m| m.offset_delay as f64)),
        mean_abs_onset_delay: mean(matches.iter().map(|m| m.onset_delay.abs() as f64)),
        mean_abs_offset_delay: mean(matches.iter().map(|m| m.offset_delay.abs() as f64)),
        within_tolerance: (n_truth > 0).then(|| good as f64 / n_truth as f64),
        matches,
    };
    Ok(EvalReport {
        model_kind: String::new(),
        iou_threshold: theta,
        policy: *policy,
        n_videos: clips.len(),
        n_frames: cm.total(),
        frame_accuracy: cm.accuracy().unwrap_or(0.0),
        binary_accuracy: cm.binary_accuracy().unwrap_or(0.0),
        precision_recall: precision_recall(&cm),
        confusion: cm,
        events,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x))
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:+.2}"))
}

impl EvalReport {
    /// Human-readable summary: accuracy, NoR/R precision and recall, event
    /// counts and delays, and the four-class confusion matrix.
    pub fn table(&self) -> String {
        let pr = &self.precision_recall;
        let mut s = String::new();
        let _ = writeln!(s, "{:<14} {:>10} {:>10} {:>10} {:>10} {:>10}", "model", "acc [%]", "P NoR", "P R", "R NoR", "R R");
        let _ = writeln!(
            s,
            "{:<14} {:>10} {:>10} {:>10} {:>10} {:>10}",
            self.model_kind,
            pct(Some(self.frame_accuracy)),
            pct(pr.nor.precision),
            pct(pr.reach.precision),
            pct(pr.nor.recall),
            pct(pr.reach.recall)
        );
        let e = &self.events;
        let _ = writeln!(
            s,
            "events: {} annotated, {} predicted, {} matched, {} missed, {} spurious",
            e.n_truth, e.n_predicted, e.matched, e.missed, e.spurious
        );
        let _ = writeln!(
            s,
            "delay [frames]: onset mean {} (|.| {}), offset mean {} (|.| {}); within tolerance {}%",
            num(e.mean_onset_delay),
            num(e.mean_abs_onset_delay),
            num(e.mean_offset_delay),
            num(e.mean_abs_offset_delay),
            pct(e.within_tolerance)
        );
        let _ = writeln!(s, "confusion (rows truth, cols predicted) over {} frames:", self.n_frames);
        let _ = writeln!(s, "{:>6} {:>8} {:>8} {:>8} {:>8}", "", "NoR", "RN", "R", "RF");
        for (i, l) in FrameLabel::ALL.iter().enumerate() {
            let c = &self.confusion.counts[i];
            let _ = writeln!(s, "{:>6} {:>8} {:>8} {:>8} {:>8}", format!("{l:?}"), c[0], c[1], c[2], c[3]);
        }
        s
    }
}
