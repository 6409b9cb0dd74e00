//! Two-phase keyframe tracking and reach-event assembly.
//!
//! The onset keyframe `t_rn` is held while the hand/object distance keeps
//! shrinking and is moved to the current frame after four consecutive
//! non-decreasing distance changes. The offset keyframe `t_rf` is the first
//! frame of an approach whose IoU reaches the threshold θ. In `fused` mode the
//! classifier's per-frame scores additionally gate when an approach may start
//! and can accept an offset early.
//!
//! Everything that resets the tracker (the distance invalidation and, when
//! fused, the score gating) is independent of θ, so raising θ can only delay
//! or suppress offsets, never add events.

use serde::{Deserialize, Serialize};

use crate::data::{events_from_labels, FrameLabel, ReachEvent};
use crate::error::{Error, Result};
use crate::features::{FeatureStream, FeatureVector};
use crate::nn::argmax;

/// Consecutive non-decreasing distance changes that invalidate an onset.
pub const INVALIDATION_RUN: u8 = 4;

/// Frame tolerance for an event to count as recovered during calibration.
pub const MATCH_TOLERANCE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Approaching,
    Touched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerState {
    pub t_rn: usize,
    pub t_rf: Option<usize>,
    pub consecutive_increases: u8,
    pub phase: Phase,
    pub last_d: Option<f64>,
    pub last_frame: Option<usize>,
}

impl Default for TrackerState {
    fn default() -> Self {
        TrackerState {
            t_rn: 0,
            t_rf: None,
            consecutive_increases: 0,
            phase: Phase::Idle,
            last_d: None,
            last_frame: None,
        }
    }
}

impl TrackerState {
    fn reset_to(&mut self, j: usize, phase: Phase) {
        self.t_rn = j;
        self.t_rf = None;
        self.consecutive_increases = 0;
        self.phase = phase;
    }
}

fn onset_rule(state: &TrackerState, j: usize, d_j: f64, allow_approach: bool) -> Result<TrackerState> {
    let mut s = state.clone();
    let (Some(last), Some(prev)) = (state.last_frame, state.last_d) else {
        s.t_rn = j;
        s.last_d = Some(d_j);
        s.last_frame = Some(j);
        return Ok(s);
    };
    if j <= last {
        return Err(Error::FrameOrder { last, got: j });
    }
    if d_j - prev < 0.0 {
        s.consecutive_increases = 0;
        if s.phase == Phase::Idle && allow_approach {
            s.phase = Phase::Approaching;
        }
    } else {
        s.consecutive_increases += 1;
        if s.consecutive_increases >= INVALIDATION_RUN {
            s.reset_to(j, Phase::Idle);
        }
    }
    s.last_d = Some(d_j);
    s.last_frame = Some(j);
    Ok(s)
}

/// Onset rule for frame `j` with hand/object distance `d_j`. The first call
/// initializes the keyframe at `j`. A decrease keeps `t_rn` and marks the
/// tracker as approaching; a zero or positive change counts toward the
/// invalidation run.
pub fn onset_step(state: &TrackerState, j: usize, d_j: f64) -> Result<TrackerState> {
    onset_rule(state, j, d_j, true)
}

/// Offset rule: while approaching, the first frame with `iou_j >= theta`
/// becomes `t_rf` and the tracker moves to `Touched`.
pub fn offset_step(state: &TrackerState, j: usize, iou_j: f64, theta: f64) -> TrackerState {
    let mut s = state.clone();
    if s.phase == Phase::Approaching && iou_j >= theta {
        s.t_rf = Some(j);
        s.phase = Phase::Touched;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    RulesOnly,
    ScoresOnly,
    #[default]
    Fused,
}

/// How the offset keyframe is chosen once IoU crosses θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetSemantics {
    /// First frame of contact.
    #[default]
    Touch,
    /// Keyframe follows the frame while IoU stays above θ and is settled on
    /// the first frame it drops below: the last frame of contact.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionPolicy {
    pub mode: PolicyMode,
    pub min_duration: usize,
    pub score_margin: f64,
    pub offset: OffsetSemantics,
}

impl Default for FusionPolicy {
    fn default() -> Self {
        FusionPolicy {
            mode: PolicyMode::Fused,
            min_duration: 2,
            score_margin: 0.0,
            offset: OffsetSemantics::Touch,
        }
    }
}

impl FusionPolicy {
    pub fn rules_only() -> Self {
        FusionPolicy {
            mode: PolicyMode::RulesOnly,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_duration < 2 {
            return Err(Error::Evaluation(format!("min_duration must be >= 2, got {}", self.min_duration)));
        }
        if !(0.0..=1.0).contains(&self.score_margin) {
            return Err(Error::Evaluation(format!("score_margin must lie in [0,1], got {}", self.score_margin)));
        }
        Ok(())
    }
}

/// Online event assembler for one feature stream. Frames must be pushed in
/// order; [`EventAssembler::finish`] flushes a pending event.
#[derive(Debug, Clone)]
pub struct EventAssembler {
    theta: f64,
    policy: FusionPolicy,
    state: TrackerState,
    prev_gated: bool,
    pending: bool,
    // scores_only decoding
    open: Option<usize>,
}

impl EventAssembler {
    pub fn new(theta: f64, policy: FusionPolicy) -> Result<Self> {
        policy.validate()?;
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::Evaluation(format!("IoU threshold must lie in (0,1), got {theta}")));
        }
        Ok(EventAssembler {
            theta,
            policy,
            state: TrackerState::default(),
            prev_gated: false,
            pending: false,
            open: None,
        })
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    fn accept(&self, span: (usize, usize)) -> Option<(usize, usize)> {
        (span.1 >= span.0 + self.policy.min_duration).then_some(span)
    }

    fn flush(&mut self) -> Option<(usize, usize)> {
        if !self.pending {
            return None;
        }
        self.pending = false;
        self.state.t_rf.map(|rf| (self.state.t_rn, rf))
    }

    fn gate(&self, scores: &[f64]) -> (bool, bool) {
        let best = argmax(scores);
        let runner_up = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let label = FrameLabel::from_index(best);
        let confident = scores[best] - runner_up >= self.policy.score_margin;
        let gated = matches!(label, Some(FrameLabel::RN | FrameLabel::R)) && confident;
        (gated, label == Some(FrameLabel::RF))
    }

    /// Feeds frame `j`. Returns a completed `(onset, offset)` span, if any.
    pub fn push(&mut self, j: usize, v: &FeatureVector, scores: Option<&[f64]>) -> Result<Option<(usize, usize)>> {
        let mode = self.policy.mode;
        if mode != PolicyMode::RulesOnly && scores.is_none() {
            return Err(Error::Evaluation(format!("{mode:?} assembly needs classifier scores")));
        }
        if mode == PolicyMode::ScoresOnly {
            let label = FrameLabel::from_index(argmax(scores.unwrap())).unwrap_or(FrameLabel::NoR);
            return Ok(match label {
                FrameLabel::RN => {
                    self.open = Some(j);
                    None
                }
                FrameLabel::R => None,
                FrameLabel::RF => self.open.take().and_then(|o| self.accept((o, j))),
                FrameLabel::NoR => {
                    self.open = None;
                    None
                }
            });
        }

        let fused = mode == PolicyMode::Fused;
        let (gated, says_rf) = match scores {
            Some(s) if fused => self.gate(s),
            _ => (true, false),
        };
        let mut out = None;

        let before = self.state.phase;
        let closing = self.state.last_d.is_some_and(|d| v.d_norm < d);
        self.state = onset_rule(&self.state, j, v.d_norm, gated)?;
        if before == Phase::Touched && self.state.phase != Phase::Touched {
            out = self.flush();
        }

        let contact = v.iou >= self.theta || (fused && says_rf);
        let mut touched_now = false;
        match self.state.phase {
            Phase::Approaching if contact && j >= self.state.t_rn + self.policy.min_duration => {
                self.state.t_rf = Some(j);
                self.state.phase = Phase::Touched;
                touched_now = true;
                match self.policy.offset {
                    OffsetSemantics::Touch => out = Some((self.state.t_rn, j)),
                    OffsetSemantics::Literal => self.pending = true,
                }
            }
            Phase::Touched if self.pending => {
                if contact {
                    self.state.t_rf = Some(j);
                } else {
                    out = self.flush();
                }
            }
            _ => {}
        }

        // A fresh run of gated frames starts a candidate onset from Idle. An
        // approach survives ungated frames while the distance keeps shrinking.
        if fused && !touched_now {
            let idle = before == Phase::Idle || self.state.phase == Phase::Idle;
            if gated && !self.prev_gated && idle {
                self.state.reset_to(j, Phase::Approaching);
            } else if !gated && !says_rf && !closing && self.state.phase == Phase::Approaching {
                self.state.reset_to(j, Phase::Idle);
            }
        }
        self.prev_gated = gated;
        Ok(out)
    }

    pub fn finish(mut self) -> Option<(usize, usize)> {
        self.flush()
    }
}

/// Runs the assembler over a whole stream. `scores` (one probability row
/// per frame) are required unless the policy is `rules_only`.
pub fn assemble_spans(
    scores: Option<&[Vec<f64>]>,
    stream: &FeatureStream,
    theta: f64,
    policy: &FusionPolicy,
) -> Result<Vec<(usize, usize)>> {
    if let Some(s) = scores {
        if s.len() != stream.len() {
            return Err(Error::Dimension(format!("{} score rows for {} frames", s.len(), stream.len())));
        }
    }
    if policy.mode == PolicyMode::ScoresOnly {
        policy.validate()?;
        let s = scores.ok_or_else(|| Error::Evaluation("scores_only assembly needs classifier scores".into()))?;
        let labels: Vec<FrameLabel> = s
            .iter()
            .map(|row| FrameLabel::from_index(argmax(row)).unwrap_or(FrameLabel::NoR))
            .collect();
        return Ok(events_from_labels(&labels)
            .spans
            .into_iter()
            .filter(|(a, b)| b - a >= policy.min_duration)
            .collect());
    }
    let mut asm = EventAssembler::new(theta, *policy)?;
    let mut spans = Vec::new();
    for (j, v) in stream.vectors.iter().enumerate() {
        if let Some(span) = asm.push(j, v, scores.map(|s| s[j].as_slice()))? {
            spans.push(span);
        }
    }
    spans.extend(asm.finish());
    Ok(spans)
}

/// Reach events for a stream, in absolute frame indices.
pub fn assemble_events(
    scores: Option<&[Vec<f64>]>,
    stream: &FeatureStream,
    theta: f64,
    policy: &FusionPolicy,
) -> Result<Vec<ReachEvent>> {
    Ok(assemble_spans(scores, stream, theta, policy)?
        .into_iter()
        .map(|(on, off)| ReachEvent {
            hand: stream.hand,
            object_id: stream.target_at(off).unwrap_or_default().to_string(),
            onset_frame: stream.frame_indices[on],
            offset_frame: stream.frame_indices[off],
        })
        .collect())
}

// ---------------------------------------------------------------------------
// calibration

/// Greedy one-to-one matching of spans whose onset and offset both lie within
/// `tol` frames. Returns the matched `(truth, predicted)` index pairs.
pub fn match_spans(truth: &[(usize, usize)], pred: &[(usize, usize)], tol: usize) -> Vec<(usize, usize)> {
    let mut cands: Vec<(usize, usize, usize)> = Vec::new();
    for (ti, t) in truth.iter().enumerate() {
        for (pi, p) in pred.iter().enumerate() {
            let (a, b) = (t.0.abs_diff(p.0), t.1.abs_diff(p.1));
            if a <= tol && b <= tol {
                cands.push((a + b, ti, pi));
            }
        }
    }
    cands.sort_unstable();
    let (mut used_t, mut used_p) = (vec![false; truth.len()], vec![false; pred.len()]);
    let mut out = Vec::new();
    for (_, ti, pi) in cands {
        if !used_t[ti] && !used_p[pi] {
            used_t[ti] = true;
            used_p[pi] = true;
            out.push((ti, pi));
        }
    }
    out
}

/// Event-level F1 over a set of streams.
pub fn event_f1(truth: &[Vec<(usize, usize)>], pred: &[Vec<(usize, usize)>], tol: usize) -> f64 {
    let (mut tp, mut n_truth, mut n_pred) = (0usize, 0usize, 0usize);
    for (t, p) in truth.iter().zip(pred) {
        tp += match_spans(t, p, tol).len();
        n_truth += t.len();
        n_pred += p.len();
    }
    if n_truth + n_pred == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (n_truth + n_pred) as f64
}

/// One validation stream for threshold calibration.
#[derive(Debug, Clone)]
pub struct CalibrationCase<'a> {
    pub stream: &'a FeatureStream,
    pub scores: Option<Vec<Vec<f64>>>,
    pub truth: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub iou_threshold: f64,
    pub f1: f64,
}

/// θ grid `0.01, 0.02, …, 0.50`.
pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (1..=50).map(|k| k as f64 / 100.0)
}

/// Grid search for the θ with the highest event F1; ties keep the smaller θ.
pub fn calibrate_threshold(cases: &[CalibrationCase<'_>], policy: &FusionPolicy) -> Result<Calibration> {
    if cases.iter().all(|c| c.truth.is_empty()) {
        return Err(Error::Calibration("validation set contains no events".into()));
    }
    let truth: Vec<Vec<(usize, usize)>> = cases.iter().map(|c| c.truth.clone()).collect();
    let mut best: Option<Calibration> = None;
    for theta in threshold_grid() {
        let pred = cases
            .iter()
            .map(|c| assemble_spans(c.scores.as_deref(), c.stream, theta, policy))
            .collect::<Result<Vec<_>>>()?;
        let f1 = event_f1(&truth, &pred, MATCH_TOLERANCE);
        if best.is_none_or(|b| f1 > b.f1) {
            best = Some(Calibration { iou_threshold: theta, f1 });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Hand;

    fn run_onset(ds: &[f64]) -> TrackerState {
        ds.iter()
            .enumerate()
            .fold(TrackerState::default(), |s, (j, d)| onset_step(&s, j, *d).unwrap())
    }

    #[test]
    fn decreasing_distance_keeps_onset() {
        let s = run_onset(&[10.0, 9.0, 8.0, 7.0]);
        assert_eq!(s.t_rn, 0);
        assert_eq!(s.phase, Phase::Approaching);
    }

    #[test]
    fn four_increases_invalidate() {
        let s = run_onset(&[10.0, 11.0, 12.0, 13.0, 14.0]);
        assert_eq!(s.t_rn, 4);
        assert_eq!(s.phase, Phase::Idle);
        assert_eq!(s.consecutive_increases, 0);
    }

    #[test]
    fn three_increases_then_decrease() {
        let s = run_onset(&[10.0, 11.0, 12.0, 13.0, 9.0]);
        assert_eq!(s.t_rn, 0);
        assert_eq!(s.consecutive_increases, 0);
        assert_eq!(s.phase, Phase::Approaching);
    }

    #[test]
    fn zero_change_counts_as_increase() {
        let s = run_onset(&[5.0, 5.0, 5.0, 5.0, 5.0]);
        assert_eq!(s.t_rn, 4);
    }

    #[test]
    fn out_of_order_frame_errors() {
        let s = onset_step(&TrackerState::default(), 3, 1.0).unwrap();
        assert!(matches!(onset_step(&s, 3, 1.0), Err(Error::FrameOrder { last: 3, got: 3 })));
    }

    #[test]
    fn offset_first_crossing() {
        let approaching = TrackerState {
            phase: Phase::Approaching,
            ..Default::default()
        };
        let s = [0.0, 0.0, 0.3, 0.6]
            .iter()
            .enumerate()
            .fold(approaching, |s, (j, iou)| offset_step(&s, j, *iou, 0.2));
        assert_eq!(s.t_rf, Some(2));
        assert_eq!(s.phase, Phase::Touched);

        let s = (0..5).fold(TrackerState { phase: Phase::Approaching, ..Default::default() }, |s, j| {
            offset_step(&s, j, 0.0, 0.2)
        });
        assert_eq!(s.t_rf, None);

        let idle = (0..4).fold(TrackerState::default(), |s, j| offset_step(&s, j, 0.9, 0.2));
        assert_eq!(idle.t_rf, None);
        assert_eq!(idle.phase, Phase::Idle);
    }

    fn stream(ds: &[f64], ious: &[f64]) -> FeatureStream {
        let n = ds.len();
        FeatureStream {
            hand: Hand::Left,
            frame_indices: (0..n).collect(),
            vectors: (0..n)
                .map(|i| FeatureVector {
                    d_norm: ds[i],
                    delta_d: if i == 0 { 0.0 } else { ds[i] - ds[i - 1] },
                    iou: ious[i],
                })
                .collect(),
            valid: vec![true; n],
            targets: vec![Some("o".into()); n],
        }
    }

    #[test]
    fn rules_only_single_reach() {
        // idle 0..=12 (invalidations at 4, 8, 12), approach 13..=20, touch at 21
        let mut ds = vec![0.5; 13];
        ds.extend((1..=8).map(|k| 0.5 - 0.05 * k as f64));
        ds.push(0.05);
        ds.extend([0.1, 0.2, 0.3, 0.4, 0.5, 0.5]);
        let mut ious = vec![0.0; ds.len()];
        ious[21] = 0.4;
        let events = assemble_spans(None, &stream(&ds, &ious), 0.2, &FusionPolicy::rules_only()).unwrap();
        assert_eq!(events, vec![(12, 21)]);
    }

    #[test]
    fn aborted_approach_emits_nothing() {
        let ds = [0.5, 0.5, 0.45, 0.4, 0.35, 0.4, 0.45, 0.5, 0.55, 0.55, 0.55];
        let events = assemble_spans(None, &stream(&ds, &[0.0; 11]), 0.2, &FusionPolicy::rules_only()).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn two_sequential_reaches() {
        let approach = |ds: &mut Vec<f64>, ious: &mut Vec<f64>| {
            ds.extend([0.5, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05]);
            ious.extend([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]);
            ds.extend([0.1, 0.2, 0.3, 0.4, 0.5]);
            ious.extend([0.0; 5]);
        };
        let (mut ds, mut ious) = (vec![], vec![]);
        approach(&mut ds, &mut ious);
        approach(&mut ds, &mut ious);
        let events = assemble_spans(None, &stream(&ds, &ious), 0.2, &FusionPolicy::rules_only()).unwrap();
        assert_eq!(events.len(), 2);
        assert!(events[0].1 < events[1].0);
        assert_eq!(events[0].1, 6);
        assert_eq!(events[1].1, 18);
    }

    #[test]
    fn touch_while_idle_is_not_an_offset() {
        let ds = [0.05; 8];
        let events = assemble_spans(None, &stream(&ds, &[0.6; 8]), 0.2, &FusionPolicy::rules_only()).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn min_duration_respected() {
        // touch one frame after the approach starts
        let ds = [0.5, 0.4, 0.3];
        let ious = [0.0, 0.5, 0.5];
        let events = assemble_spans(None, &stream(&ds, &ious), 0.2, &FusionPolicy::rules_only()).unwrap();
        assert_eq!(events, vec![(0, 2)]);
        let policy = FusionPolicy {
            min_duration: 3,
            ..FusionPolicy::rules_only()
        };
        assert!(assemble_spans(None, &stream(&ds, &ious), 0.2, &policy).unwrap().is_empty());
        assert!(FusionPolicy { min_duration: 1, ..policy }.validate().is_err());
    }

    fn onehot(labels: &[FrameLabel]) -> Vec<Vec<f64>> {
        labels
            .iter()
            .map(|l| {
                let mut r = vec![0.02; 4];
                r[l.index()] = 0.94;
                r
            })
            .collect()
    }

    #[test]
    fn fused_onset_follows_scores() {
        use FrameLabel::*;
        // jittery idle that the distance rule alone would not settle on
        let ds = [0.5, 0.49, 0.5, 0.49, 0.5, 0.45, 0.4, 0.3, 0.2, 0.1, 0.05, 0.1, 0.2];
        let mut ious = [0.0; 13];
        ious[10] = 0.5;
        let labels = [NoR, NoR, NoR, NoR, NoR, RN, R, R, R, R, RF, NoR, NoR];
        let scores = onehot(&labels);
        let s = stream(&ds, &ious);
        let fused = assemble_spans(Some(&scores), &s, 0.2, &FusionPolicy::default()).unwrap();
        assert_eq!(fused, vec![(5, 10)]);
        let rules = assemble_spans(None, &s, 0.2, &FusionPolicy::rules_only()).unwrap();
        assert_eq!(rules.len(), 1);
        assert_eq!(rules[0].1, 10);
        let only = assemble_spans(
            Some(&scores),
            &s,
            0.2,
            &FusionPolicy {
                mode: PolicyMode::ScoresOnly,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(only, vec![(5, 10)]);
    }

    #[test]
    fn fused_accepts_rf_below_threshold() {
        use FrameLabel::*;
        let ds = [0.5, 0.4, 0.3, 0.2, 0.15, 0.2];
        let ious = [0.0, 0.0, 0.0, 0.0, 0.1, 0.0];
        let scores = onehot(&[NoR, RN, R, R, RF, NoR]);
        let s = stream(&ds, &ious);
        assert_eq!(assemble_spans(Some(&scores), &s, 0.2, &FusionPolicy::default()).unwrap(), vec![(1, 4)]);
        assert!(assemble_spans(None, &s, 0.2, &FusionPolicy::rules_only()).unwrap().is_empty());
    }

    #[test]
    fn literal_offset_takes_last_contact_frame() {
        let ds = [0.5, 0.4, 0.3, 0.2, 0.2, 0.2, 0.3, 0.4];
        let ious = [0.0, 0.0, 0.0, 0.3, 0.5, 0.4, 0.0, 0.0];
        let policy = FusionPolicy {
            offset: OffsetSemantics::Literal,
            ..FusionPolicy::rules_only()
        };
        let s = stream(&ds, &ious);
        assert_eq!(assemble_spans(None, &s, 0.2, &policy).unwrap(), vec![(0, 5)]);
        assert_eq!(assemble_spans(None, &s, 0.2, &FusionPolicy::rules_only()).unwrap(), vec![(0, 3)]);
        // contact running to the end of the stream is flushed by finish()
        let s = stream(&ds[..5], &ious[..5]);
        assert_eq!(assemble_spans(None, &s, 0.2, &policy).unwrap(), vec![(0, 4)]);
    }

    #[test]
    fn missing_scores_is_an_error() {
        let s = stream(&[0.5, 0.4], &[0.0, 0.0]);
        assert!(assemble_spans(None, &s, 0.2, &FusionPolicy::default()).is_err());
        assert!(assemble_spans(Some(&onehot(&[FrameLabel::NoR])), &s, 0.2, &FusionPolicy::default()).is_err());
    }

    #[test]
    fn matching_is_one_to_one() {
        let m = match_spans(&[(10, 20), (30, 40)], &[(11, 21), (12, 19), (60, 70)], 3);
        assert_eq!(m, vec![(0, 0)]);
        assert!((event_f1(&[vec![(10, 20)]], &[vec![(10, 20), (50, 60)]], 3) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn calibration_requires_events() {
        let s = stream(&[0.5, 0.4], &[0.0, 0.0]);
        let cases = [CalibrationCase {
            stream: &s,
            scores: None,
            truth: vec![],
        }];
        assert!(calibrate_threshold(&cases, &FusionPolicy::rules_only()).is_err());
    }

    #[test]
    fn calibration_ties_pick_smallest() {
        // clean reach with a full-overlap touch: every θ recovers it
        let ds = [0.5, 0.4, 0.3, 0.2, 0.1, 0.0, 0.2, 0.3, 0.4, 0.5];
        let mut ious = [0.0; 10];
        ious[5] = 1.0;
        let s = stream(&ds, &ious);
        let cases = [CalibrationCase {
            stream: &s,
            scores: None,
            truth: vec![(0, 5)],
        }];
        let c = calibrate_threshold(&cases, &FusionPolicy::rules_only()).unwrap();
        assert_eq!(c.iou_threshold, 0.01);
        assert_eq!(c.f1, 1.0);
    }
}
