//! Labeled synthetic reach clips: one infant, two hands, one to a few
//! objects, and a single reach with ground-truth onset and offset.
//!
//! Trajectory of the reaching hand (nominal, before jitter):
//!
//! * idle at a start point `A`, optionally interrupted by an aborted approach
//!   (part of the way toward the object and back, labeled NoR);
//! * from the onset frame, a smoothstep approach from `A` to a pre-contact
//!   point `P` just outside the object, reached on the frame before offset;
//! * on the offset frame the hand box overlaps the object (IoU ≥ 0.3);
//! * from the next frame on, withdrawal from `P` to a rest point `B` and idle.
//!
//! The hand therefore touches the object only on the offset frame, so every
//! NoR frame stays below the touch level.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, LogNormal};

use crate::data::{labels_from_events, FrameDetections, FrameLabel, Hand, ReachEvent, VideoSequence};
use crate::error::{Error, Result};
use crate::geometry::{distance, iou, BoundingBox, Point2};

/// IoU above which a hand counts as touching an object.
pub const TOUCH_LEVEL: f64 = 0.05;
/// Minimum hand/object IoU on a generated offset frame.
pub const CONTACT_IOU: f64 = 0.3;

const MAX_SCENE_ATTEMPTS: usize = 500;
const MAX_PLACEMENT_ATTEMPTS: usize = 100;
/// Clearance between boxes that must not touch, pixels.
const CLEARANCE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// (width, height) in pixels.
    pub frame_size: (f64, f64),
    /// Idle frames before the onset (inclusive range).
    pub n_pre_frames: (usize, usize),
    /// Frames after the offset (inclusive range).
    pub n_post_frames: (usize, usize),
    /// Reach duration histogram: `(offset - onset, weight)`.
    pub reach_duration: Vec<(usize, f64)>,
    /// Box side lengths in pixels, sampled per side.
    pub hand_box_size: (f64, f64),
    pub object_box_size: (f64, f64),
    /// Approach path length as a fraction of the frame diagonal.
    pub approach_distance: (f64, f64),
    pub jitter_std: f64,
    pub abort_probability: f64,
    pub n_objects: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frame_size: (640.0, 480.0),
            n_pre_frames: (6, 16),
            n_post_frames: (6, 14),
            reach_duration: lognormal_durations(10f64.ln(), 0.45, 2, 40),
            hand_box_size: (40.0, 60.0),
            object_box_size: (45.0, 70.0),
            approach_distance: (0.15, 0.35),
            jitter_std: 0.8,
            abort_probability: 0.15,
            n_objects: (1, 2),
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Clips whose single-frame geometry is uninformative: idle hands rest at
    /// the same distances an approaching hand passes through, so only the
    /// direction of motion tells reach frames apart.
    pub fn ambiguous() -> Self {
        SynthConfig {
            approach_distance: (0.03, 0.4),
            abort_probability: 0.0,
            n_objects: (1, 1),
            ..Self::default()
        }
    }

    pub fn with_fixed_duration(mut self, frames: usize) -> Self {
        self.reach_duration = vec![(frames, 1.0)];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SynthConfig(m));
        let (fw, fh) = self.frame_size;
        if !(fw > 0.0 && fh > 0.0 && fw.is_finite() && fh.is_finite()) {
            return bad(format!("frame size must be positive, got {fw}x{fh}"));
        }
        for (name, (lo, hi)) in [
            ("n_pre_frames", self.n_pre_frames),
            ("n_post_frames", self.n_post_frames),
            ("n_objects", self.n_objects),
        ] {
            if lo > hi {
                return bad(format!("{name} range is empty: {lo}..={hi}"));
            }
        }
        if self.n_post_frames.0 == 0 {
            return bad("at least one frame must follow the offset".into());
        }
        if self.n_objects.0 == 0 {
            return bad("at least one object is required".into());
        }
        for (name, (lo, hi)) in [
            ("hand_box_size", self.hand_box_size),
            ("object_box_size", self.object_box_size),
            ("approach_distance", self.approach_distance),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name} range must be positive and non-empty: {lo}..{hi}"));
            }
        }
        if self.approach_distance.1 >= 1.0 {
            return bad("approach_distance is a fraction of the diagonal and must be < 1".into());
        }
        let need = self.hand_box_size.1 + self.object_box_size.1;
        if need >= fw.min(fh) {
            return bad(format!(
                "hand ({}) and object ({}) boxes cannot be placed side by side inside a {fw}x{fh} frame",
                self.hand_box_size.1, self.object_box_size.1
            ));
        }
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return bad(format!("jitter_std must be finite and >= 0, got {}", self.jitter_std));
        }
        if !(0.0..=1.0).contains(&self.abort_probability) {
            return bad(format!("abort_probability must lie in [0,1], got {}", self.abort_probability));
        }
        if self.reach_duration.is_empty() {
            return bad("reach_duration histogram is empty".into());
        }
        if let Some((d, _)) = self.reach_duration.iter().find(|(d, _)| *d < 2) {
            return bad(format!("reach durations must be >= 2 frames, histogram has {d}"));
        }
        if self.reach_duration.iter().any(|(_, w)| !(*w >= 0.0 && w.is_finite()))
            || self.reach_duration.iter().all(|(_, w)| *w == 0.0)
        {
            return bad("reach_duration weights must be finite, >= 0 and not all zero".into());
        }
        Ok(())
    }

    /// Normalized duration probabilities keyed by frames.
    pub fn duration_pmf(&self) -> BTreeMap<usize, f64> {
        let total: f64 = self.reach_duration.iter().map(|(_, w)| w).sum();
        let mut pmf = BTreeMap::new();
        for (d, w) in &self.reach_duration {
            *pmf.entry(*d).or_insert(0.0) += w / total;
        }
        pmf
    }
}

/// Log-normal density integrated over unit bins `[d - 0.5, d + 0.5)` for
/// `d` in `lo..=hi`, renormalized to the support.
pub fn lognormal_durations(mu: f64, sigma: f64, lo: usize, hi: usize) -> Vec<(usize, f64)> {
    let dist = LogNormal::new(mu, sigma).expect("valid log-normal parameters");
    let raw: Vec<(usize, f64)> = (lo..=hi)
        .map(|d| (d, dist.cdf(d as f64 + 0.5) - dist.cdf(d as f64 - 0.5)))
        .collect();
    let total: f64 = raw.iter().map(|(_, p)| p).sum();
    raw.into_iter().map(|(d, p)| (d, p / total)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSample {
    pub sequence: VideoSequence,
    pub truth_events: Vec<ReachEvent>,
    pub truth_labels: BTreeMap<Hand, Vec<FrameLabel>>,
    /// Whether an aborted approach precedes the reach.
    pub aborted: bool,
}

impl SynthSample {
    pub fn reach_duration(&self) -> usize {
        self.truth_events[0].duration()
    }
}

/// Per-sample seed: splitmix64 over `(master_seed, index)`.
pub fn sample_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn lerp(a: Point2, b: Point2, s: f64) -> Point2 {
    Point2::new(a.x + (b.x - a.x) * s, a.y + (b.y - a.y) * s)
}

fn along(o: Point2, angle: f64, r: f64) -> Point2 {
    Point2::new(o.x + r * angle.cos(), o.y + r * angle.sin())
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn box_at(c: Point2, size: (f64, f64)) -> BoundingBox {
    BoundingBox::centered(c, size.0, size.1).expect("finite center, positive size")
}

/// Half diagonal: any two boxes whose centers are farther apart than the sum
/// of their radii are disjoint.
fn radius(size: (f64, f64)) -> f64 {
    0.5 * size.0.hypot(size.1)
}

struct Frame {
    w: f64,
    h: f64,
}

impl Frame {
    fn fits(&self, c: Point2, size: (f64, f64)) -> bool {
        c.x - size.0 / 2.0 >= 0.0 && c.x + size.0 / 2.0 <= self.w && c.y - size.1 / 2.0 >= 0.0 && c.y + size.1 / 2.0 <= self.h
    }

    fn sample(&self, rng: &mut ChaCha8Rng, size: (f64, f64)) -> Point2 {
        Point2::new(
            rng.random_range(size.0 / 2.0..=self.w - size.0 / 2.0),
            rng.random_range(size.1 / 2.0..=self.h - size.1 / 2.0),
        )
    }
}

/// One clip from `cfg` using `seed` for every random choice.
pub fn generate_sequence(cfg: &SynthConfig, seed: u64) -> Result<SynthSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_SCENE_ATTEMPTS {
        if let Some(sample) = try_scene(cfg, &mut rng)? {
            return Ok(sample);
        }
    }
    Err(Error::SynthConfig(format!(
        "no valid reach scene found in {MAX_SCENE_ATTEMPTS} attempts; box sizes or approach distances too large for the frame"
    )))
}

fn try_scene(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Option<SynthSample>> {
    let frame = Frame {
        w: cfg.frame_size.0,
        h: cfg.frame_size.1,
    };
    let diag = frame.w.hypot(frame.h);
    let size = |rng: &mut ChaCha8Rng, r| (uniform(rng, r), uniform(rng, r));
    let hand_size = size(rng, cfg.hand_box_size);
    let other_size = size(rng, cfg.hand_box_size);
    let obj_size = size(rng, cfg.object_box_size);
    let reach_hand = if rng.random_bool(0.5) { Hand::Left } else { Hand::Right };
    let n_objects = rng.random_range(cfg.n_objects.0..=cfg.n_objects.1);
    let target = rng.random_range(0..n_objects);

    let o = frame.sample(rng, obj_size);
    let obj_box = box_at(o, obj_size);
    let heading = rng.random_range(0.0..2.0 * PI);
    let rho_p = radius(hand_size) + radius(obj_size) + CLEARANCE;
    let rho_a = rho_p + uniform(rng, cfg.approach_distance) * diag;
    let a = along(o, heading, rho_a);
    let p = along(o, heading, rho_p);
    // contact point: as far out as still gives a solid overlap
    let half = 0.5 * obj_size.0.min(obj_size.1);
    let Some(g) = (0..=10)
        .rev()
        .map(|k| along(o, heading, half * k as f64 / 10.0))
        .find(|g| iou(&box_at(*g, hand_size), &obj_box) >= CONTACT_IOU + 0.05)
    else {
        return Ok(None);
    };
    let rest_heading = heading + rng.random_range(-PI / 3.0..=PI / 3.0);
    let rho_b = (rho_p + uniform(rng, cfg.approach_distance) * diag).max(2.0 * rho_p);
    let b = along(o, rest_heading, rho_b);
    if !frame.fits(a, hand_size) || !frame.fits(b, hand_size) {
        return Ok(None);
    }

    // timeline of nominal reaching-hand positions
    let mut path: Vec<Point2> = Vec::new();
    let idle = |path: &mut Vec<Point2>, at: Point2, n: usize| path.extend(std::iter::repeat_n(at, n));
    let n_pre = rng.random_range(cfg.n_pre_frames.0..=cfg.n_pre_frames.1);
    let aborted = rng.random_bool(cfg.abort_probability);
    if aborted {
        idle(&mut path, a, n_pre);
        let turn = lerp(a, p, rng.random_range(0.3..=0.6));
        let fwd = rng.random_range(3..=6usize);
        let back = rng.random_range(4..=6usize);
        path.extend((1..=fwd).map(|k| lerp(a, turn, smoothstep(k as f64 / fwd as f64))));
        path.extend((1..=back).map(|k| lerp(turn, a, smoothstep(k as f64 / back as f64))));
        let gap = rng.random_range(3..=6usize);
        idle(&mut path, a, gap);
    } else {
        idle(&mut path, a, n_pre.max(1));
    }
    let onset = path.len();
    let weights: Vec<f64> = cfg.reach_duration.iter().map(|(_, w)| *w).collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::SynthConfig(e.to_string()))?;
    let duration = cfg.reach_duration[pick.sample(rng)].0;
    path.extend((0..duration).map(|k| lerp(a, p, smoothstep((k + 1) as f64 / duration as f64))));
    let offset = path.len();
    path.push(g);
    let n_post = rng.random_range(cfg.n_post_frames.0..=cfg.n_post_frames.1);
    let retract = rng.random_range(4..=8usize).min(n_post);
    path.extend((1..=n_post).map(|k| match retract {
        0 | 1 => p,
        r if k <= r => lerp(p, b, smoothstep((k - 1) as f64 / (r - 1) as f64)),
        _ => b,
    }));
    let n_frames = path.len();

    // other hand rests clear of every object
    let other = (0..MAX_PLACEMENT_ATTEMPTS)
        .map(|_| frame.sample(rng, other_size))
        .find(|h| distance(*h, o) > radius(other_size) + radius(obj_size) + CLEARANCE);
    let Some(other) = other else { return Ok(None) };

    // distractors: farther than the target from every point of the reach path
    let mut objects: Vec<(String, BoundingBox)> = Vec::new();
    let mut centers: Vec<(Point2, (f64, f64))> = vec![(o, obj_size)];
    for k in 0..n_objects {
        if k == target {
            continue;
        }
        let d_size = size(rng, cfg.object_box_size);
        let clear = |q: Point2| {
            let margin = 0.02 * diag;
            path.iter().all(|pt| {
                distance(*pt, q) > distance(*pt, o) + margin && distance(*pt, q) > radius(hand_size) + radius(d_size) + CLEARANCE
            }) && distance(other, q) > radius(other_size) + radius(d_size) + CLEARANCE
                && centers.iter().all(|(c, s)| distance(*c, q) > radius(*s) + radius(d_size) + CLEARANCE)
        };
        let Some(q) = (0..MAX_PLACEMENT_ATTEMPTS).map(|_| frame.sample(rng, d_size)).find(|q| clear(*q)) else {
            return Ok(None);
        };
        centers.push((q, d_size));
        objects.push((format!("obj-{}", k + 1), box_at(q, d_size)));
    }
    let target_id = format!("obj-{}", target + 1);
    objects.push((target_id.clone(), obj_box));
    objects.sort_by(|x, y| x.0.cmp(&y.0));

    let jitter = Normal::new(0.0, cfg.jitter_std).map_err(|e| Error::SynthConfig(e.to_string()))?;
    let shake = |c: Point2, rng: &mut ChaCha8Rng| {
        Point2::new(c.x + jitter.sample(rng), c.y + jitter.sample(rng))
    };
    let infant = box_at(Point2::new(frame.w / 2.0, frame.h / 2.0), (frame.w * 0.35, frame.h * 0.5));
    let mut frames = Vec::with_capacity(n_frames);
    for (i, nominal) in path.iter().enumerate() {
        let reach_box = box_at(shake(*nominal, rng), hand_size);
        let other_box = box_at(shake(other, rng), other_size);
        let (left, right) = match reach_hand {
            Hand::Left => (reach_box, other_box),
            Hand::Right => (other_box, reach_box),
        };
        frames.push(FrameDetections {
            frame_index: i,
            infant: Some(infant),
            left_hand: Some(left),
            right_hand: Some(right),
            objects: objects.clone(),
            frame_size: (frame.w, frame.h),
        });
    }

    let event = ReachEvent::new(reach_hand, target_id.clone(), onset, offset)?;
    let mut truth_labels = BTreeMap::new();
    for hand in Hand::BOTH {
        truth_labels.insert(hand, labels_from_events(std::slice::from_ref(&event), n_frames, hand)?);
    }

    // touch semantics must hold after jitter
    let labels = &truth_labels[&reach_hand];
    for (i, f) in frames.iter().enumerate() {
        let hb = f.hand(reach_hand).unwrap();
        for (id, ob) in &f.objects {
            let v = iou(hb, ob);
            let ok = if i == offset && *id == target_id {
                v >= CONTACT_IOU
            } else {
                labels[i] != FrameLabel::NoR || v <= TOUCH_LEVEL
            };
            if !ok || (*id != target_id && v > TOUCH_LEVEL) {
                return Ok(None);
            }
        }
    }

    Ok(Some(SynthSample {
        sequence: VideoSequence {
            video_id: "synth".into(),
            frames,
        },
        truth_events: vec![event],
        truth_labels,
        aborted,
    }))
}

/// `n` clips named `synth-0000`, `synth-0001`, … with seeds derived from
/// `master_seed`.
pub fn generate_dataset(cfg: &SynthConfig, n: usize, master_seed: u64) -> Result<Vec<SynthSample>> {
    if n == 0 {
        return Err(Error::SynthConfig("dataset size must be at least 1".into()));
    }
    (0..n)
        .map(|i| {
            let mut s = generate_sequence(cfg, sample_seed(master_seed, i as u64))?;
            s.sequence.video_id = format!("synth-{i:04}");
            Ok(s)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GoodnessOfFit {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square of observed reach durations against the configured
/// histogram. Adjacent bins are pooled until each expects at least 5.
pub fn duration_chi_square(cfg: &SynthConfig, samples: &[SynthSample]) -> Result<GoodnessOfFit> {
    let n = samples.len() as f64;
    let pmf = cfg.duration_pmf();
    let mut observed: BTreeMap<usize, f64> = BTreeMap::new();
    for s in samples {
        *observed.entry(s.reach_duration()).or_default() += 1.0;
    }
    if let Some(d) = observed.keys().find(|d| !pmf.contains_key(d)) {
        return Err(Error::SynthConfig(format!("duration {d} lies outside the histogram support")));
    }
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut e_acc, mut o_acc) = (0.0, 0.0);
    for (d, p) in &pmf {
        e_acc += p * n;
        o_acc += observed.get(d).copied().unwrap_or(0.0);
        if e_acc >= 5.0 {
            bins.push((o_acc, e_acc));
            e_acc = 0.0;
            o_acc = 0.0;
        }
    }
    match bins.last_mut() {
        Some(last) => {
            last.0 += o_acc;
            last.1 += e_acc;
        }
        None => bins.push((o_acc, e_acc)),
    }
    if bins.len() < 2 {
        return Err(Error::SynthConfig("too few samples for a chi-square test".into()));
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = bins.len() - 1;
    let p_value = 1.0 - ChiSquared::new(dof as f64).expect("dof >= 1").cdf(statistic);
    Ok(GoodnessOfFit { statistic, dof, p_value })
}
