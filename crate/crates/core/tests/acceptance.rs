//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

use reach_rec::data::{
    events_from_labels, labels_from_events, parse_annotations, parse_detections, write_annotations, write_detections,
    Annotation, AnnotationSet, Hand, ReachEvent, VideoSequence,
};
use reach_rec::events::{
    assemble_spans, calibrate_threshold, match_spans, threshold_grid, CalibrationCase, FusionPolicy, MATCH_TOLERANCE,
};
use reach_rec::features::{FeatureStream, FeatureVector};
use reach_rec::geometry::{iou, BoundingBox};
use reach_rec::nn::{
    load_model, loss, save_model, InputNorm, LstmConfig, LstmParams, MlpConfig, MlpParams, Model, Network, ParamBlocks,
};
use reach_rec::synth::{generate_dataset, SynthConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn bin(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_reach-rec"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`reach-rec {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

// ---------------------------------------------------------------------------

fn parameter_identity() -> Outcome {
    let n = LstmConfig::new(3, 15, 4).count_params();
    ensure!(n == 1204, "count_params = {n}");
    let live = LstmParams::init(LstmConfig::default(), 0).unwrap().n_params();
    ensure!(live == 1204, "initialized network holds {live} scalars");
    let dir = tempfile::tempdir().unwrap();
    let (d, m) = (dir.path().join("d"), dir.path().join("m"));
    bin(&["gen", "--n", "8", "--seed", "1", "--out", p(&d)])?;
    let stdout = bin(&["train", "--model", "babynet", "--data", p(&d), "--out", p(&m), "--epochs", "1"])?;
    ensure!(stdout.contains("(1204 trainable parameters)"), "train output: {stdout}");
    Ok(format!("count_params(3,15,4) = {n}; printed by train"))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for instance in 0..100 {
        let mut net = LstmParams::init(LstmConfig::default(), rng.random()).unwrap();
        for (_, block) in net.blocks_mut() {
            for v in block.iter_mut() {
                *v += 0.3 * normal(&mut rng);
            }
        }
        let x0: Vec<f64> = (0..3).map(|_| 1.5 * normal(&mut rng)).collect();
        let x1: Vec<f64> = (0..3).map(|_| 1.5 * normal(&mut rng)).collect();
        let xs: [&[f64]; 2] = [&x0, &x1];
        let target = rng.random_range(0..4);
        let weight = rng.random_range(0.25..8.0);
        let (_, grad) = net.loss_grad(&xs, target, weight).unwrap();
        let analytic = grad.flat();
        let mut probe = net.clone();
        let mut k = 0;
        let n_blocks = probe.blocks().len();
        for b in 0..n_blocks {
            let len = probe.blocks()[b].1.len();
            for i in 0..len {
                let orig = probe.blocks()[b].1[i];
                let at = |v: f64, probe: &mut LstmParams| {
                    probe.blocks_mut()[b].1[i] = v;
                    loss(&probe.logits(&xs).unwrap(), target, weight)
                };
                let fd = (at(orig + eps, &mut probe) - at(orig - eps, &mut probe)) / (2.0 * eps);
                at(orig, &mut probe);
                let an = analytic[k];
                let err = (fd - an).abs();
                let tol = (1e-4 * fd.abs().max(an.abs())).max(1e-8);
                ensure!(
                    err <= tol,
                    "instance {instance}, {} [{i}]: analytic {an:e}, finite difference {fd:e}",
                    probe.blocks()[b].0
                );
                worst = worst.max(err / tol);
                k += 1;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} coordinates, worst error/tolerance {worst:.3}"))
}

/// Independent statement of the distance/IoU rules: split the tape at the
/// invalidation frames, then within each interval the onset is the interval
/// start, the approach begins at the first decrease and the offset is the
/// first frame from there on with IoU ≥ θ at least `min_duration` frames after
/// the onset.
fn reference_spans(d: &[f64], ious: &[f64], theta: f64, min_duration: usize) -> Vec<(usize, usize)> {
    let n = d.len();
    let dec: Vec<bool> = (0..n).map(|j| j > 0 && d[j] - d[j - 1] < 0.0).collect();
    let mut starts = vec![0];
    let mut run = 0;
    for j in 1..n {
        run = if dec[j] { 0 } else { run + 1 };
        if run == 4 {
            starts.push(j);
            run = 0;
        }
    }
    starts.push(n);
    let mut out = Vec::new();
    for w in starts.windows(2) {
        let (s, e) = (w[0], w[1]);
        if let Some(a) = (s + 1..e).find(|&j| dec[j]) {
            if let Some(t) = (a..e).find(|&j| ious[j] >= theta && j - s >= min_duration) {
                out.push((s, t));
            }
        }
    }
    out
}

fn stream_of(d: &[f64], ious: &[f64]) -> FeatureStream {
    let n = d.len();
    FeatureStream {
        hand: Hand::Left,
        frame_indices: (0..n).collect(),
        vectors: (0..n)
            .map(|j| FeatureVector {
                d_norm: d[j],
                delta_d: if j == 0 { 0.0 } else { d[j] - d[j - 1] },
                iou: ious[j],
            })
            .collect(),
        valid: vec![true; n],
        targets: vec![Some("o".into()); n],
    }
}

fn state_machine_oracle() -> Outcome {
    let theta = 0.2;
    let policy = FusionPolicy::rules_only();
    let mut tapes = 0usize;
    let mut with_events = 0usize;
    for len in 1..=8u32 {
        for code in 0..6usize.pow(len) {
            let (mut d, mut ious) = (Vec::with_capacity(8), Vec::with_capacity(8));
            let mut c = code;
            let mut level = 1.0;
            for j in 0..len as usize {
                let sym = c % 6;
                c /= 6;
                if j > 0 {
                    level += [-0.01, 0.0, 0.01][sym / 2];
                }
                d.push(level);
                ious.push(if sym % 2 == 1 { 0.5 } else { 0.0 });
            }
            let got = assemble_spans(None, &stream_of(&d, &ious), theta, &policy).map_err(|e| e.to_string())?;
            let want = reference_spans(&d, &ious, theta, policy.min_duration);
            ensure!(got == want, "tape d={d:?} iou={ious:?}: assembler {got:?}, reference {want:?}");
            tapes += 1;
            with_events += usize::from(!got.is_empty());
        }
    }
    Ok(format!("{tapes} tapes (all lengths 1..=8, full 6^8 at length 8) agree; {with_events} contain events"))
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let x = rng.random_range(-50.0..150.0);
    let y = rng.random_range(-50.0..150.0);
    let w = if rng.random_bool(0.02) { 0.0 } else { rng.random_range(0.5..100.0) };
    let h = rng.random_range(0.5..100.0);
    BoundingBox::new(x, y, w, h).unwrap()
}

/// Stratified Monte-Carlo IoU: one uniform point per cell of a `k × k` grid
/// over the smaller box estimates the intersection area.
fn monte_carlo_iou(a: &BoundingBox, b: &BoundingBox, k: usize, rng: &mut ChaCha8Rng) -> f64 {
    let (small, other) = if a.area() <= b.area() { (a, b) } else { (b, a) };
    if small.area() == 0.0 {
        return 0.0;
    }
    let (cw, ch) = (small.w() / k as f64, small.h() / k as f64);
    let mut hits = 0usize;
    for i in 0..k {
        for j in 0..k {
            let px = small.x() + (i as f64 + rng.random::<f64>()) * cw;
            let py = small.y() + (j as f64 + rng.random::<f64>()) * ch;
            if px >= other.x() && px < other.right() && py >= other.y() && py < other.bottom() {
                hits += 1;
            }
        }
    }
    let inter = small.area() * hits as f64 / (k * k) as f64;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn geometry_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_mc: f64 = 0.0;
    for pair in 0..10_000 {
        let a = random_box(&mut rng);
        let b = match rng.random_range(0..10) {
            0 => a,
            1 => BoundingBox::new(a.x() + 0.25 * a.w(), a.y() + 0.25 * a.h(), 0.5 * a.w(), 0.5 * a.h()).unwrap(),
            _ => random_box(&mut rng),
        };
        let v = iou(&a, &b);
        ensure!((0.0..=1.0).contains(&v), "pair {pair}: iou {v} out of [0,1]");
        ensure!(v == iou(&b, &a), "pair {pair}: asymmetric");
        if a.area() > 0.0 {
            ensure!((iou(&a, &a) - 1.0).abs() <= 1e-12, "pair {pair}: iou(a,a) = {}", iou(&a, &a));
        }
        let (dx, dy) = (rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3));
        let moved = iou(&a.translate(dx, dy), &b.translate(dx, dy));
        ensure!((moved - v).abs() <= 1e-9, "pair {pair}: translation changed iou {v} -> {moved}");
        let mc = monte_carlo_iou(&a, &b, 100, &mut rng);
        worst_mc = worst_mc.max((mc - v).abs());
        ensure!((mc - v).abs() <= 0.01, "pair {pair}: iou {v}, Monte-Carlo {mc}");
    }
    Ok(format!("10000 pairs; worst Monte-Carlo deviation {worst_mc:.4}"))
}

struct Pipeline {
    _dir: tempfile::TempDir,
    model: Vec<u8>,
    report: Vec<u8>,
    data: Vec<u8>,
}

fn pipeline() -> Result<Pipeline, String> {
    let dir = tempfile::tempdir().unwrap();
    let (d, m) = (dir.path().join("d"), dir.path().join("m"));
    bin(&["gen", "--n", "200", "--seed", "7", "--out", p(&d)])?;
    bin(&["train", "--model", "babynet", "--data", p(&d), "--out", p(&m)])?;
    bin(&["eval", "--data", p(&d), "--model-dir", p(&m)])?;
    Ok(Pipeline {
        model: std::fs::read(m.join("model.json")).unwrap(),
        report: std::fs::read(m.join("report.json")).unwrap(),
        data: std::fs::read(d.join("detections.jsonl")).unwrap(),
        _dir: dir,
    })
}

fn end_to_end() -> Outcome {
    let run = pipeline()?;
    let report: Value = serde_json::from_slice(&run.report).unwrap();
    let acc = report["frame_accuracy"].as_f64().unwrap();
    let ev = &report["events"];
    let within = ev["within_tolerance"].as_f64().unwrap_or(0.0);
    let summary = format!(
        "frame accuracy {acc:.4}; {:.1}% of {} test events within (|onset| ≤ 2, |offset| ≤ 1)",
        100.0 * within,
        ev["n_truth"]
    );
    ensure!(acc >= 0.90, "{summary}");
    ensure!(within >= 0.90, "{summary}");
    Ok(summary)
}

fn baseline_ordering() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    bin(&["gen", "--n", "200", "--seed", "11", "--preset", "ambiguous", "--out", p(&d)])?;
    let mut acc = Vec::new();
    for model in ["babynet", "mlp"] {
        let m = dir.path().join(model);
        bin(&["train", "--model", model, "--data", p(&d), "--out", p(&m), "--seed", "3"])?;
        bin(&["eval", "--data", p(&d), "--model-dir", p(&m)])?;
        acc.push(read_json(&m.join("report.json"))["frame_accuracy"].as_f64().unwrap());
    }
    let gap = 100.0 * (acc[0] - acc[1]);
    let summary = format!(
        "BabyNet {:.2}% vs MLP {:.2}%: +{gap:.2} points",
        100.0 * acc[0],
        100.0 * acc[1]
    );
    ensure!(gap >= 5.0, "{summary}");
    Ok(summary)
}

fn determinism() -> Outcome {
    let a = pipeline()?;
    let b = pipeline()?;
    ensure!(a.data == b.data, "detections.jsonl differs between runs");
    ensure!(a.model == b.model, "model.json differs between runs");
    ensure!(a.report == b.report, "report.json differs between runs");
    Ok(format!(
        "model.json ({} bytes) and report.json ({} bytes) byte-identical",
        a.model.len(),
        a.report.len()
    ))
}

fn random_events(rng: &mut ChaCha8Rng, n_frames: usize) -> Vec<ReachEvent> {
    let mut events = Vec::new();
    for hand in Hand::BOTH {
        let mut t = rng.random_range(0..4);
        while t + 2 < n_frames {
            if rng.random_bool(0.4) {
                let len = rng.random_range(1..=(n_frames - t - 1).min(15));
                events.push(ReachEvent::new(hand, "o", t, t + len).unwrap());
                t += len + 1 + rng.random_range(0..4);
            } else {
                t += rng.random_range(1..6);
            }
        }
    }
    events
}

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut n_events = 0;
    for _ in 0..1000 {
        let n = rng.random_range(3..80);
        let events = random_events(&mut rng, n);
        n_events += events.len();
        for hand in Hand::BOTH {
            let labels = labels_from_events(&events, n, hand).map_err(|e| e.to_string())?;
            let decoded = events_from_labels(&labels);
            let want: Vec<(usize, usize)> = events
                .iter()
                .filter(|e| e.hand == hand)
                .map(|e| (e.onset_frame, e.offset_frame))
                .collect();
            ensure!(decoded.spans == want, "events {want:?} decoded as {:?}", decoded.spans);
            ensure!(decoded.warnings.is_empty(), "warnings {:?}", decoded.warnings);
        }
    }

    let models = [
        Model::BabyNet {
            params: LstmParams::init(LstmConfig::default(), 81).unwrap(),
            norm: InputNorm {
                mean: vec![0.31, -0.0004, 0.02],
                std: vec![0.12, 0.0071, 0.09],
            },
        },
        Model::Mlp {
            params: MlpParams::init(&MlpConfig::default(), 82).unwrap(),
            norm: InputNorm {
                mean: vec![0.3, 0.05],
                std: vec![0.1, 0.2],
            },
        },
    ];
    for m in &models {
        let bytes = save_model(m).unwrap();
        let back = load_model(&bytes).map_err(|e| e.to_string())?;
        ensure!(&back == m, "model changed across save/load");
        ensure!(save_model(&back).unwrap() == bytes, "re-saved model bytes differ");
    }

    let data = generate_dataset(&SynthConfig::default(), 20, 5).unwrap();
    let seqs: Vec<VideoSequence> = data.iter().map(|s| s.sequence.clone()).collect();
    let mut det = Vec::new();
    write_detections(&mut det, &seqs).unwrap();
    let parsed = parse_detections(det.as_slice()).map_err(|e| e.to_string())?;
    ensure!(parsed == seqs, "detections changed across write/parse");
    let mut det2 = Vec::new();
    write_detections(&mut det2, &parsed).unwrap();
    ensure!(det == det2, "detections bytes differ after a round trip");

    let mut ann = AnnotationSet::new();
    for s in &data {
        ann.insert(
            s.sequence.video_id.clone(),
            s.truth_events
                .iter()
                .enumerate()
                .map(|(i, e)| Annotation {
                    reach_id: i as u32 + 1,
                    event: e.clone(),
                })
                .collect(),
        );
    }
    let mut csv = Vec::new();
    write_annotations(&mut csv, &ann).unwrap();
    let parsed = parse_annotations(csv.as_slice()).map_err(|e| e.to_string())?;
    ensure!(parsed == ann, "annotations changed across write/parse");
    Ok(format!(
        "1000 event sets ({n_events} events) invert; 2 models bit-exact; 20 clips of detections/annotations identical"
    ))
}

/// Validation clips for calibration: idle frames at constant distance, an
/// approach whose third frame carries IoU noise of exactly 0.02, a touch with
/// IoU in [0.3, 0.8] (exactly 0.3 for the first clip) and a withdrawal.
fn calibration_clips(rng: &mut ChaCha8Rng) -> Vec<(Vec<f64>, Vec<f64>, (usize, usize))> {
    (0..25)
        .map(|c| {
            let noise = |rng: &mut ChaCha8Rng| rng.random_range(0.0..=0.02);
            let (mut d, mut ious) = (Vec::new(), Vec::new());
            let pre = 4 * rng.random_range(1..4) + 1;
            for _ in 0..pre {
                d.push(0.5);
                ious.push(noise(rng));
            }
            let onset = d.len();
            let duration = rng.random_range(6..=15);
            for k in 0..duration {
                d.push(0.5 - 0.03 * (k + 1) as f64);
                ious.push(if k == 2 { 0.02 } else { noise(rng) });
            }
            let offset = d.len();
            d.push(0.5 - 0.03 * (duration + 1) as f64);
            ious.push(if c == 0 { 0.3 } else { rng.random_range(0.3..=0.8) });
            for k in 0..rng.random_range(6..12) {
                d.push(d[offset] + 0.04 * (k + 1) as f64);
                ious.push(noise(rng));
            }
            (d, ious, (onset, offset))
        })
        .collect()
}

fn threshold_calibration() -> Outcome {
    let clips = calibration_clips(&mut ChaCha8Rng::seed_from_u64(9));
    let policy = FusionPolicy::rules_only();
    let streams: Vec<FeatureStream> = clips.iter().map(|(d, i, _)| stream_of(d, i)).collect();
    let cases: Vec<CalibrationCase<'_>> = streams
        .iter()
        .zip(&clips)
        .map(|(s, c)| CalibrationCase {
            stream: s,
            scores: None,
            truth: vec![c.2],
        })
        .collect();
    let got = calibrate_threshold(&cases, &policy).map_err(|e| e.to_string())?;

    // brute-force sweep with the reference rules
    let mut sweep = Vec::new();
    for theta in threshold_grid() {
        let (mut tp, mut n_pred) = (0, 0);
        for (d, i, truth) in &clips {
            let pred = reference_spans(d, i, theta, policy.min_duration);
            n_pred += pred.len();
            tp += match_spans(&[*truth], &pred, MATCH_TOLERANCE).len();
        }
        sweep.push((theta, 2.0 * tp as f64 / (clips.len() + n_pred) as f64));
    }
    let best = sweep.iter().map(|s| s.1).fold(f64::MIN, f64::max);
    let oracle = sweep.iter().find(|s| s.1 == best).unwrap();
    let optimal: Vec<f64> = sweep.iter().filter(|s| s.1 == 1.0).map(|s| s.0).collect();
    ensure!(
        got.iou_threshold > 0.02 && got.iou_threshold <= 0.3,
        "θ = {} outside (0.02, 0.3]",
        got.iou_threshold
    );
    ensure!(got.f1 == 1.0, "F1 at θ = {} is {}", got.iou_threshold, got.f1);
    ensure!(
        got.iou_threshold == oracle.0 && got.f1 == oracle.1,
        "calibration {got:?} vs sweep oracle {oracle:?}"
    );
    ensure!(
        optimal.first() == Some(&0.03) && optimal.last() == Some(&0.3) && optimal.len() == 28,
        "sweep optimum set {optimal:?}"
    );
    Ok(format!(
        "θ = {:.2}, F1 = {}; sweep optimum is exactly θ ∈ [0.03, 0.30]",
        got.iou_threshold, got.f1
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("parameter identity", parameter_identity),
        ("gradient correctness", gradient_correctness),
        ("state-machine oracle equivalence", state_machine_oracle),
        ("geometry properties", geometry_properties),
        ("end-to-end synthetic training", end_to_end),
        ("baseline ordering", baseline_ordering),
        ("determinism", determinism),
        ("round trips", round_trips),
        ("threshold calibration", threshold_calibration),
    ];
    let only: Option<usize> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {}. {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {}. {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
