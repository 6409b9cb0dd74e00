//! `reach-rec` subcommands: `gen`, `train`, `eval`, `infer`.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 internal failure.
//! Every output directory gets a manifest with the resolved configuration so
//! a run can be repeated byte for byte.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{
    events_of, parse_annotations, parse_detections, split_dataset, validate_annotations, write_annotations,
    write_detections, Annotation, AnnotationSet, Hand, VideoSequence,
};
use crate::error::Error;
use crate::events::{assemble_events, calibrate_threshold, CalibrationCase, FusionPolicy, OffsetSemantics, PolicyMode};
use crate::features::{feature_stream, labeled_stream, LabeledStream, Pairing};
use crate::metrics::{evaluate, EvalClip};
use crate::nn::{load_model, predict, save_model, ModelKind, TrainData, TrainHyper, FORMAT_VERSION};
use crate::synth::{generate_dataset, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Path { path: PathBuf, source: Error },
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        let of = |e: &Error| match e {
            Error::SynthConfig(_) | Error::ModelConfig(_) | Error::Split(_) => EXIT_USAGE,
            Error::NonFiniteGradient(_) => EXIT_INTERNAL,
            _ => EXIT_DATA,
        };
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Path { source, .. } => of(source),
            CliError::Run(e) => of(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "reach-rec", version, about = "Infant reach onset/offset recognition from bounding-box tracks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset.
    Gen(GenArgs),
    /// Train a frame classifier and calibrate the IoU threshold.
    Train(TrainArgs),
    /// Evaluate a trained model on its held-out test split.
    Eval(EvalArgs),
    /// Detect reach events in new detections.
    Infer(InferArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Default,
    Ambiguous,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    #[arg(long)]
    pub abort_probability: Option<f64>,
    #[arg(long)]
    pub jitter_std: Option<f64>,
    #[arg(long, value_parser = parse_range)]
    pub n_objects: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Babynet,
    Mlp,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Babynet => ModelKind::BabyNet,
            ModelArg::Mlp => ModelKind::Mlp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    #[value(name = "rules_only", alias = "rules-only")]
    RulesOnly,
    #[value(name = "scores_only", alias = "scores-only")]
    ScoresOnly,
    Fused,
}

impl From<PolicyArg> for PolicyMode {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::RulesOnly => PolicyMode::RulesOnly,
            PolicyArg::ScoresOnly => PolicyMode::ScoresOnly,
            PolicyArg::Fused => PolicyMode::Fused,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OffsetArg {
    Touch,
    Literal,
}

impl From<OffsetArg> for OffsetSemantics {
    fn from(o: OffsetArg) -> Self {
        match o {
            OffsetArg::Touch => OffsetSemantics::Touch,
            OffsetArg::Literal => OffsetSemantics::Literal,
        }
    }
}

/// Event-assembly flags shared by train, eval and infer. Unset values fall
/// back to the calibration recorded at train time.
#[derive(Debug, Args, Clone)]
pub struct PolicyArgs {
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    #[arg(long, value_enum)]
    pub offset_semantics: Option<OffsetArg>,
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    #[arg(long)]
    pub min_duration: Option<usize>,
    #[arg(long)]
    pub score_margin: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Babynet)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// LSTM window length (frames); the MLP always uses 1.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, default_value = "0.6,0.15,0.25", value_parser = parse_split)]
    pub split: (f64, f64, f64),
    #[command(flatten)]
    pub policy: PolicyArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model_dir: PathBuf,
    /// Directory for report.json; defaults to the model directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub policy: PolicyArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Directory holding detections.jsonl, or the file itself.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub policy: PolicyArgs,
}

fn parse_split(s: &str) -> std::result::Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(format!("expected three comma-separated ratios, got {}", parts.len())),
    }
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').unwrap_or((s, s));
    let p = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}"));
    Ok((p(a)?, p(b)?))
}

// ---------------------------------------------------------------------------
// file helpers

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const SYNTH_MANIFEST_FILE: &str = "synth-manifest.json";
pub const MODEL_FILE: &str = "model.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const HISTORY_FILE: &str = "history.json";
pub const SPLIT_FILE: &str = "split.json";
pub const RUN_MANIFEST_FILE: &str = "run-manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const EVENTS_FILE: &str = "events.jsonl";

fn at(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |source| CliError::Path {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| at(dir)(e.into()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| at(path)(e.into()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| at(path)(e.into()))?;
    serde_json::from_slice(&bytes).map_err(|e| at(path)(e.into()))
}

fn read_detections(path: &Path) -> CliResult<Vec<VideoSequence>> {
    let f = File::open(path).map_err(|e| at(path)(e.into()))?;
    parse_detections(BufReader::new(f)).map_err(at(path))
}

fn read_annotations(path: &Path) -> CliResult<AnnotationSet> {
    let f = File::open(path).map_err(|e| at(path)(e.into()))?;
    parse_annotations(BufReader::new(f)).map_err(at(path))
}

fn read_dataset(dir: &Path) -> CliResult<(Vec<VideoSequence>, AnnotationSet)> {
    let seqs = read_detections(&dir.join(DETECTIONS_FILE))?;
    let ann = read_annotations(&dir.join(ANNOTATIONS_FILE))?;
    for seq in &seqs {
        let report = validate_annotations(seq, &events_of(&ann, &seq.video_id), None);
        for flag in &report.flags {
            warn!("video `{}`: {flag:?}", seq.video_id);
        }
    }
    if let Some(id) = ann.keys().find(|id| !seqs.iter().any(|s| &s.video_id == *id)) {
        warn!("annotations reference video `{id}` with no detections");
    }
    Ok((seqs, ann))
}

fn manifest(command: &str, config: serde_json::Value) -> serde_json::Value {
    json!({
        "tool": "reach-rec",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "model_format_version": FORMAT_VERSION,
        "config": config,
    })
}

// ---------------------------------------------------------------------------
// gen

pub fn cmd_gen(args: &GenArgs) -> CliResult<()> {
    if args.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let mut cfg = match args.preset {
        Preset::Default => SynthConfig::default(),
        Preset::Ambiguous => SynthConfig::ambiguous(),
    };
    cfg.seed = args.seed;
    if let Some(p) = args.abort_probability {
        cfg.abort_probability = p;
    }
    if let Some(j) = args.jitter_std {
        cfg.jitter_std = j;
    }
    if let Some(r) = args.n_objects {
        cfg.n_objects = r;
    }
    cfg.validate()?;
    let samples = generate_dataset(&cfg, args.n, args.seed)?;
    create_dir(&args.out)?;

    let seqs: Vec<VideoSequence> = samples.iter().map(|s| s.sequence.clone()).collect();
    let mut buf = Vec::new();
    write_detections(&mut buf, &seqs)?;
    write_bytes(&args.out.join(DETECTIONS_FILE), &buf)?;

    let mut ann = AnnotationSet::new();
    for s in &samples {
        let rows = s
            .truth_events
            .iter()
            .enumerate()
            .map(|(i, e)| Annotation {
                reach_id: i as u32 + 1,
                event: e.clone(),
            })
            .collect();
        ann.insert(s.sequence.video_id.clone(), rows);
    }
    let mut buf = Vec::new();
    write_annotations(&mut buf, &ann)?;
    write_bytes(&args.out.join(ANNOTATIONS_FILE), &buf)?;

    let n_reaches: usize = ann.values().map(Vec::len).sum();
    write_json(
        &args.out.join(SYNTH_MANIFEST_FILE),
        &manifest(
            "gen",
            json!({ "n": args.n, "seed": args.seed, "preset": args.preset, "synth": cfg, "n_reaches": n_reaches }),
        ),
    )?;
    println!("wrote {} clips with {n_reaches} annotated reaches to {}", args.n, args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub ratios: (f64, f64, f64),
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub iou_threshold: f64,
    /// Validation event F1 at the threshold; `None` when it was given on the
    /// command line.
    pub validation_f1: Option<f64>,
    pub policy: FusionPolicy,
    pub pairing: Pairing,
}

fn resolve_policy(args: &PolicyArgs, base: FusionPolicy) -> CliResult<FusionPolicy> {
    let mut p = base;
    if let Some(m) = args.policy {
        p.mode = m.into();
    }
    if let Some(o) = args.offset_semantics {
        p.offset = o.into();
    }
    if let Some(d) = args.min_duration {
        p.min_duration = d;
    }
    if let Some(m) = args.score_margin {
        p.score_margin = m;
    }
    p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(p)
}

fn check_theta(theta: Option<f64>) -> CliResult<()> {
    match theta {
        Some(t) if !(t > 0.0 && t < 1.0) => Err(CliError::Usage(format!("--iou-threshold must lie in (0,1), got {t}"))),
        _ => Ok(()),
    }
}

fn labeled(seqs: &[&VideoSequence], ann: &AnnotationSet, pairing: Pairing) -> CliResult<Vec<LabeledStream>> {
    let mut out = Vec::new();
    for seq in seqs {
        let events = events_of(ann, &seq.video_id);
        for hand in Hand::BOTH {
            out.push(labeled_stream(seq, &events, hand, pairing).map_err(|e| {
                CliError::Run(Error::Annotation(format!("video `{}`: {e}", seq.video_id)))
            })?);
        }
    }
    Ok(out)
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    check_theta(args.policy.iou_threshold)?;
    let policy = resolve_policy(&args.policy, FusionPolicy::default())?;
    let kind: ModelKind = args.model.into();
    let mut hyper = TrainHyper {
        epochs: args.epochs,
        seed: args.seed,
        ..TrainHyper::default()
    };
    hyper.adam.learning_rate = args.lr;
    hyper.adam.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    match (kind, args.window) {
        (ModelKind::BabyNet, Some(w)) => hyper.lstm.window = w,
        (ModelKind::Mlp, Some(w)) if w != 1 => {
            return Err(CliError::Usage(format!("the MLP baseline is memoryless; --window must be 1, got {w}")))
        }
        _ => {}
    }
    if kind == ModelKind::BabyNet {
        hyper.lstm.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }

    let (seqs, ann) = read_dataset(&args.data)?;
    let ids: Vec<String> = seqs.iter().map(|s| s.video_id.clone()).collect();
    let split = split_dataset(&ids, args.split, args.seed)?;
    let pick = |set: &[String]| -> Vec<&VideoSequence> { seqs.iter().filter(|s| set.contains(&s.video_id)).collect() };
    let pairing = Pairing::default();
    let train_streams = labeled(&pick(&split.train), &ann, pairing)?;
    let val_streams = labeled(&pick(&split.val), &ann, pairing)?;
    info!(
        "split: {} train / {} val / {} test clips",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );

    let outcome = crate::nn::train(
        kind,
        &TrainData {
            train: &train_streams,
            val: &val_streams,
        },
        &hyper,
    )?;
    println!("model: {} ({} trainable parameters)", kind.file_tag(), outcome.model.n_params());
    println!("best epoch {} of {}", outcome.best_epoch, hyper.epochs);

    let calibration = match args.policy.iou_threshold {
        Some(t) => CalibrationRecord {
            iou_threshold: t,
            validation_f1: None,
            policy,
            pairing,
        },
        None => {
            let cases = val_streams
                .iter()
                .map(|ls| {
                    Ok(CalibrationCase {
                        stream: &ls.stream,
                        scores: Some(predict(&outcome.model, &ls.stream)?),
                        truth: ls.truth.clone(),
                    })
                })
                .collect::<crate::error::Result<Vec<_>>>()?;
            let c = calibrate_threshold(&cases, &policy)?;
            println!("calibrated IoU threshold {:.2} (validation event F1 {:.3})", c.iou_threshold, c.f1);
            CalibrationRecord {
                iou_threshold: c.iou_threshold,
                validation_f1: Some(c.f1),
                policy,
                pairing,
            }
        }
    };

    create_dir(&args.out)?;
    write_bytes(&args.out.join(MODEL_FILE), &save_model(&outcome.model)?)?;
    write_json(&args.out.join(CALIBRATION_FILE), &calibration)?;
    write_json(
        &args.out.join(HISTORY_FILE),
        &json!({ "best_epoch": outcome.best_epoch, "class_weights": outcome.class_weights, "epochs": outcome.history }),
    )?;
    write_json(
        &args.out.join(SPLIT_FILE),
        &SplitRecord {
            seed: args.seed,
            ratios: args.split,
            train: split.train,
            val: split.val,
            test: split.test,
        },
    )?;
    write_json(
        &args.out.join(RUN_MANIFEST_FILE),
        &manifest(
            "train",
            json!({
                "data": args.data,
                "model": kind,
                "seed": args.seed,
                "hyper": hyper,
                "split": args.split,
                "calibration": calibration,
            }),
        ),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eval / infer

struct Loaded {
    model: crate::nn::Model,
    calibration: CalibrationRecord,
}

fn load_run(dir: &Path, overrides: &PolicyArgs) -> CliResult<(Loaded, f64, FusionPolicy)> {
    check_theta(overrides.iou_threshold)?;
    let path = dir.join(MODEL_FILE);
    let bytes = fs::read(&path).map_err(|e| at(&path)(e.into()))?;
    let model = load_model(&bytes).map_err(at(&path))?;
    let calibration: CalibrationRecord = read_json(&dir.join(CALIBRATION_FILE))?;
    let policy = resolve_policy(overrides, calibration.policy)?;
    let theta = overrides.iou_threshold.unwrap_or(calibration.iou_threshold);
    Ok((Loaded { model, calibration }, theta, policy))
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let (run, theta, policy) = load_run(&args.model_dir, &args.policy)?;
    let split: SplitRecord = read_json(&args.model_dir.join(SPLIT_FILE))?;
    let (seqs, ann) = read_dataset(&args.data)?;
    let clips: Vec<EvalClip> = seqs
        .into_iter()
        .filter(|s| split.test.contains(&s.video_id))
        .map(|s| EvalClip {
            events: events_of(&ann, &s.video_id),
            sequence: s,
        })
        .collect();
    if clips.len() != split.test.len() {
        warn!("{} of {} test clips found in {}", clips.len(), split.test.len(), args.data.display());
    }
    if clips.is_empty() {
        return Err(CliError::Run(Error::Evaluation("no test clips found in the data directory".into())));
    }
    let report = evaluate(&run.model, theta, &clips, &policy, run.calibration.pairing)?;
    let out = args.out.clone().unwrap_or_else(|| args.model_dir.clone());
    create_dir(&out)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    print!("{}", report.table());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EventRecord<'a> {
    video_id: &'a str,
    reach_id: u32,
    hand: Hand,
    object_id: &'a str,
    onset_frame: usize,
    offset_frame: usize,
    /// Class probabilities (NoR, RN, R, RF) for each frame of the event.
    scores: &'a [Vec<f64>],
}

pub fn cmd_infer(args: &InferArgs) -> CliResult<()> {
    let (run, theta, policy) = load_run(&args.model_dir, &args.policy)?;
    let path = if args.data.is_dir() {
        args.data.join(DETECTIONS_FILE)
    } else {
        args.data.clone()
    };
    let seqs = read_detections(&path)?;
    create_dir(&args.out)?;
    let events_path = args.out.join(EVENTS_FILE);
    let mut events_out = BufWriter::new(File::create(&events_path).map_err(|e| at(&events_path)(e.into()))?);
    let mut ann = AnnotationSet::new();
    let mut total = 0usize;
    for seq in &seqs {
        let mut rows: Vec<Annotation> = Vec::new();
        for hand in Hand::BOTH {
            let stream = feature_stream(seq, hand, run.calibration.pairing)?;
            if stream.n_valid() == 0 {
                warn!("video `{}`: no {hand:?} hand/object pair detected; skipping", seq.video_id);
                continue;
            }
            let scores = predict(&run.model, &stream)?;
            for e in assemble_events(Some(&scores), &stream, theta, &policy)? {
                let pos = |f| stream.frame_indices.binary_search(&f).expect("event frames come from the stream");
                let reach_id = rows.len() as u32 + 1;
                let rec = EventRecord {
                    video_id: &seq.video_id,
                    reach_id,
                    hand,
                    object_id: &e.object_id,
                    onset_frame: e.onset_frame,
                    offset_frame: e.offset_frame,
                    scores: &scores[pos(e.onset_frame)..=pos(e.offset_frame)],
                };
                serde_json::to_writer(&mut events_out, &rec).map_err(Error::from)?;
                events_out.write_all(b"\n").map_err(|e| at(&events_path)(e.into()))?;
                rows.push(Annotation { reach_id, event: e });
            }
        }
        total += rows.len();
        if !rows.is_empty() {
            ann.insert(seq.video_id.clone(), rows);
        }
    }
    events_out.flush().map_err(|e| at(&events_path)(e.into()))?;
    let mut buf = Vec::new();
    write_annotations(&mut buf, &ann)?;
    write_bytes(&args.out.join(ANNOTATIONS_FILE), &buf)?;
    if total == 0 {
        warn!("no reach events detected");
    }
    println!("{total} reach events in {} videos", seqs.len());
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Infer(a) => cmd_infer(a),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
