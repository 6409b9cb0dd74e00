use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, argmax, loss, AdamHyper, AdamState, InputNorm, LstmConfig, LstmParams, MlpConfig, MlpParams, Model, Network, N_CLASSES};
use crate::data::FrameLabel;
use crate::error::{Error, Result};
use crate::features::{FeatureStream, FeatureVector, LabeledStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "babynet")]
    BabyNet,
    #[serde(rename = "mlp")]
    Mlp,
}

impl ModelKind {
    /// Value of the `kind` field in `model.json`.
    pub fn file_tag(self) -> &'static str {
        match self {
            ModelKind::BabyNet => "babynet-lstm",
            ModelKind::Mlp => "mlp-baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub adam: AdamHyper,
    pub epochs: usize,
    pub batch_size: usize,
    /// Per-class loss weights; `None` derives clipped inverse frequencies
    /// from the training labels.
    pub class_weights: Option<[f64; N_CLASSES]>,
    pub seed: u64,
    pub lstm: LstmConfig,
    pub mlp: MlpConfig,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            adam: AdamHyper::default(),
            epochs: 30,
            batch_size: 1,
            class_weights: None,
            seed: 0,
            lstm: LstmConfig::default(),
            mlp: MlpConfig::default(),
        }
    }
}

pub struct TrainData<'a> {
    pub train: &'a [LabeledStream],
    pub val: &'a [LabeledStream],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub initial: Model,
    /// Epoch 0 is the initialization.
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub class_weights: [f64; N_CLASSES],
}

const WEIGHT_CLIP: (f64, f64) = (0.25, 8.0);

/// Inverse-frequency weights `N / (K n_c)` clipped to `[0.25, 8]`. Classes
/// absent from the labels fall back to weight 1.
pub fn class_weights(labels: impl Iterator<Item = FrameLabel>) -> [f64; N_CLASSES] {
    let mut counts = [0usize; N_CLASSES];
    for l in labels {
        counts[l.index()] += 1;
    }
    let total: usize = counts.iter().sum();
    let mut w = [1.0; N_CLASSES];
    for (c, n) in counts.iter().enumerate() {
        if *n == 0 {
            log::warn!("class {:?} absent from training data; using weight 1", FrameLabel::ALL[c]);
            continue;
        }
        w[c] = (total as f64 / (N_CLASSES as f64 * *n as f64)).clamp(WEIGHT_CLIP.0, WEIGHT_CLIP.1);
    }
    w
}

/// Frame positions of a window ending at `t`, padding the start of the
/// stream by repeating frame 0.
pub(crate) fn window_positions(t: usize, window: usize) -> impl Iterator<Item = usize> {
    (0..window).map(move |j| (t + j + 1).saturating_sub(window))
}

struct Prepared {
    rows: Vec<Vec<Vec<f64>>>,
    samples: Vec<(usize, usize, usize)>,
}

fn prepare(streams: &[LabeledStream], model: &Model) -> Prepared {
    let mut rows = Vec::with_capacity(streams.len());
    let mut samples = Vec::new();
    for (s, ls) in streams.iter().enumerate() {
        rows.push(ls.stream.vectors.iter().map(|v| model.norm().apply(&model.raw_input(v))).collect());
        for (t, ok) in ls.stream.valid.iter().enumerate() {
            if *ok {
                samples.push((s, t, ls.labels[t].index()));
            }
        }
    }
    Prepared { rows, samples }
}

fn window_of(rows: &[Vec<f64>], t: usize, window: usize) -> Vec<&[f64]> {
    window_positions(t, window).map(|p| rows[p].as_slice()).collect()
}

fn evaluate_net<N: Network>(net: &N, data: &Prepared) -> Result<(f64, f64)> {
    if data.samples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut total, mut correct) = (0.0, 0usize);
    for &(s, t, y) in &data.samples {
        let z = net.logits(&window_of(&data.rows[s], t, net.window()))?;
        total += loss(&z, y, 1.0);
        correct += (argmax(&z) == y) as usize;
    }
    let n = data.samples.len() as f64;
    Ok((total / n, correct as f64 / n))
}

fn run_training<N: Network>(
    init: N,
    train: &Prepared,
    val: &Prepared,
    hyper: &TrainHyper,
    weights: &[f64; N_CLASSES],
) -> Result<(N, Vec<EpochStats>, usize)> {
    let mut net = init;
    let mut opt = AdamState::new(net.n_params());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5e_ed0f_7a1e);
    let mut order: Vec<usize> = (0..train.samples.len()).collect();
    let batch = hyper.batch_size.max(1);

    let stats = |epoch: usize, net: &N| -> Result<EpochStats> {
        let (train_loss, train_accuracy) = evaluate_net(net, train)?;
        let (val_loss, val_accuracy) = evaluate_net(net, val)?;
        Ok(EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
        })
    };

    let mut history = vec![stats(0, &net)?];
    let mut best = (history[0].val_accuracy, 0usize, net.clone());
    let mut step = 0u64;
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut acc = net.zeros_like();
            for &i in chunk {
                let (s, t, y) = train.samples[i];
                let (_, g) = net.loss_grad(&window_of(&train.rows[s], t, net.window()), y, weights[y])?;
                for ((_, a), (_, b)) in acc.blocks_mut().into_iter().zip(g.blocks()) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
            if chunk.len() > 1 {
                let scale = 1.0 / chunk.len() as f64;
                for (_, a) in acc.blocks_mut() {
                    a.iter_mut().for_each(|x| *x *= scale);
                }
            }
            step += 1;
            adam_step(&mut opt, &mut net, &acc, &hyper.adam, step)?;
        }
        let st = stats(epoch, &net)?;
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4} | val loss {:.4} acc {:.4}",
            st.train_loss,
            st.train_accuracy,
            st.val_loss,
            st.val_accuracy
        );
        if st.val_accuracy > best.0 {
            best = (st.val_accuracy, epoch, net.clone());
        }
        history.push(st);
    }
    Ok((best.2, history, best.1))
}

/// Trains `kind` on sliding windows (label of the last frame as target) with
/// per-sample Adam steps in a seeded order, keeping the epoch with the best
/// validation frame accuracy.
pub fn train(kind: ModelKind, data: &TrainData<'_>, hyper: &TrainHyper) -> Result<TrainOutcome> {
    hyper.adam.validate()?;
    let n_train: usize = data.train.iter().map(|s| s.stream.n_valid()).sum();
    let n_val: usize = data.val.iter().map(|s| s.stream.n_valid()).sum();
    if n_train == 0 {
        return Err(Error::Training("training split has no valid frames".into()));
    }
    if n_val == 0 {
        return Err(Error::Training("validation split has no valid frames".into()));
    }
    for ls in data.train.iter().chain(data.val) {
        if ls.labels.len() != ls.stream.len() {
            return Err(Error::Dimension(format!(
                "video `{}`: {} labels for {} frames",
                ls.video_id,
                ls.labels.len(),
                ls.stream.len()
            )));
        }
    }

    let weights = hyper.class_weights.unwrap_or_else(|| {
        class_weights(
            data.train
                .iter()
                .flat_map(|s| s.labels.iter().zip(&s.stream.valid).filter(|(_, v)| **v).map(|(l, _)| *l)),
        )
    });

    let skeleton = match kind {
        ModelKind::BabyNet => Model::BabyNet {
            params: LstmParams::init(hyper.lstm, hyper.seed)?,
            norm: InputNorm::identity(hyper.lstm.input_dim),
        },
        ModelKind::Mlp => Model::Mlp {
            params: MlpParams::init(&hyper.mlp, hyper.seed)?,
            norm: InputNorm::identity(hyper.mlp.input_dim),
        },
    };
    let raw_rows: Vec<Vec<f64>> = data
        .train
        .iter()
        .flat_map(|s| s.stream.vectors.iter().zip(&s.stream.valid).filter(|(_, v)| **v))
        .map(|(v, _)| skeleton.raw_input(v))
        .collect();
    let dim = raw_rows.first().map_or(0, Vec::len);
    let norm = InputNorm::fit(dim, raw_rows.iter().map(Vec::as_slice));
    let initial = match skeleton {
        Model::BabyNet { params, .. } => Model::BabyNet { params, norm },
        Model::Mlp { params, .. } => Model::Mlp { params, norm },
    };
    let train_p = prepare(data.train, &initial);
    let val_p = prepare(data.val, &initial);

    let (model, history, best_epoch) = match &initial {
        Model::BabyNet { params, norm } => {
            let (p, h, b) = run_training(params.clone(), &train_p, &val_p, hyper, &weights)?;
            (Model::BabyNet { params: p, norm: norm.clone() }, h, b)
        }
        Model::Mlp { params, norm } => {
            let (p, h, b) = run_training(params.clone(), &train_p, &val_p, hyper, &weights)?;
            (Model::Mlp { params: p, norm: norm.clone() }, h, b)
        }
    };
    Ok(TrainOutcome {
        model,
        initial,
        history,
        best_epoch,
        class_weights: weights,
    })
}

/// Per-frame class probabilities; frame `t` is scored from the window
/// ending at `t`.
pub fn predict(model: &Model, stream: &FeatureStream) -> Result<Vec<Vec<f64>>> {
    let w = model.window();
    (0..stream.len())
        .map(|t| {
            let win: Vec<FeatureVector> = window_positions(t, w).map(|p| stream.vectors[p]).collect();
            model.scores(&win)
        })
        .collect()
}
