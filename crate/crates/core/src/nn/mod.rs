//! Hand-written sequence classifiers with exact gradients: the four-class
//! reach LSTM and the memoryless MLP baseline, Adam, the training loop and the
//! `model.json` format.

mod adam;
mod io;
mod lstm;
mod mlp;
mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use io::{load_model, save_model, FORMAT_VERSION};
pub use lstm::{LstmConfig, LstmParams};
pub use mlp::{MlpConfig, MlpParams};
pub use train::{
    class_weights, predict, train, EpochStats, ModelKind, TrainData, TrainHyper, TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::data::FrameLabel;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

pub const N_CLASSES: usize = 4;

/// Named, flat views of a parameter set. Gradients share the layout of the
/// parameters they belong to.
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<(String, &[f64])>;
    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn n_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.blocks().into_iter().flat_map(|(_, b)| b.iter().copied()).collect()
    }
}

/// A differentiable network mapping a window of input rows to class logits.
pub trait Network: ParamBlocks + Clone {
    fn input_dim(&self) -> usize;
    fn window(&self) -> usize;
    fn logits(&self, xs: &[&[f64]]) -> Result<Vec<f64>>;
    /// Weighted cross entropy and its gradient with respect to every parameter.
    fn loss_grad(&self, xs: &[&[f64]], target: usize, weight: f64) -> Result<(f64, Self)>;
    /// Same shape as `self`, all zeros.
    fn zeros_like(&self) -> Self;
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-weight * log softmax(logits)[target]` with max-subtraction.
pub fn loss(logits: &[f64], target: usize, weight: f64) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    weight * (lse - logits[target])
}

/// `weight * (softmax - onehot(target))`, the gradient of [`loss`].
pub(crate) fn loss_grad_logits(logits: &[f64], target: usize, weight: f64) -> Vec<f64> {
    let mut p = softmax(logits);
    p[target] -= 1.0;
    p.iter_mut().for_each(|v| *v *= weight);
    p
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Per-feature affine standardization applied before the network. Fixed
/// after fitting; not trainable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    pub fn identity(dim: usize) -> Self {
        InputNorm {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Mean and standard deviation over `rows`; near-constant columns keep
    /// unit scale.
    pub fn fit<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for k in 0..dim {
                sum[k] += r[k];
                sq[k] += r[k] * r[k];
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = (0..dim)
            .map(|k| {
                let var = (sq[k] / n as f64 - mean[k] * mean[k]).max(0.0);
                let s = var.sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        InputNorm { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub(crate) fn check(&self, dim: usize) -> Result<()> {
        if self.mean.len() != dim || self.std.len() != dim {
            return Err(Error::Dimension(format!(
                "input normalization has {}/{} entries, expected {dim}",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::ModelFormat("input normalization must be finite with positive scale".into()));
        }
        Ok(())
    }
}

/// A trained classifier together with its input preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    BabyNet { params: LstmParams, norm: InputNorm },
    Mlp { params: MlpParams, norm: InputNorm },
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::BabyNet { .. } => ModelKind::BabyNet,
            Model::Mlp { .. } => ModelKind::Mlp,
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Model::BabyNet { params, .. } => params.n_params(),
            Model::Mlp { params, .. } => params.n_params(),
        }
    }

    pub fn window(&self) -> usize {
        match self {
            Model::BabyNet { params, .. } => params.window(),
            Model::Mlp { params, .. } => params.window(),
        }
    }

    /// Raw (unnormalized) network input for one frame.
    pub fn raw_input(&self, v: &FeatureVector) -> Vec<f64> {
        match self {
            Model::BabyNet { .. } => v.as_array().to_vec(),
            Model::Mlp { .. } => vec![v.d_norm, v.iou],
        }
    }

    pub fn norm(&self) -> &InputNorm {
        match self {
            Model::BabyNet { norm, .. } | Model::Mlp { norm, .. } => norm,
        }
    }

    /// Class probabilities for the last frame of `window`.
    pub fn scores(&self, window: &[FeatureVector]) -> Result<Vec<f64>> {
        let rows: Vec<Vec<f64>> = window.iter().map(|v| self.norm().apply(&self.raw_input(v))).collect();
        let xs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let logits = match self {
            Model::BabyNet { params, .. } => params.logits(&xs)?,
            Model::Mlp { params, .. } => params.logits(&xs)?,
        };
        Ok(softmax(&logits))
    }
}

pub fn label_of(scores: &[f64]) -> FrameLabel {
    FrameLabel::from_index(argmax(scores)).unwrap_or(FrameLabel::NoR)
}
