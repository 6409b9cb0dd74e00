//! Memoryless baseline: a fully connected tanh network over the current
//! frame's `(d_norm, iou)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss, loss_grad_logits, Network, ParamBlocks};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub n_classes: usize,
}

impl Default for MlpConfig {
    /// 2 → 6 → 8 → 5 → 4 with biases, 143 trainable scalars.
    fn default() -> Self {
        MlpConfig {
            input_dim: 2,
            hidden: vec![6, 8, 5],
            n_classes: 4,
        }
    }
}

impl MlpConfig {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.n_classes);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_classes == 0 || self.hidden.iter().any(|h| *h == 0) {
            return Err(Error::ModelConfig(format!("MLP widths must be positive: {:?}", self.widths())));
        }
        if self.hidden.len() != 3 {
            return Err(Error::ModelConfig(format!(
                "baseline has four weight layers (three hidden), got {} hidden",
                self.hidden.len()
            )));
        }
        Ok(())
    }

    pub fn count_params(&self) -> Result<usize> {
        self.validate()?;
        Ok(self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// `n_out × n_in`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub cfg: MlpConfig,
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros(cfg: &MlpConfig) -> Self {
        let layers = cfg
            .widths()
            .windows(2)
            .map(|w| Layer {
                n_in: w[0],
                n_out: w[1],
                w: vec![0.0; w[0] * w[1]],
                b: vec![0.0; w[1]],
            })
            .collect();
        MlpParams { cfg: cfg.clone(), layers }
    }

    /// Weights uniform in `±sqrt(1/fan_in)`, biases zero.
    pub fn init(cfg: &MlpConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut p.layers {
            let bound = (1.0 / l.n_in as f64).sqrt();
            for w in &mut l.w {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    /// Activations per layer, input first; hidden layers are tanh, the last
    /// one is linear.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let a = acts.last().unwrap();
            let out: Vec<f64> = (0..l.n_out)
                .map(|r| {
                    let z = l.b[r] + l.w[r * l.n_in..(r + 1) * l.n_in].iter().zip(a).map(|(w, v)| w * v).sum::<f64>();
                    if li == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    fn check(&self, xs: &[&[f64]]) -> Result<()> {
        if xs.len() != 1 {
            return Err(Error::Dimension(format!("MLP takes one frame, got {}", xs.len())));
        }
        if xs[0].len() != self.cfg.input_dim {
            return Err(Error::Dimension(format!(
                "input has {} features, model expects {}",
                xs[0].len(),
                self.cfg.input_dim
            )));
        }
        Ok(())
    }
}

impl ParamBlocks for MlpParams {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("layers[{i}].w"), &l.w[..]), (format!("layers[{i}].b"), &l.b[..])])
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| [(format!("layers[{i}].w"), &mut l.w[..]), (format!("layers[{i}].b"), &mut l.b[..])])
            .collect()
    }
}

impl Network for MlpParams {
    fn input_dim(&self) -> usize {
        self.cfg.input_dim
    }

    fn window(&self) -> usize {
        1
    }

    fn logits(&self, xs: &[&[f64]]) -> Result<Vec<f64>> {
        self.check(xs)?;
        Ok(self.activations(xs[0]).pop().unwrap())
    }

    fn loss_grad(&self, xs: &[&[f64]], target: usize, weight: f64) -> Result<(f64, Self)> {
        self.check(xs)?;
        if target >= self.cfg.n_classes {
            return Err(Error::Dimension(format!("target class {target} out of range")));
        }
        let acts = self.activations(xs[0]);
        let logits = acts.last().unwrap();
        let l = loss(logits, target, weight);
        let mut delta = loss_grad_logits(logits, target, weight);
        let mut g = self.zeros_like();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let a_in = &acts[li];
            let gl = &mut g.layers[li];
            for r in 0..layer.n_out {
                gl.b[r] = delta[r];
                for k in 0..layer.n_in {
                    gl.w[r * layer.n_in + k] = delta[r] * a_in[k];
                }
            }
            if li > 0 {
                delta = (0..layer.n_in)
                    .map(|k| {
                        let back: f64 = (0..layer.n_out).map(|r| layer.w[r * layer.n_in + k] * delta[r]).sum();
                        back * (1.0 - a_in[k] * a_in[k])
                    })
                    .collect();
            }
        }
        Ok((l, g))
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(&self.cfg)
    }
}
