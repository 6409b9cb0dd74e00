//! Single-layer LSTM over a short window with a linear head on the last
//! hidden state. Gate blocks are stacked in the order input, forget,
//! cell-candidate, output (`ifgo`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss, loss_grad_logits, Network, ParamBlocks};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
    pub window: usize,
}

impl Default for LstmConfig {
    /// 3 inputs, 15 hidden units, 4 classes, two-frame window: 1,204
    /// trainable scalars.
    fn default() -> Self {
        LstmConfig {
            input_dim: 3,
            hidden_dim: 15,
            n_classes: 4,
            window: 2,
        }
    }
}

impl LstmConfig {
    pub fn new(input_dim: usize, hidden_dim: usize, n_classes: usize) -> Self {
        LstmConfig {
            input_dim,
            hidden_dim,
            n_classes,
            window: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.n_classes == 0 || self.window == 0 {
            return Err(Error::ModelConfig(format!("all LSTM dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `4h(h + in + 1) + h·c + c`.
    pub fn count_params(&self) -> usize {
        let (h, i, c) = (self.hidden_dim, self.input_dim, self.n_classes);
        4 * h * (h + i + 1) + h * c + c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub cfg: LstmConfig,
    /// `4h × in`, row-major.
    pub w_ih: Vec<f64>,
    /// `4h × h`, row-major.
    pub w_hh: Vec<f64>,
    /// `4h`.
    pub b: Vec<f64>,
    /// `c × h`, row-major.
    pub w_out: Vec<f64>,
    /// `c`.
    pub b_out: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-step activations kept for the backward pass.
struct Step {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(cfg: LstmConfig) -> Self {
        let (h, i, c) = (cfg.hidden_dim, cfg.input_dim, cfg.n_classes);
        LstmParams {
            cfg,
            w_ih: vec![0.0; 4 * h * i],
            w_hh: vec![0.0; 4 * h * h],
            b: vec![0.0; 4 * h],
            w_out: vec![0.0; c * h],
            b_out: vec![0.0; c],
        }
    }

    /// Uniform weights in `±sqrt(1/h)`, forget-gate bias 1, other biases 0.
    pub fn init(cfg: LstmConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self::zeros(cfg);
        let bound = (1.0 / cfg.hidden_dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in p.w_ih.iter_mut().chain(p.w_hh.iter_mut()).chain(p.w_out.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        let h = cfg.hidden_dim;
        p.b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        Ok(p)
    }

    pub fn forget_bias(&self) -> &[f64] {
        let h = self.cfg.hidden_dim;
        &self.b[h..2 * h]
    }

    fn check_window(&self, xs: &[&[f64]]) -> Result<()> {
        if xs.len() != self.cfg.window {
            return Err(Error::Dimension(format!(
                "window has {} frames, model expects {}",
                xs.len(),
                self.cfg.window
            )));
        }
        if let Some(x) = xs.iter().find(|x| x.len() != self.cfg.input_dim) {
            return Err(Error::Dimension(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.cfg.input_dim
            )));
        }
        Ok(())
    }

    fn run(&self, xs: &[&[f64]]) -> (Vec<Step>, Vec<f64>) {
        let (nh, ni) = (self.cfg.hidden_dim, self.cfg.input_dim);
        let mut h = vec![0.0; nh];
        let mut c = vec![0.0; nh];
        let mut steps = Vec::with_capacity(xs.len());
        let mut z = vec![0.0; 4 * nh];
        for x in xs {
            for (r, zr) in z.iter_mut().enumerate() {
                let mut acc = self.b[r];
                let wi = &self.w_ih[r * ni..(r + 1) * ni];
                for k in 0..ni {
                    acc += wi[k] * x[k];
                }
                let wh = &self.w_hh[r * nh..(r + 1) * nh];
                for k in 0..nh {
                    acc += wh[k] * h[k];
                }
                *zr = acc;
            }
            let i: Vec<f64> = z[..nh].iter().map(|v| sigmoid(*v)).collect();
            let f: Vec<f64> = z[nh..2 * nh].iter().map(|v| sigmoid(*v)).collect();
            let g: Vec<f64> = z[2 * nh..3 * nh].iter().map(|v| v.tanh()).collect();
            let o: Vec<f64> = z[3 * nh..].iter().map(|v| sigmoid(*v)).collect();
            for k in 0..nh {
                c[k] = f[k] * c[k] + i[k] * g[k];
            }
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            for k in 0..nh {
                h[k] = o[k] * tanh_c[k];
            }
            steps.push(Step {
                i,
                f,
                g,
                o,
                c: c.clone(),
                tanh_c,
            });
        }
        (steps, h)
    }

    fn head(&self, h: &[f64]) -> Vec<f64> {
        let nh = self.cfg.hidden_dim;
        (0..self.cfg.n_classes)
            .map(|r| {
                self.b_out[r]
                    + self.w_out[r * nh..(r + 1) * nh]
                        .iter()
                        .zip(h)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Logits and final `(h, c)` state for a window, starting from zero state.
    pub fn forward(&self, xs: &[&[f64]]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        self.check_window(xs)?;
        let (steps, h) = self.run(xs);
        let c = steps.last().map(|s| s.c.clone()).unwrap_or_default();
        Ok((self.head(&h), h, c))
    }
}

impl ParamBlocks for LstmParams {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        vec![
            ("w_ih".into(), &self.w_ih[..]),
            ("w_hh".into(), &self.w_hh[..]),
            ("b".into(), &self.b[..]),
            ("w_out".into(), &self.w_out[..]),
            ("b_out".into(), &self.b_out[..]),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("w_ih".into(), &mut self.w_ih[..]),
            ("w_hh".into(), &mut self.w_hh[..]),
            ("b".into(), &mut self.b[..]),
            ("w_out".into(), &mut self.w_out[..]),
            ("b_out".into(), &mut self.b_out[..]),
        ]
    }
}

impl Network for LstmParams {
    fn input_dim(&self) -> usize {
        self.cfg.input_dim
    }

    fn window(&self) -> usize {
        self.cfg.window
    }

    fn logits(&self, xs: &[&[f64]]) -> Result<Vec<f64>> {
        self.forward(xs).map(|(z, _, _)| z)
    }

    /// Backpropagation through the window.
    fn loss_grad(&self, xs: &[&[f64]], target: usize, weight: f64) -> Result<(f64, Self)> {
        self.check_window(xs)?;
        if target >= self.cfg.n_classes {
            return Err(Error::Dimension(format!("target class {target} out of range")));
        }
        let (nh, ni, nc) = (self.cfg.hidden_dim, self.cfg.input_dim, self.cfg.n_classes);
        let (steps, h_last) = self.run(xs);
        let logits = self.head(&h_last);
        let l = loss(&logits, target, weight);
        let dz_out = loss_grad_logits(&logits, target, weight);

        let mut g = self.zeros_like();
        let mut dh = vec![0.0; nh];
        for r in 0..nc {
            g.b_out[r] = dz_out[r];
            for k in 0..nh {
                g.w_out[r * nh + k] = dz_out[r] * h_last[k];
                dh[k] += self.w_out[r * nh + k] * dz_out[r];
            }
        }

        let mut dc = vec![0.0; nh];
        let mut dz = vec![0.0; 4 * nh];
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            let zero = vec![0.0; nh];
            let c_prev = if t > 0 { &steps[t - 1].c } else { &zero };
            let h_prev: Vec<f64> = if t > 0 {
                let p = &steps[t - 1];
                p.o.iter().zip(&p.tanh_c).map(|(o, tc)| o * tc).collect()
            } else {
                zero.clone()
            };
            for k in 0..nh {
                let d_o = dh[k] * s.tanh_c[k];
                dc[k] += dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                let d_i = dc[k] * s.g[k];
                let d_g = dc[k] * s.i[k];
                let d_f = dc[k] * c_prev[k];
                dz[k] = d_i * s.i[k] * (1.0 - s.i[k]);
                dz[nh + k] = d_f * s.f[k] * (1.0 - s.f[k]);
                dz[2 * nh + k] = d_g * (1.0 - s.g[k] * s.g[k]);
                dz[3 * nh + k] = d_o * s.o[k] * (1.0 - s.o[k]);
                dc[k] *= s.f[k];
            }
            let x = xs[t];
            let mut dh_prev = vec![0.0; nh];
            for (r, &d) in dz.iter().enumerate() {
                g.b[r] += d;
                for k in 0..ni {
                    g.w_ih[r * ni + k] += d * x[k];
                }
                for k in 0..nh {
                    g.w_hh[r * nh + k] += d * h_prev[k];
                    dh_prev[k] += self.w_hh[r * nh + k] * d;
                }
            }
            dh = dh_prev;
        }
        Ok((l, g))
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.cfg)
    }
}
