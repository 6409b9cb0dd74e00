//! `model.json`: versioned, row-major matrices, shortest round-trip decimal
//! doubles.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::mlp::Layer;
use super::{InputNorm, LstmConfig, LstmParams, MlpConfig, MlpParams, Model, ModelKind, ParamBlocks};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const GATE_ORDER: &str = "ifgo";

#[derive(Serialize, Deserialize)]
struct LstmFileConfig {
    input_dim: usize,
    hidden_dim: usize,
    n_classes: usize,
    window: usize,
    input_norm: InputNorm,
}

#[derive(Serialize, Deserialize)]
struct LstmFile {
    format_version: u32,
    kind: String,
    config: LstmFileConfig,
    trainable_params: usize,
    gate_order: String,
    w_ih: Vec<Vec<f64>>,
    w_hh: Vec<Vec<f64>>,
    b: Vec<f64>,
    w_out: Vec<Vec<f64>>,
    b_out: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpFileConfig {
    input_dim: usize,
    hidden: Vec<usize>,
    n_classes: usize,
    input_norm: InputNorm,
}

#[derive(Serialize, Deserialize)]
struct MlpLayerFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpFile {
    format_version: u32,
    kind: String,
    config: MlpFileConfig,
    trainable_params: usize,
    layers: Vec<MlpLayerFile>,
}

fn rows(data: &[f64], n_cols: usize) -> Vec<Vec<f64>> {
    data.chunks(n_cols).map(<[f64]>::to_vec).collect()
}

fn unrows(name: &str, m: Vec<Vec<f64>>, n_rows: usize, n_cols: usize) -> Result<Vec<f64>> {
    if m.len() != n_rows {
        return Err(Error::ModelFormat(format!("`{name}` has {} rows, expected {n_rows}", m.len())));
    }
    if let Some((i, r)) = m.iter().enumerate().find(|(_, r)| r.len() != n_cols) {
        return Err(Error::ModelFormat(format!(
            "`{name}` row {i} has {} columns, expected {n_cols}",
            r.len()
        )));
    }
    Ok(m.into_iter().flatten().collect())
}

fn check_len(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::ModelFormat(format!("`{name}` has {} entries, expected {n}", v.len())));
    }
    Ok(())
}

fn check_finite<P: ParamBlocks>(p: &P) -> Result<()> {
    for (name, b) in p.blocks() {
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelFormat(format!("non-finite value in `{name}`")));
        }
    }
    Ok(())
}

pub fn save_model(model: &Model) -> Result<Vec<u8>> {
    let bytes = match model {
        Model::BabyNet { params, norm } => {
            check_finite(params)?;
            norm.check(params.cfg.input_dim)?;
            let c = params.cfg;
            let f = LstmFile {
                format_version: FORMAT_VERSION,
                kind: ModelKind::BabyNet.file_tag().into(),
                config: LstmFileConfig {
                    input_dim: c.input_dim,
                    hidden_dim: c.hidden_dim,
                    n_classes: c.n_classes,
                    window: c.window,
                    input_norm: norm.clone(),
                },
                trainable_params: c.count_params(),
                gate_order: GATE_ORDER.into(),
                w_ih: rows(&params.w_ih, c.input_dim),
                w_hh: rows(&params.w_hh, c.hidden_dim),
                b: params.b.clone(),
                w_out: rows(&params.w_out, c.hidden_dim),
                b_out: params.b_out.clone(),
            };
            serde_json::to_vec(&f)?
        }
        Model::Mlp { params, norm } => {
            check_finite(params)?;
            norm.check(params.cfg.input_dim)?;
            let f = MlpFile {
                format_version: FORMAT_VERSION,
                kind: ModelKind::Mlp.file_tag().into(),
                config: MlpFileConfig {
                    input_dim: params.cfg.input_dim,
                    hidden: params.cfg.hidden.clone(),
                    n_classes: params.cfg.n_classes,
                    input_norm: norm.clone(),
                },
                trainable_params: params.cfg.count_params()?,
                layers: params
                    .layers
                    .iter()
                    .map(|l| MlpLayerFile {
                        w: rows(&l.w, l.n_in),
                        b: l.b.clone(),
                    })
                    .collect(),
            };
            serde_json::to_vec(&f)?
        }
    };
    Ok(bytes)
}

pub fn load_model(bytes: &[u8]) -> Result<Model> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| Error::ModelFormat(format!("not valid JSON: {e}")))?;
    let version = value.get("format_version").and_then(Value::as_u64);
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::ModelFormat(format!(
            "unsupported format_version {version:?}, expected {FORMAT_VERSION}"
        )));
    }
    let kind = value.get("kind").and_then(Value::as_str).unwrap_or_default().to_string();
    let bad = |e: serde_json::Error| Error::ModelFormat(e.to_string());
    let model = match kind.as_str() {
        "babynet-lstm" => {
            let f: LstmFile = serde_json::from_value(value).map_err(bad)?;
            if f.gate_order != GATE_ORDER {
                return Err(Error::ModelFormat(format!("unsupported gate order `{}`", f.gate_order)));
            }
            let cfg = LstmConfig {
                input_dim: f.config.input_dim,
                hidden_dim: f.config.hidden_dim,
                n_classes: f.config.n_classes,
                window: f.config.window,
            };
            cfg.validate()?;
            let (h, i, c) = (cfg.hidden_dim, cfg.input_dim, cfg.n_classes);
            check_len("b", &f.b, 4 * h)?;
            check_len("b_out", &f.b_out, c)?;
            let params = LstmParams {
                cfg,
                w_ih: unrows("w_ih", f.w_ih, 4 * h, i)?,
                w_hh: unrows("w_hh", f.w_hh, 4 * h, h)?,
                b: f.b,
                w_out: unrows("w_out", f.w_out, c, h)?,
                b_out: f.b_out,
            };
            if f.trainable_params != cfg.count_params() {
                return Err(Error::ModelFormat(format!(
                    "declares {} parameters, config implies {}",
                    f.trainable_params,
                    cfg.count_params()
                )));
            }
            f.config.input_norm.check(i)?;
            check_finite(&params)?;
            Model::BabyNet {
                params,
                norm: f.config.input_norm,
            }
        }
        "mlp-baseline" => {
            let f: MlpFile = serde_json::from_value(value).map_err(bad)?;
            let cfg = MlpConfig {
                input_dim: f.config.input_dim,
                hidden: f.config.hidden,
                n_classes: f.config.n_classes,
            };
            let n = cfg.count_params()?;
            if f.trainable_params != n {
                return Err(Error::ModelFormat(format!(
                    "declares {} parameters, config implies {n}",
                    f.trainable_params
                )));
            }
            let widths = cfg.widths();
            if f.layers.len() != widths.len() - 1 {
                return Err(Error::ModelFormat(format!(
                    "{} layers, config implies {}",
                    f.layers.len(),
                    widths.len() - 1
                )));
            }
            let layers = f
                .layers
                .into_iter()
                .zip(widths.windows(2))
                .enumerate()
                .map(|(k, (l, w))| {
                    check_len(&format!("layers[{k}].b"), &l.b, w[1])?;
                    Ok(Layer {
                        n_in: w[0],
                        n_out: w[1],
                        w: unrows(&format!("layers[{k}].w"), l.w, w[1], w[0])?,
                        b: l.b,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            f.config.input_norm.check(cfg.input_dim)?;
            let params = MlpParams { cfg, layers };
            check_finite(&params)?;
            Model::Mlp {
                params,
                norm: f.config.input_norm,
            }
        }
        other => return Err(Error::ModelFormat(format!("unknown model kind `{other}`"))),
    };
    Ok(model)
}
