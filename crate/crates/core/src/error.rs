use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid annotation: {0}")]
    Annotation(String),

    #[error("invalid dataset split: {0}")]
    Split(String),

    #[error("invalid generator config: {0}")]
    SynthConfig(String),

    #[error("invalid model config: {0}")]
    ModelConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("training: {0}")]
    Training(String),

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("out-of-order frame {got} after {last}")]
    FrameOrder { last: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
