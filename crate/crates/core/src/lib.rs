//! Infant reach recognition from per-frame bounding boxes.
//!
//! Pipeline: detections → per-hand `(distance, Δdistance, IoU)` features →
//! a small LSTM frame classifier (NoR / RN / R / RF) → a keyframe state
//! machine that turns scores and geometry into onset/offset reach events.

pub mod cli;
pub mod data;
pub mod error;
pub mod events;
pub mod features;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod synth;

pub use error::{Error, Result};
