//! # hlmelody
//!
//! Melody (fundamental-frequency) estimation as distributional regression.
//! Every frame is mapped to a predictive histogram over uniformly spaced
//! log-pitch bins and trained with a histogram loss against a Gaussian
//! target; the mean of the histogram is the pitch estimate and its spread
//! is the per-frame uncertainty.
//!
//! Five training methods are supported (see [`Method`]):
//!
//! - `M1`: weighted histogram loss with a fixed target width, unvoiced
//!   frames mapped to a dedicated bin 50 bins below the voiced range, plus
//!   an optional pruning post-processor for dual unvoiced/voiced peaks.
//! - `M2`: as `M1`, but the target width follows the current prediction
//!   error through a stop-gradient.
//! - `M3`: a voicing head trained with weighted binary cross-entropy and a
//!   pitch histogram over the voiced range only, trained on voiced frames.
//! - `M_MSE` / `M_NLL`: scalar regression baselines.
//!
//! Evaluation (accuracy metrics, Gaussian NLL fit, mistake-detection F1
//! and percentile bootstrap intervals) lives in [`evalmetrics`]. The
//! [`data`] module synthesizes labeled audio for experiments, and [`cli`]
//! drives the whole pipeline from the command line.

pub mod cli;
pub mod data;
pub mod error;
pub mod evalmetrics;
pub mod infer;
pub mod losses;
pub mod method;
pub mod net;
pub mod pitchgrid;
pub mod targetdist;

pub use error::{Error, Result};
pub use method::Method;
pub use pitchgrid::{BinGrid, FrameLabel, GridKind};
