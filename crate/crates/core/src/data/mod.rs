//! Audio front end and dataset plumbing: synthetic clips, 1-second
//! chunking, STFT magnitudes, frame features, and label / WAV / manifest I/O.

pub mod audio;
pub mod dataset;
pub mod features;
pub mod labels;
pub mod manifest;
pub mod stft;
pub mod synth;

pub use dataset::{chunk, Chunk};
pub use features::{FeatureConfig, Standardizer};
pub use stft::{spectrogram, Spectrogram};
pub use synth::{synth_clip, Contour, Partial, Recipe, Split, SynthSpec};

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAMES_PER_SECOND: usize = 100;
/// 10 ms at 16 kHz.
pub const HOP: usize = 160;
pub const N_FFT: usize = 2048;
/// One-sided bins of a 2048-point transform.
pub const N_FREQ: usize = N_FFT / 2 + 1;
/// Samples per 1-second chunk.
pub const CHUNK_SAMPLES: usize = SAMPLE_RATE as usize;
