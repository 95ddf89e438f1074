//! Chunking clips into 1-second blocks and turning them into frame features
//! with aligned labels.

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use super::audio::read_wav;
use super::features::{concat_rows, model_input, FrontEnd, Standardizer};
use super::labels::read_labels;
use super::manifest::{resolve, Manifest};
use super::stft::spectrogram;
use super::synth::Split;
use super::{CHUNK_SAMPLES, FRAMES_PER_SECOND};
use crate::error::{Error, Result};
use crate::pitchgrid::FrameLabel;

/// Non-overlapping 1-second blocks; a trailing partial block is dropped.
pub fn chunk(samples: &[f64]) -> Vec<&[f64]> {
    samples.chunks_exact(CHUNK_SAMPLES).collect()
}

/// One chunk's unstandardized features and labels.
#[derive(Debug, Clone)]
pub struct Chunk {
    pub clip_id: String,
    pub index: usize,
    /// `frames x bands`.
    pub raw: Array2<f64>,
    pub labels: Vec<FrameLabel>,
}

/// Split a clip into chunks. Labels beyond the last whole chunk are dropped;
/// too few labels is an error.
pub fn clip_chunks(clip_id: &str, samples: &[f64], labels: &[FrameLabel], front: &FrontEnd) -> Result<Vec<Chunk>> {
    let blocks = chunk(samples);
    let needed = blocks.len() * FRAMES_PER_SECOND;
    if labels.len() < needed {
        return Err(Error::Mismatch(format!(
            "clip {clip_id}: {} labels for {} chunks ({needed} frames)",
            labels.len(),
            blocks.len()
        )));
    }
    blocks
        .iter()
        .enumerate()
        .map(|(i, block)| {
            let spec = spectrogram(block)?;
            Ok(Chunk {
                clip_id: clip_id.to_string(),
                index: i,
                raw: front.frame_features(&spec),
                labels: labels[i * FRAMES_PER_SECOND..(i + 1) * FRAMES_PER_SECOND].to_vec(),
            })
        })
        .collect()
}

/// Load every clip of one split from a manifest, in manifest order.
pub fn load_split(manifest_path: &Path, manifest: &Manifest, split: Split, front: &FrontEnd) -> Result<Vec<Chunk>> {
    let entries: Vec<_> = manifest.split(split).collect();
    let per_clip: Vec<Vec<Chunk>> = entries
        .par_iter()
        .map(|e| {
            let samples = read_wav(&resolve(manifest_path, &e.audio))?;
            let labels = read_labels(&resolve(manifest_path, &e.labels))?;
            clip_chunks(&e.id, &samples, &labels, front)
        })
        .collect::<Result<_>>()?;
    Ok(per_clip.into_iter().flatten().collect())
}

/// Standardize, stack context and concatenate chunks into one design matrix.
pub fn design_matrix(chunks: &[Chunk], standardizer: &Standardizer, context: usize) -> Result<(Array2<f64>, Vec<FrameLabel>)> {
    let blocks = chunks
        .iter()
        .map(|c| model_input(c.raw.clone(), standardizer, context))
        .collect::<Result<Vec<_>>>()?;
    let labels = chunks.iter().flat_map(|c| c.labels.iter().copied()).collect();
    Ok((concat_rows(&blocks)?, labels))
}

pub fn fit_standardizer(chunks: &[Chunk]) -> Result<Standardizer> {
    Standardizer::fit(chunks.iter().map(|c| c.raw.view()))
}
