//! Per-frame features: (optional) mel compression, `log(1 + x)`,
//! standardization with training statistics, and context stacking.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::stft::Spectrogram;
use super::{N_FFT, N_FREQ, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Mel bands; 0 keeps all 1025 linear bins.
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { n_mels: 128, fmin_hz: 30.0, fmax_hz: 4000.0 }
    }
}

impl FeatureConfig {
    pub fn n_bands(&self) -> usize {
        if self.n_mels == 0 {
            N_FREQ
        } else {
            self.n_mels
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels > 0 && !(self.fmin_hz >= 0.0 && self.fmax_hz > self.fmin_hz && self.fmax_hz <= 0.5 * SAMPLE_RATE as f64) {
            return Err(Error::Config(format!("bad mel range [{}, {}]", self.fmin_hz, self.fmax_hz)));
        }
        Ok(())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-mel filterbank, `N_FREQ x n_mels`.
pub fn mel_filterbank(n_mels: usize, fmin: f64, fmax: f64) -> Array2<f64> {
    let (m_lo, m_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
    Array2::from_shape_fn((N_FREQ, n_mels), |(k, m)| {
        let f = k as f64 * bin_hz;
        let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
        if f > l && f <= c {
            (f - l) / (c - l)
        } else if f > c && f < r {
            (r - f) / (r - c)
        } else {
            0.0
        }
    })
}

/// Maps spectrograms to unstandardized `frames x bands` log features.
#[derive(Debug, Clone)]
pub struct FrontEnd {
    filterbank: Option<Array2<f64>>,
}

impl FrontEnd {
    pub fn new(config: &FeatureConfig) -> Result<Self> {
        config.validate()?;
        let filterbank = (config.n_mels > 0).then(|| mel_filterbank(config.n_mels, config.fmin_hz, config.fmax_hz));
        Ok(FrontEnd { filterbank })
    }

    pub fn frame_features(&self, spec: &Spectrogram) -> Array2<f64> {
        let frames = spec.magnitudes.t();
        let banded = match &self.filterbank {
            Some(fb) => frames.dot(fb),
            None => frames.to_owned(),
        };
        banded.mapv(f64::ln_1p)
    }
}

/// Per-feature mean and standard deviation from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit on the rows of one or more matrices. Near-constant features get unit scale.
    pub fn fit<'a>(blocks: impl IntoIterator<Item = ArrayView2<'a, f64>> + Clone) -> Result<Self> {
        let mut sum: Option<Vec<f64>> = None;
        let mut n = 0usize;
        for b in blocks.clone() {
            let s = sum.get_or_insert_with(|| vec![0.0; b.ncols()]);
            if b.ncols() != s.len() {
                return Err(Error::Shape("feature blocks differ in width".into()));
            }
            for row in b.rows() {
                for (acc, v) in s.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            n += b.nrows();
        }
        let sum = sum.ok_or(Error::Empty("no feature rows to standardize"))?;
        if n == 0 {
            return Err(Error::Empty("no feature rows to standardize"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut sq = vec![0.0; mean.len()];
        for b in blocks {
            for row in b.rows() {
                for ((acc, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
        let std = sq
            .iter()
            .map(|q| {
                let sd = (q / n as f64).sqrt();
                if sd < 1e-8 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &mut Array2<f64>) -> Result<()> {
        if x.ncols() != self.mean.len() {
            return Err(Error::Shape(format!("{} features, standardizer has {}", x.ncols(), self.mean.len())));
        }
        for mut row in x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(())
    }
}

/// Concatenate rows `t - c ..= t + c` for every `t`, replicating edge rows.
pub fn stack_context(x: ArrayView2<f64>, c: usize) -> Array2<f64> {
    let (t_len, d) = x.dim();
    let mut out = Array2::zeros((t_len, (2 * c + 1) * d));
    for t in 0..t_len {
        for (slot, off) in (-(c as isize)..=c as isize).enumerate() {
            let src = (t as isize + off).clamp(0, t_len as isize - 1) as usize;
            out.row_mut(t)
                .slice_mut(ndarray::s![slot * d..(slot + 1) * d])
                .assign(&x.row(src));
        }
    }
    out
}

/// Standardize then stack one chunk's features.
pub fn model_input(mut raw: Array2<f64>, standardizer: &Standardizer, context: usize) -> Result<Array2<f64>> {
    standardizer.apply(&mut raw)?;
    Ok(stack_context(raw.view(), context))
}

/// Stack several per-chunk matrices vertically.
pub fn concat_rows(blocks: &[Array2<f64>]) -> Result<Array2<f64>> {
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    if views.is_empty() {
        return Err(Error::Empty("no feature blocks"));
    }
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}
