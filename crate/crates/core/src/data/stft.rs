//! Magnitude STFT with a periodic Hann window and reflection-padded,
//! centered frames.

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{CHUNK_SAMPLES, FRAMES_PER_SECOND, HOP, N_FFT, N_FREQ};
use crate::error::{Error, Result};

/// `N_FREQ x frames` magnitudes of one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Array2<f64>,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.magnitudes.ncols()
    }
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}

/// `x[i]` with numpy-style "reflect" extension past both ends.
#[inline]
fn reflect(x: &[f64], i: isize) -> f64 {
    let n = x.len() as isize;
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period.max(1));
    if j >= n {
        j = period - j;
    }
    x[j as usize]
}

/// Spectrogram of a 1-second chunk: 1025 x 100, frame `t` centered on sample `t * 160`.
pub fn spectrogram(chunk: &[f64]) -> Result<Spectrogram> {
    if chunk.len() != CHUNK_SAMPLES {
        return Err(Error::Shape(format!("chunk has {} samples, expected {CHUNK_SAMPLES}", chunk.len())));
    }
    Ok(stft_magnitude(chunk, FRAMES_PER_SECOND))
}

/// Centered magnitude STFT with `n_frames` frames.
pub fn stft_magnitude(samples: &[f64], n_frames: usize) -> Spectrogram {
    let window = hann(N_FFT);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N_FFT);
    let half = (N_FFT / 2) as isize;
    let mut magnitudes = Array2::zeros((N_FREQ, n_frames));
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    for t in 0..n_frames {
        let center = (t * HOP) as isize;
        for (i, (b, w)) in buf.iter_mut().zip(&window).enumerate() {
            *b = Complex::new(w * reflect(samples, center - half + i as isize), 0.0);
        }
        fft.process(&mut buf);
        for k in 0..N_FREQ {
            magnitudes[[k, t]] = buf[k].norm();
        }
    }
    Spectrogram { magnitudes }
}
