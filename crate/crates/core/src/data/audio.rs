//! 16-bit PCM WAV I/O at the working sample rate.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::SAMPLE_RATE;
use crate::error::{Error, Result};

/// Write mono PCM16 at 16 kHz. Samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate: SAMPLE_RATE, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut w = WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Read a WAV file as mono 16 kHz samples in [-1, 1]. Channels are averaged;
/// rates that are integer multiples of 16 kHz are low-passed and decimated.
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
    };
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if spec.sample_rate == SAMPLE_RATE {
        return Ok(mono);
    }
    if spec.sample_rate % SAMPLE_RATE != 0 {
        return Err(Error::Precondition(format!(
            "sample rate {} Hz is not an integer multiple of {SAMPLE_RATE} Hz",
            spec.sample_rate
        )));
    }
    Ok(decimate(&mono, (spec.sample_rate / SAMPLE_RATE) as usize))
}

/// Windowed-sinc low-pass at the new Nyquist, then keep every `factor`-th sample.
pub fn decimate(x: &[f64], factor: usize) -> Vec<f64> {
    if factor <= 1 {
        return x.to_vec();
    }
    let half = 16 * factor;
    let cutoff = 0.5 / factor as f64;
    let taps: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let n = i as f64 - half as f64;
            let sinc = if n == 0.0 {
                2.0 * cutoff
            } else {
                (std::f64::consts::TAU * cutoff * n).sin() / (std::f64::consts::PI * n)
            };
            let w = 0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / (2 * half) as f64).cos();
            sinc * w
        })
        .collect();
    let gain: f64 = taps.iter().sum();
    (0..x.len())
        .step_by(factor)
        .map(|c| {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                let j = c as isize + i as isize - half as isize;
                if j >= 0 && (j as usize) < x.len() {
                    acc += t * x[j as usize];
                }
            }
            acc / gain
        })
        .collect()
}
