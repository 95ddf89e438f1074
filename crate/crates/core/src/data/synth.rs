//! Additive-harmonic synthetic melodies with exact frame labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FRAMES_PER_SECOND, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::pitchgrid::{FrameLabel, F_MAX_HZ, F_MIN_HZ};

/// Shape of the f0 trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Contour {
    Constant,
    /// Sinusoidal modulation around the base frequency.
    Vibrato { rate_hz: f64, depth_cents: f64 },
    /// Exponential sweep; overrides the base frequency.
    Glide { start_hz: f64, end_hz: f64 },
}

/// Steady background partial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partial {
    pub freq_hz: f64,
    /// Amplitude relative to the melody's fundamental.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub duration_s: f64,
    pub contour: Contour,
    pub base_freq_hz: f64,
    /// Harmonic `h` has amplitude `1/h`.
    pub n_harmonics: usize,
    pub accompaniment: Vec<Partial>,
    /// White noise level relative to the melody power; `None` is noiseless.
    pub noise_snr_db: Option<f64>,
    /// Silent `[start, end)` intervals, seconds.
    pub voicing_gaps: Vec<(f64, f64)>,
    pub seed: u64,
}

impl SynthSpec {
    /// Instantaneous f0 at time `t` (ignoring gaps).
    pub fn f0_at(&self, t: f64) -> f64 {
        match self.contour {
            Contour::Constant => self.base_freq_hz,
            Contour::Vibrato { rate_hz, depth_cents } => {
                let dev = depth_cents / 1200.0 * (2.0 * std::f64::consts::PI * rate_hz * t).sin();
                self.base_freq_hz * dev.exp2()
            }
            Contour::Glide { start_hz, end_hz } => {
                let frac = (t / self.duration_s).clamp(0.0, 1.0);
                start_hz * (end_hz / start_hz).powf(frac)
            }
        }
    }

    pub fn in_gap(&self, t: f64) -> bool {
        self.voicing_gaps.iter().any(|&(s, e)| t >= s && t < e)
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s * FRAMES_PER_SECOND as f64).round() as usize
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * SAMPLE_RATE as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Domain(format!("duration must be positive, got {}", self.duration_s)));
        }
        if self.n_harmonics == 0 {
            return Err(Error::Domain("at least one harmonic is required".into()));
        }
        let (lo, hi) = match self.contour {
            Contour::Constant => (self.base_freq_hz, self.base_freq_hz),
            Contour::Vibrato { depth_cents, .. } => {
                let r = (depth_cents.abs() / 1200.0).exp2();
                (self.base_freq_hz / r, self.base_freq_hz * r)
            }
            Contour::Glide { start_hz, end_hz } => (start_hz.min(end_hz), start_hz.max(end_hz)),
        };
        if !(lo >= F_MIN_HZ && hi <= F_MAX_HZ) {
            return Err(Error::Domain(format!(
                "contour spans [{lo:.3}, {hi:.3}] Hz, outside [{F_MIN_HZ}, {F_MAX_HZ}]"
            )));
        }
        for &(s, e) in &self.voicing_gaps {
            if !(s >= 0.0 && e > s && e <= self.duration_s) {
                return Err(Error::Domain(format!("gap [{s}, {e}) outside [0, {}]", self.duration_s)));
            }
        }
        Ok(())
    }
}

/// Samples at 16 kHz and one label per 10 ms frame (frame `t` at `t * 0.01` s).
pub fn synth_clip(spec: &SynthSpec) -> Result<(Vec<f64>, Vec<FrameLabel>)> {
    spec.validate()?;
    let sr = SAMPLE_RATE as f64;
    let n = spec.n_samples();
    let amp_norm: f64 = (1..=spec.n_harmonics).map(|h| 1.0 / h as f64).sum();

    let mut melody = vec![0.0; n];
    let mut phase = 0.0f64;
    let mut power = 0.0;
    let mut voiced_samples = 0usize;
    for (i, out) in melody.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let f0 = spec.f0_at(t);
        if !spec.in_gap(t) {
            let mut s = 0.0;
            for h in 1..=spec.n_harmonics {
                if h as f64 * f0 >= 0.5 * sr {
                    break;
                }
                s += (h as f64 * phase).sin() / h as f64;
            }
            *out = 0.5 * s / amp_norm;
            power += *out * *out;
            voiced_samples += 1;
        }
        phase = (phase + std::f64::consts::TAU * f0 / sr) % std::f64::consts::TAU;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = melody;
    for p in &spec.accompaniment {
        let a = 0.5 / amp_norm * p.gain;
        let offset = rng.random_range(0.0..std::f64::consts::TAU);
        for (i, s) in samples.iter_mut().enumerate() {
            *s += a * (std::f64::consts::TAU * p.freq_hz * i as f64 / sr + offset).sin();
        }
    }
    if let Some(snr) = spec.noise_snr_db {
        let p_sig = if voiced_samples > 0 { power / voiced_samples as f64 } else { 0.25 };
        let std = (p_sig / 10f64.powf(snr / 10.0)).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::Domain(e.to_string()))?;
        for s in samples.iter_mut() {
            *s += normal.sample(&mut rng);
        }
    }

    let labels = (0..spec.n_frames())
        .map(|t| {
            let time = t as f64 / FRAMES_PER_SECOND as f64;
            if spec.in_gap(time) {
                Ok(FrameLabel::UNVOICED)
            } else {
                FrameLabel::new(spec.f0_at(time))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, labels))
}

/// Dataset split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Parameters of the seeded clip generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Recipe {
    pub n_train: usize,
    pub n_test: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
    /// Probability that a clip contains one voicing gap.
    pub gap_probability: f64,
    pub snr_db: (f64, f64),
    /// Fraction of clips rendered at `low_snr_db` instead.
    pub low_snr_fraction: f64,
    pub low_snr_db: (f64, f64),
    /// Up to this many steady accompaniment partials per clip.
    pub max_accompaniment: usize,
    pub vibrato_rate_hz: (f64, f64),
    pub vibrato_depth_cents: (f64, f64),
}

impl Default for Recipe {
    fn default() -> Self {
        Recipe {
            n_train: 200,
            n_test: 50,
            duration_s: 1.0,
            seed: 7,
            min_freq_hz: 70.0,
            max_freq_hz: 700.0,
            gap_probability: 0.8,
            snr_db: (-5.0, 40.0),
            low_snr_fraction: 0.0,
            low_snr_db: (-6.0, 3.0),
            max_accompaniment: 0,
            vibrato_rate_hz: (4.0, 7.0),
            vibrato_depth_cents: (10.0, 60.0),
        }
    }
}

/// Expand a recipe into concrete clip specs: all training clips first.
pub fn recipe_specs(recipe: &Recipe) -> Vec<(SynthSpec, Split)> {
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let total = recipe.n_train + recipe.n_test;
    let (lo, hi) = (recipe.min_freq_hz.ln(), recipe.max_freq_hz.ln());
    (0..total)
        .map(|i| {
            let split = if i < recipe.n_train { Split::Train } else { Split::Test };
            let base = rng.random_range(lo..hi).exp();
            let contour = match rng.random_range(0..4) {
                0 | 1 => Contour::Vibrato {
                    rate_hz: rng.random_range(recipe.vibrato_rate_hz.0..=recipe.vibrato_rate_hz.1),
                    depth_cents: rng.random_range(recipe.vibrato_depth_cents.0..=recipe.vibrato_depth_cents.1),
                },
                2 => {
                    let semis: f64 = rng.random_range(-7.0..7.0);
                    let end = (base * (semis / 12.0).exp2()).clamp(recipe.min_freq_hz, recipe.max_freq_hz);
                    Contour::Glide { start_hz: base, end_hz: end }
                }
                _ => Contour::Constant,
            };
            let mut gaps = Vec::new();
            if rng.random_bool(recipe.gap_probability.clamp(0.0, 1.0)) {
                let len = rng.random_range(0.1f64..0.35).min(0.9 * recipe.duration_s);
                let start = rng.random_range(0.0..recipe.duration_s - len);
                gaps.push((start, start + len));
            }
            let snr = if rng.random_bool(recipe.low_snr_fraction.clamp(0.0, 1.0)) {
                rng.random_range(recipe.low_snr_db.0..=recipe.low_snr_db.1)
            } else {
                rng.random_range(recipe.snr_db.0..=recipe.snr_db.1)
            };
            let n_acc = if recipe.max_accompaniment > 0 { rng.random_range(0..=recipe.max_accompaniment) } else { 0 };
            let accompaniment = (0..n_acc)
                .map(|_| Partial {
                    freq_hz: rng.random_range(100.0f64..2000.0),
                    gain: rng.random_range(0.1..0.4),
                })
                .collect();
            let spec = SynthSpec {
                duration_s: recipe.duration_s,
                contour,
                base_freq_hz: base,
                n_harmonics: rng.random_range(4..=12),
                accompaniment,
                noise_snr_db: Some(snr),
                voicing_gaps: gaps,
                seed: rng.random(),
            };
            (spec, split)
        })
        .collect()
}
