//! Decoding predictive histograms into pitch, voicing and uncertainty, and
//! the dual-peak pruning post-processor.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{sigmoid, softmax_rows};
use crate::method::Method;
use crate::pitchgrid::{log_to_hz, BinGrid, GridKind};

/// Decoded output of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelodyEstimate {
    pub voiced: bool,
    /// Present iff the frame is estimated voiced.
    pub pitch_hz: Option<f64>,
    /// Pitch guess emitted even for frames estimated unvoiced.
    pub shadow_pitch_hz: f64,
    /// Point estimate in log-pitch units.
    pub y_hat: f64,
    /// Predicted standard deviation in log-pitch units.
    pub sigma_hat: f64,
}

/// Pruning thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneParams {
    /// Minimum probability for a peak to count.
    pub delta: f64,
    /// Half-width, in bins, of the suppressed region.
    pub delta_k: usize,
}

impl Default for PruneParams {
    fn default() -> Self {
        PruneParams { delta: 0.01, delta_k: 10 }
    }
}

/// Mean of the histogram over bin centers.
pub fn expectation(q: &[f64], grid: &BinGrid) -> f64 {
    let half = 0.5 * grid.bin_width;
    q.iter()
        .enumerate()
        .map(|(k, &qk)| qk * (grid.left_edge(k + 1) + half))
        .sum()
}

/// Standard deviation of the histogram around `y_hat`.
pub fn std_dev(q: &[f64], grid: &BinGrid, y_hat: f64) -> f64 {
    let half = 0.5 * grid.bin_width;
    q.iter()
        .enumerate()
        .map(|(k, &qk)| {
            let d = grid.left_edge(k + 1) + half - y_hat;
            qk * d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Renormalized mean over the voiced bins only. Falls back to the center
/// of the most probable voiced bin when the voiced mass is zero.
pub fn voiced_expectation(q: &[f64], grid: &BinGrid) -> f64 {
    let half = 0.5 * grid.bin_width;
    let range = grid.voiced_range0();
    let mass: f64 = q[range.clone()].iter().sum();
    if mass > 0.0 {
        range.map(|k| q[k] * (grid.left_edge(k + 1) + half)).sum::<f64>() / mass
    } else {
        let k = argmax_lowest(&q[range.clone()]) + range.start;
        grid.left_edge(k + 1) + half
    }
}

/// Index of the maximum; ties go to the lowest index.
fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Suppress the weaker of simultaneous unvoiced and voiced peaks, in place.
/// Returns whether the guard fired.
pub fn prune_in_place(q: &mut [f64], grid: &BinGrid, params: PruneParams) -> Result<bool> {
    if grid.kind != GridKind::Unified {
        return Err(Error::Precondition("pruning needs a grid with an unvoiced bin".into()));
    }
    if q.len() != grid.n_bins {
        return Err(Error::Shape(format!("{} probabilities for {} bins", q.len(), grid.n_bins)));
    }
    let range = grid.voiced_range0();
    let k_v = argmax_lowest(&q[range.clone()]) + range.start;
    let q_uv = q[0];
    let q_v = q[k_v];
    if !(q_uv >= params.delta && q_v >= params.delta) {
        return Ok(false);
    }
    // a tie keeps the unvoiced peak
    let suppressed = if q_uv < q_v {
        0..=params.delta_k.min(q.len() - 1)
    } else {
        k_v.saturating_sub(params.delta_k)..=(k_v + params.delta_k).min(q.len() - 1)
    };
    let removed: f64 = q[suppressed.clone()].iter().sum();
    q[suppressed.clone()].iter_mut().for_each(|x| *x = 0.0);
    let scale = 1.0 / (1.0 - removed);
    for (k, x) in q.iter_mut().enumerate() {
        if !suppressed.contains(&k) {
            *x *= scale;
        }
    }
    Ok(true)
}

/// Copying variant of [`prune_in_place`].
pub fn prune(q: &[f64], grid: &BinGrid, params: PruneParams) -> Result<Vec<f64>> {
    let mut out = q.to_vec();
    prune_in_place(&mut out, grid, params)?;
    Ok(out)
}

/// Head outputs of one frame, already passed through their link functions.
#[derive(Debug, Clone, Copy)]
pub enum FrameHeads<'a> {
    /// M1 / M2: histogram over the unified grid.
    Histogram { q: &'a [f64] },
    /// M3: histogram over the voiced grid and voicing probability.
    Bayes { q: &'a [f64], v_prob: f64 },
    /// M_MSE: scalar log-pitch.
    Scalar { mean: f64 },
    /// M_NLL: scalar mean and log-variance.
    Gaussian { mean: f64, log_var: f64 },
}

/// Decode one frame.
///
/// For unified grids the point estimate is the full-support expectation
/// (after optional pruning); the frame is voiced when it lies at or above
/// [`BinGrid::voicing_boundary`]. Frames decoded unvoiced carry the
/// voiced-bin expectation of the unpruned histogram as shadow pitch.
pub fn decode_frame(heads: FrameHeads<'_>, grid: &BinGrid, prune: Option<PruneParams>) -> Result<MelodyEstimate> {
    match heads {
        FrameHeads::Histogram { q } => {
            if grid.kind != GridKind::Unified {
                return Err(Error::Precondition("histogram-only heads need the unified grid".into()));
            }
            let mut pruned;
            let q_eff = match prune {
                Some(params) => {
                    pruned = q.to_vec();
                    prune_in_place(&mut pruned, grid, params)?;
                    &pruned[..]
                }
                None => q,
            };
            let y_hat = expectation(q_eff, grid);
            let sigma_hat = std_dev(q_eff, grid, y_hat);
            let voiced = y_hat >= grid.voicing_boundary();
            let shadow = if voiced {
                log_to_hz(y_hat)
            } else {
                log_to_hz(voiced_expectation(q, grid))
            };
            Ok(MelodyEstimate {
                voiced,
                pitch_hz: voiced.then_some(shadow),
                shadow_pitch_hz: shadow,
                y_hat,
                sigma_hat,
            })
        }
        FrameHeads::Bayes { q, v_prob } => {
            let y_hat = expectation(q, grid);
            let sigma_hat = std_dev(q, grid, y_hat);
            let voiced = v_prob >= 0.5;
            let hz = log_to_hz(y_hat);
            Ok(MelodyEstimate {
                voiced,
                pitch_hz: voiced.then_some(hz),
                shadow_pitch_hz: hz,
                y_hat,
                sigma_hat,
            })
        }
        FrameHeads::Scalar { mean } => Ok(scalar_estimate(mean, 0.0, grid)),
        FrameHeads::Gaussian { mean, log_var } => Ok(scalar_estimate(mean, (0.5 * log_var).exp(), grid)),
    }
}

fn scalar_estimate(y_hat: f64, sigma_hat: f64, grid: &BinGrid) -> MelodyEstimate {
    let voiced = y_hat >= grid.voicing_boundary();
    let shadow = if voiced {
        log_to_hz(y_hat)
    } else {
        log_to_hz(y_hat.clamp(0.0, grid.upper()))
    };
    MelodyEstimate {
        voiced,
        pitch_hz: voiced.then_some(shadow),
        shadow_pitch_hz: shadow,
        y_hat,
        sigma_hat,
    }
}

/// Decode raw network outputs (logits / regressor values) for a batch.
pub fn decode_outputs(
    method: Method,
    outputs: &[Array2<f64>],
    grid: &BinGrid,
    prune: Option<PruneParams>,
) -> Result<Vec<MelodyEstimate>> {
    let expect_heads = crate::net::head_widths(method, grid.n_bins).len();
    if outputs.len() != expect_heads {
        return Err(Error::Shape(format!("{} outputs for method {method}", outputs.len())));
    }
    let frames = outputs[0].nrows();
    match method {
        Method::M1 | Method::M2 | Method::M3 => {
            let q = softmax_rows(outputs[0].view());
            if q.ncols() != grid.n_bins {
                return Err(Error::Shape(format!("{} logits for {} bins", q.ncols(), grid.n_bins)));
            }
            (0..frames)
                .map(|t| {
                    let row = q.row(t);
                    let q_t = row.as_slice().expect("row-major");
                    let heads = if method == Method::M3 {
                        FrameHeads::Bayes { q: q_t, v_prob: sigmoid(outputs[1][[t, 0]]) }
                    } else {
                        FrameHeads::Histogram { q: q_t }
                    };
                    let prune = if method == Method::M3 { None } else { prune };
                    decode_frame(heads, grid, prune)
                })
                .collect()
        }
        Method::MMse => (0..frames)
            .map(|t| decode_frame(FrameHeads::Scalar { mean: outputs[0][[t, 0]] }, grid, None))
            .collect(),
        Method::MNll => (0..frames)
            .map(|t| {
                decode_frame(
                    FrameHeads::Gaussian { mean: outputs[0][[t, 0]], log_var: outputs[1][[t, 0]] },
                    grid,
                    None,
                )
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pitchgrid::{hz_to_log, make_grid, BIN_WIDTH};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot(n: usize, k: usize) -> Vec<f64> {
        let mut q = vec![0.0; n];
        q[k - 1] = 1.0;
        q
    }

    #[test]
    fn expectation_examples() {
        let g = make_grid(GridKind::VoicedOnly);
        assert_abs_diff_eq!(expectation(&one_hot(385, 17), &g), g.bin_center(17).unwrap(), epsilon = 1e-15);
        let uniform = vec![1.0 / 385.0; 385];
        assert_abs_diff_eq!(expectation(&uniform, &g), 385.0 * BIN_WIDTH / 2.0, epsilon = 1e-12);
        let mut q = vec![0.0; 385];
        q[9] = 0.5;
        q[99] = 0.5;
        let (c1, c2) = (g.bin_center(10).unwrap(), g.bin_center(100).unwrap());
        assert_abs_diff_eq!(expectation(&q, &g), 0.5 * (c1 + c2), epsilon = 1e-14);
        assert_abs_diff_eq!(std_dev(&q, &g, expectation(&q, &g)), (c2 - c1) / 2.0, epsilon = 1e-12);
        assert_eq!(std_dev(&one_hot(385, 3), &g, g.bin_center(3).unwrap()), 0.0);
    }

    #[test]
    fn std_dev_matches_two_pass_variance() {
        let g = BinGrid::custom(GridKind::VoicedOnly, 0.3, 0, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let raw: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            let q: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let centers = g.centers();
            let mean: f64 = q.iter().zip(&centers).map(|(a, c)| a * c).sum();
            let var: f64 = q.iter().zip(&centers).map(|(a, c)| a * (c - mean).powi(2)).sum();
            let y = expectation(&q, &g);
            assert_abs_diff_eq!(std_dev(&q, &g, y), var.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn prune_voiced_peak_wins() {
        let g = make_grid(GridKind::Unified);
        let mut q = vec![0.0; 435];
        q[0] = 0.4;
        q[99] = 0.6;
        let out = prune(&q, &g, PruneParams::default()).unwrap();
        assert!(out[..11].iter().all(|&x| x == 0.0));
        assert_eq!(out[99], 1.0);
    }

    #[test]
    fn prune_unvoiced_peak_wins() {
        let g = make_grid(GridKind::Unified);
        let mut q = vec![0.0; 435];
        q[0] = 0.6;
        q[99] = 0.4;
        let out = prune(&q, &g, PruneParams::default()).unwrap();
        assert!(out[89..=109].iter().all(|&x| x == 0.0));
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn prune_guard() {
        let g = make_grid(GridKind::Unified);
        let mut q = vec![0.0; 435];
        q[0] = 0.005;
        q[200] = 0.995;
        assert_eq!(prune(&q, &g, PruneParams::default()).unwrap(), q);
        assert!(prune(&vec![1.0 / 385.0; 385], &make_grid(GridKind::VoicedOnly), PruneParams::default()).is_err());
    }

    #[test]
    fn prune_tie_favours_unvoiced() {
        let g = make_grid(GridKind::Unified);
        let mut q = vec![0.0; 435];
        q[0] = 0.5;
        q[300] = 0.5;
        let out = prune(&q, &g, PruneParams::default()).unwrap();
        assert_eq!(out[0], 1.0);
        assert_eq!(out[300], 0.0);
    }

    #[test]
    fn decode_bayes_voiced() {
        let g = make_grid(GridKind::VoicedOnly);
        let k = g.bin_index(hz_to_log(220.0).unwrap());
        let q = one_hot(385, k);
        let e = decode_frame(FrameHeads::Bayes { q: &q, v_prob: 0.9 }, &g, None).unwrap();
        assert!(e.voiced);
        let cents = crate::pitchgrid::cents_between(e.pitch_hz.unwrap(), 220.0).unwrap();
        assert!(cents <= 1200.0 * BIN_WIDTH / 2.0 + 1e-9);
        assert_eq!(e.sigma_hat, 0.0);
        let e = decode_frame(FrameHeads::Bayes { q: &q, v_prob: 0.4 }, &g, None).unwrap();
        assert!(!e.voiced && e.pitch_hz.is_none() && e.shadow_pitch_hz.is_finite());
    }

    #[test]
    fn decode_unvoiced_bin() {
        let g = make_grid(GridKind::Unified);
        assert_abs_diff_eq!(g.voicing_boundary(), -0.25529, epsilon = 1e-12);
        let mut q = vec![0.0; 435];
        q[0] = 0.6;
        q[150] = 0.4;
        let e = decode_frame(FrameHeads::Histogram { q: &q }, &g, Some(PruneParams::default())).unwrap();
        assert!(!e.voiced);
        assert_abs_diff_eq!(e.y_hat, -0.51579, epsilon = 1e-12);
        // shadow pitch follows the voiced peak of the raw histogram
        assert_abs_diff_eq!(e.shadow_pitch_hz, log_to_hz(g.bin_center(151).unwrap()), epsilon = 1e-9);
        let unpruned = decode_frame(FrameHeads::Histogram { q: &q }, &g, None).unwrap();
        assert!(unpruned.voiced);
    }

    #[test]
    fn voiced_expectation_fallback() {
        let g = make_grid(GridKind::Unified);
        let q = one_hot(435, 1);
        assert_abs_diff_eq!(voiced_expectation(&q, &g), g.bin_center(51).unwrap());
    }

    #[test]
    fn scalar_decoding() {
        let g = make_grid(GridKind::Unified);
        let e = decode_frame(FrameHeads::Gaussian { mean: 2.0, log_var: -4.0 }, &g, None).unwrap();
        assert!(e.voiced);
        assert_abs_diff_eq!(e.sigma_hat, (-2.0f64).exp());
        let e = decode_frame(FrameHeads::Scalar { mean: -0.5 }, &g, None).unwrap();
        assert!(!e.voiced);
        assert_abs_diff_eq!(e.shadow_pitch_hz, log_to_hz(0.0));
    }
}
