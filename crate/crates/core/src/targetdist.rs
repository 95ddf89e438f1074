//! Gaussian target distributions discretized onto a [`BinGrid`], and the
//! dataset-level voiced/unvoiced class weights.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pitchgrid::{BinGrid, FrameLabel};

/// Per-bin target mass of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetWeights {
    /// `p_k = F(l_k + b_w) - F(l_k)`, one entry per bin. Not renormalized:
    /// mass falling outside the support is dropped.
    pub p: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
}

impl TargetWeights {
    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }
}

/// Voiced (`w1`) and unvoiced (`w0`) class weights, `w0 + w1 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w1: f64,
    pub w0: f64,
}

impl ClassWeights {
    /// Equal unit weights; not normalized, used for plain (unweighted) sums.
    pub const UNIT: ClassWeights = ClassWeights { w1: 1.0, w0: 1.0 };
    /// Voiced frames only.
    pub const VOICED_ONLY: ClassWeights = ClassWeights { w1: 1.0, w0: 0.0 };

    #[inline]
    pub fn weight(&self, voiced: bool) -> f64 {
        if voiced {
            self.w1
        } else {
            self.w0
        }
    }

    /// Swap the two weights (inverse-frequency balancing).
    pub fn inverted(self) -> Self {
        ClassWeights { w1: self.w0, w0: self.w1 }
    }
}

/// Normal CDF `Phi((x - mu) / sigma)`.
pub fn gaussian_cdf(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    Ok(cdf_unchecked(x, mu, sigma))
}

#[inline]
fn cdf_unchecked(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * libm::erfc(-(x - mu) / (sigma * std::f64::consts::SQRT_2))
}

/// Discretize `N(mu, sigma^2)` onto the bins of `grid`.
pub fn bin_weights(grid: &BinGrid, mu: f64, sigma: f64) -> Result<TargetWeights> {
    let mut p = vec![0.0; grid.n_bins];
    fill_bin_weights(grid, mu, sigma, &mut p)?;
    Ok(TargetWeights { p, mu, sigma })
}

/// Like [`bin_weights`] but writes into an existing row.
pub fn fill_bin_weights(grid: &BinGrid, mu: f64, sigma: f64, out: &mut [f64]) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if out.len() != grid.n_bins {
        return Err(Error::Shape(format!("row of {} for {} bins", out.len(), grid.n_bins)));
    }
    let mut lo = cdf_unchecked(grid.left_edge(1), mu, sigma);
    for (k, slot) in out.iter_mut().enumerate() {
        let hi = cdf_unchecked(grid.left_edge(k + 2), mu, sigma);
        *slot = hi - lo;
        lo = hi;
    }
    Ok(())
}

/// Target with the width fixed to the bin width.
pub fn fixed_sigma_targets(grid: &BinGrid, encoded: f64) -> Result<TargetWeights> {
    bin_weights(grid, encoded, grid.bin_width)
}

/// Target width from the current prediction error, floored.
///
/// The result is a plain value: callers treat it as a constant when
/// differentiating, so no gradient reaches the prediction through it.
#[inline]
pub fn dynamic_sigma(y: f64, y_hat: f64, floor: f64) -> f64 {
    (y - y_hat).abs().max(floor)
}

/// Voiced fraction of all frames as `w1`, remainder as `w0`.
pub fn class_weights(labels: &[FrameLabel]) -> Result<ClassWeights> {
    if labels.is_empty() {
        return Err(Error::Empty("class weights need at least one frame"));
    }
    let voiced = labels.iter().filter(|l| l.voiced()).count();
    let w1 = voiced as f64 / labels.len() as f64;
    Ok(ClassWeights { w1, w0: 1.0 - w1 })
}

/// Targets for a batch of frames, one row per frame. Rows where `mask` is
/// false are left at zero.
pub fn target_matrix(
    grid: &BinGrid,
    mus: &[f64],
    sigmas: &[f64],
    mask: Option<&[bool]>,
) -> Result<Array2<f64>> {
    if mus.len() != sigmas.len() || mask.is_some_and(|m| m.len() != mus.len()) {
        return Err(Error::Shape("target means, widths and mask differ in length".into()));
    }
    let mut out = Array2::zeros((mus.len(), grid.n_bins));
    for (t, mut row) in out.rows_mut().into_iter().enumerate() {
        if mask.is_some_and(|m| !m[t]) {
            continue;
        }
        fill_bin_weights(grid, mus[t], sigmas[t], row.as_slice_mut().expect("row-major"))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pitchgrid::{make_grid, GridKind, BIN_WIDTH};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn simpson_mass(lo: f64, hi: f64, mu: f64, sigma: f64) -> f64 {
        let n = 200;
        let h = (hi - lo) / n as f64;
        let pdf = |x: f64| {
            let z = (x - mu) / sigma;
            (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        };
        let mut s = pdf(lo) + pdf(hi);
        for i in 1..n {
            s += pdf(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn cdf_values() {
        assert_eq!(gaussian_cdf(0.0, 0.0, 1.0).unwrap(), 0.5);
        assert_abs_diff_eq!(gaussian_cdf(1.96, 0.0, 1.0).unwrap(), 0.9750, epsilon = 1e-3);
        assert!(gaussian_cdf(-10.0 * 0.3 + 1.0, 1.0, 0.3).unwrap() < 1e-20);
        assert!(gaussian_cdf(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn concentrated_mass() {
        let g = make_grid(GridKind::VoicedOnly);
        let j = 200;
        let t = bin_weights(&g, g.bin_center(j).unwrap(), BIN_WIDTH).unwrap();
        let argmax = t.p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 + 1;
        assert_eq!(argmax, j);
        assert!(t.total() >= 1.0 - 1e-6 && t.total() <= 1.0);
    }

    #[test]
    fn matches_simpson_oracle() {
        let g = make_grid(GridKind::VoicedOnly);
        let t = bin_weights(&g, 2.0, 0.01042).unwrap();
        for k in 1..=g.n_bins {
            let l = g.left_edge(k);
            let want = simpson_mass(l, l + g.bin_width, 2.0, 0.01042);
            assert_abs_diff_eq!(t.p[k - 1], want, epsilon = 1e-8);
        }
    }

    #[test]
    fn unvoiced_target_mass() {
        let g = make_grid(GridKind::Unified);
        let t = fixed_sigma_targets(&g, -0.521).unwrap();
        let first3: f64 = t.p[..3].iter().sum();
        // centered on the left support edge: about half the mass is outside
        assert_abs_diff_eq!(first3, 0.49865, epsilon = 1e-4);
        assert!(first3 > 0.93 * t.total());
    }

    #[test]
    fn fixed_targets_deterministic() {
        let g = make_grid(GridKind::Unified);
        let a = fixed_sigma_targets(&g, 2.0).unwrap();
        let b = fixed_sigma_targets(&g, 2.0).unwrap();
        assert_eq!(a, b);
        let argmax = a.p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 + 1;
        assert_eq!(argmax, g.bin_index(2.0));
    }

    #[test]
    fn dynamic_sigma_examples() {
        assert_abs_diff_eq!(dynamic_sigma(2.0, 2.5, 0.01042), 0.5);
        assert_eq!(dynamic_sigma(2.0, 2.0, 0.01042), 0.01042);
        assert_abs_diff_eq!(dynamic_sigma(0.0, -0.521, 0.01042), 0.521);
    }

    #[test]
    fn class_weight_examples() {
        let mk = |v: usize, u: usize| {
            let mut l = vec![FrameLabel::new(200.0).unwrap(); v];
            l.extend(std::iter::repeat_n(FrameLabel::UNVOICED, u));
            class_weights(&l).unwrap()
        };
        let w = mk(60, 40);
        assert_abs_diff_eq!(w.w1, 0.6);
        assert_abs_diff_eq!(w.w0, 0.4);
        assert_eq!(mk(5, 0), ClassWeights { w1: 1.0, w0: 0.0 });
        assert_eq!(mk(1, 3), ClassWeights { w1: 0.25, w0: 0.75 });
        assert_eq!(mk(1, 3).inverted(), ClassWeights { w1: 0.75, w0: 0.25 });
        assert!(class_weights(&[]).is_err());
    }

    #[test]
    fn masked_target_rows() {
        let g = make_grid(GridKind::VoicedOnly);
        let m = target_matrix(&g, &[1.0, 2.0], &[0.1, 0.1], Some(&[true, false])).unwrap();
        assert!(m.row(1).iter().all(|&x| x == 0.0));
        assert!(m.row(0).sum() > 0.99);
    }

    proptest! {
        #[test]
        fn telescoping(mu in -1.0f64..5.0, sigma in 0.001f64..2.0) {
            let g = make_grid(GridKind::Unified);
            let t = bin_weights(&g, mu, sigma).unwrap();
            let want = gaussian_cdf(g.upper(), mu, sigma).unwrap() - gaussian_cdf(g.a, mu, sigma).unwrap();
            prop_assert!((t.total() - want).abs() < 1e-12);
            prop_assert!(t.p.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }

        #[test]
        fn translation(m in -20i64..20, j in 150usize..250, sigma in 0.005f64..0.05) {
            let g = make_grid(GridKind::VoicedOnly);
            let mu = g.bin_center(j).unwrap() + 0.3 * g.bin_width;
            let a = bin_weights(&g, mu, sigma).unwrap();
            let b = bin_weights(&g, mu + m as f64 * g.bin_width, sigma).unwrap();
            for k in 100..300usize {
                let shifted = (k as i64 + m) as usize;
                prop_assert!((a.p[k] - b.p[shifted]).abs() < 1e-9);
            }
        }

        #[test]
        fn dynamic_sigma_symmetric(y in -1.0f64..4.0, yh in -1.0f64..4.0, floor in 1e-4f64..0.1) {
            let s = dynamic_sigma(y, yh, floor);
            prop_assert_eq!(s, dynamic_sigma(yh, y, floor));
            prop_assert!(s >= floor);
        }
    }
}
