//! Training losses with closed-form gradients with respect to the
//! pre-activation outputs (softmax logits, sigmoid logit, or raw regressor
//! outputs).
//!
//! Histogram and cross-entropy losses are sums over frames; the Gaussian
//! NLL and MSE are means. [`LossValue::frames`] lets callers convert.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::targetdist::ClassWeights;

/// Added inside every logarithm.
pub const EPS_LOG: f64 = 1e-12;

/// Loss value and its gradient, one gradient row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Array2<f64>,
    pub frames: usize,
}

impl LossValue {
    /// Per-frame mean of a summed loss.
    pub fn mean(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.value / self.frames as f64
        }
    }
}

/// Row-wise softmax, max-shifted.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Histogram loss of one frame, `-sum_k p_k log q_k`.
///
/// The gradient is taken with respect to the logits of `q = softmax(z)`:
/// `q * sum(p) - p`.
pub fn histogram_loss(p: ArrayView1<f64>, q: ArrayView1<f64>) -> Result<LossValue> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("target has {} bins, prediction {}", p.len(), q.len())));
    }
    let p2 = p.insert_axis(Axis(0));
    let q2 = q.insert_axis(Axis(0));
    weighted_histogram_loss(p2, q2, &[true], ClassWeights::UNIT)
}

/// `-sum_t w_{c_t} sum_k p_tk log q_tk` over a batch.
pub fn weighted_histogram_loss(
    p: ArrayView2<f64>,
    q: ArrayView2<f64>,
    voiced: &[bool],
    weights: ClassWeights,
) -> Result<LossValue> {
    if p.dim() != q.dim() || voiced.len() != p.nrows() {
        return Err(Error::Shape(format!(
            "targets {:?}, predictions {:?}, {} voicing flags",
            p.dim(),
            q.dim(),
            voiced.len()
        )));
    }
    let mut grad = Array2::zeros(q.dim());
    let mut value = 0.0;
    for (t, ((p_row, q_row), mut g_row)) in p
        .rows()
        .into_iter()
        .zip(q.rows())
        .zip(grad.rows_mut())
        .enumerate()
    {
        let w = weights.weight(voiced[t]);
        if w == 0.0 {
            continue;
        }
        let mut ce = 0.0;
        let mut mass = 0.0;
        for (&pk, &qk) in p_row.iter().zip(q_row.iter()) {
            if pk != 0.0 {
                ce -= pk * (qk + EPS_LOG).ln();
            }
            mass += pk;
        }
        value += w * ce;
        Zip::from(&mut g_row)
            .and(&p_row)
            .and(&q_row)
            .for_each(|g, &pk, &qk| *g = w * (qk * mass - pk));
    }
    Ok(LossValue { value, grad, frames: p.nrows() })
}

/// Weighted binary cross-entropy on voicing probabilities.
///
/// Probabilities are clamped to `[EPS_LOG, 1 - EPS_LOG]`; the gradient is
/// with respect to the pre-sigmoid logit, `w * (q - v)`.
pub fn weighted_bce(voiced: &[bool], q_v: ArrayView1<f64>, weights: ClassWeights) -> Result<LossValue> {
    if voiced.len() != q_v.len() {
        return Err(Error::Shape(format!("{} flags, {} probabilities", voiced.len(), q_v.len())));
    }
    let mut grad = Array2::zeros((q_v.len(), 1));
    let mut value = 0.0;
    for (t, (&v, &q)) in voiced.iter().zip(q_v.iter()).enumerate() {
        let w = weights.weight(v);
        let q = q.clamp(EPS_LOG, 1.0 - EPS_LOG);
        let target = if v { 1.0 } else { 0.0 };
        value -= w * if v { q.ln() } else { (1.0 - q).ln() };
        grad[[t, 0]] = w * (q - target);
    }
    Ok(LossValue { value, grad, frames: voiced.len() })
}

/// Combined voicing + pitch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesLoss {
    pub value: f64,
    /// Gradient on the voicing logit, frames x 1.
    pub voicing_grad: Array2<f64>,
    /// Gradient on the pitch logits, frames x K.
    pub pitch_grad: Array2<f64>,
    pub frames: usize,
}

/// `bce + lambda * hl_voiced`. `hl_voiced` must already be masked to voiced frames.
pub fn bayes_loss(bce: LossValue, hl_voiced: LossValue, lambda: f64) -> BayesLoss {
    BayesLoss {
        value: bce.value + lambda * hl_voiced.value,
        voicing_grad: bce.grad,
        pitch_grad: hl_voiced.grad * lambda,
        frames: bce.frames,
    }
}

/// Mean Gaussian NLL with log-variance parameterization.
///
/// Gradient columns: 0 is d/d mean, 1 is d/d log-variance.
pub fn gaussian_nll_loss(y: &[f64], mu_hat: ArrayView1<f64>, s_hat: ArrayView1<f64>) -> Result<LossValue> {
    let n = y.len();
    if mu_hat.len() != n || s_hat.len() != n {
        return Err(Error::Shape(format!("{n} targets, {} means, {} log-variances", mu_hat.len(), s_hat.len())));
    }
    if n == 0 {
        return Err(Error::Empty("gaussian nll needs at least one frame"));
    }
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let inv_n = 1.0 / n as f64;
    let mut grad = Array2::zeros((n, 2));
    let mut value = 0.0;
    for t in 0..n {
        let r = y[t] - mu_hat[t];
        let inv_var = (-s_hat[t]).exp();
        value += 0.5 * s_hat[t] + 0.5 * r * r * inv_var + half_log_2pi;
        grad[[t, 0]] = -r * inv_var * inv_n;
        grad[[t, 1]] = (0.5 - 0.5 * r * r * inv_var) * inv_n;
    }
    Ok(LossValue { value: value * inv_n, grad, frames: n })
}

/// Mean squared error; gradient `2 (y_hat - y) / N` as a single column.
pub fn mse_loss(y: &[f64], y_hat: ArrayView1<f64>) -> Result<LossValue> {
    let n = y.len();
    if y_hat.len() != n {
        return Err(Error::Shape(format!("{n} targets, {} predictions", y_hat.len())));
    }
    if n == 0 {
        return Err(Error::Empty("mse needs at least one frame"));
    }
    let diff: Array1<f64> = &y_hat - &ArrayView1::from(y);
    let value = diff.mapv(|d| d * d).sum() / n as f64;
    let grad = (diff * (2.0 / n as f64)).insert_axis(Axis(1));
    Ok(LossValue { value, grad, frames: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    fn random_dist(rng: &mut ChaCha8Rng, k: usize) -> Array1<f64> {
        let v: Array1<f64> = (0..k).map(|_| rng.random::<f64>() + 0.01).collect();
        let s = v.sum();
        v / s
    }

    #[test]
    fn perfect_match_is_zero() {
        let mut p = Array1::zeros(8);
        p[3] = 1.0;
        let l = histogram_loss(p.view(), p.view()).unwrap();
        assert!(l.value.abs() < 1e-11);
    }

    #[test]
    fn uniform_prediction_gives_log_k() {
        let mut p = Array1::zeros(8);
        p[5] = 1.0;
        let q = Array1::from_elem(8, 1.0 / 8.0);
        let l = histogram_loss(p.view(), q.view()).unwrap();
        assert_abs_diff_eq!(l.value, 8f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn length_mismatch() {
        let p = Array1::zeros(4);
        let q = Array1::zeros(5);
        assert!(matches!(histogram_loss(p.view(), q.view()), Err(Error::Shape(_))));
    }

    #[test]
    fn hl_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let z: Array1<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = random_dist(&mut rng, 8) * 0.9;
            let loss = |z: &Array1<f64>| {
                let q = softmax_rows(z.view().insert_axis(Axis(0)));
                histogram_loss(p.view(), q.row(0)).unwrap().value
            };
            let q = softmax_rows(z.view().insert_axis(Axis(0)));
            let g = histogram_loss(p.view(), q.row(0)).unwrap().grad;
            for j in 0..8 {
                let h = 1e-6;
                let mut zp = z.clone();
                zp[j] += h;
                let mut zm = z.clone();
                zm[j] -= h;
                let fd = (loss(&zp) - loss(&zm)) / (2.0 * h);
                assert!(rel_err(g[[0, j]], fd) < 1e-5, "bin {j}: {} vs {fd}", g[[0, j]]);
            }
        }
    }

    #[test]
    fn gradient_identity_for_normalized_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_dist(&mut rng, 6);
        let q = random_dist(&mut rng, 6);
        let g = histogram_loss(p.view(), q.view()).unwrap().grad;
        for k in 0..6 {
            assert_abs_diff_eq!(g[[0, k]], q[k] - p[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn weighted_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Array2::from_shape_fn((4, 8), |_| rng.random::<f64>() / 8.0);
        let q = softmax_rows(Array2::from_shape_fn((4, 8), |_| rng.random::<f64>()).view());
        let all_voiced = [true; 4];
        let unit = weighted_histogram_loss(p.view(), q.view(), &all_voiced, ClassWeights::UNIT).unwrap();
        let summed: f64 = (0..4)
            .map(|t| histogram_loss(p.row(t), q.row(t)).unwrap().value)
            .sum();
        assert_abs_diff_eq!(unit.value, summed, epsilon = 1e-12);
        let half = weighted_histogram_loss(p.view(), q.view(), &all_voiced, ClassWeights { w1: 0.5, w0: 0.5 }).unwrap();
        assert_abs_diff_eq!(half.value, 0.5 * unit.value, epsilon = 1e-12);
        assert_abs_diff_eq!(half.mean(), half.value / 4.0);
    }

    #[test]
    fn weighted_hl_fd_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = Array2::from_shape_fn((4, 8), |_| rng.random_range(-1.5..1.5));
        let p = Array2::from_shape_fn((4, 8), |_| rng.random::<f64>() / 8.0);
        let voiced = [true, false, true, false];
        let w = ClassWeights { w1: 0.7, w0: 0.3 };
        let f = |z: &Array2<f64>| {
            let q = softmax_rows(z.view());
            weighted_histogram_loss(p.view(), q.view(), &voiced, w).unwrap().value
        };
        let g = weighted_histogram_loss(p.view(), softmax_rows(z.view()).view(), &voiced, w)
            .unwrap()
            .grad;
        for ((t, k), &a) in g.indexed_iter() {
            let h = 1e-6;
            let mut zp = z.clone();
            zp[[t, k]] += h;
            let mut zm = z.clone();
            zm[[t, k]] -= h;
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            assert!(rel_err(a, fd) < 1e-5);
        }
    }

    #[test]
    fn bce_examples() {
        let w = ClassWeights { w1: 1.0, w0: 1.0 };
        let l = weighted_bce(&[true], array![1.0 - 1e-12].view(), w).unwrap();
        assert!(l.value.abs() < 1e-10);
        let l = weighted_bce(&[true], array![0.5].view(), w).unwrap();
        assert_abs_diff_eq!(l.value, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn bce_fd_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z: Array1<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let v: Vec<bool> = (0..6).map(|_| rng.random()).collect();
        let w = ClassWeights { w1: 0.8, w0: 0.2 };
        let f = |z: &Array1<f64>| weighted_bce(&v, z.mapv(sigmoid).view(), w).unwrap().value;
        let g = weighted_bce(&v, z.mapv(sigmoid).view(), w).unwrap().grad;
        for t in 0..6 {
            let h = 1e-6;
            let mut zp = z.clone();
            zp[t] += h;
            let mut zm = z.clone();
            zm[t] -= h;
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            assert!(rel_err(g[[t, 0]], fd) < 1e-5);
        }
    }

    #[test]
    fn bayes_combination() {
        let one = |w: usize| LossValue { value: 1.0, grad: Array2::ones((2, w)), frames: 2 };
        let b = bayes_loss(one(1), one(3), 0.6);
        assert_abs_diff_eq!(b.value, 1.6);
        assert_abs_diff_eq!(b.pitch_grad[[0, 0]], 0.6);
        let b0 = bayes_loss(one(1), one(3), 0.0);
        assert_eq!(b0.value, 1.0);
        assert!(b0.pitch_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unvoiced_batch_has_no_pitch_gradient() {
        let q = softmax_rows(Array2::from_elem((3, 5), 0.2).view());
        let p = Array2::from_elem((3, 5), 0.2);
        let hl = weighted_histogram_loss(p.view(), q.view(), &[false; 3], ClassWeights::VOICED_ONLY).unwrap();
        let bce = weighted_bce(&[false; 3], array![0.3, 0.2, 0.1].view(), ClassWeights { w1: 0.5, w0: 0.5 }).unwrap();
        let bce_value = bce.value;
        let b = bayes_loss(bce, hl, 0.6);
        assert_eq!(b.value, bce_value);
        assert!(b.pitch_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn nll_examples() {
        let l = gaussian_nll_loss(&[1.3], array![1.3].view(), array![0.0].view()).unwrap();
        assert_abs_diff_eq!(l.value, 0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-15);
        assert_eq!(l.grad[[0, 0]], 0.0);
    }

    #[test]
    fn nll_fd_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..4.0)).collect();
        let mu: Array1<f64> = (0..5).map(|_| rng.random_range(0.0..4.0)).collect();
        let s: Array1<f64> = (0..5).map(|_| rng.random_range(-2.0..1.0)).collect();
        let g = gaussian_nll_loss(&y, mu.view(), s.view()).unwrap().grad;
        let h = 1e-6;
        for t in 0..5 {
            let mut mp = mu.clone();
            mp[t] += h;
            let mut mm = mu.clone();
            mm[t] -= h;
            let fd = (gaussian_nll_loss(&y, mp.view(), s.view()).unwrap().value
                - gaussian_nll_loss(&y, mm.view(), s.view()).unwrap().value)
                / (2.0 * h);
            assert!(rel_err(g[[t, 0]], fd) < 1e-5);
            let mut sp = s.clone();
            sp[t] += h;
            let mut sm = s.clone();
            sm[t] -= h;
            let fd = (gaussian_nll_loss(&y, mu.view(), sp.view()).unwrap().value
                - gaussian_nll_loss(&y, mu.view(), sm.view()).unwrap().value)
                / (2.0 * h);
            assert!(rel_err(g[[t, 1]], fd) < 1e-5);
        }
    }

    #[test]
    fn mse_examples() {
        let l = mse_loss(&[1.0, 2.0], array![1.0, 2.0].view()).unwrap();
        assert_eq!(l.value, 0.0);
        let l = mse_loss(&[0.0], array![1.0].view()).unwrap();
        assert_eq!((l.value, l.grad[[0, 0]]), (1.0, 2.0));
    }

    #[test]
    fn mse_fd_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let yh: Array1<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = mse_loss(&y, yh.view()).unwrap().grad;
        for t in 0..5 {
            let h = 1e-6;
            let mut p = yh.clone();
            p[t] += h;
            let mut m = yh.clone();
            m[t] -= h;
            let fd = (mse_loss(&y, p.view()).unwrap().value - mse_loss(&y, m.view()).unwrap().value) / (2.0 * h);
            assert!(rel_err(g[[t, 0]], fd) < 1e-6);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let z = array![[1000.0, 0.0, -1000.0], [0.1, 0.2, 0.3]];
        let q = softmax_rows(z.view());
        for row in q.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }
}
