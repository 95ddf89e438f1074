//! Desk-scale per-frame network: an MLP feature extractor with LeakyReLU
//! activations and one dense head per output of the configured method.
//!
//! Head layout by method:
//!
//! | method   | heads                                  |
//! |----------|----------------------------------------|
//! | M1, M2   | pitch logits (K = 435)                 |
//! | M3       | pitch logits (K = 385), voicing logit  |
//! | M_MSE    | scalar log-pitch                       |
//! | M_NLL    | mean, log-variance                     |

pub mod checkpoint;
pub mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::method::Method;

pub use checkpoint::Checkpoint;
pub use train::{
    dynamic_targets, evaluate_loss, grad_check, train, train_from, EpochRecord, GradCheckInstance, TrainConfig, TrainOutcome,
    TrainingSet,
};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Fully connected layer, `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..=limit));
        Dense { weight, bias: Array1::zeros(fan_out) }
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Output widths of the heads for `method` with a histogram of `n_bins`.
pub fn head_widths(method: Method, n_bins: usize) -> Vec<usize> {
    match method {
        Method::M1 | Method::M2 => vec![n_bins],
        Method::M3 => vec![n_bins, 1],
        Method::MMse => vec![1],
        Method::MNll => vec![1, 1],
    }
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub method: Method,
    pub layers: Vec<Dense>,
    pub heads: Vec<Dense>,
    /// Bumped by every update so stale forward caches can be detected.
    #[serde(default)]
    pub generation: u64,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(method: Method, input_dim: usize, hidden: &[usize], n_bins: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = input_dim;
        let mut layers = Vec::with_capacity(hidden.len());
        for &h in hidden {
            layers.push(Dense::glorot(fan_in, h, &mut rng));
            fan_in = h;
        }
        let heads = head_widths(method, n_bins)
            .into_iter()
            .map(|w| Dense::glorot(fan_in, w, &mut rng))
            .collect();
        ModelParams { method, layers, heads, generation: 0 }
    }

    /// Same shapes, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.fan_in(), d.fan_out());
        ModelParams {
            method: self.method,
            layers: self.layers.iter().map(z).collect(),
            heads: self.heads.iter().map(z).collect(),
            generation: self.generation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .first()
            .or_else(|| self.heads.first())
            .map_or(0, Dense::fan_in)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().chain(&self.heads).map(Dense::n_params).sum()
    }

    /// Every weight and bias in a fixed order (layers, then heads; weight
    /// before bias).
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for d in self.layers.iter().chain(&self.heads) {
            v.extend(d.weight.iter());
            v.extend(d.bias.iter());
        }
        v
    }

    /// Mutable access to parameter `i` in [`ModelParams::flat`] order.
    pub fn flat_mut(&mut self, mut i: usize) -> &mut f64 {
        for d in self.layers.iter_mut().chain(self.heads.iter_mut()) {
            if i < d.weight.len() {
                return d.weight.iter_mut().nth(i).expect("in range");
            }
            i -= d.weight.len();
            if i < d.bias.len() {
                return &mut d.bias[i];
            }
            i -= d.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .chain(&self.heads)
            .all(|d| d.weight.iter().chain(d.bias.iter()).all(|x| x.is_finite()))
    }
}

/// Gradient of a scalar loss with respect to every parameter; same layout
/// as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Dense>,
    pub heads: Vec<Dense>,
}

impl ParamGrads {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for d in self.layers.iter().chain(&self.heads) {
            v.extend(d.weight.iter());
            v.extend(d.bias.iter());
        }
        v
    }

    pub fn is_zero(&self) -> bool {
        self.flat().iter().all(|&g| g == 0.0)
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    input: Array2<f64>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Array2<f64>>,
    /// Post-activation of every hidden layer.
    post: Vec<Array2<f64>>,
}

/// Raw head outputs (logits or regressor values), one matrix per head.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub outputs: Vec<Array2<f64>>,
    pub cache: ForwardCache,
}

#[inline]
fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

/// Run the network on a `frames x features` matrix.
pub fn forward(params: &ModelParams, features: ArrayView2<f64>) -> Result<ForwardPass> {
    if features.ncols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "model expects {} features per frame, got {}",
            params.input_dim(),
            features.ncols()
        )));
    }
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let x = post.last().map_or(features, |a| a.view());
        let z = layer.apply(x);
        post.push(z.mapv(leaky));
        pre.push(z);
    }
    let last = post.last().map_or(features, |a| a.view());
    let outputs = params.heads.iter().map(|h| h.apply(last)).collect();
    Ok(ForwardPass {
        outputs,
        cache: ForwardCache {
            generation: params.generation,
            input: features.to_owned(),
            pre,
            post,
        },
    })
}

/// Backpropagate per-head output gradients to parameter gradients.
pub fn backward(params: &ModelParams, cache: &ForwardCache, head_grads: &[Array2<f64>]) -> Result<ParamGrads> {
    if cache.generation != params.generation {
        return Err(Error::StaleCache { cache: cache.generation, params: params.generation });
    }
    if head_grads.len() != params.heads.len() {
        return Err(Error::Shape(format!("{} head gradients for {} heads", head_grads.len(), params.heads.len())));
    }
    let last = cache.post.last().unwrap_or(&cache.input);
    let frames = last.nrows();
    let mut d_last = Array2::<f64>::zeros(last.dim());
    let mut heads = Vec::with_capacity(params.heads.len());
    for (head, g) in params.heads.iter().zip(head_grads) {
        if g.dim() != (frames, head.fan_out()) {
            return Err(Error::Shape(format!("head gradient {:?}, expected {:?}", g.dim(), (frames, head.fan_out()))));
        }
        heads.push(Dense {
            weight: last.t().dot(g),
            bias: g.sum_axis(Axis(0)),
        });
        d_last += &g.dot(&head.weight.t());
    }

    let mut layers = Vec::with_capacity(params.layers.len());
    let mut d_post = d_last;
    for (i, layer) in params.layers.iter().enumerate().rev() {
        let mut dz = d_post;
        dz.zip_mut_with(&cache.pre[i], |d, &z| {
            if z <= 0.0 {
                *d *= LEAKY_SLOPE;
            }
        });
        let x = if i == 0 { &cache.input } else { &cache.post[i - 1] };
        layers.push(Dense {
            weight: x.t().dot(&dz),
            bias: dz.sum_axis(Axis(0)),
        });
        d_post = if i > 0 { dz.dot(&layer.weight.t()) } else { Array2::zeros((0, 0)) };
    }
    layers.reverse();
    Ok(ParamGrads { layers, heads })
}

/// `params - alpha * grads`, elementwise.
pub fn sgd_step(params: &ModelParams, grads: &ParamGrads, alpha: f64) -> ModelParams {
    let mut next = params.clone();
    sgd_step_in_place(&mut next, grads, alpha);
    next
}

pub(crate) fn sgd_step_in_place(params: &mut ModelParams, grads: &ParamGrads, alpha: f64) {
    for (p, g) in params
        .layers
        .iter_mut()
        .chain(params.heads.iter_mut())
        .zip(grads.layers.iter().chain(&grads.heads))
    {
        p.weight.scaled_add(-alpha, &g.weight);
        p.bias.scaled_add(-alpha, &g.bias);
    }
    params.generation += 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::softmax_rows;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_params_give_uniform_softmax() {
        let p = ModelParams::init(Method::M1, 6, &[4], 10, 0).zeros_like();
        let x = Array2::from_elem((3, 6), 0.7);
        let out = forward(&p, x.view()).unwrap();
        let q = softmax_rows(out.outputs[0].view());
        assert!(q.iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn deterministic_init_and_forward() {
        let a = ModelParams::init(Method::M3, 5, &[8, 4], 12, 42);
        let b = ModelParams::init(Method::M3, 5, &[8, 4], 12, 42);
        assert_eq!(a, b);
        let x = Array2::from_shape_fn((2, 5), |(i, j)| (i * 5 + j) as f64 * 0.1);
        let oa = forward(&a, x.view()).unwrap();
        let ob = forward(&b, x.view()).unwrap();
        assert_eq!(oa.outputs, ob.outputs);
        assert_eq!(oa.outputs[0].dim(), (2, 12));
        assert_eq!(oa.outputs[1].dim(), (2, 1));
    }

    #[test]
    fn hand_computed_single_layer() {
        // no hidden layers: logits = x W + b
        let mut p = ModelParams::init(Method::M1, 2, &[], 4, 0);
        p.heads[0].weight = array![[1.0, 0.0, -1.0, 2.0], [0.5, 1.0, 0.0, -1.0]];
        p.heads[0].bias = array![0.1, 0.2, 0.3, 0.4];
        let out = forward(&p, array![[2.0, 4.0]].view()).unwrap();
        let want = [2.0 + 2.0 + 0.1, 4.0 + 0.2, -2.0 + 0.3, 4.0 - 4.0 + 0.4];
        for (k, w) in want.iter().enumerate() {
            assert_abs_diff_eq!(out.outputs[0][[0, k]], *w, epsilon = 1e-15);
        }
    }

    #[test]
    fn hidden_layer_uses_leaky_relu() {
        let mut p = ModelParams::init(Method::MMse, 1, &[2], 0, 0);
        p.layers[0].weight = array![[1.0, -1.0]];
        p.heads[0].weight = array![[1.0], [1.0]];
        let out = forward(&p, array![[3.0]].view()).unwrap();
        assert_abs_diff_eq!(out.outputs[0][[0, 0]], 3.0 - 0.03, epsilon = 1e-15);
    }

    #[test]
    fn zero_upstream_gradient() {
        let p = ModelParams::init(Method::M1, 3, &[4], 5, 1);
        let x = Array2::from_elem((2, 3), 0.5);
        let fp = forward(&p, x.view()).unwrap();
        let g = backward(&p, &fp.cache, &[Array2::zeros((2, 5))]).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn stale_cache_rejected() {
        let p = ModelParams::init(Method::M1, 3, &[4], 5, 1);
        let x = Array2::from_elem((2, 3), 0.5);
        let fp = forward(&p, x.view()).unwrap();
        let g = backward(&p, &fp.cache, &[Array2::ones((2, 5))]).unwrap();
        let p2 = sgd_step(&p, &g, 0.1);
        assert!(matches!(backward(&p2, &fp.cache, &[Array2::ones((2, 5))]), Err(Error::StaleCache { .. })));
    }

    #[test]
    fn input_width_checked() {
        let p = ModelParams::init(Method::M1, 3, &[4], 5, 1);
        assert!(forward(&p, Array2::zeros((2, 4)).view()).is_err());
    }

    #[test]
    fn sgd_examples() {
        let mut p = ModelParams::init(Method::MMse, 1, &[], 0, 0);
        p.heads[0].weight[[0, 0]] = 1.0;
        let mut g = ParamGrads { layers: vec![], heads: vec![Dense::zeros(1, 1)] };
        g.heads[0].weight[[0, 0]] = 2.0;
        let stepped = sgd_step(&p, &g, 0.1);
        assert_abs_diff_eq!(stepped.heads[0].weight[[0, 0]], 0.8, epsilon = 1e-15);
        let same = sgd_step(&p, &g, 0.0);
        assert_eq!(same.flat(), p.flat());
    }

    #[test]
    fn flat_indexing_round_trip() {
        let mut p = ModelParams::init(Method::MNll, 3, &[2], 0, 9);
        let flat = p.flat();
        assert_eq!(flat.len(), p.n_params());
        for (i, &v) in flat.iter().enumerate() {
            assert_eq!(*p.flat_mut(i), v);
        }
    }
}
