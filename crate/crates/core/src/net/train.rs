//! Gradient-descent training for every method, plus a finite-difference
//! gradient checker.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, forward, sgd_step_in_place, ModelParams, ParamGrads};
use crate::error::{Error, Result};
use crate::infer::expectation;
use crate::losses::{
    bayes_loss, gaussian_nll_loss, mse_loss, sigmoid, softmax_rows, weighted_bce, weighted_histogram_loss,
};
use crate::method::Method;
use crate::pitchgrid::{encode_frame, hz_to_log, BinGrid, FrameLabel};
use crate::targetdist::{class_weights, dynamic_sigma, target_matrix, ClassWeights};

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 gives plain gradient descent.
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Context frames on each side of the center frame (feature stacking).
    pub context_frames: usize,
    pub hidden: Vec<usize>,
    /// Weight of the pitch histogram loss in the M3 objective.
    pub lambda: f64,
    /// Lower bound of the dynamic target width (log-pitch units).
    pub sigma_floor: f64,
    pub batch_size: usize,
    /// Swap the voiced/unvoiced class weights.
    pub invert_class_weights: bool,
    /// Stop after this many updates, regardless of `epochs`.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::M3,
            learning_rate: 0.02,
            momentum: 0.9,
            epochs: 20,
            seed: 0,
            context_frames: 2,
            hidden: vec![128, 64],
            lambda: 0.6,
            sigma_floor: crate::pitchgrid::BIN_WIDTH,
            batch_size: 64,
            invert_class_weights: false,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::Config(format!("sigma_floor must be > 0, got {}", self.sigma_floor)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Frame features with their labels.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub features: Array2<f64>,
    pub labels: Vec<FrameLabel>,
}

impl TrainingSet {
    pub fn new(features: Array2<f64>, labels: Vec<FrameLabel>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!("{} feature rows, {} labels", features.nrows(), labels.len())));
        }
        Ok(TrainingSet { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based, counted across resumed runs.
    pub epoch: usize,
    /// Per-frame mean training loss over the epoch.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<EpochRecord>,
    pub class_weights: ClassWeights,
}

/// Per-frame regression targets and voicing flags on a grid.
struct FrameTargets {
    encoded: Vec<f64>,
    voiced: Vec<bool>,
}

fn frame_targets(labels: &[FrameLabel], grid: &BinGrid) -> Result<FrameTargets> {
    let voiced: Vec<bool> = labels.iter().map(FrameLabel::voiced).collect();
    let encoded = labels
        .iter()
        .map(|&l| match grid.unvoiced_value() {
            Some(_) => encode_frame(l, grid),
            // voiced-only grid: unvoiced frames are masked, placeholder value
            None if l.voiced() => hz_to_log(l.freq_hz),
            None => Ok(0.0),
        })
        .collect::<Result<_>>()?;
    Ok(FrameTargets { encoded, voiced })
}

/// Targets for M2 / M3 from the current predictions: Gaussian around the
/// label with width `max(|y - y_hat|, floor)`. For M3, unvoiced rows are zero.
pub fn dynamic_targets(
    method: Method,
    pitch_logits: ArrayView2<f64>,
    labels: &[FrameLabel],
    grid: &BinGrid,
    floor: f64,
) -> Result<Array2<f64>> {
    let ft = frame_targets(labels, grid)?;
    let q = softmax_rows(pitch_logits);
    let sigmas: Vec<f64> = q
        .rows()
        .into_iter()
        .zip(&ft.encoded)
        .map(|(row, &y)| dynamic_sigma(y, expectation(row.as_slice().expect("row-major"), grid), floor))
        .collect();
    let mask = (method == Method::M3).then_some(&ft.voiced[..]);
    target_matrix(grid, &ft.encoded, &sigmas, mask)
}

/// Loss and output gradients given fixed targets. The value is a per-frame
/// mean and the gradients are scaled to match.
fn loss_given_outputs(
    method: Method,
    outputs: &[Array2<f64>],
    targets: Option<ArrayView2<f64>>,
    ft: &FrameTargets,
    cw: ClassWeights,
    lambda: f64,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let n = ft.voiced.len() as f64;
    match method {
        Method::M1 | Method::M2 => {
            let p = targets.ok_or_else(|| Error::Precondition("histogram methods need targets".into()))?;
            let q = softmax_rows(outputs[0].view());
            let l = weighted_histogram_loss(p, q.view(), &ft.voiced, cw)?;
            Ok((l.value / n, vec![l.grad / n]))
        }
        Method::M3 => {
            let p = targets.ok_or_else(|| Error::Precondition("histogram methods need targets".into()))?;
            let q = softmax_rows(outputs[0].view());
            let qv = outputs[1].column(0).mapv(sigmoid);
            let bce = weighted_bce(&ft.voiced, qv.view(), cw)?;
            let hl = weighted_histogram_loss(p, q.view(), &ft.voiced, ClassWeights::VOICED_ONLY)?;
            let b = bayes_loss(bce, hl, lambda);
            Ok((b.value / n, vec![b.pitch_grad / n, b.voicing_grad / n]))
        }
        Method::MMse => {
            let l = mse_loss(&ft.encoded, outputs[0].column(0))?;
            Ok((l.value, vec![l.grad]))
        }
        Method::MNll => {
            let l = gaussian_nll_loss(&ft.encoded, outputs[0].column(0), outputs[1].column(0))?;
            let g_mu = l.grad.column(0).to_owned().insert_axis(Axis(1));
            let g_s = l.grad.column(1).to_owned().insert_axis(Axis(1));
            Ok((l.value, vec![g_mu, g_s]))
        }
    }
}

/// Everything needed to evaluate the objective on one batch.
struct Objective<'a> {
    method: Method,
    grid: &'a BinGrid,
    cw: ClassWeights,
    lambda: f64,
    floor: f64,
}

impl Objective<'_> {
    /// Value and gradients at `params`. `fixed` holds precomputed M1 targets.
    fn evaluate(
        &self,
        params: &ModelParams,
        x: ArrayView2<f64>,
        labels: &[FrameLabel],
        fixed: Option<ArrayView2<f64>>,
    ) -> Result<(f64, ParamGrads)> {
        let fp = forward(params, x)?;
        let ft = frame_targets(labels, self.grid)?;
        let dynamic;
        let targets = match self.method {
            Method::M1 => fixed,
            Method::M2 | Method::M3 => {
                dynamic = dynamic_targets(self.method, fp.outputs[0].view(), labels, self.grid, self.floor)?;
                Some(dynamic.view())
            }
            Method::MMse | Method::MNll => None,
        };
        let (value, head_grads) = loss_given_outputs(self.method, &fp.outputs, targets, &ft, self.cw, self.lambda)?;
        let grads = backward(params, &fp.cache, &head_grads)?;
        Ok((value, grads))
    }

    /// Value only, with targets frozen to `targets`.
    fn value_frozen(
        &self,
        params: &ModelParams,
        x: ArrayView2<f64>,
        labels: &[FrameLabel],
        targets: Option<ArrayView2<f64>>,
    ) -> Result<f64> {
        let fp = forward(params, x)?;
        let ft = frame_targets(labels, self.grid)?;
        Ok(loss_given_outputs(self.method, &fp.outputs, targets, &ft, self.cw, self.lambda)?.0)
    }

    /// The targets the objective would use at `params`.
    fn targets_at(
        &self,
        params: &ModelParams,
        x: ArrayView2<f64>,
        labels: &[FrameLabel],
    ) -> Result<Option<Array2<f64>>> {
        match self.method {
            Method::M1 => {
                let ft = frame_targets(labels, self.grid)?;
                let sig = vec![self.grid.bin_width; labels.len()];
                Ok(Some(target_matrix(self.grid, &ft.encoded, &sig, None)?))
            }
            Method::M2 | Method::M3 => {
                let fp = forward(params, x)?;
                Ok(Some(dynamic_targets(self.method, fp.outputs[0].view(), labels, self.grid, self.floor)?))
            }
            Method::MMse | Method::MNll => Ok(None),
        }
    }
}

fn resolve_class_weights(labels: &[FrameLabel], invert: bool) -> Result<ClassWeights> {
    let cw = class_weights(labels)?;
    Ok(if invert { cw.inverted() } else { cw })
}

/// Train a freshly initialized model.
pub fn train(dataset: &TrainingSet, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set has no frames"));
    }
    let grid = BinGrid::new(config.method.grid_kind());
    let params = ModelParams::init(
        config.method,
        dataset.features.ncols(),
        &config.hidden,
        grid.n_bins,
        config.seed,
    );
    train_from(params, dataset, config, 0)
}

/// Continue training `params` for `config.epochs` more epochs; epoch numbers
/// in the trace start at `epochs_done + 1`.
pub fn train_from(
    mut params: ModelParams,
    dataset: &TrainingSet,
    config: &TrainConfig,
    epochs_done: usize,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set has no frames"));
    }
    if params.method != config.method {
        return Err(Error::Mismatch(format!(
            "model was built for {}, config asks for {}",
            params.method, config.method
        )));
    }
    let grid = BinGrid::new(config.method.grid_kind());
    let cw = resolve_class_weights(&dataset.labels, config.invert_class_weights)?;
    let objective = Objective {
        method: config.method,
        grid: &grid,
        cw,
        lambda: config.lambda,
        floor: config.sigma_floor,
    };

    // M1 targets do not depend on the model
    let fixed = match config.method {
        Method::M1 => objective.targets_at(&params, dataset.features.view(), &dataset.labels)?,
        _ => None,
    };

    let n = dataset.len();
    let d = dataset.features.ncols();
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity = (config.momentum > 0.0).then(|| params.zeros_like());
    let mut trace = Vec::with_capacity(config.epochs);
    let mut steps = 0usize;
    let max_steps = config.max_steps.unwrap_or(usize::MAX);

    'epochs: for e in 0..config.epochs {
        let epoch = epochs_done + e + 1;
        if steps >= max_steps {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut total = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(config.batch_size) {
            if steps >= max_steps {
                if seen > 0 {
                    trace.push(EpochRecord { epoch, loss: total / seen as f64 });
                }
                break 'epochs;
            }
            let mut x = Array2::zeros((batch.len(), d));
            for (r, &i) in batch.iter().enumerate() {
                x.row_mut(r).assign(&dataset.features.row(i));
            }
            let labels: Vec<FrameLabel> = batch.iter().map(|&i| dataset.labels[i]).collect();
            let fixed_batch = fixed.as_ref().map(|f| f.select(Axis(0), batch));
            let (value, grads) = objective.evaluate(&params, x.view(), &labels, fixed_batch.as_ref().map(|f| f.view()))?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: steps,
                    loss: value,
                    trace: trace.iter().map(|r: &EpochRecord| r.loss).collect(),
                });
            }
            match velocity.as_mut() {
                Some(v) => momentum_step(&mut params, v, &grads, config.learning_rate, config.momentum),
                None => sgd_step_in_place(&mut params, &grads, config.learning_rate),
            }
            total += value * batch.len() as f64;
            seen += batch.len();
            steps += 1;
        }
        let loss = total / seen as f64;
        if !params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: steps,
                loss: f64::NAN,
                trace: trace.iter().map(|r| r.loss).collect(),
            });
        }
        log::debug!("epoch {epoch}: loss {loss:.6}");
        trace.push(EpochRecord { epoch, loss });
    }

    Ok(TrainOutcome { params, trace, class_weights: cw })
}

/// `v <- mu v + g; theta <- theta - alpha v`.
fn momentum_step(params: &mut ModelParams, velocity: &mut ModelParams, grads: &ParamGrads, alpha: f64, mu: f64) {
    for ((p, v), g) in params
        .layers
        .iter_mut()
        .chain(params.heads.iter_mut())
        .zip(velocity.layers.iter_mut().chain(velocity.heads.iter_mut()))
        .zip(grads.layers.iter().chain(&grads.heads))
    {
        v.weight *= mu;
        v.weight += &g.weight;
        v.bias *= mu;
        v.bias += &g.bias;
        p.weight.scaled_add(-alpha, &v.weight);
        p.bias.scaled_add(-alpha, &v.bias);
    }
    params.generation += 1;
}

/// Mean training objective of `params` on a dataset (targets built at `params`).
pub fn evaluate_loss(params: &ModelParams, dataset: &TrainingSet, config: &TrainConfig) -> Result<f64> {
    let grid = BinGrid::new(config.method.grid_kind());
    let cw = resolve_class_weights(&dataset.labels, config.invert_class_weights)?;
    let objective = Objective {
        method: config.method,
        grid: &grid,
        cw,
        lambda: config.lambda,
        floor: config.sigma_floor,
    };
    let x = dataset.features.view();
    let targets = objective.targets_at(params, x, &dataset.labels)?;
    objective.value_frozen(params, x, &dataset.labels, targets.as_ref().map(|t| t.view()))
}

/// A tiny problem for gradient checking.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub features: Array2<f64>,
    pub labels: Vec<FrameLabel>,
    /// Usually a reduced grid built with [`BinGrid::custom`].
    pub grid: BinGrid,
}

/// Maximum relative error between analytic and central-difference parameter
/// gradients of the method's full objective.
///
/// Dynamic targets (M2, M3) are computed once at the unperturbed parameters
/// and held fixed while perturbing, which is exactly the stop-gradient
/// contract the analytic gradient implements.
pub fn grad_check(config: &TrainConfig, instance: &GradCheckInstance) -> Result<f64> {
    if instance.features.nrows() != instance.labels.len() {
        return Err(Error::Shape("instance features and labels differ in length".into()));
    }
    if instance.grid.kind != config.method.grid_kind() {
        return Err(Error::Mismatch(format!("method {} needs a {:?} grid", config.method, config.method.grid_kind())));
    }
    let params = ModelParams::init(
        config.method,
        instance.features.ncols(),
        &config.hidden,
        instance.grid.n_bins,
        config.seed,
    );
    let cw = resolve_class_weights(&instance.labels, config.invert_class_weights)?;
    let objective = Objective {
        method: config.method,
        grid: &instance.grid,
        cw,
        lambda: config.lambda,
        floor: config.sigma_floor,
    };
    let x = instance.features.view();
    let targets = objective.targets_at(&params, x, &instance.labels)?;
    let frozen = targets.as_ref().map(|t| t.view());
    let fixed = if config.method == Method::M1 { frozen } else { None };
    let (_, grads) = objective.evaluate(&params, x, &instance.labels, fixed)?;
    let analytic = grads.flat();

    // five-point stencil
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.flat_mut(i);
        let mut at = |step: f64| -> Result<f64> {
            *probe.flat_mut(i) = orig + step;
            objective.value_frozen(&probe, x, &instance.labels, frozen)
        };
        let numeric = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
        *probe.flat_mut(i) = orig;
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    Ok(worst)
}
