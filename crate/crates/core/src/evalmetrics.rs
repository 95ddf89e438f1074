//! Melody accuracy (RPA / RCA / OA), the Gaussian NLL fit metric,
//! mistake-detection F1, cent-tolerance sweeps and bootstrap intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::MelodyEstimate;
use crate::method::Method;
use crate::pitchgrid::{encode_frame, BinGrid, FrameLabel, BIN_WIDTH};

pub const DEFAULT_TOLERANCE_CENTS: f64 = 50.0;
pub const SWEEP_TOLERANCES: [f64; 4] = [12.5, 25.0, 37.5, 50.0];
/// Lower bound applied to predicted standard deviations in the NLL metric.
pub const NLL_SIGMA_FLOOR: f64 = BIN_WIDTH * 1e-3;

fn check_aligned(r: usize, e: usize) -> Result<()> {
    if r != e {
        return Err(Error::Mismatch(format!("{r} reference frames vs {e} estimated frames")));
    }
    Ok(())
}

/// Signed cents from `reference` to `estimate`.
#[inline]
fn signed_cents(estimate: f64, reference: f64) -> f64 {
    1200.0 * (estimate / reference).log2()
}

#[inline]
fn raw_ok(est: &MelodyEstimate, r: &FrameLabel, tol: f64) -> bool {
    est.shadow_pitch_hz > 0.0 && signed_cents(est.shadow_pitch_hz, r.freq_hz).abs() <= tol
}

#[inline]
fn chroma_ok(est: &MelodyEstimate, r: &FrameLabel, tol: f64) -> bool {
    if est.shadow_pitch_hz <= 0.0 {
        return false;
    }
    let d = signed_cents(est.shadow_pitch_hz, r.freq_hz).rem_euclid(1200.0);
    d.min(1200.0 - d) <= tol
}

/// Raw pitch and raw chroma accuracy over reference-voiced frames, scored on
/// shadow pitch. `None` when the reference has no voiced frame.
pub fn rpa_rca(reference: &[FrameLabel], est: &[MelodyEstimate], tolerance_cents: f64) -> Result<Option<(f64, f64)>> {
    check_aligned(reference.len(), est.len())?;
    let (mut n, mut raw, mut chroma) = (0usize, 0usize, 0usize);
    for (r, e) in reference.iter().zip(est) {
        if !r.voiced() {
            continue;
        }
        n += 1;
        raw += raw_ok(e, r, tolerance_cents) as usize;
        chroma += chroma_ok(e, r, tolerance_cents) as usize;
    }
    Ok((n > 0).then(|| (raw as f64 / n as f64, chroma as f64 / n as f64)))
}

/// Fraction of frames with correct voicing and, for voiced references, pitch within tolerance.
pub fn overall_accuracy(reference: &[FrameLabel], est: &[MelodyEstimate], tolerance_cents: f64) -> Result<f64> {
    check_aligned(reference.len(), est.len())?;
    if reference.is_empty() {
        return Err(Error::Empty("no frames to score"));
    }
    let correct = reference
        .iter()
        .zip(est)
        .filter(|(r, e)| match (r.voiced(), e.voiced) {
            (false, false) => true,
            (true, true) => raw_ok(e, r, tolerance_cents),
            _ => false,
        })
        .count();
    Ok(correct as f64 / reference.len() as f64)
}

/// Per-clip accuracy at one tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipEval {
    pub rpa: Option<f64>,
    pub rca: Option<f64>,
    pub oa: f64,
}

pub fn evaluate_clip(reference: &[FrameLabel], est: &[MelodyEstimate], tolerance_cents: f64) -> Result<ClipEval> {
    let rr = rpa_rca(reference, est, tolerance_cents)?;
    Ok(ClipEval { rpa: rr.map(|x| x.0), rca: rr.map(|x| x.1), oa: overall_accuracy(reference, est, tolerance_cents)? })
}

/// Mean Gaussian negative log-likelihood of `y` under `N(y_hat, sigma_hat^2)`.
/// Standard deviations are floored at [`NLL_SIGMA_FLOOR`].
pub fn nll_metric(y: &[f64], y_hat: &[f64], sigma_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() || y.len() != sigma_hat.len() {
        return Err(Error::Shape("nll_metric inputs differ in length".into()));
    }
    if y.is_empty() {
        return Err(Error::Empty("no frames in the NLL inclusion set"));
    }
    let total: f64 = y
        .iter()
        .zip(y_hat)
        .zip(sigma_hat)
        .map(|((y, m), s)| {
            let var = s.max(NLL_SIGMA_FLOOR).powi(2);
            (std::f64::consts::TAU * var).ln() + (y - m).powi(2) / var
        })
        .sum();
    Ok(total / (2.0 * y.len() as f64))
}

/// Frames entering the NLL metric for `method`: every frame on the unified
/// grid, voiced frames only for the Bayesian model. Returns `(y, y_hat, sigma_hat)`.
pub fn nll_inputs(
    method: Method,
    grid: &BinGrid,
    reference: &[FrameLabel],
    est: &[MelodyEstimate],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_aligned(reference.len(), est.len())?;
    let voiced_only = method == Method::M3;
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for (r, e) in reference.iter().zip(est) {
        if voiced_only && !r.voiced() {
            continue;
        }
        out.0.push(encode_frame(*r, grid)?);
        out.1.push(e.y_hat);
        out.2.push(e.sigma_hat);
    }
    Ok(out)
}

/// Scope at which the `U` least confident frames are selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlagScope {
    #[default]
    Clip,
    Dataset,
}

/// Confusion counts of flagged frames against actual mistakes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn f1(&self) -> f64 {
        let p = if self.tp + self.fp == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fp) as f64 };
        let r = if self.tp + self.fn_ == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fn_) as f64 };
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Flag the `u` voiced frames with the largest sigma (earlier index wins ties)
/// and count against the frames whose pitch error exceeds the tolerance.
fn flag_and_count(frames: &[(f64, bool)], u: usize, c: &mut Confusion) {
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by(|&a, &b| frames[b].0.total_cmp(&frames[a].0).then(a.cmp(&b)));
    let mut flagged = vec![false; frames.len()];
    for &i in order.iter().take(u) {
        flagged[i] = true;
    }
    for (&(_, mistake), &f) in frames.iter().zip(&flagged) {
        match (f, mistake) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
}

/// F1 of "least confident" flags against actual pitch mistakes on voiced frames.
pub fn mistake_f1(
    clips: &[(&[FrameLabel], &[MelodyEstimate])],
    u: usize,
    tolerance_cents: f64,
    scope: FlagScope,
) -> Result<f64> {
    if u == 0 {
        return Err(Error::Precondition("U must be at least 1".into()));
    }
    let mut per_clip = Vec::with_capacity(clips.len());
    for (r, e) in clips {
        check_aligned(r.len(), e.len())?;
        let frames: Vec<(f64, bool)> = r
            .iter()
            .zip(e.iter())
            .filter(|(r, _)| r.voiced())
            .map(|(r, e)| (e.sigma_hat, !raw_ok(e, r, tolerance_cents)))
            .collect();
        per_clip.push(frames);
    }
    let mut c = Confusion::default();
    match scope {
        FlagScope::Clip => per_clip.iter().for_each(|f| flag_and_count(f, u, &mut c)),
        FlagScope::Dataset => flag_and_count(&per_clip.concat(), u, &mut c),
    }
    Ok(c.f1())
}

/// Mean accuracies at one tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tolerance_cents: f64,
    pub rpa: Option<f64>,
    pub rca: Option<f64>,
    pub oa: f64,
}

/// Clip-mean RPA / RCA / OA at each tolerance. Clips with undefined RPA are
/// left out of the RPA / RCA means.
pub fn tolerance_sweep(clips: &[(&[FrameLabel], &[MelodyEstimate])], tolerances: &[f64]) -> Result<Vec<SweepRow>> {
    tolerances
        .iter()
        .map(|&tol| {
            let evals = clips.iter().map(|(r, e)| evaluate_clip(r, e, tol)).collect::<Result<Vec<_>>>()?;
            let agg = aggregate(&evals)?;
            Ok(SweepRow { tolerance_cents: tol, rpa: agg.rpa, rca: agg.rca, oa: agg.oa })
        })
        .collect()
}

/// Unweighted means over clips; undefined entries are skipped.
pub fn aggregate(evals: &[ClipEval]) -> Result<ClipEval> {
    if evals.is_empty() {
        return Err(Error::Empty("no clips to aggregate"));
    }
    let mean_defined = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    Ok(ClipEval {
        rpa: mean_defined(evals.iter().filter_map(|e| e.rpa).collect()),
        rca: mean_defined(evals.iter().filter_map(|e| e.rca).collect()),
        oa: evals.iter().map(|e| e.oa).sum::<f64>() / evals.len() as f64,
    })
}

/// Linear-interpolation quantile of sorted data, `q` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean computed around `pivot`, exact when every value equals it.
fn shifted_mean(values: impl Iterator<Item = f64>, pivot: f64, n: usize) -> f64 {
    pivot + values.map(|v| v - pivot).sum::<f64>() / n as f64
}

/// Percentile bootstrap interval for the mean of `clip_metrics`.
pub fn bootstrap_ci_level(clip_metrics: &[f64], b: usize, seed: u64, level: f64) -> Result<(f64, f64)> {
    if clip_metrics.is_empty() {
        return Err(Error::Empty("bootstrap needs at least one clip"));
    }
    if b == 0 {
        return Err(Error::Precondition("B must be at least 1".into()));
    }
    let n = clip_metrics.len();
    let mut means: Vec<f64> = (0..b as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r);
            shifted_mean((0..n).map(|_| clip_metrics[rng.random_range(0..n)]), clip_metrics[0], n)
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 0.5 * (1.0 - level);
    Ok((quantile_sorted(&means, alpha), quantile_sorted(&means, 1.0 - alpha)))
}

/// 95% percentile bootstrap interval.
pub fn bootstrap_ci(clip_metrics: &[f64], b: usize, seed: u64) -> Result<(f64, f64)> {
    bootstrap_ci_level(clip_metrics, b, seed, 0.95)
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` if either input is constant or too short.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// `(|y - y_hat|, sigma_hat)` over reference-voiced frames.
pub fn error_sigma_pairs(reference: &[FrameLabel], est: &[MelodyEstimate], grid: &BinGrid) -> Result<Vec<(f64, f64)>> {
    check_aligned(reference.len(), est.len())?;
    reference
        .iter()
        .zip(est)
        .filter(|(r, _)| r.voiced())
        .map(|(r, e)| Ok(((encode_frame(*r, grid)? - e.y_hat).abs(), e.sigma_hat)))
        .collect()
}

pub const REPORT_FORMAT: &str = "hlmelody-eval";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    /// Clips on which the metric is defined.
    pub n_clips: usize,
}

fn summarize(values: &[f64], b: usize, seed: u64) -> Result<MetricSummary> {
    if values.is_empty() {
        return Ok(MetricSummary { mean: None, ci_lo: None, ci_hi: None, n_clips: 0 });
    }
    let mean = shifted_mean(values.iter().copied(), values[0], values.len());
    let (lo, hi) = bootstrap_ci(values, b, seed)?;
    Ok(MetricSummary { mean: Some(mean), ci_lo: Some(lo), ci_hi: Some(hi), n_clips: values.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Row {
    pub u: usize,
    pub f1: f64,
}

/// Settings of [`evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub tolerance_cents: f64,
    pub bootstrap_samples: usize,
    pub seed: u64,
    pub u_values: Vec<usize>,
    pub flag_scope: FlagScope,
    pub sweep_tolerances: Vec<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            tolerance_cents: DEFAULT_TOLERANCE_CENTS,
            bootstrap_samples: 1000,
            seed: 0,
            u_values: vec![10, 20, 30],
            flag_scope: FlagScope::Clip,
            sweep_tolerances: SWEEP_TOLERANCES.to_vec(),
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_cents > 0.0) || self.sweep_tolerances.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.bootstrap_samples == 0 {
            return Err(Error::Config("bootstrap_samples must be at least 1".into()));
        }
        if self.u_values.contains(&0) {
            return Err(Error::Config("U values must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub method: Method,
    pub n_clips: usize,
    pub n_frames: usize,
    pub rpa: MetricSummary,
    pub rca: MetricSummary,
    pub oa: MetricSummary,
    pub nll: f64,
    pub spearman_sigma_error: Option<f64>,
    pub mistake_f1: Vec<F1Row>,
    pub sweep: Vec<SweepRow>,
    pub settings: EvalSettings,
}

/// Full evaluation over a list of `(reference, estimate)` clips.
pub fn evaluate(
    method: Method,
    grid: &BinGrid,
    clips: &[(&[FrameLabel], &[MelodyEstimate])],
    settings: &EvalSettings,
) -> Result<EvalReport> {
    settings.validate()?;
    if clips.is_empty() {
        return Err(Error::Empty("no clips to evaluate"));
    }
    let evals: Vec<ClipEval> = clips
        .par_iter()
        .map(|(r, e)| evaluate_clip(r, e, settings.tolerance_cents))
        .collect::<Result<_>>()?;
    let rpa: Vec<f64> = evals.iter().filter_map(|e| e.rpa).collect();
    let rca: Vec<f64> = evals.iter().filter_map(|e| e.rca).collect();
    let oa: Vec<f64> = evals.iter().map(|e| e.oa).collect();

    let (mut y, mut y_hat, mut sigma) = (Vec::new(), Vec::new(), Vec::new());
    let mut pairs = Vec::new();
    for (r, e) in clips {
        let (a, b, c) = nll_inputs(method, grid, r, e)?;
        y.extend(a);
        y_hat.extend(b);
        sigma.extend(c);
        pairs.extend(error_sigma_pairs(r, e, grid)?);
    }
    let (errs, sigmas): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();

    let mistake_f1 = settings
        .u_values
        .iter()
        .map(|&u| Ok(F1Row { u, f1: mistake_f1(clips, u, settings.tolerance_cents, settings.flag_scope)? }))
        .collect::<Result<Vec<_>>>()?;

    Ok(EvalReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        method,
        n_clips: clips.len(),
        n_frames: clips.iter().map(|(r, _)| r.len()).sum(),
        rpa: summarize(&rpa, settings.bootstrap_samples, settings.seed)?,
        rca: summarize(&rca, settings.bootstrap_samples, settings.seed)?,
        oa: summarize(&oa, settings.bootstrap_samples, settings.seed)?,
        nll: nll_metric(&y, &y_hat, &sigma)?,
        spearman_sigma_error: spearman(&sigmas, &errs),
        mistake_f1,
        sweep: tolerance_sweep(clips, &settings.sweep_tolerances)?,
        settings: settings.clone(),
    })
}
