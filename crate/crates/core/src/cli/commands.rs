//! The four pipeline steps: synth, train, predict, eval.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{EvalConfig, PredictConfig, SynthConfig, TrainRunConfig};
use crate::data::audio::write_wav;
use crate::data::dataset::{design_matrix, fit_standardizer, load_split, Chunk};
use crate::data::features::{FeatureConfig, FrontEnd};
use crate::data::labels::{frame_time, read_labels, write_labels};
use crate::data::manifest::{resolve, Manifest, ManifestEntry};
use crate::data::synth::{recipe_specs, synth_clip, Split};
use crate::data::FRAMES_PER_SECOND;
use crate::error::{Error, Result};
use crate::evalmetrics::{evaluate, evaluate_clip, EvalReport};
use crate::infer::{decode_outputs, MelodyEstimate, PruneParams};
use crate::method::Method;
use crate::net::{forward, train, train_from, Checkpoint, TrainConfig, TrainingSet};
use crate::pitchgrid::{hz_to_log, log_to_hz, BinGrid, FrameLabel};

pub const PREDICTIONS_HEADER: &str = "time,voiced,pitch_hz,shadow_pitch_hz,y_hat,sigma_hat";

fn config_line<T: Serialize>(config: &T) -> Result<String> {
    Ok(format!("# config: {}\n", serde_json::to_string(config)?))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

/// Render the seeded recipe to WAV + label files and write `manifest.json`.
pub fn cmd_synth(config: &SynthConfig) -> Result<Manifest> {
    let specs = recipe_specs(&config.recipe);
    let dir = &config.out_dir;
    create_dir(&dir.join("audio"))?;
    create_dir(&dir.join("labels"))?;
    let mut counters = [0usize; 2];
    let named: Vec<_> = specs
        .into_iter()
        .map(|(spec, split)| {
            let slot = &mut counters[split as usize];
            let id = format!("{}_{:04}", split_name(split), *slot);
            *slot += 1;
            (id, spec, split)
        })
        .collect();
    let entries = named
        .par_iter()
        .map(|(id, spec, split)| {
            let (samples, labels) = synth_clip(spec)?;
            let audio = PathBuf::from("audio").join(format!("{id}.wav"));
            let label_path = PathBuf::from("labels").join(format!("{id}.txt"));
            write_wav(&dir.join(&audio), &samples)?;
            write_labels(&dir.join(&label_path), &labels)?;
            Ok(ManifestEntry { id: id.clone(), audio, labels: label_path, split: *split })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(serde_json::to_value(&config.recipe)?, entries);
    manifest.save(&dir.join("manifest.json"))?;
    log::info!("wrote {} clips to {}", manifest.entries.len(), dir.display());
    Ok(manifest)
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    train: &'a TrainConfig,
    features: &'a FeatureConfig,
}

fn trace_csv(echo: &TrainEcho<'_>, rows: &[(usize, f64)]) -> Result<String> {
    let mut s = String::from("# hlmelody-trace v1\n");
    s.push_str(&config_line(echo)?);
    s.push_str(&format!("# seed: {}\n", echo.train.seed));
    s.push_str("epoch,loss\n");
    for (e, l) in rows {
        writeln!(s, "{e},{l}").expect("string write");
    }
    Ok(s)
}

/// Train on in-memory chunks; standardization statistics come from `chunks`.
pub fn train_on_chunks(train: &TrainConfig, features: &FeatureConfig, chunks: &[Chunk]) -> Result<Checkpoint> {
    let standardizer = fit_standardizer(chunks)?;
    let (x, labels) = design_matrix(chunks, &standardizer, train.context_frames)?;
    let data = TrainingSet::new(x, labels)?;
    let outcome = self::train(&data, train)?;
    Ok(Checkpoint::new(train.clone(), features.clone(), standardizer, outcome.class_weights, outcome.trace, outcome.params))
}

/// Train (or resume) from the manifest's training split; writes the
/// checkpoint and the per-epoch loss CSV. On divergence the completed part
/// of the trace is still written.
pub fn cmd_train(config: &TrainRunConfig) -> Result<Checkpoint> {
    config.train.validate()?;
    config.features.validate()?;
    let manifest = Manifest::load(&config.manifest)?;
    let resumed = config.resume.as_deref().map(Checkpoint::load).transpose()?;
    let features = resumed.as_ref().map_or(&config.features, |c| &c.features).clone();
    let front = FrontEnd::new(&features)?;
    let chunks = load_split(&config.manifest, &manifest, Split::Train, &front)?;
    if chunks.is_empty() {
        return Err(Error::Empty("manifest has no training chunks"));
    }
    let echo = TrainEcho { train: &config.train, features: &features };

    let (standardizer, prior_trace, result) = match resumed {
        Some(ck) => {
            if ck.train_config.method != config.train.method {
                return Err(Error::Mismatch(format!(
                    "checkpoint holds a {} model, config asks for {}",
                    ck.train_config.method, config.train.method
                )));
            }
            let (x, labels) = design_matrix(&chunks, &ck.standardizer, config.train.context_frames)?;
            let data = TrainingSet::new(x, labels)?;
            let res = train_from(ck.params, &data, &config.train, ck.epochs_done);
            (ck.standardizer, ck.trace, res)
        }
        None => {
            let st = fit_standardizer(&chunks)?;
            let (x, labels) = design_matrix(&chunks, &st, config.train.context_frames)?;
            let data = TrainingSet::new(x, labels)?;
            (st, Vec::new(), train(&data, &config.train))
        }
    };
    let mut rows: Vec<(usize, f64)> = prior_trace.iter().map(|r| (r.epoch, r.loss)).collect();
    let outcome = match result {
        Ok(o) => o,
        Err(Error::Diverged { epoch, step, loss, trace }) => {
            let first = rows.last().map_or(1, |r| r.0 + 1);
            rows.extend(trace.iter().enumerate().map(|(i, &l)| (first + i, l)));
            fs::write(&config.trace, trace_csv(&echo, &rows)?)?;
            return Err(Error::Diverged { epoch, step, loss, trace });
        }
        Err(e) => return Err(e),
    };
    let mut trace = prior_trace;
    trace.extend(outcome.trace);
    rows = trace.iter().map(|r| (r.epoch, r.loss)).collect();
    let ck = Checkpoint::new(config.train.clone(), features.clone(), standardizer, outcome.class_weights, trace, outcome.params);
    ck.save(&config.checkpoint)?;
    fs::write(&config.trace, trace_csv(&echo, &rows)?)?;
    log::info!("trained {} for {} epochs", ck.train_config.method, ck.epochs_done);
    Ok(ck)
}

/// Reference labels and decoded estimates of one clip.
#[derive(Debug, Clone)]
pub struct ClipPrediction {
    pub id: String,
    pub labels: Vec<FrameLabel>,
    pub estimates: Vec<MelodyEstimate>,
}

/// Run a checkpoint on chunks and decode every frame, grouped by clip in input order.
pub fn predict_chunks(ck: &Checkpoint, chunks: &[Chunk], prune: Option<PruneParams>) -> Result<Vec<ClipPrediction>> {
    let method = ck.train_config.method;
    let grid = BinGrid::new(method.grid_kind());
    let decoded: Vec<Vec<MelodyEstimate>> = chunks
        .par_iter()
        .map(|c| {
            let (x, _) = design_matrix(std::slice::from_ref(c), &ck.standardizer, ck.train_config.context_frames)?;
            let out = forward(&ck.params, x.view())?;
            decode_outputs(method, &out.outputs, &grid, prune)
        })
        .collect::<Result<_>>()?;
    let mut clips: Vec<ClipPrediction> = Vec::new();
    for (c, est) in chunks.iter().zip(decoded) {
        match clips.last_mut() {
            Some(last) if last.id == c.clip_id => {
                last.labels.extend_from_slice(&c.labels);
                last.estimates.extend(est);
            }
            _ => clips.push(ClipPrediction { id: c.clip_id.clone(), labels: c.labels.clone(), estimates: est }),
        }
    }
    Ok(clips)
}

#[derive(Serialize)]
struct PredictEcho {
    method: Method,
    split: Split,
    prune: bool,
    prune_params: PruneParams,
    train_seed: u64,
}

pub fn format_predictions(method: Method, config_echo: &str, est: &[MelodyEstimate]) -> String {
    let mut s = String::from("# hlmelody-predictions v1\n");
    writeln!(s, "# method: {method}").expect("string write");
    s.push_str(config_echo);
    s.push_str(PREDICTIONS_HEADER);
    s.push('\n');
    for (t, e) in est.iter().enumerate() {
        writeln!(
            s,
            "{:.3},{},{},{},{},{}",
            frame_time(t),
            e.voiced as u8,
            e.pitch_hz.unwrap_or(0.0),
            e.shadow_pitch_hz,
            e.y_hat,
            e.sigma_hat
        )
        .expect("string write");
    }
    s
}

/// Parse a predictions file into its method and estimates.
pub fn parse_predictions(text: &str) -> Result<(Method, Vec<MelodyEstimate>)> {
    let mut method = None;
    let mut est = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let parse_err = |msg: String| Error::Parse { line: line_no, msg };
        if let Some(rest) = line.strip_prefix("# method:") {
            method = Some(rest.trim().parse::<Method>().map_err(|e| parse_err(e.to_string()))?);
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            if line.trim() != PREDICTIONS_HEADER {
                return Err(parse_err(format!("expected header {PREDICTIONS_HEADER:?}")));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(parse_err(format!("expected 6 columns, found {}", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| parse_err(format!("not a number: {s:?}")));
        let voiced = match f[1].trim() {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(format!("voiced flag must be 0 or 1, got {other:?}"))),
        };
        let pitch = num(f[2])?;
        est.push(MelodyEstimate {
            voiced,
            pitch_hz: voiced.then_some(pitch),
            shadow_pitch_hz: num(f[3])?,
            y_hat: num(f[4])?,
            sigma_hat: num(f[5])?,
        });
    }
    let method = method.ok_or_else(|| Error::Parse { line: 0, msg: "missing '# method:' line".into() })?;
    Ok((method, est))
}

/// Decode a split with a checkpoint and write one CSV per clip.
pub fn cmd_predict(config: &PredictConfig) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::load(&config.checkpoint)?;
    let method = ck.train_config.method;
    if let Some(expected) = config.method {
        if expected != method {
            return Err(Error::Mismatch(format!("checkpoint holds a {method} model, config expects {expected}")));
        }
    }
    let mut prune = config.prune.then_some(config.prune_params);
    if prune.is_some() && method == Method::M3 {
        log::warn!("pruning does not apply to {method} models; ignoring prune");
        prune = None;
    }
    let manifest = Manifest::load(&config.manifest)?;
    let front = FrontEnd::new(&ck.features)?;
    let chunks = load_split(&config.manifest, &manifest, config.split, &front)?;
    let clips = predict_chunks(&ck, &chunks, prune)?;
    let echo = config_line(&PredictEcho {
        method,
        split: config.split,
        prune: prune.is_some(),
        prune_params: config.prune_params,
        train_seed: ck.train_config.seed,
    })?;
    create_dir(&config.out_dir)?;
    let mut written = Vec::with_capacity(clips.len());
    for c in &clips {
        let p = config.out_dir.join(format!("{}.csv", c.id));
        fs::write(&p, format_predictions(method, &echo, &c.estimates))?;
        written.push(p);
    }
    Ok(written)
}

/// Evaluate clips and write report.json plus CSV tables and plot data into `out_dir`.
pub fn write_eval_outputs(out_dir: &Path, method: Method, clips: &[ClipPrediction], config: &EvalConfig) -> Result<EvalReport> {
    let grid = BinGrid::new(method.grid_kind());
    let pairs: Vec<(&[FrameLabel], &[MelodyEstimate])> =
        clips.iter().map(|c| (c.labels.as_slice(), c.estimates.as_slice())).collect();
    let report = evaluate(method, &grid, &pairs, &config.settings)?;

    #[derive(Serialize)]
    struct Echo<'a> {
        split: Split,
        settings: &'a crate::evalmetrics::EvalSettings,
    }
    let echo = Echo { split: config.split, settings: &config.settings };
    let header = format!("{}# seed: {}\n", config_line(&echo)?, config.settings.seed);
    create_dir(out_dir)?;

    #[derive(Serialize)]
    struct ReportFile<'a> {
        config: &'a Echo<'a>,
        report: &'a EvalReport,
    }
    let mut json = serde_json::to_string_pretty(&ReportFile { config: &echo, report: &report })?;
    json.push('\n');
    fs::write(out_dir.join("report.json"), json)?;

    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    let tol = config.settings.tolerance_cents;

    let mut s = header.clone() + "clip,rpa,rca,oa\n";
    for c in clips {
        let e = evaluate_clip(&c.labels, &c.estimates, tol)?;
        writeln!(s, "{},{},{},{}", c.id, opt(e.rpa), opt(e.rca), e.oa).expect("string write");
    }
    fs::write(out_dir.join("clips.csv"), s)?;

    let mut s = header.clone() + "metric,mean,ci_lo,ci_hi,n_clips\n";
    for (name, m) in [("rpa", &report.rpa), ("rca", &report.rca), ("oa", &report.oa)] {
        writeln!(s, "{name},{},{},{},{}", opt(m.mean), opt(m.ci_lo), opt(m.ci_hi), m.n_clips).expect("string write");
    }
    writeln!(s, "nll,{},,,{}", report.nll, report.n_clips).expect("string write");
    fs::write(out_dir.join("metrics.csv"), s)?;

    let mut s = header.clone() + "tolerance_cents,rpa,rca,oa\n";
    for r in &report.sweep {
        writeln!(s, "{},{},{},{}", r.tolerance_cents, opt(r.rpa), opt(r.rca), r.oa).expect("string write");
    }
    fs::write(out_dir.join("sweep.csv"), s)?;

    let mut s = header.clone() + "u,f1\n";
    for r in &report.mistake_f1 {
        writeln!(s, "{},{}", r.u, r.f1).expect("string write");
    }
    fs::write(out_dir.join("f1.csv"), s)?;

    let mut scatter = header.clone() + "clip,time,abs_error,sigma_hat\n";
    let mut overlay = header + "clip,time,ref_hz,est_hz,lower_hz,upper_hz\n";
    for c in clips {
        for (t, (r, e)) in c.labels.iter().zip(&c.estimates).enumerate() {
            let time = frame_time(t);
            if r.voiced() {
                let err = (hz_to_log(r.freq_hz)? - e.y_hat).abs();
                writeln!(scatter, "{},{time:.3},{err},{}", c.id, e.sigma_hat).expect("string write");
            }
            let (lo, hi) = if e.shadow_pitch_hz > 0.0 {
                let g = hz_to_log(e.shadow_pitch_hz)?;
                (log_to_hz(g - e.sigma_hat), log_to_hz(g + e.sigma_hat))
            } else {
                (0.0, 0.0)
            };
            writeln!(overlay, "{},{time:.3},{},{},{lo},{hi}", c.id, r.freq_hz, e.pitch_hz.unwrap_or(0.0))
                .expect("string write");
        }
    }
    fs::write(out_dir.join("scatter.csv"), scatter)?;
    fs::write(out_dir.join("overlay.csv"), overlay)?;
    Ok(report)
}

/// Score per-clip prediction files against the manifest's labels.
pub fn cmd_eval(config: &EvalConfig) -> Result<EvalReport> {
    config.settings.validate()?;
    let manifest = Manifest::load(&config.manifest)?;
    let mut method: Option<Method> = None;
    let mut clips = Vec::new();
    for e in manifest.split(config.split) {
        let path = config.predictions.join(format!("{}.csv", e.id));
        let text = fs::read_to_string(&path)
            .map_err(|err| Error::Io(std::io::Error::new(err.kind(), format!("{}: {err}", path.display()))))?;
        let (m, estimates) = parse_predictions(&text)?;
        if *method.get_or_insert(m) != m {
            return Err(Error::Mismatch(format!("{} was produced by {m}, others by {}", path.display(), method.unwrap())));
        }
        let mut labels = read_labels(&resolve(&config.manifest, &e.labels))?;
        // predictions cover whole 1-second chunks only
        if labels.len() >= estimates.len() && labels.len() - estimates.len() < FRAMES_PER_SECOND && estimates.len() % FRAMES_PER_SECOND == 0 {
            labels.truncate(estimates.len());
        }
        if labels.len() != estimates.len() {
            return Err(Error::Mismatch(format!(
                "clip {}: {} label frames vs {} predicted frames",
                e.id,
                labels.len(),
                estimates.len()
            )));
        }
        clips.push(ClipPrediction { id: e.id.clone(), labels, estimates });
    }
    let method = method.ok_or(Error::Empty("no clips in the evaluated split"))?;
    write_eval_outputs(&config.out_dir, method, &clips, config)
}
