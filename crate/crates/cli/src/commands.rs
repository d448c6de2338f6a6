//! Subcommand implementations. Human-readable summaries go to stdout, every
//! machine artifact goes under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use koopman_core::basis::{LiftingBasis, MonomialBasis};
use koopman_core::dataset::{self, RawTrial, SplitSpec, Trajectory};
use koopman_core::excitation::{self, LookupTable};
use koopman_core::identification::{self, KoopmanModel};
use koopman_core::metrics::{self, Comparison, EvaluationReport, NormalizationBounds, SegmentPrediction};
use koopman_core::simulator::{self, InputSignal};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, RunConfig, STREAM_EXCITATION, STREAM_NOISE, STREAM_SPLIT};
use crate::error::CliError;

pub const DATA_DIR: &str = "data";
pub const MODELS_DIR: &str = "models";
pub const REPORTS_DIR: &str = "reports";
pub const PREDICTIONS_DIR: &str = "predictions";
pub const MANIFEST: &str = "manifest.json";
pub const COMPARISON_TXT: &str = "comparison.txt";
pub const COMPARISON_JSON: &str = "comparison.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub file: String,
    pub rows: usize,
    pub excitation_seed: u64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub seed: u64,
    pub system: String,
    pub params: Vec<f64>,
    pub ts: f64,
    pub trials: Vec<TrialRecord>,
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

/// Simulates one trial of the configured system under seeded excitation.
pub fn simulate_trial(cfg: &RunConfig, index: usize) -> Result<(Trajectory, TrialRecord), CliError> {
    let field = simulator::builtin_field(&cfg.system.name, &cfg.system.params)?;
    let ts = cfg.dataset.preprocess.ts;
    let g = &cfg.generate;
    let excitation_seed = derive_seed(cfg.seed, STREAM_EXCITATION, index as u64);
    let noise_seed = derive_seed(cfg.seed, STREAM_NOISE, index as u64);
    let ex = &cfg.excitation;
    let m = simulator::VectorField::input_dim(&field);
    let table: LookupTable = excitation::build_lookup(excitation_seed, m, ex.columns_for(g.duration), ex.lo, ex.hi)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let samples = dataset::window_samples(g.duration, ts);
    let inputs = excitation::sample_grid(&table, ex, ts, samples).map_err(|e| CliError::Config(e.to_string()))?;
    let duration = (samples - 1) as f64 * ts;
    let mut traj = simulator::integrate(&field, &g.x0, &InputSignal::Zoh { samples: inputs, ts }, duration, &cfg.simulation, ts)?;
    dataset::add_state_noise(&mut traj, g.noise_std, noise_seed)?;
    let record = TrialRecord { file: format!("trial_{index:02}.csv"), rows: traj.len(), excitation_seed, noise_seed };
    Ok((traj, record))
}

/// Writes one CSV per trial plus a manifest; returns the CSV paths.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let dir = out.join(DATA_DIR);
    ensure_dir(&dir)?;
    let mut records = Vec::with_capacity(cfg.generate.trials);
    let mut paths = Vec::with_capacity(cfg.generate.trials);
    for i in 0..cfg.generate.trials {
        let (traj, record) = simulate_trial(cfg, i)?;
        let path = dir.join(&record.file);
        dataset::export_csv(&traj.to_raw(format!("trial_{i:02}")), &path)?;
        println!("wrote {} ({} rows)", path.display(), record.rows);
        paths.push(path);
        records.push(record);
    }
    let manifest = DataManifest {
        seed: cfg.seed,
        system: cfg.system.name.clone(),
        params: cfg.system.params.clone(),
        ts: cfg.dataset.preprocess.ts,
        trials: records,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(paths)
}

/// Data files to use: explicit paths, then configured paths, then the
/// generated manifest under `out`.
pub fn resolve_data(cfg: &RunConfig, out: &Path, explicit: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    if !explicit.is_empty() {
        return Ok(explicit.to_vec());
    }
    if !cfg.paths.data.is_empty() {
        return Ok(cfg.paths.data.clone());
    }
    let dir = out.join(DATA_DIR);
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(CliError::Data(format!(
            "no data files given and {} does not exist; run `generate` first",
            manifest_path.display()
        )));
    }
    let manifest: DataManifest = read_json(&manifest_path)?;
    Ok(manifest.trials.iter().map(|t| dir.join(&t.file)).collect())
}

pub fn load_trajectories(cfg: &RunConfig, paths: &[PathBuf]) -> Result<Vec<Trajectory>, CliError> {
    paths
        .iter()
        .map(|p| {
            let raw: RawTrial = dataset::ingest_csv(p)?;
            Ok(dataset::preprocess(&raw, &cfg.dataset.preprocess)?)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SplitData {
    pub all: Vec<Trajectory>,
    pub train: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
}

pub fn split_all(cfg: &RunConfig, trajs: Vec<Trajectory>) -> Result<SplitData, CliError> {
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (i, traj) in trajs.iter().enumerate() {
        let spec = SplitSpec {
            validation_count: cfg.dataset.split.validation_per_trial,
            validation_duration: cfg.dataset.split.validation_duration,
            seed: derive_seed(cfg.seed, STREAM_SPLIT, i as u64),
        };
        let (t, v) = dataset::split_validation(traj, &spec)?;
        train.extend(t);
        validation.extend(v);
    }
    Ok(SplitData { all: trajs, train, validation })
}

pub fn model_path(out: &Path, w: usize) -> PathBuf {
    out.join(MODELS_DIR).join(format!("model_w{w}.json"))
}

pub fn report_path(out: &Path, w: usize) -> PathBuf {
    out.join(REPORTS_DIR).join(format!("report_w{w}.json"))
}

pub fn model_name(w: usize) -> String {
    format!("koopman_w{w}")
}

/// Fits one model per configured degree from the training segments.
pub fn cmd_identify(cfg: &RunConfig, out: &Path, data: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let paths = resolve_data(cfg, out, data)?;
    let split = split_all(cfg, load_trajectories(cfg, &paths)?)?;
    let snapshots = dataset::build_snapshots(&split.train)?;
    let dir = out.join(MODELS_DIR);
    ensure_dir(&dir)?;
    let mut written = Vec::new();
    for &w in &cfg.basis.degrees {
        let basis = MonomialBasis::new(snapshots.n(), snapshots.m(), w).map_err(|e| CliError::Config(e.to_string()))?;
        println!("identify w={w}: K = {}, N = {}", snapshots.len(), basis.len());
        let mut model = identification::identify(&snapshots, &basis, cfg.identification.rcond)?;
        model.meta.seed = Some(cfg.seed);
        print_diagnostics(&model)?;
        let path = model_path(out, w);
        model.save(&path)?;
        println!("  wrote {}", path.display());
        written.push(path);
    }
    Ok(written)
}

fn print_diagnostics(model: &KoopmanModel) -> Result<(), CliError> {
    let meta = &model.meta;
    println!(
        "  residual = {:.6e}, rank = {}/{}, cond = {:.3e}, exp/log round trip = {:.3e}",
        meta.residual,
        meta.rank,
        model.basis().len(),
        meta.condition_number,
        model.round_trip_error()?
    );
    let eig = identification::koopman_eigenvalues(model)?;
    let min_re = eig.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let min_abs = eig.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    let max_abs = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    println!("  eigenvalues: min Re = {min_re:.6}, |lambda| in [{min_abs:.6}, {max_abs:.6}]");
    println!("  input-observable generator norm = {:.3e}", meta.input_observable_norm);
    Ok(())
}

fn degree_from_model_path(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.strip_prefix("model_w")?.parse().ok()
}

/// Scores each model on the validation windows; writes reports, per-segment
/// predictions and the comparison table.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path, models: &[PathBuf], data: &[PathBuf]) -> Result<Comparison, CliError> {
    let model_paths: Vec<PathBuf> = if models.is_empty() {
        cfg.basis.degrees.iter().map(|&w| model_path(out, w)).collect()
    } else {
        models.to_vec()
    };
    let paths = resolve_data(cfg, out, data)?;
    let split = split_all(cfg, load_trajectories(cfg, &paths)?)?;
    let bounds = NormalizationBounds::from_trajectories(&split.all)?;
    let validation = truncate_to_horizon(&split.validation, cfg.evaluation.horizon);
    if validation.is_empty() {
        return Err(CliError::Data("no validation segments to evaluate on".into()));
    }

    ensure_dir(&out.join(REPORTS_DIR))?;
    let mut reports = Vec::new();
    for path in &model_paths {
        let model = KoopmanModel::load(path)?;
        let w = model.basis().degree();
        if let Some(tagged) = degree_from_model_path(path) {
            if tagged != w {
                warn!("{} holds a degree-{w} model", path.display());
            }
        }
        let name = model_name(w);
        let ev = metrics::evaluate_model(&model, &name, &validation, &bounds, &cfg.simulation)?;
        for d in &ev.report.diverged {
            println!("  warning: {name} diverged on validation segment {}: {}", d.segment, d.message);
        }
        let rpath = report_path(out, w);
        write_json(&rpath, &ev.report)?;
        write_predictions(out, w, &validation, &ev.predictions)?;
        let nrmse: Vec<String> = ev.report.per_state.iter().map(|s| format!("{:.3}", s.nrmse)).collect();
        println!("evaluate {name}: NRMSE % = [{}], avg = {:.3}, segments = {}", nrmse.join(", "), ev.report.avg_nrmse, ev.report.segments);
        info!("wrote {}", rpath.display());
        reports.push(ev.report);
    }
    let comparison = metrics::compare(&reports)?;
    write_comparison(out, &comparison)?;
    print!("{}", comparison.render());
    Ok(comparison)
}

fn truncate_to_horizon(segments: &[Trajectory], horizon: Option<f64>) -> Vec<Trajectory> {
    match horizon {
        None => segments.to_vec(),
        Some(h) => segments
            .iter()
            .map(|s| {
                let len = dataset::window_samples(h, s.ts).min(s.len());
                s.slice(0, len)
            })
            .collect(),
    }
}

fn write_predictions(out: &Path, w: usize, validation: &[Trajectory], predictions: &[SegmentPrediction]) -> Result<(), CliError> {
    let dir = out.join(PREDICTIONS_DIR).join(format!("w{w}"));
    ensure_dir(&dir)?;
    for (i, (seg, pred)) in validation.iter().zip(predictions).enumerate() {
        let SegmentPrediction::Simulated(pred) = pred else {
            continue;
        };
        let mut text = String::from("t");
        for j in 1..=seg.n() {
            text.push_str(&format!(",x{j},x{j}_pred"));
        }
        for j in 1..=seg.m() {
            text.push_str(&format!(",u{j}"));
        }
        text.push('\n');
        for k in 0..seg.len() {
            text.push_str(&seg.time(k).to_string());
            for j in 0..seg.n() {
                text.push_str(&format!(",{},{}", seg.states[(k, j)], pred.states[(k, j)]));
            }
            for j in 0..seg.m() {
                text.push_str(&format!(",{}", seg.inputs[(k, j)]));
            }
            text.push('\n');
        }
        write_text(&dir.join(format!("segment_{i:02}.csv")), &text)?;
    }
    Ok(())
}

fn write_comparison(out: &Path, comparison: &Comparison) -> Result<(), CliError> {
    ensure_dir(out)?;
    write_text(&out.join(COMPARISON_TXT), &comparison.render())?;
    write_text(&out.join(COMPARISON_JSON), &(comparison.to_json() + "\n"))
}

/// Reads reports from files holding either one report or an array of them.
pub fn load_reports(paths: &[PathBuf]) -> Result<Vec<EvaluationReport>, CliError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<EvaluationReport>),
        One(Box<EvaluationReport>),
    }
    let mut reports = Vec::new();
    for p in paths {
        match read_json::<OneOrMany>(p)? {
            OneOrMany::Many(v) => reports.extend(v),
            OneOrMany::One(r) => reports.push(*r),
        }
    }
    Ok(reports)
}

pub fn cmd_compare(reports: &[PathBuf], out: Option<&Path>) -> Result<Comparison, CliError> {
    if reports.is_empty() {
        return Err(CliError::Config("compare needs at least one report file".into()));
    }
    let comparison = metrics::compare(&load_reports(reports)?)?;
    if let Some(out) = out {
        write_comparison(out, &comparison)?;
    }
    print!("{}", comparison.render());
    Ok(comparison)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub seed: u64,
    pub config: RunConfig,
    pub data: Vec<String>,
    pub models: Vec<String>,
    pub reports: Vec<String>,
    pub comparison: String,
}

fn relative(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).display().to_string()
}

/// generate -> identify -> evaluate -> compare; errors carry the stage name.
pub fn cmd_pipeline(cfg: &RunConfig, out: &Path) -> Result<Comparison, CliError> {
    ensure_dir(out).map_err(|e| e.in_stage("setup"))?;
    let data = if cfg.paths.data.is_empty() {
        cmd_generate(cfg, out).map_err(|e| e.in_stage("generate"))?
    } else {
        cfg.paths.data.clone()
    };
    let models = cmd_identify(cfg, out, &data).map_err(|e| e.in_stage("identify"))?;
    let comparison = cmd_evaluate(cfg, out, &models, &data).map_err(|e| e.in_stage("evaluate"))?;
    let manifest = PipelineManifest {
        seed: cfg.seed,
        config: cfg.clone(),
        data: data.iter().map(|p| relative(out, p)).collect(),
        models: models.iter().map(|p| relative(out, p)).collect(),
        reports: cfg.basis.degrees.iter().map(|&w| relative(out, &report_path(out, w))).collect(),
        comparison: COMPARISON_TXT.to_string(),
    };
    write_json(&out.join(MANIFEST), &manifest).map_err(|e| e.in_stage("compare"))?;
    Ok(comparison)
}
