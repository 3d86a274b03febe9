//! Serialized artifact formats: model JSON, pair/intensity/results CSV,
//! posterior JSON, switch and prior configs, corpus and run manifests.
//!
//! All floating-point fields round-trip exactly: JSON numbers and CSV cells
//! are written with the shortest representation that parses back to the same
//! f64.

use std::fs;
use std::path::{Path, PathBuf};

use iacf_core::calibrate::{IdmPosterior, PriorBox, Provenance};
use iacf_core::gmm::{BlockSpec, Gmm, Scaler};
use iacf_core::idm::IdmParams;
use iacf_core::interaction::{IntensitySeries, Metric, SampleSplit};
use iacf_core::switching::{calibrate_threshold, SwitchConfig, SwitchMode};
use iacf_core::traj::{TrajectoryPair, TrajectorySample};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn write_string(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, content)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

// ---------------------------------------------------------------------------
// Model files (*.gmm.json)

#[derive(Debug, Serialize, Deserialize)]
struct BlockFile {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScalerFile {
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GmmFile {
    version: u32,
    blocks: Vec<BlockFile>,
    scaler: Option<ScalerFile>,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Row-major D x D matrices, one per component.
    covs: Vec<Vec<f64>>,
}

pub fn write_gmm(path: &Path, model: &Gmm) -> Result<()> {
    let d = model.dim();
    let file = GmmFile {
        version: FORMAT_VERSION,
        blocks: model
            .blocks
            .iter()
            .map(|b| BlockFile { name: b.name.clone(), len: b.len })
            .collect(),
        scaler: model.scaler.as_ref().map(|s| ScalerFile {
            mean: s.mean.clone(),
            std: s.std.clone(),
        }),
        weights: model.weights.clone(),
        means: model.means.iter().map(|m| m.iter().copied().collect()).collect(),
        covs: model
            .covs
            .iter()
            .map(|c| (0..d).flat_map(|i| (0..d).map(move |j| c[(i, j)])).collect())
            .collect(),
    };
    write_string(path, &to_json_pretty(&file)?)
}

pub fn read_gmm(path: &Path) -> Result<Gmm> {
    let file: GmmFile = serde_json::from_str(&read_to_string(path)?)?;
    if file.version != FORMAT_VERSION {
        return Err(CliError::Data(format!(
            "{}: unsupported model version {}",
            path.display(),
            file.version
        )));
    }
    let d: usize = file.blocks.iter().map(|b| b.len).sum();
    let model = Gmm {
        weights: file.weights,
        means: file.means.into_iter().map(DVector::from_vec).collect(),
        covs: file
            .covs
            .into_iter()
            .map(|c| {
                if c.len() != d * d {
                    return Err(CliError::Data(format!(
                        "{}: covariance has {} entries, expected {}",
                        path.display(),
                        c.len(),
                        d * d
                    )));
                }
                Ok(DMatrix::from_row_slice(d, d, &c))
            })
            .collect::<Result<Vec<_>>>()?,
        blocks: file
            .blocks
            .into_iter()
            .map(|b| BlockSpec { name: b.name, len: b.len })
            .collect(),
        scaler: file.scaler.map(|s| Scaler { mean: s.mean, std: s.std }),
    };
    model.validate()?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Pair CSV

pub const PAIR_HEADER: [&str; 9] = [
    "t", "x_lead", "v_lead", "a_lead", "x_foll", "v_foll", "a_foll", "dx", "dv",
];

#[derive(Debug, Serialize, Deserialize)]
struct PairRow {
    t: f64,
    x_lead: f64,
    v_lead: f64,
    a_lead: f64,
    x_foll: f64,
    v_foll: f64,
    a_foll: f64,
    dx: f64,
    dv: f64,
}

pub fn write_pair(path: &Path, pair: &TrajectoryPair) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for i in 0..pair.len() {
        let (l, f) = (&pair.leader[i], &pair.follower[i]);
        w.serialize(PairRow {
            t: l.t,
            x_lead: l.x,
            v_lead: l.v,
            a_lead: l.a,
            x_foll: f.x,
            v_foll: f.v,
            a_foll: f.a,
            dx: pair.dx(i),
            dv: pair.dv(i),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pair(path: &Path) -> Result<TrajectoryPair> {
    let pair_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pair".to_string());
    let mut r = csv::Reader::from_path(path)?;
    let mut leader = Vec::new();
    let mut follower = Vec::new();
    let mut leader_length = 0.0;
    for (i, row) in r.deserialize::<PairRow>().enumerate() {
        let row = row?;
        if i == 0 {
            leader_length = row.x_lead - row.x_foll - row.dx;
        }
        leader.push(TrajectorySample { t: row.t, x: row.x_lead, v: row.v_lead, a: row.a_lead });
        follower.push(TrajectorySample { t: row.t, x: row.x_foll, v: row.v_foll, a: row.a_foll });
    }
    if leader.len() < 2 {
        return Err(CliError::Data(format!(
            "{}: a pair needs at least 2 rows",
            path.display()
        )));
    }
    let dt = leader[1].t - leader[0].t;
    let pair = TrajectoryPair { pair_id, dt, leader, follower, leader_length };
    pair.validate()?;
    Ok(pair)
}

// ---------------------------------------------------------------------------
// Corpus manifest

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub pair_id: String,
    pub len: usize,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    /// "recorded" or "synthetic".
    pub source: String,
    pub dt: f64,
    pub pairs: Vec<CorpusEntry>,
}

pub const CORPUS_MANIFEST: &str = "corpus.json";

/// Write one CSV per pair plus the corpus manifest into `dir`.
pub fn write_corpus(dir: &Path, pairs: &[TrajectoryPair], source: &str) -> Result<CorpusManifest> {
    if pairs.is_empty() {
        return Err(CliError::data("refusing to write an empty corpus"));
    }
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let file = format!("{}.csv", pair.pair_id);
        write_pair(&dir.join(&file), pair)?;
        entries.push(CorpusEntry {
            pair_id: pair.pair_id.clone(),
            len: pair.len(),
            file,
        });
    }
    let manifest = CorpusManifest {
        version: FORMAT_VERSION,
        source: source.to_string(),
        dt: pairs[0].dt,
        pairs: entries,
    };
    write_string(&dir.join(CORPUS_MANIFEST), &to_json_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_corpus_manifest(dir: &Path) -> Result<CorpusManifest> {
    let path = dir.join(CORPUS_MANIFEST);
    let manifest: CorpusManifest = serde_json::from_str(&read_to_string(&path)?)?;
    let mut seen = std::collections::BTreeSet::new();
    for e in &manifest.pairs {
        if !seen.insert(&e.pair_id) {
            return Err(CliError::Data(format!(
                "{}: duplicate pair_id {}",
                path.display(),
                e.pair_id
            )));
        }
    }
    Ok(manifest)
}

pub fn load_corpus(dir: &Path) -> Result<Vec<TrajectoryPair>> {
    let manifest = read_corpus_manifest(dir)?;
    manifest
        .pairs
        .iter()
        .map(|e| read_pair(&dir.join(&e.file)))
        .collect()
}

// ---------------------------------------------------------------------------
// Intensity CSV (t,intensity)

pub fn write_intensity(path: &Path, series: &IntensitySeries, dt: f64) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "intensity"])?;
    for (i, &v) in series.values.iter().enumerate() {
        w.serialize((series.timestep(i) as f64 * dt, v))?;
    }
    w.flush()?;
    Ok(())
}

/// Read back an intensity CSV as (t, intensity) rows.
pub fn read_intensity(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize::<(f64, f64)>() {
        out.push(row?);
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: empty intensity CSV", path.display())));
    }
    Ok(out)
}

pub fn metric_from_str(s: &str) -> Result<Metric> {
    match s {
        "js" => Ok(Metric::Js),
        "w2" => Ok(Metric::W2),
        other => Err(CliError::Usage(format!("unknown metric '{other}' (expected js|w2)"))),
    }
}

// ---------------------------------------------------------------------------
// Sample split JSON

#[derive(Debug, Serialize, Deserialize)]
pub struct SplitFile {
    pub version: u32,
    pub pair_id: String,
    /// Window indices into the pair's intensity series.
    pub interactive: Vec<usize>,
    pub non_interactive: Vec<usize>,
    pub random: Vec<usize>,
    pub fractions: (f64, f64, f64),
}

pub fn write_split(
    path: &Path,
    pair_id: &str,
    split: &SampleSplit,
    fractions: (f64, f64, f64),
) -> Result<()> {
    let file = SplitFile {
        version: FORMAT_VERSION,
        pair_id: pair_id.to_string(),
        interactive: split.interactive.clone(),
        non_interactive: split.non_interactive.clone(),
        random: split.random.clone(),
        fractions,
    };
    write_string(path, &to_json_pretty(&file)?)
}

// ---------------------------------------------------------------------------
// Posterior JSON

#[derive(Debug, Serialize, Deserialize)]
struct DrawRecord {
    v0: f64,
    t_headway: f64,
    s0: f64,
    a_max: f64,
    b: f64,
    sigma_obs: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PosteriorFile {
    version: u32,
    provenance: String,
    acceptance_rate: f64,
    acceptance_warning: bool,
    draws: Vec<DrawRecord>,
}

fn provenance_str(p: Provenance) -> &'static str {
    match p {
        Provenance::Interactive => "interactive",
        Provenance::NonInteractive => "non_interactive",
        Provenance::Random => "random",
    }
}

pub fn provenance_from_str(s: &str) -> Result<Provenance> {
    match s {
        "interactive" | "int" => Ok(Provenance::Interactive),
        "non_interactive" | "non" => Ok(Provenance::NonInteractive),
        "random" | "rand" => Ok(Provenance::Random),
        other => Err(CliError::Usage(format!(
            "unknown split '{other}' (expected int|non|rand)"
        ))),
    }
}

pub fn write_posterior(path: &Path, post: &IdmPosterior) -> Result<()> {
    let file = PosteriorFile {
        version: FORMAT_VERSION,
        provenance: provenance_str(post.provenance).to_string(),
        acceptance_rate: post.acceptance_rate,
        acceptance_warning: post.acceptance_warning,
        draws: post
            .draws
            .iter()
            .zip(&post.sigma_obs)
            .map(|(d, &s)| DrawRecord {
                v0: d.v0,
                t_headway: d.t_headway,
                s0: d.s0,
                a_max: d.a_max,
                b: d.b,
                sigma_obs: s,
            })
            .collect(),
    };
    write_string(path, &to_json_pretty(&file)?)
}

pub fn read_posterior(path: &Path) -> Result<IdmPosterior> {
    let file: PosteriorFile = serde_json::from_str(&read_to_string(path)?)?;
    if file.draws.is_empty() {
        return Err(CliError::Data(format!("{}: posterior has no draws", path.display())));
    }
    Ok(IdmPosterior {
        draws: file
            .draws
            .iter()
            .map(|d| IdmParams {
                v0: d.v0,
                t_headway: d.t_headway,
                s0: d.s0,
                a_max: d.a_max,
                b: d.b,
            })
            .collect(),
        sigma_obs: file.draws.iter().map(|d| d.sigma_obs).collect(),
        provenance: provenance_from_str(&file.provenance)?,
        acceptance_rate: file.acceptance_rate,
        acceptance_warning: file.acceptance_warning,
    })
}

// ---------------------------------------------------------------------------
// Switch config JSON

/// Threshold spec: a literal value or an "auto:q0.85"-style corpus quantile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum I0Spec {
    Value(f64),
    Quantile(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchSpec {
    pub mode: SwitchMode,
    pub i0: I0Spec,
    /// Defaults to 0.1 * resolved I0 when absent.
    pub beta: Option<f64>,
}

impl Default for SwitchSpec {
    fn default() -> Self {
        SwitchSpec {
            mode: SwitchMode::Soft,
            i0: I0Spec::Quantile(0.85),
            beta: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SwitchFile {
    mode: String,
    i0: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
}

pub fn read_switch_spec(path: &Path) -> Result<SwitchSpec> {
    let file: SwitchFile = serde_json::from_str(&read_to_string(path)?)?;
    let mode = match file.mode.as_str() {
        "hard" => SwitchMode::Hard,
        "soft" => SwitchMode::Soft,
        other => {
            return Err(CliError::Data(format!(
                "{}: unknown switch mode '{other}' (expected hard|soft)",
                path.display()
            )))
        }
    };
    let i0 = match &file.i0 {
        serde_json::Value::Number(n) => I0Spec::Value(n.as_f64().unwrap()),
        serde_json::Value::String(s) => {
            let q = s
                .strip_prefix("auto:q")
                .and_then(|q| q.parse::<f64>().ok())
                .filter(|q| *q > 0.0 && *q < 1.0)
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "{}: i0 must be a number or \"auto:q<fraction>\", got \"{s}\"",
                        path.display()
                    ))
                })?;
            I0Spec::Quantile(q)
        }
        other => {
            return Err(CliError::Data(format!(
                "{}: invalid i0 value {other}",
                path.display()
            )))
        }
    };
    Ok(SwitchSpec { mode, i0, beta: file.beta })
}

/// Resolve an I0 quantile against pooled corpus intensities and apply the
/// beta default.
pub fn resolve_switch(spec: &SwitchSpec, corpus_intensities: &[f64]) -> Result<SwitchConfig> {
    let i0 = match spec.i0 {
        I0Spec::Value(v) => v,
        I0Spec::Quantile(q) => {
            if corpus_intensities.is_empty() {
                return Err(CliError::data(
                    "switch threshold is a corpus quantile but no intensities were provided",
                ));
            }
            calibrate_threshold(corpus_intensities, q)?
        }
    };
    let cfg = SwitchConfig {
        i0,
        beta: spec.beta.unwrap_or(0.1 * i0).max(1e-12),
        mode: spec.mode,
    };
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Prior config JSON

#[derive(Debug, Serialize, Deserialize)]
struct PriorFile {
    v0: Option<(f64, f64)>,
    t_headway: Option<(f64, f64)>,
    s0: Option<(f64, f64)>,
    a_max: Option<(f64, f64)>,
    b: Option<(f64, f64)>,
    sigma_scale: Option<f64>,
}

pub fn read_prior(path: &Path) -> Result<PriorBox> {
    let file: PriorFile = serde_json::from_str(&read_to_string(path)?)?;
    let d = PriorBox::default();
    let prior = PriorBox {
        v0: file.v0.unwrap_or(d.v0),
        t_headway: file.t_headway.unwrap_or(d.t_headway),
        s0: file.s0.unwrap_or(d.s0),
        a_max: file.a_max.unwrap_or(d.a_max),
        b: file.b.unwrap_or(d.b),
        sigma_scale: file.sigma_scale.unwrap_or(d.sigma_scale),
    };
    prior.validate()?;
    Ok(prior)
}

// ---------------------------------------------------------------------------
// Results CSV

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub pair_id: String,
    pub policy: String,
    pub rmse_dx_mean: f64,
    pub rmse_dx_std: f64,
    pub rmse_safe_mean: f64,
    pub rmse_safe_std: f64,
    pub collisions: usize,
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize::<ResultRow>() {
        out.push(row?);
    }
    Ok(out)
}

/// Formatted text table with a `*` marking the per-pair minimum mean
/// RMSE(dx).
pub fn results_table(rows: &[ResultRow]) -> String {
    let mut pair_ids: Vec<&str> = rows.iter().map(|r| r.pair_id.as_str()).collect();
    pair_ids.dedup();
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:<12} {:>16} {:>16} {:>5}\n",
        "pair", "policy", "rmse_dx", "rmse_safe", "coll"
    ));
    for pid in pair_ids {
        let group: Vec<&ResultRow> = rows.iter().filter(|r| r.pair_id == pid).collect();
        let best = group
            .iter()
            .map(|r| r.rmse_dx_mean)
            .fold(f64::INFINITY, f64::min);
        for r in group {
            let mark = if r.rmse_dx_mean == best { "*" } else { " " };
            let dx = format!("{:.3} +-{:.3}{mark}", r.rmse_dx_mean, r.rmse_dx_std);
            let safe = format!("{:.3} +-{:.3}", r.rmse_safe_mean, r.rmse_safe_std);
            out.push_str(&format!(
                "{:<12} {:<12} {:>16} {:>16} {:>5}\n",
                r.pair_id, r.policy, dx, safe, r.collisions
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Run manifest

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    /// Resolved argv (without the program name); re-running the binary with
    /// exactly these arguments reproduces every output byte for byte.
    pub command: Vec<String>,
    pub inputs: Vec<String>,
    pub seed: Option<u64>,
    pub wall_time_s: f64,
}

pub const RUN_MANIFEST: &str = "manifest.json";

pub fn write_run_manifest(
    out_dir: &Path,
    command: Vec<String>,
    inputs: Vec<String>,
    seed: Option<u64>,
    wall_time_s: f64,
) -> Result<()> {
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command,
        inputs,
        seed,
        wall_time_s,
    };
    write_string(&out_dir.join(RUN_MANIFEST), &to_json_pretty(&manifest)?)
}

pub fn read_run_manifest(path: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&read_to_string(path)?)?)
}

// ---------------------------------------------------------------------------
// Simulation run CSV (one file per episode)

pub fn episode_path(out_dir: &Path, run: usize) -> PathBuf {
    out_dir.join(format!("run_{run:03}.csv"))
}

pub fn write_episode(
    path: &Path,
    pair: &TrajectoryPair,
    episode: &iacf_core::sim::Episode,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x", "v", "a", "dx", "intensity", "w_int"])?;
    for (i, s) in episode.follower.iter().enumerate() {
        let dx = pair.leader[i].x - s.x - pair.leader_length;
        let intensity = episode.intensity[i]
            .map(|v| v.to_string())
            .unwrap_or_default();
        w.write_record([
            s.t.to_string(),
            s.x.to_string(),
            s.v.to_string(),
            s.a.to_string(),
            dx.to_string(),
            intensity,
            episode.weights[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
