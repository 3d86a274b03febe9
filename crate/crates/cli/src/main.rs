//! `iacf`: interaction-aware car-following toolkit.
//!
//! Pipeline: ingest/synth -> fit -> quantify -> sample -> calibrate ->
//! simulate -> evaluate -> plot. Every subcommand is deterministic given its
//! flags and seed, and records a manifest.json that reproduces the run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use iacf_cli::formats::{self, ResultRow, SwitchSpec};
use iacf_cli::ingest::{parse_tracks, Schema};
use iacf_cli::svg;
use iacf_cli::{CliError, Result};

use iacf_core::calibrate::{calibrate, McmcSettings, PriorBox};
use iacf_core::gmm::{build_dataset, fit_em, select_k, FeatureLayout, Gmm};
use iacf_core::interaction::{intensity_series, split_by_intensity, IntensitySeries, Metric};
use iacf_core::rng::derive_seed;
use iacf_core::sim::{evaluate, run_episode, Controller, Episode, EpisodeConfig};
use iacf_core::synth::{synth_corpus, SynthConfig};
use iacf_core::traj::{extract_pairs, TrajectoryPair};

#[derive(Parser)]
#[command(name = "iacf", version, about = "Interaction-aware car-following toolkit")]
struct Cli {
    /// JSON config file; CLI flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic car-following corpus.
    Synth(SynthArgs),
    /// Parse a HighD-style CSV and extract car-following pairs.
    Ingest(IngestArgs),
    /// Fit the joint behavior model on a corpus.
    Fit(FitArgs),
    /// Quantify per-timestep interaction intensity for one pair.
    Quantify(QuantifyArgs),
    /// Rank-sample interactive/non-interactive/random window sets.
    Sample(SampleArgs),
    /// Calibrate an IDM policy posterior on an intensity split.
    Calibrate(CalibrateArgs),
    /// Closed-loop simulation of one pair under one policy.
    Simulate(SimulateArgs),
    /// Score all policies over a corpus (results.csv + table).
    Evaluate(EvaluateArgs),
    /// Render SVG figures from pipeline outputs.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of pairs.
    #[arg(long)]
    pairs: Option<usize>,
    /// Leader braking events per second (Poisson rate).
    #[arg(long)]
    event_rate: Option<f64>,
    /// Episode duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct IngestArgs {
    /// Input per-frame trajectory CSV.
    #[arg(long)]
    data: PathBuf,
    /// Column-name overrides, e.g. "v=speed,a=accel".
    #[arg(long)]
    schema: Option<String>,
    /// Input sample period in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Minimum pair duration in seconds.
    #[arg(long)]
    min_duration: Option<f64>,
    /// Maximum leader gap in meters.
    #[arg(long)]
    max_gap: Option<f64>,
    /// Downsampling factor (keep every n-th sample).
    #[arg(long)]
    factor: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    /// Corpus directory (with corpus.json).
    #[arg(long)]
    data: PathBuf,
    /// Component count, or "auto" for BIC selection over 2..10.
    #[arg(long)]
    k: Option<String>,
    /// Output model path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QuantifyArgs {
    /// Fitted model (*.gmm.json).
    #[arg(long)]
    model: PathBuf,
    /// Pair CSV.
    #[arg(long)]
    pair: PathBuf,
    /// js or w2.
    #[arg(long)]
    metric: Option<String>,
    /// Monte-Carlo samples per timestep (JS only).
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Output intensity CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    /// Pair CSV (for the scatter plot).
    #[arg(long)]
    pair: PathBuf,
    /// Intensity CSV from `quantify`.
    #[arg(long)]
    intensity: PathBuf,
    #[arg(long)]
    frac_int: Option<f64>,
    #[arg(long)]
    frac_non: Option<f64>,
    #[arg(long)]
    frac_rand: Option<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Corpus directory.
    #[arg(long)]
    data: PathBuf,
    /// Fitted model (*.gmm.json), used to rank windows by intensity.
    #[arg(long)]
    model: PathBuf,
    /// int, non, or rand.
    #[arg(long)]
    split: String,
    /// Prior box JSON (defaults documented in the README).
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Total MCMC iterations.
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Monte-Carlo samples per timestep for the intensity ranking.
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Output posterior JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Pair CSV.
    #[arg(long)]
    pair: PathBuf,
    /// int, non, rand, switch_hard, or switch_soft.
    #[arg(long)]
    policy: String,
    #[arg(long)]
    post_int: Option<PathBuf>,
    #[arg(long)]
    post_non: Option<PathBuf>,
    #[arg(long)]
    post_rand: Option<PathBuf>,
    /// Model for online intensity (switching policies).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Switch config JSON.
    #[arg(long)]
    switch_config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    mc_samples: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Corpus directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    post_int: Option<PathBuf>,
    #[arg(long)]
    post_non: Option<PathBuf>,
    #[arg(long)]
    post_rand: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    switch_config: Option<PathBuf>,
    /// Comma-separated policy list.
    #[arg(long)]
    policies: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    mc_samples: Option<usize>,
}

#[derive(Args)]
struct PlotArgs {
    /// hist, profile, or sim.
    #[arg(long)]
    kind: String,
    /// Intensity CSVs (hist pools all of them; profile takes one).
    #[arg(long)]
    intensity: Vec<PathBuf>,
    /// Episode CSV from `simulate` (sim kind).
    #[arg(long)]
    run: Option<PathBuf>,
    /// Pair CSV (sim kind).
    #[arg(long)]
    pair: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    /// Output SVG path.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Optional defaults loadable from --config; any CLI flag wins.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    pairs: Option<usize>,
    event_rate: Option<f64>,
    duration: Option<f64>,
    dt: Option<f64>,
    min_duration: Option<f64>,
    max_gap: Option<f64>,
    factor: Option<usize>,
    k: Option<String>,
    metric: Option<String>,
    mc_samples: Option<usize>,
    frac_int: Option<f64>,
    frac_non: Option<f64>,
    frac_rand: Option<f64>,
    draws: Option<usize>,
    burn_in: Option<usize>,
    thin: Option<usize>,
    runs: Option<usize>,
    bins: Option<usize>,
}

struct Ctx {
    seed: u64,
    out_dir: PathBuf,
    verbose: bool,
    file: FileConfig,
    started: Instant,
}

impl Ctx {
    fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("iacf: {msg}");
        }
    }

    fn manifest(&self, command: Vec<String>, inputs: Vec<&Path>) -> Result<()> {
        formats::write_run_manifest(
            &self.out_dir,
            command,
            inputs
                .iter()
                .map(|p| p.to_string_lossy().into_owned())
                .collect(),
            Some(self.seed),
            self.started.elapsed().as_secs_f64(),
        )
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("iacf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file: FileConfig = match &cli.config {
        Some(path) => serde_json::from_str(
            &std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?,
        )?,
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out_dir: cli
            .out_dir
            .clone()
            .or_else(|| file.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out")),
        verbose: cli.verbose,
        file,
        started: Instant::now(),
    };
    std::fs::create_dir_all(&ctx.out_dir)?;
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(&ctx, a),
        Cmd::Ingest(a) => cmd_ingest(&ctx, a),
        Cmd::Fit(a) => cmd_fit(&ctx, a),
        Cmd::Quantify(a) => cmd_quantify(&ctx, a),
        Cmd::Sample(a) => cmd_sample(&ctx, a),
        Cmd::Calibrate(a) => cmd_calibrate(&ctx, a),
        Cmd::Simulate(a) => cmd_simulate(&ctx, a),
        Cmd::Evaluate(a) => cmd_evaluate(&ctx, a),
        Cmd::Plot(a) => cmd_plot(&ctx, a),
    }
}

fn arg(s: &str) -> String {
    s.to_string()
}

fn farg(v: f64) -> String {
    v.to_string()
}

// ---------------------------------------------------------------------------

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let n_pairs = a.pairs.or(ctx.file.pairs).unwrap_or(10);
    let event_rate = a.event_rate.or(ctx.file.event_rate).unwrap_or(0.02);
    let duration = a.duration.or(ctx.file.duration).unwrap_or(60.0);
    let cfg = SynthConfig {
        n_pairs,
        seed: ctx.seed,
        event_rate,
        duration,
        ..SynthConfig::default()
    };
    let pairs = synth_corpus(&cfg);
    formats::write_corpus(&ctx.out_dir, &pairs, "synthetic")?;
    ctx.log(&format!("wrote {} synthetic pairs to {}", pairs.len(), ctx.out_dir.display()));
    ctx.manifest(
        vec![
            arg("synth"),
            arg("--pairs"), n_pairs.to_string(),
            arg("--event-rate"), farg(event_rate),
            arg("--duration"), farg(duration),
            arg("--seed"), ctx.seed.to_string(),
            arg("--out-dir"), ctx.out_dir.display().to_string(),
        ],
        vec![],
    )
}

fn cmd_ingest(ctx: &Ctx, a: IngestArgs) -> Result<()> {
    let schema_spec = a.schema.clone().unwrap_or_default();
    let schema = if schema_spec.is_empty() {
        Schema::default()
    } else {
        Schema::parse(&schema_spec)?
    };
    let dt = a.dt.or(ctx.file.dt).unwrap_or(0.04);
    let min_duration = a.min_duration.or(ctx.file.min_duration).unwrap_or(15.0);
    let max_gap = a.max_gap.or(ctx.file.max_gap).unwrap_or(120.0);
    let factor = a.factor.or(ctx.file.factor).unwrap_or(5);
    let tracks = parse_tracks(&a.data, &schema, dt)?;
    let mut pairs = extract_pairs(&tracks, min_duration, max_gap);
    for pair in &mut pairs {
        *pair = pair.downsample(factor)?;
    }
    // Stable ids in extraction order.
    for (i, pair) in pairs.iter_mut().enumerate() {
        pair.pair_id = format!("pair_{i:03}");
    }
    if pairs.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no car-following pairs satisfy the extraction criteria (empty corpus)",
            a.data.display()
        )));
    }
    formats::write_corpus(&ctx.out_dir, &pairs, "recorded")?;
    ctx.log(&format!("extracted {} pairs from {}", pairs.len(), a.data.display()));
    ctx.manifest(
        vec![
            arg("ingest"),
            arg("--data"), a.data.display().to_string(),
            arg("--schema"), schema_spec,
            arg("--dt"), farg(dt),
            arg("--min-duration"), farg(min_duration),
            arg("--max-gap"), farg(max_gap),
            arg("--factor"), factor.to_string(),
            arg("--out-dir"), ctx.out_dir.display().to_string(),
        ],
        vec![&a.data],
    )
}

fn cmd_fit(ctx: &Ctx, a: FitArgs) -> Result<()> {
    let k_spec = a.k.clone().or_else(|| ctx.file.k.clone()).unwrap_or_else(|| arg("auto"));
    let out = a.out.clone().unwrap_or_else(|| ctx.out_dir.join("model.gmm.json"));
    let pairs = formats::load_corpus(&a.data)?;
    let layout = FeatureLayout::DEFAULT;
    let data = build_dataset(&pairs, layout);
    if data.nrows() == 0 {
        return Err(CliError::data("corpus has no windows long enough to fit"));
    }
    let model = if k_spec == "auto" {
        match select_k(&data, layout.blocks(), (2, 10), ctx.seed, 200, 1e-6) {
            Ok((k, fit)) => {
                ctx.log(&format!("BIC selected K = {k}"));
                fit.model
            }
            // Documented fallback when selection cannot run.
            Err(_) => fit_em(&data, 5, layout.blocks(), ctx.seed, 200, 1e-6)?.model,
        }
    } else {
        let k: usize = k_spec
            .parse()
            .map_err(|_| CliError::Usage(format!("--k must be a count or \"auto\", got '{k_spec}'")))?;
        fit_em(&data, k, layout.blocks(), ctx.seed, 200, 1e-6)?.model
    };
    formats::write_gmm(&out, &model)?;
    ctx.log(&format!("wrote model to {}", out.display()));
    ctx.manifest(
        vec![
            arg("fit"),
            arg("--data"), a.data.display().to_string(),
            arg("--k"), k_spec,
            arg("--out"), out.display().to_string(),
            arg("--seed"), ctx.seed.to_string(),
            arg("--out-dir"), ctx.out_dir.display().to_string(),
        ],
        vec![&a.data],
    )
}

fn resolve_metric(flag: &Option<String>, ctx: &Ctx) -> Result<(Metric, String)> {
    let name = flag
        .clone()
        .or_else(|| ctx.file.metric.clone())
        .unwrap_or_else(|| arg("js"));
    Ok((formats::metric_from_str(&name)?, name))
}

fn cmd_quantify(ctx: &Ctx, a: QuantifyArgs) -> Result<()> {
    let (metric, metric_name) = resolve_metric(&a.metric, ctx)?;
    let n_mc = a.mc_samples.or(ctx.file.mc_samples).unwrap_or(20_000);
    let model = formats::read_gmm(&a.model)?;
    let pair = formats::read_pair(&a.pair)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| ctx.out_dir.join(format!("{}.intensity.csv", pair.pair_id)));
    let series = intensity_series(&model, &pair, metric, n_mc, ctx.seed)?;
    formats::write_intensity(&out, &series, pair.dt)?;
    ctx.log(&format!("{} intensity rows to {}", series.values.len(), out.display()));
    ctx.manifest(
        vec![
            arg("quantify"),
            arg("--model"), a.model.display().to_string(),
            arg("--pair"), a.pair.display().to_string(),
            arg("--metric"), metric_name,
            arg("--mc-samples"), n_mc.to_string(),
            arg("--out"), out.display().to_string(),
            arg("--seed"), ctx.seed.to_string(),
            arg("--out-dir"), ctx.out_dir.display().to_string(),
        ],
        vec![a.model.as_path(), a.pair.as_path()],
    )
}

/// Rebuild an IntensitySeries from a quantify CSV; the first row's time
/// recovers the window offset.
fn series_from_csv(path: &Path, pair: &TrajectoryPair, metric: Metric) -> Result<IntensitySeries> {
    let rows = formats::read_intensity(path)?;
    let first_step = (rows[0].0 / pair.dt).round() as usize;
    Ok(IntensitySeries {
        pair_id: pair.pair_id.clone(),
        metric,
        values: rows.iter().map(|r| r.1).collect(),
        first_step,
    })
}

fn cmd_sample(ctx: &Ctx, a: SampleArgs) -> Result<()> {
    let frac_int = a.frac_int.or(ctx.file.frac_int).unwrap_or(0.03);
    let frac_non = a.frac_non.or(ctx.file.frac_non).unwrap_or(0.03);
    let frac_rand = a.frac_rand.or(ctx.file.frac_rand).unwrap_or(0.06);
    let pair = formats::read_pair(&a.pair)?;
    let series = series_from_csv(&a.intensity, &pair, Metric::Js)?;
    let split = split_by_intensity(&series, frac_int, frac_non, frac_rand, ctx.seed)?;
    formats::write_split(
        &ctx.out_dir.join("split.json"),
        &pair.pair_id,
        &split,
        (frac_int, frac_non, frac_rand),
    )?;
    // Fig-4-style scatter in the (dx, dv) plane at the decision timesteps.
    let points = |idx: &[usize]| -> Vec<(f64, f64)> {
        idx.iter()
            .map(|&i| {
                let t = series.timestep(i);
                (pair.dx(t), pair.dv(t))
            })
            .collect()
    };
    let svg = svg::scatter_svg(
        &[
            (arg("interactive"), points(&split.interactive)),
            (arg("non-interactive"), points(&split.non_interactive)),
            (arg("random"), points(&split.random)),
        ],
        "sampled windows",
        "dx [m]",
        "dv [m/s]",
    );
    std::fs::write(ctx.out_dir.join("samples.svg"), &svg)?;
    ctx.manifest(
        vec![
            arg("sample"),
            arg("--pair"), a.pair.display().to_string(),
            arg("--intensity"), a.intensity.display().to_string(),
            arg("--frac-int"), farg(frac_int),
            arg("--frac-non"), farg(frac_non),
            arg("--frac-rand"), farg(frac_rand),
            arg("--seed"), ctx.seed.to_string(),
            arg("--out-dir"), ctx.out_dir.display().to_string(),
        ],
        vec![a.pair.as_path(), a.intensity.as_path()],
    )
}

fn cmd_calibrate(ctx: &Ctx, a: CalibrateArgs) -> Result<()> {
    let provenance = formats::provenance_from_str(&a.split)?;
    let n_iter = a.draws.or(ctx.file.draws).unwrap_or(20_000);
    let burn_in = a.burn_in.or(ctx.file.burn_in).unwrap_or(5_000);
    let thin = a.thin.or(ctx.file.thin).unwrap_or(10);
    let n_mc = a.mc_samples.or(ctx.file.mc_samples).unwrap_or(20_000);
    let prior = match &a.prior {
        Some(path) => formats::read_prior(path)?,
        None => PriorBox::default(),
    };
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| ctx.out_dir.join(format!("pi_{}.json", a.split)));
    let pairs = formats::load_corpus(&a.data)?;
    let model = formats::read_gmm(&a.model)?;

    let mut subsets = Vec::new();
    for (idx, pair) in pairs.iter().enumerate() {
        let series = intensity_series(&model, pair, Metric::Js, n_mc, derive_seed(ctx.seed, idx as u64))?;
        let split = split_by_intensity(
            &series,
            0.03,
            0.03,
            0.06,
            derive_seed(ctx.seed, (idx as u64) | (1 << 32)),
        )?;
        let windows = match provenance {
            iacf_core::calibrate::Provenance::Interactive => &split.interactive,
            iacf_core::calibrate::Provenance::NonInteractive => &split.non_interactive,
            iacf_core::calibrate::Provenance::Random => &split.random,
        };
        let steps: Vec<usize> = windows.iter().map(|&i| series.timestep(i)).collect();
        subsets.push((pair, steps));
    }
    let stream = match provenance {
        iacf_core::calibrate::Provenance::Interactive => 1,
        iacf_core::calibrate::Provenance::NonInteractive => 2,
        iacf_core::calibrate::Provenance::Random => 3,
    };
    let settings = McmcSettings {
        n_iter,
        burn_in,
        thin,
        seed: derive_seed(ctx.seed, stream),
    };
    let posterior = calibrate(&subsets, &prior, &settings, provenance)?;
    if posterior.acceptance_warning {
        eprintln!(
            "iacf: warning: MCMC acceptance rate {:.3} outside [0.05, 0.7]",
            posterior.acceptance_rate
        );
    }
    formats::write_posterior(&out, &posterior)?;
    ctx.log(&format!(
        "{} draws (acceptance {:.3}) to {}",
        posterior.draws.len(),
        posterior.acceptance_rate,
        out.display()
    ));
    let mut command = vec![
        arg("calibrate"),
        arg("--data"), a.data.display().to_string(),
        arg("--model"), a.model.display().to_string(),
        arg("--split"), a.split.clone(),
        arg("--draws"), n_iter.to_string(),
        arg("--burn-in"), burn_in.to_string(),
        arg("--thin"), thin.to_string(),
        arg("--mc-samples"), n_mc.to_string(),
        arg("--out"), out.display().to_string(),
        arg("--seed"), ctx.seed.to_string(),
        arg("--out-dir"), ctx.out_dir.display().to_string(),
    ];
    if let Some(p) = &a.prior {
        command.extend([arg("--prior"), p.display().to_string()]);
    }
    let mut inputs = vec![a.data.as_path(), a.model.as_path()];
    if let Some(p) = &a.prior {
        inputs.push(p);
    }
    ctx.manifest(command, inputs)
}

struct PolicyRealization<'a> {
    controller: Controller<'a>,
    needs_model: bool,
}

fn build_controller<'a>(
    policy: &str,
    post_int: &'a Option<iacf_core::calibrate::IdmPosterior>,
    post_non: &'a Option<iacf_core::calibrate::IdmPosterior>,
    post_rand: &'a Option<iacf_core::calibrate::IdmPosterior>,
    switch: &Option<iacf_core::switching::SwitchConfig>,
) -> Result<PolicyRealization<'a>> {
    let need = |post: &'a Option<iacf_core::calibrate::IdmPosterior>, flag: &str| {
        post.as_ref()
            .ok_or_else(|| CliError::Data(format!("policy '{flag}' needs its posterior file")))
    };
    let switching = |mode: iacf_core::switching::SwitchMode| -> Result<PolicyRealization<'a>> {
        let cfg = switch
            .ok_or_else(|| CliError::data("switching policy needs a resolvable switch config"))?;
        Ok(PolicyRealization {
            controller: Controller::Switching {
                interactive: need(post_int, "--post-int")?,
                non_interactive: need(post_non, "--post-non")?,
                config: iacf_core::switching::SwitchConfig { mode, ..cfg },
            },
            needs_model: true,
        })
    };
    match policy {
        "int" => Ok(PolicyRealization {
            controller: Controller::Single(need(post_int, "--post-int")?),
            needs_model: false,
        }),
        "non" => Ok(PolicyRealization {
            controller: Controller::Single(need(post_non, "--post-non")?),
            needs_model: false,
        }),
        "rand" => Ok(PolicyRealization {
            controller: Controller::Single(need(post_rand, "--post-rand")?),
            needs_model: false,
        }),
        "switch_hard" => switching(iacf_core::switching::SwitchMode::Hard),
        "switch_soft" => switching(iacf_core::switching::SwitchMode::Soft),
        other => Err(CliError::Usage(format!(
            "unknown policy '{other}' (expected int|non|rand|switch_hard|switch_soft)"
        ))),
    }
}

fn read_posterior_opt(
    path: &Option<PathBuf>,
) -> Result<Option<iacf_core::calibrate::IdmPosterior>> {
    path.as_ref().map(|p| formats::read_posterior(p)).transpose()
}

/// Resolve the switch config; quantile thresholds pool the given pairs'
/// human-trajectory intensities.
fn resolve_switch_for(
    spec_path: &Option<PathBuf>,
    model: Option<&Gmm>,
    pairs: &[TrajectoryPair],
    metric: Metric,
    n_mc: usize,
    seed: u64,
) -> Result<Option<iacf_core::switching::SwitchConfig>> {
    let spec = match spec_path {
        Some(p) => formats::read_switch_spec(p)?,
        None => SwitchSpec::default(),
    };
    let needs_corpus = matches!(spec.i0, formats::I0Spec::Quantile(_));
    let Some(model) = model else {
        return if needs_corpus {
            Ok(None)
        } else {
            Ok(Some(formats::resolve_switch(&spec, &[])?))
        };
    };
    let mut pooled = Vec::new();
    if needs_corpus {
        for (idx, pair) in pairs.iter().enumerate() {
            let series = intensity_series(model, pair, metric, n_mc, derive_seed(seed, idx as u64))?;
            pooled.extend(series.values);
        }
    }
    Ok(Some(formats::resolve_switch(&spec, &pooled)?))
}

#[derive(Serialize)]
struct SimSummary {
    pair_id: String,
    policy: String,
    runs: usize,
    rmse_dx_mean: f64,
    rmse_dx_std: f64,
    rmse_safe_mean: f64,
    rmse_safe_std: f64,
    collisions: usize,
}

fn cmd_simulate(ctx: &Ctx, a: SimulateArgs) -> Result<()> {
    let (metric, metric_name) = resolve_metric(&a.metric, ctx)?;
    let n_mc = a.mc_samples.or(ctx.file.mc_samples).unwrap_or(20_000);
    let runs = a.runs.or(ctx.file.runs).unwrap_or(20);
    if runs == 0 {
        return Err(CliError::Usage("--runs must be >= 1".into()));
    }
    let pair = formats::read_pair(&a.pair)?;
    let model = a.model.as_ref().map(|p| formats::read_gmm(p)).transpose()?;
    let post_int = read_posterior_opt(&a.post_int)?;
    let post_non = read_posterior_opt(&a.post_non)?;
    let post_rand = read_posterior_opt(&a.post_rand)?;
    let switch = resolve_switch_for(
        &a.switch_config,
        model.as_ref(),
        std::slice::from_ref(&pair),
        metric,
        n_mc,
        derive_seed(ctx.seed, 0x5157),
    )?;
    let realization = build_controller(&a.policy, &post_int, &post_non, &post_rand, &switch)?;
    if realization.needs_model && model.is_none() {
        return Err(CliError::data("switching policies need --model for online intensity"));
    }

    let mut records = Vec::new();
    let mut first: Option<Episode> = None;
    for run in 0..runs {
        let cfg = EpisodeConfig {
            model: model.as_ref(),
            metric,
            n_mc,
            seed: derive_seed(derive_seed(ctx.seed, 0), run as u64),
        };
        let episode = run_episode(&realization.controller, &pair, &cfg)?;
        formats::write_episode(&formats::episode_path(&ctx.out_dir, run), &pair, &episode)?;
        records.push(episode.clone());
        if first.is_none() {
            first = Some(episode);
        }
    }
    let dx: Vec<f64> = records.iter().map(|e| iacf_core::sim::rmse_dx(&pair, e)).collect();
    let safe: Vec<f64> = records.iter().map(|e| iacf_core::sim::rmse_safe(&pair, e)).collect();
    let stat = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let s = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt();
        (m, s)
    };
    let (dxm, dxs) = stat(&dx);
    let (sm, ss) = stat(&safe);
    let summary = SimSummary {
        pair_id: pair.pair_id.clone(),
        policy: a.policy.clone(),
        runs,
        rmse_dx_mean: dxm,
        rmse_dx_std: dxs,
        rmse_safe_mean: sm,
        rmse_safe_std: ss,
        collisions: records.iter().filter(|e| e.collided()).count(),
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    std::fs::write(ctx.out_dir.join("summary.json"), json)?;

    let episode = first.expect("runs >= 1");
    std::fs::write(
        ctx.out_dir.join("sim.svg"),
        sim_figure(&pair, &episode, &a.policy),
    )?;

    let mut command = vec![
        arg("simulate"),
        arg("--pair"), a.pair.display().to_string(),
        arg("--policy"), a.policy.clone(),
        arg("--runs"), runs.to_string(),
        arg("--metric"), metric_name,
        arg("--mc-samples"), n_mc.to_string(),
        arg("--seed"), ctx.seed.to_string(),
        arg("--out-dir"), ctx.out_dir.display().to_string(),
    ];
    let mut inputs = vec![a.pair.as_path()];
    for (flag, path) in [
        ("--post-int", &a.post_int),
        ("--post-non", &a.post_non),
        ("--post-rand", &a.post_rand),
        ("--model", &a.model),
        ("--switch-config", &a.switch_config),
    ] {
        if let Some(p) = path {
            command.extend([arg(flag), p.display().to_string()]);
            inputs.push(p);
        }
    }
    ctx.manifest(command, inputs)
}

/// Two-panel figure: leader-relative trajectories, then intensity and the
/// interactive weight.
fn sim_figure(pair: &TrajectoryPair, episode: &Episode, policy: &str) -> String {
    let t_of = |i: usize| pair.leader[i].t;
    let human: Vec<(f64, f64)> = (0..pair.len()).map(|i| (t_of(i), -pair.dx(i))).collect();
    let sim: Vec<(f64, f64)> = episode
        .follower
        .iter()
        .enumerate()
        .map(|(i, s)| (t_of(i), s.x - pair.leader[i].x + pair.leader_length))
        .collect();
    let left = svg::Chart {
        title: format!("trajectories ({policy})"),
        xlabel: arg("t [s]"),
        ylabel: arg("position relative to leader [m]"),
        series: vec![
            svg::Series { name: arg("human follower"), kind: svg::SeriesKind::Line, points: human },
            svg::Series { name: arg("simulated follower"), kind: svg::SeriesKind::Line, points: sim },
        ],
    };
    let intensity: Vec<(f64, f64)> = episode
        .intensity
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (t_of(i), v)))
        .collect();
    let weights: Vec<(f64, f64)> = episode
        .weights
        .iter()
        .enumerate()
        .map(|(i, &w)| (t_of(i), w))
        .collect();
    let right = svg::Chart {
        title: arg("online intensity and blend weight"),
        xlabel: arg("t [s]"),
        ylabel: arg("intensity / w_int"),
        series: vec![
            svg::Series { name: arg("intensity"), kind: svg::SeriesKind::Line, points: intensity },
            svg::Series { name: arg("w_int"), kind: svg::SeriesKind::Line, points: weights },
        ],
    };
    svg::sim_svg(left, right)
}

fn cmd_evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let (metric, metric_name) = resolve_metric(&a.metric, ctx)?;
    let n_mc = a.mc_samples.or(ctx.file.mc_samples).unwrap_or(20_000);
    let runs = a.runs.or(ctx.file.runs).unwrap_or(20);
    let policy_list = a
        .policies
        .clone()
        .unwrap_or_else(|| arg("int,non,rand,switch_hard,switch_soft"));
    let pairs = formats::load_corpus(&a.data)?;
    let model = a.model.as_ref().map(|p| formats::read_gmm(p)).transpose()?;
    let post_int = read_posterior_opt(&a.post_int)?;
    let post_non = read_posterior_opt(&a.post_non)?;
    let post_rand = read_posterior_opt(&a.post_rand)?;
    let switch = resolve_switch_for(
        &a.switch_config,
        model.as_ref(),
        &pairs,
        metric,
        n_mc,
        derive_seed(ctx.seed, 0x5157),
    )?;

    let mut rows: Vec<ResultRow> = Vec::new();
    for policy in policy_list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let realization = build_controller(policy, &post_int, &post_non, &post_rand, &switch)?;
        if realization.needs_model && model.is_none() {
            return Err(CliError::data("switching policies need --model for online intensity"));
        }
        let cfg = EpisodeConfig {
            model: model.as_ref(),
            metric,
            n_mc,
            seed: ctx.seed,
        };
        ctx.log(&format!("evaluating {policy} on {} pairs", pairs.len()));
        let records = evaluate(&realization.controller, &pairs, &cfg, runs)?;
        rows.extend(records.into_iter().map(|r| ResultRow {
            pair_id: r.pair_id,
            policy: arg(policy),
            rmse_dx_mean: r.rmse_dx_mean,
            rmse_dx_std: r.rmse_dx_std,
            rmse_safe_mean: r.rmse_safe_mean,
            rmse_safe_std: r.rmse_safe_std,
            collisions: r.collisions,
        }));
    }
    // Group by pair for the table and CSV.
    rows.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    formats::write_results(&ctx.out_dir.join("results.csv"), &rows)?;
    let table = formats::results_table(&rows);
    std::fs::write(ctx.out_dir.join("table.txt"), &table)?;
    print!("{table}");

    let mut command = vec![
        arg("evaluate"),
        arg("--data"), a.data.display().to_string(),
        arg("--policies"), policy_list,
        arg("--runs"), runs.to_string(),
        arg("--metric"), metric_name,
        arg("--mc-samples"), n_mc.to_string(),
        arg("--seed"), ctx.seed.to_string(),
        arg("--out-dir"), ctx.out_dir.display().to_string(),
    ];
    let mut inputs = vec![a.data.as_path()];
    for (flag, path) in [
        ("--post-int", &a.post_int),
        ("--post-non", &a.post_non),
        ("--post-rand", &a.post_rand),
        ("--model", &a.model),
        ("--switch-config", &a.switch_config),
    ] {
        if let Some(p) = path {
            command.extend([arg(flag), p.display().to_string()]);
            inputs.push(p);
        }
    }
    ctx.manifest(command, inputs)
}

fn cmd_plot(ctx: &Ctx, a: PlotArgs) -> Result<()> {
    let bins = a.bins.or(ctx.file.bins).unwrap_or(30);
    let (svg_text, default_name) = match a.kind.as_str() {
        "hist" => {
            if a.intensity.is_empty() {
                return Err(CliError::Usage("plot --kind hist needs --intensity files".into()));
            }
            let mut pooled = Vec::new();
            for path in &a.intensity {
                pooled.extend(formats::read_intensity(path)?.into_iter().map(|r| r.1));
            }
            (
                svg::histogram_svg(&pooled, bins, "interaction intensity", "intensity"),
                "histogram.svg",
            )
        }
        "profile" => {
            let [path] = a.intensity.as_slice() else {
                return Err(CliError::Usage(
                    "plot --kind profile needs exactly one --intensity file".into(),
                ));
            };
            let rows = formats::read_intensity(path)?;
            (
                svg::profile_svg(&rows, "interaction intensity", "t [s]", "intensity"),
                "profile.svg",
            )
        }
        "sim" => {
            let run = a.run.as_ref().ok_or_else(|| {
                CliError::Usage("plot --kind sim needs --run and --pair".into())
            })?;
            let pair_path = a.pair.as_ref().ok_or_else(|| {
                CliError::Usage("plot --kind sim needs --run and --pair".into())
            })?;
            let pair = formats::read_pair(pair_path)?;
            let episode = read_episode_csv(run)?;
            (sim_figure(&pair, &episode, "replay"), "sim.svg")
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown plot kind '{other}' (expected hist|profile|sim)"
            )))
        }
    };
    let out = a.out.clone().unwrap_or_else(|| ctx.out_dir.join(default_name));
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&out, svg_text)?;
    ctx.log(&format!("wrote {}", out.display()));

    let mut command = vec![arg("plot"), arg("--kind"), a.kind.clone()];
    let mut inputs: Vec<&Path> = Vec::new();
    for p in &a.intensity {
        command.extend([arg("--intensity"), p.display().to_string()]);
        inputs.push(p);
    }
    for (flag, path) in [("--run", &a.run), ("--pair", &a.pair)] {
        if let Some(p) = path {
            command.extend([arg(flag), p.display().to_string()]);
            inputs.push(p);
        }
    }
    command.extend([
        arg("--bins"), bins.to_string(),
        arg("--out"), out.display().to_string(),
        arg("--seed"), ctx.seed.to_string(),
        arg("--out-dir"), ctx.out_dir.display().to_string(),
    ]);
    ctx.manifest(command, inputs)
}

/// Read back an episode CSV written by `simulate`.
fn read_episode_csv(path: &Path) -> Result<Episode> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut follower = Vec::new();
    let mut intensity = Vec::new();
    let mut weights = Vec::new();
    for record in reader.records() {
        let record = record?;
        let cell = |i: usize| -> Result<f64> {
            record
                .get(i)
                .unwrap_or("")
                .parse()
                .map_err(|_| CliError::Data(format!("{}: bad numeric cell", path.display())))
        };
        follower.push(iacf_core::traj::TrajectorySample {
            t: cell(0)?,
            x: cell(1)?,
            v: cell(2)?,
            a: cell(3)?,
        });
        let raw = record.get(5).unwrap_or("");
        intensity.push(if raw.is_empty() { None } else { Some(cell(5)?) });
        weights.push(cell(6)?);
    }
    if follower.is_empty() {
        return Err(CliError::Data(format!("{}: empty episode CSV", path.display())));
    }
    Ok(Episode {
        follower,
        intensity,
        weights,
        collision_step: None,
    })
}
