//! Interaction intensity: divergence between the conditional behavior model f
//! and the marginal behavior model g at every timestep, plus the
//! intensity-ranked sampling of interactive / non-interactive data.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::error::{CoreError, Result};
use crate::gmm::{
    feature_window, log_sum_exp, FeatureLayout, Gmm, BLOCK_A_HIST, BLOCK_DV, BLOCK_DX,
    BLOCK_V_FOLL,
};
use crate::rng::{derive_seed, seeded};
use crate::traj::TrajectoryPair;
use crate::transport::{solve_transport, transport_cost};

pub const LN_2: f64 = core::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Js,
    W2,
}

/// Per-timestep interaction intensity for one pair. Entry `i` belongs to the
/// sliding window starting at sample `i`; its decision timestep is
/// `first_step + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySeries {
    pub pair_id: String,
    pub metric: Metric,
    pub values: Vec<f64>,
    /// Timestep index of the first window's decision point (H - 1).
    pub first_step: usize,
}

impl IntensitySeries {
    pub fn timestep(&self, i: usize) -> usize {
        self.first_step + i
    }
}

/// Index sets produced by intensity-ranked sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSplit {
    pub interactive: Vec<usize>,
    pub non_interactive: Vec<usize>,
    pub random: Vec<usize>,
    pub fractions: (u32, u32, u32),
}

/// 2-Wasserstein distance between two Gaussians:
/// sqrt(|mu1 - mu2|^2 + B) with the Bures covariance term
/// B = tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2), computed by eigendecomposition.
pub fn gaussian_w2(
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || cov1.nrows() != d || cov2.nrows() != d {
        return Err(CoreError::Argument("gaussian_w2 dimension mismatch".into()));
    }
    let sqrt2 = spd_sqrt(cov2)?;
    let inner = &sqrt2 * cov1 * &sqrt2;
    let cross = spd_sqrt_trace(&inner)?;
    let bures = cov1.trace() + cov2.trace() - 2.0 * cross;
    if bures < -1e-8 {
        return Err(CoreError::Numeric(format!(
            "Bures term came out negative ({bures:e}); input not SPD?"
        )));
    }
    let d2 = (mu1 - mu2).norm_squared() + bures.max(0.0);
    Ok(libm::sqrt(d2))
}

fn spd_eigen(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let sym = 0.5 * (cov + cov.transpose());
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    if eig.eigenvalues.iter().any(|&l| l < -1e-8 * scale.max(1e-12)) {
        return Err(CoreError::Numeric(
            "covariance matrix is not positive semi-definite".into(),
        ));
    }
    Ok((eig.eigenvectors, eig.eigenvalues))
}

fn spd_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (q, lambda) = spd_eigen(cov)?;
    let sqrt_l = DMatrix::from_diagonal(&lambda.map(|l| libm::sqrt(l.max(0.0))));
    Ok(&q * sqrt_l * q.transpose())
}

fn spd_sqrt_trace(cov: &DMatrix<f64>) -> Result<f64> {
    let (_, lambda) = spd_eigen(cov)?;
    Ok(lambda.iter().map(|&l| libm::sqrt(l.max(0.0))).sum())
}

fn check_simplex(weights: &[f64]) -> Result<()> {
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(CoreError::Argument(format!(
            "mixture weights are not on the simplex (sum {sum})"
        )));
    }
    Ok(())
}

/// Mixture 2-Wasserstein: optimal coupling of the component weights under
/// squared Gaussian-W2 costs, solved exactly, then the 1/2 power.
pub fn mixture_w2(f: &Gmm, g: &Gmm) -> Result<f64> {
    if f.dim() != g.dim() {
        return Err(CoreError::Argument("mixture_w2 dimension mismatch".into()));
    }
    check_simplex(&f.weights)?;
    check_simplex(&g.weights)?;
    let (kf, kg) = (f.k(), g.k());
    let mut cost = DMatrix::zeros(kf, kg);
    for i in 0..kf {
        for j in 0..kg {
            let d = gaussian_w2(&f.means[i], &f.covs[i], &g.means[j], &g.covs[j])?;
            cost[(i, j)] = d * d;
        }
    }
    // Renormalize exactly so the transportation instance balances.
    let norm = |w: &[f64]| -> Vec<f64> {
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    };
    let flow = solve_transport(&norm(&f.weights), &norm(&g.weights), &cost)?;
    Ok(libm::sqrt(transport_cost(&flow, &cost).max(0.0)))
}

/// Monte-Carlo KL(f || g): mean of log f - log g over n draws from f,
/// clamped at zero from below. Deterministic given the seed.
pub fn kl_mc(f: &Gmm, g: &Gmm, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(CoreError::Argument("kl_mc needs n >= 1 samples".into()));
    }
    let draws = f.sample(n, seed);
    let df = f.precompute();
    let dg = g.precompute();
    let mut acc = 0.0;
    for i in 0..n {
        let x = draws.row(i).transpose();
        acc += df.logpdf(&x) - dg.logpdf(&x);
    }
    Ok((acc / n as f64).max(0.0))
}

/// One half of the JS sum: E_{x~a}[log a(x) - log h(x)] with
/// h = (a + b) / 2 evaluated pointwise in log space.
fn kl_to_midpoint(a: &Gmm, b: &Gmm, n: usize, seed: u64) -> f64 {
    let draws = a.sample(n, seed);
    let da = a.precompute();
    let db = b.precompute();
    let mut acc = 0.0;
    for i in 0..n {
        let x = draws.row(i).transpose();
        let la = da.logpdf(&x);
        let lb = db.logpdf(&x);
        let lh = log_sum_exp(&[la, lb]) - LN_2;
        acc += la - lh;
    }
    acc / n as f64
}

/// Monte-Carlo Jensen-Shannon divergence, clamped into [0, ln 2].
///
/// Both halves consume an identically-seeded stream, which makes the
/// estimate exactly symmetric in (f, g).
pub fn js_divergence(f: &Gmm, g: &Gmm, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(CoreError::Argument("js_divergence needs n >= 1 samples".into()));
    }
    if f.dim() != g.dim() {
        return Err(CoreError::Argument("js_divergence dimension mismatch".into()));
    }
    let js = 0.5 * kl_to_midpoint(f, g, n, seed) + 0.5 * kl_to_midpoint(g, f, n, seed);
    Ok(js.clamp(0.0, LN_2))
}

/// Derive the (H, F) layout from a joint model's block structure.
pub fn layout_of(model: &Gmm) -> Result<FeatureLayout> {
    let h = model.block_range(BLOCK_A_HIST)?.len();
    let f = model.block_range(crate::gmm::BLOCK_A_FUT)?.len();
    let layout = FeatureLayout { h, f };
    if model.dim() != layout.dim() {
        return Err(CoreError::Argument(
            "model block layout is not the joint car-following layout".into(),
        ));
    }
    Ok(layout)
}

/// The conditional/marginal model pair (f, g) at one feature window.
///
/// Observations are clamped to the training envelope (mean +- 3 std per
/// dimension, when the model records a scaler) before conditioning. Beyond
/// that range the regression only extrapolates, and in closed-loop use an
/// out-of-distribution state could otherwise pin the divergence high.
pub fn condition_pair(
    model: &Gmm,
    marginal_joint: &Gmm,
    window: &DVector<f64>,
    h: usize,
) -> Result<(Gmm, Gmm)> {
    let observed = [BLOCK_A_HIST, BLOCK_V_FOLL, BLOCK_DV, BLOCK_DX];
    let window = clamp_to_envelope(model, &observed, window)?;
    let f = model.condition(&observed, &window)?;
    let own_state = window.rows(0, 2 * h).into_owned();
    let g = marginal_joint.condition(&[BLOCK_A_HIST, BLOCK_V_FOLL], &own_state)?;
    Ok((f, g))
}

/// Clamp an observation vector (ordered per `observed` blocks) to
/// mean +- 3 std of the model's training scaler. Identity when no scaler is
/// recorded.
fn clamp_to_envelope(model: &Gmm, observed: &[&str], window: &DVector<f64>) -> Result<DVector<f64>> {
    let Some(scaler) = &model.scaler else {
        return Ok(window.clone());
    };
    let mut out = window.clone();
    let mut at = 0;
    for block in observed {
        for dim in model.block_range(block)? {
            let (m, s) = (scaler.mean[dim], scaler.std[dim]);
            out[at] = out[at].clamp(m - 3.0 * s, m + 3.0 * s);
            at += 1;
        }
    }
    if at != window.len() {
        return Err(CoreError::Argument(
            "observation length does not match the observed blocks".into(),
        ));
    }
    Ok(out)
}

/// Quantify one pair: I(t) = D(f, g) per sliding window.
pub fn intensity_series(
    model: &Gmm,
    pair: &TrajectoryPair,
    metric: Metric,
    n_mc: usize,
    seed: u64,
) -> Result<IntensitySeries> {
    let layout = layout_of(model)?;
    let windows = layout.window_count(pair.len());
    if windows == 0 {
        return Err(CoreError::Argument(format!(
            "pair {} is shorter than one window (H + F = {})",
            pair.pair_id,
            layout.h + layout.f
        )));
    }
    let marginal_joint = model.marginalize(&[BLOCK_DV, BLOCK_DX])?;
    let mut values = Vec::with_capacity(windows);
    for i in 0..windows {
        let window = feature_window(pair, layout, i);
        let step = || format!("pair {} timestep {}", pair.pair_id, i + layout.h - 1);
        let (f, g) = condition_pair(model, &marginal_joint, &window, layout.h)
            .map_err(|e| CoreError::Numeric(format!("{} at {}", e, step())))?;
        let value = match metric {
            Metric::Js => js_divergence(&f, &g, n_mc, derive_seed(seed, i as u64)),
            Metric::W2 => mixture_w2(&f, &g),
        }
        .map_err(|e| CoreError::Numeric(format!("{} at {}", e, step())))?;
        values.push(value);
    }
    Ok(IntensitySeries {
        pair_id: pair.pair_id.clone(),
        metric,
        values,
        first_step: layout.h - 1,
    })
}

fn ceil_frac(frac: f64, n: usize) -> usize {
    libm::ceil(frac * n as f64) as usize
}

/// Rank-sample window indices: top `frac_int` by intensity, bottom
/// `frac_non`, and a uniform `frac_rand` sample (which may overlap either).
/// Ties break toward the earlier timestep.
pub fn split_by_intensity(
    series: &IntensitySeries,
    frac_int: f64,
    frac_non: f64,
    frac_rand: f64,
    seed: u64,
) -> Result<SampleSplit> {
    for (name, f) in [("frac_int", frac_int), ("frac_non", frac_non), ("frac_rand", frac_rand)] {
        if !(f > 0.0 && f <= 1.0) {
            return Err(CoreError::Argument(format!(
                "{name} must lie in (0, 1], got {f}"
            )));
        }
    }
    // frac_int + frac_non <= 1 is the caller's contract; the cap below keeps
    // the two sets disjoint even when ceil rounding would overlap them.
    let n = series.values.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Descending intensity, earlier index first on ties.
    order.sort_by(|&a, &b| {
        series.values[b]
            .partial_cmp(&series.values[a])
            .expect("non-finite intensity")
            .then(a.cmp(&b))
    });
    let n_int = ceil_frac(frac_int, n).min(n);
    let n_non = ceil_frac(frac_non, n).min(n - n_int);
    let mut interactive: Vec<usize> = order[..n_int].to_vec();
    interactive.sort_unstable();
    // Ascending intensity for the non-interactive end, same tie rule,
    // skipping anything already claimed as interactive.
    let mut asc: Vec<usize> = (0..n).collect();
    asc.sort_by(|&a, &b| {
        series.values[a]
            .partial_cmp(&series.values[b])
            .expect("non-finite intensity")
            .then(a.cmp(&b))
    });
    let mut non_interactive: Vec<usize> = asc
        .into_iter()
        .filter(|i| interactive.binary_search(i).is_err())
        .take(n_non)
        .collect();
    non_interactive.sort_unstable();

    let n_rand = ceil_frac(frac_rand, n).min(n);
    let mut rng = seeded(seed);
    // Partial Fisher-Yates for a uniform sample without replacement.
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..n_rand {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    let mut random = pool[..n_rand].to_vec();
    random.sort_unstable();

    Ok(SampleSplit {
        interactive,
        non_interactive,
        random,
        fractions: (
            (frac_int * 1e6) as u32,
            (frac_non * 1e6) as u32,
            (frac_rand * 1e6) as u32,
        ),
    })
}
