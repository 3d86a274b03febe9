//! Gaussian mixture model over the joint car-following feature vector, with
//! EM fitting and the conditioning/marginalization (GMR) machinery that
//! produces the conditional model f and the marginal model g.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;

use crate::error::{CoreError, Result};
use crate::rng::{derive_seed, seeded};
use crate::traj::TrajectoryPair;

pub const BLOCK_A_HIST: &str = "a_hist";
pub const BLOCK_A_FUT: &str = "a_fut";
pub const BLOCK_V_FOLL: &str = "v_foll";
pub const BLOCK_DV: &str = "dv";
pub const BLOCK_DX: &str = "dx";

/// A named contiguous span of feature dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub name: String,
    pub len: usize,
}

/// Layout of the joint feature vector: follower acceleration history (H),
/// future follower acceleration (F), follower speed history (H), and the
/// leader-relative histories dv and dx (H each). D = 4H + F.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    /// History window length H = t / dt.
    pub h: usize,
    /// Prediction window length F = dT / dt.
    pub f: usize,
}

impl FeatureLayout {
    /// The paper's setting: t = 1 s, dT = 0.6 s at dt = 0.2 s.
    pub const DEFAULT: FeatureLayout = FeatureLayout { h: 5, f: 3 };

    pub fn dim(&self) -> usize {
        4 * self.h + self.f
    }

    pub fn blocks(&self) -> Vec<BlockSpec> {
        vec![
            BlockSpec { name: BLOCK_A_HIST.to_string(), len: self.h },
            BlockSpec { name: BLOCK_A_FUT.to_string(), len: self.f },
            BlockSpec { name: BLOCK_V_FOLL.to_string(), len: self.h },
            BlockSpec { name: BLOCK_DV.to_string(), len: self.h },
            BlockSpec { name: BLOCK_DX.to_string(), len: self.h },
        ]
    }

    /// Number of sliding windows a pair of length `len` contributes.
    pub fn window_count(&self, len: usize) -> usize {
        (len + 1).saturating_sub(self.h + self.f)
    }
}

/// Per-dimension affine scaling recorded by `fit_em` (the model parameters
/// themselves are stored unscaled).
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// A K-component Gaussian mixture over a named block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub blocks: Vec<BlockSpec>,
    pub scaler: Option<Scaler>,
}

impl Gmm {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.means.len() != k || self.covs.len() != k {
            return Err(CoreError::Argument("mixture has inconsistent K".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(CoreError::Argument(format!(
                "weights must form a simplex (sum {sum})"
            )));
        }
        let d = self.dim();
        let block_total: usize = self.blocks.iter().map(|b| b.len).sum();
        if block_total != d {
            return Err(CoreError::Argument(format!(
                "block layout covers {block_total} dims but model has {d}"
            )));
        }
        for (i, (mu, cov)) in self.means.iter().zip(&self.covs).enumerate() {
            if mu.len() != d || cov.nrows() != d || cov.ncols() != d {
                return Err(CoreError::Argument(format!(
                    "component {i} has mismatched dimensions"
                )));
            }
            let asym = (cov - cov.transpose()).abs().max();
            if asym > 1e-10 {
                return Err(CoreError::Argument(format!(
                    "component {i} covariance asymmetric by {asym:e}"
                )));
            }
            if regularized_cholesky(cov).is_none() {
                return Err(CoreError::Numeric(format!(
                    "component {i} covariance not positive-definite"
                )));
            }
        }
        Ok(())
    }

    pub fn block_range(&self, name: &str) -> Result<Range<usize>> {
        let mut offset = 0;
        for b in &self.blocks {
            if b.name == name {
                return Ok(offset..offset + b.len);
            }
            offset += b.len;
        }
        Err(CoreError::Argument(format!("unknown block `{name}`")))
    }

    fn split_indices(&self, selected: &[&str]) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut chosen = vec![false; self.dim()];
        for name in selected {
            for i in self.block_range(name)? {
                chosen[i] = true;
            }
        }
        let mut yes = Vec::new();
        let mut no = Vec::new();
        for (i, &c) in chosen.iter().enumerate() {
            if c { yes.push(i) } else { no.push(i) }
        }
        Ok((yes, no))
    }

    fn blocks_excluding(&self, dropped: &[&str]) -> Vec<BlockSpec> {
        self.blocks
            .iter()
            .filter(|b| !dropped.contains(&b.name.as_str()))
            .cloned()
            .collect()
    }

    /// Drop the named blocks; weights are unchanged and means/covariances are
    /// the corresponding sub-vectors/sub-blocks.
    pub fn marginalize(&self, dropped: &[&str]) -> Result<Gmm> {
        if dropped.is_empty() {
            return Ok(self.clone());
        }
        let (drop_idx, keep_idx) = self.split_indices(dropped)?;
        if keep_idx.is_empty() {
            return Err(CoreError::Argument("cannot marginalize out every block".into()));
        }
        let _ = drop_idx;
        Ok(Gmm {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| gather_vec(m, &keep_idx)).collect(),
            covs: self
                .covs
                .iter()
                .map(|c| gather_mat(c, &keep_idx, &keep_idx))
                .collect(),
            blocks: self.blocks_excluding(dropped),
            scaler: None,
        })
    }

    /// Condition on the named blocks taking `observed`, returning the GMM over
    /// the complement blocks: means mu_y + S_yx S_xx^-1 (x - mu_x),
    /// covariances S_yy - S_yx S_xx^-1 S_xy, weights proportional to
    /// pi_k N(x | mu_x, S_xx), renormalized.
    pub fn condition(&self, observed_blocks: &[&str], observed: &DVector<f64>) -> Result<Gmm> {
        if observed_blocks.is_empty() {
            return Ok(self.clone());
        }
        let (obs_idx, keep_idx) = self.split_indices(observed_blocks)?;
        if obs_idx.len() != observed.len() {
            return Err(CoreError::Argument(format!(
                "observed value has {} dims, blocks cover {}",
                observed.len(),
                obs_idx.len()
            )));
        }
        if keep_idx.is_empty() {
            return Err(CoreError::Argument("cannot condition on every block".into()));
        }
        let mut log_w = Vec::with_capacity(self.k());
        let mut means = Vec::with_capacity(self.k());
        let mut covs = Vec::with_capacity(self.k());
        for k in 0..self.k() {
            let mu_x = gather_vec(&self.means[k], &obs_idx);
            let mu_y = gather_vec(&self.means[k], &keep_idx);
            let s_xx = gather_mat(&self.covs[k], &obs_idx, &obs_idx);
            let s_yx = gather_mat(&self.covs[k], &keep_idx, &obs_idx);
            let s_yy = gather_mat(&self.covs[k], &keep_idx, &keep_idx);
            let chol = regularized_cholesky(&s_xx).ok_or_else(|| {
                CoreError::Numeric(format!("singular observed covariance in component {k}"))
            })?;
            let resid = observed - &mu_x;
            // Gain = S_yx S_xx^-1 via the Cholesky solve on the transpose.
            let gain = chol.solve(&s_yx.transpose()).transpose();
            let mean = mu_y + &gain * &resid;
            let mut cov = s_yy - &gain * s_yx.transpose();
            symmetrize(&mut cov);
            let lw = libm::log(self.weights[k].max(f64::MIN_POSITIVE))
                + gaussian_logpdf_chol(&chol, &resid);
            log_w.push(lw);
            means.push(mean);
            covs.push(cov);
        }
        let lse = log_sum_exp(&log_w);
        let weights: Vec<f64> = log_w.iter().map(|&lw| libm::exp(lw - lse)).collect();
        // Guard against total underflow far from every component.
        let total: f64 = weights.iter().sum();
        let weights = if total > 0.0 {
            weights.iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / self.k() as f64; self.k()]
        };
        Ok(Gmm {
            weights,
            means,
            covs,
            blocks: self.blocks_excluding(observed_blocks),
            scaler: None,
        })
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> f64 {
        self.precompute().logpdf(x)
    }

    pub fn pdf(&self, x: &DVector<f64>) -> f64 {
        libm::exp(self.logpdf(x))
    }

    /// Factorize every component once for repeated density evaluation.
    pub fn precompute(&self) -> GmmDensity {
        let comps = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.covs))
            .map(|(&w, (mu, cov))| {
                let chol = regularized_cholesky(cov).expect("validated SPD covariance");
                ComponentDensity {
                    log_w: libm::log(w.max(f64::MIN_POSITIVE)),
                    mean: mu.clone(),
                    chol,
                }
            })
            .collect();
        GmmDensity { comps }
    }

    /// Draw n rows; component chosen by weight, then the Gaussian.
    pub fn sample(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeded(seed);
        let d = self.dim();
        let chols: Vec<DMatrix<f64>> = self
            .covs
            .iter()
            .map(|c| regularized_cholesky(c).expect("validated SPD covariance").l())
            .collect();
        let mut out = DMatrix::zeros(n, d);
        for row in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = self.k() - 1;
            for (i, &w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = i;
                    break;
                }
            }
            let z = DVector::from_fn(d, |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            let x = &self.means[k] + &chols[k] * z;
            out.row_mut(row).copy_from(&x.transpose());
        }
        out
    }
}

/// Cholesky-factorized mixture for fast repeated log-density evaluation.
pub struct GmmDensity {
    comps: Vec<ComponentDensity>,
}

struct ComponentDensity {
    log_w: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl GmmDensity {
    pub fn logpdf(&self, x: &DVector<f64>) -> f64 {
        let logs: Vec<f64> = self
            .comps
            .iter()
            .map(|c| c.log_w + gaussian_logpdf_chol(&c.chol, &(x - &c.mean)))
            .collect();
        log_sum_exp(&logs)
    }
}

const LN_2PI: f64 = 1.8378770664093453;

fn gaussian_logpdf_chol(chol: &Cholesky<f64, nalgebra::Dyn>, resid: &DVector<f64>) -> f64 {
    let l = chol.l_dirty();
    let d = resid.len();
    let mut log_det = 0.0;
    for i in 0..d {
        log_det += libm::log(l[(i, i)]);
    }
    // Solve L y = resid by forward substitution; quad = |y|^2.
    let mut y = resid.clone();
    for i in 0..d {
        let mut s = y[i];
        for j in 0..i {
            s -= l[(i, j)] * y[j];
        }
        y[i] = s / l[(i, i)];
    }
    -0.5 * (d as f64) * LN_2PI - log_det - 0.5 * y.norm_squared()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|&v| libm::exp(v - m)).sum();
    m + libm::log(s)
}

fn gather_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

fn gather_mat(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Cholesky with escalating diagonal jitter; `None` if the matrix stays
/// indefinite even after strong regularization.
fn regularized_cholesky(cov: &DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(cov.clone()) {
        return Some(c);
    }
    let mean_diag = cov.diagonal().iter().map(|d| d.abs()).sum::<f64>() / cov.nrows() as f64;
    let mut eps = 1e-10 * mean_diag.max(1e-12);
    for _ in 0..8 {
        let mut jittered = cov.clone();
        for i in 0..cov.nrows() {
            jittered[(i, i)] += eps;
        }
        if let Some(c) = Cholesky::new(jittered) {
            return Some(c);
        }
        eps *= 100.0;
    }
    None
}

/// Stack every pair's sliding windows into one row-per-window matrix laid out
/// per `layout`.
pub fn build_dataset(pairs: &[TrajectoryPair], layout: FeatureLayout) -> DMatrix<f64> {
    let d = layout.dim();
    let (h, f) = (layout.h, layout.f);
    let total: usize = pairs.iter().map(|p| layout.window_count(p.len())).sum();
    let mut data = DMatrix::zeros(total, d);
    let mut row = 0;
    for pair in pairs {
        for start in 0..layout.window_count(pair.len()) {
            for j in 0..h {
                let i = start + j;
                data[(row, j)] = pair.follower[i].a;
                data[(row, h + f + j)] = pair.follower[i].v;
                data[(row, 2 * h + f + j)] = pair.dv(i);
                data[(row, 3 * h + f + j)] = pair.dx(i);
            }
            for j in 0..f {
                data[(row, h + j)] = pair.follower[start + h + j].a;
            }
            row += 1;
        }
    }
    data
}

/// Build the observation vector (a_hist, v_foll, dv, dx) for the window
/// starting at `start`, ordered to match `condition` on those blocks.
pub fn feature_window(pair: &TrajectoryPair, layout: FeatureLayout, start: usize) -> DVector<f64> {
    let h = layout.h;
    let mut v = DVector::zeros(4 * h);
    for j in 0..h {
        let i = start + j;
        v[j] = pair.follower[i].a;
        v[h + j] = pair.follower[i].v;
        v[2 * h + j] = pair.dv(i);
        v[3 * h + j] = pair.dx(i);
    }
    v
}

/// EM fit record: the model plus the per-iteration mean log-likelihood trace.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: Gmm,
    pub loglik_trace: Vec<f64>,
}

/// Fit a K-component mixture by EM.
///
/// Data is z-scored per dimension internally; the returned parameters are
/// mapped back to original units and the scaler recorded on the model.
/// Initialization is k-means++ seeding of the means, data covariance for
/// every component, uniform weights. Covariances get an eps*I ridge at every
/// M-step with eps = 1e-6 times the mean per-dimension variance.
pub fn fit_em(
    data: &DMatrix<f64>,
    k: usize,
    blocks: Vec<BlockSpec>,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<EmFit> {
    let n = data.nrows();
    let d = data.ncols();
    if k == 0 {
        return Err(CoreError::Argument("K must be >= 1".into()));
    }
    if n < k {
        return Err(CoreError::Argument(format!(
            "need at least K = {k} rows, got {n}"
        )));
    }
    let block_total: usize = blocks.iter().map(|b| b.len).sum();
    if block_total != d {
        return Err(CoreError::Argument(format!(
            "block layout covers {block_total} dims but data has {d}"
        )));
    }

    // Z-score; constant dimensions keep unit scale.
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        let col = data.column(j);
        let m = col.sum() / n as f64;
        let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        mean[j] = m;
        std[j] = if var > 1e-24 { libm::sqrt(var) } else { 1.0 };
    }
    let scaled = DMatrix::from_fn(n, d, |i, j| (data[(i, j)] - mean[j]) / std[j]);

    // In z-scored space each non-degenerate dimension has unit variance.
    let mean_var = (0..d)
        .map(|j| {
            let col = scaled.column(j);
            let m = col.sum() / n as f64;
            col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64
        })
        .sum::<f64>()
        / d as f64;
    let ridge = 1e-6 * mean_var.max(1e-12);

    let rows: Vec<DVector<f64>> = (0..n).map(|i| scaled.row(i).transpose()).collect();
    let mut means = kmeanspp_centers(&rows, k, seed);
    let data_cov = {
        let grand = rows.iter().sum::<DVector<f64>>() / n as f64;
        let mut c = DMatrix::zeros(d, d);
        for r in &rows {
            let dev = r - &grand;
            c += &dev * dev.transpose();
        }
        c /= n as f64;
        for i in 0..d {
            c[(i, i)] += ridge;
        }
        c
    };
    let mut covs = vec![data_cov; k];
    let mut weights = vec![1.0 / k as f64; k];

    let mut trace = Vec::new();
    let mut log_resp = DMatrix::zeros(n, k);
    for _iter in 0..max_iter {
        // E-step.
        let chols: Vec<_> = covs
            .iter()
            .map(|c| {
                regularized_cholesky(c)
                    .ok_or_else(|| CoreError::Numeric("EM covariance went indefinite".into()))
            })
            .collect::<Result<_>>()?;
        let mut loglik = 0.0;
        for i in 0..n {
            for j in 0..k {
                log_resp[(i, j)] = libm::log(weights[j].max(f64::MIN_POSITIVE))
                    + gaussian_logpdf_chol(&chols[j], &(&rows[i] - &means[j]));
            }
            let lse = log_sum_exp(log_resp.row(i).transpose().as_slice());
            loglik += lse;
            for j in 0..k {
                log_resp[(i, j)] = libm::exp(log_resp[(i, j)] - lse);
            }
        }
        let mean_loglik = loglik / n as f64;
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| {
                (mean_loglik - prev).abs() <= tol * mean_loglik.abs().max(1e-12)
            });
        trace.push(mean_loglik);
        if converged {
            break;
        }

        // M-step (log_resp now holds responsibilities).
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| log_resp[(i, j)]).sum();
            let nk = nk.max(1e-300);
            weights[j] = nk / n as f64;
            let mut mu = DVector::zeros(d);
            for i in 0..n {
                mu += log_resp[(i, j)] * &rows[i];
            }
            mu /= nk;
            let mut cov = DMatrix::zeros(d, d);
            for i in 0..n {
                let dev = &rows[i] - &mu;
                cov += log_resp[(i, j)] * &dev * dev.transpose();
            }
            cov /= nk;
            for t in 0..d {
                cov[(t, t)] += ridge;
            }
            symmetrize(&mut cov);
            means[j] = mu;
            covs[j] = cov;
        }
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }
    }

    // Map parameters back to original units.
    let unscaled_means = means
        .iter()
        .map(|mu| DVector::from_fn(d, |i, _| mean[i] + std[i] * mu[i]))
        .collect();
    let unscaled_covs = covs
        .iter()
        .map(|c| DMatrix::from_fn(d, d, |i, j| std[i] * std[j] * c[(i, j)]))
        .collect();
    let model = Gmm {
        weights,
        means: unscaled_means,
        covs: unscaled_covs,
        blocks,
        scaler: Some(Scaler { mean, std }),
    };
    model.validate()?;
    Ok(EmFit {
        model,
        loglik_trace: trace,
    })
}

fn kmeanspp_centers(rows: &[DVector<f64>], k: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = seeded(seed);
    let n = rows.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(rows[rng.random_range(0..n)].clone());
    let mut dist2: Vec<f64> = rows
        .iter()
        .map(|r| (r - &centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut u: f64 = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d2) in dist2.iter().enumerate() {
                u -= d2;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[next].clone());
        for (i, r) in rows.iter().enumerate() {
            dist2[i] = dist2[i].min((r - centers.last().unwrap()).norm_squared());
        }
    }
    centers
}

/// BIC model-order selection over an inclusive K range.
pub fn select_k(
    data: &DMatrix<f64>,
    blocks: Vec<BlockSpec>,
    k_range: (usize, usize),
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<(usize, EmFit)> {
    let (lo, hi) = k_range;
    if lo == 0 || hi < lo {
        return Err(CoreError::Argument(format!(
            "invalid K range {lo}..={hi}"
        )));
    }
    let n = data.nrows() as f64;
    let d = data.ncols() as f64;
    let mut best: Option<(f64, usize, EmFit)> = None;
    for k in lo..=hi.min(data.nrows()) {
        let fit = fit_em(data, k, blocks.clone(), derive_seed(seed, k as u64), max_iter, tol)?;
        let loglik = fit.loglik_trace.last().copied().unwrap_or(f64::NEG_INFINITY) * n;
        let p = k as f64 * (1.0 + d + d * (d + 1.0) / 2.0) - 1.0;
        let bic = -2.0 * loglik + p * libm::log(n);
        if best.as_ref().is_none_or(|(b, _, _)| bic < *b) {
            best = Some((bic, k, fit));
        }
    }
    let (_, k, fit) = best.ok_or_else(|| CoreError::Argument("empty K range".into()))?;
    Ok((k, fit))
}
