//! Independent oracles for the numeric kernels: brute-force transportation
//! vertices against the simplex solver, quadrature against Monte-Carlo KL,
//! and the Monte-Carlo error-scaling law.

use iacf_core::gmm::{BlockSpec, Gmm};
use iacf_core::interaction::{gaussian_w2, kl_mc, mixture_w2};
use iacf_core::rng::seeded;
use iacf_core::transport::{solve_transport, transport_cost};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

/// Exact minimum transportation cost by enumerating every basis (spanning
/// tree) of the m x n transportation polytope. Feasible for m, n <= 3.
fn brute_force_transport(supply: &[f64], demand: &[f64], cost: &DMatrix<f64>) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let basis_size = m + n - 1;
    let mut best = f64::INFINITY;
    let mut pick = vec![0usize; basis_size];

    fn combinations(
        cells: &[(usize, usize)],
        pick: &mut Vec<usize>,
        depth: usize,
        start: usize,
        eval: &mut dyn FnMut(&[usize]),
    ) {
        if depth == pick.len() {
            eval(pick);
            return;
        }
        for i in start..cells.len() {
            pick[depth] = i;
            combinations(cells, pick, depth + 1, i + 1, eval);
        }
    }

    let mut eval = |basis: &[usize]| {
        // Solve the tree flows by peeling rows/columns with a single basic
        // cell; a basis containing a cycle gets stuck and is skipped.
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let mut flow = vec![0.0f64; basis.len()];
        let mut alive: Vec<bool> = vec![true; basis.len()];
        let mut remaining = basis.len();
        while remaining > 0 {
            let mut progressed = false;
            for k in 0..basis.len() {
                if !alive[k] {
                    continue;
                }
                let (i, j) = cells[basis[k]];
                let row_count = basis
                    .iter()
                    .enumerate()
                    .filter(|&(k2, &c)| alive[k2] && cells[c].0 == i)
                    .count();
                let col_count = basis
                    .iter()
                    .enumerate()
                    .filter(|&(k2, &c)| alive[k2] && cells[c].1 == j)
                    .count();
                let f = if row_count == 1 {
                    s[i]
                } else if col_count == 1 {
                    d[j]
                } else {
                    continue;
                };
                flow[k] = f;
                s[i] -= f;
                d[j] -= f;
                alive[k] = false;
                remaining -= 1;
                progressed = true;
            }
            if !progressed {
                return;
            }
        }
        if flow.iter().any(|&f| f < -1e-10) {
            return;
        }
        if s.iter().chain(d.iter()).any(|&r| r.abs() > 1e-9) {
            return;
        }
        let c: f64 = basis
            .iter()
            .zip(&flow)
            .map(|(&ci, &f)| f * cost[cells[ci]])
            .sum();
        if c < best {
            best = c;
        }
    };
    combinations(&cells, &mut pick, 0, 0, &mut eval);
    best
}

fn random_simplex(rng: &mut iacf_core::rng::Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / s).collect()
}

#[test]
fn transport_matches_bruteforce_on_random_instances() {
    let mut rng = seeded(100);
    for _ in 0..100 {
        let m = rng.random_range(1..=3);
        let n = rng.random_range(1..=3);
        let supply = random_simplex(&mut rng, m);
        let demand = random_simplex(&mut rng, n);
        let cost = DMatrix::from_fn(m, n, |_, _| rng.random::<f64>());
        let flow = solve_transport(&supply, &demand, &cost).unwrap();
        let solved = transport_cost(&flow, &cost);
        let oracle = brute_force_transport(&supply, &demand, &cost);
        assert!(
            (solved - oracle).abs() < 1e-8,
            "solver {solved} vs brute force {oracle} on {m}x{n}"
        );
    }
}

fn random_gmm(rng: &mut iacf_core::rng::Rng, k: usize, d: usize) -> Gmm {
    let weights = random_simplex(rng, k);
    let means = (0..k)
        .map(|_| DVector::from_fn(d, |_, _| 4.0 * rng.random::<f64>() - 2.0))
        .collect();
    let covs = (0..k)
        .map(|_| {
            let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
            &a * a.transpose() + DMatrix::identity(d, d) * 0.1
        })
        .collect();
    Gmm {
        weights,
        means,
        covs,
        blocks: vec![BlockSpec {
            name: "x".to_string(),
            len: d,
        }],
        scaler: None,
    }
}

/// Mixture-W2 against the brute-force coupling, plus the metric axioms.
#[test]
fn mixture_w2_matches_bruteforce_and_is_a_metric() {
    let mut rng = seeded(7);
    for trial in 0..100 {
        let d = 2;
        let kf = rng.random_range(1..=3);
        let kg = rng.random_range(1..=3);
        let kh = rng.random_range(1..=3);
        let f = random_gmm(&mut rng, kf, d);
        let g = random_gmm(&mut rng, kg, d);
        let h = random_gmm(&mut rng, kh, d);

        let mut cost = DMatrix::zeros(f.k(), g.k());
        for i in 0..f.k() {
            for j in 0..g.k() {
                let w = gaussian_w2(&f.means[i], &f.covs[i], &g.means[j], &g.covs[j]).unwrap();
                cost[(i, j)] = w * w;
            }
        }
        let oracle = brute_force_transport(&f.weights, &g.weights, &cost).sqrt();

        let fg = mixture_w2(&f, &g).unwrap();
        assert!(
            (fg - oracle).abs() < 1e-8,
            "trial {trial}: {fg} vs oracle {oracle}"
        );
        let gf = mixture_w2(&g, &f).unwrap();
        assert!((fg - gf).abs() < 1e-8, "asymmetry {fg} vs {gf}");

        let fh = mixture_w2(&f, &h).unwrap();
        let gh = mixture_w2(&g, &h).unwrap();
        assert!(fh <= fg + gh + 1e-8, "triangle violated: {fh} > {fg} + {gh}");
    }
}

fn gaussian_1d(mu: f64, var: f64) -> Gmm {
    Gmm {
        weights: vec![1.0],
        means: vec![DVector::from_row_slice(&[mu])],
        covs: vec![DMatrix::from_row_slice(1, 1, &[var])],
        blocks: vec![BlockSpec {
            name: "x".to_string(),
            len: 1,
        }],
        scaler: None,
    }
}

fn mix_1d(weights: &[f64], mus: &[f64], vars: &[f64]) -> Gmm {
    Gmm {
        weights: weights.to_vec(),
        means: mus.iter().map(|&m| DVector::from_row_slice(&[m])).collect(),
        covs: vars
            .iter()
            .map(|&v| DMatrix::from_row_slice(1, 1, &[v]))
            .collect(),
        blocks: vec![BlockSpec {
            name: "x".to_string(),
            len: 1,
        }],
        scaler: None,
    }
}

/// Simpson quadrature of integrand over [a, b] with n (even) intervals.
fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn kl_mc_agrees_with_quadrature_on_1d_mixture() {
    let f = mix_1d(&[0.6, 0.4], &[0.0, 3.0], &[1.0, 2.25]);
    let g = gaussian_1d(1.0, 4.0);
    let df = f.precompute();
    let dg = g.precompute();
    let integrand = |x: f64| {
        let v = DVector::from_row_slice(&[x]);
        let lf = df.logpdf(&v);
        (lf - dg.logpdf(&v)) * lf.exp()
    };
    let exact = simpson(-14.0, 18.0, 64_000, integrand);
    let mc = kl_mc(&f, &g, 300_000, 42).unwrap();
    assert!(
        (mc - exact).abs() < 0.01,
        "MC {mc} vs quadrature {exact}"
    );
}

#[test]
fn kl_mc_error_scales_as_inverse_sqrt_n() {
    let f = gaussian_1d(0.0, 1.0);
    let g = gaussian_1d(1.2, 1.5);
    let spread = |n: usize| {
        let vals: Vec<f64> = (0..30).map(|s| kl_mc(&f, &g, n, 1000 + s).unwrap()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt()
    };
    let s_small = spread(1_000);
    let s_large = spread(16_000);
    // 16x the samples should shrink the spread by ~4, within a factor 1.5.
    let ratio = s_small / s_large;
    assert!(
        (4.0 / 1.5..=4.0 * 1.5).contains(&ratio),
        "spread ratio {ratio} outside [2.67, 6.0]"
    );
}
