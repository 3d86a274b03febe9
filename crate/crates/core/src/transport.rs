//! Exact solver for the balanced transportation problem on small instances
//! (mixture weights on each side, one cost per component pair).
//!
//! Transportation simplex with Bland's entering rule, which cannot cycle even
//! on the degenerate bases that tied mixture weights produce. Instances here
//! are K x K for K <= ~10, so speed is a non-issue.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{CoreError, Result};

const EPS: f64 = 1e-12;

/// Minimize sum_ij gamma_ij c_ij subject to row sums `supply`, column sums
/// `demand`, gamma >= 0. Returns the optimal coupling.
pub fn solve_transport(
    supply: &[f64],
    demand: &[f64],
    cost: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let m = supply.len();
    let n = demand.len();
    if m == 0 || n == 0 {
        return Err(CoreError::Argument("empty transportation instance".into()));
    }
    if cost.nrows() != m || cost.ncols() != n {
        return Err(CoreError::Argument(format!(
            "cost matrix is {}x{}, expected {m}x{n}",
            cost.nrows(),
            cost.ncols()
        )));
    }
    if supply.iter().chain(demand).any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(CoreError::Argument(
            "supplies and demands must be finite and nonnegative".into(),
        ));
    }
    let (s_sum, d_sum): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if (s_sum - d_sum).abs() > 1e-9 {
        return Err(CoreError::Argument(format!(
            "unbalanced instance: supply {s_sum} vs demand {d_sum}"
        )));
    }

    let mut flow = DMatrix::zeros(m, n);
    let mut basic = vec![vec![false; n]; m];

    // Northwest-corner start; when a row and column exhaust together the next
    // cell enters the basis with zero flow to keep m + n - 1 basic cells.
    {
        let mut s: Vec<f64> = supply.to_vec();
        let mut d: Vec<f64> = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let q = s[i].min(d[j]);
            flow[(i, j)] = q;
            basic[i][j] = true;
            s[i] -= q;
            d[j] -= q;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if s[i] <= d[j] && i < m - 1 {
                i += 1;
            } else if j < n - 1 {
                j += 1;
            } else {
                i += 1;
            }
        }
    }

    for _iter in 0..100_000 {
        let (u, v) = potentials(&basic, cost, m, n)?;
        // Bland: first (row-major) cell with negative reduced cost enters.
        let mut entering = None;
        'scan: for i in 0..m {
            for j in 0..n {
                if !basic[i][j] && cost[(i, j)] - u[i] - v[j] < -EPS {
                    entering = Some((i, j));
                    break 'scan;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            return Ok(flow);
        };

        let cycle = find_cycle(&basic, m, n, ei, ej)?;
        // Odd positions in the cycle lose flow.
        let mut theta = f64::INFINITY;
        let mut leave = None;
        for (pos, &(i, j)) in cycle.iter().enumerate() {
            if pos % 2 == 1 && flow[(i, j)] < theta {
                theta = flow[(i, j)];
                leave = Some((i, j));
            }
        }
        let (li, lj) = leave.expect("cycle has a losing cell");
        for (pos, &(i, j)) in cycle.iter().enumerate() {
            if pos % 2 == 0 {
                flow[(i, j)] += theta;
            } else {
                flow[(i, j)] = (flow[(i, j)] - theta).max(0.0);
            }
        }
        basic[ei][ej] = true;
        basic[li][lj] = false;
        flow[(li, lj)] = 0.0;
    }
    Err(CoreError::Numeric(
        "transportation simplex failed to converge".into(),
    ))
}

/// Solve u_i + v_j = c_ij over the basis tree (u_0 = 0).
fn potentials(
    basic: &[Vec<bool>],
    cost: &DMatrix<f64>,
    m: usize,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    let mut queue = vec![(true, 0usize)];
    while let Some((is_row, idx)) = queue.pop() {
        if is_row {
            for j in 0..n {
                if basic[idx][j] && v[j].is_nan() {
                    v[j] = cost[(idx, j)] - u[idx];
                    queue.push((false, j));
                }
            }
        } else {
            for i in 0..m {
                if basic[i][idx] && u[i].is_nan() {
                    u[i] = cost[(i, idx)] - v[idx];
                    queue.push((true, i));
                }
            }
        }
    }
    if u.iter().any(|x| x.is_nan()) || v.iter().any(|x| x.is_nan()) {
        return Err(CoreError::Numeric("disconnected transportation basis".into()));
    }
    Ok((u, v))
}

/// The unique alternating cycle closed by the entering cell, returned with
/// the entering cell first (gaining position).
///
/// Peel cells that are alone in their row or column; the remainder is the
/// cycle, which is then ordered by alternating row/column moves.
fn find_cycle(
    basic: &[Vec<bool>],
    m: usize,
    n: usize,
    ei: usize,
    ej: usize,
) -> Result<Vec<(usize, usize)>> {
    let mut alive = vec![vec![false; n]; m];
    let mut row_count = vec![0usize; m];
    let mut col_count = vec![0usize; n];
    for i in 0..m {
        for j in 0..n {
            if basic[i][j] || (i == ei && j == ej) {
                alive[i][j] = true;
                row_count[i] += 1;
                col_count[j] += 1;
            }
        }
    }
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..m {
            for j in 0..n {
                if alive[i][j] && (row_count[i] == 1 || col_count[j] == 1) {
                    alive[i][j] = false;
                    row_count[i] -= 1;
                    col_count[j] -= 1;
                    changed = true;
                }
            }
        }
    }
    if !alive[ei][ej] {
        return Err(CoreError::Numeric("no pivot cycle found".into()));
    }
    // Order the cycle: alternate moving along the current row then column.
    let mut path = vec![(ei, ej)];
    let (mut ci, mut cj) = (ei, ej);
    let mut move_in_row = true;
    loop {
        let next = if move_in_row {
            (0..n).find(|&j| j != cj && alive[ci][j]).map(|j| (ci, j))
        } else {
            (0..m).find(|&i| i != ci && alive[i][cj]).map(|i| (i, cj))
        };
        let Some((i, j)) = next else {
            return Err(CoreError::Numeric("broken pivot cycle".into()));
        };
        if (i, j) == (ei, ej) {
            break;
        }
        ci = i;
        cj = j;
        path.push((ci, cj));
        move_in_row = !move_in_row;
    }
    Ok(path)
}

/// Objective value of a coupling.
pub fn transport_cost(flow: &DMatrix<f64>, cost: &DMatrix<f64>) -> f64 {
    flow.zip_fold(cost, 0.0, |acc, f, c| acc + f * c)
}
