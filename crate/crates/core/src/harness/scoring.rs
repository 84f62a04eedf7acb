use crate::error::{invalid, Result};
use crate::geometry::freq_distance;

/// Distance charged for each true source without a matching estimate.
pub const MISSING_PENALTY: f64 = 0.5;

/// Minimum-cost perfect matching on a square cost matrix (row-major),
/// returning `assign[row] = column`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return vec![];
    }
    // shortest augmenting paths with row/column potentials, 1-based
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Per-source wrap-around errors after optimal matching, in truth order.
/// Missing estimates cost [`MISSING_PENALTY`] each.
pub fn matched_errors(est: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    if est.len() > truth.len() {
        return invalid(format!("{} estimates for {} true sources", est.len(), truth.len()));
    }
    let k = truth.len();
    let cost: Vec<Vec<f64>> = truth
        .iter()
        .map(|&t| (0..k).map(|j| est.get(j).map_or(MISSING_PENALTY, |&e| freq_distance(e, t))).collect())
        .collect();
    let assign = min_cost_assignment(&cost.iter().map(|r| r.iter().map(|d| d * d).collect()).collect::<Vec<_>>());
    Ok(assign.iter().enumerate().map(|(i, &j)| cost[i][j]).collect())
}

/// `sqrt(mean(err^2))` over optimally matched sources.
pub fn rmse(est: &[f64], truth: &[f64]) -> Result<f64> {
    if truth.is_empty() {
        return invalid("no true sources");
    }
    let e = matched_errors(est, truth)?;
    Ok((e.iter().map(|d| d * d).sum::<f64>() / e.len() as f64).sqrt())
}
