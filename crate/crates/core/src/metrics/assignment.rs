//! Dense linear sum assignment by shortest augmenting paths.
//!
//! One Dijkstra-like search per row over reduced costs, with dual updates
//! after each augmentation. O(n^3) on an n x n matrix.

use crate::error::{FscError, Result};

const NONE: usize = usize::MAX;

/// Minimum-cost perfect matching of a square `n x n` row-major cost matrix.
/// Returns `col_for_row`.
pub fn solve_assignment(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(FscError::SizeMismatch { left: cost.len(), right: n * n });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(FscError::InvalidValue("assignment cost matrix has non-finite entries".into()));
    }
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut col4row = vec![NONE; n];
    let mut row4col = vec![NONE; n];
    let mut shortest = vec![0.0; n];
    let mut path = vec![NONE; n];
    let mut in_sr = vec![false; n];
    let mut in_sc = vec![false; n];
    let mut remaining: Vec<usize> = Vec::with_capacity(n);

    for cur_row in 0..n {
        shortest.iter_mut().for_each(|s| *s = f64::INFINITY);
        path.iter_mut().for_each(|p| *p = NONE);
        in_sr.iter_mut().for_each(|s| *s = false);
        in_sc.iter_mut().for_each(|s| *s = false);
        remaining.clear();
        remaining.extend((0..n).rev());

        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink = loop {
            in_sr[i] = true;
            let mut lowest = f64::INFINITY;
            let mut best = NONE;
            for (it, &j) in remaining.iter().enumerate() {
                let r = min_val + cost[i * n + j] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                if shortest[j] < lowest || (shortest[j] == lowest && row4col[j] == NONE) {
                    lowest = shortest[j];
                    best = it;
                }
            }
            if best == NONE || !lowest.is_finite() {
                return Err(FscError::InvalidValue("assignment problem is infeasible".into()));
            }
            min_val = lowest;
            let j = remaining.swap_remove(best);
            in_sc[j] = true;
            if row4col[j] == NONE {
                break j;
            }
            i = row4col[j];
        };

        u[cur_row] += min_val;
        for r in 0..n {
            if in_sr[r] && r != cur_row {
                u[r] += min_val - shortest[col4row[r]];
            }
        }
        for c in 0..n {
            if in_sc[c] {
                v[c] -= min_val - shortest[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }
    Ok(col4row)
}
