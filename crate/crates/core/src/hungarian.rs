//! Rectangular minimum-cost assignment.
//!
//! The matrix is padded to square with zero-cost dummies and solved with the
//! O(n³) shortest-augmenting-path Hungarian method, which also yields optimal
//! dual potentials `u`, `v`. Every optimal assignment is a perfect matching
//! of the tight subgraph `{(i,j) : c_ij = u_i + v_j}`, so the
//! lexicographically smallest optimum is found by fixing rows in order and
//! keeping the smallest column that still admits a perfect tight matching.

use crate::error::{CcmError, Result};

/// Dense row-major cost matrix view.
#[derive(Debug, Clone, Copy)]
pub struct CostView<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl CostView<'_> {
    fn at(&self, i: usize, j: usize) -> f64 {
        if i < self.rows && j < self.cols {
            self.data[i * self.cols + j]
        } else {
            0.0
        }
    }
}

struct Solution {
    /// `col_of_row[i]` for the padded square problem.
    col_of_row: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

fn solve_square(cost: &CostView<'_>, n: usize) -> Solution {
    // 1-based arrays; index 0 is the virtual source column.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
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
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[p[j] - 1] = j - 1;
    }
    Solution {
        col_of_row,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
    }
}

struct TightGraph<'a> {
    cost: &'a CostView<'a>,
    u: &'a [f64],
    v: &'a [f64],
    tol: f64,
}

impl TightGraph<'_> {
    fn tight(&self, i: usize, j: usize) -> bool {
        self.cost.at(i, j) - self.u[i] - self.v[j] <= self.tol
    }
}

/// Tries to rematch row `r` along tight edges, displacing only rows that are
/// not fixed, until a free column is reached.
fn augment(
    g: &TightGraph<'_>,
    r: usize,
    col_of_row: &mut [usize],
    row_of_col: &mut [Option<usize>],
    fixed: &[bool],
    visited: &mut [bool],
) -> bool {
    let n = col_of_row.len();
    for c in 0..n {
        if visited[c] || !g.tight(r, c) {
            continue;
        }
        match row_of_col[c] {
            Some(owner) if fixed[owner] => continue,
            _ => {}
        }
        visited[c] = true;
        let free = match row_of_col[c] {
            None => true,
            Some(owner) => augment(g, owner, col_of_row, row_of_col, fixed, visited),
        };
        if free {
            col_of_row[r] = c;
            row_of_col[c] = Some(r);
            return true;
        }
    }
    false
}

fn lexicographic_optimum(cost: &CostView<'_>, n: usize, sol: &Solution) -> Vec<usize> {
    let scale = cost.data.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let g = TightGraph {
        cost,
        u: &sol.u,
        v: &sol.v,
        tol: 1e-9 * scale,
    };
    let mut col_of_row = sol.col_of_row.clone();
    let mut row_of_col: Vec<Option<usize>> = vec![None; n];
    for (r, &c) in col_of_row.iter().enumerate() {
        row_of_col[c] = Some(r);
    }
    let mut fixed = vec![false; n];
    for i in 0..cost.rows {
        let current = col_of_row[i];
        for j in 0..current {
            if !g.tight(i, j) {
                continue;
            }
            let Some(r) = row_of_col[j] else { continue };
            if fixed[r] {
                continue;
            }
            let saved_cols = col_of_row.clone();
            let saved_rows = row_of_col.clone();
            // hand j to i, free i's column, then look for a new home for r
            row_of_col[current] = None;
            col_of_row[i] = j;
            row_of_col[j] = Some(i);
            fixed[i] = true;
            let mut visited = vec![false; n];
            visited[j] = true;
            if augment(&g, r, &mut col_of_row, &mut row_of_col, &fixed, &mut visited) {
                break;
            }
            fixed[i] = false;
            col_of_row = saved_cols;
            row_of_col = saved_rows;
        }
        fixed[i] = true;
    }
    col_of_row
}

fn total(cost: &CostView<'_>, col_of_row: &[usize]) -> f64 {
    let mut s = 0.0;
    for i in 0..cost.rows {
        let j = col_of_row[i];
        if j < cost.cols {
            s += cost.at(i, j);
        }
    }
    s
}

/// Minimum-cost assignment selecting exactly `min(rows, cols)` pairs.
/// Among equal-cost optima the lexicographically smallest sorted pair list
/// is returned. Output pairs are sorted by row.
pub fn solve(cost: CostView<'_>) -> Result<Vec<(usize, usize)>> {
    if cost.data.len() != cost.rows * cost.cols {
        return Err(CcmError::InvalidArgument(format!(
            "cost buffer of length {} does not match {}x{}",
            cost.data.len(),
            cost.rows,
            cost.cols
        )));
    }
    if let Some(bad) = cost.data.iter().find(|x| !x.is_finite()) {
        return Err(CcmError::InvalidArgument(format!("non-finite cost {bad}")));
    }
    if cost.rows == 0 || cost.cols == 0 {
        return Ok(Vec::new());
    }
    let n = cost.rows.max(cost.cols);
    let sol = solve_square(&cost, n);
    let lex = lexicographic_optimum(&cost, n, &sol);
    let (t_lex, t_opt) = (total(&cost, &lex), total(&cost, &sol.col_of_row));
    let chosen = if t_lex <= t_opt + 1e-12 * (1.0 + t_opt.abs()) {
        lex
    } else {
        tracing::debug!(t_lex, t_opt, "tie-break drifted off the optimum; keeping raw solution");
        sol.col_of_row
    };
    Ok((0..cost.rows)
        .filter_map(|i| (chosen[i] < cost.cols).then_some((i, chosen[i])))
        .collect())
}
