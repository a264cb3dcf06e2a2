//! Cross-camera cluster matching for one camera pair.

use nalgebra::DMatrix;

use crate::cluster::ClusterSet;
use crate::dataset::{CameraId, TrackletFeature};
use crate::error::{CcmError, Result};
use crate::hungarian::{self, CostView};

/// `(a - b)ᵀ M (a - b)`.
pub fn mahalanobis_distance(a: &[f64], b: &[f64], m: &DMatrix<f64>) -> Result<f64> {
    let d = a.len();
    if b.len() != d {
        return Err(CcmError::DimensionMismatch {
            expected: d,
            found: b.len(),
        });
    }
    if m.nrows() != d || m.ncols() != d {
        return Err(CcmError::ShapeMismatch {
            expected_rows: d,
            expected_cols: d,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(quadratic_form(a, b, m))
}

pub(crate) fn quadratic_form(a: &[f64], b: &[f64], m: &DMatrix<f64>) -> f64 {
    let d = a.len();
    let delta: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut s = 0.0;
    // column-major storage: walk columns outermost
    for j in 0..d {
        if delta[j] == 0.0 {
            continue;
        }
        let col = m.column(j);
        let mut t = 0.0;
        for i in 0..d {
            t += delta[i] * col[i];
        }
        s += t * delta[j];
    }
    s
}

/// One camera's tracklets with its cluster partition.
#[derive(Debug, Clone, Copy)]
pub struct ClusterView<'a> {
    pub tracklets: &'a [TrackletFeature],
    pub clusters: &'a ClusterSet,
}

impl ClusterView<'_> {
    pub fn camera_id(&self) -> CameraId {
        self.clusters.camera_id
    }
}

/// Matching costs between the clusters of cameras `p` and `q`, together with
/// the sample pair that realizes each minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub p: CameraId,
    pub q: CameraId,
    pub values: DMatrix<f64>,
    /// `(a, b)` sample indices (within camera p and q) attaining each entry.
    pub representatives: DMatrix<(usize, usize)>,
}

impl CostMatrix {
    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    fn row_major(&self) -> Vec<f64> {
        let (r, c) = self.shape();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(self.values[(i, j)]);
            }
        }
        out
    }
}

/// Entry `(i, j)` is the smallest Mahalanobis distance between any sample of
/// cluster `i` in camera p and any sample of cluster `j` in camera q. Ties
/// keep the first pair in (a, b) scan order.
pub fn cluster_cost_matrix(
    p: ClusterView<'_>,
    q: ClusterView<'_>,
    metric: &DMatrix<f64>,
) -> Result<CostMatrix> {
    if p.clusters.is_empty() || q.clusters.is_empty() {
        return Err(CcmError::InvalidArgument("cost matrix needs non-empty cluster sets".into()));
    }
    let dim = p.tracklets[0].feature.len();
    if metric.nrows() != dim || metric.ncols() != dim {
        return Err(CcmError::ShapeMismatch {
            expected_rows: dim,
            expected_cols: dim,
            rows: metric.nrows(),
            cols: metric.ncols(),
        });
    }
    for t in p.tracklets.iter().chain(q.tracklets) {
        if t.feature.len() != dim {
            return Err(CcmError::DimensionMismatch {
                expected: dim,
                found: t.feature.len(),
            });
        }
    }
    let (np, nq) = (p.clusters.len(), q.clusters.len());
    let mut values = DMatrix::zeros(np, nq);
    let mut representatives = DMatrix::from_element(np, nq, (0usize, 0usize));
    for (i, ci) in p.clusters.clusters.iter().enumerate() {
        for (j, cj) in q.clusters.clusters.iter().enumerate() {
            let mut best = f64::INFINITY;
            let mut rep = (ci[0], cj[0]);
            for &a in ci {
                for &b in cj {
                    let d = quadratic_form(&p.tracklets[a].feature, &q.tracklets[b].feature, metric);
                    if d < best {
                        best = d;
                        rep = (a, b);
                    }
                }
            }
            values[(i, j)] = best;
            representatives[(i, j)] = rep;
        }
    }
    Ok(CostMatrix {
        p: p.camera_id(),
        q: q.camera_id(),
        values,
        representatives,
    })
}

/// Binary cluster-match matrix with at most one match per row and column.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssignmentMatrix {
    pub p: CameraId,
    pub q: CameraId,
    rows: usize,
    cols: usize,
    /// Matched `(i, j)` pairs sorted by row.
    pairs: Vec<(usize, usize)>,
}

impl AssignmentMatrix {
    pub fn empty(p: CameraId, q: CameraId, rows: usize, cols: usize) -> Self {
        Self {
            p,
            q,
            rows,
            cols,
            pairs: Vec::new(),
        }
    }

    /// Validates the one-to-one constraints.
    pub fn from_pairs(
        p: CameraId,
        q: CameraId,
        rows: usize,
        cols: usize,
        mut pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        pairs.sort_unstable();
        let mut row_used = vec![false; rows];
        let mut col_used = vec![false; cols];
        for &(i, j) in &pairs {
            if i >= rows || j >= cols {
                return Err(CcmError::InvalidArgument(format!(
                    "pair ({i},{j}) outside {rows}x{cols}"
                )));
            }
            if std::mem::replace(&mut row_used[i], true) || std::mem::replace(&mut col_used[j], true) {
                return Err(CcmError::InvalidArgument(format!(
                    "pair ({i},{j}) violates the one-match-per-row/column constraint"
                )));
            }
        }
        Ok(Self {
            p,
            q,
            rows,
            cols,
            pairs,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.pairs.binary_search(&(i, j)).is_ok()
    }

    /// Column matched to row `i`, if any.
    pub fn col_of(&self, i: usize) -> Option<usize> {
        self.pairs
            .binary_search_by_key(&i, |&(r, _)| r)
            .ok()
            .map(|k| self.pairs[k].1)
    }

    pub fn transpose(&self) -> Self {
        let mut pairs: Vec<_> = self.pairs.iter().map(|&(i, j)| (j, i)).collect();
        pairs.sort_unstable();
        Self {
            p: self.q,
            q: self.p,
            rows: self.cols,
            cols: self.rows,
            pairs,
        }
    }

    pub fn to_dense(&self) -> DMatrix<u8> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(i, j) in &self.pairs {
            m[(i, j)] = 1;
        }
        m
    }
}

/// Solves the constrained binary program for one camera pair, selecting
/// exactly `min(n_p, n_q)` matches.
pub fn solve_assignment(cost: &CostMatrix) -> Result<AssignmentMatrix> {
    let (rows, cols) = cost.shape();
    let data = cost.row_major();
    let pairs = hungarian::solve(CostView {
        rows,
        cols,
        data: &data,
    })?;
    AssignmentMatrix::from_pairs(cost.p, cost.q, rows, cols, pairs)
}

/// `Σ e_ij x_ij`, summed in row order.
pub fn assignment_objective(cost: &CostMatrix, x: &AssignmentMatrix) -> Result<f64> {
    let (rows, cols) = cost.shape();
    if x.shape() != (rows, cols) {
        return Err(CcmError::ShapeMismatch {
            expected_rows: rows,
            expected_cols: cols,
            rows: x.rows,
            cols: x.cols,
        });
    }
    Ok(x.pairs.iter().map(|&(i, j)| cost.values[(i, j)]).sum())
}
