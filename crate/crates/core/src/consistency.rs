//! Network-wide reliability of cross-camera matches.
//!
//! A match `(i, j)` between cameras p and q earns one point for the direct
//! assignment and one point for every intermediate cluster `k` in another
//! camera r with `x_pr(i,k) = x_rq(k,j) = 1`. Matches whose score exceeds
//! the threshold θ are kept.

use std::borrow::Cow;
use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::dataset::CameraId;
use crate::error::{CcmError, Result};
use crate::matching::AssignmentMatrix;

pub type CameraPair = (CameraId, CameraId);

/// One assignment matrix per unordered camera pair, stored under `(p, q)`
/// with `p < q`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkAssignments {
    cluster_counts: BTreeMap<CameraId, usize>,
    matrices: BTreeMap<CameraPair, AssignmentMatrix>,
}

impl NetworkAssignments {
    pub fn new(
        cluster_counts: BTreeMap<CameraId, usize>,
        matrices: impl IntoIterator<Item = AssignmentMatrix>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for x in matrices {
            let x = if x.p > x.q { x.transpose() } else { x };
            let key = (x.p, x.q);
            let expect = (
                *cluster_counts.get(&x.p).ok_or_else(|| unknown_camera(x.p))?,
                *cluster_counts.get(&x.q).ok_or_else(|| unknown_camera(x.q))?,
            );
            if x.p == x.q {
                return Err(CcmError::InvalidArgument(format!("self pair ({},{})", x.p, x.q)));
            }
            if x.shape() != expect {
                return Err(CcmError::ShapeMismatch {
                    expected_rows: expect.0,
                    expected_cols: expect.1,
                    rows: x.shape().0,
                    cols: x.shape().1,
                });
            }
            if map.insert(key, x).is_some() {
                return Err(CcmError::InvalidArgument(format!(
                    "duplicate assignment for pair {key:?}"
                )));
            }
        }
        let cams: Vec<CameraId> = cluster_counts.keys().copied().collect();
        for (a, &p) in cams.iter().enumerate() {
            for &q in &cams[a + 1..] {
                if !map.contains_key(&(p, q)) {
                    return Err(CcmError::InvalidArgument(format!(
                        "missing assignment for pair ({p},{q})"
                    )));
                }
            }
        }
        Ok(Self {
            cluster_counts,
            matrices: map,
        })
    }

    pub fn cameras(&self) -> Vec<CameraId> {
        self.cluster_counts.keys().copied().collect()
    }

    pub fn num_clusters(&self, camera: CameraId) -> Option<usize> {
        self.cluster_counts.get(&camera).copied()
    }

    /// Canonical `(p, q)` pairs with `p < q` in ascending order.
    pub fn pairs(&self) -> impl Iterator<Item = CameraPair> + '_ {
        self.matrices.keys().copied()
    }

    /// Assignment from `p` to `q`; a transposed view when `p > q`.
    pub fn get(&self, p: CameraId, q: CameraId) -> Option<Cow<'_, AssignmentMatrix>> {
        if p < q {
            self.matrices.get(&(p, q)).map(Cow::Borrowed)
        } else {
            self.matrices.get(&(q, p)).map(|x| Cow::Owned(x.transpose()))
        }
    }

    fn row_lookup(&self, p: CameraId, q: CameraId) -> Vec<Option<usize>> {
        let x = self.get(p, q).expect("pair present");
        let mut out = vec![None; x.shape().0];
        for &(i, j) in x.pairs() {
            out[i] = Some(j);
        }
        out
    }

    fn check_network(&self) -> Result<()> {
        if self.cluster_counts.len() < 3 {
            return Err(CcmError::TooFewCameras(self.cluster_counts.len()));
        }
        Ok(())
    }
}

fn unknown_camera(c: CameraId) -> CcmError {
    CcmError::InvalidArgument(format!("assignment references unknown camera {c}"))
}

/// Number of two-hop paths `i → k → j` through cameras other than p and q.
pub fn transitive_reliability(
    net: &NetworkAssignments,
    p: CameraId,
    q: CameraId,
    i: usize,
    j: usize,
) -> Result<u32> {
    net.check_network()?;
    if p == q {
        return Err(CcmError::InvalidArgument("p and q must differ".into()));
    }
    let (np, nq) = (
        net.num_clusters(p).ok_or_else(|| unknown_camera(p))?,
        net.num_clusters(q).ok_or_else(|| unknown_camera(q))?,
    );
    if i >= np || j >= nq {
        return Err(CcmError::InvalidArgument(format!(
            "cluster pair ({i},{j}) outside {np}x{nq}"
        )));
    }
    let mut count = 0;
    for r in net.cameras().into_iter().filter(|&r| r != p && r != q) {
        let pr = net.get(p, r).expect("pair present");
        let rq = net.get(r, q).expect("pair present");
        if let Some(k) = pr.col_of(i) {
            if rq.col_of(k) == Some(j) {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Direct bits and transitive counts for one camera pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairReliability {
    pub p: CameraId,
    pub q: CameraId,
    pub direct: DMatrix<u32>,
    pub transitive: DMatrix<u32>,
}

impl PairReliability {
    pub fn shape(&self) -> (usize, usize) {
        self.direct.shape()
    }

    pub fn rlt(&self, i: usize, j: usize) -> u32 {
        self.direct[(i, j)] + self.transitive[(i, j)]
    }

    pub fn rlt_matrix(&self) -> DMatrix<u32> {
        &self.direct + &self.transitive
    }

    /// Direct match confirmed by at least one two-hop path.
    pub fn loop_consistent(&self, i: usize, j: usize) -> bool {
        self.direct[(i, j)] == 1 && self.transitive[(i, j)] >= 1
    }

    pub fn max_rlt(&self) -> u32 {
        self.rlt_matrix().iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReliabilityTable {
    pub pairs: BTreeMap<CameraPair, PairReliability>,
}

impl ReliabilityTable {
    pub fn get(&self, p: CameraId, q: CameraId) -> Option<&PairReliability> {
        self.pairs.get(&(p, q))
    }

    pub fn max_rlt(&self) -> u32 {
        self.pairs.values().map(PairReliability::max_rlt).max().unwrap_or(0)
    }
}

pub fn reliability_table(net: &NetworkAssignments) -> Result<ReliabilityTable> {
    net.check_network()?;
    let cams = net.cameras();
    let mut pairs = BTreeMap::new();
    for (p, q) in net.pairs() {
        let np = net.num_clusters(p).expect("known camera");
        let nq = net.num_clusters(q).expect("known camera");
        let mut direct = DMatrix::zeros(np, nq);
        for &(i, j) in net.get(p, q).expect("pair present").pairs() {
            direct[(i, j)] = 1;
        }
        let mut transitive = DMatrix::zeros(np, nq);
        for &r in cams.iter().filter(|&&r| r != p && r != q) {
            let pr = net.row_lookup(p, r);
            let rq = net.row_lookup(r, q);
            for (i, k) in pr.iter().enumerate() {
                if let Some(j) = k.and_then(|k| rq[k]) {
                    transitive[(i, j)] += 1;
                }
            }
        }
        pairs.insert(
            (p, q),
            PairReliability {
                p,
                q,
                direct,
                transitive,
            },
        );
    }
    Ok(ReliabilityTable { pairs })
}

/// Matches kept for one camera pair; rows and columns may repeat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistentMatches {
    pub p: CameraId,
    pub q: CameraId,
    pub rows: usize,
    pub cols: usize,
    /// Kept `(i, j)` pairs in row-major order.
    pub pairs: Vec<(usize, usize)>,
}

impl ConsistentMatches {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.pairs.binary_search(&(i, j)).is_ok()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub type ConsistentAssignments = BTreeMap<CameraPair, ConsistentMatches>;

/// Keeps every pair whose reliability strictly exceeds `theta`.
pub fn threshold_matches(table: &ReliabilityTable, theta: u32) -> ConsistentAssignments {
    table
        .pairs
        .iter()
        .map(|(&key, rel)| {
            let (rows, cols) = rel.shape();
            let mut pairs = Vec::new();
            for i in 0..rows {
                for j in 0..cols {
                    if rel.rlt(i, j) > theta {
                        pairs.push((i, j));
                    }
                }
            }
            (
                key,
                ConsistentMatches {
                    p: rel.p,
                    q: rel.q,
                    rows,
                    cols,
                    pairs,
                },
            )
        })
        .collect()
}

/// The raw assignments viewed as a consistent-match set (no filtering).
pub fn direct_matches(net: &NetworkAssignments) -> ConsistentAssignments {
    net.matrices
        .iter()
        .map(|(&key, x)| {
            let (rows, cols) = x.shape();
            (
                key,
                ConsistentMatches {
                    p: x.p,
                    q: x.q,
                    rows,
                    cols,
                    pairs: x.pairs().to_vec(),
                },
            )
        })
        .collect()
}
