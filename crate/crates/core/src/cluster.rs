//! Intra-camera grouping by first-neighbor adjacency.
//!
//! Sample `i` is linked to `j` when one is the other's nearest neighbor or
//! both share the same nearest neighbor. The connected components of that
//! graph are the clusters, each taken to be one person.

use std::collections::{BTreeMap, BTreeSet};

use crate::dataset::{CameraId, TrackletFeature};

/// `k[i]` is the in-camera nearest neighbor of sample `i` (self excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirstNeighborIndex(pub Vec<usize>);

impl FirstNeighborIndex {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Sparse symmetric 0/1 matrix stored as sorted neighbor sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    neighbors: Vec<BTreeSet<usize>>,
}

impl AdjacencyMatrix {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].contains(&j)
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[i].iter().copied()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Undirected edges `(i, j)` with `i < j`, in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, set)| set.range(i + 1..).map(move |&j| (i, j)))
            .collect()
    }

    fn link(&mut self, i: usize, j: usize) {
        if i != j {
            self.neighbors[i].insert(j);
            self.neighbors[j].insert(i);
        }
    }
}

/// Partition of one camera's samples. Members are sorted and clusters are
/// ordered by their smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSet {
    pub camera_id: CameraId,
    pub clusters: Vec<Vec<usize>>,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn num_samples(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    /// Cluster index of every sample.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![usize::MAX; self.num_samples()];
        for (c, members) in self.clusters.iter().enumerate() {
            for &m in members {
                labels[m] = c;
            }
        }
        labels
    }
}

pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact nearest neighbor per sample; ties go to the smallest index.
pub fn first_neighbors(features: &[&[f64]]) -> FirstNeighborIndex {
    let n = features.len();
    let k = (0..n)
        .map(|i| {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for j in (0..n).filter(|&j| j != i) {
                let d = squared_euclidean(features[i], features[j]);
                if d < best_d || best == usize::MAX {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    FirstNeighborIndex(k)
}

pub fn build_adjacency(k: &FirstNeighborIndex) -> AdjacencyMatrix {
    let n = k.len();
    let mut adj = AdjacencyMatrix {
        neighbors: vec![BTreeSet::new(); n],
    };
    let mut by_neighbor: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &ki) in k.0.iter().enumerate() {
        adj.link(i, ki);
        by_neighbor.entry(ki).or_default().push(i);
    }
    for group in by_neighbor.values() {
        for (a, &i) in group.iter().enumerate() {
            for &j in &group[a + 1..] {
                adj.link(i, j);
            }
        }
    }
    adj
}

/// Connected components, members sorted, clusters ordered by first member.
pub fn connected_components(adj: &AdjacencyMatrix) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, j) in adj.edges() {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj)] = ri.min(rj);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
    clusters.sort_by_key(|c| c[0]);
    clusters
}

pub fn cluster_camera(camera_id: CameraId, tracklets: &[TrackletFeature]) -> ClusterSet {
    let clusters = match tracklets.len() {
        0 => Vec::new(),
        1 => vec![vec![0]],
        _ => {
            let feats: Vec<&[f64]> = tracklets.iter().map(|t| t.feature.as_slice()).collect();
            connected_components(&build_adjacency(&first_neighbors(&feats)))
        }
    };
    ClusterSet {
        camera_id,
        clusters,
    }
}

/// Fraction of samples whose cluster's majority identity equals their own.
/// Majority ties go to the lexicographically smallest identity.
pub fn cluster_purity<S: AsRef<str>>(clusters: &[Vec<usize>], identities: &[S]) -> f64 {
    let total: usize = clusters.iter().map(Vec::len).sum();
    if total == 0 {
        return 1.0;
    }
    let correct: usize = clusters
        .iter()
        .map(|members| {
            let ids: Vec<&str> = members.iter().map(|&m| identities[m].as_ref()).collect();
            let major = majority(&ids);
            ids.iter().filter(|id| Some(**id) == major).count()
        })
        .sum();
    correct as f64 / total as f64
}

pub(crate) fn majority<'a>(ids: &[&'a str]) -> Option<&'a str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for id in ids {
        *counts.entry(id).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (id, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((id, c));
        }
    }
    best.map(|(id, _)| id)
}
