//! Label-estimation and retrieval scoring against ground truth.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{majority, ClusterSet};
use crate::consistency::ConsistentAssignments;
use crate::dataset::{CameraDataset, CameraId, TrackletFeature};
use crate::error::{CcmError, Result};
use crate::matching::quadratic_form;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MatchScore {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MacroScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEvaluation {
    /// Keyed `"p-q"` for readable JSON.
    pub per_pair: BTreeMap<String, MatchScore>,
    /// Counts pooled over all pairs.
    pub micro: MatchScore,
    /// Unweighted mean of the per-pair ratios.
    #[serde(rename = "macro")]
    pub macro_avg: MacroScore,
}

pub fn pair_key(p: CameraId, q: CameraId) -> String {
    format!("{p}-{q}")
}

/// Majority identity of every cluster of every camera.
pub fn cluster_identities(
    dataset: &CameraDataset,
    clusters: &BTreeMap<CameraId, ClusterSet>,
) -> Result<BTreeMap<CameraId, Vec<String>>> {
    let mut out = BTreeMap::new();
    for (&cam, set) in clusters {
        let tracklets = dataset
            .camera(cam)
            .ok_or_else(|| CcmError::InvalidArgument(format!("unknown camera {cam}")))?;
        let mut ids = Vec::with_capacity(set.len());
        for members in &set.clusters {
            let labels = members
                .iter()
                .map(|&m| {
                    let t = &tracklets[m];
                    t.identity
                        .as_deref()
                        .ok_or_else(|| CcmError::MissingIdentity(t.tracklet_id.clone()))
                })
                .collect::<Result<Vec<&str>>>()?;
            ids.push(majority(&labels).expect("clusters are non-empty").to_string());
        }
        out.insert(cam, ids);
    }
    Ok(out)
}

/// A predicted pair is correct when both clusters share a majority
/// identity; every such cluster pair is a ground-truth positive.
pub fn evaluate_matches(
    predicted: &ConsistentAssignments,
    clusters: &BTreeMap<CameraId, ClusterSet>,
    dataset: &CameraDataset,
) -> Result<MatchEvaluation> {
    let ids = cluster_identities(dataset, clusters)?;
    let mut per_pair = BTreeMap::new();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut macro_sum = MacroScore::default();
    for (&(p, q), kept) in predicted {
        let (ip, iq) = (&ids[&p], &ids[&q]);
        let mut ptp = 0;
        for &(i, j) in &kept.pairs {
            if ip[i] == iq[j] {
                ptp += 1;
            }
        }
        let pfp = kept.len() - ptp;
        let mut truth = 0;
        for a in ip {
            truth += iq.iter().filter(|b| *b == a).count();
        }
        let score = MatchScore::from_counts(ptp, pfp, truth - ptp);
        tp += ptp;
        fp += pfp;
        fn_ += truth - ptp;
        macro_sum.precision += score.precision;
        macro_sum.recall += score.recall;
        macro_sum.f1 += score.f1;
        per_pair.insert(pair_key(p, q), score);
    }
    let n = predicted.len().max(1) as f64;
    Ok(MatchEvaluation {
        per_pair,
        micro: MatchScore::from_counts(tp, fp, fn_),
        macro_avg: MacroScore {
            precision: macro_sum.precision / n,
            recall: macro_sum.recall / n,
            f1: macro_sum.f1 / n,
        },
    })
}

/// Smallest distance over all pairwise metrics.
pub fn query_gallery_distance(query: &[f64], gallery: &[f64], metrics: &[&DMatrix<f64>]) -> Result<f64> {
    if metrics.is_empty() {
        return Err(CcmError::InvalidArgument("at least one metric is required".into()));
    }
    let mut best = f64::INFINITY;
    for m in metrics {
        best = best.min(crate::matching::mahalanobis_distance(query, gallery, m)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEvaluation {
    pub cmc: Vec<f64>,
    pub map: f64,
    pub num_queries: usize,
    /// Queries without identity or without a correct gallery item.
    pub excluded_queries: Vec<String>,
}

impl RetrievalEvaluation {
    pub fn rank1(&self) -> f64 {
        self.cmc.first().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GalleryProtocol {
    /// Every gallery item except the query's own tracklet.
    AllOthers,
    /// Only gallery items from cameras other than the query's.
    CrossCamera,
}

/// Features mapped through `Lᵀ` with `M = L Lᵀ`, so that squared Euclidean
/// distances of the images equal Mahalanobis distances.
struct Embedding {
    rows: Vec<Vec<f64>>,
}

fn embed(items: &[&TrackletFeature], m: &DMatrix<f64>) -> Result<Embedding> {
    let sym = (m + m.transpose()) * 0.5;
    let is_identity = sym == DMatrix::identity(sym.nrows(), sym.ncols());
    if is_identity {
        return Ok(Embedding {
            rows: items.iter().map(|t| t.feature.clone()).collect(),
        });
    }
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| CcmError::Eigen("metric factorization did not converge".into()))?;
    let d = m.nrows();
    let scale: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    let rows = items
        .iter()
        .map(|t| {
            (0..d)
                .map(|k| {
                    let v = eig.eigenvectors.column(k);
                    scale[k] * t.feature.iter().zip(v.iter()).map(|(x, y)| x * y).sum::<f64>()
                })
                .collect()
        })
        .collect();
    Ok(Embedding { rows })
}

fn squared(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Average precision of a ranked relevance list (non-interpolated).
pub fn average_precision(relevant: &[bool]) -> f64 {
    let total = relevant.iter().filter(|r| **r).count();
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (k, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / total as f64
}

/// Ranks the gallery for every query by the minimum distance over
/// `metrics`; ties are broken by gallery position.
pub fn evaluate_retrieval(
    queries: &[&TrackletFeature],
    gallery: &[&TrackletFeature],
    metrics: &[&DMatrix<f64>],
    protocol: GalleryProtocol,
) -> Result<RetrievalEvaluation> {
    if metrics.is_empty() {
        return Err(CcmError::InvalidArgument("at least one metric is required".into()));
    }
    let mut all: Vec<&TrackletFeature> = queries.to_vec();
    all.extend_from_slice(gallery);
    let embeddings: Vec<Embedding> = metrics
        .par_iter()
        .map(|m| embed(&all, m))
        .collect::<Result<_>>()?;
    let nq = queries.len();

    let per_query: Vec<Option<(usize, f64, usize)>> = (0..nq)
        .into_par_iter()
        .map(|qi| {
            let query = queries[qi];
            let qid = query.identity.as_deref()?;
            let mut ranked: Vec<(f64, usize)> = gallery
                .iter()
                .enumerate()
                .filter(|(_, g)| {
                    g.tracklet_id != query.tracklet_id
                        && (protocol == GalleryProtocol::AllOthers || g.camera_id != query.camera_id)
                })
                .map(|(gi, _)| {
                    let d = embeddings
                        .iter()
                        .map(|e| squared(&e.rows[qi], &e.rows[nq + gi]))
                        .fold(f64::INFINITY, f64::min);
                    (d, gi)
                })
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let relevant: Vec<bool> = ranked
                .iter()
                .map(|&(_, gi)| gallery[gi].identity.as_deref() == Some(qid))
                .collect();
            let first_hit = relevant.iter().position(|r| *r)?;
            Some((first_hit, average_precision(&relevant), relevant.len()))
        })
        .collect();

    let mut excluded = Vec::new();
    let mut hits = Vec::new();
    let mut ap_sum = 0.0;
    let mut max_len = 0;
    for (qi, res) in per_query.into_iter().enumerate() {
        match res {
            Some((first, ap, len)) => {
                hits.push(first);
                ap_sum += ap;
                max_len = max_len.max(len);
            }
            None => excluded.push(queries[qi].tracklet_id.clone()),
        }
    }
    let n = hits.len();
    let mut cmc = vec![0.0; max_len];
    if n > 0 {
        let mut counts = vec![0usize; max_len];
        for &h in &hits {
            counts[h] += 1;
        }
        let mut acc = 0;
        for (k, c) in counts.iter().enumerate() {
            acc += c;
            cmc[k] = acc as f64 / n as f64;
        }
    }
    if !excluded.is_empty() {
        tracing::info!(count = excluded.len(), "queries excluded from retrieval scoring");
    }
    Ok(RetrievalEvaluation {
        cmc,
        map: if n == 0 { 0.0 } else { ap_sum / n as f64 },
        num_queries: n,
        excluded_queries: excluded,
    })
}

/// Every tracklet queries the tracklets of all other cameras.
pub fn cross_camera_retrieval(dataset: &CameraDataset, metrics: &[&DMatrix<f64>]) -> Result<RetrievalEvaluation> {
    let items: Vec<&TrackletFeature> = dataset.iter().collect();
    evaluate_retrieval(&items, &items, metrics, GalleryProtocol::CrossCamera)
}

/// Direct form of the retrieval distance, used where speed does not matter.
pub fn min_quadratic_form(a: &[f64], b: &[f64], metrics: &[&DMatrix<f64>]) -> f64 {
    metrics
        .iter()
        .map(|m| quadratic_form(a, b, m))
        .fold(f64::INFINITY, f64::min)
}
