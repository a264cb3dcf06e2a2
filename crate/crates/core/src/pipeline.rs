//! Alternating consistent matching and metric updates.
//!
//! Clusters are computed once. Iteration 0 matches every camera pair under
//! the identity metric and filters the matches through the network
//! reliability score. Each later iteration learns a new metric per pair from
//! the previous consistent matches, re-solves the assignment, and keeps the
//! pair running only while the new assignment strictly lowers the
//! assignment objective under the new metric. Converged pairs are frozen.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_camera, ClusterSet};
use crate::consistency::{
    reliability_table, threshold_matches, CameraPair, ConsistentAssignments, NetworkAssignments,
    ReliabilityTable,
};
use crate::dataset::{CameraDataset, CameraId};
use crate::error::{CcmError, Result};
use crate::learn::{learn_metric, LabelScheme, OptimizerConfig, PairTrainingSet, TraceEntry};
use crate::matching::{
    assignment_objective, cluster_cost_matrix, solve_assignment, AssignmentMatrix, ClusterView,
    CostMatrix,
};
use crate::metric::MetricModel;

pub const CONVERGENCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub max_iter: usize,
    pub theta: u32,
    pub optimizer: OptimizerConfig,
    pub label_scheme: LabelScheme,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_iter: 10,
            theta: 1,
            optimizer: OptimizerConfig::default(),
            label_scheme: LabelScheme::Signed,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(CcmError::InvalidConfig("max_iter must be ≥ 1".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    Continue,
    Stop,
}

/// Stop unless `g_curr` improves on `g_prev` by more than the tolerance.
pub fn convergence_check(g_prev: f64, g_curr: f64) -> Convergence {
    if g_curr > g_prev - CONVERGENCE_TOLERANCE {
        Convergence::Stop
    } else {
        Convergence::Continue
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPhase {
    Active,
    /// Stopped at this iteration because the assignment did not improve.
    Converged,
    /// Stopped earlier; carried over unchanged.
    Frozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub phase: PairPhase,
    /// `G(X^{t−1}; M^t)`; absent at iteration 0 and for frozen pairs.
    pub g_prev: Option<f64>,
    /// `G(X^t; M^t)` for the assignment kept at this iteration.
    pub g_curr: f64,
    /// Whether the metric was learned at this iteration (false when the
    /// pair had no consistent matches to learn from).
    pub learned: bool,
    pub training_trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub t: usize,
    pub metrics: BTreeMap<CameraPair, MetricModel>,
    pub costs: BTreeMap<CameraPair, CostMatrix>,
    pub assignments: NetworkAssignments,
    pub reliability: ReliabilityTable,
    pub consistent: ConsistentAssignments,
    pub pairs: BTreeMap<CameraPair, PairRecord>,
}

impl IterationState {
    pub fn num_consistent(&self) -> usize {
        self.consistent.values().map(|c| c.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    pub clusters: BTreeMap<CameraId, ClusterSet>,
    pub history: Vec<IterationState>,
    /// Pairs with no consistent match at iteration 0; they keep the
    /// identity metric until matches appear.
    pub flagged_pairs: Vec<CameraPair>,
}

impl PipelineState {
    pub fn current(&self) -> &IterationState {
        self.history.last().expect("history holds iteration 0")
    }

    pub fn iteration(&self) -> usize {
        self.current().t
    }
}

/// Per-camera clusters, computed concurrently.
pub fn cluster_all(dataset: &CameraDataset) -> BTreeMap<CameraId, ClusterSet> {
    let cams: Vec<_> = dataset.cameras().collect();
    cams.par_iter()
        .map(|(id, tracklets)| (*id, cluster_camera(*id, tracklets)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

pub fn camera_pairs(cameras: &[CameraId]) -> Vec<CameraPair> {
    let mut out = Vec::new();
    for (a, &p) in cameras.iter().enumerate() {
        for &q in &cameras[a + 1..] {
            out.push((p, q));
        }
    }
    out
}

fn view<'a>(
    dataset: &'a CameraDataset,
    clusters: &'a BTreeMap<CameraId, ClusterSet>,
    cam: CameraId,
) -> ClusterView<'a> {
    ClusterView {
        tracklets: dataset.camera(cam).expect("known camera"),
        clusters: &clusters[&cam],
    }
}

struct PairUpdate {
    metric: MetricModel,
    cost: CostMatrix,
    assignment: AssignmentMatrix,
    record: PairRecord,
}

fn consistency_step(
    clusters: &BTreeMap<CameraId, ClusterSet>,
    assignments: &BTreeMap<CameraPair, AssignmentMatrix>,
    theta: u32,
) -> Result<(NetworkAssignments, ReliabilityTable, ConsistentAssignments)> {
    let counts = clusters.iter().map(|(c, s)| (*c, s.len())).collect();
    let net = NetworkAssignments::new(counts, assignments.values().cloned())?;
    let table = reliability_table(&net)?;
    let kept = threshold_matches(&table, theta);
    Ok((net, table, kept))
}

/// Clustering, initial matching and consistency filtering (iteration 0).
pub fn initial_state(
    dataset: &CameraDataset,
    clusters: BTreeMap<CameraId, ClusterSet>,
    config: &PipelineConfig,
) -> Result<PipelineState> {
    let cams = dataset.camera_ids();
    if cams.len() < 3 {
        return Err(CcmError::TooFewCameras(cams.len()));
    }
    let dim = dataset.dimension();
    let pairs = camera_pairs(&cams);
    let updates: Vec<PairUpdate> = pairs
        .par_iter()
        .map(|&(p, q)| {
            let metric = MetricModel::identity(p, q, dim);
            let cost = cluster_cost_matrix(
                view(dataset, &clusters, p),
                view(dataset, &clusters, q),
                &metric.matrix,
            )?;
            let assignment = solve_assignment(&cost)?;
            let g = assignment_objective(&cost, &assignment)?;
            Ok(PairUpdate {
                metric,
                cost,
                assignment,
                record: PairRecord {
                    phase: PairPhase::Active,
                    g_prev: None,
                    g_curr: g,
                    learned: false,
                    training_trace: Vec::new(),
                },
            })
        })
        .collect::<Result<_>>()?;
    let state = assemble(0, &pairs, updates, &clusters, config.theta)?;
    let flagged_pairs = state
        .consistent
        .iter()
        .filter(|(_, c)| c.is_empty())
        .map(|(k, _)| *k)
        .collect::<Vec<_>>();
    for &(p, q) in &flagged_pairs {
        tracing::warn!(p, q, "no consistent matches at iteration 0; keeping identity metric");
    }
    Ok(PipelineState {
        clusters,
        history: vec![state],
        flagged_pairs,
    })
}

fn assemble(
    t: usize,
    pairs: &[CameraPair],
    updates: Vec<PairUpdate>,
    clusters: &BTreeMap<CameraId, ClusterSet>,
    theta: u32,
) -> Result<IterationState> {
    let mut metrics = BTreeMap::new();
    let mut costs = BTreeMap::new();
    let mut assignments = BTreeMap::new();
    let mut records = BTreeMap::new();
    for (&key, u) in pairs.iter().zip(updates) {
        metrics.insert(key, u.metric);
        costs.insert(key, u.cost);
        assignments.insert(key, u.assignment);
        records.insert(key, u.record);
    }
    let (net, reliability, consistent) = consistency_step(clusters, &assignments, theta)?;
    Ok(IterationState {
        t,
        metrics,
        costs,
        assignments: net,
        reliability,
        consistent,
        pairs: records,
    })
}

/// Runs one outer iteration on top of `state`. Returns `false` when every
/// pair had already converged and nothing was done.
pub fn step(dataset: &CameraDataset, state: &mut PipelineState, config: &PipelineConfig) -> Result<bool> {
    let prev = state.current();
    let t = prev.t + 1;
    let pairs: Vec<CameraPair> = prev.metrics.keys().copied().collect();
    if prev.pairs.values().all(|r| r.phase != PairPhase::Active) {
        return Ok(false);
    }
    let clusters = &state.clusters;
    let updates: Vec<PairUpdate> = pairs
        .par_iter()
        .map(|&key| update_pair(dataset, clusters, prev, key, t, config))
        .collect::<Result<_>>()?;
    let next = assemble(t, &pairs, updates, clusters, config.theta)?;
    state.history.push(next);
    Ok(true)
}

fn update_pair(
    dataset: &CameraDataset,
    clusters: &BTreeMap<CameraId, ClusterSet>,
    prev: &IterationState,
    key: CameraPair,
    t: usize,
    config: &PipelineConfig,
) -> Result<PairUpdate> {
    let (p, q) = key;
    let prev_metric = &prev.metrics[&key];
    let prev_cost = &prev.costs[&key];
    let prev_x = prev.assignments.get(p, q).expect("pair present").into_owned();
    let prev_record = &prev.pairs[&key];

    if prev_record.phase != PairPhase::Active {
        return Ok(PairUpdate {
            metric: prev_metric.clone(),
            cost: prev_cost.clone(),
            assignment: prev_x,
            record: PairRecord {
                phase: PairPhase::Frozen,
                g_prev: None,
                g_curr: prev_record.g_curr,
                learned: false,
                training_trace: Vec::new(),
            },
        });
    }

    let (vp, vq) = (view(dataset, clusters, p), view(dataset, clusters, q));
    let kept = &prev.consistent[&key];
    let (metric, learned, training_trace) = if kept.is_empty() {
        (prev_metric.clone(), false, Vec::new())
    } else {
        let set = PairTrainingSet::build(prev_cost, kept, vp.tracklets, vq.tracklets, config.label_scheme)?;
        let out = learn_metric(&set, &config.optimizer, &prev_metric.matrix)?;
        (out.model, true, out.trace)
    };

    let cost = cluster_cost_matrix(vp, vq, &metric.matrix)?;
    let candidate = solve_assignment(&cost)?;
    let g_prev = assignment_objective(&cost, &prev_x)?;
    let g_curr = assignment_objective(&cost, &candidate)?;
    let (phase, assignment, g_kept) = match convergence_check(g_prev, g_curr) {
        Convergence::Continue => (PairPhase::Active, candidate, g_curr),
        Convergence::Stop => {
            tracing::debug!(p, q, t, g_prev, g_curr, "pair converged");
            (PairPhase::Converged, prev_x, g_prev)
        }
    };
    Ok(PairUpdate {
        metric,
        cost,
        assignment,
        record: PairRecord {
            phase,
            g_prev: Some(g_prev),
            g_curr: g_kept,
            learned,
            training_trace,
        },
    })
}

/// Full alternation: iteration 0 followed by up to `max_iter` updates.
pub fn run_pipeline(dataset: &CameraDataset, config: &PipelineConfig) -> Result<PipelineState> {
    config.validate()?;
    if dataset.num_cameras() < 3 {
        return Err(CcmError::TooFewCameras(dataset.num_cameras()));
    }
    let clusters = cluster_all(dataset);
    let mut state = initial_state(dataset, clusters, config)?;
    for _ in 0..config.max_iter {
        if !step(dataset, &mut state, config)? {
            break;
        }
    }
    Ok(state)
}
