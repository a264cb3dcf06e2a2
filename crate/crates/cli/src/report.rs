//! `report.json` contents.

use std::collections::BTreeMap;

use ccm_core::cluster::ClusterSet;
use ccm_core::consistency::{CameraPair, ConsistentAssignments};
use ccm_core::dataset::{CameraDataset, CameraId};
use ccm_core::eval::{
    cross_camera_retrieval, evaluate_matches, pair_key, MatchEvaluation, MatchScore, RetrievalEvaluation,
};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counts {
    pub cameras: usize,
    pub tracklets: usize,
    pub dimension: usize,
    pub clusters: BTreeMap<String, usize>,
    pub direct_matches: usize,
    pub consistent_matches: usize,
}

/// One ratio per camera pair plus the two aggregates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ratio {
    pub per_pair: BTreeMap<String, f64>,
    pub micro: f64,
    #[serde(rename = "macro")]
    pub macro_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
    /// Counts and ratios of the consistent matches.
    pub matches: MatchEvaluation,
    /// The same scores for the unfiltered assignments.
    pub direct: MatchEvaluation,
    #[serde(flatten)]
    pub retrieval: RetrievalEvaluation,
    /// Retrieval under the identity metric (Euclidean distance).
    pub baseline: RetrievalEvaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub stage: String,
    pub iterations: usize,
    pub theta: u32,
    pub counts: Counts,
    pub objectives: BTreeMap<String, f64>,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<Evaluation>,
}

pub struct ReportInputs<'a> {
    pub stage: &'a str,
    pub iterations: usize,
    pub theta: u32,
    pub dataset: &'a CameraDataset,
    pub clusters: &'a BTreeMap<CameraId, ClusterSet>,
    pub direct: &'a ConsistentAssignments,
    pub consistent: &'a ConsistentAssignments,
    pub metrics: Vec<&'a DMatrix<f64>>,
    pub objectives: &'a BTreeMap<CameraPair, f64>,
}

fn ratio(eval: &MatchEvaluation, pick: impl Fn(&MatchScore) -> f64, macro_avg: f64) -> Ratio {
    Ratio {
        per_pair: eval.per_pair.iter().map(|(k, s)| (k.clone(), pick(s))).collect(),
        micro: pick(&eval.micro),
        macro_avg,
    }
}

impl Report {
    /// Scores are included only when every tracklet carries an identity.
    pub fn build(inputs: ReportInputs<'_>) -> Result<Self> {
        let ds = inputs.dataset;
        let counts = Counts {
            cameras: ds.num_cameras(),
            tracklets: ds.num_tracklets(),
            dimension: ds.dimension(),
            clusters: inputs.clusters.iter().map(|(c, s)| (c.to_string(), s.len())).collect(),
            direct_matches: inputs.direct.values().map(|m| m.len()).sum(),
            consistent_matches: inputs.consistent.values().map(|m| m.len()).sum(),
        };
        let objectives = inputs
            .objectives
            .iter()
            .map(|(&(p, q), g)| (pair_key(p, q), *g))
            .collect();
        let evaluation = if ds.has_ground_truth() {
            let matches = evaluate_matches(inputs.consistent, inputs.clusters, ds)?;
            let direct = evaluate_matches(inputs.direct, inputs.clusters, ds)?;
            let identity = DMatrix::identity(ds.dimension(), ds.dimension());
            let m = &matches.macro_avg;
            Some(Evaluation {
                precision: ratio(&matches, |s| s.precision, m.precision),
                recall: ratio(&matches, |s| s.recall, m.recall),
                f1: ratio(&matches, |s| s.f1, m.f1),
                retrieval: cross_camera_retrieval(ds, &inputs.metrics)?,
                baseline: cross_camera_retrieval(ds, &[&identity])?,
                matches,
                direct,
            })
        } else {
            None
        };
        Ok(Self {
            stage: inputs.stage.to_string(),
            iterations: inputs.iterations,
            theta: inputs.theta,
            counts,
            objectives,
            evaluation,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
