//! Tracklet features grouped by camera.
//!
//! A [`CameraDataset`] is built once (from a feature file, the synthetic
//! generator or by hand) and is read-only afterwards. Cameras are kept in
//! ascending id order and tracklets keep their insertion order inside a
//! camera, so every index handed out by downstream stages is stable.

mod io;
mod preprocess;
mod synthetic;

use std::collections::{BTreeMap, HashSet};

pub use io::{load_features, read_features, save_features, write_features, FORMAT_MAGIC};
pub use preprocess::{l2_normalize, mean_pool_tracklet, pca_reduce, preprocess_dataset, Pca};
pub use synthetic::{generate_synthetic, sample_presence, SyntheticConfig};

use crate::error::{CcmError, Result};

pub type CameraId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackletFeature {
    pub tracklet_id: String,
    pub camera_id: CameraId,
    pub feature: Vec<f64>,
    /// Ground-truth identity, only consulted by evaluation.
    pub identity: Option<String>,
}

impl TrackletFeature {
    pub fn new(
        tracklet_id: impl Into<String>,
        camera_id: CameraId,
        feature: Vec<f64>,
        identity: Option<String>,
    ) -> Self {
        Self {
            tracklet_id: tracklet_id.into(),
            camera_id,
            feature,
            identity,
        }
    }

    /// Mean-pools per-frame features into a single tracklet descriptor.
    pub fn from_frames(
        tracklet_id: impl Into<String>,
        camera_id: CameraId,
        frames: &[Vec<f64>],
        identity: Option<String>,
    ) -> Result<Self> {
        let feature = mean_pool_tracklet(frames)?;
        Ok(Self::new(tracklet_id, camera_id, feature, identity))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraDataset {
    cameras: BTreeMap<CameraId, Vec<TrackletFeature>>,
    dimension: usize,
}

impl CameraDataset {
    /// Groups tracklets by camera, preserving their relative order.
    pub fn new(dimension: usize, tracklets: Vec<TrackletFeature>) -> Result<Self> {
        let mut cameras: BTreeMap<CameraId, Vec<TrackletFeature>> = BTreeMap::new();
        for t in tracklets {
            cameras.entry(t.camera_id).or_default().push(t);
        }
        Self::from_cameras(dimension, cameras)
    }

    /// Builds a dataset from an explicit camera map. Cameras without
    /// tracklets are dropped with a warning.
    pub fn from_cameras(
        dimension: usize,
        cameras: BTreeMap<CameraId, Vec<TrackletFeature>>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(CcmError::InvalidArgument(
                "feature dimension must be positive".into(),
            ));
        }
        let mut seen = HashSet::new();
        let mut kept = BTreeMap::new();
        for (cam, list) in cameras {
            if list.is_empty() {
                tracing::warn!(camera = cam, "dropping camera without tracklets");
                continue;
            }
            for t in &list {
                if t.camera_id != cam {
                    return Err(CcmError::InvalidArgument(format!(
                        "tracklet {} filed under camera {cam} but tagged {}",
                        t.tracklet_id, t.camera_id
                    )));
                }
                if t.feature.len() != dimension {
                    return Err(CcmError::DimensionMismatch {
                        expected: dimension,
                        found: t.feature.len(),
                    });
                }
                if !seen.insert(t.tracklet_id.clone()) {
                    return Err(CcmError::DuplicateTracklet(t.tracklet_id.clone()));
                }
            }
            kept.insert(cam, list);
        }
        Ok(Self {
            cameras: kept,
            dimension,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn num_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn num_tracklets(&self) -> usize {
        self.cameras.values().map(Vec::len).sum()
    }

    /// Camera ids in ascending order. Position in this list is the camera
    /// index used by matching and consistency.
    pub fn camera_ids(&self) -> Vec<CameraId> {
        self.cameras.keys().copied().collect()
    }

    pub fn camera(&self, id: CameraId) -> Option<&[TrackletFeature]> {
        self.cameras.get(&id).map(Vec::as_slice)
    }

    pub fn cameras(&self) -> impl Iterator<Item = (CameraId, &[TrackletFeature])> {
        self.cameras.iter().map(|(id, v)| (*id, v.as_slice()))
    }

    /// All tracklets, camera by camera.
    pub fn iter(&self) -> impl Iterator<Item = &TrackletFeature> {
        self.cameras.values().flatten()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.num_tracklets() > 0 && self.iter().all(|t| t.identity.is_some())
    }

    /// Number of distinct identities and tracklets per camera.
    pub fn census(&self) -> Vec<CameraCensus> {
        self.cameras
            .iter()
            .map(|(id, list)| {
                let ids: HashSet<_> = list.iter().filter_map(|t| t.identity.as_ref()).collect();
                CameraCensus {
                    camera_id: *id,
                    identities: ids.len(),
                    tracklets: list.len(),
                }
            })
            .collect()
    }

    pub(crate) fn map_features<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let mut cameras = BTreeMap::new();
        let mut dimension = None;
        for (id, list) in &self.cameras {
            let mut out = Vec::with_capacity(list.len());
            for t in list {
                let feature = f(&t.feature)?;
                dimension.get_or_insert(feature.len());
                out.push(TrackletFeature {
                    feature,
                    ..t.clone()
                });
            }
            cameras.insert(*id, out);
        }
        Self::from_cameras(dimension.unwrap_or(self.dimension), cameras)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CameraCensus {
    pub camera_id: CameraId,
    pub identities: usize,
    pub tracklets: usize,
}
