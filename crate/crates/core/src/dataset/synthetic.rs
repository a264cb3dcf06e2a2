//! Seeded camera-network generator with ground truth.
//!
//! Each identity gets a random unit prototype. Each camera applies its own
//! affine map `x ↦ (I + s·P_c) x + s·b_c` where `P_c`, `b_c` have i.i.d.
//! `N(0, 1/dim)` entries and `s` is the distortion scale. A tracklet is the
//! ℓ2-normalized camera image of its prototype plus isotropic Gaussian noise.
//!
//! Randomness is split into independent ChaCha streams derived from the one
//! seed: presence (1), prototypes (2), camera maps (3), tracklets (4).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{l2_normalize, CameraDataset, CameraId, TrackletFeature};
use crate::error::{CcmError, Result};

const STREAM_PRESENCE: u64 = 1;
const STREAM_PROTOTYPES: u64 = 2;
const STREAM_CAMERAS: u64 = 3;
const STREAM_TRACKLETS: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_identities: usize,
    pub num_cameras: usize,
    pub dim: usize,
    /// Probability that an identity is observed by a given camera.
    pub presence_prob: f64,
    /// Inclusive range of tracklets per (identity, camera) presence.
    pub tracklets_per_presence: (usize, usize),
    pub camera_distortion_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_identities: 40,
            num_cameras: 4,
            dim: 32,
            presence_prob: 0.7,
            tracklets_per_presence: (2, 3),
            camera_distortion_scale: 0.2,
            noise_sigma: 0.05,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CcmError::InvalidConfig(msg));
        if self.num_cameras < 3 {
            return bad(format!(
                "num_cameras = {}: consistency requires ≥3 cameras",
                self.num_cameras
            ));
        }
        if self.num_identities == 0 {
            return bad("num_identities must be positive".into());
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if !(self.presence_prob > 0.0 && self.presence_prob <= 1.0) {
            return bad(format!("presence_prob = {} outside (0,1]", self.presence_prob));
        }
        let (lo, hi) = self.tracklets_per_presence;
        if lo == 0 || lo > hi {
            return bad(format!("tracklets_per_presence = {lo}..={hi} is not a valid range"));
        }
        if !(self.camera_distortion_scale >= 0.0 && self.camera_distortion_scale.is_finite()) {
            return bad("camera_distortion_scale must be finite and ≥ 0".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and ≥ 0".into());
        }
        Ok(())
    }

    fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(id);
        r
    }
}

/// Presence table `[camera][identity]`, drawn camera-major from its own
/// stream as `uniform[0,1) < presence_prob`.
pub fn sample_presence(config: &SyntheticConfig) -> Vec<Vec<bool>> {
    let mut r = config.stream(STREAM_PRESENCE);
    (0..config.num_cameras)
        .map(|_| {
            (0..config.num_identities)
                .map(|_| r.gen::<f64>() < config.presence_prob)
                .collect()
        })
        .collect()
}

fn gaussian_vector(r: &mut ChaCha8Rng, n: usize, sigma: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(r);
        sigma * z
    })
}

fn unit_prototype(r: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = gaussian_vector(r, dim, 1.0);
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<CameraDataset> {
    config.validate()?;
    let dim = config.dim;
    let presence = sample_presence(config);

    let mut proto_rng = config.stream(STREAM_PROTOTYPES);
    let prototypes: Vec<DVector<f64>> = (0..config.num_identities)
        .map(|_| unit_prototype(&mut proto_rng, dim))
        .collect();

    let mut cam_rng = config.stream(STREAM_CAMERAS);
    let entry_sigma = 1.0 / (dim as f64).sqrt();
    let s = config.camera_distortion_scale;
    let maps: Vec<(DMatrix<f64>, DVector<f64>)> = (0..config.num_cameras)
        .map(|_| {
            let perturb = DMatrix::from_fn(dim, dim, |_, _| {
                let z: f64 = StandardNormal.sample(&mut cam_rng);
                entry_sigma * z
            });
            let offset = gaussian_vector(&mut cam_rng, dim, entry_sigma);
            (DMatrix::identity(dim, dim) + perturb * s, offset * s)
        })
        .collect();

    let mut rng = config.stream(STREAM_TRACKLETS);
    let noise = Normal::new(0.0, config.noise_sigma)
        .map_err(|e| CcmError::InvalidConfig(format!("noise_sigma: {e}")))?;
    let (lo, hi) = config.tracklets_per_presence;

    let mut cameras: BTreeMap<CameraId, Vec<TrackletFeature>> = BTreeMap::new();
    for (cam, (affine, offset)) in maps.iter().enumerate() {
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for (ident, proto) in prototypes.iter().enumerate() {
            if !presence[cam][ident] {
                continue;
            }
            let center = affine * proto + offset;
            let count = rng.gen_range(lo..=hi);
            for _ in 0..count {
                let raw: Vec<f64> = center.iter().map(|c| c + noise.sample(&mut rng)).collect();
                rows.push((ident, l2_normalize(&raw)?));
            }
        }
        rows.shuffle(&mut rng);
        let cam_id = cam as CameraId;
        let list = rows
            .into_iter()
            .enumerate()
            .map(|(k, (ident, feature))| {
                TrackletFeature::new(
                    format!("c{cam_id}t{k:04}"),
                    cam_id,
                    feature,
                    Some(format!("id{ident:04}")),
                )
            })
            .collect();
        cameras.insert(cam_id, list);
    }
    CameraDataset::from_cameras(dim, cameras)
}
