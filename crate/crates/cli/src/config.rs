//! Flat `key = value` run configuration.
//!
//! ```text
//! # input: either a feature file ...
//! features = data/features.ccmf
//! # ... or a synthetic network
//! synthetic.num_identities = 40
//! synthetic.noise_sigma = 0.1
//! theta = 1
//! max_iter = 10
//! ```
//!
//! Keys given on the command line override the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ccm_core::dataset::SyntheticConfig;
use ccm_core::learn::{LabelScheme, OptimizerConfig};
use ccm_core::pipeline::PipelineConfig;

use crate::error::{io_error, validation, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Intra-camera clustering only.
    Cluster,
    /// Clustering, iteration-0 matching and consistency filtering.
    Match,
    Full,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Cluster => "cluster",
            Stage::Match => "match",
            Stage::Full => "full",
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cluster" => Ok(Stage::Cluster),
            "match" => Ok(Stage::Match),
            "full" => Ok(Stage::Full),
            _ => Err(format!("unknown stage {s:?} (expected cluster, match or full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Features(PathBuf),
    Synthetic(SyntheticConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Input,
    pub pca_dim: Option<usize>,
    pub pipeline: PipelineConfig,
    pub stage: Stage,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

const SYNTHETIC_PREFIX: &str = "synthetic.";

const KEYS: &[&str] = &[
    "features",
    "synthetic",
    "synthetic.num_identities",
    "synthetic.num_cameras",
    "synthetic.dim",
    "synthetic.presence_prob",
    "synthetic.tracklets_min",
    "synthetic.tracklets_max",
    "synthetic.distortion",
    "synthetic.noise_sigma",
    "seed",
    "pca_dim",
    "theta",
    "max_iter",
    "label_scheme",
    "optimizer.initial_step",
    "optimizer.lipschitz",
    "optimizer.max_iter",
    "optimizer.rel_tol",
    "stage",
    "out",
    "jobs",
];

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// unknown and repeated keys are errors.
pub fn parse_pairs(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| validation(format!("{}:{}: {msg}", origin.display(), idx + 1));
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| at(format!("expected `key = value`, found {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(at(format!("unknown key {k:?}")));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(at(format!("key {k:?} given twice")));
        }
    }
    Ok(out)
}

/// Splits a `KEY=VALUE` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| validation(format!("expected KEY=VALUE, found {s:?}")))?;
    let k = k.trim();
    if !KEYS.contains(&k) {
        return Err(validation(format!("unknown key {k:?}")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

fn value<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    map.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| validation(format!("invalid value {v:?} for {key}")))
        })
        .transpose()
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn parse_scheme(v: &str) -> Result<LabelScheme> {
    match v {
        "signed" => Ok(LabelScheme::Signed),
        "binary" => Ok(LabelScheme::Binary),
        _ => Err(validation(format!("invalid label_scheme {v:?} (expected signed or binary)"))),
    }
}

fn scheme_name(s: LabelScheme) -> &'static str {
    match s {
        LabelScheme::Signed => "signed",
        LabelScheme::Binary => "binary",
    }
}

impl RunConfig {
    /// Reads the optional config file and applies `overrides` in order.
    /// With `implied_synthetic`, a configuration naming no input at all
    /// gets the default synthetic network.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)], implied_synthetic: bool) -> Result<Self> {
        let mut map = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| validation(format!("{}: {e}", path.display())))?;
                parse_pairs(&text, path)?
            }
            None => BTreeMap::new(),
        };
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        let has_input = map.contains_key("features") || map.keys().any(|k| k.starts_with("synthetic"));
        if implied_synthetic && !has_input {
            map.insert("synthetic".into(), "true".into());
        }
        Self::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let synthetic_flag = match map.get("synthetic") {
            Some(v) => parse_bool(v).ok_or_else(|| validation(format!("invalid value {v:?} for synthetic")))?,
            None => false,
        };
        let synthetic_keys = map.keys().any(|k| k.starts_with(SYNTHETIC_PREFIX));
        let seed: Option<u64> = value(map, "seed")?;
        let input = match (map.get("features"), synthetic_flag || synthetic_keys) {
            (Some(_), true) => {
                return Err(validation(
                    "exactly one input is allowed: `features` or `synthetic.*`, not both",
                ))
            }
            (None, false) => {
                return Err(validation(
                    "no input: set `features = PATH` or `synthetic = true` / `synthetic.*` keys",
                ))
            }
            (Some(path), false) => Input::Features(PathBuf::from(path)),
            (None, true) => Input::Synthetic(synthetic_from_map(map, seed)?),
        };

        let mut optimizer = OptimizerConfig::default();
        if let Some(v) = value(map, "optimizer.initial_step")? {
            optimizer.initial_step = v;
        }
        if let Some(v) = value(map, "optimizer.lipschitz")? {
            optimizer.lipschitz = Some(v);
        }
        if let Some(v) = value(map, "optimizer.max_iter")? {
            optimizer.max_iter = v;
        }
        if let Some(v) = value(map, "optimizer.rel_tol")? {
            optimizer.rel_tol = v;
        }
        let mut pipeline = PipelineConfig {
            optimizer,
            seed: match &input {
                Input::Synthetic(c) => c.seed,
                Input::Features(_) => seed.unwrap_or(0),
            },
            ..Default::default()
        };
        if let Some(v) = value(map, "theta")? {
            pipeline.theta = v;
        }
        if let Some(v) = value(map, "max_iter")? {
            pipeline.max_iter = v;
        }
        if let Some(v) = map.get("label_scheme") {
            pipeline.label_scheme = parse_scheme(v)?;
        }
        pipeline.validate()?;

        let stage = match map.get("stage") {
            Some(v) => v.parse().map_err(validation)?,
            None => Stage::Full,
        };
        let jobs: Option<usize> = value(map, "jobs")?;
        if jobs == Some(0) {
            return Err(validation("jobs must be ≥ 1"));
        }
        let pca_dim: Option<usize> = value(map, "pca_dim")?;
        if pca_dim == Some(0) {
            return Err(validation("pca_dim must be ≥ 1"));
        }
        Ok(Self {
            input,
            pca_dim,
            pipeline,
            stage,
            out: map.get("out").map(PathBuf::from),
            jobs,
        })
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| validation("no output directory: pass --out DIR or set `out`"))
    }

    /// Every setting that influences results, one `key = value` per line in
    /// a fixed order. Output location and thread count are left out so that
    /// identical runs log identical text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.input {
            Input::Features(p) => {
                let _ = writeln!(s, "features = {}", p.display());
            }
            Input::Synthetic(c) => {
                let _ = writeln!(s, "synthetic = true");
                let _ = writeln!(s, "synthetic.num_identities = {}", c.num_identities);
                let _ = writeln!(s, "synthetic.num_cameras = {}", c.num_cameras);
                let _ = writeln!(s, "synthetic.dim = {}", c.dim);
                let _ = writeln!(s, "synthetic.presence_prob = {}", c.presence_prob);
                let _ = writeln!(s, "synthetic.tracklets_min = {}", c.tracklets_per_presence.0);
                let _ = writeln!(s, "synthetic.tracklets_max = {}", c.tracklets_per_presence.1);
                let _ = writeln!(s, "synthetic.distortion = {}", c.camera_distortion_scale);
                let _ = writeln!(s, "synthetic.noise_sigma = {}", c.noise_sigma);
            }
        }
        let p = &self.pipeline;
        let _ = writeln!(s, "seed = {}", p.seed);
        if let Some(k) = self.pca_dim {
            let _ = writeln!(s, "pca_dim = {k}");
        }
        let _ = writeln!(s, "theta = {}", p.theta);
        let _ = writeln!(s, "max_iter = {}", p.max_iter);
        let _ = writeln!(s, "label_scheme = {}", scheme_name(p.label_scheme));
        let _ = writeln!(s, "optimizer.initial_step = {}", p.optimizer.initial_step);
        if let Some(l) = p.optimizer.lipschitz {
            let _ = writeln!(s, "optimizer.lipschitz = {l}");
        }
        let _ = writeln!(s, "optimizer.max_iter = {}", p.optimizer.max_iter);
        let _ = writeln!(s, "optimizer.rel_tol = {}", p.optimizer.rel_tol);
        let _ = writeln!(s, "stage = {}", self.stage.name());
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| io_error(path, e))
    }
}

fn synthetic_from_map(map: &BTreeMap<String, String>, seed: Option<u64>) -> Result<SyntheticConfig> {
    let mut c = SyntheticConfig::default();
    if let Some(v) = value(map, "synthetic.num_identities")? {
        c.num_identities = v;
    }
    if let Some(v) = value(map, "synthetic.num_cameras")? {
        c.num_cameras = v;
    }
    if let Some(v) = value(map, "synthetic.dim")? {
        c.dim = v;
    }
    if let Some(v) = value(map, "synthetic.presence_prob")? {
        c.presence_prob = v;
    }
    if let Some(v) = value(map, "synthetic.tracklets_min")? {
        c.tracklets_per_presence.0 = v;
    }
    if let Some(v) = value(map, "synthetic.tracklets_max")? {
        c.tracklets_per_presence.1 = v;
    }
    if let Some(v) = value(map, "synthetic.distortion")? {
        c.camera_distortion_scale = v;
    }
    if let Some(v) = value(map, "synthetic.noise_sigma")? {
        c.noise_sigma = v;
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}
