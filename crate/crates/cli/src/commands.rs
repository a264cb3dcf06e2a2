use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ccm_core::consistency::direct_matches;
use ccm_core::dataset::{
    generate_synthetic, load_features, preprocess_dataset, save_features, CameraCensus, CameraDataset,
};
use ccm_core::pipeline::{camera_pairs, cluster_all, initial_state, step, PipelineState};
use nalgebra::DMatrix;

use crate::artifacts::{
    self, clusters_csv, iteration_dir, last_iteration, metric_file, write, write_iteration, CLUSTERS_FILE,
    CONFIG_FILE, FEATURES_FILE, MATCHES_FILE, RELIABILITY_FILE, REPORT_FILE, STATE_DIR, TRACE_FILE,
};
use crate::config::{parse_pairs, Input, RunConfig, Stage};
use crate::error::{io_error, validation, CliError, Result};
use crate::report::{Report, ReportInputs};

pub const CENSUS_FILE: &str = "census.csv";

/// Runs `f` on a dedicated pool when a thread count is configured.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

pub fn census_text(census: &[CameraCensus]) -> String {
    let mut s = String::from("camera_id,identities,tracklets\n");
    for c in census {
        let _ = writeln!(s, "{},{},{}", c.camera_id, c.identities, c.tracklets);
    }
    s
}

/// Writes a synthetic feature file and its per-camera census.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Vec<CameraCensus>> {
    let Input::Synthetic(syn) = &cfg.input else {
        return Err(validation("generate needs a synthetic configuration, not `features`"));
    };
    let out = cfg.out_dir()?;
    let ds = generate_synthetic(syn)?;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    save_features(&ds, out.join(FEATURES_FILE))?;
    let census = ds.census();
    write(&out.join(CENSUS_FILE), &census_text(&census))?;
    cfg.save(&out.join(CONFIG_FILE))?;
    Ok(census)
}

pub fn load_input(cfg: &RunConfig) -> Result<CameraDataset> {
    let raw = match &cfg.input {
        Input::Features(path) => load_features(path).map_err(|e| match e {
            ccm_core::CcmError::Io { .. } => validation(e.to_string()),
            e => CliError::from(e),
        })?,
        Input::Synthetic(syn) => generate_synthetic(syn)?,
    };
    Ok(preprocess_dataset(&raw, cfg.pca_dim)?)
}

fn clear_previous(out: &Path) -> Result<()> {
    let state = out.join(STATE_DIR);
    if state.exists() {
        fs::remove_dir_all(&state).map_err(|e| io_error(&state, e))?;
    }
    for f in [REPORT_FILE, CLUSTERS_FILE] {
        let p = out.join(f);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| io_error(&p, e))?;
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub iterations: usize,
    pub report: Option<Report>,
}

/// Executes the configured stages and writes the run directory.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome> {
    let out = cfg.out_dir()?.to_path_buf();
    with_jobs(cfg.jobs, || run_in(cfg, &out))
}

fn run_in(cfg: &RunConfig, out: &Path) -> Result<RunOutcome> {
    let ds = load_input(cfg)?;
    if ds.num_cameras() < 3 {
        return Err(ccm_core::CcmError::TooFewCameras(ds.num_cameras()).into());
    }
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    clear_previous(out)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    save_features(&ds, out.join(FEATURES_FILE))?;

    let clusters = cluster_all(&ds);
    write(&out.join(CLUSTERS_FILE), &clusters_csv(&ds, &clusters))?;
    tracing::info!(
        clusters = clusters.values().map(|c| c.len()).sum::<usize>(),
        "intra-camera clustering done"
    );
    if cfg.stage == Stage::Cluster {
        return Ok(RunOutcome {
            dir: out.to_path_buf(),
            iterations: 0,
            report: None,
        });
    }

    let pc = &cfg.pipeline;
    let mut state: PipelineState = initial_state(&ds, clusters, pc)?;
    write_iteration(out, state.current())?;
    tracing::info!(t = 0, consistent = state.current().num_consistent(), "iteration done");
    if cfg.stage == Stage::Full {
        for _ in 0..pc.max_iter {
            if !step(&ds, &mut state, pc)? {
                break;
            }
            write_iteration(out, state.current())?;
            tracing::info!(t = state.iteration(), consistent = state.current().num_consistent(), "iteration done");
        }
    }

    let last = state.current();
    let direct = direct_matches(&last.assignments);
    let objectives = last.pairs.iter().map(|(k, r)| (*k, r.g_curr)).collect();
    let report = Report::build(ReportInputs {
        stage: cfg.stage.name(),
        iterations: last.t,
        theta: pc.theta,
        dataset: &ds,
        clusters: &state.clusters,
        direct: &direct,
        consistent: &last.consistent,
        metrics: last.metrics.values().map(|m| &m.matrix).collect(),
        objectives: &objectives,
    })?;
    write(&out.join(REPORT_FILE), &report.to_json())?;
    Ok(RunOutcome {
        dir: out.to_path_buf(),
        iterations: last.t,
        report: Some(report),
    })
}

fn missing(paths: &[PathBuf]) -> Result<()> {
    let absent: Vec<String> = paths
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if absent.is_empty() {
        Ok(())
    } else {
        Err(validation(format!("missing artifacts: {}", absent.join(", "))))
    }
}

/// Rebuilds the report of a finished run from its files. With `baseline`,
/// retrieval uses the identity metric for every pair.
pub fn cmd_eval(run: &Path, features: Option<&Path>, baseline: bool) -> Result<Report> {
    let features = features.map_or_else(|| run.join(FEATURES_FILE), Path::to_path_buf);
    let config_path = run.join(CONFIG_FILE);
    missing(&[config_path.clone(), features.clone(), run.join(CLUSTERS_FILE)])?;

    let text = fs::read_to_string(&config_path).map_err(|e| io_error(&config_path, e))?;
    let cfg = RunConfig::from_map(&parse_pairs(&text, &config_path)?)?;
    if cfg.stage == Stage::Cluster {
        return Err(validation(format!(
            "{} stopped after clustering; there is nothing to evaluate",
            run.display()
        )));
    }
    let ds = load_features(&features)?;
    let clusters = artifacts::read_clusters(&run.join(CLUSTERS_FILE), &ds)?;
    let cams: Vec<_> = clusters.keys().copied().collect();
    let pairs = camera_pairs(&cams);

    let t = last_iteration(run).ok_or_else(|| {
        validation(format!("missing artifacts: {}", iteration_dir(run, 0).display()))
    })?;
    let dir = iteration_dir(run, t);
    let mut needed: Vec<PathBuf> = [MATCHES_FILE, RELIABILITY_FILE, TRACE_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    needed.extend(pairs.iter().map(|&(p, q)| dir.join(metric_file(p, q))));
    missing(&needed)?;

    let (direct, consistent) = artifacts::read_matches(&dir, &clusters, &pairs)?;
    let objectives = artifacts::read_objectives(&dir)?;
    let metrics = artifacts::read_metrics(&dir, &pairs)?;
    let identity = DMatrix::identity(ds.dimension(), ds.dimension());
    let metric_refs: Vec<&DMatrix<f64>> = if baseline {
        vec![&identity]
    } else {
        metrics.values().map(|m| &m.matrix).collect()
    };
    Report::build(ReportInputs {
        stage: cfg.stage.name(),
        iterations: t,
        theta: cfg.pipeline.theta,
        dataset: &ds,
        clusters: &clusters,
        direct: &direct,
        consistent: &consistent,
        metrics: metric_refs,
        objectives: &objectives,
    })
}

/// Per-camera cluster counts, for printing.
pub fn cluster_summary(run: &Path) -> Result<BTreeMap<String, usize>> {
    let ds = load_features(run.join(FEATURES_FILE))?;
    let clusters = artifacts::read_clusters(&run.join(CLUSTERS_FILE), &ds)?;
    Ok(clusters.iter().map(|(c, s)| (c.to_string(), s.len())).collect())
}
