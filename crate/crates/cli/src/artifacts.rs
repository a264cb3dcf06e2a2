//! Run directory layout.
//!
//! ```text
//! <run>/config.txt            effective configuration
//! <run>/features.ccmf         preprocessed features the run used
//! <run>/clusters.csv          camera_id,cluster_index,tracklet_id
//! <run>/state/t<k>/matches.csv       p,q,i,j,cost
//! <run>/state/t<k>/reliability.csv   p,q,i,j,direct,rt,rlt,kept (rows with rlt ≥ 1)
//! <run>/state/t<k>/trace.csv         p,q,phase,learned,g_prev,g_curr
//! <run>/state/t<k>/training.csv      pair,iter,objective,step,min_eig
//! <run>/state/t<k>/metric_<p>_<q>.ccmm
//! <run>/report.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ccm_core::cluster::ClusterSet;
use ccm_core::consistency::{CameraPair, ConsistentAssignments, ConsistentMatches};
use ccm_core::dataset::{CameraDataset, CameraId};
use ccm_core::eval::pair_key;
use ccm_core::metric::MetricModel;
use ccm_core::pipeline::{IterationState, PairPhase};

use crate::error::{io_error, validation, CliError, Result};

pub const CONFIG_FILE: &str = "config.txt";
pub const FEATURES_FILE: &str = "features.ccmf";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const REPORT_FILE: &str = "report.json";
pub const STATE_DIR: &str = "state";
pub const MATCHES_FILE: &str = "matches.csv";
pub const RELIABILITY_FILE: &str = "reliability.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const TRAINING_FILE: &str = "training.csv";

pub fn iteration_dir(run: &Path, t: usize) -> PathBuf {
    run.join(STATE_DIR).join(format!("t{t}"))
}

pub fn metric_file(p: CameraId, q: CameraId) -> String {
    format!("metric_{p}_{q}.ccmm")
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

pub fn clusters_csv(dataset: &CameraDataset, clusters: &BTreeMap<CameraId, ClusterSet>) -> String {
    let mut s = String::from("camera_id,cluster_index,tracklet_id\n");
    for (&cam, set) in clusters {
        let tracklets = dataset.camera(cam).unwrap_or(&[]);
        for (c, members) in set.clusters.iter().enumerate() {
            for &m in members {
                let _ = writeln!(s, "{cam},{c},{}", tracklets[m].tracklet_id);
            }
        }
    }
    s
}

/// Writes every artifact of one iteration.
pub fn write_iteration(run: &Path, state: &IterationState) -> Result<()> {
    let dir = iteration_dir(run, state.t);
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;

    let mut matches = String::from("p,q,i,j,cost\n");
    for (p, q) in state.assignments.pairs() {
        let x = state.assignments.get(p, q).expect("listed pair");
        let cost = &state.costs[&(p, q)];
        for &(i, j) in x.pairs() {
            let _ = writeln!(matches, "{p},{q},{i},{j},{:.16e}", cost.get(i, j));
        }
    }
    write(&dir.join(MATCHES_FILE), &matches)?;

    let mut rel = String::from("p,q,i,j,direct,rt,rlt,kept\n");
    for (&(p, q), r) in &state.reliability.pairs {
        let kept = &state.consistent[&(p, q)];
        let (rows, cols) = r.shape();
        for i in 0..rows {
            for j in 0..cols {
                let rlt = r.rlt(i, j);
                if rlt == 0 {
                    continue;
                }
                let _ = writeln!(
                    rel,
                    "{p},{q},{i},{j},{},{},{rlt},{}",
                    r.direct[(i, j)],
                    r.transitive[(i, j)],
                    u8::from(kept.get(i, j))
                );
            }
        }
    }
    write(&dir.join(RELIABILITY_FILE), &rel)?;

    let mut trace = String::from("p,q,phase,learned,g_prev,g_curr\n");
    let mut training = String::from("pair,iter,objective,step,min_eig\n");
    for (&(p, q), rec) in &state.pairs {
        let phase = match rec.phase {
            PairPhase::Active => "active",
            PairPhase::Converged => "converged",
            PairPhase::Frozen => "frozen",
        };
        let g_prev = rec.g_prev.map(|g| format!("{g:.16e}")).unwrap_or_default();
        let _ = writeln!(
            trace,
            "{p},{q},{phase},{},{g_prev},{:.16e}",
            u8::from(rec.learned),
            rec.g_curr
        );
        for e in &rec.training_trace {
            let _ = writeln!(
                training,
                "{},{},{:.16e},{:.16e},{:.16e}",
                pair_key(p, q),
                e.iter,
                e.objective,
                e.step,
                e.min_eig
            );
        }
    }
    write(&dir.join(TRACE_FILE), &trace)?;
    write(&dir.join(TRAINING_FILE), &training)?;

    for m in state.metrics.values() {
        let path = dir.join(metric_file(m.p, m.q));
        write(&path, &m.to_text())?;
    }
    Ok(())
}

/// Splits CSV text into rows of fields, skipping the header.
fn rows<'a>(text: &'a str, path: &'a Path, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    if first != header {
        return Err(validation(format!(
            "{}:1: expected header {header:?}, found {first:?}",
            path.display()
        )));
    }
    let width = header.split(',').count();
    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(validation(format!(
                "{}:{}: expected {width} fields, found {}",
                path.display(),
                idx + 2,
                fields.len()
            )));
        }
        out.push((idx + 2, fields));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| validation(format!("{}:{line}: invalid field {s:?}", path.display())))
}

pub fn read_clusters(path: &Path, dataset: &CameraDataset) -> Result<BTreeMap<CameraId, ClusterSet>> {
    let text = read(path)?;
    let mut index: BTreeMap<CameraId, BTreeMap<&str, usize>> = BTreeMap::new();
    for (cam, list) in dataset.cameras() {
        index.insert(cam, list.iter().enumerate().map(|(k, t)| (t.tracklet_id.as_str(), k)).collect());
    }
    let mut out: BTreeMap<CameraId, ClusterSet> = BTreeMap::new();
    for (line, f) in rows(&text, path, "camera_id,cluster_index,tracklet_id")? {
        let cam: CameraId = field(path, line, f[0])?;
        let c: usize = field(path, line, f[1])?;
        let member = index
            .get(&cam)
            .and_then(|m| m.get(f[2]))
            .copied()
            .ok_or_else(|| {
                validation(format!(
                    "{}:{line}: tracklet {:?} not found in camera {cam}",
                    path.display(),
                    f[2]
                ))
            })?;
        let set = out.entry(cam).or_insert_with(|| ClusterSet {
            camera_id: cam,
            clusters: Vec::new(),
        });
        if c == set.clusters.len() {
            set.clusters.push(Vec::new());
        } else if c + 1 != set.clusters.len() {
            return Err(validation(format!(
                "{}:{line}: cluster indices must be contiguous",
                path.display()
            )));
        }
        set.clusters[c].push(member);
    }
    Ok(out)
}

/// Raw assignments (every row of `matches.csv`) and kept matches (rows of
/// `reliability.csv` with `kept = 1`), shaped by the cluster counts.
pub fn read_matches(
    dir: &Path,
    clusters: &BTreeMap<CameraId, ClusterSet>,
    pairs: &[CameraPair],
) -> Result<(ConsistentAssignments, ConsistentAssignments)> {
    let empty = |&(p, q): &CameraPair| -> Result<ConsistentMatches> {
        let n = |c: CameraId| {
            clusters
                .get(&c)
                .map(ClusterSet::len)
                .ok_or_else(|| validation(format!("camera {c} has no clusters")))
        };
        Ok(ConsistentMatches {
            p,
            q,
            rows: n(p)?,
            cols: n(q)?,
            pairs: Vec::new(),
        })
    };
    let mut direct = BTreeMap::new();
    let mut kept = BTreeMap::new();
    for key in pairs {
        direct.insert(*key, empty(key)?);
        kept.insert(*key, empty(key)?);
    }
    let push = |map: &mut ConsistentAssignments, path: &Path, line: usize, f: &[&str]| -> Result<()> {
        let (p, q): (CameraId, CameraId) = (field(path, line, f[0])?, field(path, line, f[1])?);
        let (i, j): (usize, usize) = (field(path, line, f[2])?, field(path, line, f[3])?);
        let m = map
            .get_mut(&(p, q))
            .ok_or_else(|| validation(format!("{}:{line}: unknown camera pair ({p},{q})", path.display())))?;
        if i >= m.rows || j >= m.cols {
            return Err(validation(format!("{}:{line}: cluster index out of range", path.display())));
        }
        m.pairs.push((i, j));
        Ok(())
    };

    let path = dir.join(MATCHES_FILE);
    let text = read(&path)?;
    for (line, f) in rows(&text, &path, "p,q,i,j,cost")? {
        push(&mut direct, &path, line, &f)?;
    }
    let path = dir.join(RELIABILITY_FILE);
    let text = read(&path)?;
    for (line, f) in rows(&text, &path, "p,q,i,j,direct,rt,rlt,kept")? {
        if f[7] == "1" {
            push(&mut kept, &path, line, &f)?;
        }
    }
    for m in direct.values_mut().chain(kept.values_mut()) {
        m.pairs.sort_unstable();
    }
    Ok((direct, kept))
}

/// Final objective `g_curr` per pair from `trace.csv`.
pub fn read_objectives(dir: &Path) -> Result<BTreeMap<CameraPair, f64>> {
    let path = dir.join(TRACE_FILE);
    let text = read(&path)?;
    let mut out = BTreeMap::new();
    for (line, f) in rows(&text, &path, "p,q,phase,learned,g_prev,g_curr")? {
        let key: CameraPair = (field(&path, line, f[0])?, field(&path, line, f[1])?);
        out.insert(key, field(&path, line, f[5])?);
    }
    Ok(out)
}

pub fn read_metrics(dir: &Path, pairs: &[CameraPair]) -> Result<BTreeMap<CameraPair, MetricModel>> {
    let mut out = BTreeMap::new();
    for &(p, q) in pairs {
        let m = MetricModel::load(dir.join(metric_file(p, q))).map_err(CliError::from)?;
        if (m.p, m.q) != (p, q) {
            return Err(validation(format!(
                "{}: header names pair ({},{}), expected ({p},{q})",
                dir.join(metric_file(p, q)).display(),
                m.p,
                m.q
            )));
        }
        out.insert((p, q), m);
    }
    Ok(out)
}

/// Highest `k` with an existing `state/t<k>` directory.
pub fn last_iteration(run: &Path) -> Option<usize> {
    let entries = fs::read_dir(run.join(STATE_DIR)).ok()?;
    entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str()?.strip_prefix('t')?.parse::<usize>().ok())
        .max()
}
