//! Acceptance criteria A1–A9. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! Run with `cargo test --release -p ccm-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ccm_core::cluster::cluster_camera;
use ccm_core::consistency::{
    direct_matches, reliability_table, threshold_matches, ConsistentAssignments, NetworkAssignments,
};
use ccm_core::dataset::{generate_synthetic, CameraDataset, SyntheticConfig, TrackletFeature};
use ccm_core::eval::{cross_camera_retrieval, evaluate_matches};
use ccm_core::learn::{learn_metric, objective, objective_gradient, LabelScheme, OptimizerConfig, PairTrainingSet};
use ccm_core::matching::{assignment_objective, solve_assignment, AssignmentMatrix, CostMatrix};
use ccm_core::metric::{min_eigenvalue, symmetry_defect, MetricModel};
use ccm_core::pipeline::{cluster_all, initial_state, run_pipeline, PairPhase, PipelineConfig, PipelineState};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn within(elapsed: Duration, budget_s: u64) -> bool {
    elapsed < Duration::from_secs(budget_s)
}

// ---------------------------------------------------------------- A1

/// Every injection of the smaller side into the larger, by recursion.
fn brute_force_min(c: &DMatrix<f64>) -> f64 {
    let (r, k) = c.shape();
    let transpose = r > k;
    let c = if transpose { c.transpose() } else { c.clone() };
    let cols = c.ncols();
    fn go(c: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == c.nrows() {
            *best = best.min(acc);
            return;
        }
        for j in 0..c.ncols() {
            if !used[j] {
                used[j] = true;
                go(c, row + 1, used, acc + c[(row, j)], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(&c, 0, &mut vec![false; cols], 0.0, &mut best);
    best
}

fn a1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst = 0.0f64;
    let mut bad = 0;
    for k in 0..200 {
        let (n, m) = (r.gen_range(1..=7), r.gen_range(1..=7));
        // a third of the instances use small integers to force ties
        let values = DMatrix::from_fn(n, m, |_, _| {
            if k % 3 == 0 {
                r.gen_range(0..4) as f64
            } else {
                r.gen_range(0.0..10.0)
            }
        });
        let cost = CostMatrix {
            p: 0,
            q: 1,
            representatives: DMatrix::from_element(n, m, (0, 0)),
            values: values.clone(),
        };
        let x = solve_assignment(&cost).expect("solvable");
        let got = assignment_objective(&cost, &x).expect("objective");
        let want = brute_force_min(&values);
        let err = (got - want).abs();
        worst = worst.max(err);
        if err > 1e-9 || x.len() != n.min(m) {
            bad += 1;
        }
    }
    let t = start.elapsed();
    Outcome {
        pass: bad == 0 && within(t, 10),
        detail: format!("200 matrices, {bad} mismatches, max |Δ| {worst:.1e}, {t:.2?} (budget 10 s)"),
    }
}

// ---------------------------------------------------------------- A2

fn random_injection(r: &mut ChaCha8Rng, p: u32, q: u32, n: usize, m: usize) -> AssignmentMatrix {
    let mut cols: Vec<usize> = (0..m).collect();
    cols.shuffle(r);
    let size = r.gen_range(0..=n.min(m));
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(r);
    let pairs = rows.into_iter().zip(cols).take(size).collect();
    AssignmentMatrix::from_pairs(p, q, n, m, pairs).expect("one-to-one")
}

fn a2() -> Outcome {
    let start = Instant::now();
    let mut r = rng(202);
    let mut bad = 0;
    let mut cells = 0usize;
    for _ in 0..50 {
        let cams = r.gen_range(3..=6u32);
        let counts: BTreeMap<u32, usize> = (0..cams).map(|c| (c, r.gen_range(1..=15))).collect();
        let mut dense: BTreeMap<(u32, u32), DMatrix<u32>> = BTreeMap::new();
        let mut mats = Vec::new();
        for p in 0..cams {
            for q in p + 1..cams {
                let x = random_injection(&mut r, p, q, counts[&p], counts[&q]);
                let d = x.to_dense().map(u32::from);
                dense.insert((p, q), d.clone());
                dense.insert((q, p), d.transpose());
                mats.push(x);
            }
        }
        let net = NetworkAssignments::new(counts.clone(), mats).expect("network");
        let table = reliability_table(&net).expect("table");
        for p in 0..cams {
            for q in p + 1..cams {
                let rel = table.get(p, q).expect("pair");
                for i in 0..counts[&p] {
                    for j in 0..counts[&q] {
                        let direct = dense[&(p, q)][(i, j)];
                        let mut rt = 0;
                        for s in (0..cams).filter(|&s| s != p && s != q) {
                            for k in 0..counts[&s] {
                                rt += dense[&(p, s)][(i, k)] * dense[&(s, q)][(k, j)];
                            }
                        }
                        cells += 1;
                        if rel.direct[(i, j)] != direct || rel.transitive[(i, j)] != rt || rel.rlt(i, j) != direct + rt {
                            bad += 1;
                        }
                    }
                }
            }
        }
    }
    let t = start.elapsed();
    Outcome {
        pass: bad == 0 && within(t, 10),
        detail: format!("50 networks, {cells} cells, {bad} mismatches, {t:.2?} (budget 10 s)"),
    }
}

// ---------------------------------------------------------------- A3

fn a3() -> Outcome {
    let start = Instant::now();
    let cfg = SyntheticConfig {
        num_identities: 20,
        num_cameras: 4,
        noise_sigma: 0.0,
        camera_distortion_scale: 0.0,
        presence_prob: 1.0,
        tracklets_per_presence: (2, 3),
        seed: 1,
        ..Default::default()
    };
    let ds = generate_synthetic(&cfg).expect("dataset");
    let state = run_pipeline(&ds, &PipelineConfig::default()).expect("pipeline");
    let pure = state.clusters.iter().all(|(cam, set)| {
        let tracklets = ds.camera(*cam).expect("camera");
        set.clusters.iter().all(|members| {
            let ids: BTreeSet<_> = members.iter().map(|&m| tracklets[m].identity.clone()).collect();
            ids.len() == 1
        })
    });
    let first = &state.history[0];
    let m0 = evaluate_matches(&first.consistent, &state.clusters, &ds).expect("eval");
    let last = state.current();
    let m_final = evaluate_matches(&last.consistent, &state.clusters, &ds).expect("eval");
    let metrics: Vec<&DMatrix<f64>> = last.metrics.values().map(|m| &m.matrix).collect();
    let retrieval = cross_camera_retrieval(&ds, &metrics).expect("retrieval");
    let t = start.elapsed();
    let exact = |s: &ccm_core::eval::MatchScore| s.precision == 1.0 && s.recall == 1.0;
    Outcome {
        pass: pure && exact(&m0.micro) && exact(&m_final.micro) && retrieval.map == 1.0 && within(t, 30),
        detail: format!(
            "pure {pure}, t0 P/R {}/{}, final P/R {}/{}, mAP {}, {t:.2?} (budget 30 s)",
            m0.micro.precision, m0.micro.recall, m_final.micro.precision, m_final.micro.recall, retrieval.map
        ),
    }
}

// ---------------------------------------------------------------- A4, A5

/// Noisy regime shared by A4–A6: raw precision lands inside [0.3, 0.8].
fn noisy(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        num_identities: 40,
        num_cameras: 5,
        dim: 16,
        presence_prob: 0.7,
        tracklets_per_presence: (2, 3),
        camera_distortion_scale: 0.5,
        noise_sigma: 0.12,
        seed,
    }
}

struct Iteration0 {
    ds: CameraDataset,
    state: PipelineState,
}

fn iteration0(seed: u64) -> Iteration0 {
    let ds = generate_synthetic(&noisy(seed)).expect("dataset");
    let clusters = cluster_all(&ds);
    let state = initial_state(&ds, clusters, &PipelineConfig::default()).expect("iteration 0");
    Iteration0 { ds, state }
}

fn a4(runs: &[Iteration0], elapsed: Duration) -> Outcome {
    let start = Instant::now();
    let (mut p_wins, mut f_wins) = (0, 0);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for run in runs {
        let h = &run.state.history[0];
        let raw = evaluate_matches(&direct_matches(&h.assignments), &run.state.clusters, &run.ds).expect("eval");
        let kept = evaluate_matches(&h.consistent, &run.state.clusters, &run.ds).expect("eval");
        lo = lo.min(raw.micro.precision);
        hi = hi.max(raw.micro.precision);
        p_wins += usize::from(kept.micro.precision > raw.micro.precision);
        f_wins += usize::from(kept.micro.f1 > raw.micro.f1);
    }
    let t = elapsed + start.elapsed();
    let in_band = lo >= 0.3 && hi <= 0.8;
    Outcome {
        pass: in_band && p_wins >= 18 && f_wins >= 15 && within(t, 300),
        detail: format!(
            "raw precision in [{lo:.3}, {hi:.3}], precision wins {p_wins}/20 (need 18), F1 wins {f_wins}/20 (need 15), {t:.2?} (budget 5 min)"
        ),
    }
}

fn pairs_of(c: &ConsistentAssignments) -> BTreeSet<(u32, u32, usize, usize)> {
    c.iter()
        .flat_map(|(&(p, q), m)| m.pairs.iter().map(move |&(i, j)| (p, q, i, j)))
        .collect()
}

fn a5(runs: &[Iteration0]) -> Outcome {
    let mut nested = 0;
    let mut monotone = 0;
    for run in runs {
        let h = &run.state.history[0];
        let by_theta: Vec<ConsistentAssignments> =
            (0..=2).map(|theta| threshold_matches(&h.reliability, theta)).collect();
        let sets: Vec<_> = by_theta.iter().map(pairs_of).collect();
        if sets[2].is_subset(&sets[1]) && sets[1].is_subset(&sets[0]) {
            nested += 1;
        }
        let scores: Vec<_> = by_theta
            .iter()
            .map(|c| evaluate_matches(c, &run.state.clusters, &run.ds).expect("eval").micro)
            .collect();
        let ok = scores.windows(2).all(|w| w[1].recall <= w[0].recall && w[1].precision >= w[0].precision);
        monotone += usize::from(ok);
    }
    Outcome {
        pass: nested == runs.len() && monotone >= 15,
        detail: format!(
            "nested θ=2 ⊆ θ=1 ⊆ θ=0 in {nested}/{}, recall↓ and precision↑ in {monotone}/20 (need 15)",
            runs.len()
        ),
    }
}

// ---------------------------------------------------------------- A6, A7

/// Early-stopped inner optimizer: the default 200 inner steps overfit the
/// few positive cluster pairs available per camera pair at this scale.
fn a6_config() -> PipelineConfig {
    PipelineConfig {
        max_iter: 10,
        optimizer: OptimizerConfig {
            max_iter: 3,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn a6(learned: &mut Vec<MetricModel>, traces: &mut Vec<Vec<f64>>) -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut accepted = 0;
    let mut violations = 0;
    let mut lines = Vec::new();
    for seed in 0..10 {
        let ds = generate_synthetic(&noisy(seed)).expect("dataset");
        let state = run_pipeline(&ds, &a6_config()).expect("pipeline");
        let identity = DMatrix::identity(ds.dimension(), ds.dimension());
        let r0 = cross_camera_retrieval(&ds, &[&identity]).expect("retrieval").rank1();
        let metrics: Vec<&DMatrix<f64>> = state.current().metrics.values().map(|m| &m.matrix).collect();
        let r_final = cross_camera_retrieval(&ds, &metrics).expect("retrieval").rank1();
        wins += usize::from(r_final >= r0);
        lines.push(format!("{r0:.3}→{r_final:.3}"));
        for it in &state.history[1..] {
            for (key, rec) in &it.pairs {
                if rec.learned {
                    learned.push(it.metrics[key].clone());
                    traces.push(rec.training_trace.iter().map(|e| e.objective).collect());
                }
                accepted += usize::from(rec.phase == PairPhase::Active);
                if let Some(g_prev) = rec.g_prev {
                    if rec.g_curr > g_prev + 1e-9 {
                        violations += 1;
                    }
                }
            }
        }
    }
    let t = start.elapsed();
    Outcome {
        pass: wins >= 9 && violations == 0,
        detail: format!(
            "rank-1 final ≥ iteration 0 in {wins}/10 (need 9) [{}], {accepted} accepted steps, {violations} with G(X^t;M^t) > G(X^(t-1);M^t), {t:.2?}",
            lines.join(" ")
        ),
    }
}

fn a7(learned: &[MetricModel], traces: &[Vec<f64>]) -> Outcome {
    let mut r = rng(707);
    let mut worst_grad = 0.0f64;
    let h = 1e-6;
    for _ in 0..20 {
        let d = r.gen_range(2..=6);
        let n = r.gen_range(4..=12);
        let samples: Vec<(DVector<f64>, bool)> = (0..n)
            .map(|k| (DVector::from_fn(d, |_, _| r.gen_range(-1.0..1.0)), k % 3 == 0))
            .collect();
        let b = DMatrix::from_fn(d, d, |_, _| r.gen_range(-1.0..1.0));
        let m = &b * b.transpose() + DMatrix::identity(d, d) * 0.1;
        let set = PairTrainingSet::from_deltas(0, 1, samples, &DMatrix::identity(d, d), LabelScheme::Signed)
            .expect("set");
        let g = objective_gradient(&m, &set).expect("gradient");
        let mut fd = DMatrix::zeros(d, d);
        for a in 0..d {
            for c in 0..d {
                let mut plus = m.clone();
                plus[(a, c)] += h;
                let mut minus = m.clone();
                minus[(a, c)] -= h;
                fd[(a, c)] = (objective(&plus, &set).unwrap() - objective(&minus, &set).unwrap()) / (2.0 * h);
            }
        }
        let rel = (&g - &fd).norm() / fd.norm().max(1e-12);
        worst_grad = worst_grad.max(rel);
    }

    // more learned metrics straight from the optimizer at its default budget
    let mut all = learned.to_vec();
    let mut all_traces = traces.to_vec();
    for k in 0..20 {
        let d = r.gen_range(2..=8);
        let samples: Vec<(DVector<f64>, bool)> = (0..30)
            .map(|i| (DVector::from_fn(d, |_, _| r.gen_range(-1.0..1.0)), i % 4 == 0))
            .collect();
        let init = DMatrix::identity(d, d);
        let set = PairTrainingSet::from_deltas(0, k, samples, &init, LabelScheme::Signed).expect("set");
        let out = learn_metric(&set, &OptimizerConfig::default(), &init).expect("learn");
        all_traces.push(out.trace.iter().map(|e| e.objective).collect());
        all.push(out.model);
    }
    let min_eig = all
        .iter()
        .map(|m| min_eigenvalue(&m.matrix).expect("eigen"))
        .fold(f64::INFINITY, f64::min);
    let max_sym = all.iter().map(|m| symmetry_defect(&m.matrix)).fold(0.0, f64::max);
    let rises = all_traces
        .iter()
        .flat_map(|tr| tr.windows(2).map(|w| w[1] - w[0]))
        .filter(|&up| up > 1e-12)
        .count();
    Outcome {
        pass: worst_grad <= 1e-5 && min_eig >= -1e-8 && max_sym <= 1e-10 && rises == 0,
        detail: format!(
            "max rel. gradient error {worst_grad:.1e} (≤1e-5), {} metrics: min eigenvalue {min_eig:.1e} (≥−1e-8), max symmetry defect {max_sym:.1e} (≤1e-10), {rises} objective increases",
            all.len()
        ),
    }
}

// ---------------------------------------------------------------- A8

fn bfs_oracle(points: &[Vec<f64>]) -> BTreeSet<Vec<usize>> {
    let n = points.len();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let kappa: Vec<usize> = (0..n)
        .map(|i| {
            let mut best = (f64::INFINITY, usize::MAX);
            for j in (0..n).filter(|&j| j != i) {
                let d = dist(&points[i], &points[j]);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect();
    let linked = |i: usize, j: usize| kappa[i] == j || kappa[j] == i || kappa[i] == kappa[j];
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if !seen[v] && v != u && linked(u, v) {
                    seen[v] = true;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.insert(comp);
    }
    out
}

fn a8() -> Outcome {
    let mut r = rng(808);
    let mut bad = 0;
    for cam in 0..100 {
        let n = r.gen_range(2..=50);
        let d = r.gen_range(1..=6);
        // coarse grid coordinates make distance ties common
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.gen_range(0..5) as f64).collect())
            .collect();
        let tracklets: Vec<TrackletFeature> = points
            .iter()
            .enumerate()
            .map(|(k, v)| TrackletFeature::new(format!("t{k}"), cam, v.clone(), None))
            .collect();
        let got: BTreeSet<Vec<usize>> = cluster_camera(cam, &tracklets)
            .clusters
            .into_iter()
            .map(|mut c| {
                c.sort_unstable();
                c
            })
            .collect();
        if got != bfs_oracle(&points) {
            bad += 1;
        }
    }
    Outcome {
        pass: bad == 0,
        detail: format!("100 cameras, {bad} partitions differ from the BFS oracle"),
    }
}

// ---------------------------------------------------------------- A9

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).expect("read dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("prefix").display().to_string();
                out.insert(rel, fs::read(&p).expect("read"));
            }
        }
    }
    out
}

fn a9() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = tmp.path().join("run.cfg");
    fs::write(
        &cfg,
        "synthetic.num_identities = 30\nsynthetic.num_cameras = 4\nsynthetic.dim = 12\n\
         synthetic.noise_sigma = 0.12\nsynthetic.distortion = 0.5\nseed = 9\nmax_iter = 5\n",
    )
    .expect("write config");
    let mut trees = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "4")] {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_ccm"))
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--jobs", jobs])
            .output()
            .expect("spawn ccm");
        if !status.status.success() {
            return Outcome {
                pass: false,
                detail: format!("ccm run failed: {}", String::from_utf8_lossy(&status.stderr)),
            };
        }
        trees.push(tree(&out));
    }
    let compared: Vec<&String> = trees[0]
        .keys()
        .filter(|k| k.ends_with(".csv") || k.ends_with("report.json"))
        .collect();
    let same_files = trees[0].keys().eq(trees[1].keys());
    let differing: Vec<&&String> = compared.iter().filter(|k| trees[0][**k] != trees[1].get(**k).cloned().unwrap_or_default()).collect();
    Outcome {
        pass: same_files && differing.is_empty() && compared.len() > 2,
        detail: format!(
            "{} report/CSV files compared across --jobs 1 and --jobs 4, {} differ",
            compared.len(),
            differing.len()
        ),
    }
}

fn main() {
    let mut results: Vec<(&str, &str, Outcome)> = Vec::new();
    results.push(("A1", "assignment optimality", a1()));
    results.push(("A2", "consistency oracle", a2()));
    results.push(("A3", "zero-noise end-to-end", a3()));

    let start = Instant::now();
    let runs: Vec<Iteration0> = (0..20).map(iteration0).collect();
    let setup = start.elapsed();
    results.push(("A4", "GNC ablation direction", a4(&runs, setup)));
    results.push(("A5", "θ monotonicity", a5(&runs)));

    let mut learned = Vec::new();
    let mut traces = Vec::new();
    results.push(("A6", "iterative improvement", a6(&mut learned, &mut traces)));
    results.push(("A7", "metric-learning numerics", a7(&learned, &traces)));
    results.push(("A8", "clustering oracle", a8()));
    results.push(("A9", "determinism", a9()));

    let mut failed = 0;
    for (id, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("{tag} {id} {name}: {}", o.detail);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
