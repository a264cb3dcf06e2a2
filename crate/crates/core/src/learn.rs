//! Pairwise metric learning from consistent matches.
//!
//! For a camera pair, every cluster pair `(i, j)` contributes a weighted
//! log-logistic loss `w · log(1 + exp(s · (e_ij − μ)))`, where `e_ij` is the
//! Mahalanobis cost of the representative sample pair, `μ` is the mean cost
//! of the positive pairs and `w` balances positives against negatives. The
//! loss is minimized over the PSD cone by accelerated proximal gradient with
//! backtracking and function-value restarts.
//!
//! The representative pair and `μ` are frozen for one call, so `e_ij` is
//! linear in `M` and the objective is smooth and convex.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::consistency::ConsistentMatches;
use crate::dataset::{CameraId, TrackletFeature};
use crate::error::{CcmError, Result};
use crate::matching::CostMatrix;
use crate::metric::{psd_project_with_min, MetricModel};

/// How consistent/inconsistent cluster pairs enter the loss exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    /// Kept pairs use `+1`, all others `−1`.
    #[default]
    Signed,
    /// Kept pairs use `1`, all others `0` (constant loss, no gradient).
    Binary,
}

impl LabelScheme {
    fn exponent_sign(self, positive: bool) -> f64 {
        match (self, positive) {
            (_, true) => 1.0,
            (LabelScheme::Signed, false) => -1.0,
            (LabelScheme::Binary, false) => 0.0,
        }
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Log-logistic loss of one cluster pair; `label` is the exponent sign.
pub fn pair_loss(cost: f64, margin: f64, label: f64) -> f64 {
    softplus(label * (cost - margin))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub i: usize,
    pub j: usize,
    pub positive: bool,
    /// Difference of the representative samples, `a − b`.
    pub delta: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTrainingSet {
    pub p: CameraId,
    pub q: CameraId,
    pub pairs: Vec<TrainingPair>,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Mean cost of the positive pairs under the metric that produced them.
    pub margin: f64,
    pub scheme: LabelScheme,
}

impl PairTrainingSet {
    /// Labels every cluster pair of `cost` by membership in `kept` and
    /// freezes the representative difference vectors.
    pub fn build(
        cost: &CostMatrix,
        kept: &ConsistentMatches,
        tracklets_p: &[TrackletFeature],
        tracklets_q: &[TrackletFeature],
        scheme: LabelScheme,
    ) -> Result<Self> {
        let (rows, cols) = cost.shape();
        if (kept.rows, kept.cols) != (rows, cols) {
            return Err(CcmError::ShapeMismatch {
                expected_rows: rows,
                expected_cols: cols,
                rows: kept.rows,
                cols: kept.cols,
            });
        }
        let mut pairs = Vec::with_capacity(rows * cols);
        let mut pos_cost = 0.0;
        let mut n_pos = 0;
        for i in 0..rows {
            for j in 0..cols {
                let (a, b) = cost.representatives[(i, j)];
                let fa = &tracklets_p[a].feature;
                let fb = &tracklets_q[b].feature;
                let delta = DVector::from_iterator(fa.len(), fa.iter().zip(fb).map(|(x, y)| x - y));
                let positive = kept.get(i, j);
                if positive {
                    n_pos += 1;
                    pos_cost += cost.get(i, j);
                }
                pairs.push(TrainingPair { i, j, positive, delta });
            }
        }
        if n_pos == 0 {
            return Err(CcmError::NoConsistentMatches { p: cost.p, q: cost.q });
        }
        Ok(Self {
            p: cost.p,
            q: cost.q,
            n_neg: pairs.len() - n_pos,
            pairs,
            n_pos,
            margin: pos_cost / n_pos as f64,
            scheme,
        })
    }

    /// Builds a set directly from difference vectors; `μ` is the mean
    /// positive cost under `metric`.
    pub fn from_deltas(
        p: CameraId,
        q: CameraId,
        samples: Vec<(DVector<f64>, bool)>,
        metric: &DMatrix<f64>,
        scheme: LabelScheme,
    ) -> Result<Self> {
        let n_pos = samples.iter().filter(|(_, pos)| *pos).count();
        if n_pos == 0 {
            return Err(CcmError::NoConsistentMatches { p, q });
        }
        let margin = samples
            .iter()
            .filter(|(_, pos)| *pos)
            .map(|(d, _)| d.dot(&(metric * d)))
            .sum::<f64>()
            / n_pos as f64;
        let pairs: Vec<TrainingPair> = samples
            .into_iter()
            .enumerate()
            .map(|(k, (delta, positive))| TrainingPair {
                i: k,
                j: 0,
                positive,
                delta,
            })
            .collect();
        Ok(Self {
            p,
            q,
            n_neg: pairs.len() - n_pos,
            pairs,
            n_pos,
            margin,
            scheme,
        })
    }

    pub fn dim(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.delta.len())
    }

    pub fn weight(&self, positive: bool) -> f64 {
        if positive {
            1.0 / self.n_pos as f64
        } else if self.n_neg > 0 {
            1.0 / self.n_neg as f64
        } else {
            0.0
        }
    }

    fn sign(&self, positive: bool) -> f64 {
        self.scheme.exponent_sign(positive)
    }

    /// Row-stacked difference vectors.
    fn delta_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(self.pairs.len(), d, |k, c| self.pairs[k].delta[c])
    }
}

/// Cached evaluator: keeps the stacked deltas to avoid rebuilding them on
/// every objective/gradient call.
struct Evaluator<'a> {
    set: &'a PairTrainingSet,
    deltas: DMatrix<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(set: &'a PairTrainingSet) -> Self {
        Self {
            deltas: set.delta_matrix(),
            set,
        }
    }

    fn costs(&self, m: &DMatrix<f64>) -> Vec<f64> {
        let dm = &self.deltas * m;
        (0..self.deltas.nrows())
            .map(|k| self.deltas.row(k).dot(&dm.row(k)))
            .collect()
    }

    fn objective(&self, m: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for (pair, e) in self.set.pairs.iter().zip(self.costs(m)) {
            let w = self.set.weight(pair.positive);
            total += w * pair_loss(e, self.set.margin, self.set.sign(pair.positive));
        }
        total
    }

    fn gradient(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let coeff: Vec<f64> = self
            .set
            .pairs
            .iter()
            .zip(self.costs(m))
            .map(|(pair, e)| {
                let s = self.set.sign(pair.positive);
                self.set.weight(pair.positive) * s * sigmoid(s * (e - self.set.margin))
            })
            .collect();
        let mut weighted = self.deltas.clone();
        for (k, c) in coeff.iter().enumerate() {
            weighted.row_mut(k).scale_mut(*c);
        }
        let g = self.deltas.transpose() * weighted;
        (&g + g.transpose()) * 0.5
    }
}

fn check_dim(set: &PairTrainingSet, m: &DMatrix<f64>) -> Result<()> {
    let d = set.dim();
    if m.nrows() != d || m.ncols() != d {
        return Err(CcmError::ShapeMismatch {
            expected_rows: d,
            expected_cols: d,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Weighted loss over all cluster pairs under metric `m`.
pub fn objective(m: &DMatrix<f64>, set: &PairTrainingSet) -> Result<f64> {
    if set.n_pos == 0 {
        return Err(CcmError::NoConsistentMatches { p: set.p, q: set.q });
    }
    check_dim(set, m)?;
    Ok(Evaluator::new(set).objective(m))
}

/// `Σ w · s · σ(s (e − μ)) · δδᵀ`, symmetric.
pub fn objective_gradient(m: &DMatrix<f64>, set: &PairTrainingSet) -> Result<DMatrix<f64>> {
    if set.n_pos == 0 {
        return Err(CcmError::NoConsistentMatches { p: set.p, q: set.q });
    }
    check_dim(set, m)?;
    Ok(Evaluator::new(set).gradient(m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub initial_step: f64,
    /// Lipschitz constant of the gradient, when known; caps the first step
    /// at `1/L`.
    pub lipschitz: Option<f64>,
    pub max_iter: usize,
    /// Stop once the relative objective decrease of an accepted step falls
    /// below this.
    pub rel_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            lipschitz: None,
            max_iter: 200,
            rel_tol: 1e-6,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(CcmError::InvalidConfig("initial_step must be positive".into()));
        }
        if let Some(l) = self.lipschitz {
            if !(l > 0.0 && l.is_finite()) {
                return Err(CcmError::InvalidConfig("lipschitz must be positive".into()));
            }
        }
        if self.max_iter == 0 {
            return Err(CcmError::InvalidConfig("max_iter must be ≥ 1".into()));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(CcmError::InvalidConfig("rel_tol must be ≥ 0".into()));
        }
        Ok(())
    }

    fn first_step(&self) -> f64 {
        match self.lipschitz {
            Some(l) => self.initial_step.min(1.0 / l),
            None => self.initial_step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub objective: f64,
    pub step: f64,
    pub min_eig: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedMetric {
    pub model: MetricModel,
    /// Objective after every accepted iterate; entry 0 is the start point.
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
}

const MIN_STEP: f64 = 1e-30;

/// Accelerated proximal gradient over the PSD cone. The returned metric
/// never has a larger objective than `init` (after projecting `init`).
pub fn learn_metric(
    set: &PairTrainingSet,
    config: &OptimizerConfig,
    init: &DMatrix<f64>,
) -> Result<LearnedMetric> {
    config.validate()?;
    if set.n_pos == 0 {
        return Err(CcmError::NoConsistentMatches { p: set.p, q: set.q });
    }
    check_dim(set, init)?;
    let eval = Evaluator::new(set);
    let finite = |f: f64| if f.is_finite() { Ok(f) } else { Err(CcmError::NonFiniteObjective(f)) };

    let (mut x, min0) = psd_project_with_min(init)?;
    let mut fx = finite(eval.objective(&x))?;
    let mut trace = vec![TraceEntry {
        iter: 0,
        objective: fx,
        step: 0.0,
        min_eig: min0,
    }];
    let mut y = x.clone();
    let mut fy = fx;
    let mut t = 1.0f64;
    let mut step = config.first_step();
    let mut converged = false;
    let mut restarted = false;

    for iter in 1..=config.max_iter {
        let g = eval.gradient(&y);
        let (z, fz, zmin) = loop {
            let (z, zmin) = psd_project_with_min(&(&y - &g * step))?;
            let fz = eval.objective(&z);
            let diff = &z - &y;
            let model = fy + g.dot(&diff) + diff.norm_squared() / (2.0 * step);
            if fz <= model + 1e-12 * fy.abs().max(1.0) || step < MIN_STEP {
                break (z, fz, zmin);
            }
            step *= 0.5;
        };
        let fz = finite(fz)?;

        if fz <= fx {
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let momentum = (t - 1.0) / t_next;
            y = &z + (&z - &x) * momentum;
            let rel = (fx - fz) / fx.abs().max(f64::MIN_POSITIVE);
            x = z;
            fx = fz;
            t = t_next;
            fy = eval.objective(&y);
            restarted = false;
            trace.push(TraceEntry {
                iter,
                objective: fx,
                step,
                min_eig: zmin,
            });
            if rel < config.rel_tol {
                converged = true;
                break;
            }
        } else {
            // momentum overshot: restart from the last accepted iterate
            if restarted || step < MIN_STEP {
                converged = true;
                break;
            }
            restarted = true;
            y = x.clone();
            fy = fx;
            t = 1.0;
        }
    }
    Ok(LearnedMetric {
        model: MetricModel {
            p: set.p,
            q: set.q,
            matrix: x,
        },
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{min_eigenvalue, symmetry_defect};
    use crate::testutil::{random_psd, rng};
    use rand::Rng;

    #[test]
    fn pair_loss_examples() {
        assert!((pair_loss(0.7, 0.7, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((pair_loss(40.7, 0.7, 1.0) - 40.0).abs() < 1e-9);
        assert!(pair_loss(1e6, 0.0, 1.0).is_finite());
        assert!(pair_loss(-1e6, 0.0, 1.0) >= 0.0);
        assert!((pair_loss(-40.0, 0.0, -1.0) - 40.0).abs() < 1e-9);
    }

    /// softplus in double-double style: log1p(exp(z)) via series for the
    /// small tail, direct otherwise. Independent of the production branch
    /// structure.
    fn softplus_oracle(z: f64) -> f64 {
        if z > 30.0 {
            // z + log1p(e^{-z}) with e^{-z} < 1e-13: series log1p(u) = u - u²/2
            let u = (-z).exp();
            z + (u - u * u / 2.0)
        } else if z < -30.0 {
            let u = z.exp();
            u - u * u / 2.0
        } else {
            // Kahan-compensated evaluation of ln(1 + e^z)
            let e = z.exp();
            let s = 1.0 + e;
            let err = (s - 1.0) - e;
            s.ln() - err / s
        }
    }

    #[test]
    fn pair_loss_matches_oracle() {
        let mut r = rng(1);
        for _ in 0..500 {
            let e = r.gen_range(-60.0..60.0);
            let mu = r.gen_range(-5.0..5.0);
            let label = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
            let z: f64 = label * (e - mu);
            let got = pair_loss(e, mu, label);
            let want = softplus_oracle(z);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "z={z} {got} {want}");
        }
    }

    fn random_set(r: &mut impl Rng, d: usize, n: usize, scheme: LabelScheme) -> (PairTrainingSet, DMatrix<f64>) {
        let m = random_psd(r, d) * 0.5 + DMatrix::identity(d, d);
        let mut samples: Vec<(DVector<f64>, bool)> = (0..n)
            .map(|_| (DVector::from_fn(d, |_, _| r.gen_range(-0.6..0.6)), r.gen_bool(0.3)))
            .collect();
        samples[0].1 = true;
        (PairTrainingSet::from_deltas(0, 1, samples, &m, scheme).unwrap(), m)
    }

    #[test]
    fn objective_two_pairs_at_margin() {
        let delta = DVector::from_vec(vec![1.0, 0.0]);
        let set = PairTrainingSet::from_deltas(
            0,
            1,
            vec![(delta.clone(), true), (delta, false)],
            &DMatrix::identity(2, 2),
            LabelScheme::Signed,
        )
        .unwrap();
        assert_eq!(set.margin, 1.0);
        let f = objective(&DMatrix::identity(2, 2), &set).unwrap();
        assert!((f - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn objective_matches_scalar_oracle() {
        let mut r = rng(9);
        for scheme in [LabelScheme::Signed, LabelScheme::Binary] {
            let (set, m) = random_set(&mut r, 4, 15, scheme);
            let mut oracle = 0.0;
            for pair in &set.pairs {
                let mut e = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        e += pair.delta[a] * m[(a, b)] * pair.delta[b];
                    }
                }
                let (w, s) = match (pair.positive, scheme) {
                    (true, _) => (1.0 / set.n_pos as f64, 1.0),
                    (false, LabelScheme::Signed) => (1.0 / set.n_neg as f64, -1.0),
                    (false, LabelScheme::Binary) => (1.0 / set.n_neg as f64, 0.0),
                };
                oracle += w * (1.0 + (s * (e - set.margin)).exp()).ln();
            }
            assert!((objective(&m, &set).unwrap() - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_at_margin_is_half_weighted_outer_products() {
        let d1 = DVector::from_vec(vec![1.0, 2.0]);
        let d2 = DVector::from_vec(vec![2.0, -1.0]);
        // both have e = 5 under the identity, so μ = 5 = e for every pair
        let set = PairTrainingSet::from_deltas(
            0,
            1,
            vec![(d1.clone(), true), (d2.clone(), false)],
            &DMatrix::identity(2, 2),
            LabelScheme::Signed,
        )
        .unwrap();
        let g = objective_gradient(&DMatrix::identity(2, 2), &set).unwrap();
        let expected = (&d1 * d1.transpose()) * 0.5 - (&d2 * d2.transpose()) * 0.5;
        assert!((g - expected).abs().max() < 1e-15);
    }

    #[test]
    fn zero_delta_positive_has_zero_gradient() {
        let set = PairTrainingSet::from_deltas(
            0,
            1,
            vec![(DVector::zeros(3), true)],
            &DMatrix::identity(3, 3),
            LabelScheme::Signed,
        )
        .unwrap();
        let g = objective_gradient(&DMatrix::identity(3, 3), &set).unwrap();
        assert_eq!(g, DMatrix::zeros(3, 3));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut r = rng(21);
        for _ in 0..20 {
            let d = r.gen_range(2..=5);
            let (set, m) = random_set(&mut r, d, 12, LabelScheme::Signed);
            let g = objective_gradient(&m, &set).unwrap();
            let h = 1e-6;
            let mut fd = DMatrix::zeros(d, d);
            for a in 0..d {
                for b in 0..d {
                    // symmetric perturbation direction E_ab + E_ba
                    let mut dir = DMatrix::zeros(d, d);
                    dir[(a, b)] += 0.5;
                    dir[(b, a)] += 0.5;
                    let fp = objective(&(&m + &dir * h), &set).unwrap();
                    let fm = objective(&(&m - &dir * h), &set).unwrap();
                    fd[(a, b)] = (fp - fm) / (2.0 * h);
                }
            }
            let rel = (&g - &fd).norm() / g.norm().max(1e-12);
            assert!(rel <= 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn binary_scheme_negatives_are_constant() {
        let set = PairTrainingSet::from_deltas(
            0,
            1,
            vec![
                (DVector::from_vec(vec![1.0, 0.0]), true),
                (DVector::from_vec(vec![0.0, 3.0]), false),
            ],
            &DMatrix::identity(2, 2),
            LabelScheme::Binary,
        )
        .unwrap();
        let g = objective_gradient(&DMatrix::identity(2, 2), &set).unwrap();
        assert_eq!(g[(1, 1)], 0.0);
    }

    #[test]
    fn stationary_start_is_returned() {
        let set = PairTrainingSet::from_deltas(
            0,
            1,
            vec![(DVector::zeros(2), true), (DVector::zeros(2), false)],
            &DMatrix::identity(2, 2),
            LabelScheme::Signed,
        )
        .unwrap();
        let out = learn_metric(&set, &OptimizerConfig::default(), &DMatrix::identity(2, 2)).unwrap();
        assert!((out.model.matrix - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn learns_to_downweight_noise_axis() {
        let mut r = rng(4);
        let mut samples = vec![];
        for _ in 0..20 {
            // positives: close on axis 0, noisy on axis 1
            samples.push((DVector::from_vec(vec![r.gen_range(-0.1..0.1), r.gen_range(-1.0..1.0)]), true));
            // negatives: far apart on axis 0, same noise on axis 1
            let sep = if r.gen_bool(0.5) { 1.0 } else { -1.0 } * r.gen_range(0.8..1.2);
            samples.push((DVector::from_vec(vec![sep, r.gen_range(-1.0..1.0)]), false));
        }
        let id = DMatrix::identity(2, 2);
        let set = PairTrainingSet::from_deltas(0, 1, samples, &id, LabelScheme::Signed).unwrap();
        let f0 = objective(&id, &set).unwrap();
        let out = learn_metric(&set, &OptimizerConfig::default(), &id).unwrap();
        let m = &out.model.matrix;
        assert!(objective(m, &set).unwrap() < f0);
        assert!(m[(1, 1)] / m[(0, 0)] < 1.0, "{m}");
        for w in out.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-12);
        }
    }

    #[test]
    fn learned_metric_is_psd_and_descends() {
        let mut r = rng(17);
        for _ in 0..10 {
            let (set, _) = random_set(&mut r, 5, 30, LabelScheme::Signed);
            let init = DMatrix::identity(5, 5);
            let f0 = objective(&init, &set).unwrap();
            let cfg = OptimizerConfig {
                initial_step: 50.0,
                ..Default::default()
            };
            let out = learn_metric(&set, &cfg, &init).unwrap();
            let m = &out.model.matrix;
            assert!(symmetry_defect(m) <= 1e-10);
            assert!(min_eigenvalue(m).unwrap() >= -1e-8);
            assert!(objective(m, &set).unwrap() <= f0);
            for w in out.trace.windows(2) {
                assert!(w[1].objective <= w[0].objective + 1e-12);
            }
        }
    }

    #[test]
    fn rejects_empty_positive_set() {
        let r = PairTrainingSet::from_deltas(
            2,
            3,
            vec![(DVector::zeros(2), false)],
            &DMatrix::identity(2, 2),
            LabelScheme::Signed,
        );
        assert!(matches!(r, Err(CcmError::NoConsistentMatches { p: 2, q: 3 })));
    }
}
