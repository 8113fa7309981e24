//! Constrained maximum-likelihood estimation from binary comparisons.
//!
//! The negative log-likelihood of a comparison dataset is convex in the
//! parameter; fitting runs projected gradient descent with backtracking line
//! search (Armijo factor 0.5, initial step 1.0) from the origin. Reward
//! parameters are projected onto per-block balls of radius B; advantage
//! parameters onto the intersection of a ball with the half-spaces
//! `<phi_h(s,a), xi> <= B_adv` enumerated over the tabular feature grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{RegimeError, Result};
use crate::mdp::split_blocks;
use crate::oracle::{sigmoid, ActionPreferenceRecord, PreferenceRecord};

/// Labeled feature-difference dataset. Rows of `x` are `phi(right) -
/// phi(left)`; labels are 1 when `right` was preferred.
#[derive(Debug, Clone)]
pub struct ComparisonDataset {
    x: DMatrix<f64>,
    xt: DMatrix<f64>,
    labels: DVector<f64>,
}

impl ComparisonDataset {
    pub fn new(diffs: &[DVector<f64>], labels: &[u8]) -> Result<Self> {
        if diffs.len() != labels.len() {
            return Err(RegimeError::config("diffs and labels must have equal length"));
        }
        let dim = diffs.first().map_or(0, |d| d.len());
        if diffs.iter().any(|d| d.len() != dim) {
            return Err(RegimeError::config("inconsistent feature dimensions"));
        }
        if diffs.iter().any(|d| d.iter().any(|v| !v.is_finite())) {
            return Err(RegimeError::config("non-finite feature difference"));
        }
        let mut x = DMatrix::zeros(diffs.len(), dim);
        for (i, d) in diffs.iter().enumerate() {
            x.set_row(i, &d.transpose());
        }
        let xt = x.transpose();
        let labels = DVector::from_iterator(labels.len(), labels.iter().map(|&o| f64::from(o)));
        Ok(Self { x, xt, labels })
    }

    pub fn from_records(records: &[PreferenceRecord]) -> Result<Self> {
        let diffs: Vec<DVector<f64>> = records
            .iter()
            .map(|r| {
                DVector::from_iterator(
                    r.right_features.len(),
                    r.right_features
                        .iter()
                        .zip(r.left_features.iter())
                        .map(|(b, a)| b - a),
                )
            })
            .collect();
        let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
        Self::new(&diffs, &labels)
    }

    pub fn from_action_records(records: &[ActionPreferenceRecord]) -> Result<Self> {
        let diffs: Vec<DVector<f64>> = records
            .iter()
            .map(|r| {
                DVector::from_iterator(
                    r.right_features.len(),
                    r.right_features
                        .iter()
                        .zip(r.left_features.iter())
                        .map(|(b, a)| b - a),
                )
            })
            .collect();
        let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
        Self::new(&diffs, &labels)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn diff(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Negative log-likelihood of the comparison dataset at `theta`.
/// Empty datasets score 0.
pub fn nll(theta: &DVector<f64>, data: &ComparisonDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let z = &data.x * theta;
    let mut total = 0.0;
    for i in 0..data.len() {
        let y = 2.0 * data.labels[i] - 1.0;
        total += softplus(-y * z[i]);
    }
    total
}

fn nll_grad(theta: &DVector<f64>, data: &ComparisonDataset) -> DVector<f64> {
    let z = &data.x * theta;
    let residual = DVector::from_iterator(
        data.len(),
        (0..data.len()).map(|i| sigmoid(z[i]) - data.labels[i]),
    );
    &data.xt * residual
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Projected-gradient norm threshold.
    pub tol: f64,
    pub max_iters: usize,
    /// Backtracking factor for the Armijo line search.
    pub armijo_factor: f64,
    pub initial_step: f64,
    /// Armijo sufficient-decrease constant.
    pub sufficient_decrease: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 50_000,
            armijo_factor: 0.5,
            initial_step: 1.0,
            sufficient_decrease: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    /// Iteration budget exhausted; the carried iterate is the best found.
    NotConverged,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub status: FitStatus,
    pub iterations: usize,
    /// Norm of the projected gradient at the returned iterate.
    pub grad_norm: f64,
    pub nll: f64,
}

/// Reward parameter estimate as per-step blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub blocks: Vec<DVector<f64>>,
    pub diagnostics: FitDiagnostics,
    /// Largest positive excess of `<phi(tau), theta_hat>` over `r_max` across
    /// the audited trajectory features (None when no audit set was supplied).
    pub r_max_violation: Option<f64>,
}

impl ThetaEstimate {
    pub fn stacked(&self) -> DVector<f64> {
        crate::mdp::stack_blocks(&self.blocks)
    }
}

/// Per-step advantage parameter estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XiEstimate {
    pub xi: DVector<f64>,
    pub diagnostics: FitDiagnostics,
    pub bound_b: f64,
    pub bound_adv: f64,
}

fn project_block_balls(v: &mut DVector<f64>, n_blocks: usize, radius: f64) {
    let d = v.len() / n_blocks;
    for h in 0..n_blocks {
        let mut block = v.rows_mut(h * d, d);
        let norm = block.norm();
        if norm > radius {
            block *= radius / norm;
        }
    }
}

/// Cyclic projection onto the ball of radius `bound_b` intersected with the
/// half-spaces `<phi, xi> <= bound_adv` for every grid feature.
fn project_advantage_set(
    v: &mut DVector<f64>,
    bound_b: f64,
    bound_adv: f64,
    grid: &[DVector<f64>],
) {
    for _ in 0..500 {
        let norm = v.norm();
        if norm > bound_b {
            *v *= bound_b / norm;
        }
        let mut violated = false;
        for phi in grid {
            let excess = phi.dot(v) - bound_adv;
            if excess > 1e-12 {
                let scale = excess / phi.norm_squared();
                *v -= phi * scale;
                violated = true;
            }
        }
        if !violated && v.norm() <= bound_b + 1e-12 {
            return;
        }
    }
}

fn projected_gradient(
    data: &ComparisonDataset,
    dim: usize,
    project: &dyn Fn(&mut DVector<f64>),
    cfg: &SolverConfig,
) -> (DVector<f64>, FitDiagnostics) {
    let mut theta = DVector::zeros(dim);
    project(&mut theta);
    let mut f = nll(&theta, data);
    let mut iterations = 0;
    let mut status = FitStatus::NotConverged;
    let mut grad_norm = f64::INFINITY;
    let mut stall = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let g = nll_grad(&theta, data);
        let mut probe = &theta - &g;
        project(&mut probe);
        grad_norm = (&theta - &probe).norm();
        if grad_norm <= cfg.tol {
            status = FitStatus::Converged;
            break;
        }
        let mut step = cfg.initial_step;
        let mut accepted = None;
        while step >= 1e-18 {
            let mut cand = &theta - &g * step;
            project(&mut cand);
            let f_cand = nll(&cand, data);
            let dir = &cand - &theta;
            if f_cand <= f + cfg.sufficient_decrease * g.dot(&dir) {
                accepted = Some((cand, f_cand));
                break;
            }
            step *= cfg.armijo_factor;
        }
        let Some((cand, f_cand)) = accepted else {
            // No descent step representable: the iterate is numerically
            // stationary on the constraint set.
            status = FitStatus::Converged;
            break;
        };
        if f - f_cand <= 1e-15 * (1.0 + f.abs()) {
            stall += 1;
            if stall >= 20 {
                status = FitStatus::Converged;
                theta = cand;
                f = f_cand;
                break;
            }
        } else {
            stall = 0;
        }
        theta = cand;
        f = f_cand;
    }
    let diagnostics = FitDiagnostics { status, iterations, grad_norm, nll: f };
    (theta, diagnostics)
}

/// Fit stacked reward parameters over per-block balls of radius `bound_b`.
///
/// `audit_trajectories` are stacked trajectory features used only to report
/// post-hoc violations of the `r_max` cumulative-reward cap; pass an empty
/// slice to skip the audit.
pub fn fit_theta(
    data: &ComparisonDataset,
    n_blocks: usize,
    bound_b: f64,
    r_max: f64,
    audit_trajectories: &[DVector<f64>],
    cfg: &SolverConfig,
) -> Result<ThetaEstimate> {
    if data.is_empty() {
        return Err(RegimeError::precondition("fit_theta needs at least one record"));
    }
    if data.dim() % n_blocks != 0 {
        return Err(RegimeError::config("feature dimension not divisible into blocks"));
    }
    let project = move |v: &mut DVector<f64>| project_block_balls(v, n_blocks, bound_b);
    let (theta, diagnostics) = projected_gradient(data, data.dim(), &project, cfg);
    let r_max_violation = if audit_trajectories.is_empty() {
        None
    } else {
        let worst = audit_trajectories
            .iter()
            .map(|phi| phi.dot(&theta) - r_max)
            .fold(f64::NEG_INFINITY, f64::max);
        Some(worst.max(0.0))
    };
    Ok(ThetaEstimate {
        blocks: split_blocks(&theta, n_blocks),
        diagnostics,
        r_max_violation,
    })
}

/// Fit a per-step advantage parameter over the constraint set
/// `{||xi|| <= bound_b} ∩ {<phi, xi> <= bound_adv for all grid features}`.
pub fn fit_xi(
    data: &ComparisonDataset,
    bound_b: f64,
    bound_adv: f64,
    grid: &[DVector<f64>],
    cfg: &SolverConfig,
) -> Result<XiEstimate> {
    if data.is_empty() {
        return Err(RegimeError::precondition("fit_xi needs at least one record"));
    }
    let max_grid_norm = grid.iter().map(|g| g.norm()).fold(0.0, f64::max);
    if bound_adv < -bound_b * max_grid_norm {
        return Err(RegimeError::config(format!(
            "infeasible constraint set: bound_adv {bound_adv} < -B*R = {}",
            -bound_b * max_grid_norm
        )));
    }
    let project =
        move |v: &mut DVector<f64>| project_advantage_set(v, bound_b, bound_adv, grid);
    let (xi, diagnostics) = projected_gradient(data, data.dim(), &project, cfg);
    Ok(XiEstimate { xi, diagnostics, bound_b, bound_adv })
}

/// Mahalanobis distance `sqrt((a-b)^T Sigma (a-b))` for a symmetric positive
/// definite `Sigma`.
pub fn covariance_error(a: &DVector<f64>, b: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if sigma.nrows() != sigma.ncols() || sigma.nrows() != a.len() || a.len() != b.len() {
        return Err(RegimeError::config("covariance_error: dimension mismatch"));
    }
    let asym = (sigma - sigma.transpose()).abs().max();
    if asym > 1e-8 {
        return Err(RegimeError::config("covariance_error: matrix is not symmetric"));
    }
    if nalgebra::Cholesky::new(sigma.clone()).is_none() {
        return Err(RegimeError::config("covariance_error: matrix is not positive definite"));
    }
    let delta = a - b;
    Ok((delta.dot(&(sigma * &delta))).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use nalgebra::DVector;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_vec(dim: usize, rng: &mut impl Rng) -> DVector<f64> {
        DVector::from_iterator(dim, (0..dim).map(|_| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
        }))
    }

    /// Labels drawn from the Bradley-Terry model at `theta_star`.
    fn synthetic(
        n: usize,
        dim: usize,
        theta_star: &DVector<f64>,
        rng: &mut impl Rng,
    ) -> ComparisonDataset {
        let mut diffs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let d = gaussian_vec(dim, rng);
            let p = sigmoid(theta_star.dot(&d));
            labels.push(u8::from(rng.gen::<f64>() < p));
            diffs.push(d);
        }
        ComparisonDataset::new(&diffs, &labels).unwrap()
    }

    #[test]
    fn nll_at_zero_is_n_log_two() {
        let mut rng = seeded_rng(0, 0);
        let data = synthetic(257, 4, &DVector::zeros(4), &mut rng);
        let v = nll(&DVector::zeros(4), &data);
        assert!((v - 257.0 * (2.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn single_record_closed_form() {
        // o = 1 with logit 1: nll = -log sigmoid(1) ~ 0.31326.
        let diffs = vec![DVector::from_vec(vec![1.0])];
        let data = ComparisonDataset::new(&diffs, &[1]).unwrap();
        let v = nll(&DVector::from_vec(vec![1.0]), &data);
        assert!((v - 0.313_261_687_5).abs() < 1e-9);
    }

    #[test]
    fn empty_dataset_scores_zero_and_refuses_to_fit() {
        let data = ComparisonDataset::new(&[], &[]).unwrap();
        assert_eq!(nll(&DVector::zeros(0), &data), 0.0);
        assert!(fit_theta(&data, 1, 1.0, 1.0, &[], &SolverConfig::default()).is_err());
    }

    #[test]
    fn midpoint_convexity() {
        let mut rng = seeded_rng(1, 0);
        let data = synthetic(64, 6, &gaussian_vec(6, &mut rng), &mut rng);
        for _ in 0..100 {
            let a = gaussian_vec(6, &mut rng);
            let b = gaussian_vec(6, &mut rng);
            let mid = (&a + &b) * 0.5;
            assert!(nll(&mid, &data) <= 0.5 * (nll(&a, &data) + nll(&b, &data)) + 1e-12);
        }
    }

    /// Norm-bounded difference vectors, as trajectory features are.
    fn bounded_vec(dim: usize, rng: &mut impl Rng) -> DVector<f64> {
        let mut v = gaussian_vec(dim, rng);
        let n = v.norm();
        if n > 1.0 {
            v /= n;
        }
        v
    }

    #[test]
    fn coin_flip_labels_give_small_logits() {
        // Population optimum at theta with all logits zero.
        let mut rng = seeded_rng(2, 0);
        let mut diffs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..10_000 {
            diffs.push(bounded_vec(2, &mut rng));
            labels.push(u8::from(rng.gen::<f64>() < 0.5));
        }
        let data = ComparisonDataset::new(&diffs, &labels).unwrap();
        let est = fit_theta(&data, 2, 5.0, 10.0, &[], &SolverConfig::default()).unwrap();
        let theta = est.stacked();
        for i in 0..data.len() {
            assert!(theta.dot(&data.diff(i)).abs() <= 0.1);
        }
    }

    #[test]
    fn one_dimensional_closed_form_logit() {
        // Constant difference vector: the MLE logit is log(p / (1 - p)).
        let n = 10_000;
        let ones = 7_000;
        let diffs: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_vec(vec![1.0])).collect();
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i < ones)).collect();
        let data = ComparisonDataset::new(&diffs, &labels).unwrap();
        let cfg = SolverConfig { tol: 1e-12, ..Default::default() };
        let est = fit_theta(&data, 1, 50.0, 100.0, &[], &cfg).unwrap();
        let p = ones as f64 / n as f64;
        let expected = (p / (1.0 - p)).ln();
        assert!(
            (est.stacked()[0] - expected).abs() < 1e-4,
            "got {}, want {expected}",
            est.stacked()[0]
        );
    }

    #[test]
    fn separable_data_saturates_the_ball() {
        // Every record prefers the same direction; likelihood pushes to the
        // constraint boundary on the active block.
        let diffs: Vec<DVector<f64>> = (0..200)
            .map(|_| DVector::from_vec(vec![1.0, 0.0]))
            .collect();
        let labels = vec![1u8; 200];
        let data = ComparisonDataset::new(&diffs, &labels).unwrap();
        let b = 2.5;
        let est = fit_theta(&data, 1, b, 100.0, &[], &SolverConfig::default()).unwrap();
        assert!((est.blocks[0].norm() - b).abs() < 1e-6);
    }

    #[test]
    fn training_nll_beats_the_generating_parameter() {
        let mut rng = seeded_rng(3, 0);
        for trial in 0..20 {
            let dim = 2 + trial % 4;
            let mut theta_star = gaussian_vec(dim, &mut rng);
            theta_star *= 0.8 / theta_star.norm();
            let data = synthetic(300, dim, &theta_star, &mut rng);
            let est = fit_theta(&data, 1, 1.0, 50.0, &[], &SolverConfig::default()).unwrap();
            assert!(
                nll(&est.stacked(), &data) <= nll(&theta_star, &data) + 1e-6,
                "trial {trial}"
            );
        }
    }

    #[test]
    fn consistency_trend_in_n() {
        let dim = 4;
        let sizes = [100usize, 1_000, 10_000];
        let mut medians = Vec::new();
        for &n in &sizes {
            let mut errs: Vec<f64> = (0..10)
                .map(|seed| {
                    let mut rng = seeded_rng(seed, 17);
                    let mut theta_star = gaussian_vec(dim, &mut rng);
                    theta_star *= 0.9 / theta_star.norm();
                    let data = synthetic(n, dim, &theta_star, &mut rng);
                    let est =
                        fit_theta(&data, 2, 1.0, 50.0, &[], &SolverConfig::default()).unwrap();
                    (est.stacked() - &theta_star).norm()
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            medians.push(0.5 * (errs[4] + errs[5]));
        }
        assert!(medians[0] >= medians[1] && medians[1] >= medians[2], "{medians:?}");
    }

    #[test]
    fn logits_are_scale_equivariant() {
        let mut rng = seeded_rng(4, 0);
        let dim = 4;
        let theta_star = gaussian_vec(dim, &mut rng) * 0.4;
        let mut diffs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..500 {
            let d = gaussian_vec(dim, &mut rng);
            let p = sigmoid(theta_star.dot(&d));
            labels.push(u8::from(rng.gen::<f64>() < p));
            diffs.push(d);
        }
        let c = 3.0;
        let scaled: Vec<DVector<f64>> = diffs.iter().map(|d| d * c).collect();
        let cfg = SolverConfig { tol: 1e-11, ..Default::default() };
        let base = ComparisonDataset::new(&diffs, &labels).unwrap();
        let big = ComparisonDataset::new(&scaled, &labels).unwrap();
        let est_a = fit_theta(&base, 1, 1.0, 50.0, &[], &cfg).unwrap();
        let est_b = fit_theta(&big, 1, 1.0 / c, 50.0, &[], &cfg).unwrap();
        for i in 0..base.len() {
            let la = est_a.stacked().dot(&base.diff(i));
            let lb = est_b.stacked().dot(&big.diff(i));
            assert!((la - lb).abs() < 1e-6, "record {i}: {la} vs {lb}");
        }
    }

    #[test]
    fn xi_fit_recovers_gap_and_respects_constraints() {
        // One-hot features, two actions: the recovered advantage gap matches
        // the generating gap.
        let gap = 0.4;
        let phi0 = DVector::from_vec(vec![1.0, 0.0]);
        let phi1 = DVector::from_vec(vec![0.0, 1.0]);
        let mut rng = seeded_rng(5, 0);
        let mut diffs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..10_000 {
            let p = sigmoid(gap);
            labels.push(u8::from(rng.gen::<f64>() < p));
            diffs.push(&phi1 - &phi0);
        }
        let data = ComparisonDataset::new(&diffs, &labels).unwrap();
        let grid = vec![phi0.clone(), phi1.clone()];
        let est = fit_xi(&data, 2.0, 0.5, &grid, &SolverConfig::default()).unwrap();
        let recovered = est.xi.dot(&(&phi1 - &phi0));
        assert!((recovered - gap).abs() < 0.05, "recovered {recovered}");
        assert!(est.xi.norm() <= 2.0 + 1e-9);
        for phi in &grid {
            assert!(phi.dot(&est.xi) <= 0.5 + 1e-6);
        }
    }

    #[test]
    fn xi_fit_coin_flips_give_small_logits() {
        let mut rng = seeded_rng(6, 0);
        let dim = 2;
        let mut diffs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..10_000 {
            diffs.push(bounded_vec(dim, &mut rng));
            labels.push(u8::from(rng.gen::<f64>() < 0.5));
        }
        let data = ComparisonDataset::new(&diffs, &labels).unwrap();
        let grid: Vec<DVector<f64>> = (0..dim)
            .map(|j| {
                let mut e = DVector::zeros(dim);
                e[j] = 1.0;
                e
            })
            .collect();
        let est = fit_xi(&data, 5.0, 5.0, &grid, &SolverConfig::default()).unwrap();
        for i in 0..data.len() {
            assert!(est.xi.dot(&data.diff(i)).abs() <= 0.1);
        }
    }

    #[test]
    fn xi_constraint_activity_when_unconstrained_optimum_violates() {
        // Separable data pushes <phi1, xi> far above bound_adv; the returned
        // estimate must still satisfy the half-space within 1e-6.
        let phi0 = DVector::from_vec(vec![1.0, 0.0]);
        let phi1 = DVector::from_vec(vec![0.0, 1.0]);
        let diffs: Vec<DVector<f64>> = (0..500).map(|_| &phi1 - &phi0).collect();
        let labels = vec![1u8; 500];
        let data = ComparisonDataset::new(&diffs, &labels).unwrap();
        let grid = vec![phi0, phi1.clone()];
        let est = fit_xi(&data, 10.0, 0.25, &grid, &SolverConfig::default()).unwrap();
        assert!(phi1.dot(&est.xi) <= 0.25 + 1e-6);
        assert!(phi1.dot(&est.xi) >= 0.25 - 1e-3, "constraint should be active");
    }

    #[test]
    fn infeasible_advantage_set_is_a_config_error() {
        let data = ComparisonDataset::new(
            &[DVector::from_vec(vec![1.0])],
            &[1],
        )
        .unwrap();
        let grid = vec![DVector::from_vec(vec![1.0])];
        assert!(fit_xi(&data, 1.0, -2.0, &grid, &SolverConfig::default()).is_err());
    }

    #[test]
    fn covariance_error_basics() {
        let mut rng = seeded_rng(7, 0);
        let a = gaussian_vec(5, &mut rng);
        let b = gaussian_vec(5, &mut rng);
        assert_eq!(covariance_error(&a, &a, &DMatrix::identity(5, 5)).unwrap(), 0.0);
        let eye = DMatrix::identity(5, 5);
        assert!(
            (covariance_error(&a, &b, &eye).unwrap() - (&a - &b).norm()).abs() < 1e-12
        );
        // Random PD matrix via M^T M + I vs direct quadratic form.
        let m = DMatrix::from_fn(5, 5, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let sigma = m.transpose() * &m + DMatrix::identity(5, 5);
        let delta = &a - &b;
        let direct = delta.dot(&(&sigma * &delta)).sqrt();
        assert!((covariance_error(&a, &b, &sigma).unwrap() - direct).abs() < 1e-12);
        // Non-PD rejection.
        let neg = -DMatrix::identity(5, 5);
        assert!(covariance_error(&a, &b, &neg).is_err());
    }
}
