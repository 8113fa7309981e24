//! Tabular reward-free exploration: count-bonus episodic model learning plus
//! exact audits of how row-wise model error propagates to visitation
//! measures and feature expectations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{
    feature_expectation, occupancy, optimal_policy, MarkovPolicy, Reward, TabularMdp,
    TransitionModel,
};

/// Empirical transition model with visit counts. Unvisited rows default to
/// the uniform distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatedModel {
    pub model: TransitionModel,
    /// Visit counts n_h(s,a), one (n_states x n_actions) table per step.
    pub counts: Vec<DMatrix<f64>>,
    pub eps_target: f64,
    pub delta: f64,
    pub episodes: usize,
    pub warning: Option<String>,
}

impl EstimatedModel {
    /// Exact-transitions mode: the estimate simply aliases the true model.
    pub fn exact(mdp: &TabularMdp) -> Self {
        Self {
            model: mdp.transitions.clone(),
            counts: vec![DMatrix::zeros(mdp.n_states, mdp.n_actions); mdp.horizon],
            eps_target: 0.0,
            delta: 0.0,
            episodes: 0,
            warning: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExploreConfig {
    /// Scale on the count bonus.
    pub bonus_scale: f64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self { bonus_scale: 2.0 }
    }
}

/// Count-bonus reward-free exploration.
///
/// Each episode plans greedily under the bonus reward `b/H` with the current
/// empirical model, rolls out once on the true environment, and updates
/// counts. The returned model carries no certificate; measure its quality
/// with [`model_error_audit`] over a policy panel.
pub fn explore_and_estimate(
    mdp: &TabularMdp,
    eps_target: f64,
    delta: f64,
    episode_budget: usize,
    cfg: &ExploreConfig,
    rng: &mut impl Rng,
) -> EstimatedModel {
    let (ns, na, h) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let uniform_row = DVector::from_element(ns, 1.0 / ns as f64).transpose();
    let mut counts = vec![DMatrix::zeros(ns, na); h];
    let mut next_counts = vec![DMatrix::<f64>::zeros(ns * na, ns); h];
    let mut initial_counts: DVector<f64> = DVector::zeros(ns);
    let mut estimate = TransitionModel {
        initial: DVector::from_element(ns, 1.0 / ns as f64),
        steps: (0..h)
            .map(|_| DMatrix::from_fn(ns * na, ns, |_, c| {
                let _ = c;
                1.0 / ns as f64
            }))
            .collect(),
    };
    if episode_budget == 0 {
        return EstimatedModel {
            model: estimate,
            counts,
            eps_target,
            delta,
            episodes: 0,
            warning: Some("zero episode budget: returning the uniform model".to_string()),
        };
    }
    let log_term = (2.0 * (ns * na * h) as f64 * episode_budget as f64 / delta.max(1e-12))
        .ln()
        .max(1.0);
    for _ in 0..episode_budget {
        // Bonus reward b_h(s,a)/H from current counts.
        let bonus_tables: Vec<DMatrix<f64>> = (0..h)
            .map(|step| {
                DMatrix::from_fn(ns, na, |s, a| {
                    let n = counts[step][(s, a)].max(1.0);
                    let b = (cfg.bonus_scale * (log_term / n).sqrt()).min(h as f64);
                    b / h as f64
                })
            })
            .collect();
        let (policy, _) = optimal_policy(mdp, &estimate, &Reward::Tables(bonus_tables))
            .expect("bonus planning on a validated model");
        // One rollout on the true environment; the trailing transition out
        // of the last step is observed too, so every table gets data.
        let mut s = mdp.transitions.sample_initial(rng);
        initial_counts[s] += 1.0;
        for step in 0..h {
            let a = policy.sample_action(step, s, rng);
            counts[step][(s, a)] += 1.0;
            let next = mdp.transitions.sample_next(step, s, a, na, rng);
            next_counts[step][(s * na + a, next)] += 1.0;
            s = next;
        }
        // Refresh the empirical model.
        let total_init = initial_counts.sum();
        estimate.initial = &initial_counts / total_init;
        for step in 0..h {
            for s in 0..ns {
                for a in 0..na {
                    let row_total: f64 = next_counts[step].row(s * na + a).sum();
                    if row_total > 0.0 {
                        let scaled = next_counts[step].row(s * na + a) / row_total;
                        estimate.steps[step].set_row(s * na + a, &scaled);
                    } else {
                        estimate.steps[step].set_row(s * na + a, &uniform_row);
                    }
                }
            }
        }
    }
    EstimatedModel {
        model: estimate,
        counts,
        eps_target,
        delta,
        episodes: episode_budget,
        warning: None,
    }
}

/// Expected total-variation model error under `(policy, true model)`:
/// `sum_{s,a} d_h(s,a) ||P_hat_h(.|s,a) - P*_h(.|s,a)||_1` per step, plus the
/// initial-distribution error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelErrorAudit {
    pub initial_tv: f64,
    pub expected_tv: Vec<f64>,
}

impl ModelErrorAudit {
    pub fn worst(&self) -> f64 {
        self.expected_tv
            .iter()
            .copied()
            .fold(self.initial_tv, f64::max)
    }
}

pub fn model_error_audit(
    mdp: &TabularMdp,
    estimate: &TransitionModel,
    policy: &MarkovPolicy,
) -> Result<ModelErrorAudit> {
    let occ = occupancy(mdp, &mdp.transitions, policy)?;
    let initial_tv = (&estimate.initial - &mdp.transitions.initial).abs().sum();
    let mut expected_tv = Vec::with_capacity(mdp.horizon);
    for h in 0..mdp.horizon {
        // The last step's rows never influence the trajectory distribution,
        // but the oracle contract covers all h; audit them all.
        let mut acc = 0.0;
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let w = occ[h][(s, a)];
                if w > 0.0 {
                    let row = s * mdp.n_actions + a;
                    let tv = (estimate.steps[h].row(row) - mdp.transitions.steps[h].row(row))
                        .abs()
                        .sum();
                    acc += w * tv;
                }
            }
        }
        expected_tv.push(acc);
    }
    Ok(ModelErrorAudit { initial_tv, expected_tv })
}

/// Largest audited error over a policy panel (initial TV included).
pub fn audited_eps(
    mdp: &TabularMdp,
    estimate: &TransitionModel,
    panel: &[MarkovPolicy],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for policy in panel {
        worst = worst.max(model_error_audit(mdp, estimate, policy)?.worst());
    }
    Ok(worst)
}

/// Per-step visitation error `||d_h - d_hat_h||_1` under one policy, checked
/// against the propagation bound `h * eps_row`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VisitationAudit {
    pub per_step_tv: Vec<f64>,
    pub eps_row: f64,
    pub pass: bool,
}

pub fn visitation_error_audit(
    mdp: &TabularMdp,
    estimate: &TransitionModel,
    policy: &MarkovPolicy,
    eps_row: f64,
) -> Result<VisitationAudit> {
    let d_true = occupancy(mdp, &mdp.transitions, policy)?;
    let d_est = occupancy(mdp, estimate, policy)?;
    let mut per_step_tv = Vec::with_capacity(mdp.horizon);
    let mut pass = true;
    for h in 0..mdp.horizon {
        let tv = (&d_true[h] - &d_est[h]).abs().sum();
        if tv > (h + 1) as f64 * eps_row + 1e-9 {
            pass = false;
        }
        per_step_tv.push(tv);
    }
    Ok(VisitationAudit { per_step_tv, eps_row, pass })
}

/// Feature-expectation gap `|<phi(pi) - phi_hat(pi), v>|` against the bound
/// `B R H^2 eps_row`, for block-bounded directions `||v_h|| <= 2B`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureGapAudit {
    pub gap: f64,
    pub bound: f64,
    pub pass: bool,
}

pub fn feature_gap_audit(
    mdp: &TabularMdp,
    estimate: &TransitionModel,
    policy: &MarkovPolicy,
    direction: &DVector<f64>,
    eps_row: f64,
) -> Result<FeatureGapAudit> {
    let phi_true = feature_expectation(mdp, &mdp.transitions, policy)?;
    let phi_est = feature_expectation(mdp, estimate, policy)?;
    let gap = (phi_true - phi_est).dot(direction).abs();
    let bound =
        mdp.bound_b * mdp.bound_r * (mdp.horizon * mdp.horizon) as f64 * eps_row + 1e-9;
    Ok(FeatureGapAudit { gap, bound, pass: gap <= bound })
}

/// Perturb every transition row (and the initial distribution) of `mdp` to
/// lie at l1 distance exactly `eps_row`, moving mass from the largest entry
/// to another. Panics if some row's largest entry cannot give up `eps_row/2`.
pub fn perturbed_model(mdp: &TabularMdp, eps_row: f64) -> TransitionModel {
    fn shift(v: &mut [f64], eps: f64) {
        let (mut hi, mut lo) = (0, 0);
        for (i, &x) in v.iter().enumerate() {
            if x > v[hi] {
                hi = i;
            }
            if x < v[lo] {
                lo = i;
            }
        }
        assert_ne!(hi, lo, "degenerate row");
        assert!(v[hi] >= eps / 2.0, "largest entry too small to shift");
        v[hi] -= eps / 2.0;
        v[lo] += eps / 2.0;
    }
    let mut model = mdp.transitions.clone();
    {
        let mut init: Vec<f64> = model.initial.iter().copied().collect();
        shift(&mut init, eps_row);
        model.initial = DVector::from_vec(init);
    }
    for table in &mut model.steps {
        for r in 0..table.nrows() {
            let mut row: Vec<f64> = table.row(r).iter().copied().collect();
            shift(&mut row, eps_row);
            for (c, value) in row.iter().enumerate() {
                table[(r, c)] = *value;
            }
        }
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{chain_mdp, random_policy, random_tabular, TabularSpec};
    use crate::seeded_rng;
    use rand::Rng;

    #[test]
    fn deterministic_single_action_mdp_is_learned_exactly() {
        // One action, deterministic cycle: every visited row's empirical
        // estimate matches the truth exactly after a few episodes.
        let ns = 3;
        let mut table = DMatrix::zeros(ns, ns);
        table[(0, 1)] = 1.0;
        table[(1, 2)] = 1.0;
        table[(2, 0)] = 1.0;
        let mdp = TabularMdp::new(
            4,
            ns,
            1,
            TransitionModel {
                initial: DVector::from_vec(vec![1.0, 0.0, 0.0]),
                steps: vec![table; 4],
            },
            TabularMdp::one_hot_features(4, ns, 1),
            vec![DVector::zeros(ns); 4],
            1.0,
            1.0,
            0.0,
        )
        .unwrap();
        let mut rng = seeded_rng(0, 0);
        let est = explore_and_estimate(&mdp, 0.1, 0.05, 50, &ExploreConfig::default(), &mut rng);
        let policy = MarkovPolicy::uniform(4, ns, 1);
        let audit = model_error_audit(&mdp, &est.model, &policy).unwrap();
        assert!(audit.initial_tv < 1e-12);
        for tv in &audit.expected_tv {
            assert!(*tv < 1e-12, "visited-path TV should vanish: {tv}");
        }
    }

    #[test]
    fn zero_budget_returns_uniform_model_with_warning() {
        let mdp = chain_mdp(2, 0.5);
        let mut rng = seeded_rng(1, 0);
        let est = explore_and_estimate(&mdp, 0.1, 0.05, 0, &ExploreConfig::default(), &mut rng);
        assert!(est.warning.is_some());
        assert!((est.model.initial[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn chain_budget_1000_reaches_moderate_accuracy() {
        let mdp = chain_mdp(2, 0.5);
        let mut rng = seeded_rng(2, 0);
        let est =
            explore_and_estimate(&mdp, 0.1, 0.05, 1000, &ExploreConfig::default(), &mut rng);
        for trial in 0..20 {
            let policy = random_policy(&mdp, &mut seeded_rng(3, trial));
            let audit = model_error_audit(&mdp, &est.model, &policy).unwrap();
            assert!(audit.worst() <= 0.1, "trial {trial}: {}", audit.worst());
        }
    }

    #[test]
    fn budget_monotonicity_in_median() {
        let spec = TabularSpec { n_states: 3, n_actions: 2, horizon: 3, ..Default::default() };
        let median_err = |budget: usize| -> f64 {
            let mut errs: Vec<f64> = (0..10)
                .map(|seed| {
                    let mdp = random_tabular(&spec, &mut seeded_rng(40, seed)).unwrap();
                    let mut rng = seeded_rng(seed, 100 + budget as u64);
                    let est = explore_and_estimate(
                        &mdp,
                        0.1,
                        0.05,
                        budget,
                        &ExploreConfig::default(),
                        &mut rng,
                    );
                    let panel: Vec<MarkovPolicy> =
                        (0..5).map(|t| random_policy(&mdp, &mut seeded_rng(41, t))).collect();
                    audited_eps(&mdp, &est.model, &panel).unwrap()
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            0.5 * (errs[4] + errs[5])
        };
        assert!(median_err(10_000) <= median_err(100));
    }

    #[test]
    fn audit_zero_cases() {
        let mdp = chain_mdp(3, 0.5);
        let policy = MarkovPolicy::deterministic(&vec![vec![1; 2]; 3], 2);
        let exact = EstimatedModel::exact(&mdp);
        let audit = model_error_audit(&mdp, &exact.model, &policy).unwrap();
        assert_eq!(audit.worst(), 0.0);

        // Differences confined to unreachable rows never show up.
        let mut modified = mdp.transitions.clone();
        // Under "always a=1", the pair (s=0, a=0) has occupancy zero.
        modified.steps[0][(0, 0)] = 0.0;
        modified.steps[0][(0, 1)] = 1.0;
        let audit = model_error_audit(&mdp, &modified, &policy).unwrap();
        assert_eq!(audit.worst(), 0.0);
    }

    #[test]
    fn hand_built_row_error_weights_by_occupancy() {
        // Uniform policy on the chain: occupancy of (s=0, a=0) at step 1 is
        // 0.5; a row with TV 0.2 there contributes 0.1.
        let mdp = chain_mdp(2, 0.5);
        let policy = MarkovPolicy::uniform(2, 2, 2);
        let mut modified = mdp.transitions.clone();
        modified.steps[0][(0, 0)] = 0.9;
        modified.steps[0][(0, 1)] = 0.1;
        let audit = model_error_audit(&mdp, &modified, &policy).unwrap();
        assert!((audit.expected_tv[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn visitation_bound_holds_deterministically() {
        let eps = 0.05;
        let spec = TabularSpec { n_states: 4, n_actions: 2, horizon: 4, ..Default::default() };
        let mut rng = seeded_rng(4, 0);
        let mdp = random_tabular(&spec, &mut rng).unwrap();
        let perturbed = perturbed_model(&mdp, eps);
        for trial in 0..20 {
            let policy = random_policy(&mdp, &mut seeded_rng(5, trial));
            let audit = visitation_error_audit(&mdp, &perturbed, &policy, eps).unwrap();
            assert!(audit.pass, "trial {trial}: {:?}", audit.per_step_tv);
        }
        // eps = 0 with the exact model: all zeros.
        let audit =
            visitation_error_audit(&mdp, &mdp.transitions, &random_policy(&mdp, &mut rng), 0.0)
                .unwrap();
        assert!(audit.pass);
        assert!(audit.per_step_tv.iter().all(|tv| *tv == 0.0));
    }

    #[test]
    fn feature_gap_bound_holds() {
        let spec = TabularSpec { n_states: 4, n_actions: 2, horizon: 4, ..Default::default() };
        let mut rng = seeded_rng(6, 0);
        let mdp = random_tabular(&spec, &mut rng).unwrap();
        let eps = 0.05;
        let perturbed = perturbed_model(&mdp, eps);
        let policy = random_policy(&mdp, &mut rng);
        // v = 0 and exact model both give zero gap.
        let zero = DVector::zeros(mdp.stacked_dim());
        assert_eq!(
            feature_gap_audit(&mdp, &perturbed, &policy, &zero, eps).unwrap().gap,
            0.0
        );
        assert_eq!(
            feature_gap_audit(
                &mdp,
                &mdp.transitions,
                &policy,
                &DVector::from_element(mdp.stacked_dim(), mdp.bound_b),
                eps
            )
            .unwrap()
            .gap,
            0.0
        );
        // Random block-bounded directions.
        let d = mdp.feature_dim();
        for trial in 0..50 {
            let mut v = DVector::zeros(mdp.stacked_dim());
            let mut vrng = seeded_rng(7, trial);
            for h in 0..mdp.horizon {
                let mut block = DVector::from_iterator(d, (0..d).map(|_| {
                    vrng.gen_range(-1.0..1.0)
                }));
                let norm = block.norm();
                if norm > 0.0 {
                    block *= 2.0 * mdp.bound_b / norm;
                }
                v.rows_mut(h * d, d).copy_from(&block);
            }
            let audit = feature_gap_audit(&mdp, &perturbed, &policy, &v, eps).unwrap();
            assert!(audit.pass, "trial {trial}: gap {} bound {}", audit.gap, audit.bound);
        }
    }

    #[test]
    fn empirical_rows_concentrate_at_root_n_rate() {
        // Forced-visitation mode: sample each row directly and watch the
        // median TV error shrink like 1/sqrt(n).
        let spec = TabularSpec { n_states: 5, n_actions: 2, horizon: 2, ..Default::default() };
        let mdp = random_tabular(&spec, &mut seeded_rng(8, 0)).unwrap();
        let median_tv = |n: usize| -> f64 {
            let mut errs = Vec::new();
            let mut rng = seeded_rng(9, n as u64);
            for row in 0..mdp.n_states * mdp.n_actions {
                let mut hist = vec![0.0; mdp.n_states];
                for _ in 0..n {
                    let s = crate::mdp::sample_index(
                        mdp.transitions.steps[0].row(row).iter().copied(),
                        &mut rng,
                    );
                    hist[s] += 1.0;
                }
                let tv: f64 = hist
                    .iter()
                    .enumerate()
                    .map(|(s, c)| (c / n as f64 - mdp.transitions.steps[0][(row, s)]).abs())
                    .sum();
                errs.push(tv);
            }
            errs.sort_by(f64::total_cmp);
            errs[errs.len() / 2]
        };
        let coarse = median_tv(100);
        let fine = median_tv(10_000);
        let ratio = coarse / fine.max(1e-12);
        // sqrt(10000/100) = 10, allow a wide band.
        assert!((3.0..=33.0).contains(&ratio), "ratio {ratio}");
    }
}
