//! End-to-end drivers: reward-agnostic design, preference collection, MLE,
//! and planning under the learned reward, for trajectory comparisons (known
//! or estimated transitions), the linear-MDP variant, per-step action
//! comparisons, and a uniform-pair baseline.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{
    elliptical_potential_audit, select_pair_exhaustive, select_pair_markov, DesignState,
    EllipticalAudit,
};
use crate::error::{RegimeError, Result};
use crate::linear::{
    regime_exploration, soft_vi_log_linear, confidence_beta, LinearMdp, LsviConfig, PlanningContext,
};
use crate::mdp::{
    enumerate_deterministic_policies, feature_expectation, occupancy, optimal_advantage,
    optimal_policy, policy_value, stack_blocks, MarkovPolicy, Reward, TabularMdp,
    TransitionModel,
};
use crate::mle::{
    fit_theta, fit_xi, ComparisonDataset, FitDiagnostics, SolverConfig, ThetaEstimate,
};
use crate::oracle::{action_preference, kappa, trajectory_preference, ActionQuery, TrajectoryQuery};
use crate::reward_free::{audited_eps, explore_and_estimate, EstimatedModel, ExploreConfig};
use crate::seeded_rng;
use crate::instances::{random_deterministic_policy, random_policy};

// Randomness streams within one run.
const STREAM_MODEL: u64 = 0;
const STREAM_DESIGN: u64 = 1;
const STREAM_ROLLOUT: u64 = 2;
const STREAM_LABELS: u64 = 3;
const STREAM_AUX: u64 = 4;

/// How the policy class is realized for the design argmax and final planning.
#[derive(Debug, Clone)]
pub enum PiMode {
    /// All Markov policies via alternating linearization with restarts.
    Markov { restarts: usize, tol: f64 },
    /// Exhaustive enumeration of deterministic policies (tiny instances;
    /// serves as the selection oracle in tests).
    DeterministicEnumeration { cap: usize },
    /// Explicit finite candidate list.
    Candidates(Vec<MarkovPolicy>),
}

impl Default for PiMode {
    fn default() -> Self {
        PiMode::Markov { restarts: 4, tol: 1e-9 }
    }
}

#[derive(Debug, Clone)]
pub enum TransitionMode {
    /// Plan and design against the true transitions.
    Exact,
    /// Learn a model first with count-bonus reward-free exploration.
    RewardFree { episode_budget: usize, eps_target: f64 },
}

#[derive(Debug, Clone)]
pub struct TabularRunConfig {
    pub n_rounds: usize,
    pub lambda: f64,
    pub delta: f64,
    pub pi_mode: PiMode,
    pub transition_mode: TransitionMode,
    /// Plan the final policy under the true transitions instead of the
    /// learned model.
    pub plan_with_true_transitions: bool,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl TabularRunConfig {
    pub fn new(n_rounds: usize, lambda: f64, seed: u64) -> Self {
        Self {
            n_rounds,
            lambda,
            delta: 0.05,
            pi_mode: PiMode::default(),
            transition_mode: TransitionMode::Exact,
            plan_with_true_transitions: false,
            solver: SolverConfig::default(),
            seed,
        }
    }
}

/// Everything a single run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeReport {
    pub algorithm: String,
    pub seed: u64,
    pub policy: MarkovPolicy,
    pub theta: Option<Vec<Vec<f64>>>,
    pub xi: Option<Vec<Vec<f64>>>,
    pub optimal_value: f64,
    pub achieved_value: f64,
    /// `V^{r*,*} - V^{r*,pi_hat}` under the true instance.
    pub gap: f64,
    pub n_trajectories: usize,
    pub n_human_labels: usize,
    pub round_objectives: Vec<f64>,
    pub round_log_dets: Vec<f64>,
    /// Worst audited model error over the test-policy panel (0 when exact).
    pub audited_eps: f64,
    pub elliptical: Option<EllipticalAudit>,
    pub kappa_reward: f64,
    pub kappa_advantage: Option<f64>,
    pub theta_error: Option<f64>,
    pub theta_cov_error: Option<f64>,
    pub mle_diagnostics: Option<FitDiagnostics>,
    pub warnings: Vec<String>,
    pub config_echo: String,
}

impl RegimeReport {
    fn check_gap(&self) {
        assert!(self.gap >= -1e-9, "negative suboptimality gap {}", self.gap);
    }
}

struct SelectedPair {
    left: MarkovPolicy,
    right: MarkovPolicy,
    diff: DVector<f64>,
    objective: f64,
    log_det: f64,
}

fn design_phase_markov(
    mdp: &TabularMdp,
    model: &TransitionModel,
    state: &mut DesignState,
    n_rounds: usize,
    restarts: usize,
    tol: f64,
    rng: &mut impl Rng,
) -> Result<Vec<SelectedPair>> {
    let mut pairs = Vec::with_capacity(n_rounds);
    for _ in 0..n_rounds {
        let mut planner = |u: &DVector<f64>| {
            let reward = Reward::from_stacked(u, mdp.horizon);
            let (pi, _) = optimal_policy(mdp, model, &reward)?;
            let phi = feature_expectation(mdp, model, &pi)?;
            Ok((pi, phi))
        };
        let sel = select_pair_markov(state, &mut planner, restarts, tol, rng)?;
        let diff = &sel.left_features - &sel.right_features;
        state.add_pair(&diff);
        pairs.push(SelectedPair {
            left: sel.left,
            right: sel.right,
            diff,
            objective: sel.objective,
            log_det: state.log_det(),
        });
    }
    Ok(pairs)
}

fn design_phase_candidates(
    candidates: &[MarkovPolicy],
    phis: &[DVector<f64>],
    state: &mut DesignState,
    n_rounds: usize,
) -> Result<Vec<SelectedPair>> {
    let mut pairs = Vec::with_capacity(n_rounds);
    for _ in 0..n_rounds {
        let ((i, j), objective) = select_pair_exhaustive(state, phis)?;
        let diff = &phis[i] - &phis[j];
        state.add_pair(&diff);
        pairs.push(SelectedPair {
            left: candidates[i].clone(),
            right: candidates[j].clone(),
            diff,
            objective,
            log_det: state.log_det(),
        });
    }
    Ok(pairs)
}

fn test_policy_panel(mdp: &TabularMdp, rng: &mut impl Rng) -> Vec<MarkovPolicy> {
    let mut panel: Vec<MarkovPolicy> = (0..20).map(|_| random_policy(mdp, rng)).collect();
    panel.extend((0..5).map(|_| random_deterministic_policy(mdp, rng)));
    panel.push(MarkovPolicy::uniform(mdp.horizon, mdp.n_states, mdp.n_actions));
    panel
}

/// Trajectory-comparison pipeline: model estimation (optional), N design
/// rounds against the plug-in feature expectations, N trajectory-pair
/// rollouts on the true environment, N preference labels, constrained MLE,
/// and final planning under the learned reward.
pub fn run_regime_tabular(mdp: &TabularMdp, cfg: &TabularRunConfig) -> Result<RegimeReport> {
    run_tabular_pipeline(mdp, cfg, false)
}

/// Identical pipeline with the design argmax replaced by uniformly random
/// policy pairs; the ablation baseline.
pub fn run_uniform_baseline(mdp: &TabularMdp, cfg: &TabularRunConfig) -> Result<RegimeReport> {
    run_tabular_pipeline(mdp, cfg, true)
}

fn run_tabular_pipeline(
    mdp: &TabularMdp,
    cfg: &TabularRunConfig,
    uniform_pairs: bool,
) -> Result<RegimeReport> {
    let mut warnings = Vec::new();
    let min_lambda = 4.0 * mdp.horizon as f64 * mdp.bound_r * mdp.bound_r;
    if cfg.lambda < min_lambda {
        warnings.push(format!(
            "lambda {} below the 4*H*R^2 = {min_lambda} premise",
            cfg.lambda
        ));
    }

    // Phase 1: transitions.
    let estimated: EstimatedModel;
    let (model, eps_audit): (&TransitionModel, f64) = match &cfg.transition_mode {
        TransitionMode::Exact => (&mdp.transitions, 0.0),
        TransitionMode::RewardFree { episode_budget, eps_target } => {
            let mut model_rng = seeded_rng(cfg.seed, STREAM_MODEL);
            estimated = explore_and_estimate(
                mdp,
                *eps_target,
                cfg.delta / 4.0,
                *episode_budget,
                &ExploreConfig::default(),
                &mut model_rng,
            );
            if let Some(w) = &estimated.warning {
                warnings.push(w.clone());
            }
            let panel = test_policy_panel(mdp, &mut model_rng);
            let eps = audited_eps(mdp, &estimated.model, &panel)?;
            (&estimated.model, eps)
        }
    };

    // Phase 2: reward-agnostic design over plug-in feature expectations.
    let mut design_rng = seeded_rng(cfg.seed, STREAM_DESIGN);
    let mut state = DesignState::new(mdp.stacked_dim(), cfg.lambda)?;
    let candidate_phis: Option<(Vec<MarkovPolicy>, Vec<DVector<f64>>)> = match &cfg.pi_mode {
        PiMode::Markov { .. } => None,
        PiMode::DeterministicEnumeration { cap } => {
            let all = enumerate_deterministic_policies(mdp, *cap)?;
            let phis = all
                .iter()
                .map(|p| feature_expectation(mdp, model, p))
                .collect::<Result<Vec<_>>>()?;
            Some((all, phis))
        }
        PiMode::Candidates(list) => {
            if list.len() < 2 {
                return Err(RegimeError::config("candidate list needs >= 2 policies"));
            }
            let phis = list
                .iter()
                .map(|p| feature_expectation(mdp, model, p))
                .collect::<Result<Vec<_>>>()?;
            Some((list.clone(), phis))
        }
    };
    let pairs: Vec<SelectedPair> = if uniform_pairs {
        let mut out = Vec::with_capacity(cfg.n_rounds);
        for _ in 0..cfg.n_rounds {
            let left = random_deterministic_policy(mdp, &mut design_rng);
            let right = random_deterministic_policy(mdp, &mut design_rng);
            let diff =
                feature_expectation(mdp, model, &left)? - feature_expectation(mdp, model, &right)?;
            let objective = state.mahalanobis(&diff);
            state.add_pair(&diff);
            let log_det = state.log_det();
            out.push(SelectedPair { left, right, diff, objective, log_det });
        }
        out
    } else {
        match (&cfg.pi_mode, &candidate_phis) {
            (PiMode::Markov { restarts, tol }, None) => design_phase_markov(
                mdp,
                model,
                &mut state,
                cfg.n_rounds,
                *restarts,
                *tol,
                &mut design_rng,
            )?,
            (_, Some((cands, phis))) => {
                design_phase_candidates(cands, phis, &mut state, cfg.n_rounds)?
            }
            _ => unreachable!(),
        }
    };
    let round_objectives: Vec<f64> = pairs.iter().map(|p| p.objective).collect();
    let round_log_dets: Vec<f64> = pairs.iter().map(|p| p.log_det).collect();

    // Phase 3: trajectory pairs from the true environment.
    let mut rollout_rng = seeded_rng(cfg.seed, STREAM_ROLLOUT);
    let mut queries: Vec<TrajectoryQuery> = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let tau0 = mdp.sample_trajectory(&pair.left, &mut rollout_rng);
        let tau1 = mdp.sample_trajectory(&pair.right, &mut rollout_rng);
        queries.push(TrajectoryQuery { left: tau0, right: tau1 });
    }

    // Phase 4: preference labels, only after every pair exists.
    assert_eq!(queries.len(), cfg.n_rounds, "label phase started early");
    let mut label_rng = seeded_rng(cfg.seed, STREAM_LABELS);
    let theta_star = mdp.stacked_theta();
    let labels: Vec<u8> = queries
        .iter()
        .map(|q| trajectory_preference(&theta_star, q, &mut label_rng))
        .collect::<Result<Vec<_>>>()?;
    let n_human_labels = labels.len();

    // Phase 5: constrained MLE.
    let (theta_hat, mle_diagnostics) = if queries.is_empty() {
        (
            vec![DVector::zeros(mdp.feature_dim()); mdp.horizon],
            None,
        )
    } else {
        let diffs: Vec<DVector<f64>> = queries
            .iter()
            .map(|q| &q.right.stacked - &q.left.stacked)
            .collect();
        let data = ComparisonDataset::new(&diffs, &labels)?;
        let audit: Vec<DVector<f64>> = queries
            .iter()
            .flat_map(|q| [q.left.stacked.clone(), q.right.stacked.clone()])
            .collect();
        let est: ThetaEstimate =
            fit_theta(&data, mdp.horizon, mdp.bound_b, mdp.r_max, &audit, &cfg.solver)?;
        if let Some(v) = est.r_max_violation {
            if v > 1e-6 {
                warnings.push(format!("learned reward exceeds r_max on the data by {v}"));
            }
        }
        (est.blocks.clone(), Some(est.diagnostics))
    };

    // Phase 6: plan under the learned reward.
    let plan_model = if cfg.plan_with_true_transitions { &mdp.transitions } else { model };
    let learned = Reward::Linear(theta_hat.clone());
    let policy = match &candidate_phis {
        None => optimal_policy(mdp, plan_model, &learned)?.0,
        Some((cands, phis)) => {
            let theta_stacked = stack_blocks(&theta_hat);
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (i, phi) in phis.iter().enumerate() {
                let score = phi.dot(&theta_stacked);
                if score > best_score {
                    best_score = score;
                    best = i;
                }
            }
            cands[best].clone()
        }
    };

    // Evaluation against the true instance.
    let true_reward = mdp.true_reward();
    let optimal_value = match &candidate_phis {
        None => optimal_policy(mdp, &mdp.transitions, &true_reward)?.1,
        Some((cands, _)) => cands
            .iter()
            .map(|p| policy_value(mdp, &mdp.transitions, &true_reward, p))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max),
    };
    let achieved_value = policy_value(mdp, &mdp.transitions, &true_reward, &policy)?;

    let theta_hat_stacked = stack_blocks(&theta_hat);
    let theta_error = (&theta_hat_stacked - &theta_star).norm();
    let delta_theta = &theta_hat_stacked - &theta_star;
    let theta_cov_error = delta_theta.dot(&(state.sigma() * &delta_theta)).max(0.0).sqrt();
    let history: Vec<DVector<f64>> = pairs.iter().map(|p| p.diff.clone()).collect();
    // The elliptical audit needs lambda >= max ||diff||^2; skip it (with a
    // warning) when the run was configured below that premise.
    let elliptical = match elliptical_potential_audit(cfg.lambda, &history) {
        Ok(audit) => Some(audit),
        Err(e) => {
            warnings.push(format!("elliptical audit skipped: {e}"));
            None
        }
    };

    let n_trajectories = 2 * cfg.n_rounds
        + match &cfg.transition_mode {
            TransitionMode::Exact => 0,
            TransitionMode::RewardFree { episode_budget, .. } => *episode_budget,
        };

    let report = RegimeReport {
        algorithm: if uniform_pairs { "uniform-baseline" } else { "regime-tabular" }.to_string(),
        seed: cfg.seed,
        policy,
        theta: Some(theta_hat.iter().map(|b| b.as_slice().to_vec()).collect()),
        xi: None,
        optimal_value,
        achieved_value,
        gap: optimal_value - achieved_value,
        n_trajectories,
        n_human_labels,
        round_objectives,
        round_log_dets,
        audited_eps: eps_audit,
        elliptical,
        kappa_reward: kappa(mdp.r_max),
        kappa_advantage: None,
        theta_error: Some(theta_error),
        theta_cov_error: Some(theta_cov_error),
        mle_diagnostics,
        warnings,
        config_echo: format!(
            "n={} lambda={} seed={} mode={}",
            cfg.n_rounds,
            cfg.lambda,
            cfg.seed,
            match cfg.transition_mode {
                TransitionMode::Exact => "exact".to_string(),
                TransitionMode::RewardFree { episode_budget, .. } =>
                    format!("reward-free:{episode_budget}"),
            }
        ),
    };
    report.check_gap();
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct LinRunConfig {
    pub n_rounds: usize,
    pub k_episodes: usize,
    pub lambda: f64,
    pub lambda_ex: f64,
    pub lambda_pl: f64,
    /// Scale on the confidence-width exploration/planning bonuses.
    pub beta_c_ex: f64,
    pub beta_c_pl: f64,
    pub delta: f64,
    pub n_candidates: usize,
    pub candidates: Option<Vec<MarkovPolicy>>,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl LinRunConfig {
    pub fn new(n_rounds: usize, k_episodes: usize, lambda: f64, seed: u64) -> Self {
        Self {
            n_rounds,
            k_episodes,
            lambda,
            lambda_ex: 1.0,
            lambda_pl: 1.0,
            beta_c_ex: 0.02,
            beta_c_pl: 0.02,
            delta: 0.05,
            n_candidates: 12,
            candidates: None,
            solver: SolverConfig::default(),
            seed,
        }
    }
}

/// Linear-MDP pipeline: bonus-driven exploration, least-squares feature
/// estimation, design over a candidate panel, preference labels, MLE, and a
/// data-driven argmax of the estimated value under the learned reward.
pub fn run_regime_lin(lin: &LinearMdp, cfg: &LinRunConfig) -> Result<RegimeReport> {
    if cfg.k_episodes == 0 {
        return Err(RegimeError::precondition("k_episodes must be positive"));
    }
    let mdp = &lin.realization;
    let mut warnings = Vec::new();

    // Phase 1: exploration.
    let mut model_rng = seeded_rng(cfg.seed, STREAM_MODEL);
    let beta_ex = confidence_beta(cfg.beta_c_ex, lin.dim, cfg.k_episodes, mdp.horizon, mdp.bound_r, cfg.delta);
    let data = regime_exploration(
        lin,
        cfg.k_episodes,
        &LsviConfig::new(beta_ex, cfg.lambda_ex),
        &mut model_rng,
    );
    let beta_pl = confidence_beta(cfg.beta_c_pl, lin.dim, cfg.k_episodes, mdp.horizon, mdp.bound_r, cfg.delta);
    let ctx = PlanningContext::new(lin, &data, LsviConfig::new(beta_pl, cfg.lambda_pl))?;

    // Candidate panel.
    let mut aux_rng = seeded_rng(cfg.seed, STREAM_AUX);
    let mut candidates: Vec<MarkovPolicy> = match &cfg.candidates {
        Some(list) => list.clone(),
        None => {
            let mut out = vec![MarkovPolicy::uniform(mdp.horizon, mdp.n_states, mdp.n_actions)];
            for _ in 0..cfg.n_candidates / 2 {
                out.push(random_deterministic_policy(mdp, &mut aux_rng));
            }
            while out.len() <= cfg.n_candidates {
                let zeta: Vec<DVector<f64>> = (0..mdp.horizon)
                    .map(|_| {
                        let mut v = DVector::from_iterator(lin.dim, (0..lin.dim).map(|_| {
                            aux_rng.gen_range(-1.0..1.0)
                        }));
                        let scale = aux_rng.gen_range(0.5..6.0);
                        let n = v.norm();
                        if n > 0.0 {
                            v *= scale / n;
                        }
                        v
                    })
                    .collect();
                out.push(MarkovPolicy::log_linear(
                    &mdp.features,
                    mdp.n_states,
                    mdp.n_actions,
                    zeta,
                    6.0,
                )?);
            }
            out
        }
    };
    if candidates.len() < 2 {
        return Err(RegimeError::config("need at least two candidate policies"));
    }

    // Phase 2: estimated feature expectations + design rounds.
    let phis: Vec<DVector<f64>> = candidates
        .iter()
        .map(|p| ctx.feature_expectation(p))
        .collect::<Result<Vec<_>>>()?;
    // Diagnostic: worst plug-in feature error over the panel.
    let mut phi_gap: f64 = 0.0;
    for (p, est) in candidates.iter().zip(phis.iter()) {
        let exact = feature_expectation(mdp, &mdp.transitions, p)?;
        phi_gap = phi_gap.max((est - exact).abs().max());
    }
    let mut state = DesignState::new(mdp.stacked_dim(), cfg.lambda)?;
    let pairs = design_phase_candidates(&candidates, &phis, &mut state, cfg.n_rounds)?;
    let round_objectives: Vec<f64> = pairs.iter().map(|p| p.objective).collect();
    let round_log_dets: Vec<f64> = pairs.iter().map(|p| p.log_det).collect();

    // Phase 3 + 4: rollouts, then labels.
    let mut rollout_rng = seeded_rng(cfg.seed, STREAM_ROLLOUT);
    let queries: Vec<TrajectoryQuery> = pairs
        .iter()
        .map(|pair| {
            let tau0 = mdp.sample_trajectory(&pair.left, &mut rollout_rng);
            let tau1 = mdp.sample_trajectory(&pair.right, &mut rollout_rng);
            TrajectoryQuery { left: tau0, right: tau1 }
        })
        .collect();
    assert_eq!(queries.len(), cfg.n_rounds, "label phase started early");
    let mut label_rng = seeded_rng(cfg.seed, STREAM_LABELS);
    let theta_star = mdp.stacked_theta();
    let labels: Vec<u8> = queries
        .iter()
        .map(|q| trajectory_preference(&theta_star, q, &mut label_rng))
        .collect::<Result<Vec<_>>>()?;

    // Phase 5: MLE.
    let (theta_hat, mle_diagnostics) = if queries.is_empty() {
        (vec![DVector::zeros(mdp.feature_dim()); mdp.horizon], None)
    } else {
        let diffs: Vec<DVector<f64>> = queries
            .iter()
            .map(|q| &q.right.stacked - &q.left.stacked)
            .collect();
        let data = ComparisonDataset::new(&diffs, &labels)?;
        let est = fit_theta(&data, mdp.horizon, mdp.bound_b, mdp.r_max, &[], &cfg.solver)?;
        (est.blocks.clone(), Some(est.diagnostics))
    };
    let learned = Reward::Linear(theta_hat.clone());

    // Phase 6: enrich the candidate set under the learned reward, then take
    // the data-driven argmax of the estimated value.
    for &alpha in &[0.05, 0.2, 1.0] {
        candidates.push(soft_vi_log_linear(lin, &learned, alpha)?);
    }
    candidates.push(optimal_policy(mdp, &mdp.transitions, &learned)?.0);
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        let value = ctx.evaluate(cand, &learned)?.value;
        match best {
            Some((_, v)) if v >= value => {}
            _ => best = Some((i, value)),
        }
    }
    let policy = candidates[best.expect("nonempty candidates").0].clone();

    let true_reward = mdp.true_reward();
    let optimal_value = optimal_policy(mdp, &mdp.transitions, &true_reward)?.1;
    let achieved_value = policy_value(mdp, &mdp.transitions, &true_reward, &policy)?;
    if cfg.lambda < 4.0 * mdp.horizon as f64 * mdp.bound_r * mdp.bound_r {
        warnings.push("lambda below the 4*H*R^2 premise".to_string());
    }

    let theta_hat_stacked = stack_blocks(&theta_hat);
    let history: Vec<DVector<f64>> = pairs.iter().map(|p| p.diff.clone()).collect();
    let report = RegimeReport {
        algorithm: "regime-lin".to_string(),
        seed: cfg.seed,
        policy,
        theta: Some(theta_hat.iter().map(|b| b.as_slice().to_vec()).collect()),
        xi: None,
        optimal_value,
        achieved_value,
        gap: optimal_value - achieved_value,
        n_trajectories: cfg.k_episodes + 2 * cfg.n_rounds,
        n_human_labels: labels.len(),
        round_objectives,
        round_log_dets,
        audited_eps: phi_gap,
        elliptical: Some(elliptical_potential_audit(cfg.lambda, &history)?),
        kappa_reward: kappa(mdp.r_max),
        kappa_advantage: None,
        theta_error: Some((&theta_hat_stacked - &theta_star).norm()),
        theta_cov_error: None,
        mle_diagnostics,
        warnings,
        config_echo: format!(
            "n={} k={} lambda={} seed={}",
            cfg.n_rounds, cfg.k_episodes, cfg.lambda, cfg.seed
        ),
    };
    report.check_gap();
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ActionRunConfig {
    pub n_rounds: usize,
    pub lambda: f64,
    /// Ball radius for the advantage parameter fit.
    pub bound_b: f64,
    /// Declared advantage bound; defaults to the instance's actual maximum.
    pub bound_adv: Option<f64>,
    pub restarts: usize,
    pub tol: f64,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl ActionRunConfig {
    pub fn new(n_rounds: usize, lambda: f64, bound_b: f64, seed: u64) -> Self {
        Self {
            n_rounds,
            lambda,
            bound_b,
            bound_adv: None,
            restarts: 2,
            tol: 1e-9,
            solver: SolverConfig::default(),
            seed,
        }
    }
}

/// Per-step action-comparison pipeline. For each step, N design rounds over
/// the asymmetric objective `E_{s ~ pi0}[phi_h(s, pi0) - phi_h(s, pi1)]`,
/// state sampling by rolling the first policy, two actions drawn from the
/// two policies, advantage MLE over the constrained set, and a greedy output
/// policy.
pub fn run_regime_action(mdp: &TabularMdp, cfg: &ActionRunConfig) -> Result<RegimeReport> {
    let advantage = optimal_advantage(mdp)?;
    let actual_b_adv = advantage
        .iter()
        .map(|t| t.abs().max())
        .fold(0.0, f64::max);
    let bound_adv = cfg.bound_adv.unwrap_or(actual_b_adv + 1e-9);
    let mut warnings = Vec::new();
    if cfg.lambda < 4.0 * mdp.bound_r * mdp.bound_r {
        warnings.push(format!(
            "lambda {} below the 4*R^2 premise",
            cfg.lambda
        ));
    }
    let true_reward = mdp.true_reward();
    let (_, optimal_value) = optimal_policy(mdp, &mdp.transitions, &true_reward)?;

    // Degenerate action space: nothing to compare, the only policy is
    // optimal, and no labels are needed.
    if mdp.n_actions == 1 {
        let policy = MarkovPolicy::deterministic(
            &vec![vec![0; mdp.n_states]; mdp.horizon],
            1,
        );
        let achieved = policy_value(mdp, &mdp.transitions, &true_reward, &policy)?;
        let report = RegimeReport {
            algorithm: "regime-action".to_string(),
            seed: cfg.seed,
            policy,
            theta: None,
            xi: Some(vec![vec![0.0; mdp.feature_dim()]; mdp.horizon]),
            optimal_value,
            achieved_value: achieved,
            gap: optimal_value - achieved,
            n_trajectories: 0,
            n_human_labels: 0,
            round_objectives: vec![0.0; cfg.n_rounds * mdp.horizon],
            round_log_dets: Vec::new(),
            audited_eps: 0.0,
            elliptical: None,
            kappa_reward: kappa(mdp.r_max),
            kappa_advantage: Some(kappa(bound_adv)),
            theta_error: None,
            theta_cov_error: None,
            mle_diagnostics: None,
            warnings,
            config_echo: format!("n={} lambda={} seed={}", cfg.n_rounds, cfg.lambda, cfg.seed),
        };
        report.check_gap();
        return Ok(report);
    }

    let d = mdp.feature_dim();
    let mut design_rng = seeded_rng(cfg.seed, STREAM_DESIGN);
    let mut round_objectives = Vec::with_capacity(mdp.horizon * cfg.n_rounds);
    let mut round_log_dets = Vec::with_capacity(mdp.horizon * cfg.n_rounds);
    let mut selected: Vec<Vec<(MarkovPolicy, MarkovPolicy)>> = Vec::with_capacity(mdp.horizon);
    for h in 0..mdp.horizon {
        let mut state = DesignState::new(d, cfg.lambda)?;
        let mut per_round = Vec::with_capacity(cfg.n_rounds);
        for _ in 0..cfg.n_rounds {
            let sel = select_action_pair(mdp, h, &state, cfg.restarts, cfg.tol, &mut design_rng)?;
            state.add_pair(&sel.diff);
            round_objectives.push(sel.objective);
            round_log_dets.push(state.log_det());
            per_round.push((sel.left, sel.right));
        }
        selected.push(per_round);
    }

    // Data collection: roll the first policy to step h, then draw one action
    // from each policy at the reached state.
    let mut rollout_rng = seeded_rng(cfg.seed, STREAM_ROLLOUT);
    let mut queries: Vec<Vec<ActionQuery>> = Vec::with_capacity(mdp.horizon);
    for (h, per_round) in selected.iter().enumerate() {
        let mut at_step = Vec::with_capacity(cfg.n_rounds);
        for (left, right) in per_round {
            let mut s = mdp.transitions.sample_initial(&mut rollout_rng);
            for step in 0..h {
                let a = left.sample_action(step, s, &mut rollout_rng);
                s = mdp.transitions.sample_next(step, s, a, mdp.n_actions, &mut rollout_rng);
            }
            let a0 = left.sample_action(h, s, &mut rollout_rng);
            let a1 = right.sample_action(h, s, &mut rollout_rng);
            at_step.push(ActionQuery { step: h, state: s, left: a0, right: a1 });
        }
        queries.push(at_step);
    }

    // Labels only after the full collection pass.
    let total_queries: usize = queries.iter().map(Vec::len).sum();
    assert_eq!(total_queries, mdp.horizon * cfg.n_rounds, "label phase started early");
    let mut label_rng = seeded_rng(cfg.seed, STREAM_LABELS);
    let labels: Vec<Vec<u8>> = queries
        .iter()
        .map(|at_step| {
            at_step
                .iter()
                .map(|q| action_preference(&advantage, q, &mut label_rng))
                .collect()
        })
        .collect();

    // Per-step advantage MLE over the constrained set.
    let mut xi_blocks: Vec<DVector<f64>> = Vec::with_capacity(mdp.horizon);
    let mut mle_diagnostics = None;
    for h in 0..mdp.horizon {
        if queries[h].is_empty() {
            xi_blocks.push(DVector::zeros(d));
            continue;
        }
        let diffs: Vec<DVector<f64>> = queries[h]
            .iter()
            .map(|q| mdp.feature(h, q.state, q.right) - mdp.feature(h, q.state, q.left))
            .collect();
        let data = ComparisonDataset::new(&diffs, &labels[h])?;
        let grid: Vec<DVector<f64>> = (0..mdp.n_states * mdp.n_actions)
            .map(|row| mdp.features[h].row(row).transpose())
            .collect();
        let est = fit_xi(&data, cfg.bound_b, bound_adv, &grid, &cfg.solver)?;
        mle_diagnostics = Some(est.diagnostics.clone());
        xi_blocks.push(est.xi);
    }

    // Greedy policy in the learned advantage.
    let choices: Vec<Vec<usize>> = (0..mdp.horizon)
        .map(|h| {
            (0..mdp.n_states)
                .map(|s| {
                    let mut best = 0;
                    let mut best_score = f64::NEG_INFINITY;
                    for a in 0..mdp.n_actions {
                        let score = mdp.feature(h, s, a).dot(&xi_blocks[h]);
                        if score > best_score {
                            best_score = score;
                            best = a;
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    let policy = MarkovPolicy::deterministic(&choices, mdp.n_actions);
    let achieved_value = policy_value(mdp, &mdp.transitions, &true_reward, &policy)?;

    let report = RegimeReport {
        algorithm: "regime-action".to_string(),
        seed: cfg.seed,
        policy,
        theta: None,
        xi: Some(xi_blocks.iter().map(|b| b.as_slice().to_vec()).collect()),
        optimal_value,
        achieved_value,
        gap: optimal_value - achieved_value,
        n_trajectories: mdp.horizon * cfg.n_rounds,
        n_human_labels: mdp.horizon * cfg.n_rounds,
        round_objectives,
        round_log_dets,
        audited_eps: 0.0,
        elliptical: None,
        kappa_reward: kappa(mdp.r_max),
        kappa_advantage: Some(kappa(bound_adv)),
        theta_error: None,
        theta_cov_error: None,
        mle_diagnostics,
        warnings,
        config_echo: format!(
            "n={} lambda={} b_adv={bound_adv} seed={}",
            cfg.n_rounds, cfg.lambda, cfg.seed
        ),
    };
    report.check_gap();
    Ok(report)
}

struct ActionPairSelection {
    left: MarkovPolicy,
    right: MarkovPolicy,
    diff: DVector<f64>,
    objective: f64,
}

/// Joint argmax of `<v(pi0, pi1), u>` for the per-step design objective:
/// `pi1` takes the pointwise minimizing action, `pi0` solves an MDP whose
/// only reward is the per-state feature gap at step `h`.
fn best_action_pair_for_direction(
    mdp: &TabularMdp,
    h: usize,
    u: &DVector<f64>,
) -> Result<ActionPairSelection> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut worst_action = vec![0usize; ns];
    let mut gap_reward = DMatrix::zeros(ns, na);
    for s in 0..ns {
        let scores: Vec<f64> = (0..na).map(|a| mdp.feature(h, s, a).dot(u)).collect();
        let mut lo = 0;
        for a in 1..na {
            if scores[a] < scores[lo] {
                lo = a;
            }
        }
        worst_action[s] = lo;
        for a in 0..na {
            gap_reward[(s, a)] = scores[a] - scores[lo];
        }
    }
    let tables: Vec<DMatrix<f64>> = (0..mdp.horizon)
        .map(|step| if step == h { gap_reward.clone() } else { DMatrix::zeros(ns, na) })
        .collect();
    let (left, _) = optimal_policy(mdp, &mdp.transitions, &Reward::Tables(tables))?;
    let right = MarkovPolicy::deterministic(
        &(0..mdp.horizon)
            .map(|step| {
                if step == h {
                    worst_action.clone()
                } else {
                    vec![0; ns]
                }
            })
            .collect::<Vec<_>>(),
        na,
    );
    let occ = occupancy(mdp, &mdp.transitions, &left)?;
    let mut diff = DVector::zeros(mdp.feature_dim());
    for s in 0..ns {
        let weight: f64 = occ[h].row(s).sum();
        if weight > 0.0 {
            let a0 = left.argmax_action(h, s);
            diff += (mdp.feature(h, s, a0) - mdp.feature(h, s, worst_action[s])) * weight;
        }
    }
    Ok(ActionPairSelection { left, right, diff, objective: 0.0 })
}

fn select_action_pair(
    mdp: &TabularMdp,
    h: usize,
    state: &DesignState,
    restarts: usize,
    tol: f64,
    rng: &mut impl Rng,
) -> Result<ActionPairSelection> {
    let mut best: Option<ActionPairSelection> = None;
    for _ in 0..restarts {
        let mut u = DVector::from_iterator(state.dim(), (0..state.dim()).map(|_| {
            rng.gen_range(-1.0..1.0f64)
        }));
        let n = u.norm();
        if n > 0.0 {
            u /= n;
        } else {
            u[0] = 1.0;
        }
        let mut current: Option<ActionPairSelection> = None;
        for _ in 0..64 {
            let direction = state.sigma_inv() * &u;
            let mut sel = best_action_pair_for_direction(mdp, h, &direction)?;
            sel.objective = state.mahalanobis(&sel.diff);
            if let Some(prev) = &current {
                assert!(
                    sel.objective >= prev.objective - 1e-9,
                    "per-step linearization objective decreased"
                );
                if sel.objective - prev.objective < tol {
                    current = Some(sel);
                    break;
                }
            }
            u = sel.diff.clone();
            current = Some(sel);
        }
        let current = current.expect("at least one iteration");
        match &best {
            Some(b) if b.objective >= current.objective => {}
            _ => best = Some(current),
        }
    }
    Ok(best.expect("at least one restart"))
}
