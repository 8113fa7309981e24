//! Finite-horizon tabular MDP machinery: representation, exact dynamic
//! programming, occupancy measures, and feature expectations.
//!
//! Everything here is exact (up to floating point) and serves double duty as
//! the simulation environment and as the brute-force ground truth that the
//! estimation and planning modules are audited against.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RegimeError, Result};
use crate::textio::KvDoc;

/// Tolerance for "rows sum to one" checks.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Row-stochastic transition map plus an initial state distribution.
///
/// `steps[h]` has one row per (state, action) pair, laid out row-major as
/// `s * n_actions + a`, and one column per successor state. The same type
/// represents both the true dynamics and estimated models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub initial: DVector<f64>,
    pub steps: Vec<DMatrix<f64>>,
}

fn check_distribution(v: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for p in v {
        if p < 0.0 {
            return Err(RegimeError::config(format!("{what}: negative probability {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(RegimeError::config(format!(
            "{what}: probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

impl TransitionModel {
    pub fn validate(&self, n_states: usize, n_actions: usize, horizon: usize) -> Result<()> {
        if self.initial.len() != n_states {
            return Err(RegimeError::config("initial distribution has wrong length"));
        }
        check_distribution(self.initial.iter().copied(), "initial distribution")?;
        if self.steps.len() != horizon {
            return Err(RegimeError::config(format!(
                "expected {} transition tables, got {}",
                horizon,
                self.steps.len()
            )));
        }
        for (h, table) in self.steps.iter().enumerate() {
            if table.nrows() != n_states * n_actions || table.ncols() != n_states {
                return Err(RegimeError::config(format!(
                    "transition table at step {} has shape {}x{}, expected {}x{}",
                    h + 1,
                    table.nrows(),
                    table.ncols(),
                    n_states * n_actions,
                    n_states
                )));
            }
            for row in 0..table.nrows() {
                check_distribution(
                    table.row(row).iter().copied(),
                    &format!("transition row (h={}, sa={})", h + 1, row),
                )?;
            }
        }
        Ok(())
    }

    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize, next: usize, n_actions: usize) -> f64 {
        self.steps[h][(s * n_actions + a, next)]
    }

    pub fn sample_initial(&self, rng: &mut impl Rng) -> usize {
        sample_index(self.initial.iter().copied(), rng)
    }

    pub fn sample_next(
        &self,
        h: usize,
        s: usize,
        a: usize,
        n_actions: usize,
        rng: &mut impl Rng,
    ) -> usize {
        sample_index(self.steps[h].row(s * n_actions + a).iter().copied(), rng)
    }
}

/// Draw an index from an explicit (already normalized) distribution.
pub fn sample_index(probs: impl Iterator<Item = f64>, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Finite-horizon MDP with linearly parameterized rewards.
///
/// Per-step features `phi_h(s,a)` live in `R^d`; per-step reward parameters
/// `theta_h` give `r_h(s,a) = <phi_h(s,a), theta_h>`. The declared bounds
/// (`bound_r` on feature norms, `bound_b` on parameter norms, `r_max` on
/// cumulative trajectory reward) are verified at construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularMdp {
    pub horizon: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: TransitionModel,
    /// One matrix per step, shape (n_states * n_actions) x d.
    pub features: Vec<DMatrix<f64>>,
    /// One reward parameter block per step, each of length d.
    pub theta: Vec<DVector<f64>>,
    pub bound_b: f64,
    pub bound_r: f64,
    pub r_max: f64,
}

impl TabularMdp {
    pub fn new(
        horizon: usize,
        n_states: usize,
        n_actions: usize,
        transitions: TransitionModel,
        features: Vec<DMatrix<f64>>,
        theta: Vec<DVector<f64>>,
        bound_b: f64,
        bound_r: f64,
        r_max: f64,
    ) -> Result<Self> {
        if horizon == 0 || n_states == 0 || n_actions == 0 {
            return Err(RegimeError::config("horizon, states and actions must be positive"));
        }
        transitions.validate(n_states, n_actions, horizon)?;
        if features.len() != horizon || theta.len() != horizon {
            return Err(RegimeError::config("features/theta must have one block per step"));
        }
        let dim = features[0].ncols();
        for (h, f) in features.iter().enumerate() {
            if f.nrows() != n_states * n_actions || f.ncols() != dim {
                return Err(RegimeError::config(format!(
                    "feature table at step {} has inconsistent shape",
                    h + 1
                )));
            }
            for row in 0..f.nrows() {
                let norm = f.row(row).norm();
                if norm > bound_r + 1e-9 {
                    return Err(RegimeError::config(format!(
                        "feature norm {norm} exceeds declared bound {bound_r}"
                    )));
                }
            }
        }
        for (h, t) in theta.iter().enumerate() {
            if t.len() != dim {
                return Err(RegimeError::config(format!(
                    "theta block at step {} has wrong dimension",
                    h + 1
                )));
            }
            let norm = t.norm();
            if norm > bound_b + 1e-9 {
                return Err(RegimeError::config(format!(
                    "theta norm {norm} exceeds declared bound {bound_b}"
                )));
            }
        }
        let mdp = Self {
            horizon,
            n_states,
            n_actions,
            transitions,
            features,
            theta,
            bound_b,
            bound_r,
            r_max,
        };
        let (lo, hi) = mdp.cumulative_reward_range();
        let reach = lo.abs().max(hi.abs());
        if reach > r_max + 1e-9 {
            return Err(RegimeError::config(format!(
                "reachable cumulative reward magnitude {reach} exceeds declared r_max {r_max}"
            )));
        }
        Ok(mdp)
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].ncols()
    }

    /// Stacked dimension `horizon * d` of trajectory features.
    pub fn stacked_dim(&self) -> usize {
        self.horizon * self.feature_dim()
    }

    #[inline]
    pub fn feature(&self, h: usize, s: usize, a: usize) -> DVector<f64> {
        self.features[h].row(s * self.n_actions + a).transpose()
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.features[h].row(s * self.n_actions + a).transpose().dot(&self.theta[h])
    }

    /// Per-step true reward tables (n_states x n_actions).
    pub fn reward_tables(&self) -> Vec<DMatrix<f64>> {
        (0..self.horizon)
            .map(|h| {
                DMatrix::from_fn(self.n_states, self.n_actions, |s, a| self.reward(h, s, a))
            })
            .collect()
    }

    pub fn true_reward(&self) -> Reward {
        Reward::Linear(self.theta.clone())
    }

    /// Concatenation of the per-step reward parameter blocks.
    pub fn stacked_theta(&self) -> DVector<f64> {
        stack_blocks(&self.theta)
    }

    /// Exact (min, max) of the cumulative reward over trajectories with
    /// positive probability, by backward DP over the reachable support.
    pub fn cumulative_reward_range(&self) -> (f64, f64) {
        let tables = self.reward_tables();
        let mut max_to_go = vec![0.0f64; self.n_states];
        let mut min_to_go = vec![0.0f64; self.n_states];
        for h in (0..self.horizon).rev() {
            let mut max_next = vec![f64::NEG_INFINITY; self.n_states];
            let mut min_next = vec![f64::INFINITY; self.n_states];
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    let (sup, inf) = if h + 1 == self.horizon {
                        (0.0, 0.0)
                    } else {
                        let row = self.transitions.steps[h].row(s * self.n_actions + a);
                        let mut sup = f64::NEG_INFINITY;
                        let mut inf = f64::INFINITY;
                        for (next, p) in row.iter().enumerate() {
                            if *p > 0.0 {
                                sup = sup.max(max_to_go[next]);
                                inf = inf.min(min_to_go[next]);
                            }
                        }
                        (sup, inf)
                    };
                    let r = tables[h][(s, a)];
                    max_next[s] = max_next[s].max(r + sup);
                    min_next[s] = min_next[s].min(r + inf);
                }
            }
            max_to_go = max_next;
            min_to_go = min_next;
        }
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for s in 0..self.n_states {
            if self.transitions.initial[s] > 0.0 {
                hi = hi.max(max_to_go[s]);
                lo = lo.min(min_to_go[s]);
            }
        }
        (lo, hi)
    }

    /// Roll out one episode under `policy` and the true transitions.
    pub fn sample_trajectory(&self, policy: &MarkovPolicy, rng: &mut impl Rng) -> Trajectory {
        self.sample_trajectory_under(&self.transitions, policy, rng)
    }

    pub fn sample_trajectory_under(
        &self,
        model: &TransitionModel,
        policy: &MarkovPolicy,
        rng: &mut impl Rng,
    ) -> Trajectory {
        let mut steps = Vec::with_capacity(self.horizon);
        let mut s = model.sample_initial(rng);
        for h in 0..self.horizon {
            let a = policy.sample_action(h, s, rng);
            steps.push((s, a));
            if h + 1 < self.horizon {
                s = model.sample_next(h, s, a, self.n_actions, rng);
            }
        }
        Trajectory::from_steps(self, &steps)
    }

    /// One-hot feature tables of dimension `n_states * n_actions`.
    pub fn one_hot_features(horizon: usize, n_states: usize, n_actions: usize) -> Vec<DMatrix<f64>> {
        (0..horizon)
            .map(|_| DMatrix::identity(n_states * n_actions, n_states * n_actions))
            .collect()
    }
}

/// Concatenate per-step blocks into one stacked vector.
pub fn stack_blocks(blocks: &[DVector<f64>]) -> DVector<f64> {
    let dim: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = DVector::zeros(dim);
    let mut offset = 0;
    for b in blocks {
        out.rows_mut(offset, b.len()).copy_from(b);
        offset += b.len();
    }
    out
}

/// Split a stacked vector back into `count` equal blocks.
pub fn split_blocks(stacked: &DVector<f64>, count: usize) -> Vec<DVector<f64>> {
    assert_eq!(stacked.len() % count, 0, "stacked length not divisible");
    let d = stacked.len() / count;
    (0..count)
        .map(|h| stacked.rows(h * d, d).clone_owned())
        .collect()
}

/// Per-step rewards: explicit tables or linear in the features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Reward {
    /// One (n_states x n_actions) table per step.
    Tables(Vec<DMatrix<f64>>),
    /// One parameter block per step; `r_h(s,a) = <phi_h(s,a), theta_h>`.
    Linear(Vec<DVector<f64>>),
}

impl Reward {
    pub fn zero(mdp: &TabularMdp) -> Self {
        Reward::Tables(
            (0..mdp.horizon)
                .map(|_| DMatrix::zeros(mdp.n_states, mdp.n_actions))
                .collect(),
        )
    }

    pub fn from_stacked(stacked: &DVector<f64>, horizon: usize) -> Self {
        Reward::Linear(split_blocks(stacked, horizon))
    }

    /// Materialize the reward table at step `h`.
    pub fn table(&self, mdp: &TabularMdp, h: usize) -> DMatrix<f64> {
        match self {
            Reward::Tables(tables) => tables[h].clone(),
            Reward::Linear(theta) => {
                let flat = &mdp.features[h] * &theta[h];
                DMatrix::from_fn(mdp.n_states, mdp.n_actions, |s, a| {
                    flat[s * mdp.n_actions + a]
                })
            }
        }
    }
}

/// Per-step state-conditional action distributions, optionally carrying the
/// log-linear parameters they were derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovPolicy {
    /// One (n_states x n_actions) table per step; rows sum to one.
    tables: Vec<DMatrix<f64>>,
    pub log_linear: Option<LogLinearParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLinearParams {
    pub zeta: Vec<DVector<f64>>,
    pub bound_w: f64,
}

impl MarkovPolicy {
    pub fn from_tables(tables: Vec<DMatrix<f64>>) -> Result<Self> {
        for (h, t) in tables.iter().enumerate() {
            for s in 0..t.nrows() {
                check_distribution(
                    t.row(s).iter().copied(),
                    &format!("policy row (h={}, s={s})", h + 1),
                )?;
            }
        }
        Ok(Self { tables, log_linear: None })
    }

    pub fn uniform(horizon: usize, n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self {
            tables: (0..horizon)
                .map(|_| DMatrix::from_element(n_states, n_actions, p))
                .collect(),
            log_linear: None,
        }
    }

    /// Deterministic policy given by `choices[h][s]`.
    pub fn deterministic(choices: &[Vec<usize>], n_actions: usize) -> Self {
        let tables = choices
            .iter()
            .map(|per_state| {
                let mut t = DMatrix::zeros(per_state.len(), n_actions);
                for (s, &a) in per_state.iter().enumerate() {
                    t[(s, a)] = 1.0;
                }
                t
            })
            .collect();
        Self { tables, log_linear: None }
    }

    /// Log-linear policy: `pi_h(a|s) proportional to exp(<zeta_h, phi_h(s,a)>)`,
    /// renormalized exactly.
    pub fn log_linear(
        features: &[DMatrix<f64>],
        n_states: usize,
        n_actions: usize,
        zeta: Vec<DVector<f64>>,
        bound_w: f64,
    ) -> Result<Self> {
        if zeta.len() != features.len() {
            return Err(RegimeError::config("zeta must have one block per step"));
        }
        for z in &zeta {
            if z.norm() > bound_w + 1e-9 {
                return Err(RegimeError::config(format!(
                    "log-linear parameter norm {} exceeds bound {bound_w}",
                    z.norm()
                )));
            }
        }
        let mut tables = Vec::with_capacity(features.len());
        for (h, f) in features.iter().enumerate() {
            let logits = f * &zeta[h];
            let mut t = DMatrix::zeros(n_states, n_actions);
            for s in 0..n_states {
                let row: Vec<f64> = (0..n_actions).map(|a| logits[s * n_actions + a]).collect();
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..n_actions {
                    let e = (row[a] - m).exp();
                    t[(s, a)] = e;
                    z += e;
                }
                for a in 0..n_actions {
                    t[(s, a)] /= z;
                }
            }
            tables.push(t);
        }
        Ok(Self {
            tables,
            log_linear: Some(LogLinearParams { zeta, bound_w }),
        })
    }

    pub fn n_steps(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, h: usize) -> &DMatrix<f64> {
        &self.tables[h]
    }

    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.tables[h][(s, a)]
    }

    pub fn sample_action(&self, h: usize, s: usize, rng: &mut impl Rng) -> usize {
        sample_index(self.tables[h].row(s).iter().copied(), rng)
    }

    /// Greedy action per state (lowest index wins ties); only meaningful for
    /// deterministic policies but defined for any.
    pub fn argmax_action(&self, h: usize, s: usize) -> usize {
        let row = self.tables[h].row(s);
        let mut best = 0;
        for a in 1..row.len() {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }

    fn check_dims(&self, mdp: &TabularMdp) -> Result<()> {
        if self.tables.len() != mdp.horizon
            || self.tables[0].nrows() != mdp.n_states
            || self.tables[0].ncols() != mdp.n_actions
        {
            return Err(RegimeError::config("policy dimensions do not match the MDP"));
        }
        Ok(())
    }
}

/// Per-step occupancy `d_h(s,a) = Pr[s_h = s, a_h = a]` under `(policy, model)`,
/// by forward recursion.
pub fn occupancy(
    mdp: &TabularMdp,
    model: &TransitionModel,
    policy: &MarkovPolicy,
) -> Result<Vec<DMatrix<f64>>> {
    policy.check_dims(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut state_marginal = model.initial.clone();
    let mut out = Vec::with_capacity(mdp.horizon);
    for h in 0..mdp.horizon {
        let mut d = DMatrix::zeros(ns, na);
        for s in 0..ns {
            for a in 0..na {
                d[(s, a)] = state_marginal[s] * policy.prob(h, s, a);
            }
        }
        if h + 1 < mdp.horizon {
            let mut next = DVector::zeros(ns);
            for s in 0..ns {
                for a in 0..na {
                    let w = d[(s, a)];
                    if w > 0.0 {
                        let row = model.steps[h].row(s * na + a);
                        for sp in 0..ns {
                            next[sp] += w * row[sp];
                        }
                    }
                }
            }
            state_marginal = next;
        }
        out.push(d);
    }
    Ok(out)
}

/// Per-step state marginals `d_h(s)` under `(policy, model)`.
pub fn state_occupancy(
    mdp: &TabularMdp,
    model: &TransitionModel,
    policy: &MarkovPolicy,
) -> Result<Vec<DVector<f64>>> {
    let occ = occupancy(mdp, model, policy)?;
    Ok(occ
        .iter()
        .map(|d| {
            DVector::from_iterator(d.nrows(), (0..d.nrows()).map(|s| d.row(s).sum()))
        })
        .collect())
}

/// Expected stacked trajectory feature `phi(pi)` under `(policy, model)`.
///
/// Block `h` equals `sum_{s,a} d_h(s,a) phi_h(s,a)`. With the true model this
/// is the exact feature expectation; with an estimated model it is the
/// plug-in estimate.
pub fn feature_expectation(
    mdp: &TabularMdp,
    model: &TransitionModel,
    policy: &MarkovPolicy,
) -> Result<DVector<f64>> {
    let occ = occupancy(mdp, model, policy)?;
    let d = mdp.feature_dim();
    let mut out = DVector::zeros(mdp.horizon * d);
    for h in 0..mdp.horizon {
        let weights = DVector::from_iterator(
            mdp.n_states * mdp.n_actions,
            (0..mdp.n_states * mdp.n_actions)
                .map(|row| occ[h][(row / mdp.n_actions, row % mdp.n_actions)]),
        );
        let block = mdp.features[h].transpose() * weights;
        out.rows_mut(h * d, d).copy_from(&block);
    }
    Ok(out)
}

/// Exact Q and V tables for `policy` under `(model, reward)`.
pub fn q_values(
    mdp: &TabularMdp,
    model: &TransitionModel,
    reward: &Reward,
    policy: &MarkovPolicy,
) -> Result<(Vec<DMatrix<f64>>, Vec<DVector<f64>>)> {
    policy.check_dims(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q_all = vec![DMatrix::zeros(ns, na); mdp.horizon];
    let mut v_all = vec![DVector::zeros(ns); mdp.horizon];
    let mut v_next = DVector::zeros(ns);
    for h in (0..mdp.horizon).rev() {
        let r = reward.table(mdp, h);
        let mut q = DMatrix::zeros(ns, na);
        for s in 0..ns {
            for a in 0..na {
                let mut future = 0.0;
                if h + 1 < mdp.horizon {
                    let row = model.steps[h].row(s * na + a);
                    for sp in 0..ns {
                        future += row[sp] * v_next[sp];
                    }
                }
                q[(s, a)] = r[(s, a)] + future;
            }
        }
        let mut v = DVector::zeros(ns);
        for s in 0..ns {
            let mut acc = 0.0;
            for a in 0..na {
                acc += policy.prob(h, s, a) * q[(s, a)];
            }
            v[s] = acc;
        }
        v_next = v.clone();
        q_all[h] = q;
        v_all[h] = v;
    }
    Ok((q_all, v_all))
}

/// Expected cumulative reward of `policy` under `(model, reward)`.
pub fn policy_value(
    mdp: &TabularMdp,
    model: &TransitionModel,
    reward: &Reward,
    policy: &MarkovPolicy,
) -> Result<f64> {
    let (_, v) = q_values(mdp, model, reward, policy)?;
    Ok(model.initial.dot(&v[0]))
}

/// Greedy backward DP. Returns a deterministic policy (ties broken toward the
/// lowest action index) and its value under `(model, reward)`.
pub fn optimal_policy(
    mdp: &TabularMdp,
    model: &TransitionModel,
    reward: &Reward,
) -> Result<(MarkovPolicy, f64)> {
    let (q, v, choices) = optimal_q_values(mdp, model, reward)?;
    let _ = q;
    let policy = MarkovPolicy::deterministic(&choices, mdp.n_actions);
    Ok((policy, model.initial.dot(&v[0])))
}

/// Optimal Q/V tables plus the greedy action choices.
pub fn optimal_q_values(
    mdp: &TabularMdp,
    model: &TransitionModel,
    reward: &Reward,
) -> Result<(Vec<DMatrix<f64>>, Vec<DVector<f64>>, Vec<Vec<usize>>)> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q_all = vec![DMatrix::zeros(ns, na); mdp.horizon];
    let mut v_all = vec![DVector::zeros(ns); mdp.horizon];
    let mut choices = vec![vec![0usize; ns]; mdp.horizon];
    let mut v_next = DVector::zeros(ns);
    for h in (0..mdp.horizon).rev() {
        let r = reward.table(mdp, h);
        let mut q = DMatrix::zeros(ns, na);
        let mut v = DVector::zeros(ns);
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..na {
                let mut future = 0.0;
                if h + 1 < mdp.horizon {
                    let row = model.steps[h].row(s * na + a);
                    for sp in 0..ns {
                        future += row[sp] * v_next[sp];
                    }
                }
                let val = r[(s, a)] + future;
                q[(s, a)] = val;
                if val > best {
                    best = val;
                    best_a = a;
                }
            }
            v[s] = best;
            choices[h][s] = best_a;
        }
        v_next = v.clone();
        q_all[h] = q;
        v_all[h] = v;
    }
    Ok((q_all, v_all, choices))
}

/// Optimal advantage tables `A*_h(s,a) = Q*_h(s,a) - V*_h(s)` under the true
/// model and reward.
pub fn optimal_advantage(mdp: &TabularMdp) -> Result<Vec<DMatrix<f64>>> {
    let reward = mdp.true_reward();
    let (q, v, _) = optimal_q_values(mdp, &mdp.transitions, &reward)?;
    Ok(q.iter()
        .zip(v.iter())
        .map(|(qh, vh)| {
            DMatrix::from_fn(qh.nrows(), qh.ncols(), |s, a| qh[(s, a)] - vh[s])
        })
        .collect())
}

/// Residual of the performance-difference identity under the true model:
/// `|V^{r,pi'} - V^{r,pi} - sum_h E_{pi'}[<Q^{r,pi}_h(s,.), pi' - pi>]|`.
pub fn performance_difference_audit(
    mdp: &TabularMdp,
    reward: &Reward,
    pi: &MarkovPolicy,
    pi_prime: &MarkovPolicy,
) -> Result<f64> {
    let model = &mdp.transitions;
    let v_prime = policy_value(mdp, model, reward, pi_prime)?;
    let v_base = policy_value(mdp, model, reward, pi)?;
    let (q, _) = q_values(mdp, model, reward, pi)?;
    let marginals = state_occupancy(mdp, model, pi_prime)?;
    let mut correction = 0.0;
    for h in 0..mdp.horizon {
        for s in 0..mdp.n_states {
            let w = marginals[h][s];
            if w == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for a in 0..mdp.n_actions {
                inner += q[h][(s, a)] * (pi_prime.prob(h, s, a) - pi.prob(h, s, a));
            }
            correction += w * inner;
        }
    }
    Ok((v_prime - v_base - correction).abs())
}

/// A realized episode: the (state, action) sequence plus its stacked feature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
    pub stacked: DVector<f64>,
}

impl Trajectory {
    pub fn from_steps(mdp: &TabularMdp, steps: &[(usize, usize)]) -> Self {
        assert_eq!(steps.len(), mdp.horizon, "trajectory length must equal horizon");
        let d = mdp.feature_dim();
        let mut stacked = DVector::zeros(mdp.horizon * d);
        for (h, &(s, a)) in steps.iter().enumerate() {
            stacked
                .rows_mut(h * d, d)
                .copy_from(&mdp.feature(h, s, a));
        }
        let bound = mdp.bound_r * (mdp.horizon as f64).sqrt();
        debug_assert!(stacked.norm() <= bound + 1e-9);
        Self { steps: steps.to_vec(), stacked }
    }

    pub fn cumulative_reward(&self, mdp: &TabularMdp) -> f64 {
        self.stacked.dot(&mdp.stacked_theta())
    }
}

/// Enumerate all deterministic Markov policies. The count is
/// `n_actions ^ (n_states * horizon)`; callers must keep instances tiny.
pub fn enumerate_deterministic_policies(mdp: &TabularMdp, cap: usize) -> Result<Vec<MarkovPolicy>> {
    let slots = mdp.n_states * mdp.horizon;
    let count = (mdp.n_actions as f64).powi(slots as i32);
    if !(count.is_finite() && count <= cap as f64) {
        return Err(RegimeError::precondition(format!(
            "deterministic enumeration would produce {count} policies (cap {cap})"
        )));
    }
    let total = count as usize;
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut rem = code;
        let mut choices = vec![vec![0usize; mdp.n_states]; mdp.horizon];
        for h in 0..mdp.horizon {
            for s in 0..mdp.n_states {
                choices[h][s] = rem % mdp.n_actions;
                rem /= mdp.n_actions;
            }
        }
        out.push(MarkovPolicy::deterministic(&choices, mdp.n_actions));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Structured-text serialization
// ---------------------------------------------------------------------------

impl TabularMdp {
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("mdp.horizon", self.horizon.to_string());
        doc.set("mdp.states", self.n_states.to_string());
        doc.set("mdp.actions", self.n_actions.to_string());
        doc.set("mdp.feature_dim", self.feature_dim().to_string());
        doc.set_float("mdp.bound_b", self.bound_b);
        doc.set_float("mdp.bound_r", self.bound_r);
        doc.set_float("mdp.r_max", self.r_max);
        doc.set_floats("mdp.initial", self.transitions.initial.as_slice());
        for h in 0..self.horizon {
            let flat: Vec<f64> = flatten_row_major(&self.transitions.steps[h]);
            doc.set_floats(&format!("mdp.transitions.h{}", h + 1), &flat);
            let feats: Vec<f64> = flatten_row_major(&self.features[h]);
            doc.set_floats(&format!("mdp.features.h{}", h + 1), &feats);
            doc.set_floats(&format!("mdp.theta.h{}", h + 1), self.theta[h].as_slice());
        }
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let horizon = doc
            .get_usize("mdp.horizon")?
            .ok_or_else(|| RegimeError::config("missing mdp.horizon"))?;
        let n_states = doc
            .get_usize("mdp.states")?
            .ok_or_else(|| RegimeError::config("missing mdp.states"))?;
        let n_actions = doc
            .get_usize("mdp.actions")?
            .ok_or_else(|| RegimeError::config("missing mdp.actions"))?;
        let dim = doc
            .get_usize("mdp.feature_dim")?
            .ok_or_else(|| RegimeError::config("missing mdp.feature_dim"))?;
        let bound_b = doc
            .get_f64("mdp.bound_b")?
            .ok_or_else(|| RegimeError::config("missing mdp.bound_b"))?;
        let bound_r = doc
            .get_f64("mdp.bound_r")?
            .ok_or_else(|| RegimeError::config("missing mdp.bound_r"))?;
        let r_max = doc
            .get_f64("mdp.r_max")?
            .ok_or_else(|| RegimeError::config("missing mdp.r_max"))?;
        let initial = doc
            .get_f64_list("mdp.initial")?
            .ok_or_else(|| RegimeError::config("missing mdp.initial"))?;
        let mut steps = Vec::with_capacity(horizon);
        let mut features = Vec::with_capacity(horizon);
        let mut theta = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let t = doc
                .get_f64_list(&format!("mdp.transitions.h{}", h + 1))?
                .ok_or_else(|| RegimeError::config(format!("missing transitions at step {}", h + 1)))?;
            steps.push(unflatten_row_major(&t, n_states * n_actions, n_states)?);
            let f = doc
                .get_f64_list(&format!("mdp.features.h{}", h + 1))?
                .ok_or_else(|| RegimeError::config(format!("missing features at step {}", h + 1)))?;
            features.push(unflatten_row_major(&f, n_states * n_actions, dim)?);
            let th = doc
                .get_f64_list(&format!("mdp.theta.h{}", h + 1))?
                .ok_or_else(|| RegimeError::config(format!("missing theta at step {}", h + 1)))?;
            theta.push(DVector::from_vec(th));
        }
        TabularMdp::new(
            horizon,
            n_states,
            n_actions,
            TransitionModel {
                initial: DVector::from_vec(initial),
                steps,
            },
            features,
            theta,
            bound_b,
            bound_r,
            r_max,
        )
    }
}

pub fn flatten_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

pub fn unflatten_row_major(flat: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if flat.len() != rows * cols {
        return Err(RegimeError::config(format!(
            "expected {} values, got {}",
            rows * cols,
            flat.len()
        )));
    }
    Ok(DMatrix::from_fn(rows, cols, |r, c| flat[r * cols + c]))
}
