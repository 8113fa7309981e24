//! Linear-MDP machinery: valid synthetic instance generation, bonus-driven
//! exploration, least-squares policy evaluation from offline data,
//! feature-expectation estimation via coordinate rewards, and entropy-
//! regularized (soft) value iteration.
//!
//! Instances carry an exact tabular realization so every estimate can be
//! cross-checked against exact dynamic programming.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RegimeError, Result};
use crate::instances::dirichlet;
use crate::mdp::{MarkovPolicy, Reward, TabularMdp, TransitionModel};
use rand_distr::{Distribution, StandardNormal};

/// Low-rank transition factorization `P_h(s'|s,a) = <phi_h(s,a), mu_h(s')>`
/// together with its exact tabular realization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearMdp {
    /// Latent dimension d.
    pub dim: usize,
    /// Per-step measure matrices, shape d x n_states; column s' is mu_h(s').
    pub measures: Vec<DMatrix<f64>>,
    /// Exact tabular realization (features, rewards, transitions).
    pub realization: TabularMdp,
}

impl LinearMdp {
    pub fn features(&self) -> &[DMatrix<f64>] {
        &self.realization.features
    }

    /// Check the factorization reproduces the tabular transitions and that
    /// measure columns respect the sqrt(d) norm bound.
    pub fn validate(&self) -> Result<()> {
        let mdp = &self.realization;
        for h in 0..mdp.horizon {
            let product = &mdp.features[h] * &self.measures[h];
            let gap = (&product - &mdp.transitions.steps[h]).abs().max();
            if gap > 1e-10 {
                return Err(RegimeError::config(format!(
                    "factorization mismatch at step {}: {gap}",
                    h + 1
                )));
            }
            for s in 0..mdp.n_states {
                let norm = self.measures[h].column(s).norm();
                if norm > (self.dim as f64).sqrt() + 1e-9 {
                    return Err(RegimeError::config(format!(
                        "measure norm {norm} exceeds sqrt(d) at step {}",
                        h + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Random linear MDP: features on the d-simplex, measure rows are
/// distributions over states, so the product is automatically row-stochastic.
/// Rewards are rescaled so the reachable cumulative magnitude equals `r_max`.
pub fn generate_linear_mdp(
    dim: usize,
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    r_max: f64,
    rng: &mut impl Rng,
) -> Result<LinearMdp> {
    if dim > n_states * n_actions {
        return Err(RegimeError::precondition("need d <= |S||A|"));
    }
    let features: Vec<DMatrix<f64>> = (0..horizon)
        .map(|_| {
            let mut f = DMatrix::zeros(n_states * n_actions, dim);
            for row in 0..n_states * n_actions {
                f.set_row(row, &dirichlet(dim, 1.0, rng).transpose());
            }
            f
        })
        .collect();
    let measures: Vec<DMatrix<f64>> = (0..horizon)
        .map(|_| {
            let mut m = DMatrix::zeros(dim, n_states);
            for j in 0..dim {
                m.set_row(j, &dirichlet(n_states, 1.0, rng).transpose());
            }
            m
        })
        .collect();
    let steps: Vec<DMatrix<f64>> = (0..horizon).map(|h| &features[h] * &measures[h]).collect();
    let initial = dirichlet(n_states, 1.0, rng);
    let mut theta: Vec<DVector<f64>> = (0..horizon)
        .map(|_| {
            DVector::from_iterator(dim, (0..dim).map(|_| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            }))
        })
        .collect();
    let provisional = TabularMdp::new(
        horizon,
        n_states,
        n_actions,
        TransitionModel { initial: initial.clone(), steps: steps.clone() },
        features.clone(),
        theta.clone(),
        theta.iter().map(|t| t.norm()).fold(0.0, f64::max) + 1.0,
        1.0 + 1e-9,
        f64::MAX,
    )?;
    let (lo, hi) = provisional.cumulative_reward_range();
    let mag = lo.abs().max(hi.abs());
    if mag < 1e-12 {
        return Err(RegimeError::config("degenerate linear instance"));
    }
    let scale = r_max / mag;
    for t in &mut theta {
        *t *= scale;
    }
    let bound_b = theta.iter().map(|t| t.norm()).fold(0.0, f64::max);
    let realization = TabularMdp::new(
        horizon,
        n_states,
        n_actions,
        TransitionModel { initial, steps },
        features,
        theta,
        bound_b,
        1.0 + 1e-9,
        r_max,
    )?;
    let lin = LinearMdp { dim, measures, realization };
    lin.validate()?;
    Ok(lin)
}

/// View any tabular MDP as a linear MDP via one-hot features of dimension
/// `|S||A|`; measure columns are the transition rows, rewards become the
/// parameter entries.
pub fn tabular_as_linear(mdp: &TabularMdp) -> Result<LinearMdp> {
    let (ns, na, h) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let dim = ns * na;
    let features = TabularMdp::one_hot_features(h, ns, na);
    let measures: Vec<DMatrix<f64>> = (0..h).map(|step| mdp.transitions.steps[step].clone()).collect();
    let reward_tables = mdp.reward_tables();
    let theta: Vec<DVector<f64>> = reward_tables
        .iter()
        .map(|t| DVector::from_iterator(dim, (0..dim).map(|row| t[(row / na, row % na)])))
        .collect();
    let bound_b = theta.iter().map(|t| t.norm()).fold(0.0, f64::max);
    let realization = TabularMdp::new(
        h,
        ns,
        na,
        mdp.transitions.clone(),
        features,
        theta,
        bound_b,
        1.0,
        mdp.r_max,
    )?;
    let lin = LinearMdp { dim, measures, realization };
    lin.validate()?;
    Ok(lin)
}

/// Offline datasets: per-step transition tuples from exploration episodes
/// plus sampled initial states.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExplorationDataset {
    /// `per_step[h]` holds (s_h, a_h, s_{h+1}) for each collected episode.
    pub per_step: Vec<Vec<(usize, usize, usize)>>,
    pub initials: Vec<usize>,
}

impl ExplorationDataset {
    pub fn episodes(&self) -> usize {
        self.per_step.first().map_or(0, Vec::len)
    }

    /// Per-step (s,a) -> s' count matrices, shape (|S||A|) x |S|.
    fn count_matrices(&self, ns: usize, na: usize) -> Vec<DMatrix<f64>> {
        self.per_step
            .iter()
            .map(|tuples| {
                let mut c = DMatrix::zeros(ns * na, ns);
                for &(s, a, sp) in tuples {
                    c[(s * na + a, sp)] += 1.0;
                }
                c
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LsviConfig {
    pub beta: f64,
    pub lambda: f64,
    /// Sign on the planning bonus; +1.0 follows the written algorithm.
    /// Exposed for ablation only.
    pub bonus_sign: f64,
}

impl LsviConfig {
    pub fn new(beta: f64, lambda: f64) -> Self {
        Self { beta, lambda, bonus_sign: 1.0 }
    }
}

/// Confidence-width coefficient `c * d * H * R * sqrt(log(d K H R / delta))`
/// for the exploration/planning bonuses.
pub fn confidence_beta(c: f64, dim: usize, episodes: usize, horizon: usize, r: f64, delta: f64) -> f64 {
    let arg = (dim as f64 * episodes.max(1) as f64 * horizon as f64 * r / delta.max(1e-12)).max(std::f64::consts::E);
    c * dim as f64 * horizon as f64 * r * arg.ln().sqrt()
}

/// Bonus-driven exploration: each episode runs backward least-squares value
/// iteration with reward = bonus/H, Q clipped to [0, H-h+1], rolls out the
/// greedy policy, and extends the dataset. Returns the collected transition
/// tuples plus fresh initial-state samples.
pub fn regime_exploration(
    lin: &LinearMdp,
    episodes: usize,
    cfg: &LsviConfig,
    rng: &mut impl Rng,
) -> ExplorationDataset {
    let mdp = &lin.realization;
    let (ns, na, horizon, d) = (mdp.n_states, mdp.n_actions, mdp.horizon, lin.dim);
    let mut data = ExplorationDataset {
        per_step: vec![Vec::new(); horizon],
        initials: Vec::new(),
    };
    // Incrementally maintained inverse covariances and count matrices.
    let mut lambda_inv = vec![DMatrix::identity(d, d) / cfg.lambda; horizon];
    let mut counts = vec![DMatrix::<f64>::zeros(ns * na, ns); horizon];
    for _ in 0..episodes {
        // Backward pass over all states under the current data.
        let mut v_next = DVector::zeros(ns);
        let mut greedy = vec![vec![0usize; ns]; horizon];
        for h in (0..horizon).rev() {
            let cap = (horizon - h) as f64;
            let phi = &mdp.features[h];
            // w = Lambda^{-1} Phi^T (C_h V_next), grouped by tabular cell.
            let target = &counts[h] * &v_next;
            let w = &lambda_inv[h] * (phi.transpose() * target);
            let mut v = DVector::zeros(ns);
            for s in 0..ns {
                let mut best = f64::NEG_INFINITY;
                let mut best_a = 0;
                for a in 0..na {
                    let row = phi.row(s * na + a).transpose();
                    let lev = row.dot(&(&lambda_inv[h] * &row)).max(0.0).sqrt();
                    let bonus = (cfg.beta * lev).min(cap);
                    let reward = bonus / horizon as f64;
                    let q = (row.dot(&w) + reward).clamp(0.0, cap);
                    let q = (q + bonus).clamp(0.0, cap);
                    if q > best {
                        best = q;
                        best_a = a;
                    }
                }
                v[s] = best;
                greedy[h][s] = best_a;
            }
            v_next = v;
        }
        // Roll out the greedy policy on the true environment.
        let mut s = mdp.transitions.sample_initial(rng);
        for h in 0..horizon {
            let a = greedy[h][s];
            let sp = mdp.transitions.sample_next(h, s, a, na, rng);
            data.per_step[h].push((s, a, sp));
            counts[h][(s * na + a, sp)] += 1.0;
            let phi_row = mdp.features[h].row(s * na + a).transpose();
            sherman_morrison_update(&mut lambda_inv[h], &phi_row);
            if h + 1 < horizon {
                s = sp;
            }
        }
    }
    for _ in 0..episodes {
        data.initials.push(mdp.transitions.sample_initial(rng));
    }
    data
}

fn sherman_morrison_update(inv: &mut DMatrix<f64>, v: &DVector<f64>) {
    let iv = &*inv * v;
    let denom = 1.0 + v.dot(&iv);
    *inv -= (&iv * iv.transpose()) / denom;
}

/// Synthetic dense-coverage dataset: `samples_per_pair` next-state draws for
/// every (h, s, a) cell, plus matching initial-state samples. Used to probe
/// the exact-data limit of the planner.
pub fn dense_dataset(lin: &LinearMdp, samples_per_pair: usize, rng: &mut impl Rng) -> ExplorationDataset {
    let mdp = &lin.realization;
    let (ns, na, horizon) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let mut data = ExplorationDataset {
        per_step: vec![Vec::new(); horizon],
        initials: Vec::new(),
    };
    for h in 0..horizon {
        for s in 0..ns {
            for a in 0..na {
                for _ in 0..samples_per_pair {
                    let sp = mdp.transitions.sample_next(h, s, a, na, rng);
                    data.per_step[h].push((s, a, sp));
                }
            }
        }
    }
    let k = ns * na * samples_per_pair;
    for _ in 0..k {
        data.initials.push(mdp.transitions.sample_initial(rng));
    }
    data
}

/// Reusable per-dataset planning context: covariance factorizations, count
/// matrices, and bonus tables are shared across evaluation calls.
pub struct PlanningContext<'a> {
    lin: &'a LinearMdp,
    data: &'a ExplorationDataset,
    cfg: LsviConfig,
    factors: Vec<Cholesky<f64, nalgebra::Dyn>>,
    counts: Vec<DMatrix<f64>>,
    /// Bonus tables, shape n_states x n_actions per step.
    bonuses: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct PlanningOutcome {
    pub value: f64,
    pub q: Vec<DMatrix<f64>>,
    pub v: Vec<DVector<f64>>,
    pub bonus: Vec<DMatrix<f64>>,
}

impl<'a> PlanningContext<'a> {
    pub fn new(lin: &'a LinearMdp, data: &'a ExplorationDataset, cfg: LsviConfig) -> Result<Self> {
        if data.episodes() == 0 {
            return Err(RegimeError::precondition(
                "planning needs a non-empty exploration dataset",
            ));
        }
        let mdp = &lin.realization;
        let (ns, na, horizon, d) = (mdp.n_states, mdp.n_actions, mdp.horizon, lin.dim);
        let counts = data.count_matrices(ns, na);
        let mut factors = Vec::with_capacity(horizon);
        let mut bonuses = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let mut lam = DMatrix::identity(d, d) * cfg.lambda;
            for s in 0..ns {
                for a in 0..na {
                    let n: f64 = counts[h].row(s * na + a).sum();
                    if n > 0.0 {
                        let phi = mdp.features[h].row(s * na + a).transpose();
                        lam += (&phi * phi.transpose()) * n;
                    }
                }
            }
            let chol = Cholesky::new(lam)
                .ok_or_else(|| RegimeError::config("planning covariance not positive definite"))?;
            let cap = (horizon - h) as f64;
            let bonus = DMatrix::from_fn(ns, na, |s, a| {
                let phi = mdp.features[h].row(s * na + a).transpose();
                let lev = phi.dot(&chol.solve(&phi)).max(0.0).sqrt();
                (cfg.beta * lev).min(2.0 * cap)
            });
            factors.push(chol);
            bonuses.push(bonus);
        }
        Ok(Self { lin, data, cfg, factors, counts, bonuses })
    }

    /// Least-squares policy evaluation with optimistic bonus and double
    /// clipping; per-step rewards must lie in the declared planning range.
    pub fn evaluate(&self, policy: &MarkovPolicy, reward: &Reward) -> Result<PlanningOutcome> {
        let mdp = &self.lin.realization;
        let (ns, na, horizon) = (mdp.n_states, mdp.n_actions, mdp.horizon);
        let mut q_all = vec![DMatrix::zeros(ns, na); horizon];
        let mut v_all = vec![DVector::zeros(ns); horizon];
        let mut v_next = DVector::zeros(ns);
        for h in (0..horizon).rev() {
            let cap = (horizon - h) as f64;
            let r = reward.table(mdp, h);
            let target = &self.counts[h] * &v_next;
            let w = self.factors[h].solve(&(mdp.features[h].transpose() * target));
            let mut q = DMatrix::zeros(ns, na);
            let mut v = DVector::zeros(ns);
            for s in 0..ns {
                let mut acc = 0.0;
                for a in 0..na {
                    let phi = mdp.features[h].row(s * na + a).transpose();
                    let base = (phi.dot(&w) + r[(s, a)]).clamp(-cap, cap);
                    let val =
                        (base + self.cfg.bonus_sign * self.bonuses[h][(s, a)]).clamp(-cap, cap);
                    q[(s, a)] = val;
                    acc += policy.prob(h, s, a) * val;
                }
                v[s] = acc;
            }
            // Clip contraction: every stored value sits in its declared range.
            assert!(q.iter().all(|x| x.abs() <= cap + 1e-12));
            v_next = v.clone();
            q_all[h] = q;
            v_all[h] = v;
        }
        let mut value = 0.0;
        for &s in &self.data.initials {
            value += v_all[0][s];
        }
        value /= self.data.initials.len() as f64;
        Ok(PlanningOutcome { value, q: q_all, v: v_all, bonus: self.bonuses.clone() })
    }

    /// Plug-in feature expectation: coordinate (h, j) is `R` times the
    /// estimated value under the reward that pays `phi_h(s,a)_j / R` at step
    /// `h` and zero elsewhere.
    pub fn feature_expectation(&self, policy: &MarkovPolicy) -> Result<DVector<f64>> {
        let mdp = &self.lin.realization;
        let (ns, na, horizon, d) = (mdp.n_states, mdp.n_actions, mdp.horizon, self.lin.dim);
        let r_bound = mdp.bound_r;
        let mut out = DVector::zeros(horizon * d);
        for h in 0..horizon {
            for j in 0..d {
                let tables: Vec<DMatrix<f64>> = (0..horizon)
                    .map(|step| {
                        if step == h {
                            DMatrix::from_fn(ns, na, |s, a| {
                                mdp.features[h][(s * na + a, j)] / r_bound
                            })
                        } else {
                            DMatrix::zeros(ns, na)
                        }
                    })
                    .collect();
                let outcome = self.evaluate(policy, &Reward::Tables(tables))?;
                out[h * d + j] = r_bound * outcome.value;
            }
        }
        Ok(out)
    }
}

/// One-shot wrappers around [`PlanningContext`].
pub fn regime_planning(
    lin: &LinearMdp,
    data: &ExplorationDataset,
    policy: &MarkovPolicy,
    reward: &Reward,
    cfg: &LsviConfig,
) -> Result<PlanningOutcome> {
    PlanningContext::new(lin, data, cfg.clone())?.evaluate(policy, reward)
}

pub fn estimate_feature_expectations(
    lin: &LinearMdp,
    data: &ExplorationDataset,
    policy: &MarkovPolicy,
    cfg: &LsviConfig,
) -> Result<DVector<f64>> {
    PlanningContext::new(lin, data, cfg.clone())?.feature_expectation(policy)
}

/// Count the (h, s, a) grid points where the optimism sandwich
/// `Q^{r,pi}_h <= Q_hat_h <= r_h + P* V_hat_{h+1} + 2 b_h` holds.
/// Returns (holds, total).
pub fn sandwich_counts(
    lin: &LinearMdp,
    outcome: &PlanningOutcome,
    reward: &Reward,
    policy: &MarkovPolicy,
) -> Result<(usize, usize)> {
    let mdp = &lin.realization;
    let (exact_q, _) = crate::mdp::q_values(mdp, &mdp.transitions, reward, policy)?;
    let (ns, na, horizon) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let mut ok = 0usize;
    let total = horizon * ns * na;
    for h in 0..horizon {
        let r = reward.table(mdp, h);
        for s in 0..ns {
            for a in 0..na {
                let mut upper = r[(s, a)] + 2.0 * outcome.bonus[h][(s, a)];
                if h + 1 < horizon {
                    let row = mdp.transitions.steps[h].row(s * na + a);
                    for sp in 0..ns {
                        upper += row[sp] * outcome.v[h + 1][sp];
                    }
                }
                let qhat = outcome.q[h][(s, a)];
                if exact_q[h][(s, a)] <= qhat + 1e-9 && qhat <= upper + 1e-9 {
                    ok += 1;
                }
            }
        }
    }
    Ok((ok, total))
}

pub fn sandwich_fraction(
    lin: &LinearMdp,
    outcome: &PlanningOutcome,
    reward: &Reward,
    policy: &MarkovPolicy,
) -> Result<f64> {
    let (ok, total) = sandwich_counts(lin, outcome, reward, policy)?;
    Ok(ok as f64 / total as f64)
}

/// Entropy-regularized backward recursion. Returns the softmax-optimal
/// policy and its regularized Q tables. On linear instances the policy is
/// log-linear; use [`soft_vi_log_linear`] to recover the parameters.
pub fn soft_value_iteration(
    mdp: &TabularMdp,
    reward: &Reward,
    alpha: f64,
) -> Result<(MarkovPolicy, Vec<DMatrix<f64>>, Vec<DVector<f64>>)> {
    if alpha <= 0.0 {
        return Err(RegimeError::config("soft value iteration needs alpha > 0"));
    }
    let (ns, na, horizon) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let mut q_all = vec![DMatrix::zeros(ns, na); horizon];
    let mut v_all = vec![DVector::zeros(ns); horizon];
    let mut tables = vec![DMatrix::zeros(ns, na); horizon];
    let mut v_next = DVector::zeros(ns);
    for h in (0..horizon).rev() {
        let r = reward.table(mdp, h);
        let mut q = DMatrix::zeros(ns, na);
        let mut v = DVector::zeros(ns);
        for s in 0..ns {
            for a in 0..na {
                let mut future = 0.0;
                if h + 1 < horizon {
                    let row = mdp.transitions.steps[h].row(s * na + a);
                    for sp in 0..ns {
                        future += row[sp] * v_next[sp];
                    }
                }
                q[(s, a)] = r[(s, a)] + future;
            }
            // Log-sum-exp with max shift.
            let m = (0..na).map(|a| q[(s, a)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for a in 0..na {
                let e = ((q[(s, a)] - m) / alpha).exp();
                tables[h][(s, a)] = e;
                z += e;
            }
            for a in 0..na {
                tables[h][(s, a)] /= z;
            }
            v[s] = m + alpha * z.ln();
        }
        v_next = v.clone();
        q_all[h] = q;
        v_all[h] = v;
    }
    let policy = MarkovPolicy::from_tables(tables)?;
    Ok((policy, q_all, v_all))
}

/// Soft value iteration on a linear instance, with the log-linear parameters
/// `zeta_h = w_h / alpha` recovered by least squares on the feature grid
/// (exact whenever the regularized Q is feature-representable).
pub fn soft_vi_log_linear(
    lin: &LinearMdp,
    reward: &Reward,
    alpha: f64,
) -> Result<MarkovPolicy> {
    let mdp = &lin.realization;
    let (_, q_all, _) = soft_value_iteration(mdp, reward, alpha)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut zeta = Vec::with_capacity(mdp.horizon);
    for h in 0..mdp.horizon {
        let phi = &mdp.features[h];
        let q_flat = DVector::from_iterator(
            ns * na,
            (0..ns * na).map(|row| q_all[h][(row / na, row % na)]),
        );
        let gram = phi.transpose() * phi + DMatrix::identity(lin.dim, lin.dim) * 1e-12;
        let w = Cholesky::new(gram)
            .ok_or_else(|| RegimeError::config("singular feature grid"))?
            .solve(&(phi.transpose() * &q_flat));
        zeta.push(w / alpha);
    }
    let bound_w = zeta.iter().map(|z: &DVector<f64>| z.norm()).fold(0.0, f64::max);
    MarkovPolicy::log_linear(&mdp.features, ns, na, zeta, bound_w)
}

/// Serialize a factored instance: the tabular realization plus the measure
/// matrices under `mdp.measures.h<k>`.
pub fn linear_to_kv(lin: &LinearMdp) -> crate::textio::KvDoc {
    let mut doc = lin.realization.to_kv();
    for h in 0..lin.realization.horizon {
        let flat = crate::mdp::flatten_row_major(&lin.measures[h]);
        doc.set_floats(&format!("mdp.measures.h{}", h + 1), &flat);
    }
    doc
}

pub fn linear_from_kv(doc: &crate::textio::KvDoc) -> Result<LinearMdp> {
    let realization = TabularMdp::from_kv(doc)?;
    let dim = realization.feature_dim();
    let mut measures = Vec::with_capacity(realization.horizon);
    for h in 0..realization.horizon {
        let flat = doc
            .get_f64_list(&format!("mdp.measures.h{}", h + 1))?
            .ok_or_else(|| RegimeError::config(format!("missing measures at step {}", h + 1)))?;
        measures.push(crate::mdp::unflatten_row_major(&flat, dim, realization.n_states)?);
    }
    let lin = LinearMdp { dim, measures, realization };
    lin.validate()?;
    Ok(lin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_policy, random_tabular, TabularSpec};
    use crate::mdp::{feature_expectation, optimal_policy, policy_value};
    use crate::seeded_rng;

    fn small_linear(seed: u64) -> LinearMdp {
        generate_linear_mdp(3, 4, 2, 3, 1.5, &mut seeded_rng(seed, 0)).unwrap()
    }

    #[test]
    fn generated_instances_factor_exactly() {
        let lin = small_linear(0);
        lin.validate().unwrap();
        for table in &lin.realization.transitions.steps {
            for row in 0..table.nrows() {
                assert!((table.row(row).sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_hot_factorization_reproduces_tabular() {
        let spec = TabularSpec { n_states: 3, n_actions: 2, horizon: 3, ..Default::default() };
        let mdp = random_tabular(&spec, &mut seeded_rng(1, 0)).unwrap();
        let lin = tabular_as_linear(&mdp).unwrap();
        for h in 0..mdp.horizon {
            let product = &lin.realization.features[h] * &lin.measures[h];
            assert!((&product - &mdp.transitions.steps[h]).abs().max() < 1e-14);
            // Rewards agree too.
            for s in 0..mdp.n_states {
                for a in 0..mdp.n_actions {
                    assert!((lin.realization.reward(h, s, a) - mdp.reward(h, s, a)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transition_rank_is_bounded_by_latent_dimension() {
        let lin = generate_linear_mdp(2, 3, 2, 2, 1.0, &mut seeded_rng(2, 0)).unwrap();
        for table in &lin.realization.transitions.steps {
            let rank = table.clone().svd(false, false).rank(1e-9);
            assert!(rank <= 2, "rank {rank}");
        }
    }

    #[test]
    fn first_exploration_episode_is_bonus_greedy() {
        // With an empty dataset the Q function is driven purely by the
        // bonus, so the first policy picks argmax_a ||phi||_2 (no clipping
        // at this beta).
        let lin = small_linear(3);
        let mdp = &lin.realization;
        let cfg = LsviConfig::new(0.1, 1.0);
        let mut rng = seeded_rng(4, 0);
        let data = regime_exploration(&lin, 1, &cfg, &mut rng);
        for h in 0..mdp.horizon {
            let (s, a, _) = data.per_step[h][0];
            let best = (0..mdp.n_actions)
                .max_by(|&x, &y| {
                    mdp.feature(h, s, x)
                        .norm()
                        .partial_cmp(&mdp.feature(h, s, y).norm())
                        .unwrap()
                })
                .unwrap();
            assert_eq!(a, best, "step {h}");
        }
    }

    #[test]
    fn exploration_covers_the_feature_space() {
        let lin = generate_linear_mdp(4, 5, 2, 3, 1.0, &mut seeded_rng(5, 0)).unwrap();
        let cfg = LsviConfig::new(confidence_beta(1.0, 4, 2000, 3, 1.0, 0.05), 1.0);
        let mut rng = seeded_rng(6, 0);
        let data = regime_exploration(&lin, 2000, &cfg, &mut rng);
        let mdp = &lin.realization;
        // log det Lambda is non-decreasing as episodes accumulate (psd
        // rank-one additions) and the final leverage is small everywhere.
        let counts = data.count_matrices(mdp.n_states, mdp.n_actions);
        for h in 0..mdp.horizon {
            let mut lam = DMatrix::identity(4, 4);
            for s in 0..mdp.n_states {
                for a in 0..mdp.n_actions {
                    let n: f64 = counts[h].row(s * mdp.n_actions + a).sum();
                    let phi = mdp.feature(h, s, a);
                    lam += (&phi * phi.transpose()) * n;
                }
            }
            let chol = Cholesky::new(lam).unwrap();
            for s in 0..mdp.n_states {
                for a in 0..mdp.n_actions {
                    let phi = mdp.feature(h, s, a);
                    let lev = phi.dot(&chol.solve(&phi));
                    assert!(lev <= 0.1, "leverage {lev} at (h={h}, s={s}, a={a})");
                }
            }
        }
    }

    #[test]
    fn log_det_grows_with_more_episodes() {
        let lin = small_linear(7);
        let cfg = LsviConfig::new(1.0, 1.0);
        let logdet_at = |k: usize| -> Vec<f64> {
            let mut rng = seeded_rng(8, 0);
            let data = regime_exploration(&lin, k, &cfg, &mut rng);
            let mdp = &lin.realization;
            let counts = data.count_matrices(mdp.n_states, mdp.n_actions);
            (0..mdp.horizon)
                .map(|h| {
                    let mut lam = DMatrix::identity(lin.dim, lin.dim);
                    for row in 0..mdp.n_states * mdp.n_actions {
                        let n: f64 = counts[h].row(row).sum();
                        let phi = mdp.features[h].row(row).transpose();
                        lam += (&phi * phi.transpose()) * n;
                    }
                    Cholesky::new(lam).unwrap().l().diagonal().iter().map(|x| 2.0 * x.ln()).sum()
                })
                .collect()
        };
        let small = logdet_at(20);
        let large = logdet_at(200);
        for h in 0..small.len() {
            assert!(large[h] >= small[h] - 1e-9);
        }
    }

    #[test]
    fn zero_reward_zero_bonus_plans_to_zero() {
        let lin = small_linear(9);
        let mut rng = seeded_rng(10, 0);
        let data = regime_exploration(&lin, 50, &LsviConfig::new(1.0, 1.0), &mut rng);
        let cfg = LsviConfig::new(0.0, 1.0);
        let pi = MarkovPolicy::uniform(3, 4, 2);
        let out = regime_planning(&lin, &data, &pi, &Reward::zero(&lin.realization), &cfg).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(regime_planning(
            &lin,
            &ExplorationDataset::default(),
            &pi,
            &Reward::zero(&lin.realization),
            &cfg
        )
        .is_err());
        // A zero-episode exploration call is allowed and returns nothing.
        let empty = regime_exploration(&lin, 0, &LsviConfig::new(1.0, 1.0), &mut rng);
        assert_eq!(empty.episodes(), 0);
    }

    #[test]
    fn flipping_the_bonus_sign_is_pessimistic() {
        let lin = small_linear(14);
        let mut rng = seeded_rng(15, 0);
        let data = regime_exploration(&lin, 100, &LsviConfig::new(1.0, 1.0), &mut rng);
        let pi = random_policy(&lin.realization, &mut rng);
        let reward = lin.realization.true_reward();
        let beta = 0.5;
        let optimistic =
            regime_planning(&lin, &data, &pi, &reward, &LsviConfig::new(beta, 1.0)).unwrap();
        let mut cfg = LsviConfig::new(beta, 1.0);
        cfg.bonus_sign = -1.0;
        let pessimistic = regime_planning(&lin, &data, &pi, &reward, &cfg).unwrap();
        assert!(pessimistic.value <= optimistic.value + 1e-12);
    }

    #[test]
    fn dense_data_recovers_exact_values_and_features() {
        let spec = TabularSpec { n_states: 4, n_actions: 2, horizon: 3, r_max: 2.0, ..Default::default() };
        let mdp = random_tabular(&spec, &mut seeded_rng(11, 0)).unwrap();
        let lin = tabular_as_linear(&mdp).unwrap();
        let mut rng = seeded_rng(12, 0);
        let data = dense_dataset(&lin, 200, &mut rng);
        let cfg = LsviConfig::new(0.0, 1e-6);
        let ctx = PlanningContext::new(&lin, &data, cfg).unwrap();
        let pi = random_policy(&lin.realization, &mut rng);
        let reward = lin.realization.true_reward();
        let out = ctx.evaluate(&pi, &reward).unwrap();
        let exact = policy_value(&lin.realization, &lin.realization.transitions, &reward, &pi).unwrap();
        assert!((out.value - exact).abs() < 0.1, "{} vs {exact}", out.value);

        let est_phi = ctx.feature_expectation(&pi).unwrap();
        let exact_phi =
            feature_expectation(&lin.realization, &lin.realization.transitions, &pi).unwrap();
        let gap = (&est_phi - &exact_phi).abs().max();
        assert!(gap < 0.1, "max coordinate gap {gap}");
        // One-hot targets are nonnegative in this mode.
        assert!(est_phi.iter().all(|x| *x >= -1e-9));

        // Identical policies share the computation bit for bit.
        let again = ctx.feature_expectation(&pi.clone()).unwrap();
        assert_eq!(est_phi, again);
    }

    #[test]
    fn optimism_holds_with_confidence_scale_bonus() {
        let mut ok_runs = 0;
        for seed in 0..10 {
            let spec = TabularSpec { n_states: 4, n_actions: 2, horizon: 3, r_max: 1.0, ..Default::default() };
            let mdp = random_tabular(&spec, &mut seeded_rng(100 + seed, 0)).unwrap();
            let lin = tabular_as_linear(&mdp).unwrap();
            let mut rng = seeded_rng(200 + seed, 0);
            let k = 300;
            let beta_ex = confidence_beta(1.0, lin.dim, k, 3, 1.0, 0.05);
            let data = regime_exploration(&lin, k, &LsviConfig::new(beta_ex, 1.0), &mut rng);
            let beta_pl = confidence_beta(1.0, lin.dim, k, 3, 1.0, 0.05);
            let pi = random_policy(&lin.realization, &mut rng);
            // Per-step rewards scaled into [-1, 1].
            let tables: Vec<DMatrix<f64>> = (0..3)
                .map(|h| {
                    let t = lin.realization.reward_tables()[h].clone();
                    let m = t.abs().max().max(1.0);
                    t / m
                })
                .collect();
            let reward = Reward::Tables(tables);
            let out =
                regime_planning(&lin, &data, &pi, &reward, &LsviConfig::new(beta_pl, 1.0)).unwrap();
            let frac = sandwich_fraction(&lin, &out, &reward, &pi).unwrap();
            if frac >= 0.95 {
                ok_runs += 1;
            }
            // Optimism on the value itself.
            let exact =
                policy_value(&lin.realization, &lin.realization.transitions, &reward, &pi).unwrap();
            let init_est: f64 = lin.realization.transitions.initial.dot(&out.v[0]);
            assert!(init_est >= exact - 1e-9, "optimism failed: {init_est} < {exact}");
        }
        assert!(ok_runs >= 9, "sandwich held in only {ok_runs}/10 runs");
    }

    #[test]
    fn soft_vi_limits_and_log_linear_recovery() {
        let spec = TabularSpec { n_states: 4, n_actions: 3, horizon: 3, r_max: 2.0, ..Default::default() };
        let mdp = random_tabular(&spec, &mut seeded_rng(13, 0)).unwrap();
        let reward = mdp.true_reward();
        // Large alpha: near-uniform policy.
        let (pi_big, _, _) = soft_value_iteration(&mdp, &reward, 1e6).unwrap();
        for h in 0..mdp.horizon {
            for s in 0..mdp.n_states {
                for a in 0..mdp.n_actions {
                    assert!((pi_big.prob(h, s, a) - 1.0 / 3.0).abs() < 1e-4);
                }
            }
        }
        // Small alpha: approaches the greedy optimum.
        let (pi_small, _, _) = soft_value_iteration(&mdp, &reward, 1e-6).unwrap();
        let (greedy, _) = optimal_policy(&mdp, &mdp.transitions, &reward).unwrap();
        for h in 0..mdp.horizon {
            for s in 0..mdp.n_states {
                let g = greedy.argmax_action(h, s);
                assert!(pi_small.prob(h, s, g) > 0.999);
            }
        }
        assert!(soft_value_iteration(&mdp, &reward, 0.0).is_err());

        // Log-linear recovery reproduces the softmax policy exactly on a
        // linear instance.
        let lin = tabular_as_linear(&mdp).unwrap();
        let alpha = 0.3;
        let from_zeta = soft_vi_log_linear(&lin, &reward, alpha).unwrap();
        let (direct, _, _) = soft_value_iteration(&mdp, &reward, alpha).unwrap();
        for h in 0..mdp.horizon {
            assert!((from_zeta.table(h) - direct.table(h)).abs().max() < 1e-9);
        }
    }

    #[test]
    fn soft_vi_bias_bound_is_deterministic() {
        for seed in 0..10 {
            let spec = TabularSpec { n_states: 4, n_actions: 2, horizon: 3, r_max: 1.5, ..Default::default() };
            let mdp = random_tabular(&spec, &mut seeded_rng(300 + seed, 0)).unwrap();
            let reward = mdp.true_reward();
            let (_, v_greedy) = optimal_policy(&mdp, &mdp.transitions, &reward).unwrap();
            for &alpha in &[0.01, 0.1, 1.0] {
                let (pi_alpha, _, _) = soft_value_iteration(&mdp, &reward, alpha).unwrap();
                let v_alpha =
                    policy_value(&mdp, &mdp.transitions, &reward, &pi_alpha).unwrap();
                let bound = alpha * mdp.horizon as f64 * (mdp.n_actions as f64).ln();
                assert!(
                    v_greedy - v_alpha <= bound + 1e-9,
                    "seed {seed} alpha {alpha}: {} > {bound}",
                    v_greedy - v_alpha
                );
            }
        }
    }
}
