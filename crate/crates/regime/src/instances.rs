//! Synthetic instance construction: fixed fixtures and seeded random
//! generators for tabular MDPs, policies, and gap-separated advantage
//! instances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{RegimeError, Result};
use crate::mdp::{MarkovPolicy, Reward, TabularMdp, TransitionModel};

/// Deterministic two-state chain: action 1 moves to state 1 (and stays
/// there), action 0 stays put. Action 1 earns `step_reward` everywhere.
/// One-hot features; the agent starts in state 0.
pub fn chain_mdp(horizon: usize, step_reward: f64) -> TabularMdp {
    let (ns, na) = (2, 2);
    let mut table = DMatrix::zeros(ns * na, ns);
    // (s=0, a=0) -> 0, (s=0, a=1) -> 1, (s=1, a=0) -> 1, (s=1, a=1) -> 1
    table[(0, 0)] = 1.0;
    table[(1, 1)] = 1.0;
    table[(2, 1)] = 1.0;
    table[(3, 1)] = 1.0;
    let steps = vec![table; horizon];
    let initial = DVector::from_vec(vec![1.0, 0.0]);
    let features = TabularMdp::one_hot_features(horizon, ns, na);
    // One-hot parameter blocks: reward step_reward at (s, a=1) entries.
    let mut theta_h = DVector::zeros(ns * na);
    theta_h[1] = step_reward; // (s=0, a=1)
    theta_h[3] = step_reward; // (s=1, a=1)
    let theta = vec![theta_h; horizon];
    let b = step_reward.abs() * (2.0f64).sqrt();
    TabularMdp::new(
        horizon,
        ns,
        na,
        TransitionModel { initial, steps },
        features,
        theta,
        b,
        1.0,
        horizon as f64 * step_reward.abs(),
    )
    .expect("chain fixture is valid")
}

/// Draw a probability vector from a symmetric Dirichlet distribution.
/// Smaller `alpha` concentrates mass on few entries.
pub fn dirichlet(len: usize, alpha: f64, rng: &mut impl Rng) -> DVector<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    loop {
        let mut v = DVector::from_iterator(len, (0..len).map(|_| gamma.sample(rng)));
        let sum = v.sum();
        if sum > 1e-300 {
            v /= sum;
            return v;
        }
    }
}

/// Feature parameterization for generated instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// One-hot encoding of (s, a); dimension `n_states * n_actions`, R = 1.
    OneHot,
    /// Random unit vectors of the given dimension; R = 1.
    RandomUnit(usize),
}

#[derive(Debug, Clone)]
pub struct TabularSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub features: FeatureKind,
    pub r_max: f64,
    /// Dirichlet concentration for transition rows; small values give
    /// near-deterministic dynamics with anisotropic reachable geometry.
    pub transition_alpha: f64,
}

impl Default for TabularSpec {
    fn default() -> Self {
        Self {
            n_states: 4,
            n_actions: 2,
            horizon: 3,
            features: FeatureKind::OneHot,
            r_max: 1.0,
            transition_alpha: 1.0,
        }
    }
}

/// Random dense tabular MDP with rewards rescaled so the exact reachable
/// cumulative-reward magnitude equals `spec.r_max`.
pub fn random_tabular(spec: &TabularSpec, rng: &mut impl Rng) -> Result<TabularMdp> {
    let (ns, na, h) = (spec.n_states, spec.n_actions, spec.horizon);
    let steps: Vec<DMatrix<f64>> = (0..h)
        .map(|_| {
            let mut t = DMatrix::zeros(ns * na, ns);
            for row in 0..ns * na {
                t.set_row(row, &dirichlet(ns, spec.transition_alpha, rng).transpose());
            }
            t
        })
        .collect();
    let initial = dirichlet(ns, 1.0, rng);
    let (features, dim) = match spec.features {
        FeatureKind::OneHot => (TabularMdp::one_hot_features(h, ns, na), ns * na),
        FeatureKind::RandomUnit(d) => {
            let f = (0..h)
                .map(|_| {
                    let mut m = DMatrix::zeros(ns * na, d);
                    for row in 0..ns * na {
                        let mut v: DVector<f64> =
                            DVector::from_iterator(d, (0..d).map(|_| {
                                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                            }));
                        let norm = v.norm();
                        if norm > 0.0 {
                            v /= norm;
                        } else {
                            v[0] = 1.0;
                        }
                        m.set_row(row, &v.transpose());
                    }
                    m
                })
                .collect();
            (f, d)
        }
    };
    // Provisional theta, then rescale so the exact reachable cumulative
    // reward magnitude hits the requested r_max.
    let mut theta: Vec<DVector<f64>> = (0..h)
        .map(|_| {
            DVector::from_iterator(dim, (0..dim).map(|_| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            }))
        })
        .collect();
    let provisional = TabularMdp::new(
        h,
        ns,
        na,
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
        return Err(RegimeError::config(
            "degenerate instance: zero reachable reward range",
        ));
    }
    let scale = spec.r_max / mag;
    for t in &mut theta {
        *t *= scale;
    }
    let bound_b = theta.iter().map(|t| t.norm()).fold(0.0, f64::max);
    TabularMdp::new(
        h,
        ns,
        na,
        TransitionModel { initial, steps },
        features,
        theta,
        bound_b,
        1.0 + 1e-9,
        spec.r_max,
    )
}

#[derive(Debug, Clone)]
pub struct GapSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    /// Non-optimal actions receive advantages in `[-b_adv, -gap_min]`.
    pub gap_min: f64,
    /// Largest advantage magnitude; hit exactly by at least one entry.
    pub b_adv: f64,
    pub r_max: f64,
    pub transition_alpha: f64,
}

impl Default for GapSpec {
    fn default() -> Self {
        Self {
            n_states: 5,
            n_actions: 3,
            horizon: 3,
            gap_min: 0.3,
            b_adv: 0.5,
            r_max: 4.0,
            transition_alpha: 3.0,
        }
    }
}

/// Instance whose optimal advantage function is constructed exactly: every
/// non-optimal action has `A*_h(s,a) in [-b_adv, -gap_min]`, and the reward
/// is stretched along a state-value backbone (which leaves `A*` unchanged)
/// until the reachable cumulative-reward magnitude equals `r_max`.
pub fn gap_separated(spec: &GapSpec, rng: &mut impl Rng) -> Result<TabularMdp> {
    let (ns, na, h) = (spec.n_states, spec.n_actions, spec.horizon);
    if na < 2 {
        return Err(RegimeError::config("gap-separated instances need >= 2 actions"));
    }
    if !(0.0 < spec.gap_min && spec.gap_min <= spec.b_adv) {
        return Err(RegimeError::config("need 0 < gap_min <= b_adv"));
    }
    if spec.r_max <= h as f64 * spec.b_adv {
        return Err(RegimeError::config(
            "r_max must exceed horizon * b_adv so the backbone can stretch the range",
        ));
    }
    let steps: Vec<DMatrix<f64>> = (0..h)
        .map(|_| {
            let mut t = DMatrix::zeros(ns * na, ns);
            for row in 0..ns * na {
                t.set_row(row, &dirichlet(ns, spec.transition_alpha, rng).transpose());
            }
            t
        })
        .collect();
    // Uniform start so every state stays reachable for the per-step
    // comparison sampling.
    let initial = DVector::from_element(ns, 1.0 / ns as f64);

    // Advantage targets: zero for the optimal action, -[gap_min, b_adv]
    // otherwise; one entry pinned to -b_adv exactly.
    let mut advantage = vec![DMatrix::zeros(ns, na); h];
    for step in advantage.iter_mut() {
        for s in 0..ns {
            let best = rng.gen_range(0..na);
            for a in 0..na {
                if a != best {
                    step[(s, a)] = -rng.gen_range(spec.gap_min..=spec.b_adv);
                }
            }
        }
    }
    {
        let a_pin = if advantage[0][(0, 0)] == 0.0 { 1 } else { 0 };
        advantage[0][(0, a_pin)] = -spec.b_adv;
    }

    // State-value backbone; any values are consistent with the advantage
    // targets by backward construction.
    let backbone: Vec<DVector<f64>> = (0..h)
        .map(|_| {
            DVector::from_iterator(ns, (0..ns).map(|_| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            }))
        })
        .collect();

    let reward_tables = |c: f64| -> Vec<DMatrix<f64>> {
        (0..h)
            .map(|step| {
                DMatrix::from_fn(ns, na, |s, a| {
                    let future = if step + 1 < h {
                        let row = steps[step].row(s * na + a);
                        let mut acc = 0.0;
                        for sp in 0..ns {
                            acc += row[sp] * backbone[step + 1][sp];
                        }
                        acc
                    } else {
                        0.0
                    };
                    c * (backbone[step][s] - future) + advantage[step][(s, a)]
                })
            })
            .collect()
    };

    let range_mag = |c: f64| -> f64 {
        let tables = reward_tables(c);
        let mdp = raw_tabular(&steps, &initial, &tables, ns, na, h);
        let (lo, hi) = mdp.cumulative_reward_range();
        lo.abs().max(hi.abs())
    };

    // The magnitude is continuous in the backbone scale c, below r_max at
    // c = 0, and grows without bound; bisect to land exactly on r_max.
    let mut hi_c = 1.0;
    let mut guard = 0;
    while range_mag(hi_c) < spec.r_max {
        hi_c *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(RegimeError::config("backbone scale search failed"));
        }
    }
    let mut lo_c = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo_c + hi_c);
        if range_mag(mid) < spec.r_max {
            lo_c = mid;
        } else {
            hi_c = mid;
        }
    }
    let tables = reward_tables(lo_c);
    let features = TabularMdp::one_hot_features(h, ns, na);
    let theta: Vec<DVector<f64>> = tables
        .iter()
        .map(|t| {
            DVector::from_iterator(ns * na, (0..ns * na).map(|row| t[(row / na, row % na)]))
        })
        .collect();
    let bound_b = theta.iter().map(|t| t.norm()).fold(0.0, f64::max);
    TabularMdp::new(
        h,
        ns,
        na,
        TransitionModel { initial, steps },
        features,
        theta,
        bound_b,
        1.0 + 1e-9,
        spec.r_max,
    )
}

fn raw_tabular(
    steps: &[DMatrix<f64>],
    initial: &DVector<f64>,
    reward_tables: &[DMatrix<f64>],
    ns: usize,
    na: usize,
    h: usize,
) -> TabularMdp {
    let features = TabularMdp::one_hot_features(h, ns, na);
    let theta: Vec<DVector<f64>> = reward_tables
        .iter()
        .map(|t| {
            DVector::from_iterator(ns * na, (0..ns * na).map(|row| t[(row / na, row % na)]))
        })
        .collect();
    let bound_b = theta.iter().map(|t| t.norm()).fold(0.0, f64::max) + 1.0;
    TabularMdp::new(
        h,
        ns,
        na,
        TransitionModel { initial: initial.clone(), steps: steps.to_vec() },
        features,
        theta,
        bound_b,
        1.0 + 1e-9,
        f64::MAX,
    )
    .expect("raw construction is structurally valid")
}

/// Random stochastic Markov policy with Dirichlet(1) rows.
pub fn random_policy(mdp: &TabularMdp, rng: &mut impl Rng) -> MarkovPolicy {
    let tables = (0..mdp.horizon)
        .map(|_| {
            let mut t = DMatrix::zeros(mdp.n_states, mdp.n_actions);
            for s in 0..mdp.n_states {
                t.set_row(s, &dirichlet(mdp.n_actions, 1.0, rng).transpose());
            }
            t
        })
        .collect();
    MarkovPolicy::from_tables(tables).expect("dirichlet rows are stochastic")
}

/// Uniformly random deterministic Markov policy.
pub fn random_deterministic_policy(mdp: &TabularMdp, rng: &mut impl Rng) -> MarkovPolicy {
    let choices: Vec<Vec<usize>> = (0..mdp.horizon)
        .map(|_| (0..mdp.n_states).map(|_| rng.gen_range(0..mdp.n_actions)).collect())
        .collect();
    MarkovPolicy::deterministic(&choices, mdp.n_actions)
}

/// Random per-step reward tables with entries in `[-scale, scale]`.
pub fn random_reward(mdp: &TabularMdp, scale: f64, rng: &mut impl Rng) -> Reward {
    Reward::Tables(
        (0..mdp.horizon)
            .map(|_| {
                DMatrix::from_fn(mdp.n_states, mdp.n_actions, |_, _| {
                    rng.gen_range(-scale..=scale)
                })
            })
            .collect(),
    )
}
