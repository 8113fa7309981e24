//! Simulated preference feedback.
//!
//! Trajectory comparisons follow the Bradley-Terry-Luce model: the label is 1
//! with probability `sigmoid(r(tau1) - r(tau0))` under the true linear
//! reward. Action comparisons use optimal-advantage differences instead of
//! cumulative rewards. Also houses the nonlinearity constant `kappa`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RegimeError, Result};
use crate::mdp::Trajectory;

/// Logistic arguments are clamped to this magnitude before exponentiation;
/// the function is saturated to machine precision well before 30.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Numerically safe logistic function with input clamping. Built so that
/// `sigmoid(x) + sigmoid(-x) == 1` holds exactly in floating point.
pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        1.0 - 1.0 / (1.0 + x.exp())
    }
}

/// Inverse-slope constant `2 + exp(2b) + exp(-2b)`.
///
/// The comparison logit for quantities bounded by `b` ranges over
/// `[-2b, 2b]`, and `1/sigmoid'(x) = 2 + exp(x) + exp(-x)` peaks at the
/// endpoints. Used with `b = r_max` for trajectory comparisons and
/// `b = B_adv` for action comparisons.
pub fn kappa(bound: f64) -> f64 {
    assert!(bound >= 0.0, "kappa bound must be nonnegative");
    2.0 + (2.0 * bound).exp() + (-2.0 * bound).exp()
}

/// A trajectory comparison query `(tau0, tau1)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryQuery {
    pub left: Trajectory,
    pub right: Trajectory,
}

/// An action comparison query `(s, a0, a1)` at step `h` (0-based).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ActionQuery {
    pub step: usize,
    pub state: usize,
    pub left: usize,
    pub right: usize,
}

/// `Pr[o = 1]` for a trajectory query under the stacked reward parameter.
pub fn trajectory_preference_prob(
    theta_stacked: &DVector<f64>,
    query: &TrajectoryQuery,
) -> Result<f64> {
    if query.left.stacked.len() != theta_stacked.len()
        || query.right.stacked.len() != theta_stacked.len()
    {
        return Err(RegimeError::config(
            "trajectory feature dimension does not match reward parameter",
        ));
    }
    let logit = theta_stacked.dot(&query.right.stacked) - theta_stacked.dot(&query.left.stacked);
    Ok(sigmoid(logit))
}

/// Draw a Bradley-Terry label for a trajectory query. Deterministic given the
/// randomness source.
pub fn trajectory_preference(
    theta_stacked: &DVector<f64>,
    query: &TrajectoryQuery,
    rng: &mut impl Rng,
) -> Result<u8> {
    let p = trajectory_preference_prob(theta_stacked, query)?;
    Ok(u8::from(rng.gen::<f64>() < p))
}

/// `Pr[o = 1]` for an action query under the optimal-advantage tables.
pub fn action_preference_prob(advantage: &[DMatrix<f64>], query: &ActionQuery) -> f64 {
    let a = &advantage[query.step];
    sigmoid(a[(query.state, query.right)] - a[(query.state, query.left)])
}

pub fn action_preference(
    advantage: &[DMatrix<f64>],
    query: &ActionQuery,
    rng: &mut impl Rng,
) -> u8 {
    u8::from(rng.gen::<f64>() < action_preference_prob(advantage, query))
}

/// One labeled trajectory comparison, ready for serialization as a record
/// stream (JSON lines).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub id: u64,
    pub left_features: Vec<f64>,
    pub right_features: Vec<f64>,
    pub label: u8,
    pub seed: u64,
}

/// One labeled per-step action comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionPreferenceRecord {
    pub id: u64,
    pub step: usize,
    pub state: usize,
    pub left_action: usize,
    pub right_action: usize,
    pub left_features: Vec<f64>,
    pub right_features: Vec<f64>,
    pub label: u8,
    pub seed: u64,
}

pub fn write_records<T: Serialize>(records: &[T], mut w: impl std::io::Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<T: for<'de> Deserialize<'de>>(r: impl std::io::BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::chain_mdp;
    use crate::mdp::{MarkovPolicy, TabularMdp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn queries_for(mdp: &TabularMdp, seed: u64) -> (TrajectoryQuery, TrajectoryQuery) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let up = MarkovPolicy::deterministic(&vec![vec![1; mdp.n_states]; mdp.horizon], 2);
        let stay = MarkovPolicy::deterministic(&vec![vec![0; mdp.n_states]; mdp.horizon], 2);
        let tau_up = mdp.sample_trajectory(&up, &mut rng);
        let tau_stay = mdp.sample_trajectory(&stay, &mut rng);
        (
            TrajectoryQuery { left: tau_stay.clone(), right: tau_up.clone() },
            TrajectoryQuery { left: tau_up, right: tau_stay },
        )
    }

    #[test]
    fn identical_trajectories_are_a_coin_flip() {
        let mdp = chain_mdp(2, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pi = MarkovPolicy::deterministic(&vec![vec![1; 2]; 2], 2);
        let tau = mdp.sample_trajectory(&pi, &mut rng);
        let q = TrajectoryQuery { left: tau.clone(), right: tau };
        let p = trajectory_preference_prob(&mdp.stacked_theta(), &q).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn saturated_logit_prefers_right_nearly_surely() {
        // Reward gap far beyond the clamp: empirical frequency >= 0.999.
        let mdp = chain_mdp(2, 0.5);
        let theta = &mdp.stacked_theta() * 200.0;
        let (q, _) = queries_for(&mdp, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ones = 0;
        for _ in 0..10_000 {
            ones += u32::from(trajectory_preference(&theta, &q, &mut rng).unwrap());
        }
        assert!(ones as f64 / 10_000.0 >= 0.999);
    }

    #[test]
    fn unit_reward_gap_matches_sigmoid_of_one() {
        // The chain with a=1 rewarded 0.5 per step gives r(tau_up) - r(tau_stay) = 1.
        let mdp = chain_mdp(2, 0.5);
        let (q, _) = queries_for(&mdp, 5);
        let diff = q.right.cumulative_reward(&mdp) - q.left.cumulative_reward(&mdp);
        assert!((diff - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ones = 0u64;
        for _ in 0..100_000 {
            ones += u64::from(trajectory_preference(&mdp.stacked_theta(), &q, &mut rng).unwrap());
        }
        let freq = ones as f64 / 100_000.0;
        assert!((freq - sigmoid(1.0)).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn complement_symmetry_is_exact_on_probabilities() {
        let mdp = chain_mdp(3, 0.37);
        let (forward, swapped) = queries_for(&mdp, 9);
        let theta = mdp.stacked_theta();
        let p = trajectory_preference_prob(&theta, &forward).unwrap();
        let q = trajectory_preference_prob(&theta, &swapped).unwrap();
        assert_eq!(p + q, 1.0);
    }

    #[test]
    fn seeded_labels_are_reproducible() {
        let mdp = chain_mdp(3, 0.2);
        let (q, _) = queries_for(&mdp, 13);
        let theta = mdp.stacked_theta();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64)
                .map(|_| trajectory_preference(&theta, &q, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn action_preference_matches_advantage_gap() {
        let mdp = chain_mdp(2, 0.5);
        let adv = crate::mdp::optimal_advantage(&mdp).unwrap();
        // a=1 is optimal everywhere; the suboptimal action's advantage is the
        // negated per-state gap.
        let q = ActionQuery { step: 0, state: 0, left: 0, right: 1 };
        let gap = adv[0][(0, 1)] - adv[0][(0, 0)];
        assert!((gap - 0.5).abs() < 1e-12);
        let p = action_preference_prob(&adv, &q);
        assert!((p - sigmoid(0.5)).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut ones = 0u64;
        for _ in 0..100_000 {
            ones += u64::from(action_preference(&adv, &q, &mut rng));
        }
        let freq = ones as f64 / 100_000.0;
        assert!((freq - sigmoid(0.5)).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn equal_actions_and_swaps() {
        let mdp = chain_mdp(2, 0.5);
        let adv = crate::mdp::optimal_advantage(&mdp).unwrap();
        let same = ActionQuery { step: 0, state: 0, left: 1, right: 1 };
        assert_eq!(action_preference_prob(&adv, &same), 0.5);
        let q = ActionQuery { step: 1, state: 1, left: 0, right: 1 };
        let swapped = ActionQuery { step: 1, state: 1, left: 1, right: 0 };
        let p = action_preference_prob(&adv, &q);
        assert!((action_preference_prob(&adv, &swapped) - (1.0 - p)).abs() < 1e-15);
    }

    #[test]
    fn kappa_closed_form_and_monotonicity() {
        assert_eq!(kappa(0.0), 4.0);
        // Grid-maximization oracle: the comparison logit for two quantities
        // each bounded by b ranges over [-2b, 2b]; maximize 1/sigmoid' there.
        for &bound in &[0.3, 1.0, 2.0] {
            let mut sup = f64::NEG_INFINITY;
            let n = 10_000;
            for i in 0..=n {
                let x = -2.0 * bound + 4.0 * bound * (i as f64) / (n as f64);
                let s = sigmoid(x);
                sup = sup.max(1.0 / (s * (1.0 - s)));
            }
            assert!((sup - kappa(bound)).abs() < 1e-9, "bound {bound}");
        }
        let mut prev = 0.0;
        for i in 0..20 {
            let k = kappa(i as f64 * 0.25);
            assert!(k >= prev);
            prev = k;
        }
        // kappa_adv <= kappa whenever B_adv <= r_max.
        assert!(kappa(0.5) <= kappa(2.0));
    }

    #[test]
    fn record_streams_round_trip() {
        let records = vec![
            PreferenceRecord {
                id: 0,
                left_features: vec![0.0, 1.0],
                right_features: vec![1.0, 0.0],
                label: 1,
                seed: 7,
            },
            PreferenceRecord {
                id: 1,
                left_features: vec![0.5, 0.5],
                right_features: vec![0.25, 0.75],
                label: 0,
                seed: 7,
            },
        ];
        let mut buf = Vec::new();
        write_records(&records, &mut buf).unwrap();
        let back: Vec<PreferenceRecord> = read_records(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].label, 0);
    }
}
