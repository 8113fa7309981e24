//! The experimental-design loop in isolation: greedy pair selection by
//! inverse-covariance norm, the elliptical-potential audit, and the
//! pair-history record stream.

use regime::design::{
    elliptical_potential_audit, history_records, select_pair_exhaustive, DesignState,
};
use regime::instances::{random_tabular, TabularSpec};
use regime::mdp::{enumerate_deterministic_policies, feature_expectation};
use regime::oracle::write_records;
use regime::seeded_rng;

fn main() {
    let spec = TabularSpec { n_states: 3, n_actions: 2, horizon: 2, ..Default::default() };
    let mdp = random_tabular(&spec, &mut seeded_rng(1, 0)).unwrap();

    // Candidate features: all deterministic policies of this tiny instance.
    let candidates = enumerate_deterministic_policies(&mdp, 1 << 16).unwrap();
    let phis: Vec<_> = candidates
        .iter()
        .map(|p| feature_expectation(&mdp, &mdp.transitions, p).unwrap())
        .collect();
    println!("{} candidate policies", candidates.len());

    let lambda = 4.0 * mdp.horizon as f64;
    let mut state = DesignState::new(mdp.stacked_dim(), lambda).unwrap();
    let mut diffs = Vec::new();
    let mut objectives = Vec::new();
    for round in 0..25 {
        let ((i, j), objective) = select_pair_exhaustive(&state, &phis).unwrap();
        let diff = &phis[i] - &phis[j];
        state.add_pair(&diff);
        if round < 5 {
            println!("round {round}: pair ({i}, {j}), objective {objective:.4}");
        }
        diffs.push(diff);
        objectives.push(objective);
    }
    println!("objective decayed from {:.4} to {:.4}", objectives[0], objectives[24]);

    let audit = elliptical_potential_audit(lambda, &diffs).unwrap();
    println!(
        "elliptical potential: lhs {:.3} <= rhs {:.3} -> {}",
        audit.lhs,
        audit.rhs,
        if audit.pass { "pass" } else { "FAIL" }
    );

    // Pair history as a record stream (first three rows shown).
    let records = history_records(lambda, &diffs[..3], &objectives[..3]).unwrap();
    let mut buf = Vec::new();
    write_records(&records, &mut buf).unwrap();
    print!("{}", String::from_utf8(buf).unwrap());
}
