//! Full trajectory-comparison pipeline on one instance, with known and then
//! learned transitions.

use regime::driver::{run_regime_tabular, TabularRunConfig, TransitionMode};
use regime::instances::{random_tabular, TabularSpec};
use regime::seeded_rng;

fn main() {
    let spec = TabularSpec {
        n_states: 6,
        n_actions: 3,
        horizon: 4,
        r_max: 2.0,
        transition_alpha: 0.3,
        ..Default::default()
    };
    let mdp = random_tabular(&spec, &mut seeded_rng(7, 1000)).unwrap();
    println!(
        "instance: |S|={}, |A|={}, H={}, r_max={}, kappa={:.1}",
        mdp.n_states,
        mdp.n_actions,
        mdp.horizon,
        mdp.r_max,
        regime::oracle::kappa(mdp.r_max)
    );

    for n in [100usize, 400, 1600] {
        let cfg = TabularRunConfig::new(n, 16.0, 0);
        let report = run_regime_tabular(&mdp, &cfg).unwrap();
        println!(
            "known P,  N = {n:>4}: gap {:.4}, theta error {:.3}, design objective {:.3} -> {:.3}",
            report.gap,
            report.theta_error.unwrap(),
            report.round_objectives.first().unwrap(),
            report.round_objectives.last().unwrap()
        );
    }

    let mut cfg = TabularRunConfig::new(800, 16.0, 0);
    cfg.transition_mode = TransitionMode::RewardFree { episode_budget: 10_000, eps_target: 0.05 };
    let report = run_regime_tabular(&mdp, &cfg).unwrap();
    println!(
        "learned P, N =  800: gap {:.4} with audited eps' {:.4} after {} episodes",
        report.gap,
        report.audited_eps,
        report.n_trajectories - 2 * 800
    );
    let audit = report.elliptical.unwrap();
    println!(
        "elliptical potential over the design rounds: {:.2} <= {:.2} ({})",
        audit.lhs,
        audit.rhs,
        if audit.pass { "pass" } else { "FAIL" }
    );
}
