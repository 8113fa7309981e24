//! Exact tabular machinery on a two-state chain: occupancy measures,
//! feature expectations, policy values, greedy planning, and the
//! performance-difference identity.

use regime::instances::chain_mdp;
use regime::mdp::{
    feature_expectation, occupancy, optimal_policy, performance_difference_audit, policy_value,
    MarkovPolicy,
};

fn main() {
    // Action 1 walks up the chain and earns 0.5 per step; action 0 idles.
    let mdp = chain_mdp(3, 0.5);
    let up = MarkovPolicy::deterministic(&vec![vec![1; 2]; 3], 2);
    let idle = MarkovPolicy::deterministic(&vec![vec![0; 2]; 3], 2);

    let occ = occupancy(&mdp, &mdp.transitions, &up).unwrap();
    println!("occupancy under the always-up policy:");
    for (h, d) in occ.iter().enumerate() {
        println!("  step {}: {:?}", h + 1, d.as_slice());
    }

    let phi = feature_expectation(&mdp, &mdp.transitions, &up).unwrap();
    println!("stacked feature expectation: {:?}", phi.as_slice());

    let reward = mdp.true_reward();
    let v_up = policy_value(&mdp, &mdp.transitions, &reward, &up).unwrap();
    let v_idle = policy_value(&mdp, &mdp.transitions, &reward, &idle).unwrap();
    println!("value(up) = {v_up:.3}, value(idle) = {v_idle:.3}");

    let (best, v_star) = optimal_policy(&mdp, &mdp.transitions, &reward).unwrap();
    println!(
        "greedy DP: optimal value {v_star:.3}, first-step action at s=0 is {}",
        best.argmax_action(0, 0)
    );

    let residual = performance_difference_audit(&mdp, &reward, &idle, &up).unwrap();
    println!("performance-difference identity residual: {residual:.2e}");
}
