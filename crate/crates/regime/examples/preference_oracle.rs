//! Simulated Bradley-Terry feedback: label frequencies against the logistic
//! curve, the nonlinearity constant kappa, and preference record streams.

use regime::instances::chain_mdp;
use regime::mdp::MarkovPolicy;
use regime::oracle::{
    kappa, sigmoid, trajectory_preference, trajectory_preference_prob, write_records,
    PreferenceRecord, TrajectoryQuery,
};
use regime::seeded_rng;

fn main() {
    let mdp = chain_mdp(2, 0.5);
    let mut rng = seeded_rng(0, 0);
    let up = MarkovPolicy::deterministic(&vec![vec![1; 2]; 2], 2);
    let idle = MarkovPolicy::deterministic(&vec![vec![0; 2]; 2], 2);
    let query = TrajectoryQuery {
        left: mdp.sample_trajectory(&idle, &mut rng),
        right: mdp.sample_trajectory(&up, &mut rng),
    };
    let theta = mdp.stacked_theta();
    let p = trajectory_preference_prob(&theta, &query).unwrap();
    println!("reward gap 1.0 -> Pr[right preferred] = {p:.4} (sigmoid(1) = {:.4})", sigmoid(1.0));

    let mut ones = 0u32;
    let draws = 20_000;
    let mut records = Vec::new();
    for id in 0..draws {
        let label = trajectory_preference(&theta, &query, &mut rng).unwrap();
        ones += u32::from(label);
        if id < 3 {
            records.push(PreferenceRecord {
                id: id as u64,
                left_features: query.left.stacked.as_slice().to_vec(),
                right_features: query.right.stacked.as_slice().to_vec(),
                label,
                seed: 0,
            });
        }
    }
    println!("empirical frequency over {draws} draws: {:.4}", f64::from(ones) / f64::from(draws));

    println!("kappa(r_max=1) = {:.3}, kappa(B_adv=0.5) = {:.3}", kappa(1.0), kappa(0.5));

    println!("first records as a JSON-lines stream:");
    let mut buf = Vec::new();
    write_records(&records, &mut buf).unwrap();
    print!("{}", String::from_utf8(buf).unwrap());
}
