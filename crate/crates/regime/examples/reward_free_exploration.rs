//! Count-bonus reward-free model learning and the model-error audits that
//! replace a formal certificate.

use regime::instances::{random_policy, random_tabular, TabularSpec};
use regime::reward_free::{
    audited_eps, explore_and_estimate, feature_gap_audit, model_error_audit, perturbed_model,
    visitation_error_audit, ExploreConfig,
};
use regime::seeded_rng;

fn main() {
    let spec = TabularSpec { n_states: 5, n_actions: 2, horizon: 4, ..Default::default() };
    let mdp = random_tabular(&spec, &mut seeded_rng(2, 0)).unwrap();
    let mut rng = seeded_rng(2, 1);

    for budget in [100usize, 1_000, 10_000] {
        let est = explore_and_estimate(&mdp, 0.05, 0.05, budget, &ExploreConfig::default(), &mut rng);
        let panel: Vec<_> = (0..20).map(|t| random_policy(&mdp, &mut seeded_rng(3, t))).collect();
        let eps = audited_eps(&mdp, &est.model, &panel).unwrap();
        println!("budget {budget:>6}: audited eps' = {eps:.4}");
        if budget == 10_000 {
            // Checkpoints (model + counts) serialize as JSON.
            let json = serde_json::to_string(&est).unwrap();
            println!("checkpoint serializes to {} bytes of JSON", json.len());
        }
    }

    // Audits are exact computations; demonstrate them on a hand-perturbed
    // model whose every row sits at l1 distance 0.05 from the truth.
    let eps_row = 0.05;
    let perturbed = perturbed_model(&mdp, eps_row);
    let pi = random_policy(&mdp, &mut rng);
    let audit = model_error_audit(&mdp, &perturbed, &pi).unwrap();
    println!(
        "perturbed model: initial TV {:.3}, expected per-step TV {:?}",
        audit.initial_tv,
        audit.expected_tv.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>()
    );
    let visit = visitation_error_audit(&mdp, &perturbed, &pi, eps_row).unwrap();
    println!(
        "visitation propagation ||d_h - d_hat_h||_1 <= h * eps': {:?} -> {}",
        visit.per_step_tv.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
        if visit.pass { "pass" } else { "FAIL" }
    );
    let dir = nalgebra::DVector::from_element(mdp.stacked_dim(), mdp.bound_b);
    let gap = feature_gap_audit(&mdp, &perturbed, &pi, &dir, eps_row).unwrap();
    println!(
        "feature gap |<phi - phi_hat, v>| = {:.4} <= {:.4} -> {}",
        gap.gap,
        gap.bound,
        if gap.pass { "pass" } else { "FAIL" }
    );
}
