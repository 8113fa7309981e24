//! Experiment harness: flat key-value configs, instance generation, sweep
//! execution with CSV output, and the registered property-audit suites.
//!
//! CSV schema (fixed column order, floats with 17 significant digits):
//!
//! ```text
//! grid_index,seed,n,k,gap,theta_err,theta_cov_err,n_hum,n_tra,audit_eps,final_objective,status,config_hash
//! ```
//!
//! A sweep appends one footer comment `# slope=<v> intercept=<v> points=<n>`
//! holding the log-log regression of the median gap on the grid value.
//! Wallclock goes to the plain-text summary only, so identical invocations
//! produce byte-identical CSV.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::design::{elliptical_potential_audit, leverage_sum};
use crate::driver::{
    run_regime_action, run_regime_lin, run_regime_tabular, run_uniform_baseline, ActionRunConfig,
    LinRunConfig, PiMode, RegimeReport, TabularRunConfig, TransitionMode,
};
use crate::error::{RegimeError, Result};
use crate::instances::{
    gap_separated, random_policy, random_tabular, FeatureKind, GapSpec, TabularSpec,
};
use crate::linear::{
    dense_dataset, generate_linear_mdp, regime_exploration, sandwich_fraction,
    soft_value_iteration, tabular_as_linear, confidence_beta, LinearMdp, LsviConfig, PlanningContext,
};
use crate::mdp::{
    optimal_advantage, optimal_policy, performance_difference_audit, policy_value,
    Reward, TabularMdp,
};
use crate::mle::SolverConfig;
use crate::reward_free::{feature_gap_audit, perturbed_model, visitation_error_audit};
use crate::seeded_rng;
use crate::textio::{fmt_float, KvDoc};
use rand_distr::{Distribution, StandardNormal};

pub const CSV_HEADER: &str =
    "grid_index,seed,n,k,gap,theta_err,theta_cov_err,n_hum,n_tra,audit_eps,final_objective,status,config_hash";

/// A generated experiment instance.
#[derive(Debug, Clone)]
pub enum GeneratedInstance {
    Tabular(TabularMdp),
    Linear(LinearMdp),
}

impl GeneratedInstance {
    pub fn tabular(&self) -> &TabularMdp {
        match self {
            GeneratedInstance::Tabular(m) => m,
            GeneratedInstance::Linear(l) => &l.realization,
        }
    }
}

fn mode(doc: &KvDoc) -> Result<String> {
    Ok(doc.get("mode").unwrap_or("tabular").to_string())
}

/// Build (or load) the instance described by the config. Bounds are computed
/// from the generated parameters and rewards are rescaled so the reachable
/// cumulative-reward magnitude matches the requested `instance.r_max`.
pub fn generate_instance(doc: &KvDoc) -> Result<GeneratedInstance> {
    if let Some(path) = doc.get("instance.file") {
        let inner = KvDoc::load(path)?;
        if inner.contains("mdp.measures.h1") {
            return Ok(GeneratedInstance::Linear(crate::linear::linear_from_kv(&inner)?));
        }
        return Ok(GeneratedInstance::Tabular(TabularMdp::from_kv(&inner)?));
    }
    let mode = mode(doc)?;
    let seed = doc.get_u64("instance.seed")?.unwrap_or(0);
    let mut rng = seeded_rng(seed, 1000);
    let states = doc.get_usize("instance.states")?.unwrap_or(4);
    let actions = doc.get_usize("instance.actions")?.unwrap_or(2);
    let horizon = doc.get_usize("instance.horizon")?.unwrap_or(3);
    let r_max = doc.get_f64("instance.r_max")?.unwrap_or(1.0);
    let alpha = doc.get_f64("instance.alpha")?.unwrap_or(1.0);
    match mode.as_str() {
        "tabular" => {
            let features = match doc.get("instance.features").unwrap_or("one-hot") {
                "one-hot" => FeatureKind::OneHot,
                "random-unit" => {
                    let d = doc
                        .get_usize("instance.dim")?
                        .ok_or_else(|| RegimeError::config("random-unit features need instance.dim"))?;
                    FeatureKind::RandomUnit(d)
                }
                other => {
                    return Err(RegimeError::config(format!("unknown feature kind `{other}`")))
                }
            };
            let spec = TabularSpec {
                n_states: states,
                n_actions: actions,
                horizon,
                features,
                r_max,
                transition_alpha: alpha,
            };
            Ok(GeneratedInstance::Tabular(random_tabular(&spec, &mut rng)?))
        }
        "action" => {
            let spec = GapSpec {
                n_states: states,
                n_actions: actions,
                horizon,
                gap_min: doc.get_f64("instance.gap_min")?.unwrap_or(0.3),
                b_adv: doc.get_f64("instance.b_adv")?.unwrap_or(0.5),
                r_max,
                transition_alpha: alpha,
            };
            Ok(GeneratedInstance::Tabular(gap_separated(&spec, &mut rng)?))
        }
        "linear" => {
            match doc.get("instance.kind").unwrap_or("factored") {
                "factored" => {
                    let dim = doc.get_usize("instance.dim")?.unwrap_or(4);
                    Ok(GeneratedInstance::Linear(generate_linear_mdp(
                        dim, states, actions, horizon, r_max, &mut rng,
                    )?))
                }
                "tabular-as-linear" => {
                    let spec = TabularSpec {
                        n_states: states,
                        n_actions: actions,
                        horizon,
                        features: FeatureKind::OneHot,
                        r_max,
                        transition_alpha: alpha,
                    };
                    let mdp = random_tabular(&spec, &mut rng)?;
                    Ok(GeneratedInstance::Linear(tabular_as_linear(&mdp)?))
                }
                other => Err(RegimeError::config(format!("unknown linear kind `{other}`"))),
            }
        }
        other => Err(RegimeError::config(format!("unknown mode `{other}`"))),
    }
}

fn solver_from(doc: &KvDoc) -> Result<SolverConfig> {
    let mut solver = SolverConfig::default();
    if let Some(tol) = doc.get_f64("mle.tol")? {
        solver.tol = tol;
    }
    if let Some(it) = doc.get_usize("mle.max_iters")? {
        solver.max_iters = it;
    }
    Ok(solver)
}

/// Run one experiment cell. `grid_value` overrides the swept parameter.
pub fn run_single(doc: &KvDoc, seed: u64, grid_value: Option<usize>) -> Result<RegimeReport> {
    let mode = mode(doc)?;
    let instance = generate_instance(doc)?;
    let solver = solver_from(doc)?;
    let sweep_param = doc.get("sweep.param").unwrap_or("n").to_string();
    let mut n = doc.get_usize("algo.n")?.unwrap_or(100);
    let mut k = doc.get_usize("algo.k")?.unwrap_or(500);
    if let Some(v) = grid_value {
        match sweep_param.as_str() {
            "n" => n = v,
            "k" => k = v,
            other => return Err(RegimeError::config(format!("unknown sweep.param `{other}`"))),
        }
    }
    match mode.as_str() {
        "tabular" => {
            let mdp = instance.tabular();
            let lambda = doc
                .get_f64("algo.lambda")?
                .unwrap_or(4.0 * mdp.horizon as f64 * mdp.bound_r * mdp.bound_r);
            let mut cfg = TabularRunConfig::new(n, lambda, seed);
            cfg.solver = solver;
            if let Some(delta) = doc.get_f64("algo.delta")? {
                cfg.delta = delta;
            }
            cfg.plan_with_true_transitions = doc.get_bool("algo.plan_true")?.unwrap_or(false);
            cfg.pi_mode = match doc.get("algo.pi").unwrap_or("markov") {
                "markov" => PiMode::Markov {
                    restarts: doc.get_usize("algo.restarts")?.unwrap_or(4),
                    tol: doc.get_f64("algo.tol")?.unwrap_or(1e-9),
                },
                "enumerate" => PiMode::DeterministicEnumeration {
                    cap: doc.get_usize("algo.enum_cap")?.unwrap_or(1 << 16),
                },
                other => return Err(RegimeError::config(format!("unknown algo.pi `{other}`"))),
            };
            cfg.transition_mode = match doc.get("algo.transitions").unwrap_or("exact") {
                "exact" => TransitionMode::Exact,
                "reward-free" => TransitionMode::RewardFree {
                    episode_budget: doc.get_usize("algo.budget")?.unwrap_or(10_000),
                    eps_target: doc.get_f64("algo.eps_prime")?.unwrap_or(0.05),
                },
                other => {
                    return Err(RegimeError::config(format!("unknown algo.transitions `{other}`")))
                }
            };
            match doc.get("algo.algorithm").unwrap_or("design") {
                "design" => run_regime_tabular(mdp, &cfg),
                "uniform" => run_uniform_baseline(mdp, &cfg),
                other => Err(RegimeError::config(format!("unknown algo.algorithm `{other}`"))),
            }
        }
        "action" => {
            let mdp = instance.tabular();
            let lambda = doc
                .get_f64("algo.lambda")?
                .unwrap_or(4.0 * mdp.bound_r * mdp.bound_r);
            let bound_b = match doc.get_f64("algo.bound_b")? {
                Some(b) => b,
                None => {
                    let adv = optimal_advantage(mdp)?;
                    adv.iter()
                        .map(|t| {
                            t.iter().map(|x| x * x).sum::<f64>().sqrt()
                        })
                        .fold(0.0, f64::max)
                        + 1e-6
                }
            };
            let mut cfg = ActionRunConfig::new(n, lambda, bound_b, seed);
            cfg.solver = solver;
            cfg.bound_adv = doc.get_f64("algo.b_adv")?;
            if let Some(r) = doc.get_usize("algo.restarts")? {
                cfg.restarts = r;
            }
            run_regime_action(mdp, &cfg)
        }
        "linear" => {
            let GeneratedInstance::Linear(lin) = &instance else {
                return Err(RegimeError::config("linear mode needs a linear instance"));
            };
            let mdp = &lin.realization;
            let lambda = doc
                .get_f64("algo.lambda")?
                .unwrap_or(4.0 * mdp.horizon as f64 * mdp.bound_r * mdp.bound_r);
            let mut cfg = LinRunConfig::new(n, k, lambda, seed);
            cfg.solver = solver;
            if let Some(c) = doc.get_f64("algo.beta_c_ex")? {
                cfg.beta_c_ex = c;
            }
            if let Some(c) = doc.get_f64("algo.beta_c_pl")? {
                cfg.beta_c_pl = c;
            }
            if let Some(l) = doc.get_f64("algo.lambda_ex")? {
                cfg.lambda_ex = l;
            }
            if let Some(l) = doc.get_f64("algo.lambda_pl")? {
                cfg.lambda_pl = l;
            }
            if let Some(c) = doc.get_usize("algo.candidates")? {
                cfg.n_candidates = c;
            }
            run_regime_lin(lin, &cfg)
        }
        other => Err(RegimeError::config(format!("unknown mode `{other}`"))),
    }
}

/// One CSV data row.
fn csv_row(
    grid_index: usize,
    seed: u64,
    n: usize,
    k: usize,
    report: Option<&RegimeReport>,
    err: Option<&RegimeError>,
    hash: &str,
) -> String {
    let nan = "nan".to_string();
    let (gap, theta_err, cov_err, n_hum, n_tra, eps, final_obj, status) = match (report, err) {
        (Some(r), _) => (
            fmt_float(r.gap),
            r.theta_error.map(fmt_float).unwrap_or_else(|| nan.clone()),
            r.theta_cov_error.map(fmt_float).unwrap_or_else(|| nan.clone()),
            r.n_human_labels.to_string(),
            r.n_trajectories.to_string(),
            fmt_float(r.audited_eps),
            r.round_objectives
                .last()
                .map(|o| fmt_float(*o))
                .unwrap_or_else(|| nan.clone()),
            "ok".to_string(),
        ),
        (None, Some(e)) => {
            let msg: String = e
                .to_string()
                .chars()
                .map(|c| if c == ',' || c == '\n' { ';' } else { c })
                .take(80)
                .collect();
            (
                nan.clone(),
                nan.clone(),
                nan.clone(),
                "0".to_string(),
                "0".to_string(),
                nan.clone(),
                nan.clone(),
                format!("error:{msg}"),
            )
        }
        (None, None) => unreachable!(),
    };
    format!(
        "{grid_index},{seed},{n},{k},{gap},{theta_err},{cov_err},{n_hum},{n_tra},{eps},{final_obj},{status},{hash}"
    )
}

pub struct SweepOutput {
    pub csv: String,
    pub summary: String,
    pub any_errors: bool,
}

/// Least-squares slope of `ln(y)` on `ln(x)`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    if xs.iter().chain(ys.iter()).any(|v| *v <= 0.0) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..lx.len() {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    if den == 0.0 {
        return None;
    }
    let slope = num / den;
    Some((slope, my - slope * mx))
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 0 {
        0.5 * (values[mid - 1] + values[mid])
    } else {
        values[mid]
    }
}

/// Execute the grid x seeds sweep described by the config. Cell order (and
/// the CSV) is stable by (grid index, seed); failures become error rows.
pub fn run_sweep(doc: &KvDoc) -> Result<SweepOutput> {
    let started = Instant::now();
    let grid = doc
        .get_usize_list("sweep.grid")?
        .unwrap_or_else(|| vec![doc.get("algo.n").and_then(|v| v.parse().ok()).unwrap_or(100)]);
    if grid.is_empty() {
        return Err(RegimeError::config("sweep.grid must be non-empty"));
    }
    let seeds = doc.get_u64_list("seeds")?.unwrap_or_else(|| vec![0]);
    let sweep_param = doc.get("sweep.param").unwrap_or("n");
    let hash = doc.hash();
    let workers = doc.get_usize("workers")?.unwrap_or(1).max(1);

    let cells: Vec<(usize, usize, u64)> = grid
        .iter()
        .enumerate()
        .flat_map(|(gi, &value)| seeds.iter().map(move |&s| (gi, value, s)))
        .collect();
    let mut results: Vec<Option<std::result::Result<RegimeReport, RegimeError>>> =
        (0..cells.len()).map(|_| None).collect();
    if workers <= 1 {
        for (slot, &(_, value, seed)) in cells.iter().enumerate() {
            results[slot] = Some(run_single(doc, seed, Some(value)));
        }
    } else {
        let chunks: Vec<Vec<usize>> = (0..workers)
            .map(|w| (w..cells.len()).step_by(workers).collect())
            .collect();
        let slot_results: Vec<Vec<(usize, std::result::Result<RegimeReport, RegimeError>)>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunks
                    .iter()
                    .map(|chunk| {
                        let cells = &cells;
                        let doc_ref = &*doc;
                        scope.spawn(move || {
                            chunk
                                .iter()
                                .map(|&slot| {
                                    let (_, value, seed) = cells[slot];
                                    (slot, run_single(doc_ref, seed, Some(value)))
                                })
                                .collect()
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
        for chunk in slot_results {
            for (slot, res) in chunk {
                results[slot] = Some(res);
            }
        }
    }

    let mut csv = String::new();
    let _ = writeln!(csv, "{CSV_HEADER}");
    let mut any_errors = false;
    let mut per_grid_gaps: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];
    for (slot, &(gi, value, seed)) in cells.iter().enumerate() {
        let (n, k) = match sweep_param {
            "k" => (doc.get_usize("algo.n")?.unwrap_or(100), value),
            _ => (value, doc.get_usize("algo.k")?.unwrap_or(0)),
        };
        match results[slot].as_ref().expect("cell executed") {
            Ok(report) => {
                per_grid_gaps[gi].push(report.gap);
                let _ = writeln!(csv, "{}", csv_row(gi, seed, n, k, Some(report), None, &hash));
            }
            Err(e) => {
                any_errors = true;
                let _ = writeln!(csv, "{}", csv_row(gi, seed, n, k, None, Some(e), &hash));
            }
        }
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "sweep over {sweep_param} grid {grid:?}, {} seeds", seeds.len());
    let _ = writeln!(summary, "config hash: {hash}");
    if !seeds.is_empty() {
        let xs: Vec<f64> = grid.iter().map(|&v| v as f64).collect();
        let mut medians = Vec::with_capacity(grid.len());
        for (gi, gaps) in per_grid_gaps.iter_mut().enumerate() {
            if gaps.is_empty() {
                let _ = writeln!(summary, "grid[{gi}]={}: no successful runs", grid[gi]);
                continue;
            }
            let med = median(gaps);
            let _ = writeln!(summary, "grid[{gi}]={}: median gap {med:.6}", grid[gi]);
            medians.push(med);
        }
        if medians.len() == grid.len() {
            if let Some((slope, intercept)) = log_log_slope(&xs, &medians) {
                let _ = writeln!(
                    csv,
                    "# slope={} intercept={} points={}",
                    fmt_float(slope),
                    fmt_float(intercept),
                    grid.len()
                );
                let _ = writeln!(summary, "log-log slope of median gap: {slope:.4}");
            }
        }
    }
    let _ = writeln!(summary, "wallclock: {:.3}s", started.elapsed().as_secs_f64());
    Ok(SweepOutput { csv, summary, any_errors })
}

// ---------------------------------------------------------------------------
// Property-audit registry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AuditResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

pub struct AuditOutcome {
    pub results: Vec<AuditResult>,
    pub all_pass: bool,
}

impl AuditOutcome {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            let _ = writeln!(
                out,
                "audit {:<24} {}  ({})",
                r.name,
                if r.pass { "PASS" } else { "FAIL" },
                r.detail
            );
        }
        out
    }
}

fn gaussian_vec(dim: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    }))
}

/// Run the registered deterministic/statistical property suites.
///
/// `audit.sabotage = true` intentionally corrupts the covariance update in
/// the elliptical stream builder (a negative control: the audit must fail).
pub fn run_audits(doc: &KvDoc) -> Result<AuditOutcome> {
    let trials = doc.get_usize("audit.trials")?.unwrap_or(100);
    let sabotage = doc.get_bool("audit.sabotage")?.unwrap_or(false);
    let mut results = Vec::new();

    // Elliptical potential over random unit-vector streams.
    {
        let mut worst_margin = f64::INFINITY;
        let mut pass = true;
        for trial in 0..trials {
            let dim = [1usize, 4, 8][trial % 3];
            let mut rng = seeded_rng(trial as u64, 2000);
            let vectors: Vec<DVector<f64>> = (0..1000)
                .map(|_| {
                    let mut v = gaussian_vec(dim, &mut rng);
                    let n = v.norm();
                    if n > 0.0 {
                        v /= n;
                    } else {
                        v[0] = 1.0;
                    }
                    v
                })
                .collect();
            let audit = if sabotage {
                sabotaged_elliptical(1.0, &vectors)
            } else {
                elliptical_potential_audit(1.0, &vectors)?
            };
            worst_margin = worst_margin.min(audit.rhs - audit.lhs);
            pass &= audit.pass;
        }
        // The d = 1, x = 1 stream matches the harmonic sum exactly.
        let ones: Vec<DVector<f64>> = (0..1000).map(|_| DVector::from_vec(vec![1.0])).collect();
        let harmonic: f64 = (1..=1000).map(|k| 1.0 / k as f64).sum();
        let exact = elliptical_potential_audit(1.0, &ones)?;
        pass &= (exact.lhs - harmonic).abs() <= 1e-10;
        results.push(AuditResult {
            name: "elliptical-potential".to_string(),
            pass,
            detail: format!("{trials} streams, worst margin {worst_margin:.4}"),
        });
    }

    // Leverage bound.
    {
        let mut pass = true;
        let mut worst = f64::NEG_INFINITY;
        for trial in 0..trials {
            let mut rng = seeded_rng(trial as u64, 2100);
            let dim = 1 + trial % 8;
            let count = 5 + trial % 50;
            let vectors: Vec<DVector<f64>> =
                (0..count).map(|_| gaussian_vec(dim, &mut rng)).collect();
            let total = leverage_sum(0.7, &vectors)?;
            worst = worst.max(total - dim as f64);
            pass &= total <= dim as f64 + 1e-9;
        }
        results.push(AuditResult {
            name: "leverage-bound".to_string(),
            pass,
            detail: format!("{trials} feature sets, worst excess {worst:.2e}"),
        });
    }

    // Performance-difference identity.
    {
        let mut pass = true;
        let mut worst: f64 = 0.0;
        for trial in 0..trials {
            let mut rng = seeded_rng(trial as u64, 2200);
            let spec = TabularSpec {
                n_states: 3 + trial % 3,
                n_actions: 2 + trial % 2,
                horizon: 2 + trial % 3,
                ..Default::default()
            };
            let mdp = random_tabular(&spec, &mut rng)?;
            let pi = random_policy(&mdp, &mut rng);
            let pi_prime = random_policy(&mdp, &mut rng);
            let reward = crate::instances::random_reward(&mdp, 1.0, &mut rng);
            let residual = performance_difference_audit(&mdp, &reward, &pi, &pi_prime)?;
            worst = worst.max(residual);
            pass &= residual <= 1e-9;
        }
        results.push(AuditResult {
            name: "performance-difference".to_string(),
            pass,
            detail: format!("{trials} tuples, worst residual {worst:.2e}"),
        });
    }

    // Visitation propagation and feature gap under exact-TV perturbations.
    {
        let eps = 0.05;
        let mut pass_visit = true;
        let mut pass_gap = true;
        let spec = TabularSpec { n_states: 5, n_actions: 2, horizon: 5, ..Default::default() };
        let mdp = random_tabular(&spec, &mut seeded_rng(0, 2300))?;
        let perturbed = perturbed_model(&mdp, eps);
        let d = mdp.feature_dim();
        for trial in 0..20u64 {
            let mut rng = seeded_rng(trial, 2301);
            let pi = random_policy(&mdp, &mut rng);
            pass_visit &= visitation_error_audit(&mdp, &perturbed, &pi, eps)?.pass;
            for _ in 0..50 {
                let mut v = DVector::zeros(mdp.stacked_dim());
                for h in 0..mdp.horizon {
                    let mut block = gaussian_vec(d, &mut rng);
                    let norm = block.norm();
                    if norm > 0.0 {
                        block *= 2.0 * mdp.bound_b / norm;
                    }
                    v.rows_mut(h * d, d).copy_from(&block);
                }
                pass_gap &= feature_gap_audit(&mdp, &perturbed, &pi, &v, eps)?.pass;
            }
        }
        results.push(AuditResult {
            name: "visitation-propagation".to_string(),
            pass: pass_visit,
            detail: "20 policies, H=5, eps=0.05".to_string(),
        });
        results.push(AuditResult {
            name: "feature-gap".to_string(),
            pass: pass_gap,
            detail: "20 policies x 50 directions".to_string(),
        });
    }

    // Soft value-iteration bias bound.
    {
        let mut pass = true;
        let mut worst = f64::NEG_INFINITY;
        for trial in 0..50u64 {
            let mut rng = seeded_rng(trial, 2400);
            let spec = TabularSpec {
                n_states: 3 + (trial as usize) % 4,
                n_actions: 2 + (trial as usize) % 3,
                horizon: 2 + (trial as usize) % 3,
                r_max: 2.0,
                ..Default::default()
            };
            let mdp = random_tabular(&spec, &mut rng)?;
            let reward = mdp.true_reward();
            let (_, v_star) = optimal_policy(&mdp, &mdp.transitions, &reward)?;
            for &alpha in &[0.01, 0.1, 1.0] {
                let (pi_alpha, _, _) = soft_value_iteration(&mdp, &reward, alpha)?;
                let v_alpha = policy_value(&mdp, &mdp.transitions, &reward, &pi_alpha)?;
                let bound = alpha * mdp.horizon as f64 * (mdp.n_actions as f64).ln();
                worst = worst.max((v_star - v_alpha) - bound);
                pass &= v_star - v_alpha <= bound + 1e-9;
            }
        }
        results.push(AuditResult {
            name: "soft-vi-bias".to_string(),
            pass,
            detail: format!("50 instances x 3 alphas, worst slack {worst:.2e}"),
        });
    }

    // Optimism sandwich frequency on the linear stack.
    {
        let seeds = 40u64;
        let mut held = 0usize;
        for seed in 0..seeds {
            let spec = TabularSpec {
                n_states: 4,
                n_actions: 2,
                horizon: 3,
                r_max: 1.0,
                ..Default::default()
            };
            let mdp = random_tabular(&spec, &mut seeded_rng(seed, 2500))?;
            let lin = tabular_as_linear(&mdp)?;
            let mut rng = seeded_rng(seed, 2501);
            let k = 300;
            let beta = confidence_beta(1.0, lin.dim, k, mdp.horizon, mdp.bound_r, 0.05);
            let data = regime_exploration(&lin, k, &LsviConfig::new(beta, 1.0), &mut rng);
            let pi = random_policy(&mdp, &mut rng);
            let tables: Vec<DMatrix<f64>> = mdp
                .reward_tables()
                .into_iter()
                .map(|t| {
                    let m = t.abs().max().max(1.0);
                    t / m
                })
                .collect();
            let reward = Reward::Tables(tables);
            let ctx = PlanningContext::new(&lin, &data, LsviConfig::new(beta, 1.0))?;
            let out = ctx.evaluate(&pi, &reward)?;
            if sandwich_fraction(&lin, &out, &reward, &pi)? >= 0.95 {
                held += 1;
            }
        }
        let frequency = held as f64 / seeds as f64;
        results.push(AuditResult {
            name: "sandwich-frequency".to_string(),
            pass: frequency >= 0.95,
            detail: format!("held in {held}/{seeds} seeded runs"),
        });
    }

    let all_pass = results.iter().all(|r| r.pass);
    Ok(AuditOutcome { results, all_pass })
}

/// Negative control: a broken covariance that drops the rank-one updates,
/// so the potential sum blows past the bound.
fn sabotaged_elliptical(lambda: f64, vectors: &[DVector<f64>]) -> crate::design::EllipticalAudit {
    let dim = vectors.first().map_or(1, |v| v.len());
    let state = crate::design::DesignState::new(dim, lambda).expect("valid");
    let mut lhs = 0.0;
    for v in vectors {
        let m = state.mahalanobis(v);
        lhs += m * m;
    }
    let n = vectors.len() as f64;
    let d = dim as f64;
    let rhs = 2.0 * d * (1.0 + n / d).ln();
    crate::design::EllipticalAudit { lhs, rhs, pass: lhs <= rhs }
}

/// Dense-coverage planning accuracy probe used by the acceptance suite.
pub fn dense_planning_gap(seed: u64) -> Result<f64> {
    let spec = TabularSpec { n_states: 4, n_actions: 2, horizon: 3, r_max: 2.0, ..Default::default() };
    let mdp = random_tabular(&spec, &mut seeded_rng(seed, 2600))?;
    let lin = tabular_as_linear(&mdp)?;
    let mut rng = seeded_rng(seed, 2601);
    let data = dense_dataset(&lin, 200, &mut rng);
    let ctx = PlanningContext::new(&lin, &data, LsviConfig::new(0.0, 1e-6))?;
    let pi = random_policy(&mdp, &mut rng);
    let reward = mdp.true_reward();
    let out = ctx.evaluate(&pi, &reward)?;
    let exact = policy_value(&mdp, &mdp.transitions, &reward, &pi)?;
    Ok((out.value - exact).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_doc() -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("mode", "tabular");
        doc.set("instance.states", "3");
        doc.set("instance.actions", "2");
        doc.set("instance.horizon", "2");
        doc.set("instance.r_max", "1.0");
        doc.set("algo.n", "10");
        doc.set("algo.lambda", "8.0");
        doc.set("sweep.grid", "5 10");
        doc.set("seeds", "0 1");
        doc
    }

    #[test]
    fn sweep_is_byte_identical_across_invocations() {
        let doc = base_doc();
        let a = run_sweep(&doc).unwrap();
        let b = run_sweep(&doc).unwrap();
        assert_eq!(a.csv, b.csv);
        assert!(!a.any_errors);
        assert!(a.csv.starts_with(CSV_HEADER));
        // 2 grid values x 2 seeds data rows.
        assert_eq!(a.csv.lines().filter(|l| !l.starts_with('#')).count() - 1, 4);
    }

    #[test]
    fn worker_count_does_not_change_the_csv() {
        let mut doc = base_doc();
        let serial = run_sweep(&doc).unwrap();
        doc.set("workers", "3");
        let threaded = run_sweep(&doc).unwrap();
        // The workers key participates in the config hash, so compare the
        // numeric payload only.
        let strip = |csv: &str| -> Vec<String> {
            csv.lines()
                .map(|l| l.rsplit_once(',').map_or_else(|| l.to_string(), |(a, _)| a.to_string()))
                .collect()
        };
        assert_eq!(strip(&serial.csv), strip(&threaded.csv));
    }

    #[test]
    fn empty_seed_list_yields_header_only() {
        let mut doc = base_doc();
        doc.set("seeds", "");
        let out = run_sweep(&doc).unwrap();
        let lines: Vec<&str> = out.csv.lines().collect();
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0], CSV_HEADER);
    }

    #[test]
    fn failed_cells_become_error_rows() {
        let mut doc = base_doc();
        doc.set("mode", "linear");
        doc.set("instance.kind", "tabular-as-linear");
        doc.set("sweep.param", "k");
        doc.set("sweep.grid", "0 50");
        doc.set("algo.n", "5");
        doc.set("seeds", "0");
        let out = run_sweep(&doc).unwrap();
        assert!(out.any_errors);
        let error_rows: Vec<&str> =
            out.csv.lines().filter(|l| l.contains("error:")).collect();
        assert_eq!(error_rows.len(), 1);
        let ok_rows = out.csv.lines().filter(|l| l.ends_with(&doc.hash())).count();
        assert_eq!(ok_rows, 2);
    }

    #[test]
    fn instance_generation_is_seed_deterministic_and_recorded() {
        let doc = base_doc();
        let a = generate_instance(&doc).unwrap();
        let b = generate_instance(&doc).unwrap();
        assert_eq!(a.tabular().to_kv().render(), b.tabular().to_kv().render());
        // One-hot default: R = 1 + slack, d = |S||A|.
        assert_eq!(a.tabular().feature_dim(), 6);
        let (lo, hi) = a.tabular().cumulative_reward_range();
        assert!((lo.abs().max(hi.abs()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn audits_pass_by_default_and_fail_under_sabotage() {
        let mut doc = KvDoc::new();
        doc.set("audit.trials", "6");
        let outcome = run_audits(&doc).unwrap();
        assert!(outcome.all_pass, "{}", outcome.render());

        doc.set("audit.sabotage", "true");
        let sab = run_audits(&doc).unwrap();
        let elliptical = sab
            .results
            .iter()
            .find(|r| r.name == "elliptical-potential")
            .unwrap();
        assert!(!elliptical.pass, "sabotage must break the elliptical audit");
    }

    #[test]
    fn slope_helper_recovers_power_laws() {
        let xs = [100.0f64, 200.0, 400.0, 800.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * f64::powf(*x, -0.5)).collect();
        let (slope, _) = log_log_slope(&xs, &ys).unwrap();
        assert!((slope + 0.5).abs() < 1e-12);
    }
}
