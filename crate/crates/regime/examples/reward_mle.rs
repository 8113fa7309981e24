//! Constrained maximum-likelihood reward estimation from synthetic
//! comparisons: recovery error, covariance-norm error, and diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use regime::mle::{covariance_error, fit_theta, nll, ComparisonDataset, SolverConfig};
use regime::oracle::sigmoid;
use regime::seeded_rng;

fn main() {
    let mut rng = seeded_rng(3, 0);
    let blocks = 2;
    let dim = 6; // two blocks of three
    let mut theta_star = DVector::from_iterator(dim, (0..dim).map(|_| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    }));
    theta_star *= 0.8 / theta_star.norm();

    let mut diffs = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..5_000 {
        let v = DVector::from_iterator(dim, (0..dim).map(|_| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        }));
        let p = sigmoid(theta_star.dot(&v));
        labels.push(u8::from(rng.gen::<f64>() < p));
        diffs.push(v);
    }
    let data = ComparisonDataset::new(&diffs, &labels).unwrap();

    let est = fit_theta(&data, blocks, 1.0, 50.0, &[], &SolverConfig::default()).unwrap();
    let theta_hat = est.stacked();
    println!(
        "fit finished after {} iterations, projected-gradient norm {:.2e}",
        est.diagnostics.iterations, est.diagnostics.grad_norm
    );
    println!("||theta_hat - theta*||_2 = {:.4}", (&theta_hat - &theta_star).norm());
    println!(
        "training NLL: {:.2} at theta_hat vs {:.2} at theta*",
        nll(&theta_hat, &data),
        nll(&theta_star, &data)
    );

    // Error in a design-covariance norm.
    let mut sigma = DMatrix::identity(dim, dim) * 4.0;
    for d in &diffs {
        sigma += d * d.transpose();
    }
    let err = covariance_error(&theta_hat, &theta_star, &sigma).unwrap();
    println!("covariance-norm error ||theta_hat - theta*||_Sigma = {err:.4}");
}
