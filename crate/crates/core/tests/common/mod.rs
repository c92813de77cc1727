#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sawpanel::PanelDataset;

/// Random panel with unit effects; `distinct_z` adds instruments correlated
/// with, but different from, the regressors.
pub fn random_panel(n: usize, t: usize, p: usize, distinct_z: bool, seed: u64) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut x = Vec::with_capacity(n * t * p);
    let mut z = Vec::with_capacity(n * t * p);
    let mut y = Vec::with_capacity(n * t);
    for i in 0..n {
        for _ in 0..t {
            let mut yv = alpha[i] + rng.gen_range(-1.0..1.0);
            for _ in 0..p {
                let zv: f64 = rng.gen_range(-1.0..1.0) + 0.5 * alpha[i];
                let xv = 1.5 * zv + rng.gen_range(-0.5..0.5);
                yv += xv;
                x.push(xv);
                z.push(zv);
            }
            y.push(yv);
        }
    }
    let inst = distinct_z.then_some((p, z));
    PanelDataset::new(n, t, p, y, x, inst).unwrap()
}

/// Noise-free panel `Y = α + θ + Σ_p X_p β_p(t)` with step paths
/// `beta[p][t - 1]`.
pub fn noise_free_panel(n: usize, beta: &[Vec<f64>], seed: u64) -> PanelDataset {
    noise_free_with_theta(n, beta, seed, true)
}

/// As [`noise_free_panel`]; `theta = false` drops the time effects.
pub fn noise_free_with_theta(n: usize, beta: &[Vec<f64>], seed: u64, theta: bool) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = beta[0].len();
    let alpha: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let theta: Vec<f64> = (0..t)
        .map(|_| if theta { rng.gen_range(-1.0..1.0) } else { 0.0 })
        .collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        for s in 0..t {
            let mut yv = alpha[i] + theta[s];
            for b in beta {
                let xv = rng.gen_range(-2.0..2.0) + 0.5 * alpha[i];
                yv += xv * b[s];
                x.push(xv);
            }
            y.push(yv);
        }
    }
    PanelDataset::new(n, t, beta.len(), y, x, None).unwrap()
}

/// Step path over `t = 1..=len` with regime `j` on `τ_{j-1} < t <= τ_j`.
pub fn step(len: usize, breaks: &[usize], values: &[f64]) -> Vec<f64> {
    (1..=len)
        .map(|t| values[breaks.iter().filter(|&&b| t > b).count()])
        .collect()
}
