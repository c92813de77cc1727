mod common;

use common::{noise_free_panel, noise_free_with_theta, random_panel, step};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sawpanel::haar::translations;
use sawpanel::panel::{first_difference, prepare_instruments, reflect_pad, InstrumentMode};
use sawpanel::saw::{
    build_basis, estimate_b, fit_saw, flat_index, level_translation, select_threshold,
    shrink_and_reconstruct, kappa, threshold_value, SawOptions, Threshold, VarianceRule,
};
use sawpanel::DifferencedPanel;

fn differenced(n: usize, t: usize, p: usize, distinct_z: bool, seed: u64) -> DifferencedPanel {
    let panel = random_panel(n, t, p, distinct_z, seed);
    let panel = if distinct_z {
        panel
    } else {
        prepare_instruments(&panel, InstrumentMode::SelfInstrumented).unwrap()
    };
    reflect_pad(&first_difference(&panel).unwrap())
}

/// `(1/nT) Σ_{i,t} (W_B(a,t)' z_it)(W_A(b,t)' x_it)'` over all pairs, from
/// observation-level products.
fn brute_force_defect(dp: &DifferencedPanel) -> f64 {
    let basis = build_basis(dp, &SawOptions::default()).unwrap();
    let (n, len, w) = (dp.n(), dp.t_diff(), dp.width());
    let fns: Vec<(usize, usize)> = (0..len).map(level_translation).collect();
    let mut zt = vec![vec![DVector::<f64>::zeros(w); n * len]; len];
    let mut xt = vec![vec![DVector::<f64>::zeros(w); n * len]; len];
    for (j, &(l, k)) in fns.iter().enumerate() {
        for s in 0..len {
            let wb = basis.w_instrument(l, k, s + 1);
            let wa = basis.w(l, k, s + 1);
            for i in 0..n {
                zt[j][i * len + s] = wb.transpose() * DVector::from_column_slice(dp.zu_row(i, s));
                xt[j][i * len + s] = wa.transpose() * DVector::from_column_slice(dp.xu_row(i, s));
            }
        }
    }
    let scale = 1.0 / (n * len) as f64;
    let mut worst: f64 = 0.0;
    for a in 0..len {
        for b in 0..len {
            let mut m = DMatrix::<f64>::zeros(w, w);
            for r in 0..n * len {
                m += &zt[a][r] * xt[b][r].transpose();
            }
            m *= scale;
            if a == b {
                m -= DMatrix::<f64>::identity(w, w);
            }
            worst = worst.max(m.amax());
        }
    }
    worst
}

#[test]
fn orthonormal_with_and_without_instruments() {
    for (seed, distinct) in [(1, false), (2, true), (3, true)] {
        let dp = differenced(6, 17, 2, distinct, seed);
        let defect = brute_force_defect(&dp);
        assert!(defect < 1e-8, "seed {seed}: defect {defect}");
        let basis = build_basis(&dp, &SawOptions::default()).unwrap();
        assert!(basis.orthonormality_defect() < 1e-8);
    }
}

#[test]
fn raw_path_equals_per_period_iv() {
    // λ = 0 reproduces the period-by-period IV estimator G_t^{-1} g_t.
    for distinct in [false, true] {
        let dp = differenced(10, 17, 1, distinct, 11);
        let basis = build_basis(&dp, &SawOptions::default()).unwrap();
        let raw = estimate_b(&dp, &basis);
        let path = basis.reconstruct(&raw);
        let w = dp.width();
        for s in 0..dp.t_diff() {
            let mut g = DMatrix::<f64>::zeros(w, w);
            let mut v = DVector::<f64>::zeros(w);
            for i in 0..dp.n() {
                let z = DVector::from_column_slice(dp.zu_row(i, s));
                let x = DVector::from_column_slice(dp.xu_row(i, s));
                g += &z * x.transpose();
                v += z * dp.dy(i, s);
            }
            let iv = g.lu().solve(&v).unwrap();
            for c in 0..w {
                assert!((path[(s, c)] - iv[c]).abs() < 1e-8, "s {s} c {c}");
            }
        }
    }
}

#[test]
fn estimate_is_deterministic() {
    let dp = differenced(8, 33, 2, true, 5);
    let basis = build_basis(&dp, &SawOptions::default()).unwrap();
    assert_eq!(estimate_b(&dp, &basis), estimate_b(&dp, &basis));
}

/// Per-(l, k, p) variances `(1/nT) Σ (𝒵 ẽ)²` from observation-level residuals.
fn brute_force_variances(dp: &DifferencedPanel) -> Vec<Vec<Vec<f64>>> {
    let basis = build_basis(dp, &SawOptions::default()).unwrap();
    let raw = estimate_b(dp, &basis);
    let path = basis.reconstruct(&raw);
    let (n, len, w) = (dp.n(), dp.t_diff(), dp.width());
    let depth = basis.depth();
    (1..=depth)
        .map(|l| {
            (1..=translations(l))
                .map(|k| {
                    let mut v = vec![0.0; w];
                    for s in 0..len {
                        let wb = basis.w_instrument(l, k, s + 1);
                        for i in 0..n {
                            let x = dp.xu_row(i, s);
                            let e = dp.dy(i, s)
                                - x.iter().zip(path.row(s).iter()).map(|(a, b)| a * b).sum::<f64>();
                            let zz = wb.transpose() * DVector::from_column_slice(dp.zu_row(i, s));
                            for p in 0..w {
                                v[p] += (zz[p] * e).powi(2);
                            }
                        }
                    }
                    v.iter().map(|x| x / (n * len) as f64).collect()
                })
                .collect()
        })
        .collect()
}

#[test]
fn threshold_variance_matches_brute_force() {
    let dp = differenced(12, 17, 1, true, 21);
    let basis = build_basis(&dp, &SawOptions::default()).unwrap();
    let v = brute_force_variances(&dp);
    let pointwise = v.iter().flatten().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let pooled = v
        .iter()
        .map(|level| {
            (0..dp.width())
                .map(|p| level.iter().map(|k| k[p]).sum::<f64>() / level.len() as f64)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let opts = SawOptions { variance_rule: VarianceRule::Pointwise, ..SawOptions::default() };
    let th = select_threshold(&dp, &basis, &opts);
    assert!((th.v_hat - pointwise).abs() < 1e-10 * pointwise);
    let th = select_threshold(&dp, &basis, &SawOptions::default());
    assert!((th.v_hat - pooled).abs() < 1e-10 * pooled);
    let k = kappa(12, 16);
    assert!((th.lambda - threshold_value(pooled, 12, 16, 3, k, false)).abs() < 1e-12);
    assert!(pooled <= pointwise);
}

#[test]
fn noise_free_piecewise_path_is_exact() {
    let beta = vec![step(17, &[5, 11], &[1.0, -2.0, 0.5]), step(17, &[8], &[0.3, 1.3])];
    let panel = noise_free_panel(6, &beta, 3);
    let dp = reflect_pad(&first_difference(&prepare_instruments(&panel, InstrumentMode::SelfInstrumented).unwrap()).unwrap());
    let (_, fit) = fit_saw(&dp, &SawOptions::default()).unwrap();
    assert!(fit.threshold.degenerate || fit.threshold.lambda < 1e-8);
    for s in 0..16 {
        for p in 0..2 {
            // stored s ↔ β_{s+2} (current) and β_{s+1} (lag)
            assert!((fit.gamma_hat[(s, p)] - beta[p][s + 1]).abs() < 1e-8);
            assert!((fit.gamma_hat[(s, p + 2)] - beta[p][s]).abs() < 1e-8);
        }
    }
}

#[test]
fn noise_free_sparsity() {
    // One break in β moves γ at two consecutive periods; the number of
    // nonzero coefficient vectors stays within (S_γ + 1) L.
    let beta = vec![step(33, &[13], &[1.0, -1.0])];
    let panel = noise_free_with_theta(5, &beta, 8, false);
    let dp = reflect_pad(&first_difference(&prepare_instruments(&panel, InstrumentMode::SelfInstrumented).unwrap()).unwrap());
    let basis = build_basis(&dp, &SawOptions::default()).unwrap();
    let raw = estimate_b(&dp, &basis);
    let gamma_changes = 2;
    let nonzero = raw.row_iter().filter(|r| r.amax() > 1e-9).count();
    assert!(nonzero <= (gamma_changes + 1) * basis.depth());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn surviving_set_shrinks_with_lambda(seed in 0u64..1000, l1 in 0.0f64..0.3, l2 in 0.0f64..0.3) {
        let dp = differenced(6, 9, 1, false, seed);
        let basis = build_basis(&dp, &SawOptions::default()).unwrap();
        let raw = estimate_b(&dp, &basis);
        let (lo, hi) = if l1 < l2 { (l1, l2) } else { (l2, l1) };
        let th = |lambda| Threshold { lambda, v_hat: 1.0, kappa: 0.7, degenerate: false };
        let a = shrink_and_reconstruct(&dp, &raw, th(lo), &basis);
        let b = shrink_and_reconstruct(&dp, &raw, th(hi), &basis);
        for (x, y) in a.b_shrunk.iter().zip(b.b_shrunk.iter()) {
            prop_assert!(*y == 0.0 || *x == *y);
        }
    }

    #[test]
    fn flat_index_is_a_bijection(j in 0usize..4096) {
        let (l, k) = level_translation(j);
        prop_assert_eq!(flat_index(l, k), j);
    }
}
