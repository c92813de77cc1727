//! Break detection from the SAW fit.
//!
//! Every slope `β_p` appears twice in `γ_t`: contemporaneously (column `p`,
//! holding `β_t`) and lagged (column `p + P`, holding `β_{t-1}`). Expanding
//! the lagged column in the ordinary Haar basis gives the unshifted tree,
//! whose finest coefficients see changes at even `t`; expanding the
//! contemporaneous column gives the tree shifted by one period, whose finest
//! coefficients see changes at odd `t`. A break is reported where a finest
//! coefficient of the matching tree survives the threshold.
//!
//! Location convention: a change `β_t != β_{t-1}` is reported as `τ = t - 1`,
//! the last period of the old regime, so that regime `j` covers
//! `τ_{j-1} < t <= τ_j`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::haar::{decompose, HaarCoefficients};
use crate::saw::SawFit;

/// Per-regressor univariate coefficient trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trees {
    /// From `β_{t}` on `t = 2..T*+1` (contemporaneous column).
    pub shifted: HaarCoefficients,
    /// From `β_{t}` on `t = 1..T*` (lagged column).
    pub unshifted: HaarCoefficients,
}

/// Detected breaks of one coefficient path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathJumps {
    pub name: String,
    /// Strictly increasing break locations, `1 <= τ <= T - 1`.
    pub locations: Vec<usize>,
    /// Estimated jump `β_{τ+1} - β_τ` at each location.
    pub sizes: Vec<f64>,
}

impl PathJumps {
    pub fn count(&self) -> usize {
        self.locations.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpReport {
    /// Number of original periods `T`.
    pub horizon: usize,
    pub lambda: f64,
    pub regressors: Vec<PathJumps>,
    /// Breaks in the time-effect increments `Δθ_t`, when the unit column was kept.
    pub time_effect: Option<PathJumps>,
    #[serde(skip)]
    pub trees: Vec<Trees>,
}

impl JumpReport {
    pub fn counts(&self) -> Vec<usize> {
        self.regressors.iter().map(PathJumps::count).collect()
    }

    pub fn total(&self) -> usize {
        self.regressors.iter().map(PathJumps::count).sum()
    }

    /// Union of all regressors' locations.
    pub fn union(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .regressors
            .iter()
            .flat_map(|r| r.locations.iter().copied())
            .collect();
        set.into_iter().collect()
    }

    pub fn locations(&self) -> Vec<Vec<usize>> {
        self.regressors.iter().map(|r| r.locations.clone()).collect()
    }

    /// Report with every regressor replaced by an empty jump set.
    pub fn empty(horizon: usize, lambda: f64, names: &[String]) -> Self {
        JumpReport {
            horizon,
            lambda,
            regressors: names
                .iter()
                .map(|n| PathJumps {
                    name: n.clone(),
                    locations: Vec::new(),
                    sizes: Vec::new(),
                })
                .collect(),
            time_effect: None,
            trees: Vec::new(),
        }
    }
}

/// Shifted and unshifted trees for each regressor, computed from the raw path.
pub fn univariate_trees(fit: &SawFit) -> Vec<Trees> {
    let g = &fit.gamma_raw;
    (0..fit.p)
        .map(|p| {
            let cur: Vec<f64> = g.column(p).iter().copied().collect();
            let lag: Vec<f64> = g.column(p + fit.p).iter().copied().collect();
            Trees {
                shifted: decompose(&cur).expect("dyadic fit"),
                unshifted: decompose(&lag).expect("dyadic fit"),
            }
        })
        .collect()
}

/// `Δψ_{L,k}(t) = ψ_{L,k}(t) - ψ_{L,k}(t-1)`, `ψ(0) = 0`, for the finest level.
fn delta_psi_finest(k: usize, t: usize, amp: f64, len: usize) -> f64 {
    let psi = |t: usize| -> f64 {
        if t == 0 || t > len {
            0.0
        } else if t == 2 * k - 1 {
            amp
        } else if t == 2 * k {
            -amp
        } else {
            0.0
        }
    };
    psi(t) - psi(t.saturating_sub(1))
}

/// `Σ_k Δψ_{L,k}(u) ĉ_k` over hard-thresholded finest coefficients.
fn delta_at(finest: &[f64], u: usize, lambda: f64, amp: f64, len: usize) -> f64 {
    // Only k with u in {2k-1, 2k, 2k+1} can contribute.
    let lo = u.saturating_sub(1) / 2;
    let hi = (u + 1) / 2;
    (lo.max(1)..=hi.min(finest.len()))
        .map(|k| {
            let c = finest[k - 1];
            let c = if c.abs() > lambda { c } else { 0.0 };
            delta_psi_finest(k, u, amp, len) * c
        })
        .sum()
}

/// Combines the two trees into break locations `τ = t - 1`, keeping only
/// changes inside the original range `2 <= t <= horizon`.
fn combine(
    name: &str,
    shifted: &[f64],
    unshifted: &[f64],
    lambda: f64,
    len: usize,
    horizon: usize,
) -> PathJumps {
    let amp = ((len / 2) as f64).sqrt();
    let mut locations = Vec::new();
    let mut sizes = Vec::new();
    for t in 2..=horizon.min(len + 1) {
        let d = if t % 2 == 0 {
            delta_at(unshifted, t, lambda, amp, len)
        } else {
            delta_at(shifted, t - 1, lambda, amp, len)
        };
        if d != 0.0 {
            locations.push(t - 1);
            sizes.push(d);
        }
    }
    PathJumps {
        name: name.to_string(),
        locations,
        sizes,
    }
}

/// Applies the detection rule with threshold `lambda`.
///
/// `horizon` is the number of original periods `T`; changes located in the
/// reflected extension are discarded.
pub fn detect(trees: &[Trees], lambda: f64, horizon: usize, names: &[String]) -> JumpReport {
    let regressors = trees
        .iter()
        .enumerate()
        .map(|(p, tr)| {
            let len = 1usize << (tr.shifted.depth - 1);
            let name = names.get(p).cloned().unwrap_or_else(|| format!("x{}", p + 1));
            combine(&name, tr.shifted.finest(), tr.unshifted.finest(), lambda, len, horizon)
        })
        .collect();
    JumpReport {
        horizon,
        lambda,
        regressors,
        time_effect: None,
        trees: trees.to_vec(),
    }
}

/// Breaks in `Δθ_t`, read off the unit column of the fit.
///
/// The single sequence `Δθ_t`, `t = 2..T*+1`, is expanded on its own grid
/// (shifted tree) and on the grid moved by one period with the last value
/// repeated (unshifted tree).
fn time_effect_jumps(fit: &SawFit, lambda: f64, horizon: usize) -> Option<PathJumps> {
    if !fit.unit_column {
        return None;
    }
    let col: Vec<f64> = fit.gamma_raw.column(2 * fit.p).iter().copied().collect();
    let len = col.len();
    // unshifted sequence indexed so that position u holds Δθ_u (u = 1 unknown, repeat Δθ_2)
    let mut lagged = Vec::with_capacity(len);
    lagged.push(col[0]);
    lagged.extend_from_slice(&col[..len - 1]);
    let shifted = decompose(&col).ok()?;
    let unshifted = decompose(&lagged).ok()?;
    Some(combine("dtheta", shifted.finest(), unshifted.finest(), lambda, len, horizon))
}

/// Trees plus detection for a complete SAW fit, using the fit's threshold.
pub fn detect_from_fit(fit: &SawFit, names: &[String]) -> JumpReport {
    let horizon = fit.t_orig_diff + 1;
    let lambda = fit.lambda();
    let trees = univariate_trees(fit);
    let mut report = detect(&trees, lambda, horizon, names);
    report.time_effect = time_effect_jumps(fit, lambda, horizon);
    report
}

/// Hausdorff distance between two location sets.
///
/// When exactly one set is empty the distance is `horizon`; two empty sets
/// are at distance 0.
pub fn hausdorff(a: &[usize], b: &[usize], horizon: usize) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return horizon as f64,
        _ => {}
    }
    let dist = |x: usize, set: &[usize]| set.iter().map(|&y| x.abs_diff(y)).min().unwrap_or(0);
    let ab = a.iter().map(|&x| dist(x, b)).max().unwrap_or(0);
    let ba = b.iter().map(|&x| dist(x, a)).max().unwrap_or(0);
    ab.max(ba) as f64
}
