//! Structure-adapted wavelet (SAW) estimation of the stacked coefficient
//! path `γ_t` in `ΔY_it = X̲_it'γ_t + Δe_it`.
//!
//! The multivariate Haar basis uses matrices `A_{l,m}` on the regressor side
//! and `B_{l,m}` on the instrument side, chosen so that the empirical
//! cross-moments of the transformed instruments and regressors are the
//! identity for matching basis functions and zero otherwise. With `Z = X`
//! both sides coincide.
//!
//! Coefficient vectors are stored as rows of a `T × P̲` matrix in flat order:
//! row 0 is `(1,1)`, row `2^(l-2) + k - 1` is `(l, k)`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SawError};
use crate::haar::{amplitude, block_len, translations};
use crate::linalg::{inv_sqrt, invert, min_eigen_modulus, DEFAULT_EPS_RANK};
use crate::panel::DifferencedPanel;

/// Absolute lower bound applied to the data-driven threshold.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Relative size below which a coefficient is indistinguishable from
/// roundoff in the largest one.
pub const COEFFICIENT_RESOLUTION: f64 = 1.49e-8;

/// Tolerance used when checking the orthonormality conditions after
/// construction.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// How the residual variance `V` entering the threshold is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceRule {
    /// Average the per-coefficient variances over the translations of each
    /// level, then take the largest over levels and components.
    #[default]
    PooledLevel,
    /// Largest per-coefficient variance over all levels, translations and
    /// components.
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SawOptions {
    /// Floor on eigenvalue moduli of every `Q` block.
    pub eps_rank: f64,
    /// Small-`n` threshold variant: multiply λ by `(sqrt(T)/log T)^(κ/2)`.
    pub small_n: bool,
    /// Fixed threshold replacing the data-driven one.
    pub lambda: Option<f64>,
    pub variance_rule: VarianceRule,
}

impl Default for SawOptions {
    fn default() -> Self {
        SawOptions {
            eps_rank: DEFAULT_EPS_RANK,
            small_n: false,
            lambda: None,
            variance_rule: VarianceRule::default(),
        }
    }
}

/// Flat row index of basis function `(l, k)`.
#[inline]
pub fn flat_index(level: usize, k: usize) -> usize {
    if level == 1 {
        0
    } else {
        (1 << (level - 2)) + k - 1
    }
}

/// Inverse of [`flat_index`].
#[inline]
pub fn level_translation(j: usize) -> (usize, usize) {
    if j == 0 {
        (1, 1)
    } else {
        let level = (usize::BITS - 1 - j.leading_zeros()) as usize + 2;
        (level, j - (1 << (level - 2)) + 1)
    }
}

/// Per-time cross moments `G_t = (nT)^-1 Σ_i Z̲ X̲'` and `g_t = (nT)^-1 Σ_i Z̲ ΔY`.
struct Moments {
    cross: Vec<DMatrix<f64>>,
    score: Vec<DVector<f64>>,
}

impl Moments {
    fn new(dp: &DifferencedPanel) -> Self {
        let (n, len, w) = (dp.n(), dp.t_diff(), dp.width());
        let scale = 1.0 / (n * len) as f64;
        let mut cross = vec![DMatrix::<f64>::zeros(w, w); len];
        let mut score = vec![DVector::<f64>::zeros(w); len];
        for s in 0..len {
            let (c, g) = (&mut cross[s], &mut score[s]);
            for i in 0..n {
                let (z, x, dy) = (dp.zu_row(i, s), dp.xu_row(i, s), dp.dy(i, s));
                for a in 0..w {
                    g[a] += z[a] * dy;
                    for b in 0..w {
                        c[(a, b)] += z[a] * x[b];
                    }
                }
            }
            *c *= scale;
            *g *= scale;
        }
        Moments { cross, score }
    }
}

/// Sum of `items[a-1 .. a-1+len]` (1-based start).
fn block_sum<T>(prefix: &[T], start: usize, len: usize) -> T
where
    T: Clone + std::ops::Sub<Output = T>,
    for<'a> &'a T: std::ops::Sub<&'a T, Output = T>,
{
    &prefix[start - 1 + len] - &prefix[start - 1]
}

fn prefix_sums<T>(items: &[T], zero: T) -> Vec<T>
where
    T: Clone + std::ops::Add<Output = T>,
    for<'a> &'a T: std::ops::Add<&'a T, Output = T>,
{
    let mut out = Vec::with_capacity(items.len() + 1);
    out.push(zero);
    for it in items {
        let next = out.last().unwrap() + it;
        out.push(next);
    }
    out
}

/// The structure-adapted multivariate Haar basis for one differenced panel.
#[derive(Debug, Clone)]
pub struct SawBasis {
    depth: usize,
    width: usize,
    q11: DMatrix<f64>,
    q: Vec<Vec<DMatrix<f64>>>,
    a11: DMatrix<f64>,
    a: Vec<Vec<DMatrix<f64>>>,
    b11: DMatrix<f64>,
    b: Vec<Vec<DMatrix<f64>>>,
    defect: f64,
}

impl SawBasis {
    /// Depth `L`.
    pub fn depth(&self) -> usize {
        self.depth
    }
    /// Stacked width `P̲`.
    pub fn width(&self) -> usize {
        self.width
    }
    /// Grid length `2^(L-1)`.
    pub fn len(&self) -> usize {
        1 << (self.depth - 1)
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn q11(&self) -> &DMatrix<f64> {
        &self.q11
    }
    /// `Q_{l,m}`, `l >= 2`, `m = 1..=2K_l`.
    pub fn q(&self, level: usize, block: usize) -> &DMatrix<f64> {
        &self.q[level - 2][block - 1]
    }
    pub fn a11(&self) -> &DMatrix<f64> {
        &self.a11
    }
    pub fn a(&self, level: usize, block: usize) -> &DMatrix<f64> {
        &self.a[level - 2][block - 1]
    }

    /// Largest deviation of the empirical cross-moment matrices from the
    /// orthonormality conditions, measured at construction.
    pub fn orthonormality_defect(&self) -> f64 {
        self.defect
    }

    /// Block of level `l` containing stored time `s` (1-based).
    #[inline]
    fn block_of(&self, level: usize, s: usize) -> usize {
        (s - 1) / block_len(level, self.depth) + 1
    }

    fn eval(&self, side: &[Vec<DMatrix<f64>>], glob: &DMatrix<f64>, level: usize, k: usize, s: usize) -> DMatrix<f64> {
        if level == 1 {
            return glob.clone();
        }
        let w = self.width;
        if s == 0 || s > self.len() {
            return DMatrix::zeros(w, w);
        }
        let m = self.block_of(level, s);
        if (m + 1) / 2 != k {
            return DMatrix::zeros(w, w);
        }
        let h = amplitude(level);
        let mat = &side[level - 2][m - 1];
        if m % 2 == 1 {
            mat * h
        } else {
            mat * -h
        }
    }

    /// Regressor-side basis matrix `W_{l,k}(s)` at stored time `s` (1-based).
    pub fn w(&self, level: usize, k: usize, s: usize) -> DMatrix<f64> {
        self.eval(&self.a, &self.a11, level, k, s)
    }

    /// Instrument-side basis matrix at stored time `s` (1-based).
    pub fn w_instrument(&self, level: usize, k: usize, s: usize) -> DMatrix<f64> {
        self.eval(&self.b, &self.b11, level, k, s)
    }

    /// Basis functions active at stored time `s`: `(flat index, level, block, signed amplitude)`.
    fn active(&self, s: usize) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        (2..=self.depth).map(move |l| {
            let m = self.block_of(l, s);
            let k = (m + 1) / 2;
            let h = amplitude(l);
            (flat_index(l, k), l, m, if m % 2 == 1 { h } else { -h })
        })
    }

    /// `Σ_j W_j(s) c_j` for every stored time, i.e. the coefficient path.
    pub fn reconstruct(&self, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        let len = self.len();
        let w = self.width;
        let base = &self.a11 * coeffs.row(0).transpose();
        let mut path = DMatrix::<f64>::zeros(len, w);
        for s in 1..=len {
            let mut v = base.clone();
            for (j, l, m, sh) in self.active(s) {
                let c = coeffs.row(j).transpose();
                if c.iter().all(|x| *x == 0.0) {
                    continue;
                }
                v += (&self.a[l - 2][m - 1] * c) * sh;
            }
            path.set_row(s - 1, &v.transpose());
        }
        path
    }

    fn measure_defect(&self, moments: &Moments) -> f64 {
        let len = self.len();
        let w = self.width;
        let mut acc: HashMap<(usize, usize), DMatrix<f64>> = HashMap::new();
        for s in 1..=len {
            let g = &moments.cross[s - 1];
            let mut terms: Vec<(usize, DMatrix<f64>, DMatrix<f64>)> =
                vec![(0, self.b11.clone(), self.a11.clone())];
            terms.extend(self.active(s).map(|(j, l, m, sh)| {
                (j, &self.b[l - 2][m - 1] * sh, &self.a[l - 2][m - 1] * sh)
            }));
            for (ja, wb, _) in &terms {
                let left = wb.transpose() * g;
                for (jb, _, wa) in &terms {
                    let e = acc
                        .entry((*ja, *jb))
                        .or_insert_with(|| DMatrix::zeros(w, w));
                    *e += &left * wa;
                }
            }
        }
        let eye = DMatrix::<f64>::identity(w, w);
        acc.iter()
            .map(|((a, b), m)| if a == b { (m - &eye).amax() } else { m.amax() })
            .fold(0.0, f64::max)
    }
}

/// Builds the basis for a dyadic differenced panel.
pub fn build_basis(dp: &DifferencedPanel, opts: &SawOptions) -> Result<SawBasis> {
    let depth = dp.levels().ok_or(SawError::NonDyadicLength(dp.t_diff()))?;
    if depth < 2 {
        return Err(SawError::NonDyadicLength(dp.t_diff()));
    }
    let moments = Moments::new(dp);
    build_from_moments(depth, dp.width(), &moments, opts)
}

/// Factors `m^{-1} = R L` so that `L m R = I`. The symmetric choice
/// `L = R = m^{-1/2}` is used whenever that root is real; otherwise (possible
/// only with distinct instruments) the one-sided `L = I, R = m^{-1}`.
fn balanced_split(m: &DMatrix<f64>, eps: f64, ctx: &str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    match inv_sqrt(m, eps, ctx) {
        Ok(root) => Ok((root.clone(), root)),
        Err(SawError::NonRealResult { .. }) => {
            log::warn!("{ctx} has no real inverse square root; using a one-sided normalisation");
            let inv = invert(m, eps, ctx)?;
            Ok((DMatrix::identity(m.nrows(), m.ncols()), inv))
        }
        Err(e) => Err(e),
    }
}

fn build_from_moments(depth: usize, w: usize, moments: &Moments, opts: &SawOptions) -> Result<SawBasis> {
    let eps = opts.eps_rank;
    let prefix = prefix_sums(&moments.cross, DMatrix::zeros(w, w));
    let len = moments.cross.len();
    let q11 = block_sum(&prefix, 1, len);
    let check = |m: &DMatrix<f64>, ctx: &str| -> Result<()> {
        if min_eigen_modulus(m) < eps {
            Err(SawError::SingularMatrix { context: ctx.to_string() })
        } else {
            Ok(())
        }
    };
    check(&q11, "Q(1,1)")?;
    let (l11, r11) = balanced_split(&q11, eps, "Q(1,1)")?;
    let a11 = r11;
    let b11 = l11.transpose();

    let mut q = Vec::with_capacity(depth - 1);
    let mut a = Vec::with_capacity(depth - 1);
    let mut b = Vec::with_capacity(depth - 1);
    for l in 2..=depth {
        let bl = block_len(l, depth);
        let h2 = (1u64 << (l - 2)) as f64;
        let ql: Vec<DMatrix<f64>> = (1..=2 * translations(l))
            .map(|m| block_sum(&prefix, bl * (m - 1) + 1, bl) * h2)
            .collect();
        let mut al = Vec::with_capacity(ql.len());
        let mut bl_mats = Vec::with_capacity(ql.len());
        for k in 1..=translations(l) {
            let ctx1 = format!("Q({l},{})", 2 * k - 1);
            let ctx2 = format!("Q({l},{})", 2 * k);
            check(&ql[2 * k - 2], &ctx1)?;
            check(&ql[2 * k - 1], &ctx2)?;
            let qi1 = invert(&ql[2 * k - 2], eps, &ctx1)?;
            let qi2 = invert(&ql[2 * k - 1], eps, &ctx2)?;
            let s = &qi1 + &qi2;
            let (left, right) =
                balanced_split(&s, eps, &format!("Q({l},{})^-1 + Q({l},{})^-1", 2 * k - 1, 2 * k))?;
            al.push(&qi1 * &right);
            al.push(&qi2 * &right);
            bl_mats.push((&left * &qi1).transpose());
            bl_mats.push((&left * &qi2).transpose());
        }
        q.push(ql);
        a.push(al);
        b.push(bl_mats);
    }
    let mut basis = SawBasis {
        depth,
        width: w,
        q11,
        q,
        a11,
        a,
        b11,
        b,
        defect: 0.0,
    };
    basis.defect = basis.measure_defect(moments);
    if basis.defect > ORTHONORMALITY_TOL {
        log::warn!(
            "orthonormality defect {:.3e} exceeds {:.0e}; Q blocks are poorly conditioned",
            basis.defect,
            ORTHONORMALITY_TOL
        );
    }
    Ok(basis)
}

fn estimate_from_moments(basis: &SawBasis, moments: &Moments) -> DMatrix<f64> {
    let w = basis.width;
    let len = basis.len();
    let prefix = prefix_sums(&moments.score, DVector::zeros(w));
    let mut out = DMatrix::<f64>::zeros(len, w);
    let total = block_sum(&prefix, 1, len);
    out.set_row(0, &(basis.b11.transpose() * total).transpose());
    for l in 2..=basis.depth {
        let bl = block_len(l, basis.depth);
        let h = amplitude(l);
        for k in 1..=translations(l) {
            let g1 = block_sum(&prefix, bl * (2 * k - 2) + 1, bl);
            let g2 = block_sum(&prefix, bl * (2 * k - 1) + 1, bl);
            let v = (basis.b[l - 2][2 * k - 2].transpose() * g1
                - basis.b[l - 2][2 * k - 1].transpose() * g2)
                * h;
            out.set_row(flat_index(l, k), &v.transpose());
        }
    }
    out
}

/// Raw wavelet coefficient vectors `b̃_{l,k} = (nT)^-1 Σ_{i,t} 𝒵_{l,k,it} ΔY_it`,
/// one row per basis function in flat order.
pub fn estimate_b(dp: &DifferencedPanel, basis: &SawBasis) -> DMatrix<f64> {
    estimate_from_moments(basis, &Moments::new(dp))
}

/// Data-driven threshold and the quantities it is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub lambda: f64,
    pub v_hat: f64,
    pub kappa: f64,
    /// Set when the residual variance vanished and λ fell back to the floor.
    pub degenerate: bool,
}

/// `κ = 1 - log log(nT) / log(nT)`, kept inside `(0, 1)`.
pub fn kappa(n: usize, len: usize) -> f64 {
    let nt = (n * len) as f64;
    let k = 1.0 - nt.ln().ln() / nt.ln();
    if k.is_finite() {
        k.clamp(0.05, 0.999)
    } else {
        0.5
    }
}

/// `λ = V^(1/2) (2P̲ log(T P̲) / (n T^(1/κ)))^(κ/2)`, optionally times the
/// small-`n` factor `(sqrt(T)/log T)^(κ/2)`.
pub fn threshold_value(v_hat: f64, n: usize, len: usize, width: usize, kappa: f64, small_n: bool) -> f64 {
    let (nf, tf, wf) = (n as f64, len as f64, width as f64);
    let base = 2.0 * wf * (tf * wf).ln() / (nf * tf.powf(1.0 / kappa));
    let mut lambda = v_hat.max(0.0).sqrt() * base.powf(kappa / 2.0);
    if small_n && tf > 1.0 {
        lambda *= (tf.sqrt() / tf.ln()).powf(kappa / 2.0);
    }
    lambda
}

fn threshold_from_raw(
    dp: &DifferencedPanel,
    basis: &SawBasis,
    raw: &DMatrix<f64>,
    opts: &SawOptions,
) -> Threshold {
    let (n, len, w) = (dp.n(), dp.t_diff(), dp.width());
    let gamma = basis.reconstruct(raw);
    let scale = 1.0 / (n * len) as f64;
    // U_t = (nT)^-1 Σ_i (Z̲ ẽ)(Z̲ ẽ)'
    let mut outer = Vec::with_capacity(len);
    for s in 0..len {
        let mut u = DMatrix::<f64>::zeros(w, w);
        let g = gamma.row(s);
        for i in 0..n {
            let x = dp.xu_row(i, s);
            let fit: f64 = x.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            let e = dp.dy(i, s) - fit;
            let z = DVector::from_iterator(w, dp.zu_row(i, s).iter().map(|v| v * e));
            u += &z * z.transpose();
        }
        outer.push(u * scale);
    }
    let prefix = prefix_sums(&outer, DMatrix::zeros(w, w));
    let diag = |m: &DMatrix<f64>| m.diagonal();
    let mut v_hat = diag(&(basis.b11.transpose() * block_sum(&prefix, 1, len) * &basis.b11)).max();
    for l in 2..=basis.depth {
        let bl = block_len(l, basis.depth);
        let h2 = (1u64 << (l - 2)) as f64;
        let mut pooled = DVector::<f64>::zeros(w);
        for k in 1..=translations(l) {
            let (b1, b2) = (&basis.b[l - 2][2 * k - 2], &basis.b[l - 2][2 * k - 1]);
            let u1 = block_sum(&prefix, bl * (2 * k - 2) + 1, bl);
            let u2 = block_sum(&prefix, bl * (2 * k - 1) + 1, bl);
            let v = diag(&((b1.transpose() * u1 * b1 + b2.transpose() * u2 * b2) * h2));
            match opts.variance_rule {
                VarianceRule::Pointwise => v_hat = v_hat.max(v.max()),
                VarianceRule::PooledLevel => pooled += v,
            }
        }
        if opts.variance_rule == VarianceRule::PooledLevel {
            v_hat = v_hat.max(pooled.max() / translations(l) as f64);
        }
    }
    let kappa = kappa(n, len);
    let lambda = threshold_value(v_hat, n, len, w, kappa, opts.small_n);
    // noise-free panels leave V at roundoff level
    let floor = LAMBDA_FLOOR.max(COEFFICIENT_RESOLUTION * raw.amax());
    let degenerate = !(v_hat > 0.0) || !(lambda >= floor);
    if degenerate {
        log::warn!("residual variance V = {v_hat:.3e} is degenerate; threshold set to {floor:.3e}");
    }
    Threshold {
        lambda: if degenerate { floor } else { lambda },
        v_hat,
        kappa,
        degenerate,
    }
}

/// Universal threshold from the residuals of the unthresholded (λ = 0) fit.
pub fn select_threshold(dp: &DifferencedPanel, basis: &SawBasis, opts: &SawOptions) -> Threshold {
    let raw = estimate_b(dp, basis);
    threshold_from_raw(dp, basis, &raw, opts)
}

/// Result of the SAW step.
#[derive(Debug, Clone)]
pub struct SawFit {
    /// Number of original regressors `P`.
    pub p: usize,
    pub depth: usize,
    pub width: usize,
    /// Unpadded differenced length `T - 1`.
    pub t_orig_diff: usize,
    pub unit_column: bool,
    pub b_raw: DMatrix<f64>,
    pub b_shrunk: DMatrix<f64>,
    pub threshold: Threshold,
    /// `γ̂_t` from the thresholded coefficients (`T × P̲`).
    pub gamma_hat: DMatrix<f64>,
    /// `γ̃_t` from the raw coefficients.
    pub gamma_raw: DMatrix<f64>,
}

impl SawFit {
    pub fn lambda(&self) -> f64 {
        self.threshold.lambda
    }
    /// Number of coefficient vectors with at least one surviving entry.
    pub fn active_vectors(&self) -> usize {
        self.b_shrunk
            .row_iter()
            .filter(|r| r.iter().any(|v| *v != 0.0))
            .count()
    }
}

/// Hard-thresholds the raw coefficients elementwise and reconstructs both paths.
pub fn shrink_and_reconstruct(
    dp: &DifferencedPanel,
    raw: &DMatrix<f64>,
    threshold: Threshold,
    basis: &SawBasis,
) -> SawFit {
    let lambda = threshold.lambda;
    let b_shrunk = raw.map(|v| if v.abs() > lambda { v } else { 0.0 });
    SawFit {
        p: dp.p(),
        depth: basis.depth,
        width: basis.width,
        t_orig_diff: dp.t_orig_diff(),
        unit_column: dp.has_unit_column(),
        gamma_hat: basis.reconstruct(&b_shrunk),
        gamma_raw: basis.reconstruct(raw),
        b_raw: raw.clone(),
        b_shrunk,
        threshold,
    }
}

/// Full SAW step: basis, raw coefficients, threshold, shrinkage.
pub fn fit_saw(dp: &DifferencedPanel, opts: &SawOptions) -> Result<(SawBasis, SawFit)> {
    if let Some(l) = opts.lambda {
        if !(l >= 0.0) {
            return Err(SawError::Config(format!("threshold override must be >= 0, got {l}")));
        }
    }
    let depth = dp.levels().ok_or(SawError::NonDyadicLength(dp.t_diff()))?;
    if depth < 2 {
        return Err(SawError::NonDyadicLength(dp.t_diff()));
    }
    let moments = Moments::new(dp);
    let basis = build_from_moments(depth, dp.width(), &moments, opts)?;
    let raw = estimate_from_moments(&basis, &moments);
    let mut threshold = threshold_from_raw(dp, &basis, &raw, opts);
    if let Some(l) = opts.lambda {
        threshold.lambda = l;
        threshold.degenerate = false;
    }
    let fit = shrink_and_reconstruct(dp, &raw, threshold, &basis);
    Ok((basis, fit))
}
