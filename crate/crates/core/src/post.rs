//! Post-SAW estimation: IV regression on segment-interacted regressors once
//! the break locations are fixed, with four covariance estimators and
//! z-tests for consecutive segments.
//!
//! All regressors, instruments and the outcome are first-differenced and
//! then demeaned across units at each time, which removes both unit and time
//! effects. The design covers the original periods `t = 2..T`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SawError};
use crate::panel::{dot_columns, PanelDataset};

/// Structure of the differenced errors assumed by the covariance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceCase {
    /// Homoscedastic: one pooled variance.
    Pooled = 1,
    /// One variance per unit.
    PerUnit = 2,
    /// One variance per period.
    PerTime = 3,
    /// Observation-wise squared residuals.
    #[default]
    Robust = 4,
}

impl VarianceCase {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Self::Pooled),
            2 => Ok(Self::PerUnit),
            3 => Ok(Self::PerTime),
            4 => Ok(Self::Robust),
            other => Err(SawError::VarianceCase(other)),
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

/// One regime of one regressor, `start ..= end` in 1-based periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub regressor: usize,
    /// 1-based regime number within the regressor.
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

/// Segment-interacted, differenced and dotted design.
#[derive(Debug, Clone)]
pub struct SegmentDesign {
    pub n: usize,
    /// Number of original periods.
    pub t: usize,
    pub segments: Vec<Segment>,
    /// Rows `i * (T - 1) + (t - 2)`, one column per segment.
    pub dx: DMatrix<f64>,
    pub zt: DMatrix<f64>,
    pub dy: DVector<f64>,
}

impl SegmentDesign {
    /// Total parameter count `D`.
    pub fn dim(&self) -> usize {
        self.segments.len()
    }
}

/// Validated segments for one regressor's break locations.
pub fn segments_from_breaks(regressor: usize, breaks: &[usize], t: usize) -> Result<Vec<Segment>> {
    let mut out = Vec::with_capacity(breaks.len() + 1);
    let mut prev = 0;
    for &b in breaks {
        if b <= prev || b >= t {
            return Err(SawError::EmptySegment {
                regressor,
                location: b,
                horizon: t,
            });
        }
        out.push(Segment {
            regressor,
            index: out.len() + 1,
            start: prev + 1,
            end: b,
        });
        prev = b;
    }
    out.push(Segment {
        regressor,
        index: out.len() + 1,
        start: prev + 1,
        end: t,
    });
    Ok(out)
}

/// Builds the design from break locations `breaks[p]` (periods `τ` with
/// regime `j` covering `τ_{j-1} < t <= τ_j`).
pub fn build_design(panel: &PanelDataset, breaks: &[Vec<usize>]) -> Result<SegmentDesign> {
    let (n, t, p) = (panel.n(), panel.t(), panel.p());
    if breaks.len() != p {
        return Err(SawError::ShapeMismatch(format!(
            "{} break sets for {} regressors",
            breaks.len(),
            p
        )));
    }
    if panel.q() != p {
        return Err(SawError::InstrumentCount {
            expected: p,
            found: panel.q(),
        });
    }
    let mut segments = Vec::new();
    for (k, b) in breaks.iter().enumerate() {
        segments.extend(segments_from_breaks(k, b, t)?);
    }
    let d = segments.len();
    let td = t - 1;
    let inside = |seg: &Segment, period: usize| period >= seg.start && period <= seg.end;
    let mut dx = vec![0.0; n * td * d];
    let mut zt = vec![0.0; n * td * d];
    let mut dy = vec![0.0; n * td];
    for i in 0..n {
        for s in 1..t {
            // period s + 1 minus period s (1-based)
            let row = i * td + s - 1;
            dy[row] = panel.y(i, s) - panel.y(i, s - 1);
            for (c, seg) in segments.iter().enumerate() {
                let k = seg.regressor;
                let (now, before) = (inside(seg, s + 1), inside(seg, s));
                let mut vx = 0.0;
                let mut vz = 0.0;
                if now {
                    vx += panel.x(i, s, k);
                    vz += panel.z(i, s, k);
                }
                if before {
                    vx -= panel.x(i, s - 1, k);
                    vz -= panel.z(i, s - 1, k);
                }
                dx[row * d + c] = vx;
                zt[row * d + c] = vz;
            }
        }
    }
    let dx = dot_columns(&dx, n, td, d);
    let zt = dot_columns(&zt, n, td, d);
    let dy = dot_columns(&dy, n, td, 1);
    let dx = DMatrix::from_row_slice(n * td, d, &dx);
    let zt = DMatrix::from_row_slice(n * td, d, &zt);
    let scale = dx.amax().max(f64::MIN_POSITIVE);
    for c in 0..d {
        if dx.column(c).amax() <= 1e-14 * scale || zt.column(c).amax() == 0.0 {
            return Err(SawError::CollinearDesign { column: c });
        }
    }
    Ok(SegmentDesign {
        n,
        t,
        segments,
        dx,
        zt,
        dy: DVector::from_vec(dy),
    })
}

/// Coefficient of one segment with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEstimate {
    pub regressor: usize,
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub coef: f64,
    pub se: f64,
}

/// z-test of equal coefficients in consecutive regimes `index - 1` and `index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChowTest {
    pub regressor: usize,
    pub index: usize,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostSawFit {
    pub beta: Vec<f64>,
    /// Finite-sample covariance of `β̂` (row-major, `D × D`).
    pub cov: Vec<Vec<f64>>,
    /// Limit covariance `Σ̂`, i.e. `cov` rescaled by `sqrt(n T_j)` on both sides.
    pub sigma: Vec<Vec<f64>>,
    pub variance_case: VarianceCase,
    pub segments: Vec<SegmentEstimate>,
    pub tests: Vec<ChowTest>,
    /// Regime lengths `T_{j,p}` used in the normalization.
    pub t_lengths: Vec<usize>,
    /// Pooled residual variance.
    pub sigma2: f64,
}

impl PostSawFit {
    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.beta.len();
        DMatrix::from_fn(d, d, |r, c| self.cov[r][c])
    }

    /// Piecewise-constant slope path, `path[(t - 1) * P + p]` for `t = 1..=T`.
    pub fn beta_path(&self, p: usize, t: usize) -> Vec<f64> {
        let mut path = vec![0.0; t * p];
        for s in &self.segments {
            for period in s.start..=s.end {
                path[(period - 1) * p + s.regressor] = s.coef;
            }
        }
        path
    }

    /// Coefficients of one regressor's regimes in order.
    pub fn coefs(&self, regressor: usize) -> Vec<f64> {
        self.segments
            .iter()
            .filter(|s| s.regressor == regressor)
            .map(|s| s.coef)
            .collect()
    }
}

/// Regime lengths for the limit normalization: `τ_j - τ_{j-1} + 1` for all
/// but the last regime and `T - τ_S` for the last.
fn regime_lengths(segments: &[Segment]) -> Vec<usize> {
    segments
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let last = segments.get(c + 1).map_or(true, |nx| nx.regressor != s.regressor);
            if last {
                s.end + 1 - s.start
            } else {
                s.end + 2 - s.start
            }
        })
        .collect()
}

fn solve_beta(design: &SegmentDesign) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = design.zt.transpose() * &design.dx;
    let svd = m.clone().svd(false, false);
    let (smax, smin) = svd
        .singular_values
        .iter()
        .fold((0.0f64, f64::INFINITY), |(a, b), v| (a.max(*v), b.min(*v)));
    if !(smin > 1e-12 * smax) {
        return Err(SawError::SingularCrossProduct);
    }
    let m_inv = m.try_inverse().ok_or(SawError::SingularCrossProduct)?;
    let beta = &m_inv * (design.zt.transpose() * &design.dy);
    Ok((m_inv, beta))
}

/// Sandwich covariance `M^-1 Ω M^-T` of `β̂`, `M = Σ Z X'`.
pub fn covariance(
    design: &SegmentDesign,
    beta: &DVector<f64>,
    case: VarianceCase,
) -> Result<(DMatrix<f64>, f64)> {
    let (m_inv, _) = solve_beta(design)?;
    let resid = &design.dy - &design.dx * beta;
    let (n, td, d) = (design.n, design.t - 1, design.dim());
    let sq: Vec<f64> = resid.iter().map(|e| e * e).collect();
    let pooled = sq.iter().sum::<f64>() / (n * td) as f64;
    let weights: Vec<f64> = match case {
        VarianceCase::Pooled => vec![pooled; n * td],
        VarianceCase::PerUnit => (0..n * td)
            .map(|r| {
                let i = r / td;
                sq[i * td..(i + 1) * td].iter().sum::<f64>() / td as f64
            })
            .collect(),
        VarianceCase::PerTime => {
            let per: Vec<f64> = (0..td)
                .map(|s| (0..n).map(|i| sq[i * td + s]).sum::<f64>() / n as f64)
                .collect();
            (0..n * td).map(|r| per[r % td]).collect()
        }
        VarianceCase::Robust => sq,
    };
    let mut omega = DMatrix::<f64>::zeros(d, d);
    for (r, w) in weights.iter().enumerate() {
        let z = design.zt.row(r);
        omega += (z.transpose() * z) * *w;
    }
    let cov = &m_inv * omega * m_inv.transpose();
    Ok(((&cov + cov.transpose()) * 0.5, pooled))
}

/// z-tests for consecutive regimes, using the joint covariance block.
pub fn chow_tests(fit: &PostSawFit) -> Vec<ChowTest> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out = Vec::new();
    for c in 1..fit.segments.len() {
        let (a, b) = (&fit.segments[c - 1], &fit.segments[c]);
        if a.regressor != b.regressor {
            continue;
        }
        let diff = fit.beta[c] - fit.beta[c - 1];
        let var = fit.cov[c][c] + fit.cov[c - 1][c - 1] - 2.0 * fit.cov[c][c - 1];
        let z = if diff == 0.0 {
            0.0
        } else if var > 0.0 {
            diff / var.sqrt()
        } else {
            diff.signum() * f64::INFINITY
        };
        let p_value = 2.0 * (1.0 - normal.cdf(z.abs()));
        out.push(ChowTest {
            regressor: b.regressor,
            index: b.index,
            z,
            p_value,
        });
    }
    out
}

/// Solves the post-SAW IV normal equations and attaches standard errors and tests.
pub fn estimate(design: &SegmentDesign, case: VarianceCase) -> Result<PostSawFit> {
    let (_, beta) = solve_beta(design)?;
    let (cov, sigma2) = covariance(design, &beta, case)?;
    let d = design.dim();
    let t_lengths = regime_lengths(&design.segments);
    let scale: Vec<f64> = t_lengths
        .iter()
        .map(|&l| ((design.n * l) as f64).sqrt())
        .collect();
    let sigma = (0..d)
        .map(|r| (0..d).map(|c| cov[(r, c)] * scale[r] * scale[c]).collect())
        .collect();
    let segments = design
        .segments
        .iter()
        .enumerate()
        .map(|(c, s)| SegmentEstimate {
            regressor: s.regressor,
            index: s.index,
            start: s.start,
            end: s.end,
            coef: beta[c],
            se: cov[(c, c)].max(0.0).sqrt(),
        })
        .collect();
    let mut fit = PostSawFit {
        beta: beta.iter().copied().collect(),
        cov: (0..d).map(|r| (0..d).map(|c| cov[(r, c)]).collect()).collect(),
        sigma,
        variance_case: case,
        segments,
        tests: Vec::new(),
        t_lengths,
        sigma2,
    };
    fit.tests = chow_tests(&fit);
    Ok(fit)
}
