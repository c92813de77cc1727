//! Small dense helpers on top of nalgebra: inverse and principal inverse
//! square root of possibly non-symmetric matrices.

use nalgebra::DMatrix;

use crate::error::{Result, SawError};

/// Default floor on eigenvalue moduli.
pub const DEFAULT_EPS_RANK: f64 = 1e-10;

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() <= 1e-9 * scale
}

/// Smallest eigenvalue modulus (complex eigenvalues allowed).
pub fn min_eigen_modulus(m: &DMatrix<f64>) -> f64 {
    if is_symmetric(m) {
        return m
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, v| a.min(v.abs()));
    }
    m.complex_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, v| a.min(v.norm()))
}

/// Inverse of a square matrix whose eigenvalue moduli are at least `eps`.
pub fn invert(m: &DMatrix<f64>, eps: f64, context: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() || min_eigen_modulus(m) < eps {
        return Err(SawError::SingularMatrix {
            context: context.to_string(),
        });
    }
    m.clone().try_inverse().ok_or_else(|| SawError::SingularMatrix {
        context: context.to_string(),
    })
}

/// Principal inverse square root `R` with `R·R·M = I`.
///
/// Symmetric input goes through the symmetric eigendecomposition. Other
/// matrices use the scaled Denman–Beavers iteration, which converges to the
/// principal root whenever no eigenvalue lies on the closed negative real
/// axis; complex-conjugate eigenvalue pairs are fine and the result is real.
pub fn inv_sqrt(m: &DMatrix<f64>, eps: f64, context: &str) -> Result<DMatrix<f64>> {
    let singular = || SawError::SingularMatrix {
        context: context.to_string(),
    };
    if !m.is_square() || m.nrows() == 0 {
        return Err(singular());
    }
    let dim = m.nrows();
    if is_symmetric(m) {
        // roundoff in inverted blocks leaves tiny asymmetries
        let eig = ((m + m.transpose()) * 0.5).symmetric_eigen();
        if eig.eigenvalues.iter().any(|v| v.abs() < eps) {
            return Err(singular());
        }
        if eig.eigenvalues.iter().any(|&v| v < 0.0) {
            return Err(SawError::NonRealResult {
                context: context.to_string(),
            });
        }
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
        let r = &eig.eigenvectors * d * eig.eigenvectors.transpose();
        return Ok(r);
    }

    let eigen = m.complex_eigenvalues();
    if eigen.iter().any(|v| v.norm() < eps) {
        return Err(singular());
    }
    if eigen
        .iter()
        .any(|v| v.re < 0.0 && v.im.abs() <= 1e-8 * v.norm())
    {
        return Err(SawError::NonRealResult {
            context: context.to_string(),
        });
    }

    let mut y = m.clone();
    let mut z = DMatrix::<f64>::identity(dim, dim);
    for _ in 0..200 {
        let yi = y.clone().try_inverse().ok_or_else(singular)?;
        let zi = z.clone().try_inverse().ok_or_else(singular)?;
        let det = (y.determinant() * z.determinant()).abs();
        let mu = if det.is_finite() && det > 0.0 {
            det.powf(-1.0 / (2.0 * dim as f64))
        } else {
            1.0
        };
        let y_next = (&y * mu + zi / mu) * 0.5;
        let z_next = (&z * mu + yi / mu) * 0.5;
        let delta = (&y_next - &y).norm() / y_next.norm().max(f64::MIN_POSITIVE);
        y = y_next;
        z = z_next;
        if delta < 1e-15 {
            break;
        }
    }
    let resid = (&z * &z * m - DMatrix::<f64>::identity(dim, dim)).amax();
    if !resid.is_finite() || resid > 1e-7 {
        return Err(SawError::NonRealResult {
            context: context.to_string(),
        });
    }
    Ok(z)
}
