//! Univariate Haar kernels on a dyadic grid `t = 1..T*`, `T* = 2^(L-1)`.
//!
//! Level `l = 2..L` has `K_l = 2^(l-2)` translations; `ψ_{l,k}` is
//! `+sqrt(2^(l-2))` on block `2k-1`, `-sqrt(2^(l-2))` on block `2k`, where
//! block `m` of level `l` covers `2^(L-l)(m-1)+1 ..= 2^(L-l)m`. Together with
//! the constant they form a basis orthonormal under `(1/T*)<.,.>`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SawError};
use crate::panel::dyadic_levels;

/// Number of translations at level `l` (1 for the global level `l = 1`).
#[inline]
pub fn translations(level: usize) -> usize {
    if level <= 1 {
        1
    } else {
        1 << (level - 2)
    }
}

/// Length of one indicator block at level `l` (`l >= 2`) for depth `L`.
#[inline]
pub fn block_len(level: usize, depth: usize) -> usize {
    1 << (depth - level)
}

/// Amplitude `sqrt(2^(l-2))` of `ψ_{l,k}`.
#[inline]
pub fn amplitude(level: usize) -> f64 {
    ((1u64 << (level - 2)) as f64).sqrt()
}

/// `I_{l,m}(t)`: 1 when `t` lies in block `m` of level `l`, 0 otherwise
/// (including `t` outside `1..=2^(L-1)`).
pub fn indicator(level: usize, block: usize, t: usize, depth: usize) -> u8 {
    if level < 2 || level > depth || block == 0 || t == 0 || t > 1 << (depth - 1) {
        return 0;
    }
    let len = block_len(level, depth);
    u8::from(t > len * (block - 1) && t <= len * block)
}

/// Sparse description of `ψ_{l,k}`: positive half starts at `start`
/// (1-based), each half spans `half` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub start: usize,
    pub half: usize,
    pub amplitude: f64,
}

impl Support {
    pub fn new(level: usize, k: usize, depth: usize) -> Result<Self> {
        if level < 2 || level > depth || k == 0 || k > translations(level) {
            return Err(SawError::IndexOutOfRange {
                level,
                translation: k,
                depth,
            });
        }
        let half = block_len(level, depth);
        Ok(Support {
            start: half * 2 * (k - 1) + 1,
            half,
            amplitude: amplitude(level),
        })
    }

    /// Value at `t` (1-based).
    #[inline]
    pub fn value(&self, t: usize) -> f64 {
        if t >= self.start && t < self.start + self.half {
            self.amplitude
        } else if t >= self.start + self.half && t < self.start + 2 * self.half {
            -self.amplitude
        } else {
            0.0
        }
    }
}

/// `ψ_{l,k}(t)` for depth `L`; zero outside `1..=2^(L-1)`.
pub fn psi(level: usize, k: usize, t: usize, depth: usize) -> Result<f64> {
    Ok(Support::new(level, k, depth)?.value(t))
}

/// Coefficients of the Haar expansion `g_t = c1 + Σ_l Σ_k ψ_{l,k}(t) c_{l,k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaarCoefficients {
    /// Depth `L`.
    pub depth: usize,
    /// Global level.
    pub c1: f64,
    /// `detail[l - 2][k - 1]` for `l = 2..=L`.
    pub detail: Vec<Vec<f64>>,
}

impl HaarCoefficients {
    pub fn zeros(depth: usize) -> Self {
        HaarCoefficients {
            depth,
            c1: 0.0,
            detail: (2..=depth).map(|l| vec![0.0; translations(l)]).collect(),
        }
    }

    pub fn get(&self, level: usize, k: usize) -> f64 {
        if level == 1 {
            self.c1
        } else {
            self.detail[level - 2][k - 1]
        }
    }

    /// Finest-level (`l = L`) coefficients.
    pub fn finest(&self) -> &[f64] {
        self.detail.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        1 + self.detail.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of coefficients (including `c1`) with `|c| > tol`.
    pub fn nonzero_count(&self, tol: f64) -> usize {
        usize::from(self.c1.abs() > tol)
            + self.detail.iter().flatten().filter(|c| c.abs() > tol).count()
    }
}

/// Haar analysis of a dyadic-length vector.
pub fn decompose(g: &[f64]) -> Result<HaarCoefficients> {
    let depth = dyadic_levels(g.len()).ok_or(SawError::NonDyadicLength(g.len()))?;
    let tn = g.len() as f64;
    // prefix[t] = g_1 + ... + g_t
    let mut prefix = vec![0.0; g.len() + 1];
    for (t, v) in g.iter().enumerate() {
        prefix[t + 1] = prefix[t] + v;
    }
    let block_sum = |a: usize, len: usize| prefix[a - 1 + len] - prefix[a - 1];
    let detail = (2..=depth)
        .map(|l| {
            (1..=translations(l))
                .map(|k| {
                    let s = Support::new(l, k, depth).expect("in range");
                    let pos = block_sum(s.start, s.half);
                    let neg = block_sum(s.start + s.half, s.half);
                    s.amplitude * (pos - neg) / tn
                })
                .collect()
        })
        .collect();
    Ok(HaarCoefficients {
        depth,
        c1: prefix[g.len()] / tn,
        detail,
    })
}

/// Haar synthesis; exact inverse of [`decompose`].
pub fn reconstruct(coeffs: &HaarCoefficients) -> Vec<f64> {
    let depth = coeffs.depth;
    let len = 1usize << (depth - 1);
    let mut g = vec![coeffs.c1; len];
    for l in 2..=depth {
        for k in 1..=translations(l) {
            let c = coeffs.get(l, k);
            if c == 0.0 {
                continue;
            }
            let s = Support::new(l, k, depth).expect("in range");
            for t in s.start..s.start + s.half {
                g[t - 1] += s.amplitude * c;
            }
            for t in s.start + s.half..s.start + 2 * s.half {
                g[t - 1] -= s.amplitude * c;
            }
        }
    }
    g
}
