//! Simulation designs with known break structure and the Monte Carlo harness.
//!
//! All designs follow `Y_it = α_i + θ_t + Σ_p X_it,p β_t,p + σ_it e_it` with
//! piecewise-constant slopes whose regime values alternate in sign,
//! `(a_n / 3)(-1)^j`, and breaks on the grid `τ_j = ⌊j (T - 1) / (S + 1)⌋`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SawError};
use crate::jumps::hausdorff;
use crate::panel::PanelDataset;
use crate::pipeline::{fit_panel, PipelineOptions};

/// How the second argument of `N(0, v)` in the design definitions is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseParam {
    #[default]
    Variance,
    Sd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    /// Design number 1..=6.
    pub dgp: u8,
    pub n: usize,
    pub t: usize,
    pub seed: u64,
    /// Break count for the single-regressor designs 2–5 (default 3).
    pub jumps: Option<usize>,
    pub noise_param: NoiseParam,
    /// Multiplies every error standard deviation; 0 gives noise-free panels.
    pub noise_scale: f64,
}

impl DgpSpec {
    pub fn new(dgp: u8, n: usize, t: usize, seed: u64) -> Self {
        DgpSpec {
            dgp,
            n,
            t,
            seed,
            jumps: None,
            noise_param: NoiseParam::Variance,
            noise_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.dgp) {
            return Err(SawError::Config(format!("unknown design {}", self.dgp)));
        }
        if self.n < 2 {
            return Err(SawError::Config("simulation needs n >= 2".into()));
        }
        if self.t < 5 {
            return Err(SawError::Config("simulation needs T >= 5".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(SawError::Config("noise scale must be >= 0".into()));
        }
        if let Some(s) = self.jumps {
            if s + 1 > self.t - 1 {
                return Err(SawError::Config(format!("{s} breaks do not fit into T = {}", self.t)));
            }
        }
        Ok(())
    }

    /// Break counts per regressor.
    pub fn break_counts(&self) -> Vec<usize> {
        match self.dgp {
            1 => vec![2, 3],
            6 => vec![0],
            _ => vec![self.jumps.unwrap_or(3)],
        }
    }

    pub fn regressors(&self) -> usize {
        self.break_counts().len()
    }

    /// Same design with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        DgpSpec { seed, ..*self }
    }
}

/// Signal amplitude `a_n` and whether `n` was off the reference grid.
pub fn amplitude_for(n: usize) -> (f64, bool) {
    const GRID: [(usize, f64); 4] = [(30, 7.0), (60, 5.0), (120, 4.0), (300, 3.0)];
    if let Some(&(_, a)) = GRID.iter().find(|(m, _)| *m == n) {
        return (a, false);
    }
    let &(_, a) = GRID
        .iter()
        .min_by_key(|(m, _)| m.abs_diff(n))
        .expect("non-empty grid");
    (a, true)
}

/// Break grid `⌊j (T - 1) / (S + 1)⌋` and regime values `(a/3)(-1)^j`.
pub fn true_beta(s: usize, t: usize, a: f64) -> (Vec<f64>, Vec<usize>) {
    let breaks: Vec<usize> = (1..=s).map(|j| j * (t - 1) / (s + 1)).collect();
    let path = (1..=t)
        .map(|period| {
            let j = 1 + breaks.iter().filter(|&&tau| period > tau).count();
            a / 3.0 * if j % 2 == 0 { 1.0 } else { -1.0 }
        })
        .collect();
    (path, breaks)
}

/// Known truth behind a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// `beta[p][t - 1]`.
    pub beta: Vec<Vec<f64>>,
    pub breaks: Vec<Vec<usize>>,
    pub theta: Vec<f64>,
    pub a_n: f64,
    /// `n` was not on the reference grid and `a_n` was taken from the nearest point.
    pub a_n_nearest: bool,
}

/// SplitMix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep` under master seed `seed`.
pub fn replication_seed(seed: u64, rep: usize) -> u64 {
    splitmix(seed ^ splitmix(rep as u64 + 1))
}

struct Noise {
    param: NoiseParam,
    scale: f64,
}

impl Noise {
    fn sd(&self, v: f64) -> f64 {
        let sd = match self.param {
            NoiseParam::Variance => v.sqrt(),
            NoiseParam::Sd => v,
        };
        sd * self.scale
    }

    fn draw(&self, rng: &mut ChaCha8Rng, v: f64) -> f64 {
        let sd = self.sd(v);
        if sd == 0.0 {
            // keep the stream aligned with the noisy design
            let _: f64 = rng.sample(rand_distr::StandardNormal);
            return 0.0;
        }
        Normal::new(0.0, sd).expect("finite sd").sample(rng)
    }
}

/// Simulates one panel.
pub fn generate(spec: &DgpSpec) -> Result<(PanelDataset, Truth)> {
    spec.validate()?;
    let (n, t) = (spec.n, spec.t);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let noise = Noise {
        param: spec.noise_param,
        scale: spec.noise_scale,
    };
    let (a_n, nearest) = amplitude_for(n);
    let counts = spec.break_counts();
    let p = counts.len();
    let (beta, breaks): (Vec<Vec<f64>>, Vec<Vec<usize>>) = if spec.dgp == 6 {
        (vec![vec![1.0; t]], vec![Vec::new()])
    } else {
        counts.iter().map(|&s| true_beta(s, t, a_n)).unzip()
    };
    let theta = if spec.dgp == 5 {
        true_beta(t / 10, t, 7.0).0
    } else {
        vec![0.0; t]
    };

    let alpha: Vec<f64> = (0..n).map(|_| std.sample(&mut rng)).collect();
    let rho: Vec<f64> = if matches!(spec.dgp, 4 | 6) {
        let u = Uniform::new(0.25, 0.75);
        (0..n).map(|_| u.sample(&mut rng)).collect()
    } else {
        Vec::new()
    };
    let var_u = Uniform::new_inclusive(1.0f64, if spec.dgp == 5 { 2.0 } else { 3.0 });

    let mut y = Vec::with_capacity(n * t);
    let mut x = Vec::with_capacity(n * t * p);
    let mut z = Vec::with_capacity(n * t);
    for i in 0..n {
        let mut ar_prev = 0.0;
        for s in 0..t {
            let xi: Vec<f64> = (0..p).map(|_| std.sample(&mut rng)).collect();
            let (regs, err) = match spec.dgp {
                1 => {
                    let e = noise.draw(&mut rng, 2.0);
                    (xi.iter().map(|v| 0.5 * alpha[i] + v).collect::<Vec<_>>(), e)
                }
                2 => {
                    let zi = 0.5 * alpha[i] + xi[0];
                    let e = noise.draw(&mut rng, 0.5);
                    z.push(zi);
                    (vec![3.0 * zi + e], e)
                }
                3 | 5 => {
                    let e = noise.draw(&mut rng, 0.5);
                    let sigma = var_u.sample(&mut rng).sqrt();
                    (vec![0.5 * alpha[i] + xi[0]], sigma * e)
                }
                _ => {
                    let zeta_var = if spec.dgp == 6 { 4.0 } else { 3.0 };
                    let e = if s == 0 {
                        noise.draw(&mut rng, zeta_var / (1.0 - rho[i] * rho[i]))
                    } else {
                        rho[i] * ar_prev + noise.draw(&mut rng, zeta_var)
                    };
                    ar_prev = e;
                    (vec![0.5 * alpha[i] + xi[0]], e)
                }
            };
            let signal: f64 = (0..p).map(|k| regs[k] * beta[k][s]).sum();
            y.push(alpha[i] + theta[s] + signal + err);
            x.extend(regs);
        }
    }
    let instruments = (spec.dgp == 2).then_some((1, z));
    let panel = PanelDataset::new(n, t, p, y, x, instruments)?;
    Ok((
        panel,
        Truth {
            beta,
            breaks,
            theta,
            a_n,
            a_n_nearest: nearest,
        },
    ))
}

/// Applies `f` to replications `0..reps` in parallel on `threads` workers
/// (0 = all cores); results come back in replication order.
pub fn replicate<R, F>(spec: &DgpSpec, reps: usize, threads: usize, f: F) -> Result<Vec<Result<R>>>
where
    R: Send,
    F: Fn(usize, &PanelDataset, &Truth) -> Result<R> + Sync,
{
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SawError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let (panel, truth) = generate(&spec.with_seed(replication_seed(spec.seed, r)))?;
                f(r, &panel, &truth)
            })
            .collect()
    }))
}

/// Outcome of one Monte Carlo replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub error: Option<String>,
    pub s_tilde: Vec<usize>,
    /// `HD_p / T`.
    pub hd: Vec<f64>,
    /// `||β̂_p - β_p||² / T`.
    pub mse: Vec<f64>,
    pub coefs: Vec<f64>,
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub mean: f64,
    pub sd: f64,
}

impl Moment {
    pub fn of(values: &[f64]) -> Self {
        let m = values.len();
        if m == 0 {
            return Moment { mean: f64::NAN, sd: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / m as f64;
        let sd = if m > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
        } else {
            0.0
        };
        Moment { mean, sd }
    }

    /// `"mean (sd)"` with `digits` decimals.
    pub fn display(&self, digits: usize) -> String {
        format!("{:.*} ({:.*})", digits, self.mean, digits, self.sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub spec: DgpSpec,
    pub reps: usize,
    pub a_n: f64,
    pub a_n_nearest: bool,
    pub records: Vec<RepRecord>,
}

impl McResult {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }

    fn ok(&self) -> impl Iterator<Item = &RepRecord> {
        self.records.iter().filter(|r| r.error.is_none())
    }

    pub fn s_tilde(&self, p: usize) -> Moment {
        Moment::of(&self.ok().map(|r| r.s_tilde[p] as f64).collect::<Vec<_>>())
    }

    pub fn hd(&self, p: usize) -> Moment {
        Moment::of(&self.ok().map(|r| r.hd[p]).collect::<Vec<_>>())
    }

    pub fn mse(&self, p: usize) -> Moment {
        Moment::of(&self.ok().map(|r| r.mse[p]).collect::<Vec<_>>())
    }

    /// Metrics table: one row `(T, n)`, columns as `"mean (sd)"`.
    pub fn to_csv(&self) -> Result<String> {
        let p = self.spec.regressors();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["T".to_string(), "n".to_string()];
        for k in 1..=p {
            header.push(format!("S{k}"));
            header.push(format!("HD{k}/T"));
            header.push(format!("MSE{k}"));
        }
        header.push("reps".into());
        header.push("failures".into());
        w.write_record(&header)?;
        let mut row = vec![self.spec.t.to_string(), self.spec.n.to_string()];
        for k in 0..p {
            row.push(self.s_tilde(k).display(3));
            row.push(self.hd(k).display(3));
            row.push(self.mse(k).display(3));
        }
        row.push(self.reps.to_string());
        row.push(self.failures().to_string());
        w.write_record(&row)?;
        let bytes = w.into_inner().map_err(|e| SawError::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| SawError::Io(e.to_string()))
    }

    /// Plain-text summary.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "design {} with n = {}, T = {}, {} replications ({} failed), seed {}\n",
            self.spec.dgp,
            self.spec.n,
            self.spec.t,
            self.reps,
            self.failures(),
            self.spec.seed
        );
        if self.a_n_nearest {
            out.push_str(&format!(
                "note: n = {} is off the reference grid; a_n = {} taken from the nearest grid point\n",
                self.spec.n, self.a_n
            ));
        }
        for k in 0..self.spec.regressors() {
            out.push_str(&format!(
                "x{}: S = {}, HD/T = {}, MSE = {}\n",
                k + 1,
                self.s_tilde(k).display(3),
                self.hd(k).display(3),
                self.mse(k).display(3)
            ));
        }
        out
    }
}

/// Metrics of a fitted replication against the truth.
pub fn score(panel: &PanelDataset, truth: &Truth, opts: &PipelineOptions) -> Result<RepRecord> {
    let fit = fit_panel(panel, opts)?;
    let t = panel.t();
    let p = panel.p();
    let mut hd = Vec::with_capacity(p);
    let mut mse = Vec::with_capacity(p);
    for k in 0..p {
        let est = &fit.jumps.regressors[k].locations;
        hd.push(hausdorff(est, &truth.breaks[k], t) / t as f64);
        let path = fit.path(k);
        mse.push(
            path.iter()
                .zip(&truth.beta[k])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / t as f64,
        );
    }
    Ok(RepRecord {
        rep: 0,
        error: None,
        s_tilde: fit.jumps.counts(),
        hd,
        mse,
        coefs: fit.post.beta.clone(),
    })
}

/// Runs `reps` replications of the full estimator. Failed replications are
/// recorded, never fatal.
pub fn run_monte_carlo(spec: &DgpSpec, reps: usize, threads: usize, opts: &PipelineOptions) -> Result<McResult> {
    if reps == 0 {
        return Err(SawError::Config("at least one replication is required".into()));
    }
    let results = replicate(spec, reps, threads, |_, panel, truth| score(panel, truth, opts))?;
    let p = spec.regressors();
    let records = results
        .into_iter()
        .enumerate()
        .map(|(rep, res)| match res {
            Ok(rec) => RepRecord { rep, ..rec },
            Err(e) => RepRecord {
                rep,
                error: Some(e.code().to_string()),
                s_tilde: vec![0; p],
                hd: vec![f64::NAN; p],
                mse: vec![f64::NAN; p],
                coefs: Vec::new(),
            },
        })
        .collect();
    let (a_n, nearest) = amplitude_for(spec.n);
    Ok(McResult {
        spec: *spec,
        reps,
        a_n,
        a_n_nearest: nearest,
        records,
    })
}
