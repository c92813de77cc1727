//! Balanced long-format panels and the transforms applied before wavelet
//! estimation: first differencing, dyadic reflection padding, the
//! cross-sectional ("dot") demeaning and instrument preparation.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SawError};

/// A balanced panel with `n` units observed over `t` periods.
///
/// Storage is row-major with the unit index outermost: `y[i * t + s]`,
/// `x[(i * t + s) * p + k]`, `z[(i * t + s) * q + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    n: usize,
    t: usize,
    p: usize,
    q: usize,
    y: Vec<f64>,
    x: Vec<f64>,
    z: Option<Vec<f64>>,
    unit_labels: Vec<String>,
    time_labels: Vec<String>,
    regressor_names: Vec<String>,
}

impl PanelDataset {
    /// Builds a panel from raw arrays. `z`, when given, holds `q` instrument
    /// columns per cell; when absent the regressors instrument themselves.
    pub fn new(
        n: usize,
        t: usize,
        p: usize,
        y: Vec<f64>,
        x: Vec<f64>,
        z: Option<(usize, Vec<f64>)>,
    ) -> Result<Self> {
        if n < 1 {
            return Err(SawError::InvalidPanel("need at least one unit".into()));
        }
        if t < 3 {
            return Err(SawError::InvalidPanel(format!(
                "need at least 3 periods, got {t}"
            )));
        }
        if p < 1 {
            return Err(SawError::InvalidPanel("need at least one regressor".into()));
        }
        if y.len() != n * t {
            return Err(SawError::ShapeMismatch(format!(
                "y has {} values, expected {}",
                y.len(),
                n * t
            )));
        }
        if x.len() != n * t * p {
            return Err(SawError::ShapeMismatch(format!(
                "x has {} values, expected {}",
                x.len(),
                n * t * p
            )));
        }
        let (q, z) = match z {
            Some((q, z)) => {
                if z.len() != n * t * q {
                    return Err(SawError::ShapeMismatch(format!(
                        "z has {} values, expected {}",
                        z.len(),
                        n * t * q
                    )));
                }
                if q < p {
                    return Err(SawError::InvalidPanel(format!(
                        "{q} instruments for {p} regressors"
                    )));
                }
                (q, Some(z))
            }
            None => (p, None),
        };
        let all_finite = y.iter().chain(x.iter()).chain(z.iter().flatten());
        if all_finite.into_iter().any(|v| !v.is_finite()) {
            return Err(SawError::InvalidPanel("non-finite value".into()));
        }
        Ok(Self {
            n,
            t,
            p,
            q,
            y,
            x,
            z,
            unit_labels: (1..=n).map(|i| i.to_string()).collect(),
            time_labels: (1..=t).map(|s| s.to_string()).collect(),
            regressor_names: (1..=p).map(|k| format!("x{k}")).collect(),
        })
    }

    /// Replaces the default `1..=n` / `1..=t` labels.
    pub fn with_labels(mut self, units: Vec<String>, times: Vec<String>) -> Result<Self> {
        if units.len() != self.n || times.len() != self.t {
            return Err(SawError::ShapeMismatch("label count".into()));
        }
        self.unit_labels = units;
        self.time_labels = times;
        Ok(self)
    }

    pub fn with_regressor_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p {
            return Err(SawError::ShapeMismatch("regressor name count".into()));
        }
        self.regressor_names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn p(&self) -> usize {
        self.p
    }
    /// Number of instrument columns (equals `p` when no instruments were given).
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn has_instruments(&self) -> bool {
        self.z.is_some()
    }
    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }
    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }
    pub fn regressor_names(&self) -> &[String] {
        &self.regressor_names
    }

    #[inline]
    pub fn y(&self, i: usize, s: usize) -> f64 {
        self.y[i * self.t + s]
    }
    #[inline]
    pub fn x(&self, i: usize, s: usize, k: usize) -> f64 {
        self.x[(i * self.t + s) * self.p + k]
    }
    /// Instrument `k` at `(i, s)`; falls back to the regressors when the
    /// panel carries no instruments.
    #[inline]
    pub fn z(&self, i: usize, s: usize, k: usize) -> f64 {
        match &self.z {
            Some(z) => z[(i * self.t + s) * self.q + k],
            None => self.x(i, s, k),
        }
    }

    pub fn y_values(&self) -> &[f64] {
        &self.y
    }
    pub fn x_values(&self) -> &[f64] {
        &self.x
    }
    pub fn z_values(&self) -> Option<&[f64]> {
        self.z.as_deref()
    }

    /// Same panel with the instruments replaced (`q` columns).
    pub fn with_instruments(&self, q: usize, z: Vec<f64>) -> Result<Self> {
        let rebuilt = PanelDataset::new(
            self.n,
            self.t,
            self.p,
            self.y.clone(),
            self.x.clone(),
            Some((q, z)),
        )?;
        Ok(Self {
            unit_labels: self.unit_labels.clone(),
            time_labels: self.time_labels.clone(),
            regressor_names: self.regressor_names.clone(),
            ..rebuilt
        })
    }

    /// Same panel with the outcome replaced.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.y.len() {
            return Err(SawError::ShapeMismatch("outcome length".into()));
        }
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }
}

/// Column roles for [`load_panel`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    pub regressors: Vec<String>,
    #[serde(default)]
    pub instruments: Vec<String>,
}

impl PanelSchema {
    /// The conventional layout `unit,time,y,x1..xP[,z1..zQ]`, read off a header.
    pub fn from_header(header: &[&str]) -> Result<Self> {
        let numbered = |prefix: char| -> Vec<String> {
            let mut cols: Vec<(usize, String)> = header
                .iter()
                .filter_map(|h| {
                    let rest = h.strip_prefix(prefix)?;
                    rest.parse::<usize>().ok().map(|k| (k, h.to_string()))
                })
                .collect();
            cols.sort();
            cols.into_iter().map(|(_, h)| h).collect()
        };
        let schema = PanelSchema {
            unit: "unit".into(),
            time: "time".into(),
            outcome: "y".into(),
            regressors: numbered('x'),
            instruments: numbered('z'),
        };
        if schema.regressors.is_empty() {
            return Err(SawError::MissingColumn("x1".into()));
        }
        Ok(schema)
    }
}

fn label_order(labels: &mut [String]) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.trim().parse().ok()).collect();
    match numeric {
        Some(_) => labels.sort_by(|a, b| {
            let (a, b): (f64, f64) = (a.trim().parse().unwrap(), b.trim().parse().unwrap());
            a.partial_cmp(&b).unwrap_or(Ordering::Equal)
        }),
        None => labels.sort(),
    }
}

/// Reads a long-format CSV panel. With `schema = None` the header must follow
/// the `unit,time,y,x1..xP[,z1..zQ]` convention.
///
/// Units and times are ordered numerically when every label parses as a
/// number, lexicographically otherwise.
pub fn load_panel<R: Read>(source: R, schema: Option<&PanelSchema>) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let schema = match schema {
        Some(s) => s.clone(),
        None => PanelSchema::from_header(&header.iter().map(String::as_str).collect::<Vec<_>>())?,
    };
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SawError::MissingColumn(name.to_string()))
    };
    let unit_col = col(&schema.unit)?;
    let time_col = col(&schema.time)?;
    let y_col = col(&schema.outcome)?;
    let x_cols = schema.regressors.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let z_cols = schema.instruments.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    if x_cols.is_empty() {
        return Err(SawError::MissingColumn("regressor".into()));
    }
    let p = x_cols.len();
    let q = z_cols.len();

    // (unit, time) -> [y, x.., z..]
    let mut cells: HashMap<(String, String), Vec<f64>> = HashMap::new();
    let mut units: Vec<String> = Vec::new();
    let mut times: Vec<String> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let unit = record.get(unit_col).unwrap_or("").to_string();
        let time = record.get(time_col).unwrap_or("").to_string();
        let mut values = Vec::with_capacity(1 + p + q);
        for &c in std::iter::once(&y_col).chain(&x_cols).chain(&z_cols) {
            let raw = record.get(c).unwrap_or("");
            let v: f64 = raw.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                SawError::NonNumericValue {
                    unit: unit.clone(),
                    time: time.clone(),
                    column: header[c].clone(),
                    value: raw.to_string(),
                }
            })?;
            values.push(v);
        }
        let key = (unit.clone(), time.clone());
        if cells.contains_key(&key) {
            return Err(SawError::DuplicateCell { unit, time });
        }
        if !units.contains(&unit) {
            units.push(unit);
        }
        if !times.contains(&time) {
            times.push(time);
        }
        cells.insert(key, values);
    }
    label_order(&mut units);
    label_order(&mut times);
    let (n, t) = (units.len(), times.len());
    let mut y = Vec::with_capacity(n * t);
    let mut x = Vec::with_capacity(n * t * p);
    let mut z = Vec::with_capacity(n * t * q);
    for u in &units {
        for s in &times {
            let v = cells
                .get(&(u.clone(), s.clone()))
                .ok_or_else(|| SawError::UnbalancedPanel {
                    unit: u.clone(),
                    time: s.clone(),
                })?;
            y.push(v[0]);
            x.extend_from_slice(&v[1..1 + p]);
            z.extend_from_slice(&v[1 + p..]);
        }
    }
    let z = (q > 0).then_some((q, z));
    PanelDataset::new(n, t, p, y, x, z)?
        .with_labels(units, times)?
        .with_regressor_names(schema.regressors.clone())
}

/// First-differenced panel in the stacked form `ΔY = X̲'γ_t + Δe`, where
/// `X̲ = (X_t', -X_{t-1}', 1)'`. Stored time index `s = 0` corresponds to the
/// first difference `Y_2 - Y_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferencedPanel {
    n: usize,
    p: usize,
    width: usize,
    t_diff: usize,
    t_orig_diff: usize,
    unit_column: bool,
    dy: Vec<f64>,
    xu: Vec<f64>,
    zu: Vec<f64>,
}

impl DifferencedPanel {
    pub fn n(&self) -> usize {
        self.n
    }
    /// Number of original regressors `P`.
    pub fn p(&self) -> usize {
        self.p
    }
    /// Stacked width: `2P + 1` with the unit column, `2P` after the between transform.
    pub fn width(&self) -> usize {
        self.width
    }
    /// Current (possibly padded) differenced length.
    pub fn t_diff(&self) -> usize {
        self.t_diff
    }
    /// Differenced length before padding, `T - 1`.
    pub fn t_orig_diff(&self) -> usize {
        self.t_orig_diff
    }
    pub fn has_unit_column(&self) -> bool {
        self.unit_column
    }
    /// Resolution depth `L` with `t_diff = 2^(L-1)`, if the length is dyadic.
    pub fn levels(&self) -> Option<usize> {
        dyadic_levels(self.t_diff)
    }

    #[inline]
    pub fn dy(&self, i: usize, s: usize) -> f64 {
        self.dy[i * self.t_diff + s]
    }
    #[inline]
    pub fn xu_row(&self, i: usize, s: usize) -> &[f64] {
        let o = (i * self.t_diff + s) * self.width;
        &self.xu[o..o + self.width]
    }
    #[inline]
    pub fn zu_row(&self, i: usize, s: usize) -> &[f64] {
        let o = (i * self.t_diff + s) * self.width;
        &self.zu[o..o + self.width]
    }
}

/// `Some(L)` with `len = 2^(L-1)` when `len` is a power of two.
pub fn dyadic_levels(len: usize) -> Option<usize> {
    (len >= 1 && len.is_power_of_two()).then(|| len.trailing_zeros() as usize + 1)
}

/// First differences of the panel in stacked form, unpadded.
///
/// Fails with [`SawError::InstrumentCount`] when the panel carries more
/// instrument columns than regressors; reduce them with
/// [`prepare_instruments`] first.
pub fn first_difference(panel: &PanelDataset) -> Result<DifferencedPanel> {
    let (n, t, p) = (panel.n(), panel.t(), panel.p());
    if panel.q() != p {
        return Err(SawError::InstrumentCount {
            expected: p,
            found: panel.q(),
        });
    }
    let width = 2 * p + 1;
    let td = t - 1;
    let mut dy = Vec::with_capacity(n * td);
    let mut xu = Vec::with_capacity(n * td * width);
    let mut zu = Vec::with_capacity(n * td * width);
    for i in 0..n {
        for s in 0..td {
            dy.push(panel.y(i, s + 1) - panel.y(i, s));
            xu.extend((0..p).map(|k| panel.x(i, s + 1, k)));
            xu.extend((0..p).map(|k| -panel.x(i, s, k)));
            xu.push(1.0);
            zu.extend((0..p).map(|k| panel.z(i, s + 1, k)));
            zu.extend((0..p).map(|k| -panel.z(i, s, k)));
            zu.push(1.0);
        }
    }
    Ok(DifferencedPanel {
        n,
        p,
        width,
        t_diff: td,
        t_orig_diff: td,
        unit_column: true,
        dy,
        xu,
        zu,
    })
}

/// Extends the differenced sample to the next power of two by appending the
/// last observations in reversed order: appended slot `T0 + j` copies slot
/// `T0 - (j - 1)` (1-based). Dyadic input is returned unchanged.
pub fn reflect_pad(dp: &DifferencedPanel) -> DifferencedPanel {
    let cur = dp.t_diff;
    if cur.is_power_of_two() {
        return dp.clone();
    }
    let target = cur.next_power_of_two();
    let m = target - cur;
    let w = dp.width;
    let mut dy = Vec::with_capacity(dp.n * target);
    let mut xu = Vec::with_capacity(dp.n * target * w);
    let mut zu = Vec::with_capacity(dp.n * target * w);
    for i in 0..dp.n {
        let src = |s: usize| i * cur + s;
        let slots = (0..cur).chain((1..=m).map(|j| cur - j));
        for s in slots {
            dy.push(dp.dy[src(s)]);
            xu.extend_from_slice(&dp.xu[src(s) * w..(src(s) + 1) * w]);
            zu.extend_from_slice(&dp.zu[src(s) * w..(src(s) + 1) * w]);
        }
    }
    DifferencedPanel {
        t_diff: target,
        dy,
        xu,
        zu,
        ..dp.clone()
    }
}

/// Subtracts the cross-sectional mean at every time point from a series
/// stored as `values[(i * t + s) * width + c]`.
pub fn dot_columns(values: &[f64], n: usize, t: usize, width: usize) -> Vec<f64> {
    debug_assert_eq!(values.len(), n * t * width);
    let mut means = vec![0.0; t * width];
    for i in 0..n {
        for (m, v) in means.iter_mut().zip(&values[i * t * width..(i + 1) * t * width]) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut out = values.to_vec();
    for i in 0..n {
        for (o, m) in out[i * t * width..(i + 1) * t * width].iter_mut().zip(&means) {
            *o -= m;
        }
    }
    out
}

/// Cross-sectional demeaning of an `(i, t)` series.
pub fn dot_transform(series: &[f64], n: usize, t: usize) -> Vec<f64> {
    dot_columns(series, n, t, 1)
}

/// The between-transformed panel: `ΔY`, `X̲`, `Z̲` demeaned across units at
/// each time, unit column dropped.
pub fn between_transform(dp: &DifferencedPanel) -> DifferencedPanel {
    if !dp.unit_column {
        return dp.clone();
    }
    let (n, t, w) = (dp.n, dp.t_diff, dp.width);
    let nw = w - 1;
    let strip = |v: &[f64]| -> Vec<f64> {
        let dotted = dot_columns(v, n, t, w);
        dotted.chunks(w).flat_map(|row| row[..nw].iter().copied()).collect()
    };
    DifferencedPanel {
        width: nw,
        unit_column: false,
        dy: dot_columns(&dp.dy, n, t, 1),
        xu: strip(&dp.xu),
        zu: strip(&dp.zu),
        ..dp.clone()
    }
}

/// How instruments are formed before estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InstrumentMode {
    /// Every regressor instruments itself (`z := x`).
    #[default]
    #[serde(rename = "self")]
    SelfInstrumented,
    /// Each endogenous regressor is replaced by its fitted value from a
    /// two-way fixed-effects first stage on all instrument columns.
    TwoStage,
}

/// Two-way within transform of an `(i, t)` series.
fn two_way_demean(v: &[f64], n: usize, t: usize) -> Vec<f64> {
    let mut unit = vec![0.0; n];
    let mut time = vec![0.0; t];
    let mut grand = 0.0;
    for i in 0..n {
        for s in 0..t {
            let x = v[i * t + s];
            unit[i] += x;
            time[s] += x;
            grand += x;
        }
    }
    unit.iter_mut().for_each(|u| *u /= t as f64);
    time.iter_mut().for_each(|m| *m /= n as f64);
    grand /= (n * t) as f64;
    let mut out = Vec::with_capacity(n * t);
    for i in 0..n {
        for s in 0..t {
            out.push(v[i * t + s] - unit[i] - time[s] + grand);
        }
    }
    out
}

/// Applies the instrument mode. In two-stage mode every regressor is treated
/// as endogenous; see [`two_stage_instruments`] for a partial set.
pub fn prepare_instruments(panel: &PanelDataset, mode: InstrumentMode) -> Result<PanelDataset> {
    match mode {
        InstrumentMode::SelfInstrumented => {
            let z = panel.x_values().to_vec();
            panel.with_instruments(panel.p(), z)
        }
        InstrumentMode::TwoStage => {
            let all: Vec<usize> = (0..panel.p()).collect();
            two_stage_instruments(panel, &all)
        }
    }
}

/// Replaces each regressor listed in `endogenous` by its fitted value from a
/// within (two-way demeaned) regression on all instrument columns plus the
/// exogenous regressors. Exogenous regressors instrument themselves.
///
/// Fitted values include the absorbed unit and time effects, i.e. they equal
/// the regressor minus the first-stage within residual.
pub fn two_stage_instruments(panel: &PanelDataset, endogenous: &[usize]) -> Result<PanelDataset> {
    let (n, t, p, q) = (panel.n(), panel.t(), panel.p(), panel.q());
    if !panel.has_instruments() {
        return Err(SawError::Config(
            "two-stage instruments requested but the panel has no instrument columns".into(),
        ));
    }
    if q < p {
        return Err(SawError::InstrumentCount { expected: p, found: q });
    }
    if let Some(&bad) = endogenous.iter().find(|&&k| k >= p) {
        return Err(SawError::Config(format!("endogenous regressor index {bad} out of range")));
    }
    let nt = n * t;
    let column = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
        (0..n).flat_map(|i| (0..t).map(move |s| (i, s))).map(|(i, s)| f(i, s)).collect()
    };
    let exogenous: Vec<usize> = (0..p).filter(|k| !endogenous.contains(k)).collect();
    let mut design_cols: Vec<Vec<f64>> = (0..q)
        .map(|k| two_way_demean(&column(&|i, s| panel.z(i, s, k)), n, t))
        .collect();
    design_cols.extend(
        exogenous
            .iter()
            .map(|&k| two_way_demean(&column(&|i, s| panel.x(i, s, k)), n, t)),
    );
    let d = DMatrix::from_fn(nt, design_cols.len(), |r, c| design_cols[c][r]);
    let dtd = d.transpose() * &d;

    let mut fitted = vec![0.0; nt * p];
    for k in 0..p {
        let xk = column(&|i, s| panel.x(i, s, k));
        if endogenous.contains(&k) {
            let xd = DVector::from_vec(two_way_demean(&xk, n, t));
            let rhs = d.transpose() * &xd;
            let chol = dtd
                .clone()
                .cholesky()
                .ok_or(SawError::RankDeficientFirstStage { regressor: k })?;
            let coef = chol.solve(&rhs);
            let scale = dtd.diagonal().amax().max(f64::MIN_POSITIVE);
            let min_pivot = chol.l().diagonal().iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
            if min_pivot <= 1e-12 * scale {
                return Err(SawError::RankDeficientFirstStage { regressor: k });
            }
            let resid = &xd - &d * coef;
            for r in 0..nt {
                fitted[r * p + k] = xk[r] - resid[r];
            }
        } else {
            for r in 0..nt {
                fitted[r * p + k] = xk[r];
            }
        }
    }
    panel.with_instruments(p, fitted)
}

/// Intercept, unit and time effects implied by a slope path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComponents {
    pub mu: f64,
    pub alpha: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Recovers `(μ, α, θ)` from `R_it = Y_it - Σ_p X_it,p β_t,p` by overall,
/// within and between averaging. `beta_path[s * P + k]` holds `β_{s,k}`.
pub fn recover_effects(panel: &PanelDataset, beta_path: &[f64]) -> Result<ModelComponents> {
    let (n, t, p) = (panel.n(), panel.t(), panel.p());
    if beta_path.len() != t * p {
        return Err(SawError::ShapeMismatch(format!(
            "slope path has {} values, expected {}",
            beta_path.len(),
            t * p
        )));
    }
    let resid: Vec<f64> = (0..n)
        .flat_map(|i| (0..t).map(move |s| (i, s)))
        .map(|(i, s)| {
            panel.y(i, s) - (0..p).map(|k| panel.x(i, s, k) * beta_path[s * p + k]).sum::<f64>()
        })
        .collect();
    let mu = resid.iter().sum::<f64>() / (n * t) as f64;
    let alpha = (0..n)
        .map(|i| resid[i * t..(i + 1) * t].iter().sum::<f64>() / t as f64 - mu)
        .collect();
    let theta = (0..t)
        .map(|s| (0..n).map(|i| resid[i * t + s]).sum::<f64>() / n as f64 - mu)
        .collect();
    Ok(ModelComponents { mu, alpha, theta })
}
