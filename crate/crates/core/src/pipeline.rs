//! End-to-end estimation: difference, pad, SAW, break detection, post-SAW.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SawError};
use crate::jumps::{detect_from_fit, JumpReport};
use crate::panel::{
    between_transform, first_difference, prepare_instruments, recover_effects, reflect_pad,
    InstrumentMode, ModelComponents, PanelDataset,
};
use crate::post::{build_design, estimate, PostSawFit, VarianceCase};
use crate::saw::{fit_saw, SawFit, SawOptions, VarianceRule};
use crate::linalg::DEFAULT_EPS_RANK;

/// How common time effects are handled in the SAW step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TimeEffects {
    /// Keep `Δθ_t` as the coefficient of a unit regressor.
    #[default]
    Unit,
    /// Demean across units at every period and drop the unit regressor.
    Between,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub time_effects: TimeEffects,
    pub instruments: InstrumentMode,
    pub variance_case: VarianceCase,
    pub lambda: Option<f64>,
    /// Impose the union of all detected breaks on every regressor.
    pub common_jumps: bool,
    pub small_n: bool,
    pub eps_rank: f64,
    pub variance_rule: VarianceRule,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            time_effects: TimeEffects::Unit,
            instruments: InstrumentMode::SelfInstrumented,
            variance_case: VarianceCase::Robust,
            lambda: None,
            common_jumps: false,
            small_n: false,
            eps_rank: DEFAULT_EPS_RANK,
            variance_rule: VarianceRule::PooledLevel,
        }
    }
}

impl PipelineOptions {
    pub fn saw_options(&self) -> SawOptions {
        SawOptions {
            eps_rank: self.eps_rank,
            small_n: self.small_n,
            lambda: self.lambda,
            variance_rule: self.variance_rule,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PanelFit {
    /// Panel after the instrument step (what the estimators saw).
    pub panel: PanelDataset,
    pub saw: SawFit,
    pub jumps: JumpReport,
    /// Break locations actually used in the post-SAW design.
    pub breaks: Vec<Vec<usize>>,
    pub post: PostSawFit,
    /// Post-SAW slope path, `beta_path[(t - 1) * P + p]`.
    pub beta_path: Vec<f64>,
    pub effects: ModelComponents,
}

impl PanelFit {
    /// Slope path of one regressor over `t = 1..=T`.
    pub fn path(&self, regressor: usize) -> Vec<f64> {
        let p = self.panel.p();
        self.beta_path.iter().skip(regressor).step_by(p).copied().collect()
    }
}

/// Post-SAW step for given break locations.
pub fn post_saw(panel: &PanelDataset, breaks: &[Vec<usize>], case: VarianceCase) -> Result<PostSawFit> {
    estimate(&build_design(panel, breaks)?, case)
}

/// Runs the full estimator on a balanced panel.
pub fn fit_panel(panel: &PanelDataset, opts: &PipelineOptions) -> Result<PanelFit> {
    if let Some(l) = opts.lambda {
        if !(l >= 0.0) {
            return Err(SawError::Config(format!("threshold override must be >= 0, got {l}")));
        }
    }
    let prepared = prepare_instruments(panel, opts.instruments)?;
    let mut dp = first_difference(&prepared)?;
    if opts.time_effects == TimeEffects::Between {
        dp = between_transform(&dp);
    }
    let padded = reflect_pad(&dp);
    let (_, saw) = fit_saw(&padded, &opts.saw_options())?;
    let jumps = detect_from_fit(&saw, prepared.regressor_names());
    let breaks = if opts.common_jumps {
        vec![jumps.union(); prepared.p()]
    } else {
        jumps.locations()
    };
    let post = post_saw(&prepared, &breaks, opts.variance_case)?;
    let beta_path = post.beta_path(prepared.p(), prepared.t());
    let effects = recover_effects(&prepared, &beta_path)?;
    Ok(PanelFit {
        panel: prepared,
        saw,
        jumps,
        breaks,
        post,
        beta_path,
        effects,
    })
}
