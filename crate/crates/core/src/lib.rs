//! Panel regressions with heterogeneous, piecewise-constant slope paths.
//!
//! The estimator first-differences the panel, expands the coefficient path in
//! a Haar-type wavelet basis adapted to the regressors, thresholds the
//! wavelet coefficients to locate structural breaks and re-estimates the
//! slopes segment by segment.

pub mod dgp;
pub mod error;
pub mod haar;
pub mod jumps;
pub mod linalg;
pub mod panel;
pub mod pipeline;
pub mod post;
pub mod saw;

pub use error::{Result, SawError};
pub use jumps::{hausdorff, JumpReport};
pub use panel::{load_panel, DifferencedPanel, InstrumentMode, PanelDataset, PanelSchema};
pub use pipeline::{fit_panel, PanelFit, PipelineOptions, TimeEffects};
pub use post::{PostSawFit, VarianceCase};
pub use saw::{fit_saw, SawBasis, SawFit, SawOptions, Threshold};
