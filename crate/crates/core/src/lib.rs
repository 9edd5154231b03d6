//! Multi-index stochastic collocation surrogates and Bayesian calibration.
// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![no_std]

extern crate alloc;

pub mod bayes;
pub mod error;
pub mod forward;
pub mod interp;
pub mod leja;
pub mod misc;
pub mod multiindex;
pub mod nelder_mead;
pub mod oracle;
pub mod params;

pub use bayes::{ForwardModel, GaussianPosterior, ObservationSet};
pub use error::{Error, OracleError, Result};
pub use forward::{BandRow, PdfEstimate, SampleSource};
pub use interp::{TensorGrid, TensorInterpolant};
pub use leja::{KnotFamily, KnotKind};
pub use misc::{AdaptiveMisc, FidelityLadder, FidelitySpec, MiscSurrogate, StopCriteria, StopReason};
pub use multiindex::{ExtMultiIndex, MultiIndexSet};
pub use oracle::{Backend, EvalCache, Evaluator};
pub use params::{Distribution, ParamSpace, ParamSpec};
