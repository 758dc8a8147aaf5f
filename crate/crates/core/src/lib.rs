//! Tensor chain (tensor ring) decomposition with sensitivity and intensity
//! correction.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod report;
pub mod conv;
pub mod decompose;
pub mod stabilize;
pub mod tensor;
mod target;

pub use error::{Error, Result};
pub use model::{btd_to_tc, tc_to_btd, BtdSharedModel, StabilityMeasures, SubchainNorm, TcModel};
pub use report::{CorrectionEvent, CorrectionKind, DecompositionReport, Termination};
pub use decompose::{FitConfig, SolverConfig};
pub use stabilize::CorrectionConfig;
pub use tensor::{
    cyclic_shift, cyclic_unfolding, frobenius_norm, masked_relative_error, refold, relative_error,
    train_contract, unfold, DenseTensor, MaskTensor, Unfolding,
};
