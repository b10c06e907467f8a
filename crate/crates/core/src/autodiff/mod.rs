//! Tape-based reverse-mode differentiation over dense `f64` tensors.

mod check;
mod grad;
mod params;
mod tape;

pub use check::{check_gradients, EntryStatus, GradCheckConfig, GradCheckReport, ParamCheck};
pub use grad::{Grad, GradMap, SparseRows};
pub use params::{Param, ParamKind, ParamStore};
pub use tape::{sigmoid, Tape, Var};
