//! Dense tensors, tape-based reverse-mode differentiation, and Adam.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, clip_global_norm, AdamState};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
