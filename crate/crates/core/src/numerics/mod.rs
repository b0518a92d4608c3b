//! Dense and sparse matrices, a reverse-mode tape over them, and AdamW.

mod dense;
mod optim;
mod sparse;
mod tape;

pub use dense::Dense;
pub use optim::{AdamW, Param, ParamStore};
pub use sparse::Sparse;
pub use tape::{Tape, Var};
