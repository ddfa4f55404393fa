pub mod cli;
pub mod error;
pub mod exchange;
pub mod extract;
pub mod gradcheck;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod spatial;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Ctx, ParamId, ParamStore, Tape, Tensor};
