pub mod augment;
pub mod backend;
pub mod corpus;
pub mod error;
pub mod genpipe;
pub mod metrics;
pub mod pipeline;
pub mod toy;
pub mod xeval;
pub mod zeroshot;
mod util;

pub use error::{Error, Result};
