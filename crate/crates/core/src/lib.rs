pub mod alloc;
pub mod cli;
pub mod error;
pub mod io;
pub mod oracle;
pub mod selftrain;
pub mod sinkhorn;

pub use error::{Result, SlaError};
