//! Task-aware prompt compression with a REINFORCE-trained token keep/drop
//! policy.

pub mod corpus;
pub mod error;
pub mod exec;
pub mod policy;
pub mod compressor;
pub mod rewards;
pub mod oracle;
pub mod checkpoint;
pub mod trainer;
pub mod evaluator;
pub mod toy;

pub use error::{Error, Result};
pub use exec::Exec;
