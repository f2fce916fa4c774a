//! Entity-grounded factuality rewards and group-relative policy
//! optimization, exercised on a tabular autoregressive policy.
//!
//! * [`corpus`]: sentence segmentation, classification and record synthesis
//! * [`rewards`]: entity, coherence, format and repetition rewards
//! * [`policy`]: order-2 softmax policy with exact log-probabilities
//! * [`grpo`]: clipped group-relative objective, gradients and training
//! * [`eval`]: precision metrics and judge-scorecard aggregation

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod io;
pub mod policy;
pub mod rewards;
pub mod synthetic;
pub mod text;

pub use error::{Error, Result};
