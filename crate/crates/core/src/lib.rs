//! Entanglement-assisted LOCC discrimination of a layered tripartite
//! unextendible product basis: state construction, protocol simulation,
//! resource accounting and cost sweeps.

pub mod analysis;
pub mod catalog;
pub mod engine;
pub mod error;
pub mod finisher;
pub mod format;
pub mod linalg;
pub mod tensor;
pub mod upb;

pub use engine::{run_protocol, ProtocolNode, ProtocolReport, RunOptions};
pub use error::{Error, Result};
pub use tensor::{Lab, Pattern, RegisterLayout, SparseState, PRUNE_THRESHOLD, TOLERANCE};
pub use upb::{build_upb, SubsetKey, SubsetLabel, UPBSet};
