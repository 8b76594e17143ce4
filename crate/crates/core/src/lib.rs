//! Relational sum-product network ensembles for cardinality estimation and
//! approximate query processing.

pub mod confidence;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod learn;
pub mod oracle;
pub mod par;
pub mod query;
pub mod rdc;
pub mod schema;
pub mod spn;
pub mod synth;
pub mod update;
pub mod value;

pub use error::{Error, Result};
