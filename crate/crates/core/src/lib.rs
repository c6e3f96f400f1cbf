//! Rateless coded blockchain storage: a raptor code (Reed–Solomon pre-code
//! plus LT layer) spread across a churning network, with the maintenance
//! algorithm, group sizing, and a seeded simulator.

pub mod config;
pub mod degree;
pub mod error;
pub mod field;
pub mod ledger;
pub mod lt;
pub mod metrics;
pub mod precode;
pub mod protocol;
pub mod scenario;
pub mod sizing;

pub use error::{CodecError, LtError};
pub use field::{BlockVector, CodecConfig, Field, FieldSymbol};
