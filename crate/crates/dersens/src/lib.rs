//! Derivative-sensitivity analysis for SQL aggregate queries.
//!
//! The pipeline is: parse a query and a schema ([`sql`]), lower sensitive
//! filters to smooth indicators and bound the derivative sensitivity of the
//! result ([`analyzer`], [`smooth`], [`norm`]), evaluate everything over
//! in-memory tables ([`engine`]) and release the answer with
//! generalized-Cauchy noise ([`dp`]).

pub mod analyzer;
pub mod dp;
pub mod engine;
pub mod hungarian;
pub mod norm;
pub mod smooth;
pub mod sql;
pub mod sqlread;
pub mod tpch;

pub use analyzer::{AnalyzeOptions, Aggregator, SensitivityPlan};
pub use norm::NormExpr;
pub use smooth::ScalarExpr;
