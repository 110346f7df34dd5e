//! Categorical pattern mining over validated record sets.
//!
//! The pipeline runs in stages that can also be used on their own:
//!
//! 1. [`schema`]: dictionary-validated ingestion, filtering, cross-tabulation.
//! 2. [`forest`]: random-forest out-of-bag permutation importance to pick the
//!    variables worth mining.
//! 3. [`transactions`] and [`apriori`]: bitset encoding and level-wise
//!    frequent itemset mining.
//! 4. [`rules`]: single-consequent rules scored by support, confidence and
//!    lift, redundancy pruning and ranking.
//! 5. [`report`]: CSV, text and SVG artifacts.
//!
//! [`cli`] wires these together behind the `rulekit` binary.

pub mod apriori;
pub mod cli;
pub mod error;
pub mod forest;
pub mod report;
pub mod rules;
pub mod schema;
pub mod transactions;

pub use error::{Error, Result};
