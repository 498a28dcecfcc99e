//! Sparse linear models over item-set patterns.
//!
//! Fits L1-penalized regression (squared loss) and classification (squared
//! hinge loss) where every item-set occurring in a transaction database is a
//! binary feature. The pattern space is never materialized: a set-enumeration
//! tree is walked once per regularization parameter and subtrees that provably
//! hold only inactive patterns are pruned using a duality-gap ball around a
//! feasible dual point. The surviving patterns form a working set on which a
//! coordinate-descent solver runs to a certified duality gap.
//!
//! Also provided for comparison and verification: a column-generation
//! ("boosting") path that adds the most violated pattern one at a time, and a
//! brute-force oracle that enumerates every pattern.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod oracle;
pub mod path;
pub mod pattern_db;
pub mod screening;
pub mod solver;
pub mod task;
pub mod tree;

pub use error::{Error, Result};
pub use path::{Method, PathConfig, PathRecord, PathResult};
pub use pattern_db::{Format, Item, Pattern, PatternDb};
pub use solver::Model;
pub use task::Task;
