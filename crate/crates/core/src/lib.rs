//! Prior-guided symbolic regression.
//!
//! Expressions are multi-branch trees ([`expr`]). Symbol statistics mined
//! from a corpus ([`priors`]) steer a tree-structured recurrent policy
//! ([`controller`]) that proposes skeletons; constants are fitted by
//! gradient methods ([`optimize`]) and the policy is trained with a
//! KL-regularized risk-seeking gradient ([`search`]). [`bench`] generates
//! synthetic problems and scores recovery across method variants.

pub mod bench;
pub mod controller;
pub mod data;
pub mod error;
pub mod expr;
pub mod grammar;
pub mod optimize;
pub mod par;
pub mod priors;
pub mod search;

pub use data::{Dataset, VariableRole};
pub use error::{BenchError, ControllerError, DataError, ExprError, PriorError, SearchError};
pub use expr::ExpressionTree;
