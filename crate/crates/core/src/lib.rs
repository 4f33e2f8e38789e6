//! Constraint mass assignments (CMAs) for planning under imprecise
//! probabilities.
//!
//! A world is a tree whose edges carry probability intervals and whose
//! leaves are sets of states; it stands for every mass assignment obtained by
//! choosing edge numbers inside the intervals. Actions are lists of
//! ⟨condition, interval, effect⟩ triples. The crate provides sound
//! projection of worlds through plans, intra-, inter- and sequential
//! abstraction of actions, expected-utility bounds, and a sampling oracle
//! that checks projections against explicit executions.
//!
//! ```
//! use cma_plan::action::Action;
//! use cma_plan::cma::Cma;
//! use cma_plan::projection::project_plan;
//! use cma_plan::state::StateSet;
//!
//! let world = Cma::leaf(StateSet::full(4));
//! let plan = vec![Action::identity("wait", 4)];
//! let (projected, stats) = project_plan(&plan, &world).unwrap();
//! assert_eq!(projected.depth(), 2);
//! assert_eq!(stats.node_count, 2);
//! ```

pub mod abstraction;
pub mod action;
pub mod cma;
pub mod domain;
pub mod error;
pub mod json;
pub mod mass;
pub mod oracle;
pub mod projection;
pub mod report;
pub mod sampling;
pub mod state;
pub mod synth;

pub use error::{Error, Result};
