//! Influence diagrams with potential tables: exact inference and decision
//! solving by arc reversal, probabilistic reduction and evidence
//! propagation.

pub mod diagram;
pub mod fixtures;
pub mod oracle;
pub mod primitives;
pub mod random;
pub mod tables;
pub mod transforms;

pub use diagram::{Diagram, DiagramError, Node, NodeId, NodeKind, TableKind, ValidationReport, Violation};
pub use primitives::PolicyFragment;
pub use tables::{close, OpCounters, PotentialTable, StateTable, TableError, VarId, Variable};
pub use transforms::{
    ConversionMode, InferOptions, InferenceMode, Policy, Posterior, Reduction, ReductionCase, SolveOptions, SolveStep,
    TargetOrder, TransformError,
};
