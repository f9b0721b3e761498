//! Convex polytopes as manifolds with corners: face lattices, simplicity,
//! standard charts, extension of face data, stratified vector fields and
//! their flows.

pub mod catalog;
pub mod extension;
pub mod error;
pub mod expr;
pub mod field;
pub mod flows;
pub mod io;
pub mod linalg;
pub mod polytope;
pub mod report;
pub mod simplicity;
pub mod stratified;
pub mod suite;

pub use error::{Error, Result};
pub use expr::{parse_expression, Expr};
pub use field::Field;
pub use linalg::{Matrix, Vector};
pub use report::{Check, RunReport, Status};
pub use polytope::{build_polytope, Face, FaceId, FaceLattice, Halfspace, Polytope};
pub use simplicity::{is_simple, standard_chart, verify_chart, SimplicityReport, StandardChart};
pub use extension::{
    build_partition_of_unity, ell_extend, facet_extend, local_extend, local_restrict, smoothness_probe,
    CompatibleFamily, CubeFamily, ExtensionOperator, PartitionOfUnity,
};
pub use stratified::{
    extend_fields, is_stratified, nonsimple_obstruction, restrict_fields, stratified_criterion, FaceFieldFamily,
    ObstructionWitness, StratifiedField,
};
pub use flows::{
    boundary_identity_flow, compose, control_conditions_audit, exp_field, face_invariance_audit, integrate_flow,
    integrate_time_dependent, reach_target, DiffeoApprox, FlowResult, TimeDependentField,
};
