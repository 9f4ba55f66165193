//! Chance-constrained output-feedback synthesis.

mod controller;
mod problem;

pub use controller::{compute_control, remix_controller, OutputFeedbackController};
pub use problem::{
    assemble_synthesis_qcqp, layout_of, synthesize, update_on_new_covariance, verify_at_vertices,
    ConstraintAudit, ExitSpec, NamedForm, SynthesisProblem, Synthesized, VariableLayout, VertexReport,
    VERTEX_TOLERANCE,
};
