//! Chance-constrained navigation toolkit.
//!
//! The crate fuses noisy landmark measurements into minimum-variance virtual
//! landmarks, synthesizes linear output-feedback controllers that satisfy
//! chance-constrained barrier and Lyapunov conditions over convex polytopic
//! cells, and validates the resulting closed loops by stochastic simulation.
//!
//! Module map:
//! * [`numerics`]: Gaussian functions, SPD helpers, Kronecker block systems,
//!   a dense convex QCQP interior-point solver and a small LP solver.
//! * [`geometry`]: convex cells, vertex enumeration, adjacency and routing.
//! * [`landmarks`]: measurement model, inverse-variance fusion and sequential
//!   uncorrelated virtual landmarks.
//! * [`safety`]: barrier/Lyapunov linear forms and chance-constraint tightening.
//! * [`synthesis`]: controller design problem, remixing and online updates.
//! * [`sim`]: Euler-Maruyama closed-loop simulation and Monte Carlo audits.
//! * [`scenario`]: scenario file schema and validation.

pub mod error;
pub mod geometry;
pub mod landmarks;
pub mod numerics;
pub mod safety;
pub mod scenario;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
pub use geometry::{ConvexCell, Environment, Halfspace};
pub use landmarks::{Landmark, VirtualLandmark};
pub use numerics::{QcqpInstance, SolveReport, SolveStatus, SpdMatrix};
pub use safety::{
    ChanceSpec, ConstraintCoefficients, LinearBarrierForm, LinearSystem, TighteningMode,
    WallBarrier,
};
pub use sim::{MonteCarloStats, SimConfig, TrajectoryRecord};
pub use synthesis::{OutputFeedbackController, SynthesisProblem};

/// Dense matrix type used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense column vector type used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
