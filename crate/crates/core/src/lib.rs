//! Structure-preserving finite-volume solver for optimal mixing control of a
//! passive scalar stirred by a finite set of incompressible flows.
//!
//! The pipeline is: build a [`mesh::Mesh`], assemble exact face fluxes for
//! each [`flows::BasisFlow`], advance the scalar with the Crank–Nicolson
//! scheme in [`transport`], measure mixing with the discrete `Ḣ⁻¹` norm from
//! [`elliptic`], and optimise the stirring schedule with [`optimizer`] using
//! adjoint gradients from [`objective`].

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod elliptic;
pub mod error;
pub mod experiments;
pub mod flows;
pub mod krylov;
pub mod mesh;
pub mod objective;
pub mod optimizer;
pub mod quadrature;
pub mod schedule;
pub mod state;
pub mod transport;

pub use error::{Error, Result};
pub use mesh::{Mesh, MeshKind};
pub use schedule::ControlSchedule;
pub use state::StateVector;
