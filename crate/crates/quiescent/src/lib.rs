//! Orthonormal-frame and Fuchsian evolution of Einstein-scalar-field
//! cosmologies toward a quiescent big bang.
//!
//! The library evolves perturbations of Kasner-scalar-field backgrounds in
//! spacetime dimension n ≥ 4 backward in conformal time toward t = 0, using
//! a first-order tetrad formulation and its Fuchsian rescaling. It provides:
//!
//! * Kasner background algebra and sub-criticality checks ([`kasner`]);
//! * periodic grids, spectral derivatives, cone-domain geometry ([`grid`]);
//! * the tetrad evolution equations, constraints, and curvature ([`frame`]);
//! * the rescaled (Fuchsian) system, its constraints, and the derivative
//!   hierarchy ([`fuchsian`]);
//! * the block symmetrizer matrices and their verification ([`symmetrizer`]);
//! * time integration and constraint-solved initial data ([`evolution`]);
//! * physical curvature invariants and asymptotic extraction
//!   ([`diagnostics`]).

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod frame;
pub mod fuchsian;
pub mod grid;
pub mod kasner;
pub mod state;
pub mod symmetrizer;

pub use error::{Error, Result};
