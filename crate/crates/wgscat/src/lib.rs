//! Scattering of acoustic waves by a dissipative inclusion in a 2D waveguide,
//! and design of quarter-wavelength branch absorbers on top of it.
//!
//! The crate is organised bottom-up:
//! - [`numerics`]: quadrature rules, curve fits, small dense linear algebra helpers
//! - [`modes`]: transverse modes of the strip and the symplectic mode pairing
//! - [`slab1d`]: closed-form 1D slab model used as an independent reference
//! - [`geometry`] / [`mesh`]: domain description and conforming P2-ready triangulations
//! - [`fem`]: quadratic finite elements with modal radiation conditions
//! - [`scattering`]: scattering matrices, energy bookkeeping, parameter sweeps
//! - [`asymptotics`]: weak- and strong-dissipation models and their defect rates
//! - [`absorber`]: half-guide reflection algebra and branch-length synthesis
//! - [`cli`]: command-line front end

pub mod absorber;
pub mod asymptotics;
pub mod cli;
pub mod fem;
pub mod geometry;
pub mod mesh;
pub mod modes;
pub mod numerics;
pub mod scattering;
pub mod slab1d;
