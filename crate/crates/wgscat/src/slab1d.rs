//! Closed-form 1D reference model: a constant-dissipation slab in a
//! semi-infinite line with a rigid end, the axial reduction of the full-width
//! slab inclusion in the guide. Serves as an independent cross-check for the
//! finite element pipeline.
//!
//! The problem on (0, ∞) is u″ + λ(1 + iηb₀·1_{(z₁,z₂)})u = 0 with u′(0) = 0
//! and u = (2√λ)^{-1/2}(e^{-i√λz} + R e^{+i√λz}) beyond the slab, i.e. the
//! incident wave carries unit amplitude on the normalised mode
//! w⁻ = (2√λ)^{-1/2} e^{-i√λz}.

use num_complex::Complex64;
use thiserror::Error;

use crate::numerics::{dense_solve, int_exp, integrate_adaptive};

#[derive(Debug, Error, PartialEq)]
pub enum SlabError {
    #[error("slab faces must satisfy 0 < z1 < z2, got ({z1}, {z2})")]
    BadFaces { z1: f64, z2: f64 },
    #[error("dissipation level b0 must be positive, got {0}")]
    BadDissipation(f64),
    #[error("spectral parameter must be positive, got {0}")]
    BadLambda(f64),
    #[error("eta must be nonnegative, got {0}")]
    BadEta(f64),
    #[error("matching system is singular")]
    Singular,
}

/// Geometry and material of the 1D slab problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabSpec {
    pub lambda: f64,
    pub z1: f64,
    pub z2: f64,
    pub b0: f64,
}

impl SlabSpec {
    pub fn new(lambda: f64, z1: f64, z2: f64, b0: f64) -> Result<Self, SlabError> {
        if !(lambda > 0.0) {
            return Err(SlabError::BadLambda(lambda));
        }
        if !(z1 > 0.0 && z2 > z1) {
            return Err(SlabError::BadFaces { z1, z2 });
        }
        if !(b0 > 0.0) {
            return Err(SlabError::BadDissipation(b0));
        }
        Ok(Self { lambda, z1, z2, b0 })
    }
}

/// Piecewise closed-form solution of the slab problem at one η.
///
/// Interior representation a·e^{ik(z-z₁)} + b·e^{-ik(z-z₂)} keeps every
/// exponential bounded by one, so arbitrarily large η (deep skin effect)
/// evaluates without overflow.
#[derive(Debug, Clone)]
pub struct SlabField {
    pub spec: SlabSpec,
    pub eta: f64,
    /// Reflection coefficient of the normalised incident wave.
    pub reflection: Complex64,
    amp_wall: Complex64,
    amp_fwd: Complex64,
    amp_bwd: Complex64,
    k_in: Complex64,
}

/// Reflection coefficient R of the slab at dissipation η.
pub fn slab_reflection(spec: SlabSpec, eta: f64) -> Result<Complex64, SlabError> {
    Ok(slab_field(spec, eta)?.reflection)
}

/// Full piecewise field of the slab problem at dissipation η.
pub fn slab_field(spec: SlabSpec, eta: f64) -> Result<SlabField, SlabError> {
    if !(eta >= 0.0) {
        return Err(SlabError::BadEta(eta));
    }
    let sl = spec.lambda.sqrt();
    let k = (Complex64::new(spec.lambda, 0.0) * Complex64::new(1.0, eta * spec.b0)).sqrt();
    debug_assert!(k.im >= 0.0, "principal branch must not grow along +z");
    let d = spec.z2 - spec.z1;
    let e = (Complex64::new(0.0, 1.0) * k * d).exp(); // |e| ≤ 1
    let ik = Complex64::new(0.0, 1.0) * k;
    let norm = 1.0 / (2.0 * sl).sqrt();
    let phase_in = Complex64::new(0.0, -sl * spec.z2).exp();
    let phase_out = Complex64::new(0.0, sl * spec.z2).exp();

    // Unknowns (c, a, b, R): continuity of u and u′ at both faces; the wall
    // condition is built into the cosine ansatz on (0, z₁).
    let zero = Complex64::new(0.0, 0.0);
    let cos1 = Complex64::new((sl * spec.z1).cos(), 0.0);
    let msin1 = Complex64::new(-sl * (sl * spec.z1).sin(), 0.0);
    let m = nalgebra::DMatrix::<Complex64>::from_row_slice(
        4,
        4,
        &[
            cos1, -Complex64::new(1.0, 0.0), -e, zero,
            msin1, -ik, ik * e, zero,
            zero, e, Complex64::new(1.0, 0.0), -norm * phase_out,
            zero, ik * e, -ik, -norm * Complex64::new(0.0, sl) * phase_out,
        ],
    );
    let rhs = nalgebra::DMatrix::<Complex64>::from_column_slice(
        4,
        1,
        &[
            zero,
            zero,
            norm * phase_in,
            norm * Complex64::new(0.0, -sl) * phase_in,
        ],
    );
    let x = dense_solve(&m, &rhs).ok_or(SlabError::Singular)?;
    Ok(SlabField {
        spec,
        eta,
        reflection: x[(3, 0)],
        amp_wall: x[(0, 0)],
        amp_fwd: x[(1, 0)],
        amp_bwd: x[(2, 0)],
        k_in: k,
    })
}

impl SlabField {
    /// Field value at axial position z ≥ 0.
    pub fn evaluate(&self, z: f64) -> Complex64 {
        let sl = self.spec.lambda.sqrt();
        if z <= self.spec.z1 {
            self.amp_wall * (sl * z).cos()
        } else if z < self.spec.z2 {
            let ik = Complex64::new(0.0, 1.0) * self.k_in;
            self.amp_fwd * (ik * (z - self.spec.z1)).exp()
                + self.amp_bwd * (-ik * (z - self.spec.z2)).exp()
        } else {
            let norm = 1.0 / (2.0 * sl).sqrt();
            norm * ((Complex64::new(0.0, -sl * z)).exp()
                + self.reflection * Complex64::new(0.0, sl * z).exp())
        }
    }

    /// Axial derivative u′(z).
    pub fn evaluate_deriv(&self, z: f64) -> Complex64 {
        let sl = self.spec.lambda.sqrt();
        if z <= self.spec.z1 {
            -self.amp_wall * sl * (sl * z).sin()
        } else if z < self.spec.z2 {
            let ik = Complex64::new(0.0, 1.0) * self.k_in;
            ik * (self.amp_fwd * (ik * (z - self.spec.z1)).exp()
                - self.amp_bwd * (-ik * (z - self.spec.z2)).exp())
        } else {
            let norm = 1.0 / (2.0 * sl).sqrt();
            norm * Complex64::new(0.0, sl)
                * (-(Complex64::new(0.0, -sl * z)).exp()
                    + self.reflection * Complex64::new(0.0, sl * z).exp())
        }
    }

    /// ∫_{z₁}^{z₂} |u|² dz in closed form.
    pub fn interior_l2_sq(&self) -> f64 {
        let d = self.spec.z2 - self.spec.z1;
        let kappa = self.k_in.im;
        let kr = self.k_in.re;
        let decay = int_exp(Complex64::new(-2.0 * kappa, 0.0), d).re;
        let cross_phase = (Complex64::new(0.0, -1.0) * self.k_in.conj() * d).exp();
        let cross = self.amp_fwd * self.amp_bwd.conj()
            * cross_phase
            * int_exp(Complex64::new(0.0, 2.0 * kr), d);
        (self.amp_fwd.norm_sqr() + self.amp_bwd.norm_sqr()) * decay + 2.0 * cross.re
    }

    /// ∫_{z₁}^{z₂} u² dz (non-conjugated square) in closed form.
    pub fn interior_square_integral(&self) -> Complex64 {
        let d = self.spec.z2 - self.spec.z1;
        let two_ik = Complex64::new(0.0, 2.0) * self.k_in;
        let e = (Complex64::new(0.0, 1.0) * self.k_in * d).exp();
        (self.amp_fwd * self.amp_fwd + self.amp_bwd * self.amp_bwd) * int_exp(two_ik, d)
            + 2.0 * self.amp_fwd * self.amp_bwd * d * e
    }
}

/// Residual of the 1D energy balance |R|² + 2ληb₀∫|u|² − 1, with the interior
/// integral evaluated by an adaptive rule (not the closed form, so the check
/// exercises the field evaluation path as well).
pub fn energy_check(spec: SlabSpec, eta: f64) -> Result<f64, SlabError> {
    let field = slab_field(spec, eta)?;
    let l2 = integrate_adaptive(
        &|z| Complex64::new(field.evaluate(z).norm_sqr(), 0.0),
        spec.z1,
        spec.z2,
        1e-14,
    )
    .re;
    Ok(field.reflection.norm_sqr() + 2.0 * spec.lambda * eta * spec.b0 * l2 - 1.0)
}
