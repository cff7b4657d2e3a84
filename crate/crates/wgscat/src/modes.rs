//! Transverse modes of the unit-height strip with rigid walls, the associated
//! propagating waves, and the symplectic pairing used to normalise them.
//!
//! Mode j has threshold λ_j = (jπ)² and profile φ₀ = 1, φ_j(y) = √2 cos(jπy),
//! orthonormal in L²(0,1). For a given spectral parameter λ strictly between
//! two thresholds, modes with λ_j < λ propagate with wavenumber
//! α_j = √(λ − λ_j); the rest decay like exp(−√(λ_j − λ)|z|).

use num_complex::Complex64;
use thiserror::Error;

use crate::numerics::gauss_on;

/// Relative guard band around thresholds; λ inside it is rejected.
pub const THRESHOLD_GUARD: f64 = 1e-12;

/// Default number of transverse modes carried by the radiation condition.
pub const DEFAULT_N_TERMS: usize = 15;

#[derive(Debug, Error, PartialEq)]
pub enum ModesError {
    #[error("spectral parameter must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("lambda = {lambda} sits at the mode-{j} threshold (within relative guard {guard:e})")]
    AtThreshold { lambda: f64, j: usize, guard: f64 },
    #[error("radiation condition needs more modes than the {j_prop} propagating ones, got n_terms = {n_terms}")]
    TooFewTerms { n_terms: usize, j_prop: usize },
}

/// Travel direction of a propagating wave along the guide axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Threshold of transverse mode j.
pub fn lambda_j(j: usize) -> f64 {
    let jp = j as f64 * std::f64::consts::PI;
    jp * jp
}

/// Number of propagating modes at spectral parameter λ (thresholds excluded).
pub fn propagating_count(lambda: f64) -> usize {
    let mut j = 0;
    while lambda_j(j) < lambda {
        j += 1;
    }
    j
}

/// Transverse mode family at a fixed spectral parameter.
#[derive(Debug, Clone)]
pub struct ModeBasis {
    lambda: f64,
    n_terms: usize,
    j_prop: usize,
}

impl ModeBasis {
    /// Validates λ (positive, away from every threshold below `n_terms`) and
    /// the mode count (strictly more than the propagating ones).
    pub fn new(lambda: f64, n_terms: usize) -> Result<Self, ModesError> {
        if !(lambda > 0.0) {
            return Err(ModesError::NonPositiveLambda(lambda));
        }
        let guard = THRESHOLD_GUARD * lambda.max(1.0);
        for j in 0..=n_terms {
            if (lambda - lambda_j(j)).abs() <= guard {
                return Err(ModesError::AtThreshold { lambda, j, guard: THRESHOLD_GUARD });
            }
        }
        let j_prop = propagating_count(lambda);
        if n_terms <= j_prop {
            return Err(ModesError::TooFewTerms { n_terms, j_prop });
        }
        Ok(Self { lambda, n_terms, j_prop })
    }

    /// Basis with the default radiation-condition depth.
    pub fn with_default_terms(lambda: f64) -> Result<Self, ModesError> {
        let need = propagating_count(lambda) + 1;
        Self::new(lambda, DEFAULT_N_TERMS.max(need))
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of transverse modes carried by the radiation condition.
    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    /// Number of propagating modes J.
    pub fn j_prop(&self) -> usize {
        self.j_prop
    }

    /// Orthonormal transverse profile φ_j evaluated at y ∈ [0, 1].
    pub fn phi(&self, j: usize, y: f64) -> f64 {
        if j == 0 {
            1.0
        } else {
            std::f64::consts::SQRT_2 * (j as f64 * std::f64::consts::PI * y).cos()
        }
    }

    /// Axial wavenumber α_j = √(λ − λ_j) of a propagating mode (j < J).
    pub fn alpha(&self, j: usize) -> f64 {
        assert!(j < self.j_prop, "mode {j} does not propagate");
        (self.lambda - lambda_j(j)).sqrt()
    }

    /// Decay rate √(λ_j − λ) of an evanescent mode (j ≥ J).
    pub fn evanescent_rate(&self, j: usize) -> f64 {
        assert!(j >= self.j_prop, "mode {j} propagates");
        (lambda_j(j) - self.lambda).sqrt()
    }

    /// Normalised travelling wave w_j^± = (2α_j)^{-1/2} e^{±iα_j z} φ_j(y).
    pub fn wave(&self, j: usize, sign: Sign, y: f64, z: f64) -> Complex64 {
        let a = self.alpha(j);
        let amp = 1.0 / (2.0 * a).sqrt();
        let phase = Complex64::new(0.0, sign.factor() * a * z).exp();
        amp * phase * self.phi(j, y)
    }

    /// Axial derivative ∂_z w_j^±.
    pub fn wave_dz(&self, j: usize, sign: Sign, y: f64, z: f64) -> Complex64 {
        let a = self.alpha(j);
        Complex64::new(0.0, sign.factor() * a) * self.wave(j, sign, y, z)
    }
}

/// Amplitudes of a field on the travelling-wave basis at fixed z:
/// v = Σ_j plus[j] w_j^+ + minus[j] w_j^-.
#[derive(Debug, Clone)]
pub struct ModalCoeffs {
    pub plus: Vec<Complex64>,
    pub minus: Vec<Complex64>,
}

/// Symplectic pairing q(v, v′) = ∫_ω (v̄′ ∂_z v − v ∂_z v̄′) dy on modal
/// amplitudes. On the travelling waves it is q(w_j^±, w_k^±) = ±i δ_{jk},
/// q(w_j^±, w_k^∓) = 0, hence the closed form below; the value does not
/// depend on the cross-section z where the amplitudes were read.
pub fn symplectic_pairing(v: &ModalCoeffs, w: &ModalCoeffs) -> Complex64 {
    assert_eq!(v.plus.len(), w.plus.len());
    assert_eq!(v.minus.len(), w.minus.len());
    let i = Complex64::new(0.0, 1.0);
    let sum_plus: Complex64 = v.plus.iter().zip(&w.plus).map(|(a, b)| a * b.conj()).sum();
    let sum_minus: Complex64 = v.minus.iter().zip(&w.minus).map(|(a, b)| a * b.conj()).sum();
    i * (sum_plus - sum_minus)
}

/// q(w_j^s, w_k^t) evaluated the slow way: Gauss quadrature of the defining
/// cross-section integral at abscissa z. Validation hook for the closed form.
pub fn pairing_by_quadrature(
    basis: &ModeBasis,
    (j, s): (usize, Sign),
    (k, t): (usize, Sign),
    z: f64,
    n_points: usize,
) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (y, wgt) in gauss_on(0.0, 1.0, n_points) {
        let vj = basis.wave(j, s, y, z);
        let dvj = basis.wave_dz(j, s, y, z);
        let vk = basis.wave(k, t, y, z);
        let dvk = basis.wave_dz(k, t, y, z);
        acc += wgt * (vk.conj() * dvj - vj * dvk.conj());
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LAMBDA_FIVE_MODE: f64 = (4.8 * std::f64::consts::PI) * (4.8 * std::f64::consts::PI);
    const LAMBDA_MONOMODE: f64 = (0.8 * std::f64::consts::PI) * (0.8 * std::f64::consts::PI);

    #[test]
    fn propagating_count_at_reference_parameters() {
        assert_eq!(propagating_count(LAMBDA_MONOMODE), 1);
        assert_eq!(propagating_count(LAMBDA_FIVE_MODE), 5);
        // Just below/above the first threshold.
        assert_eq!(propagating_count(0.999 * lambda_j(1)), 1);
        assert_eq!(propagating_count(1.001 * lambda_j(1)), 2);
    }

    #[test]
    fn transverse_profiles_are_orthonormal_under_quadrature() {
        let basis = ModeBasis::new(LAMBDA_FIVE_MODE, 15).unwrap();
        let pts = gauss_on(0.0, 1.0, 96);
        for j in 0..8 {
            for k in 0..8 {
                let g: f64 = pts.iter().map(|&(y, w)| w * basis.phi(j, y) * basis.phi(k, y)).sum();
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-12, "({j},{k}): {g}");
            }
        }
    }

    #[test]
    fn threshold_lambda_is_rejected() {
        let err = ModeBasis::new(lambda_j(2), 15).unwrap_err();
        assert!(matches!(err, ModesError::AtThreshold { j: 2, .. }));
        // A hair outside the relative guard is accepted.
        assert!(ModeBasis::new(lambda_j(2) * (1.0 + 1e-9), 15).is_ok());
        assert!(ModeBasis::new(lambda_j(2) * (1.0 + 1e-14), 15).is_err());
    }

    #[test]
    fn nonpositive_lambda_and_short_expansions_are_rejected() {
        assert!(matches!(ModeBasis::new(-1.0, 15), Err(ModesError::NonPositiveLambda(_))));
        assert!(matches!(
            ModeBasis::new(LAMBDA_FIVE_MODE, 5),
            Err(ModesError::TooFewTerms { n_terms: 5, j_prop: 5 })
        ));
        assert!(ModeBasis::new(LAMBDA_FIVE_MODE, 6).is_ok());
    }

    #[test]
    fn wavenumbers_match_dispersion_relation() {
        let basis = ModeBasis::new(LAMBDA_FIVE_MODE, 15).unwrap();
        for j in 0..5 {
            let a = basis.alpha(j);
            assert_relative_eq!(a * a + lambda_j(j), LAMBDA_FIVE_MODE, epsilon = 1e-12);
        }
        for j in 5..15 {
            let r = basis.evanescent_rate(j);
            assert_relative_eq!(lambda_j(j) - r * r, LAMBDA_FIVE_MODE, max_relative = 1e-12);
        }
    }

    #[test]
    fn quadrature_pairing_matches_symplectic_normalisation() {
        // The defining integral reproduces ±iδ_{jk} / 0 to 1e-10 at J = 5.
        let basis = ModeBasis::new(LAMBDA_FIVE_MODE, 15).unwrap();
        let n = 160; // ≥ 32 points per transverse oscillation of mode 4
        for z in [0.0, 0.73] {
            for j in 0..5 {
                for k in 0..5 {
                    let pp = pairing_by_quadrature(&basis, (j, Sign::Plus), (k, Sign::Plus), z, n);
                    let mm = pairing_by_quadrature(&basis, (j, Sign::Minus), (k, Sign::Minus), z, n);
                    let pm = pairing_by_quadrature(&basis, (j, Sign::Plus), (k, Sign::Minus), z, n);
                    let d = if j == k { 1.0 } else { 0.0 };
                    assert!((pp - Complex64::new(0.0, d)).norm() < 1e-10);
                    assert!((mm - Complex64::new(0.0, -d)).norm() < 1e-10);
                    assert!(pm.norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn closed_form_pairing_agrees_with_quadrature_on_mixed_fields() {
        let basis = ModeBasis::new(LAMBDA_FIVE_MODE, 15).unwrap();
        let v = ModalCoeffs {
            plus: vec![
                Complex64::new(1.0, 0.2),
                Complex64::new(0.0, -0.5),
                Complex64::new(0.3, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(-0.1, 0.7),
            ],
            minus: vec![
                Complex64::new(0.5, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(0.2, -0.2),
                Complex64::new(0.0, 0.0),
            ],
        };
        let w = ModalCoeffs {
            plus: vec![
                Complex64::new(0.0, 1.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.4, 0.1),
                Complex64::new(0.0, -0.3),
            ],
            minus: vec![
                Complex64::new(1.0, 1.0),
                Complex64::new(0.0, 0.2),
                Complex64::new(0.6, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.1, 0.0),
            ],
        };
        let closed = symplectic_pairing(&v, &w);
        // Assemble the two fields at a cross-section and integrate.
        let z = 0.31;
        let n = 200;
        let mut quad = Complex64::new(0.0, 0.0);
        for (y, wgt) in gauss_on(0.0, 1.0, n) {
            let mut fv = Complex64::new(0.0, 0.0);
            let mut dfv = Complex64::new(0.0, 0.0);
            let mut fw = Complex64::new(0.0, 0.0);
            let mut dfw = Complex64::new(0.0, 0.0);
            for j in 0..5 {
                fv += v.plus[j] * basis.wave(j, Sign::Plus, y, z)
                    + v.minus[j] * basis.wave(j, Sign::Minus, y, z);
                dfv += v.plus[j] * basis.wave_dz(j, Sign::Plus, y, z)
                    + v.minus[j] * basis.wave_dz(j, Sign::Minus, y, z);
                fw += w.plus[j] * basis.wave(j, Sign::Plus, y, z)
                    + w.minus[j] * basis.wave(j, Sign::Minus, y, z);
                dfw += w.plus[j] * basis.wave_dz(j, Sign::Plus, y, z)
                    + w.minus[j] * basis.wave_dz(j, Sign::Minus, y, z);
            }
            quad += wgt * (fw.conj() * dfv - fv * dfw.conj());
        }
        assert!((closed - quad).norm() < 1e-9, "closed {closed} vs quad {quad}");
    }

    #[test]
    fn pairing_is_independent_of_cross_section() {
        let basis = ModeBasis::new(LAMBDA_MONOMODE, 15).unwrap();
        let a = pairing_by_quadrature(&basis, (0, Sign::Plus), (0, Sign::Plus), 0.0, 64);
        let b = pairing_by_quadrature(&basis, (0, Sign::Plus), (0, Sign::Plus), 4.2, 64);
        assert!((a - b).norm() < 1e-12);
    }
}
