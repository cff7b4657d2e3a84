//! Asymptotic models of the scattering matrix at weak and strong
//! dissipation: the linear-in-η correction built from the lossless solve,
//! the η^{−1/2} correction built from sound-soft boundary fluxes, the
//! skin-effect boundary-layer profile with its interior reconstruction,
//! and rate-study drivers measuring how fast each model is approached.

use crate::fem::{self, Excitation, Field, FluxSamples};
use crate::geometry::{BProfile, Geometry, Point, Shape, STRIP_HEIGHT};
use crate::mesh::EdgeTag;
use crate::numerics::log_log_fit;
use crate::scattering::{
    dirichlet_scattering_matrix, scattering_matrix, ScatteringError, ScatteringResult,
    SolveControls,
};
use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AsymptoticsError {
    #[error(transparent)]
    Scattering(#[from] ScatteringError),
    #[error("geometry has no inclusion to build an asymptotic model for")]
    NoInclusion,
    #[error("strong-dissipation model needs a smooth inclusion boundary; a rectangle with corners inside the guide is not supported")]
    CorneredInclusion,
}

/// Weak-dissipation model: S^η ≈ (I − ληB⁰) S⁰ with both factors taken
/// from the single lossless solve.
pub struct SmallEtaModel {
    /// The η = 0 solve; its `s` is S⁰ and its `b` is B⁰.
    pub base: ScatteringResult,
}

/// Build the weak-dissipation model from one lossless solve.
pub fn small_eta_model(
    geometry: &Geometry,
    controls: &SolveControls,
) -> Result<SmallEtaModel, AsymptoticsError> {
    if geometry.inclusion.is_none() {
        return Err(AsymptoticsError::NoInclusion);
    }
    Ok(SmallEtaModel { base: scattering_matrix(geometry, 0.0, controls)? })
}

impl SmallEtaModel {
    pub fn s0(&self) -> &DMatrix<Complex64> {
        &self.base.s
    }

    pub fn b0(&self) -> &DMatrix<Complex64> {
        &self.base.b
    }

    /// First-order prediction S⁰ − λη B⁰ S⁰.
    pub fn predict(&self, eta: f64) -> DMatrix<Complex64> {
        let correction = (&self.base.b * &self.base.s)
            .map(|z| z * Complex64::new(self.base.lambda * eta, 0.0));
        &self.base.s - correction
    }
}

/// Skin-effect profile E(t, b) = −(1+i)/√(2λb) · exp(((−1+i)/√2)·√(λb)·t)
/// along the scaled inward normal t, normalized to unit slope at the wall:
/// ∂_t E(0, b) = 1.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryLayerProfile {
    pub lambda: f64,
}

impl BoundaryLayerProfile {
    pub fn eval(&self, t: f64, b: f64) -> Complex64 {
        let root = (self.lambda * b).sqrt();
        let amp = -Complex64::new(1.0, 1.0) / (2.0 * self.lambda * b).sqrt();
        let rate = Complex64::new(-1.0, 1.0) * (root / std::f64::consts::SQRT_2);
        amp * (rate * t).exp()
    }
}

/// Strong-dissipation model: S^η ≈ S^∞ + η^{−1/2} S′ with
/// S′ = ((−1+i)/√(2λ)) E S^∞ and E the b^{−1/2}-weighted Gram matrix of
/// the sound-soft boundary fluxes.
pub struct LargeEtaModel {
    /// The sound-soft (Dirichlet-obstacle) solve; its `s` is S^∞.
    pub base: ScatteringResult,
    /// Recovered inward normal flux of each incident-mode field on the
    /// inclusion boundary.
    pub fluxes: Vec<FluxSamples>,
    /// E_jk = ∫_∂O b^{−1/2} ∂_n u_j^∞ ∂_n ū_k^∞ ds; Hermitian to the bit.
    pub e: DMatrix<Complex64>,
    /// The η^{−1/2} coefficient ((−1+i)/√(2λ)) E S^∞.
    pub s_prime: DMatrix<Complex64>,
    shape: Shape,
    b: BProfile,
}

/// Build the strong-dissipation model from the sound-soft solve and its
/// recovered boundary fluxes.
pub fn large_eta_model(
    geometry: &Geometry,
    controls: &SolveControls,
) -> Result<LargeEtaModel, AsymptoticsError> {
    let Some(inc) = &geometry.inclusion else {
        return Err(AsymptoticsError::NoInclusion);
    };
    // Flux recovery on a closed curve needs a smooth flux density; corners
    // inside the guide produce Gibbs oscillations. Full-height slabs are
    // fine: their in-domain interface is two straight wall-to-wall faces.
    if let Shape::Rect { corner, height, .. } = inc.shape {
        let spans_strip =
            corner.y <= 1e-12 && corner.y + height >= STRIP_HEIGHT - 1e-12;
        if !spans_strip {
            return Err(AsymptoticsError::CorneredInclusion);
        }
    }
    let base = dirichlet_scattering_matrix(geometry, controls)?;
    let mut fluxes = Vec::with_capacity(base.fields.len());
    for field in &base.fields {
        fluxes.push(
            fem::boundary_flux(&base.system, &base.mesh, field, EdgeTag::InclusionInterface)
                .map_err(ScatteringError::from)?,
        );
    }

    // All rows share one quadrature layout, so E comes out Hermitian by
    // mirroring the upper triangle and keeping diagonals real.
    let n = base.s.nrows();
    let mut e = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..n {
        for k in j..n {
            let mut v = Complex64::ZERO;
            for q in 0..fluxes[j].points.len() {
                let w = fluxes[j].weights[q] / inc.b.eval(fluxes[j].points[q]).sqrt();
                v += fluxes[j].values[q] * fluxes[k].values[q].conj() * w;
            }
            if j == k {
                e[(j, j)] = Complex64::new(v.re, 0.0);
            } else {
                e[(j, k)] = v;
                e[(k, j)] = v.conj();
            }
        }
    }

    let lambda = base.lambda;
    let c = Complex64::new(-1.0, 1.0) / (2.0 * lambda).sqrt();
    let s_prime = (&e * &base.s).map(|z| z * c);
    Ok(LargeEtaModel { base, fluxes, e, s_prime, shape: inc.shape, b: inc.b.clone() })
}

impl LargeEtaModel {
    pub fn s_inf(&self) -> &DMatrix<Complex64> {
        &self.base.s
    }

    /// Two-term prediction S^∞ + η^{−1/2} S′.
    pub fn predict(&self, eta: f64) -> DMatrix<Complex64> {
        self.s_inf() + self.s_prime.map(|z| z / eta.sqrt())
    }

    /// Boundary-layer reconstruction û(x) = η^{−1/2} χ(n) E(√η n, s) g(s)
    /// at one point, for the incident mode of matrix row `row`; zero
    /// outside the inclusion and beyond the collar cutoff.
    pub fn reconstruct_at(&self, row: usize, eta: f64, p: Point) -> Complex64 {
        if !self.shape.contains(p) {
            return Complex64::ZERO;
        }
        let foot = interface_foot(&self.shape, p);
        let n = p.dist(foot);
        let chi = collar_cutoff(n, 0.5 * self.shape.inradius());
        if chi == 0.0 {
            return Complex64::ZERO;
        }
        let g = flux_at(&self.fluxes[row], foot);
        let b = self.b.eval(foot);
        let profile = BoundaryLayerProfile { lambda: self.base.lambda };
        chi / eta.sqrt() * profile.eval(eta.sqrt() * n, b) * g
    }

    /// Reconstruction sampled on a mesh's degrees of freedom, ready for
    /// comparison against a direct solve on that mesh.
    pub fn reconstruct_interior(&self, row: usize, eta: f64, dofs: &fem::DofMap) -> Field {
        let values = dofs
            .positions
            .iter()
            .map(|&p| self.reconstruct_at(row, eta, p))
            .collect();
        Field { values, excitation: Excitation::Custom, eta }
    }
}

/// Nearest point of the part of the inclusion boundary that is actually a
/// dissipation interface. For smooth shapes that is the whole outline; for
/// a full-height slab only the two vertical faces count — its horizontal
/// edges lie on the guide walls, which carry no boundary layer.
fn interface_foot(shape: &Shape, p: Point) -> Point {
    match *shape {
        Shape::Rect { corner, width, .. } => {
            let (left, right) = (corner.z, corner.z + width);
            let face = if p.z - left <= right - p.z { left } else { right };
            Point::new(face, p.y)
        }
        _ => shape.closest_boundary_point(p),
    }
}

/// Smooth collar cutoff: 1 up to d0, a cubic descent, 0 from 2·d0 on.
fn collar_cutoff(n: f64, d0: f64) -> f64 {
    if n <= d0 {
        1.0
    } else if n >= 2.0 * d0 {
        0.0
    } else {
        let s = (n - d0) / d0;
        1.0 - s * s * (3.0 - 2.0 * s)
    }
}

/// Inverse-distance blend of the two flux samples nearest the foot point.
fn flux_at(samples: &FluxSamples, foot: Point) -> Complex64 {
    let mut best = [(f64::INFINITY, 0usize); 2];
    for (i, &p) in samples.points.iter().enumerate() {
        let d = p.dist(foot);
        if d < best[0].0 {
            best[1] = best[0];
            best[0] = (d, i);
        } else if d < best[1].0 {
            best[1] = (d, i);
        }
    }
    let (d0, i0) = best[0];
    let (d1, i1) = best[1];
    if d0 < 1e-14 || !d1.is_finite() {
        return samples.values[i0];
    }
    let (w0, w1) = (1.0 / d0, 1.0 / d1);
    (samples.values[i0] * w0 + samples.values[i1] * w1) / (w0 + w1)
}

/// Relative L²(inclusion) distance between a direct solve's field and a
/// reconstruction sampled on the same degrees of freedom.
pub fn relative_interior_error(
    result: &ScatteringResult,
    row: usize,
    reconstruction: &Field,
) -> f64 {
    let u = &result.fields[row];
    let diff = Field {
        values: u
            .values
            .iter()
            .zip(&reconstruction.values)
            .map(|(a, b)| a - b)
            .collect(),
        excitation: Excitation::Custom,
        eta: u.eta,
    };
    let dofs = &result.system.dof_map;
    fem::l2_inclusion(&result.mesh, dofs, &diff)
        / fem::l2_inclusion(&result.mesh, dofs, u)
}

/// Log–log defect table of direct solves against a model prediction.
#[derive(Debug, Clone)]
pub struct RateStudy {
    pub etas: Vec<f64>,
    pub defects: Vec<f64>,
    /// Least-squares slope of log defect against log η.
    pub slope: f64,
}

/// Measure ‖S^η − (S⁰ − ληB⁰S⁰)‖_F over an η list and fit the rate.
pub fn small_eta_rate(
    geometry: &Geometry,
    model: &SmallEtaModel,
    etas: &[f64],
    controls: &SolveControls,
) -> Result<RateStudy, AsymptoticsError> {
    let mut defects = Vec::with_capacity(etas.len());
    for &eta in etas {
        let direct = scattering_matrix(geometry, eta, controls)?;
        defects.push(crate::numerics::frobenius(&(&direct.s - model.predict(eta))));
    }
    let (slope, _) = log_log_fit(etas, &defects);
    Ok(RateStudy { etas: etas.to_vec(), defects, slope })
}

/// Strong-dissipation rate table: one direct solve per η serves the
/// one-term defect, the two-term defect, and the interior L²(O) norm.
#[derive(Debug, Clone)]
pub struct LargeEtaRates {
    pub etas: Vec<f64>,
    /// ‖S^η − S^∞‖_F per η.
    pub defect0: Vec<f64>,
    /// ‖S^η − (S^∞ + η^{−1/2}S′)‖_F per η.
    pub defect1: Vec<f64>,
    /// ‖u_0^η‖_{L²(O)} per η.
    pub interior_l2: Vec<f64>,
    pub slope0: f64,
    pub slope1: f64,
    pub slope_interior: f64,
}

/// Run layer-graded direct solves over an η list and fit all three
/// strong-dissipation rates.
pub fn large_eta_rates(
    geometry: &Geometry,
    model: &LargeEtaModel,
    etas: &[f64],
    controls: &SolveControls,
) -> Result<LargeEtaRates, AsymptoticsError> {
    let mut defect0 = Vec::with_capacity(etas.len());
    let mut defect1 = Vec::with_capacity(etas.len());
    let mut interior_l2 = Vec::with_capacity(etas.len());
    for &eta in etas {
        let direct = scattering_matrix(geometry, eta, controls)?;
        defect0.push(crate::numerics::frobenius(&(&direct.s - model.s_inf())));
        defect1.push(crate::numerics::frobenius(&(&direct.s - model.predict(eta))));
        interior_l2.push(direct.l2_inclusion[0]);
    }
    let (slope0, _) = log_log_fit(etas, &defect0);
    let (slope1, _) = log_log_fit(etas, &defect1);
    let (slope_interior, _) = log_log_fit(etas, &interior_l2);
    Ok(LargeEtaRates {
        etas: etas.to_vec(),
        defect0,
        defect1,
        interior_l2,
        slope0,
        slope1,
        slope_interior,
    })
}

/// Identity defect ‖iS′S̄^∞ᵀ + ((1+i)/√(2λ))E‖_F tying the correction,
/// the flux matrix, and the unitarity of S^∞ together.
pub fn correction_identity_defect(model: &LargeEtaModel) -> f64 {
    let lambda = model.base.lambda;
    let lhs = (&model.s_prime * model.base.s.adjoint()).map(|z| z * Complex64::I);
    let rhs = model.e.map(|z| -z * Complex64::new(1.0, 1.0) / (2.0 * lambda).sqrt());
    crate::numerics::frobenius(&(lhs - rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_waveguide, GeometrySpec, Inclusion};
    use crate::numerics::{frobenius, hermitian_defect, hermitian_eigenvalues, unitarity_defect};
    use crate::scattering::prepare_mesh;
    use crate::slab1d::{slab_field, SlabSpec};

    const LAMBDA1: f64 = 6.316_546_816_697_189; // (0.8π)², one propagating mode

    fn disk_geometry() -> Geometry {
        let spec = GeometrySpec {
            truncation_z: Some(3.0),
            inclusion: Some(Inclusion {
                shape: Shape::Disk { center: Point::new(1.5, 0.5), radius: 0.3 },
                b: BProfile::Constant { value: 1.0 },
            }),
            ..Default::default()
        };
        build_waveguide(&spec, LAMBDA1).unwrap()
    }

    fn slab_geometry() -> Geometry {
        let spec = GeometrySpec {
            truncation_z: Some(2.5),
            inclusion: Some(Inclusion {
                shape: Shape::Rect { corner: Point::new(1.0, 0.0), width: 1.0, height: 1.0 },
                b: BProfile::Constant { value: 1.0 },
            }),
            ..Default::default()
        };
        build_waveguide(&spec, LAMBDA1).unwrap()
    }

    #[test]
    fn weak_dissipation_predictor_is_second_order_accurate() {
        let g = disk_geometry();
        let c = SolveControls::with_h(0.07);
        let model = small_eta_model(&g, &c).unwrap();
        assert!(unitarity_defect(model.s0()) <= 1e-10);
        assert_eq!(hermitian_defect(model.b0()), 0.0);
        let defect = |eta: f64| {
            let direct = scattering_matrix(&g, eta, &c).unwrap();
            frobenius(&(&direct.s - model.predict(eta)))
        };
        let (d1, d2) = (defect(0.02), defect(0.04));
        let ratio = d2 / d1;
        assert!(
            (3.4..=4.6).contains(&ratio),
            "quadratic defect ratio {ratio} (defects {d1}, {d2})"
        );
    }

    #[test]
    fn strong_dissipation_model_rejects_cornered_inclusions() {
        let spec = GeometrySpec {
            truncation_z: Some(3.0),
            inclusion: Some(Inclusion {
                shape: Shape::Rect { corner: Point::new(1.2, 0.3), width: 0.5, height: 0.4 },
                b: BProfile::Constant { value: 1.0 },
            }),
            ..Default::default()
        };
        let g = build_waveguide(&spec, LAMBDA1).unwrap();
        let Err(err) = large_eta_model(&g, &SolveControls::with_h(0.05)) else {
            panic!("cornered inclusion must be rejected");
        };
        assert!(matches!(err, AsymptoticsError::CorneredInclusion));
    }

    #[test]
    fn slab_flux_matrix_matches_the_one_dimensional_closed_form() {
        let g = slab_geometry();
        let model = large_eta_model(&g, &SolveControls::with_h(0.025)).unwrap();
        // Sound-soft slab: the incident side carries |∂_n u^∞| = √(2√λ)
        // uniformly over the face while the shadow-side cavity is dark, so
        // E₀₀ = 2√λ/√b₀.
        let closed = 2.0 * LAMBDA1.sqrt();
        let e00 = model.e[(0, 0)].re;
        assert!(
            (e00 - closed).abs() <= 2e-3 * closed,
            "E00 {e00} vs closed form {closed}"
        );
        assert!(model.e[(0, 0)].im == 0.0);
    }

    #[test]
    fn correction_identity_holds_to_solver_accuracy() {
        let g = disk_geometry();
        let model = large_eta_model(&g, &SolveControls::with_h(0.06)).unwrap();
        let scale = frobenius(&model.e);
        assert!(scale > 0.0);
        assert!(
            correction_identity_defect(&model) <= 1e-10 * scale,
            "identity defect {} vs scale {scale}",
            correction_identity_defect(&model)
        );
        assert_eq!(hermitian_defect(&model.e), 0.0);
        let trace: f64 = model.e.diagonal().iter().map(|z| z.re).sum();
        assert!(hermitian_eigenvalues(&model.e).iter().all(|&v| v >= -1e-10 * trace));
    }

    #[test]
    fn boundary_layer_profile_is_normalized_and_decays() {
        let profile = BoundaryLayerProfile { lambda: LAMBDA1 };
        let b = 0.7;
        // Unit normal derivative at the wall, by central differences.
        let dt = 1e-6;
        let slope = (profile.eval(dt, b) - profile.eval(-dt, b)) / (2.0 * dt);
        assert!((slope - Complex64::ONE).norm() <= 1e-8, "slope {slope}");
        // e⁻¹ amplitude decay per skin length √2/√(λb).
        let skin = std::f64::consts::SQRT_2 / (LAMBDA1 * b).sqrt();
        let ratio = profile.eval(3.0 * skin, b).norm() / profile.eval(0.0, b).norm();
        assert!((ratio - (-3.0f64).exp()).abs() <= 1e-12);
        let mut last = profile.eval(0.0, b).norm();
        for k in 1..=10 {
            let cur = profile.eval(0.3 * k as f64, b).norm();
            assert!(cur < last);
            last = cur;
        }
    }

    #[test]
    fn slab_reconstruction_tracks_the_transfer_matrix_layer() {
        let g = slab_geometry();
        let model = large_eta_model(&g, &SolveControls::with_h(0.025)).unwrap();
        let eta = 1e4;
        let oracle = slab_field(SlabSpec::new(LAMBDA1, 1.0, 2.0, 1.0).unwrap(), eta).unwrap();
        // Sample through the layer under the incident face z = 2.
        let mut worst: f64 = 0.0;
        let scale = oracle.evaluate(2.0).norm();
        assert!(scale > 0.0);
        for k in 0..12 {
            let z = 2.0 - 0.002 * k as f64;
            let got = model.reconstruct_at(0, eta, Point::new(z, 0.5));
            let want = oracle.evaluate(z);
            worst = worst.max((got - want).norm() / scale);
        }
        assert!(worst <= 0.1, "worst relative mismatch {worst}");
    }

    #[test]
    fn interior_norm_matches_the_oracle_and_decays() {
        let g = slab_geometry();
        let c = SolveControls {
            target_h: 0.03,
            layers_per_skin: 3,
            min_h: None,
            n_terms: 15,
        };
        let direct = scattering_matrix(&g, 1e3, &c).unwrap();
        let oracle = slab_field(SlabSpec::new(LAMBDA1, 1.0, 2.0, 1.0).unwrap(), 1e3).unwrap();
        let want = oracle.interior_l2_sq().sqrt();
        let got = direct.l2_inclusion[0];
        assert!(
            (got - want).abs() <= 5e-2 * want,
            "interior norm {got} vs oracle {want}"
        );
        let finer = scattering_matrix(&g, 1e4, &c).unwrap().l2_inclusion[0];
        let drop = finer / got;
        assert!(
            (0.1..=0.3).contains(&drop),
            "decade decay factor {drop} (want ≈ 10^(-3/4) ≈ 0.178)"
        );
    }

    #[test]
    fn reconstruction_compares_against_a_layer_resolved_solve() {
        let g = slab_geometry();
        let model = large_eta_model(&g, &SolveControls::with_h(0.03)).unwrap();
        let c = SolveControls {
            target_h: 0.03,
            layers_per_skin: 3,
            min_h: None,
            n_terms: 15,
        };
        let eta = 1e3;
        let direct = scattering_matrix(&g, eta, &c).unwrap();
        let recon = model.reconstruct_interior(0, eta, &direct.system.dof_map);
        let rel = relative_interior_error(&direct, 0, &recon);
        assert!(rel <= 0.3, "relative interior error {rel}");
        // The mesh helper grades the same way the solve did.
        let again = prepare_mesh(&g, eta, &c).unwrap();
        assert_eq!(again.triangles.len(), direct.mesh.triangles.len());
    }
}
