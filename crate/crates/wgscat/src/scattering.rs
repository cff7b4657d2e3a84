//! Scattering-matrix pipeline: grade and triangulate the guide, factorize
//! once per configuration, solve all incident propagating modes, extract the
//! modal matrix, and audit energy conservation, reciprocity, and eigenvalue
//! bounds.

use crate::fem::{self, AssembledSystem, BcSpec, Excitation, Field, FemError};
use crate::geometry::Geometry;
use crate::mesh::{self, Mesh, MeshError};
use crate::modes::{ModeBasis, ModesError, DEFAULT_N_TERMS};
use crate::numerics;
use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScatteringError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Modes(#[from] ModesError),
    #[error("operation needs one propagating mode on one port, got {modes} modes x {ports} ports")]
    NotMonomode { modes: usize, ports: usize },
    #[error("derivative step must satisfy 0 < delta < eta, got eta = {eta}, delta = {delta}")]
    BadStep { eta: f64, delta: f64 },
}

/// Discretization controls for one scattering solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveControls {
    /// Target edge length away from boundary layers.
    pub target_h: f64,
    /// Elements per skin depth near the inclusion interface; 0 disables
    /// boundary-layer grading.
    pub layers_per_skin: usize,
    /// Floor for graded edge lengths; `None` keeps the mesh default
    /// target_h/64.
    pub min_h: Option<f64>,
    /// Transverse modes kept in the radiation condition.
    pub n_terms: usize,
}

impl Default for SolveControls {
    fn default() -> Self {
        SolveControls {
            target_h: 0.02,
            layers_per_skin: 4,
            min_h: None,
            n_terms: DEFAULT_N_TERMS,
        }
    }
}

impl SolveControls {
    /// Same controls with a different background edge length.
    pub fn with_h(target_h: f64) -> Self {
        SolveControls { target_h, ..Self::default() }
    }
}

/// Scattering matrix of one configuration together with its solved fields
/// and conservation diagnostics.
pub struct ScatteringResult {
    /// s[(p·J+j, p'·J+k)] is the outgoing amplitude in mode k at port p'
    /// for the incident mode j entering through port p.
    pub s: DMatrix<Complex64>,
    /// Dissipation overlap matrix ∫ b u_j ū_k dx over the inclusion;
    /// Hermitian by construction.
    pub b: DMatrix<Complex64>,
    pub lambda: f64,
    /// Dissipation strength of the solve; infinite for the sound-soft
    /// (Dirichlet-obstacle) limit.
    pub eta: f64,
    pub j_prop: usize,
    pub n_ports: usize,
    /// ‖S S̄ᵀ + 2λη B − I‖_F; the B term is dropped in the sound-soft limit.
    pub energy_residual: f64,
    /// max |s_jk − s_kj|, the reciprocity defect.
    pub symmetry_defect: f64,
    /// L²(inclusion) norm of each incident-mode total field, in row order.
    pub l2_inclusion: Vec<f64>,
    /// Solved total fields in row order.
    pub fields: Vec<Field>,
    pub mesh: Mesh,
    pub system: AssembledSystem,
}

impl ScatteringResult {
    /// Moduli of the eigenvalues of S, descending.
    pub fn eigenvalue_moduli(&self) -> Vec<f64> {
        let mut m: Vec<f64> =
            numerics::complex_eigenvalues(&self.s).iter().map(|z| z.norm()).collect();
        m.sort_by(|a, b| b.partial_cmp(a).unwrap());
        m
    }

    /// Row index of the incident (port, mode) pair.
    pub fn row(&self, port: usize, mode: usize) -> usize {
        port * self.j_prop + mode
    }
}

/// Triangulate the domain and, when a dissipative inclusion is present,
/// grade the mesh towards its boundary layer at this η.
pub fn prepare_mesh(
    geometry: &Geometry,
    eta: f64,
    controls: &SolveControls,
) -> Result<Mesh, MeshError> {
    let mut m = mesh::triangulate(geometry, controls.target_h)?;
    if let Some(floor) = controls.min_h {
        m.grading.min_h = floor;
    }
    if eta > 0.0 && controls.layers_per_skin > 0 {
        if let Some(inc) = &geometry.inclusion {
            let b0 = inc.b.min_on(&inc.shape);
            m = mesh::grade_near_interface(&m, eta, b0, controls.layers_per_skin);
        }
    }
    Ok(m)
}

/// Modal coefficients of one solved total field: per port p' and mode k,
/// s_k = √(2α_k) e^{−iα_k D_{p'}} (m_k·u), minus the incident-wave phase
/// e^{−2iα_j D_p} on the field's own (port, mode) slot.
pub fn extract_row(
    basis: &ModeBasis,
    system: &AssembledSystem,
    field: &Field,
) -> Vec<Complex64> {
    let jp = basis.j_prop();
    let mut row = vec![Complex64::ZERO; system.moments.len() * jp];
    for pm in &system.moments {
        for k in 0..jp {
            let ak = basis.alpha(k);
            let mu: Complex64 =
                pm.m[k].iter().map(|&(d, w)| field.values[d] * w).sum();
            let mut s = (2.0 * ak).sqrt() * Complex64::new(0.0, -ak * pm.dist).exp() * mu;
            if let Excitation::PortMode { port, mode } = field.excitation {
                if port == pm.port && mode == k {
                    s -= Complex64::new(0.0, -2.0 * ak * pm.dist).exp();
                }
            }
            row[pm.port * jp + k] = s;
        }
    }
    row
}

/// Solve the direct problem at dissipation η and assemble the audited
/// scattering matrix.
pub fn scattering_matrix(
    geometry: &Geometry,
    eta: f64,
    controls: &SolveControls,
) -> Result<ScatteringResult, ScatteringError> {
    let basis = ModeBasis::new(geometry.lambda, controls.n_terms)?;
    let mesh = prepare_mesh(geometry, eta, controls)?;
    let system = fem::assemble(&mesh, &basis, eta, BcSpec::NeumannAll)?;
    let fields = fem::solve(&system)?;
    Ok(collect_result(&basis, mesh, system, fields, eta))
}

/// Solve the sound-soft limit: the inclusion interior is removed and its
/// boundary is clamped to zero. The result's η is infinite and its energy
/// residual reduces to the unitarity defect.
pub fn dirichlet_scattering_matrix(
    geometry: &Geometry,
    controls: &SolveControls,
) -> Result<ScatteringResult, ScatteringError> {
    let basis = ModeBasis::new(geometry.lambda, controls.n_terms)?;
    let mesh = mesh::triangulate(geometry, controls.target_h)?;
    let system = fem::assemble(&mesh, &basis, 0.0, BcSpec::DirichletOnInclusion)?;
    let fields = fem::solve(&system)?;
    Ok(collect_result(&basis, mesh, system, fields, f64::INFINITY))
}

fn collect_result(
    basis: &ModeBasis,
    mesh: Mesh,
    system: AssembledSystem,
    fields: Vec<Field>,
    eta: f64,
) -> ScatteringResult {
    let jp = basis.j_prop();
    let np = mesh.ports.len();
    let n = jp * np;

    // Reorder the solved fields into row order (port-major, mode-minor).
    let mut by_row: Vec<Option<Field>> = (0..n).map(|_| None).collect();
    for f in fields {
        let Excitation::PortMode { port, mode } = f.excitation else { continue };
        by_row[port * jp + mode] = Some(f);
    }
    let fields: Vec<Field> = by_row.into_iter().map(|f| f.expect("one solve per row")).collect();

    let mut s = DMatrix::<Complex64>::zeros(n, n);
    for (r, f) in fields.iter().enumerate() {
        let row = extract_row(basis, &system, f);
        for c in 0..n {
            s[(r, c)] = row[c];
        }
    }

    // Dissipation overlap, Hermitian to the bit: compute the upper triangle
    // and mirror conjugates; diagonal entries keep only their real part.
    let dofs = &system.dof_map;
    let mut b = DMatrix::<Complex64>::zeros(n, n);
    if eta.is_finite() && mesh.interface.is_some() {
        for j in 0..n {
            for k in j..n {
                let v = fem::b_pairing(&mesh, dofs, &fields[j], &fields[k]);
                if j == k {
                    b[(j, j)] = Complex64::new(v.re, 0.0);
                } else {
                    b[(j, k)] = v;
                    b[(k, j)] = v.conj();
                }
            }
        }
    }

    let mut defect = &s * s.adjoint() - DMatrix::<Complex64>::identity(n, n);
    if eta.is_finite() {
        defect += b.map(|z| z * (2.0 * basis.lambda() * eta));
    }
    let energy_residual = numerics::frobenius(&defect);

    let mut symmetry_defect: f64 = 0.0;
    for j in 0..n {
        for k in 0..n {
            symmetry_defect = symmetry_defect.max((s[(j, k)] - s[(k, j)]).norm());
        }
    }

    let l2_inclusion =
        fields.iter().map(|f| fem::l2_inclusion(&mesh, dofs, f)).collect();

    ScatteringResult {
        s,
        b,
        lambda: basis.lambda(),
        eta,
        j_prop: jp,
        n_ports: np,
        energy_residual,
        symmetry_defect,
        l2_inclusion,
        fields,
        mesh,
        system,
    }
}

/// Solve the same configuration over a list of dissipation strengths, in
/// input order. Each η gets its own layer grading.
pub fn eta_sweep(
    geometry: &Geometry,
    etas: &[f64],
    controls: &SolveControls,
) -> Result<Vec<ScatteringResult>, ScatteringError> {
    etas.iter().map(|&eta| scattering_matrix(geometry, eta, controls)).collect()
}

/// Two independent computations of dS/dη for a monomode configuration.
#[derive(Debug, Clone, Copy)]
pub struct DerivativeCheck {
    /// Central finite difference (S^{η+δ} − S^{η−δ})/(2δ).
    pub fd: Complex64,
    /// −λ ∫ b (u^η)² dx with the non-conjugated square.
    pub formula: Complex64,
    pub rel_err: f64,
}

/// Compare the finite-difference η-derivative of the reflection coefficient
/// against the closed dissipation-volume formula. All three solves reuse one
/// mesh (graded at the central η) so discretization error cancels in the
/// difference.
pub fn d_eta_check(
    geometry: &Geometry,
    eta: f64,
    delta: f64,
    controls: &SolveControls,
) -> Result<DerivativeCheck, ScatteringError> {
    let basis = ModeBasis::new(geometry.lambda, controls.n_terms)?;
    if basis.j_prop() != 1 || geometry.ports.len() != 1 {
        return Err(ScatteringError::NotMonomode {
            modes: basis.j_prop(),
            ports: geometry.ports.len(),
        });
    }
    if !(delta > 0.0 && delta < eta) {
        return Err(ScatteringError::BadStep { eta, delta });
    }
    let mesh = prepare_mesh(geometry, eta, controls)?;
    let reflection = |e: f64| -> Result<Complex64, ScatteringError> {
        let system = fem::assemble(&mesh, &basis, e, BcSpec::NeumannAll)?;
        let fields = fem::solve(&system)?;
        Ok(extract_row(&basis, &system, &fields[0])[0])
    };
    let system = fem::assemble(&mesh, &basis, eta, BcSpec::NeumannAll)?;
    let fields = fem::solve(&system)?;
    let formula = -geometry.lambda * fem::b_square(&mesh, &system.dof_map, &fields[0]);
    let fd = (reflection(eta + delta)? - reflection(eta - delta)?) / (2.0 * delta);
    let scale = formula.norm().max(fd.norm());
    let rel_err = if scale == 0.0 { 0.0 } else { (fd - formula).norm() / scale };
    Ok(DerivativeCheck { fd, formula, rel_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        build_full_branch_guide, build_waveguide, BProfile, GeometrySpec, Inclusion, Point,
        Shape,
    };
    use crate::numerics::{hermitian_defect, hermitian_eigenvalues, unitarity_defect};
    use crate::slab1d::{slab_reflection, SlabSpec};

    const LAMBDA1: f64 = 6.316_546_816_697_189; // (0.8π)², one propagating mode

    fn disk_geometry(lambda: f64, b0: f64) -> Geometry {
        let spec = GeometrySpec {
            truncation_z: Some(3.0),
            inclusion: Some(Inclusion {
                shape: Shape::Disk { center: Point::new(1.5, 0.5), radius: 0.3 },
                b: BProfile::Constant { value: b0 },
            }),
            ..Default::default()
        };
        build_waveguide(&spec, lambda).unwrap()
    }

    fn slab_geometry(lambda: f64) -> Geometry {
        let spec = GeometrySpec {
            truncation_z: Some(2.5),
            inclusion: Some(Inclusion {
                shape: Shape::Rect { corner: Point::new(1.0, 0.0), width: 1.0, height: 1.0 },
                b: BProfile::Constant { value: 1.0 },
            }),
            ..Default::default()
        };
        build_waveguide(&spec, lambda).unwrap()
    }

    #[test]
    fn straight_guide_reflects_the_fundamental_mode_unchanged() {
        let spec = GeometrySpec { truncation_z: Some(2.0), ..Default::default() };
        let g = build_waveguide(&spec, LAMBDA1).unwrap();
        let r = scattering_matrix(&g, 0.0, &SolveControls::with_h(0.04)).unwrap();
        assert_eq!(r.s.nrows(), 1);
        assert!((r.s[(0, 0)] - Complex64::ONE).norm() <= 1e-4, "s00 = {}", r.s[(0, 0)]);
        assert!(r.energy_residual <= 1e-10, "residual {}", r.energy_residual);
        assert_eq!(r.symmetry_defect, 0.0);
        assert_eq!(r.l2_inclusion[0], 0.0);
    }

    #[test]
    fn slab_reflection_matches_the_transfer_matrix_oracle() {
        let g = slab_geometry(LAMBDA1);
        let spec = SlabSpec::new(LAMBDA1, 1.0, 2.0, 1.0).unwrap();
        for eta in [0.5, 5.0] {
            let fem_r = scattering_matrix(&g, eta, &SolveControls::with_h(0.02))
                .unwrap()
                .s[(0, 0)];
            let oracle = slab_reflection(spec, eta).unwrap();
            assert!(
                (fem_r - oracle).norm() <= 1e-3,
                "eta {eta}: fem {fem_r} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn slab_reflection_approaches_the_sound_soft_limit_at_large_eta() {
        let g = slab_geometry(LAMBDA1);
        let r = scattering_matrix(&g, 1e6, &SolveControls::with_h(0.02)).unwrap();
        // The boundary layer is far below the grading floor here; the huge
        // absorption acts as a penalty clamping the interior, so the guide
        // still sees the sound-soft face.
        assert!(r.mesh.layer_unresolved);
        let soft = -Complex64::new(0.0, -2.0 * LAMBDA1.sqrt() * 2.0).exp();
        assert!(
            (r.s[(0, 0)] - soft).norm() <= 2e-2,
            "s00 {} vs sound-soft {soft}",
            r.s[(0, 0)]
        );
    }

    #[test]
    fn energy_identity_is_discrete_exact_on_the_disk() {
        let g = disk_geometry(LAMBDA1, 1.0);
        let r = scattering_matrix(&g, 1.0, &SolveControls::with_h(0.06)).unwrap();
        assert!(r.energy_residual <= 1e-10, "residual {}", r.energy_residual);
        assert!(r.symmetry_defect <= 1e-12, "symmetry {}", r.symmetry_defect);
        assert_eq!(hermitian_defect(&r.b), 0.0);
        let eig = hermitian_eigenvalues(&r.b);
        let trace: f64 = r.b.diagonal().iter().map(|z| z.re).sum();
        assert!(eig.iter().all(|&e| e >= -1e-12 * trace));
        assert!(r.l2_inclusion[0] > 0.0);
        assert!(r.s[(0, 0)].norm() < 1.0);
    }

    #[test]
    fn unitarity_defect_at_zero_eta_is_solver_level() {
        let g = disk_geometry(LAMBDA1, 1.0);
        let r = scattering_matrix(&g, 0.0, &SolveControls::with_h(0.08)).unwrap();
        assert!(unitarity_defect(&r.s) <= 1e-10, "defect {}", unitarity_defect(&r.s));
    }

    #[test]
    fn multimode_eigenvalues_stay_inside_the_unit_disk() {
        let lambda = (4.8 * std::f64::consts::PI).powi(2);
        let g = disk_geometry(lambda, 1.0);
        let r = scattering_matrix(&g, 5.0, &SolveControls::with_h(0.05)).unwrap();
        assert_eq!(r.s.nrows(), 5);
        assert!(r.energy_residual <= 1e-9, "residual {}", r.energy_residual);
        let moduli = r.eigenvalue_moduli();
        assert!(moduli[0] <= 1.0 + 1e-6, "max modulus {}", moduli[0]);
    }

    #[test]
    fn dirichlet_obstacle_matrix_is_unitary_and_decoupled() {
        let g = disk_geometry(LAMBDA1, 1.0);
        let r = dirichlet_scattering_matrix(&g, &SolveControls::with_h(0.06)).unwrap();
        assert!(r.eta.is_infinite());
        assert!(r.energy_residual <= 1e-10, "residual {}", r.energy_residual);
        assert_eq!(r.l2_inclusion[0], 0.0);
        assert!((r.s[(0, 0)].norm() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn scattering_depends_only_on_the_product_of_eta_and_b() {
        let strong = disk_geometry(LAMBDA1, 2.0);
        let weak = disk_geometry(LAMBDA1, 1.0);
        let c = SolveControls::with_h(0.08);
        let a = scattering_matrix(&strong, 0.5, &c).unwrap();
        let b = scattering_matrix(&weak, 1.0, &c).unwrap();
        assert!((a.s[(0, 0)] - b.s[(0, 0)]).norm() <= 1e-14);
    }

    #[test]
    fn derivative_identity_matches_the_volume_formula() {
        let g = disk_geometry(LAMBDA1, 1.0);
        let c = SolveControls::with_h(0.07);
        let chk = d_eta_check(&g, 1.0, 1e-3, &c).unwrap();
        assert!(chk.rel_err <= 1e-2, "rel_err {}", chk.rel_err);
        // Central differences converge at second order in the step.
        let fine = d_eta_check(&g, 1.0, 5e-4, &c).unwrap();
        assert!((chk.fd - fine.fd).norm() <= 1e-4 * chk.formula.norm());
    }

    #[test]
    fn derivative_check_vanishes_without_dissipation() {
        let spec = GeometrySpec { truncation_z: Some(2.0), ..Default::default() };
        let g = build_waveguide(&spec, LAMBDA1).unwrap();
        let chk = d_eta_check(&g, 1.0, 1e-3, &SolveControls::with_h(0.08)).unwrap();
        assert_eq!(chk.formula, Complex64::ZERO);
        assert!(chk.fd.norm() <= 1e-12);
        assert_eq!(chk.rel_err, 0.0);
    }

    #[test]
    fn multimode_d_eta_check_is_rejected() {
        let lambda = (4.8 * std::f64::consts::PI).powi(2);
        let g = disk_geometry(lambda, 1.0);
        let err = d_eta_check(&g, 1.0, 1e-3, &SolveControls::default()).unwrap_err();
        assert!(matches!(err, ScatteringError::NotMonomode { modes: 5, ports: 1 }));
    }

    #[test]
    fn two_port_branch_guide_is_reciprocal_and_lossless() {
        let g = build_full_branch_guide(1.8, LAMBDA1, 0.0).unwrap();
        let r = scattering_matrix(&g, 0.0, &SolveControls::with_h(0.05)).unwrap();
        assert_eq!(r.s.nrows(), 2);
        assert!(r.energy_residual <= 1e-10, "residual {}", r.energy_residual);
        assert!(r.symmetry_defect <= 1e-12, "symmetry {}", r.symmetry_defect);
        let (refl, trans) = (r.s[(0, 0)], r.s[(r.row(1, 0), 0)]);
        assert!((refl.norm_sqr() + trans.norm_sqr() - 1.0).abs() <= 1e-10);
        // The branch sits at the centre, so both ports see the same
        // reflection up to mesh asymmetry.
        assert!((r.s[(0, 0)] - r.s[(1, 1)]).norm() <= 1e-3);
    }
}
