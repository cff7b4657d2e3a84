//! Quadratic isoparametric finite elements for the dissipative Helmholtz
//! problem: assembly of the complex-symmetric system K − λM − iλη·M_b − D
//! with modal radiation conditions on truncation ports, sparse direct
//! solves with a residual contract, and variational normal-flux recovery.

use std::collections::{HashMap, HashSet};

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::Point;
use crate::mesh::{EdgeTag, Mesh, Tri, REGION_INCLUSION};
use crate::modes::{ModeBasis, ModesError};
use crate::numerics::gauss_legendre;

type C = faer::c64;

fn to_faer(x: Complex64) -> C {
    C::new(x.re, x.im)
}

fn from_faer(x: C) -> Complex64 {
    Complex64::new(x.re, x.im)
}

/// Boundary-condition choice for [`assemble`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcSpec {
    /// Natural conditions everywhere except the radiating ports.
    NeumannAll,
    /// Homogeneous Dirichlet data on the inclusion outline; the inclusion
    /// interior is removed from the problem (sound-soft obstacle).
    DirichletOnInclusion,
    /// Homogeneous Dirichlet data on every edge carrying the tag.
    DirichletOn(EdgeTag),
}

#[derive(Debug, Error)]
pub enum FemError {
    #[error(transparent)]
    Modes(#[from] ModesError),
    #[error("no edges tagged {0:?} in the mesh")]
    MissingTag(EdgeTag),
    #[error("mesh has no inclusion but the boundary condition needs one")]
    NoInclusion,
    #[error("factorization failed; the system is numerically singular")]
    Singular,
    #[error("solve residual {residual:.3e} exceeds the 1e-10 contract; the truncated problem may be near a resonance")]
    Residual { residual: f64 },
    #[error("matrix construction failed: {0}")]
    Construction(String),
    #[error("field dump malformed: {0}")]
    BadFile(String),
}

/// Mapping from mesh entities to P2 degrees of freedom: one per vertex,
/// one per triangle edge, with midside positions bent onto curved
/// interface arcs where the mesh provides them.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub n_vertices: usize,
    /// Sorted vertex pairs; edge i owns dof `n_vertices + i`.
    pub edges: Vec<(usize, usize)>,
    pub edge_index: HashMap<(usize, usize), usize>,
    /// Position of every dof (vertices, then midside nodes).
    pub positions: Vec<Point>,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Self {
        let mut keys: HashSet<(usize, usize)> = HashSet::new();
        for t in &mesh.triangles {
            for e in 0..3 {
                let (a, b) = (t.v[e], t.v[(e + 1) % 3]);
                keys.insert(if a < b { (a, b) } else { (b, a) });
            }
        }
        let mut edges: Vec<(usize, usize)> = keys.into_iter().collect();
        edges.sort();
        let edge_index: HashMap<(usize, usize), usize> =
            edges.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        let mut positions = mesh.vertices.clone();
        positions.reserve(edges.len());
        for &(a, b) in &edges {
            let m = mesh.curved_midpoints.get(&(a, b)).copied().unwrap_or_else(|| {
                let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
                Point::new(0.5 * (pa.z + pb.z), 0.5 * (pa.y + pb.y))
            });
            positions.push(m);
        }
        DofMap { n_vertices: mesh.vertices.len(), edges, edge_index, positions }
    }

    pub fn n_dofs(&self) -> usize {
        self.n_vertices + self.edges.len()
    }

    pub fn edge_dof(&self, a: usize, b: usize) -> usize {
        let key = if a < b { (a, b) } else { (b, a) };
        self.n_vertices + self.edge_index[&key]
    }

    /// The six dofs of a triangle: vertices then midsides of (01), (12), (20).
    pub fn tri_dofs(&self, t: &Tri) -> [usize; 6] {
        [
            t.v[0],
            t.v[1],
            t.v[2],
            self.edge_dof(t.v[0], t.v[1]),
            self.edge_dof(t.v[1], t.v[2]),
            self.edge_dof(t.v[2], t.v[0]),
        ]
    }
}

/// Degree-5 quadrature on the reference triangle (weights sum to 1/2).
const TRI_QUAD: [(f64, f64, f64); 7] = {
    let a = 0.059_715_871_789_77;
    let b = 0.470_142_064_105_115;
    let c = 0.797_426_985_353_087;
    let d = 0.101_286_507_323_456;
    let w1 = 0.225 / 2.0;
    let w2 = 0.132_394_152_788_506 / 2.0;
    let w3 = 0.125_939_180_544_827 / 2.0;
    [
        (1.0 / 3.0, 1.0 / 3.0, w1),
        (a, b, w2),
        (b, a, w2),
        (b, b, w2),
        (c, d, w3),
        (d, c, w3),
        (d, d, w3),
    ]
};

/// P2 shape values at barycentric (l1, l2) with l0 = 1 − l1 − l2.
/// Node order: three vertices, then midsides of (01), (12), (20).
fn shape_values(l1: f64, l2: f64) -> [f64; 6] {
    let l0 = 1.0 - l1 - l2;
    [
        l0 * (2.0 * l0 - 1.0),
        l1 * (2.0 * l1 - 1.0),
        l2 * (2.0 * l2 - 1.0),
        4.0 * l0 * l1,
        4.0 * l1 * l2,
        4.0 * l2 * l0,
    ]
}

/// Reference-coordinate gradients (∂/∂l1, ∂/∂l2) of the P2 shapes.
fn shape_grads(l1: f64, l2: f64) -> [[f64; 2]; 6] {
    let l0 = 1.0 - l1 - l2;
    [
        [1.0 - 4.0 * l0, 1.0 - 4.0 * l0],
        [4.0 * l1 - 1.0, 0.0],
        [0.0, 4.0 * l2 - 1.0],
        [4.0 * (l0 - l1), -4.0 * l1],
        [4.0 * l2, 4.0 * l1],
        [-4.0 * l2, 4.0 * (l0 - l2)],
    ]
}

/// 1D quadratic shapes on [0,1] with nodes at 0, 1, midpoint.
fn edge_shape_values(t: f64) -> [f64; 3] {
    [(1.0 - t) * (1.0 - 2.0 * t), t * (2.0 * t - 1.0), 4.0 * t * (1.0 - t)]
}

fn edge_shape_derivs(t: f64) -> [f64; 3] {
    [4.0 * t - 3.0, 4.0 * t - 1.0, 4.0 - 8.0 * t]
}

/// Pointwise data at one quadrature point of an (iso)parametric triangle.
struct QuadPoint {
    x: Point,
    det: f64,
    /// Physical gradients of the six shapes.
    grads: [[f64; 2]; 6],
    values: [f64; 6],
}

fn quad_points(nodes: &[Point; 6]) -> Vec<QuadPoint> {
    TRI_QUAD
        .iter()
        .map(|&(l1, l2, w)| {
            let values = shape_values(l1, l2);
            let ref_grads = shape_grads(l1, l2);
            let mut x = Point::new(0.0, 0.0);
            let mut j = [[0.0f64; 2]; 2];
            for i in 0..6 {
                x.z += values[i] * nodes[i].z;
                x.y += values[i] * nodes[i].y;
                j[0][0] += ref_grads[i][0] * nodes[i].z;
                j[0][1] += ref_grads[i][1] * nodes[i].z;
                j[1][0] += ref_grads[i][0] * nodes[i].y;
                j[1][1] += ref_grads[i][1] * nodes[i].y;
            }
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let inv = [
                [j[1][1] / det, -j[0][1] / det],
                [-j[1][0] / det, j[0][0] / det],
            ];
            let mut grads = [[0.0f64; 2]; 6];
            for i in 0..6 {
                grads[i][0] = ref_grads[i][0] * inv[0][0] + ref_grads[i][1] * inv[1][0];
                grads[i][1] = ref_grads[i][0] * inv[0][1] + ref_grads[i][1] * inv[1][1];
            }
            QuadPoint { x, det: det.abs() * w, grads, values }
        })
        .collect()
}

/// Which incident datum produced a right-hand side / a solved field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Excitation {
    /// Incoming propagating mode `mode` entering through `port`.
    PortMode { port: usize, mode: usize },
    /// Manufactured or custom data.
    Custom,
}

/// Modal moment vectors of one truncation port: m_k[dof] = ∫ N_dof φ_k ds.
#[derive(Debug, Clone)]
pub struct PortMoments {
    pub port: usize,
    /// Signed distance from the phase anchor to the port line.
    pub dist: f64,
    /// One sparse vector per transverse mode k < n_terms, global dof ids.
    pub m: Vec<Vec<(usize, f64)>>,
}

/// Assembled linear system with its dof bookkeeping.
pub struct AssembledSystem {
    pub dof_map: DofMap,
    pub lambda: f64,
    pub eta: f64,
    pub bc: BcSpec,
    /// Global dof ids present in the variational problem (active and
    /// constrained); interior dofs of an excluded inclusion are absent.
    pub present: Vec<usize>,
    pub present_of_global: Vec<Option<usize>>,
    /// For each present dof: its row in the reduced system, or None when
    /// the dof is Dirichlet-constrained.
    pub active_of_present: Vec<Option<usize>>,
    pub n_active: usize,
    /// Dirichlet values of constrained present dofs (zeros for the
    /// scattering boundary conditions).
    pub constraint_values: Vec<Complex64>,
    /// Full bilinear form over present dofs, kept for flux recovery.
    a_present: SparseColMat<usize, C>,
    /// Reduced (active × active) matrix.
    a_active: SparseColMat<usize, C>,
    /// Right-hand sides over present dofs, with their excitations.
    pub rhs: Vec<(Excitation, Vec<Complex64>)>,
    pub moments: Vec<PortMoments>,
}

/// One solved coefficient vector over the global dof set.
#[derive(Debug, Clone)]
pub struct Field {
    pub values: Vec<Complex64>,
    pub excitation: Excitation,
    pub eta: f64,
}

struct DofClasses {
    /// global dof -> present? (false = removed from the problem)
    present: Vec<bool>,
    /// global dof -> Dirichlet value (present dofs only)
    constrained: HashMap<usize, Complex64>,
    /// skip triangles of the excluded region entirely
    skip_inclusion: bool,
}

fn classify_dofs(mesh: &Mesh, dofs: &DofMap, bc: BcSpec) -> Result<DofClasses, FemError> {
    let n = dofs.n_dofs();
    let mut present = vec![true; n];
    let mut constrained = HashMap::new();
    let mut skip_inclusion = false;
    match bc {
        BcSpec::NeumannAll => {}
        BcSpec::DirichletOnInclusion => {
            let shape = mesh.interface.ok_or(FemError::NoInclusion)?;
            skip_inclusion = true;
            // Geometric classification: strictly interior dofs vanish from
            // the problem, boundary dofs carry the Dirichlet datum. Every
            // interior dof belongs only to inclusion triangles, which are
            // skipped, so presence can be decided per triangle region.
            let mut touched_exterior = vec![false; n];
            for t in &mesh.triangles {
                if t.region != REGION_INCLUSION {
                    for d in dofs.tri_dofs(t) {
                        touched_exterior[d] = true;
                    }
                }
            }
            let tol = 1e-9;
            for d in 0..n {
                if touched_exterior[d] {
                    let p = dofs.positions[d];
                    if p.dist(shape.closest_boundary_point(p)) < tol {
                        constrained.insert(d, Complex64::ZERO);
                    }
                } else {
                    // Check the dof is actually attached to some triangle;
                    // unreferenced dofs do not exist in a DofMap.
                    present[d] = false;
                }
            }
        }
        BcSpec::DirichletOn(tag) => {
            let mut found = false;
            for e in &mesh.boundary_edges {
                if e.tag == tag {
                    found = true;
                    constrained.insert(e.v[0], Complex64::ZERO);
                    constrained.insert(e.v[1], Complex64::ZERO);
                    constrained.insert(dofs.edge_dof(e.v[0], e.v[1]), Complex64::ZERO);
                }
            }
            if !found {
                return Err(FemError::MissingTag(tag));
            }
        }
    }
    Ok(DofClasses { present, constrained, skip_inclusion })
}

/// Assemble the variational problem
///   ∫ ∇u·∇φ − λ(1+iηb) u φ dx − ⟨Λu, φ⟩_ports = ⟨g_j, φ⟩_ports
/// over P2 elements, with one right-hand side per (port, propagating mode).
pub fn assemble(
    mesh: &Mesh,
    basis: &ModeBasis,
    eta: f64,
    bc: BcSpec,
) -> Result<AssembledSystem, FemError> {
    let dofs = DofMap::new(mesh);
    let classes = classify_dofs(mesh, &dofs, bc)?;
    let lambda = basis.lambda();

    // Volume terms, accumulated deterministically so the matrix is
    // complex-symmetric to the bit: (i,j) and (j,i) receive identical
    // floating-point operations in identical order.
    let mut acc: HashMap<(usize, usize), Complex64> = HashMap::new();
    let ilh = Complex64::new(0.0, lambda * eta);
    for t in &mesh.triangles {
        if classes.skip_inclusion && t.region == REGION_INCLUSION {
            continue;
        }
        let idx = dofs.tri_dofs(t);
        let nodes: [Point; 6] = std::array::from_fn(|i| dofs.positions[idx[i]]);
        let mut ke = [[Complex64::ZERO; 6]; 6];
        for qp in quad_points(&nodes) {
            let b = if t.region == REGION_INCLUSION {
                mesh.inclusion_b.as_ref().map_or(0.0, |b| b.eval(qp.x))
            } else {
                0.0
            };
            // K − λM − iλη M_b at this point.
            let coef_mass = -(lambda + ilh * b) * qp.det;
            for i in 0..6 {
                for j in i..6 {
                    let stiff = qp.grads[i][0] * qp.grads[j][0] + qp.grads[i][1] * qp.grads[j][1];
                    let v = Complex64::new(stiff * qp.det, 0.0)
                        + coef_mass * (qp.values[i] * qp.values[j]);
                    ke[i][j] += v;
                }
            }
        }
        for i in 0..6 {
            for j in i..6 {
                *acc.entry((idx[i], idx[j])).or_default() += ke[i][j];
                if i != j {
                    *acc.entry((idx[j], idx[i])).or_default() += ke[i][j];
                }
            }
        }
    }

    // Port moments and the radiation (DtN) rank-one terms.
    let moments = port_moments(mesh, &dofs, basis)?;
    for pm in &moments {
        for (k, mk) in pm.m.iter().enumerate() {
            // Outgoing propagating modes contribute −iα_k m mᵀ, evanescent
            // tails +√(λ_k−λ) m mᵀ (both subtracted from the form).
            let c = if k < basis.j_prop() {
                Complex64::new(0.0, -basis.alpha(k))
            } else {
                Complex64::new(basis.evanescent_rate(k), 0.0)
            };
            for &(a, wa) in mk {
                for &(b, wb) in mk {
                    *acc.entry((a, b)).or_default() += c * (wa * wb);
                }
            }
        }
    }

    // Incident data: total-field form, g_j = −2iα_j (2α_j)^{−1/2} e^{−iα_j D} φ_j.
    let mut rhs: Vec<(Excitation, Vec<Complex64>)> = Vec::new();
    for pm in &moments {
        for j in 0..basis.j_prop() {
            let aj = basis.alpha(j);
            let c = Complex64::new(0.0, -2.0 * aj)
                * (2.0 * aj).powf(-0.5)
                * (Complex64::new(0.0, -aj * pm.dist)).exp();
            let mut f = vec![Complex64::ZERO; dofs.n_dofs()];
            for &(d, w) in &pm.m[j] {
                f[d] += c * w;
            }
            rhs.push((Excitation::PortMode { port: pm.port, mode: j }, f));
        }
    }

    finish_assembly(dofs, lambda, eta, bc, classes, acc, rhs, moments)
}

/// Assemble −Δu − λ₀u = f with Dirichlet data supplied pointwise on tagged
/// boundary dofs; used for manufactured-solution checks. The closure
/// returns Some(value) to constrain a boundary dof.
pub fn assemble_custom(
    mesh: &Mesh,
    lambda0: f64,
    volume_load: &dyn Fn(Point) -> Complex64,
    dirichlet: &dyn Fn(Point) -> Option<Complex64>,
    exclude_inclusion_interior: bool,
) -> Result<AssembledSystem, FemError> {
    let dofs = DofMap::new(mesh);

    let mut classes = if exclude_inclusion_interior {
        classify_dofs(mesh, &dofs, BcSpec::DirichletOnInclusion)?
    } else {
        DofClasses { present: vec![true; dofs.n_dofs()], constrained: HashMap::new(), skip_inclusion: false }
    };
    // Candidate Dirichlet dofs: everything on a tagged edge.
    let mut candidates: HashSet<usize> = HashSet::new();
    for e in &mesh.boundary_edges {
        candidates.insert(e.v[0]);
        candidates.insert(e.v[1]);
        candidates.insert(dofs.edge_dof(e.v[0], e.v[1]));
    }
    for d in candidates {
        if !classes.present[d] {
            continue;
        }
        if let Some(v) = dirichlet(dofs.positions[d]) {
            classes.constrained.insert(d, v);
        }
    }

    let mut acc: HashMap<(usize, usize), Complex64> = HashMap::new();
    let mut f = vec![Complex64::ZERO; dofs.n_dofs()];
    for t in &mesh.triangles {
        if classes.skip_inclusion && t.region == REGION_INCLUSION {
            continue;
        }
        let idx = dofs.tri_dofs(t);
        let nodes: [Point; 6] = std::array::from_fn(|i| dofs.positions[idx[i]]);
        let mut ke = [[Complex64::ZERO; 6]; 6];
        for qp in quad_points(&nodes) {
            let load = volume_load(qp.x);
            for i in 0..6 {
                f[idx[i]] += load * (qp.values[i] * qp.det);
                for j in i..6 {
                    let stiff =
                        qp.grads[i][0] * qp.grads[j][0] + qp.grads[i][1] * qp.grads[j][1];
                    ke[i][j] +=
                        Complex64::new((stiff - lambda0 * qp.values[i] * qp.values[j]) * qp.det, 0.0);
                }
            }
        }
        for i in 0..6 {
            for j in i..6 {
                *acc.entry((idx[i], idx[j])).or_default() += ke[i][j];
                if i != j {
                    *acc.entry((idx[j], idx[i])).or_default() += ke[i][j];
                }
            }
        }
    }
    let rhs = vec![(Excitation::Custom, f)];
    finish_assembly(dofs, lambda0, 0.0, BcSpec::NeumannAll, classes, acc, rhs, Vec::new())
}

#[allow(clippy::too_many_arguments)]
fn finish_assembly(
    dofs: DofMap,
    lambda: f64,
    eta: f64,
    bc: BcSpec,
    classes: DofClasses,
    acc: HashMap<(usize, usize), Complex64>,
    rhs_global: Vec<(Excitation, Vec<Complex64>)>,
    moments: Vec<PortMoments>,
) -> Result<AssembledSystem, FemError> {
    let mut entries: Vec<((usize, usize), Complex64)> = acc.into_iter().collect();
    entries.sort_unstable_by_key(|&(k, _)| k);
    let n = dofs.n_dofs();
    let mut present: Vec<usize> = (0..n).filter(|&d| classes.present[d]).collect();
    present.sort_unstable();
    let mut present_of_global = vec![None; n];
    for (i, &d) in present.iter().enumerate() {
        present_of_global[d] = Some(i);
    }
    // Constrained present dofs keep their Dirichlet value, in present order.
    let mut active_of_present = vec![None; present.len()];
    let mut constraint_values = Vec::new();
    let mut n_active = 0;
    for (i, &d) in present.iter().enumerate() {
        if let Some(&v) = classes.constrained.get(&d) {
            constraint_values.push(v);
        } else {
            active_of_present[i] = Some(n_active);
            n_active += 1;
        }
    }

    let remap: Vec<Triplet<usize, usize, C>> = entries
        .iter()
        .filter_map(|&((row, col), v)| {
            let (r, c) = (present_of_global[row]?, present_of_global[col]?);
            Some(Triplet::new(r, c, to_faer(v)))
        })
        .collect();
    let a_present = SparseColMat::try_new_from_triplets(present.len(), present.len(), &remap)
        .map_err(|e| FemError::Construction(format!("{e:?}")))?;

    let reduced: Vec<Triplet<usize, usize, C>> = remap
        .iter()
        .filter_map(|t| {
            let (r, c) = (active_of_present[t.row]?, active_of_present[t.col]?);
            Some(Triplet::new(r, c, t.val))
        })
        .collect();
    let a_active = SparseColMat::try_new_from_triplets(n_active, n_active, &reduced)
        .map_err(|e| FemError::Construction(format!("{e:?}")))?;

    // Present-space right-hand sides, with inhomogeneous constraints folded
    // in: F_active -= A[:,c]·g_c.
    let mut rhs = Vec::with_capacity(rhs_global.len());
    let any_inhomogeneous = classes.constrained.values().any(|v| v.norm() > 0.0);
    for (exc, f_global) in rhs_global {
        let mut f: Vec<Complex64> = present.iter().map(|&d| f_global[d]).collect();
        if any_inhomogeneous {
            for (cp, &d) in present.iter().enumerate() {
                let Some(&g) = classes.constrained.get(&d) else { continue };
                if g.norm() == 0.0 {
                    continue;
                }
                let col = cp;
                for (k, r) in a_present.row_idx_of_col(col).enumerate() {
                    if active_of_present[r].is_some() {
                        f[r] -= from_faer(a_present.val_of_col(col)[k]) * g;
                    }
                }
            }
        }
        rhs.push((exc, f));
    }

    Ok(AssembledSystem {
        dof_map: dofs,
        lambda,
        eta,
        bc,
        present,
        present_of_global,
        active_of_present,
        n_active,
        constraint_values,
        a_present,
        a_active,
        rhs,
        moments,
    })
}

/// Moment vectors ∫ N_a φ_k ds on each truncation port, k < basis.n_terms().
fn port_moments(
    mesh: &Mesh,
    dofs: &DofMap,
    basis: &ModeBasis,
) -> Result<Vec<PortMoments>, FemError> {
    let (gx, gw) = gauss_legendre(5);
    let mut out = Vec::new();
    for port in &mesh.ports {
        let mut acc: Vec<HashMap<usize, f64>> = vec![HashMap::new(); basis.n_terms()];
        let mut found = false;
        for e in &mesh.boundary_edges {
            if e.tag != EdgeTag::Truncation(port.id) {
                continue;
            }
            found = true;
            let (a, b) = (mesh.vertices[e.v[0]], mesh.vertices[e.v[1]]);
            let local = [e.v[0], e.v[1], dofs.edge_dof(e.v[0], e.v[1])];
            let len = a.dist(b);
            for (q, &x) in gx.iter().enumerate() {
                let t = 0.5 * (x + 1.0);
                let w = 0.5 * gw[q] * len;
                let y = a.y + t * (b.y - a.y);
                let nv = edge_shape_values(t);
                for k in 0..basis.n_terms() {
                    let phi = basis.phi(k, y);
                    for i in 0..3 {
                        *acc[k].entry(local[i]).or_default() += w * nv[i] * phi;
                    }
                }
            }
        }
        if !found {
            return Err(FemError::MissingTag(EdgeTag::Truncation(port.id)));
        }
        let m = acc
            .into_iter()
            .map(|h| {
                let mut v: Vec<(usize, f64)> = h.into_iter().collect();
                v.sort_unstable_by_key(|&(d, _)| d);
                v
            })
            .collect();
        out.push(PortMoments { port: port.id, dist: port.dist_from_anchor, m });
    }
    Ok(out)
}

fn sparse_matvec(a: &SparseColMat<usize, C>, x: &[Complex64]) -> Vec<Complex64> {
    let mut y = vec![Complex64::ZERO; a.nrows()];
    for col in 0..a.ncols() {
        let xc = x[col];
        if xc == Complex64::ZERO {
            continue;
        }
        for (k, r) in a.row_idx_of_col(col).enumerate() {
            y[r] += from_faer(a.val_of_col(col)[k]) * xc;
        }
    }
    y
}

/// Factor once and solve all right-hand sides; enforce the residual
/// contract ‖Au − F‖ ≤ 1e−10·‖F‖ on the reduced system.
pub fn solve(system: &AssembledSystem) -> Result<Vec<Field>, FemError> {
    let lu = system.a_active.sp_lu().map_err(|_| FemError::Singular)?;
    let n_rhs = system.rhs.len();
    let mut b = Mat::<C>::zeros(system.n_active, n_rhs);
    for (j, (_, f)) in system.rhs.iter().enumerate() {
        for i in 0..system.present.len() {
            if let Some(r) = system.active_of_present[i] {
                b[(r, j)] = to_faer(f[i]);
            }
        }
    }
    let x = lu.solve(&b);

    let mut fields = Vec::with_capacity(n_rhs);
    for (j, (exc, f)) in system.rhs.iter().enumerate() {
        // Residual check on the reduced problem.
        let xa: Vec<Complex64> = (0..system.n_active)
            .map(|r| from_faer(x[(r, j)]))
            .collect();
        let ax = sparse_matvec(&system.a_active, &xa);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (i, _) in system.present.iter().enumerate() {
            if let Some(r) = system.active_of_present[i] {
                num += (ax[r] - f[i]).norm_sqr();
                den += f[i].norm_sqr();
            }
        }
        let residual = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        if !residual.is_finite() || residual > 1e-10 {
            return Err(FemError::Residual { residual });
        }

        let mut values = vec![Complex64::ZERO; system.dof_map.n_dofs()];
        let mut c_idx = 0;
        for (i, &d) in system.present.iter().enumerate() {
            match system.active_of_present[i] {
                Some(r) => values[d] = from_faer(x[(r, j)]),
                None => {
                    values[d] = system.constraint_values[c_idx];
                    c_idx += 1;
                }
            }
        }
        fields.push(Field { values, excitation: *exc, eta: system.eta });
    }
    Ok(fields)
}

/// Normal-flux samples along a tagged curve: points, arc weights, values.
#[derive(Debug, Clone)]
pub struct FluxSamples {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub values: Vec<Complex64>,
}

/// Recover the normal flux of `field` on the `tag` curve variationally:
/// pair the discrete residual against boundary test functions and invert
/// the boundary mass matrix. The sign convention is the outward normal of
/// the domain the problem was posed on (into the obstacle for a
/// Dirichlet-excluded inclusion); quadratic functionals of the flux are
/// convention-independent.
pub fn boundary_flux(
    system: &AssembledSystem,
    mesh: &Mesh,
    field: &Field,
    tag: EdgeTag,
) -> Result<FluxSamples, FemError> {
    // Residual r = A·u − F over present dofs, restricted to constrained
    // dofs of the tagged curve.
    let u_present: Vec<Complex64> = system
        .present
        .iter()
        .map(|&d| field.values[d])
        .collect();
    let au = sparse_matvec(&system.a_present, &u_present);
    let f = &system
        .rhs
        .iter()
        .find(|(exc, _)| *exc == field.excitation)
        .ok_or_else(|| FemError::Construction("field excitation not in system".into()))?
        .1;
    // NB: rhs vectors here are already reduced-space folded; rebuild the
    // raw present-space load for residual pairing. For homogeneous
    // constraints (the scattering cases) the two coincide on constrained
    // rows, and the manufactured path has zero port data.
    let r: Vec<Complex64> = (0..system.present.len())
        .map(|i| au[i] - f[i])
        .collect();

    // Constrained dofs on the tagged curve, in deterministic order.
    let mut curve_dofs: Vec<usize> = Vec::new();
    let mut seen = HashSet::new();
    let mut tagged_edges = Vec::new();
    for e in &mesh.boundary_edges {
        if e.tag != tag {
            continue;
        }
        tagged_edges.push(e);
        for d in [e.v[0], e.v[1], system.dof_map.edge_dof(e.v[0], e.v[1])] {
            let Some(p) = system.present_of_global[d] else {
                return Err(FemError::Construction(
                    "tagged curve dof missing from the system".into(),
                ));
            };
            if system.active_of_present[p].is_some() {
                return Err(FemError::Construction(
                    "flux recovery needs a Dirichlet-constrained curve".into(),
                ));
            }
            if seen.insert(d) {
                curve_dofs.push(d);
            }
        }
    }
    if tagged_edges.is_empty() {
        return Err(FemError::MissingTag(tag));
    }
    curve_dofs.sort_unstable();
    let local: HashMap<usize, usize> =
        curve_dofs.iter().enumerate().map(|(i, &d)| (d, i)).collect();

    // Boundary mass on the curve (isoparametric on curved edges).
    let (gx, gw) = gauss_legendre(5);
    let mut triplets = Vec::new();
    for e in &tagged_edges {
        let dofs3 = [e.v[0], e.v[1], system.dof_map.edge_dof(e.v[0], e.v[1])];
        let nodes: [Point; 3] = std::array::from_fn(|i| system.dof_map.positions[dofs3[i]]);
        let li: [usize; 3] = std::array::from_fn(|i| local[&dofs3[i]]);
        let mut me = [[0.0f64; 3]; 3];
        for (q, &x) in gx.iter().enumerate() {
            let t = 0.5 * (x + 1.0);
            let nv = edge_shape_values(t);
            let nd = edge_shape_derivs(t);
            let (mut tz, mut ty) = (0.0, 0.0);
            for i in 0..3 {
                tz += nd[i] * nodes[i].z;
                ty += nd[i] * nodes[i].y;
            }
            let ds = (tz * tz + ty * ty).sqrt() * 0.5 * gw[q];
            for i in 0..3 {
                for j in 0..3 {
                    me[i][j] += nv[i] * nv[j] * ds;
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                triplets.push(Triplet::new(li[i], li[j], C::new(me[i][j], 0.0)));
            }
        }
    }
    let mass = SparseColMat::<usize, C>::try_new_from_triplets(
        curve_dofs.len(),
        curve_dofs.len(),
        &triplets,
    )
    .map_err(|e| FemError::Construction(format!("{e:?}")))?;
    let lu = mass.sp_lu().map_err(|_| FemError::Singular)?;
    let mut b = Mat::<C>::zeros(curve_dofs.len(), 1);
    for (i, &d) in curve_dofs.iter().enumerate() {
        b[(i, 0)] = to_faer(r[system.present_of_global[d].unwrap()]);
    }
    let g = lu.solve(&b);

    // Sample the recovered density at edge quadrature points.
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut values = Vec::new();
    for e in &tagged_edges {
        let dofs3 = [e.v[0], e.v[1], system.dof_map.edge_dof(e.v[0], e.v[1])];
        let nodes: [Point; 3] = std::array::from_fn(|i| system.dof_map.positions[dofs3[i]]);
        let gi: [usize; 3] = std::array::from_fn(|i| local[&dofs3[i]]);
        for (q, &x) in gx.iter().enumerate() {
            let t = 0.5 * (x + 1.0);
            let nv = edge_shape_values(t);
            let nd = edge_shape_derivs(t);
            let (mut pz, mut py, mut tz, mut ty) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..3 {
                pz += nv[i] * nodes[i].z;
                py += nv[i] * nodes[i].y;
                tz += nd[i] * nodes[i].z;
                ty += nd[i] * nodes[i].y;
            }
            let mut val = Complex64::ZERO;
            for i in 0..3 {
                val += from_faer(g[(gi[i], 0)]) * nv[i];
            }
            points.push(Point::new(pz, py));
            weights.push((tz * tz + ty * ty).sqrt() * 0.5 * gw[q]);
            values.push(val);
        }
    }
    Ok(FluxSamples { points, weights, values })
}

/// ∫_𝒪 w(x)·f·g dx over inclusion triangles with the assembly quadrature;
/// `conjugate_second` selects f·ḡ (Hermitian pairings) vs f·g.
pub fn integrate_inclusion(
    mesh: &Mesh,
    dofs: &DofMap,
    f: &Field,
    g: &Field,
    weight: &dyn Fn(Point) -> f64,
    conjugate_second: bool,
) -> Complex64 {
    let mut acc = Complex64::ZERO;
    for t in &mesh.triangles {
        if t.region != REGION_INCLUSION {
            continue;
        }
        let idx = dofs.tri_dofs(t);
        let nodes: [Point; 6] = std::array::from_fn(|i| dofs.positions[idx[i]]);
        for qp in quad_points(&nodes) {
            let mut fv = Complex64::ZERO;
            let mut gv = Complex64::ZERO;
            for i in 0..6 {
                fv += f.values[idx[i]] * qp.values[i];
                gv += g.values[idx[i]] * qp.values[i];
            }
            if conjugate_second {
                gv = gv.conj();
            }
            acc += fv * gv * (weight(qp.x) * qp.det);
        }
    }
    acc
}

/// b-weighted Hermitian pairing ∫_𝒪 b u v̄ dx (the absorption quadratic form).
pub fn b_pairing(mesh: &Mesh, dofs: &DofMap, u: &Field, v: &Field) -> Complex64 {
    let b = mesh.inclusion_b.clone();
    integrate_inclusion(mesh, dofs, u, v, &move |p| b.as_ref().map_or(0.0, |b| b.eval(p)), true)
}

/// Non-conjugated b-weighted square ∫_𝒪 b u² dx (the η-derivative integrand).
pub fn b_square(mesh: &Mesh, dofs: &DofMap, u: &Field) -> Complex64 {
    let b = mesh.inclusion_b.clone();
    integrate_inclusion(mesh, dofs, u, u, &move |p| b.as_ref().map_or(0.0, |b| b.eval(p)), false)
}

/// L²(𝒪) norm of a field over the inclusion.
pub fn l2_inclusion(mesh: &Mesh, dofs: &DofMap, u: &Field) -> f64 {
    integrate_inclusion(mesh, dofs, u, u, &|_| 1.0, true).re.max(0.0).sqrt()
}

/// Locate the triangle containing `p` (straight-edge test) and return its
/// index with barycentric coordinates (l1, l2).
pub fn locate(mesh: &Mesh, p: Point) -> Option<(usize, f64, f64)> {
    let tol = -1e-10;
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = mesh.triangle_points(t);
        let det = (b.z - a.z) * (c.y - a.y) - (c.z - a.z) * (b.y - a.y);
        let l1 = ((p.z - a.z) * (c.y - a.y) - (c.z - a.z) * (p.y - a.y)) / det;
        let l2 = ((b.z - a.z) * (p.y - a.y) - (p.z - a.z) * (b.y - a.y)) / det;
        if l1 >= tol && l2 >= tol && 1.0 - l1 - l2 >= tol {
            return Some((ti, l1, l2));
        }
    }
    None
}

/// Evaluate a field at a point (straight-chart evaluation; near curved
/// interface edges this is accurate to the geometric O(h²) chart error).
pub fn evaluate(mesh: &Mesh, dofs: &DofMap, field: &Field, p: Point) -> Option<Complex64> {
    let (ti, l1, l2) = locate(mesh, p)?;
    let idx = dofs.tri_dofs(&mesh.triangles[ti]);
    let nv = shape_values(l1, l2);
    let mut acc = Complex64::ZERO;
    for i in 0..6 {
        acc += field.values[idx[i]] * nv[i];
    }
    Some(acc)
}

/// Field dump: the mesh dump followed by one `re im` line per dof.
pub fn write_field(mesh: &Mesh, field: &Field) -> String {
    let mut s = crate::mesh::write_mesh(mesh);
    for v in &field.values {
        s.push_str(&format!("{:.16e} {:.16e}\n", v.re, v.im));
    }
    s
}

/// Parse a field dump; the dof count must match `nv + #edges` of the mesh
/// section. Returns the mesh together with the coefficient vector.
pub fn read_field(text: &str) -> Result<(Mesh, Field), FemError> {
    let mesh = crate::mesh::read_mesh(text).map_err(|e| FemError::BadFile(e.to_string()))?;
    let dofs = DofMap::new(&mesh);
    let skip = 1 + mesh.vertices.len() + mesh.triangles.len() + mesh.boundary_edges.len();
    let mut values = Vec::with_capacity(dofs.n_dofs());
    for line in text.lines().skip(skip) {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let re: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| FemError::BadFile(format!("bad dof line {line}")))?;
        let im: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| FemError::BadFile(format!("bad dof line {line}")))?;
        values.push(Complex64::new(re, im));
    }
    if values.len() != dofs.n_dofs() {
        return Err(FemError::BadFile(format!(
            "expected {} dof lines, found {}",
            dofs.n_dofs(),
            values.len()
        )));
    }
    Ok((mesh, Field { values, excitation: Excitation::Custom, eta: 0.0 }))
}

/// Max |A − Aᵀ| over the present matrix (diagnostic for the reciprocity
/// structure; exactly zero for the mirrored assembly).
pub fn symmetry_gap(system: &AssembledSystem) -> f64 {
    let a = &system.a_present;
    let mut entries: HashMap<(usize, usize), Complex64> = HashMap::new();
    for col in 0..a.ncols() {
        for (k, r) in a.row_idx_of_col(col).enumerate() {
            entries.insert((r, col), from_faer(a.val_of_col(col)[k]));
        }
    }
    let mut gap = 0.0f64;
    for (&(r, c), &v) in &entries {
        let w = entries.get(&(c, r)).copied().unwrap_or(Complex64::ZERO);
        gap = gap.max((v - w).norm());
    }
    gap
}

/// Sparsity diagnostics: which dofs the b-weighted and radiation blocks
/// touch, reassembled independently of the combined matrix.
pub fn block_supports(mesh: &Mesh, basis: &ModeBasis) -> (HashSet<usize>, HashSet<usize>) {
    let dofs = DofMap::new(mesh);
    let mut mb: HashSet<usize> = HashSet::new();
    for t in &mesh.triangles {
        if t.region == REGION_INCLUSION {
            for d in dofs.tri_dofs(t) {
                mb.insert(d);
            }
        }
    }
    let mut dtn: HashSet<usize> = HashSet::new();
    if let Ok(ms) = port_moments(mesh, &dofs, basis) {
        for pm in &ms {
            for mk in &pm.m {
                for &(d, _) in mk {
                    dtn.insert(d);
                }
            }
        }
    }
    (mb, dtn)
}
