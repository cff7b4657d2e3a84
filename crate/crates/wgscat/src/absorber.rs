//! Perfect-absorber synthesis: a side resonator, tuned in position and
//! depth, cancels the reflection of a dissipative inclusion so that an
//! incoming wave is swallowed instead of scattered back.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::fem::{self, BcSpec, FemError};
use crate::geometry::{
    build_absorber_domain, build_full_branch_guide, build_half_guide, build_waveguide,
    quarter_wavelength, DomainKind, Geometry, GeometryError, GeometrySpec, LigamentSpec,
};
use crate::mesh::{EdgeTag, MeshError};
use crate::modes::{ModeBasis, ModesError, DEFAULT_N_TERMS};
use crate::numerics::golden_section_min;
use crate::scattering::{self, ScatteringError, SolveControls};

/// First transverse cutoff above the fundamental mode.
const LAMBDA_CUTOFF: f64 = PI * PI;

/// Port clearance past the last wall feature. The radiation condition
/// absorbs every retained transverse mode exactly, so only modes beyond
/// `n_terms` must decay across this distance; at the default fifteen terms
/// their residue is below 1e-10 already for clearances a tenth of this.
const PORT_CLEARANCE: f64 = 0.75;

#[derive(Debug, Error)]
pub enum AbsorberError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Modes(#[from] ModesError),
    #[error(transparent)]
    Scattering(#[from] ScatteringError),
    #[error("phase synthesis needs a reflection of modulus < 1, got {0}")]
    NotDissipative(f64),
    #[error("synthesis works with a single propagating mode; lambda = {lambda} carries {j_prop}")]
    Multimode { lambda: f64, j_prop: usize },
    #[error("need at least two grid points")]
    BadGrid,
    #[error("the base configuration must carry a dissipative inclusion and no wall feature")]
    BadBaseConfig,
}

fn monomode_guard(lambda: f64) -> Result<ModeBasis, AbsorberError> {
    let basis = ModeBasis::new(lambda, DEFAULT_N_TERMS)?;
    if basis.j_prop() != 1 {
        return Err(AbsorberError::Multimode { lambda, j_prop: basis.j_prop() });
    }
    Ok(basis)
}

fn wrap_2pi(x: f64) -> f64 {
    x.rem_euclid(2.0 * PI)
}

/// Crosstalk bound e^(−√(λ₁−λ)·gap) between two wall features separated by
/// `gap` along the guide: the first evanescent mode is all that couples
/// them. Non-positive gaps give 1 (no separation).
pub fn separation_bound(lambda: f64, gap: f64) -> f64 {
    if gap <= 0.0 {
        return 1.0;
    }
    (-(LAMBDA_CUTOFF - lambda).max(0.0).sqrt() * gap).exp()
}

/// Resonator offset σ ≥ 0 placing the cancellation circle through the base
/// reflection: 2√λ σ + arg S ≡ arccos(−|S|) (mod 2π), plus `k_offset`
/// whole half-periods π/√λ.
///
/// Fails when |S| ≥ 1: a lossless base configuration cannot be cancelled.
pub fn sigma_for_target(
    s_eta: Complex64,
    lambda: f64,
    k_offset: usize,
) -> Result<f64, AbsorberError> {
    let alpha = s_eta.norm();
    if !(alpha < 1.0) {
        return Err(AbsorberError::NotDissipative(alpha));
    }
    let sl = lambda.sqrt();
    let period = PI / sl;
    let raw = ((-alpha).acos() - wrap_2pi(s_eta.arg())) / (2.0 * sl);
    Ok(raw.rem_euclid(period) + k_offset as f64 * period)
}

/// Distance (mod 2π) of 2√λ σ + arg S from arccos(−|S|); zero for any σ
/// produced by [`sigma_for_target`].
pub fn sigma_phase_defect(s_eta: Complex64, lambda: f64, sigma: f64) -> f64 {
    let lhs = 2.0 * lambda.sqrt() * sigma + wrap_2pi(s_eta.arg());
    let turns = (lhs - (-s_eta.norm()).acos()) / (2.0 * PI);
    (turns - turns.round()).abs() * 2.0 * PI
}

/// Fundamental-mode reflection of a single-port domain under the given
/// boundary conditions. The two half-guide problems share this code path so
/// their coefficients carry identical discretization bias.
fn port_reflection(
    geometry: &Geometry,
    eta: f64,
    bc: BcSpec,
    controls: &SolveControls,
) -> Result<Complex64, AbsorberError> {
    let basis = ModeBasis::new(geometry.lambda, controls.n_terms)?;
    let mesh = scattering::prepare_mesh(geometry, eta, controls)?;
    let system = fem::assemble(&mesh, &basis, eta, bc)?;
    let fields = fem::solve(&system)?;
    Ok(scattering::extract_row(&basis, &system, &fields[0])[0])
}

/// Reflections of the two half problems on the branch guide cut along its
/// symmetry line.
#[derive(Debug, Clone, Copy)]
pub struct HalfGuideCoefficients {
    /// Natural (mirror-symmetric) condition on the cut.
    pub r_even: Complex64,
    /// Zero (antisymmetric) condition on the cut.
    pub r_odd: Complex64,
}

impl HalfGuideCoefficients {
    /// Reflection of the full branch guide, (r_even + r_odd)/2.
    pub fn reflection(&self) -> Complex64 {
        0.5 * (self.r_even + self.r_odd)
    }

    /// Transmission of the full branch guide, (r_even − r_odd)/2.
    pub fn transmission(&self) -> Complex64 {
        0.5 * (self.r_even - self.r_odd)
    }
}

/// Solve the two half problems on the symmetric branch guide of outer
/// height `outer_height` and return both reflections.
pub fn half_guide_coefficients(
    outer_height: f64,
    lambda: f64,
    controls: &SolveControls,
) -> Result<HalfGuideCoefficients, AbsorberError> {
    monomode_guard(lambda)?;
    let even = build_half_guide(outer_height, lambda, DomainKind::HalfGuideNeumann)?;
    let odd = build_half_guide(outer_height, lambda, DomainKind::HalfGuideMixed)?;
    Ok(HalfGuideCoefficients {
        r_even: port_reflection(&even, 0.0, BcSpec::NeumannAll, controls)?,
        r_odd: port_reflection(&odd, 0.0, BcSpec::DirichletOn(EdgeTag::SymmetryLine), controls)?,
    })
}

/// Reflection and transmission of the two-port branch guide, for the wave
/// entering through the left port.
#[derive(Debug, Clone, Copy)]
pub struct BranchGuideCoefficients {
    pub reflection: Complex64,
    pub transmission: Complex64,
}

/// Solve the full branch guide (branch centred at z = `shift`) and read off
/// the left-incidence coefficients.
pub fn full_guide_coefficients(
    outer_height: f64,
    lambda: f64,
    shift: f64,
    controls: &SolveControls,
) -> Result<BranchGuideCoefficients, AbsorberError> {
    monomode_guard(lambda)?;
    let geometry = build_full_branch_guide(outer_height, lambda, shift)?;
    let result = scattering::scattering_matrix(&geometry, 0.0, controls)?;
    let left = result.row(1, 0);
    Ok(BranchGuideCoefficients {
        reflection: result.s[(left, left)],
        transmission: result.s[(left, 0)],
    })
}

/// Result of scanning the dissipation strength for the deepest reflection
/// minimum of one configuration.
#[derive(Debug, Clone)]
pub struct EtaScan {
    /// Scanned grid as (η, |S|) pairs, in input order.
    pub grid: Vec<(f64, f64)>,
    /// Minimizing dissipation strength after refinement.
    pub eta_star: f64,
    /// Reflection modulus at `eta_star`.
    pub min_modulus: f64,
    /// False when the grid minimum sat on an endpoint, so the refined value
    /// is only a one-sided estimate.
    pub interior: bool,
}

/// Scan |S(η)| over `eta_grid` and refine an interior minimum by golden
/// section on ln η to relative tolerance 1e-3.
pub fn eta_minimum_scan(
    geometry: &Geometry,
    eta_grid: &[f64],
    controls: &SolveControls,
) -> Result<EtaScan, AbsorberError> {
    monomode_guard(geometry.lambda)?;
    if eta_grid.len() < 2 {
        return Err(AbsorberError::BadGrid);
    }
    let mut grid = Vec::with_capacity(eta_grid.len());
    for &eta in eta_grid {
        let result = scattering::scattering_matrix(geometry, eta, controls)?;
        grid.push((eta, result.s[(0, 0)].norm()));
    }
    let i_min = (0..grid.len())
        .min_by(|&i, &j| grid[i].1.total_cmp(&grid[j].1))
        .expect("non-empty grid");
    if i_min == 0 || i_min + 1 == grid.len() {
        let (eta_star, min_modulus) = grid[i_min];
        return Ok(EtaScan { grid, eta_star, min_modulus, interior: false });
    }
    let mut failure = None;
    let mut objective = |x: f64| match scattering::scattering_matrix(geometry, x.exp(), controls) {
        Ok(result) => result.s[(0, 0)].norm(),
        Err(err) => {
            failure = Some(err);
            f64::INFINITY
        }
    };
    let (x_star, f_star) = golden_section_min(
        &mut objective,
        grid[i_min - 1].0.ln(),
        grid[i_min + 1].0.ln(),
        1e-3,
    );
    if let Some(err) = failure {
        return Err(err.into());
    }
    let (eta_star, min_modulus) = if f_star <= grid[i_min].1 {
        (x_star.exp(), f_star)
    } else {
        grid[i_min]
    };
    Ok(EtaScan { grid, eta_star, min_modulus, interior: true })
}

/// A synthesized absorber: base configuration, its reflection split into
/// modulus and phase, the resonator placement solving the phase condition,
/// and (after [`l_sweep`]) the sampled reflection against resonator height.
#[derive(Debug, Clone)]
pub struct AbsorberDesign {
    /// Base configuration; the resonator is added per sampled height.
    pub spec: GeometrySpec,
    pub lambda: f64,
    pub eta: f64,
    /// Reflection of the base configuration alone.
    pub base_reflection: Complex64,
    /// Modulus of the base reflection.
    pub alpha: f64,
    /// Phase of the base reflection, wrapped to [0, 2π).
    pub beta: f64,
    /// Resonator offset solving the phase condition.
    pub sigma: f64,
    /// Half-period multiples folded into σ.
    pub k_offset: usize,
    /// Resonator distance index: window centred at 2κℓ + σ.
    pub kappa: usize,
    /// Crosstalk bound between the inclusion and the resonator window.
    pub crosstalk: f64,
    /// Sampled resonator heights with the reflection at each.
    pub samples: Vec<(f64, Complex64)>,
    /// Refined optimum (L*, |R(L*)|) once a sweep has run.
    pub best: Option<(f64, f64)>,
}

/// Crosstalk bound for a resonator window at 2κℓ + σ next to the base
/// configuration's rightmost feature.
pub fn separation_check(spec: &GeometrySpec, lambda: f64, sigma: f64, kappa: usize) -> f64 {
    let ell = quarter_wavelength(lambda);
    let window_lo = 2.0 * kappa as f64 * ell + sigma - 0.5 * ell;
    let feature_hi = spec.inclusion.as_ref().map_or(0.0, |inc| inc.shape.bbox().1);
    separation_bound(lambda, window_lo - feature_hi)
}

/// Synthesize an absorber for `spec` at dissipation η: solve the base
/// problem, derive σ from its reflection, and pick the smallest κ whose
/// crosstalk bound drops below 1e-3 unless one is imposed.
pub fn design_absorber(
    spec: &GeometrySpec,
    lambda: f64,
    eta: f64,
    k_offset: usize,
    kappa: Option<usize>,
    controls: &SolveControls,
) -> Result<AbsorberDesign, AbsorberError> {
    monomode_guard(lambda)?;
    if spec.inclusion.is_none() || spec.branch.is_some() || spec.ligament.is_some() {
        return Err(AbsorberError::BadBaseConfig);
    }
    let base = scattering::scattering_matrix(&build_waveguide(spec, lambda)?, eta, controls)?;
    let base_reflection = base.s[(0, 0)];
    let sigma = sigma_for_target(base_reflection, lambda, k_offset)?;
    let kappa = match kappa {
        Some(k) => k,
        None => (1..=64)
            .find(|&k| separation_check(spec, lambda, sigma, k) < 1e-3)
            .expect("crosstalk bound decays exponentially in kappa"),
    };
    Ok(AbsorberDesign {
        spec: spec.clone(),
        lambda,
        eta,
        base_reflection,
        alpha: base_reflection.norm(),
        beta: wrap_2pi(base_reflection.arg()),
        sigma,
        k_offset,
        kappa,
        crosstalk: separation_check(spec, lambda, sigma, kappa),
        samples: Vec::new(),
        best: None,
    })
}

/// Reflection of the designed configuration with the resonator built to
/// outer height `l`. The port is placed just past the resonator window;
/// the retained radiation terms make longer windows unnecessary.
pub fn absorber_reflection(
    design: &AbsorberDesign,
    l: f64,
    controls: &SolveControls,
) -> Result<Complex64, AbsorberError> {
    let ell = quarter_wavelength(design.lambda);
    let window_hi = 2.0 * design.kappa as f64 * ell + design.sigma + 0.5 * ell;
    let mut spec = design.spec.clone();
    spec.truncation_z = Some(window_hi + PORT_CLEARANCE);
    let geometry = build_absorber_domain(&spec, design.lambda, design.sigma, design.kappa, l)?;
    let result = scattering::scattering_matrix(&geometry, design.eta, controls)?;
    Ok(result.s[(0, 0)])
}

/// Default resonator-height grid: sixty points per half-period π/√λ across
/// two periods, starting just above the guide.
pub fn default_length_grid(lambda: f64) -> Vec<f64> {
    let period = PI / lambda.sqrt();
    let n = 120;
    (0..=n).map(|i| 1.05 + 2.0 * period * i as f64 / n as f64).collect()
}

/// Candidate neck lengths around the m-th thin-ligament resonance
/// π(m + 1/2)/√λ, spanning ±10%.
pub fn ligament_length_grid(lambda: f64, m: usize, points: usize) -> Vec<f64> {
    let center = PI * (m as f64 + 0.5) / lambda.sqrt();
    let n = points.max(2) - 1;
    (0..=n).map(|i| center * (0.9 + 0.2 * i as f64 / n as f64)).collect()
}

/// Variant domain where the lateral feature is a dead-end neck of width
/// `neck_width` and length `neck_length` at the designed position, instead
/// of the wide-open resonator.
pub fn build_ligament_absorber(
    design: &AbsorberDesign,
    neck_width: f64,
    neck_length: f64,
) -> Result<Geometry, GeometryError> {
    let ell = quarter_wavelength(design.lambda);
    let center = 2.0 * design.kappa as f64 * ell + design.sigma;
    let mut spec = design.spec.clone();
    spec.truncation_z = Some(center + 0.5 * ell + PORT_CLEARANCE);
    spec.ligament = Some(LigamentSpec {
        attach_z0: center - 0.5 * neck_width,
        width: neck_width,
        length: neck_length,
    });
    build_waveguide(&spec, design.lambda)
}

/// Sample the reflection over `grid` resonator heights, then refine the
/// best height by golden section to ΔL = 1e-4. Fills `design.samples` and
/// `design.best`.
pub fn l_sweep(
    design: &mut AbsorberDesign,
    grid: &[f64],
    controls: &SolveControls,
) -> Result<(), AbsorberError> {
    if grid.len() < 2 {
        return Err(AbsorberError::BadGrid);
    }
    let mut samples = Vec::with_capacity(grid.len());
    for &l in grid {
        samples.push((l, absorber_reflection(design, l, controls)?));
    }
    let i_min = (0..samples.len())
        .min_by(|&i, &j| samples[i].1.norm().total_cmp(&samples[j].1.norm()))
        .expect("non-empty grid");
    let lo = samples[i_min.saturating_sub(1)].0;
    let hi = samples[(i_min + 1).min(samples.len() - 1)].0;
    let mut failure = None;
    let mut objective = |l: f64| match absorber_reflection(design, l, controls) {
        Ok(r) => r.norm(),
        Err(err) => {
            failure = Some(err);
            f64::INFINITY
        }
    };
    let (l_star, f_star) = golden_section_min(&mut objective, lo, hi, 1e-4);
    if let Some(err) = failure {
        return Err(err);
    }
    design.best = Some(if f_star <= samples[i_min].1.norm() {
        (l_star, f_star)
    } else {
        (samples[i_min].0, samples[i_min].1.norm())
    });
    design.samples = samples;
    Ok(())
}

/// Width of the reflection dip at the given modulus `level`, by linear
/// interpolation between sweep samples on both sides of the minimum.
/// `None` when the dip never drops below or never rises back above level.
pub fn dip_width(samples: &[(f64, Complex64)], level: f64) -> Option<f64> {
    let mods: Vec<f64> = samples.iter().map(|&(_, r)| r.norm()).collect();
    let i_min = (0..mods.len()).min_by(|&i, &j| mods[i].total_cmp(&mods[j]))?;
    if mods[i_min] >= level {
        return None;
    }
    let cross = |a: usize, b: usize| {
        let t = (mods[a] - level) / (mods[a] - mods[b]);
        samples[a].0 + t * (samples[b].0 - samples[a].0)
    };
    let left = (0..i_min).rev().find(|&j| mods[j] >= level).map(|j| cross(j, j + 1))?;
    let right = (i_min + 1..mods.len()).find(|&j| mods[j] >= level).map(|j| cross(j, j - 1))?;
    Some(right - left)
}
