//! Acceptance gate: thirteen numbered end-to-end criteria covering mode
//! algebra, oracle equivalence, conservation identities, dissipation-rate
//! asymptotics, and the absorber synthesis pipeline. One test per criterion;
//! each prints a `criterion N: PASS`/`FAIL` line with the measured values and
//! pins its tolerances inline.

use std::f64::consts::{PI, SQRT_2};
use std::sync::LazyLock;

use num_complex::Complex64;
use wgscat::absorber::{
    absorber_reflection, design_absorber, dip_width, eta_minimum_scan, full_guide_coefficients,
    half_guide_coefficients, l_sweep,
};
use wgscat::asymptotics::{
    correction_identity_defect, large_eta_model, large_eta_rates, relative_interior_error,
    small_eta_model, small_eta_rate,
};
use wgscat::geometry::{
    build_waveguide, BProfile, Geometry, GeometrySpec, Inclusion, Point, Shape,
};
use wgscat::modes::{pairing_by_quadrature, ModeBasis, Sign};
use wgscat::scattering::{d_eta_check, scattering_matrix, SolveControls};
use wgscat::slab1d::{slab_reflection, SlabSpec};

/// (0.8π)²: one propagating mode.
const LAMBDA_MONOMODE: f64 = 6.316_546_816_697_189;

/// (4.8π)²: five propagating modes.
fn lambda_five_mode() -> f64 {
    (4.8 * PI).powi(2)
}

/// Collects named checks for one criterion and reports a single verdict.
struct Criterion {
    number: usize,
    failures: Vec<String>,
}

impl Criterion {
    fn new(number: usize) -> Self {
        Criterion { number, failures: Vec::new() }
    }

    fn check(&mut self, label: &str, ok: bool, detail: impl std::fmt::Display) {
        let mark = if ok { "ok" } else { "FAIL" };
        println!("  criterion {:>2} · {label}: {detail} [{mark}]", self.number);
        if !ok {
            self.failures.push(format!("{label}: {detail}"));
        }
    }

    fn finish(self) {
        if self.failures.is_empty() {
            println!("criterion {}: PASS", self.number);
        } else {
            println!("criterion {}: FAIL", self.number);
            panic!("criterion {} failed\n  {}", self.number, self.failures.join("\n  "));
        }
    }
}

fn controls(target_h: f64, layers_per_skin: usize, min_h: Option<f64>) -> SolveControls {
    SolveControls { target_h, layers_per_skin, min_h, n_terms: 15 }
}

fn disk_spec(center_z: f64, radius: f64, truncation_z: f64) -> GeometrySpec {
    GeometrySpec {
        truncation_z: Some(truncation_z),
        inclusion: Some(Inclusion {
            shape: Shape::Disk { center: Point::new(center_z, 0.5), radius },
            b: BProfile::Constant { value: 1.0 },
        }),
        ..Default::default()
    }
}

fn disk_geometry(lambda: f64, radius: f64) -> Geometry {
    build_waveguide(&disk_spec(1.5, radius, 3.0), lambda).expect("valid disk domain")
}

/// Full-height unit slab on [1, 2], the configuration with a closed-form
/// transfer-matrix reflection.
fn slab_geometry() -> Geometry {
    let spec = GeometrySpec {
        truncation_z: Some(2.5),
        inclusion: Some(Inclusion {
            shape: Shape::Rect { corner: Point::new(1.0, 0.0), width: 1.0, height: 1.0 },
            b: BProfile::Constant { value: 1.0 },
        }),
        ..Default::default()
    };
    build_waveguide(&spec, LAMBDA_MONOMODE).expect("valid slab domain")
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

#[test]
fn criterion_01_modal_pairing_identities() {
    let mut c = Criterion::new(1);
    let basis = ModeBasis::new(lambda_five_mode(), 8).expect("away from cutoffs");
    c.check("five propagating modes", basis.j_prop() == 5, basis.j_prop());

    let signs = [Sign::Plus, Sign::Minus];
    let mut worst_self = 0.0f64;
    let mut worst_cross = 0.0f64;
    for j in 0..5 {
        for k in 0..5 {
            for s in signs {
                for t in signs {
                    for z in [0.0, 0.37] {
                        let q = pairing_by_quadrature(&basis, (j, s), (k, t), z, 160);
                        if j == k && s == t {
                            let want = Complex64::new(0.0, s.factor());
                            worst_self = worst_self.max((q - want).norm());
                        } else {
                            worst_cross = worst_cross.max(q.norm());
                        }
                    }
                }
            }
        }
    }
    c.check(
        "pairing of a wave with itself is ±i",
        worst_self <= 1e-10,
        format!("worst deviation {worst_self:.3e} (tolerance 1e-10)"),
    );
    c.check(
        "pairing of distinct waves vanishes",
        worst_cross <= 1e-10,
        format!("worst magnitude {worst_cross:.3e} (tolerance 1e-10)"),
    );
    c.finish();
}

#[test]
fn criterion_02_slab_reflection_matches_the_transfer_matrix() {
    let mut c = Criterion::new(2);
    let g = slab_geometry();
    let ctr = controls(0.02, 4, None);
    let spec = SlabSpec::new(LAMBDA_MONOMODE, 1.0, 2.0, 1.0).expect("valid slab");
    for eta in [0.0, 0.5, 5.0, 50.0, 5e3] {
        let fem = scattering_matrix(&g, eta, &ctr).expect("slab solve").s[(0, 0)];
        let oracle = slab_reflection(spec, eta).expect("transfer matrix");
        let err = (fem - oracle).norm();
        c.check(
            &format!("|ΔR| at η = {eta}"),
            err <= 1e-3,
            format!("{err:.3e} (tolerance 1e-3)"),
        );
    }
    c.finish();
}

#[test]
fn criterion_03_lossless_scattering_is_unitary_under_refinement() {
    let mut c = Criterion::new(3);
    let mono = scattering_matrix(&disk_geometry(LAMBDA_MONOMODE, 0.3), 0.0, &controls(0.05, 0, None))
        .expect("monomode solve");
    c.check(
        "monomode unitarity defect",
        mono.energy_residual <= 1e-4,
        format!("{:.3e} (tolerance 1e-4)", mono.energy_residual),
    );

    let g = disk_geometry(lambda_five_mode(), 0.3);
    let defects: Vec<f64> = [0.08, 0.08 / SQRT_2, 0.04]
        .iter()
        .map(|&h| {
            scattering_matrix(&g, 0.0, &controls(h, 0, None))
                .expect("five-mode solve")
                .energy_residual
        })
        .collect();
    for (i, d) in defects.iter().enumerate() {
        c.check(
            &format!("five-mode unitarity defect, refinement {i}"),
            *d <= 1e-3,
            format!("{d:.3e} (tolerance 1e-3)"),
        );
    }
    // The radiation condition, the load, and the extraction all share one set
    // of moment vectors, which makes the extracted matrix unitary to rounding
    // on every mesh. Refinement therefore moves the defect only within the
    // rounding floor; require that it never climbs out of it.
    let floor = 1e-12;
    c.check(
        "defect does not grow past the rounding floor under two refinements",
        defects[2] <= defects[0].max(floor),
        format!("{:.3e} → {:.3e} → {:.3e}", defects[0], defects[1], defects[2]),
    );
    c.finish();
}

#[test]
fn criterion_04_energy_identity_and_reciprocity() {
    let mut c = Criterion::new(4);
    let g = disk_geometry(LAMBDA_MONOMODE, 0.3);
    let ctr = controls(0.05, 3, None);
    for eta in [0.1, 1.0, 10.0, 100.0] {
        let r = scattering_matrix(&g, eta, &ctr).expect("disk solve");
        c.check(
            &format!("energy residual at η = {eta}"),
            r.energy_residual <= 1e-3,
            format!("{:.3e} (tolerance 1e-3)", r.energy_residual),
        );
    }
    let multi = scattering_matrix(&disk_geometry(lambda_five_mode(), 0.3), 1.0, &ctr)
        .expect("five-mode solve");
    c.check(
        "five-mode energy residual at η = 1",
        multi.energy_residual <= 1e-3,
        format!("{:.3e} (tolerance 1e-3)", multi.energy_residual),
    );
    c.check(
        "five-mode reciprocity defect",
        multi.symmetry_defect <= 1e-8,
        format!("{:.3e} (tolerance 1e-8)", multi.symmetry_defect),
    );
    c.finish();
}

#[test]
fn criterion_05_weak_dissipation_rate() {
    let mut c = Criterion::new(5);
    let g = disk_geometry(LAMBDA_MONOMODE, 0.3);
    // One ungraded mesh for the base solve and every sample, so the defect
    // against the first-order prediction isolates the quadratic remainder.
    let ctr = controls(0.06, 0, None);
    let model = small_eta_model(&g, &ctr).expect("lossless base solve");
    let rate =
        small_eta_rate(&g, &model, &logspace(1e-3, 1e-1, 5), &ctr).expect("weak-dissipation fit");
    c.check(
        "first-order defect slope over η ∈ [1e-3, 1e-1]",
        (1.7..=2.3).contains(&rate.slope),
        format!("{:.3} (want 2.0 ± 0.3); defects {:.3e} … {:.3e}",
            rate.slope, rate.defects[0], rate.defects[4]),
    );
    c.finish();
}

/// Strong-dissipation study shared by criteria 6 and 7: one sound-soft model
/// and five layer-graded direct solves over η ∈ [1e3, 1e6] on a small disk
/// (the interface band at η = 1e6 alone costs ~400k unknowns).
struct StrongDissipationStudy {
    slope0: f64,
    slope1: f64,
    slope_interior: f64,
    identity_defect: f64,
    defect0: Vec<f64>,
    defect1: Vec<f64>,
    interior_l2: Vec<f64>,
}

static STRONG: LazyLock<StrongDissipationStudy> = LazyLock::new(|| {
    let g = disk_geometry(LAMBDA_MONOMODE, 0.1);
    let ctr = controls(0.03, 3, Some(1.4e-4));
    let model = large_eta_model(&g, &ctr).expect("sound-soft model");
    let rates =
        large_eta_rates(&g, &model, &logspace(1e3, 1e6, 5), &ctr).expect("layer-graded solves");
    StrongDissipationStudy {
        slope0: rates.slope0,
        slope1: rates.slope1,
        slope_interior: rates.slope_interior,
        identity_defect: correction_identity_defect(&model),
        defect0: rates.defect0,
        defect1: rates.defect1,
        interior_l2: rates.interior_l2,
    }
});

#[test]
fn criterion_06_strong_dissipation_rates_and_correction_identity() {
    let mut c = Criterion::new(6);
    let s = &*STRONG;
    c.check(
        "one-term defect slope over η ∈ [1e3, 1e6]",
        (-0.6..=-0.4).contains(&s.slope0),
        format!("{:.3} (want −0.5 ± 0.1); defects {:.3e} … {:.3e}",
            s.slope0, s.defect0[0], s.defect0[4]),
    );
    c.check(
        "two-term defect slope",
        s.slope1 <= -0.7,
        format!("{:.3} (want ≤ −0.7); defects {:.3e} … {:.3e}",
            s.slope1, s.defect1[0], s.defect1[4]),
    );
    c.check(
        "correction identity defect",
        s.identity_defect <= 1e-10,
        format!("{:.3e} (tolerance 1e-10)", s.identity_defect),
    );
    c.finish();
}

#[test]
fn criterion_07_interior_field_decay() {
    let mut c = Criterion::new(7);
    let s = &*STRONG;
    c.check(
        "interior-norm slope over η ∈ [1e3, 1e6]",
        (-0.9..=-0.6).contains(&s.slope_interior),
        format!("{:.3} (want −0.75 ± 0.15); norms {:.3e} … {:.3e}",
            s.slope_interior, s.interior_l2[0], s.interior_l2[4]),
    );
    c.finish();
}

#[test]
fn criterion_08_skin_effect_reconstruction() {
    let mut c = Criterion::new(8);
    let g = slab_geometry();
    let ctr = controls(0.03, 3, None);
    let model = large_eta_model(&g, &ctr).expect("sound-soft model");
    let eta = 1e3;
    let direct = scattering_matrix(&g, eta, &ctr).expect("layer-resolved solve");
    let recon = model.reconstruct_interior(0, eta, &direct.system.dof_map);
    let rel = relative_interior_error(&direct, 0, &recon);
    c.check(
        "relative interior mismatch at η = 1e3",
        rel <= 0.3,
        format!("{rel:.3} (tolerance 0.3)"),
    );
    c.finish();
}

#[test]
fn criterion_09_monomode_limits_and_interior_minimum() {
    let mut c = Criterion::new(9);
    let g = disk_geometry(LAMBDA_MONOMODE, 0.3);
    let flat = controls(0.06, 0, None);
    for eta in [1e-6, 1e8] {
        let m = scattering_matrix(&g, eta, &flat).expect("endpoint solve").s[(0, 0)].norm();
        c.check(
            &format!("|S| at η = {eta:e}"),
            m >= 0.99,
            format!("{m:.6} (want ≥ 0.99)"),
        );
    }
    let scan = eta_minimum_scan(&g, &[0.25, 1.0, 4.0, 16.0, 64.0], &controls(0.08, 4, None))
        .expect("dissipation scan");
    c.check("minimum is interior to the scan grid", scan.interior, format!("η⋆ = {:.3}", scan.eta_star));
    c.check(
        "interior minimum dips below 1 − 1e-2",
        scan.min_modulus < 0.99,
        format!("min |S| = {:.4} at η⋆ = {:.3}", scan.min_modulus, scan.eta_star),
    );
    c.finish();
}

#[test]
fn criterion_10_dissipation_derivative_identity() {
    let mut c = Criterion::new(10);
    let chk = d_eta_check(&disk_geometry(LAMBDA_MONOMODE, 0.3), 1.0, 1e-3, &controls(0.05, 3, None))
        .expect("derivative check");
    c.check(
        "finite difference vs volume formula at η = 1",
        chk.rel_err <= 1e-2,
        format!("relative error {:.3e} (tolerance 1e-2)", chk.rel_err),
    );
    c.finish();
}

#[test]
fn criterion_11_half_guide_splitting_and_shift_law() {
    let mut c = Criterion::new(11);
    let lambda = LAMBDA_MONOMODE;
    let ctr = controls(0.06, 0, None);
    let heights = [1.4, 1.8, 2.2];
    let mut splits = Vec::new();
    for &l in &heights {
        let hg = half_guide_coefficients(l, lambda, &ctr).expect("half-guide solves");
        c.check(
            &format!("mixed half-problem reflection at L = {l}"),
            (hg.r_odd + Complex64::ONE).norm() <= 1e-3,
            format!("|r + 1| = {:.3e} (tolerance 1e-3)", (hg.r_odd + Complex64::ONE).norm()),
        );
        let circle = ((hg.reflection() + Complex64::new(0.5, 0.0)).norm() - 0.5).abs();
        c.check(
            &format!("reflection lies on the −1/2 circle at L = {l}"),
            circle <= 2e-3,
            format!("deviation {circle:.3e} (tolerance 2e-3)"),
        );
        splits.push(hg);
    }

    let hg = &splits[1];
    let full = full_guide_coefficients(heights[1], lambda, 0.0, &ctr).expect("branch-guide solve");
    c.check(
        "full-guide reflection matches the half-problem split",
        (full.reflection - hg.reflection()).norm() <= 1e-3,
        format!("{:.3e} (tolerance 1e-3)", (full.reflection - hg.reflection()).norm()),
    );
    c.check(
        "full-guide transmission matches the half-problem split",
        (full.transmission - hg.transmission()).norm() <= 1e-3,
        format!("{:.3e} (tolerance 1e-3)", (full.transmission - hg.transmission()).norm()),
    );

    let sigma = 0.3;
    let shifted = full_guide_coefficients(heights[1], lambda, sigma, &ctr).expect("shifted solve");
    let rotated = full.reflection * Complex64::from_polar(1.0, 2.0 * lambda.sqrt() * sigma);
    c.check(
        "reflection obeys the shift law",
        (shifted.reflection - rotated).norm() <= 1e-3,
        format!("{:.3e} (tolerance 1e-3)", (shifted.reflection - rotated).norm()),
    );
    c.finish();
}

#[test]
fn criterion_12_absorber_synthesis_and_dip_narrowing() {
    let mut c = Criterion::new(12);
    let spec = disk_spec(0.6, 0.3, 2.0);
    let ctr = controls(0.05, 3, None);
    let period = PI / LAMBDA_MONOMODE.sqrt();
    let coarse: Vec<f64> =
        (0..=192).map(|i| 1.05 + 2.0 * period * i as f64 / 192.0).collect();

    let mut widths = Vec::new();
    for eta in [10.0, 1000.0] {
        let mut design =
            design_absorber(&spec, LAMBDA_MONOMODE, eta, 0, None, &ctr).expect("synthesis");
        l_sweep(&mut design, &coarse, &ctr).expect("resonator-height sweep");
        let (l_star, best) = design.best.expect("sweep records an optimum");
        c.check(
            &format!("cancellation depth at η = {eta}"),
            best < 0.05,
            format!("|R| = {best:.2e} at L = {l_star:.4} (tolerance 0.05)"),
        );

        // Re-sample finely around the optimum: at η = 1000 the dip is far
        // narrower than the coarse spacing. Width is read at half the
        // off-resonance plateau α.
        let level = design.alpha / 2.0;
        let half_window = match dip_width(&design.samples, level) {
            Some(w) => (1.5 * w).clamp(0.04, 0.6),
            None => 0.04,
        };
        let lo = (l_star - half_window).max(1.02);
        let hi = l_star + half_window;
        let fine: Vec<(f64, Complex64)> = (0..=48)
            .map(|i| {
                let l = lo + (hi - lo) * i as f64 / 48.0;
                (l, absorber_reflection(&design, l, &ctr).expect("local sample"))
            })
            .collect();
        let width = dip_width(&fine, level);
        c.check(
            &format!("dip width measurable at η = {eta}"),
            width.is_some(),
            format!("{width:?} at level {level:.3}"),
        );
        widths.push(width.unwrap_or(f64::INFINITY));
    }
    c.check(
        "stronger dissipation narrows the dip",
        widths[1] < widths[0],
        format!("width {:.4} at η = 1000 vs {:.4} at η = 10", widths[1], widths[0]),
    );
    c.finish();
}

#[test]
fn criterion_13_eigenvalue_moduli_stay_contractive() {
    let mut c = Criterion::new(13);
    let g = disk_geometry(lambda_five_mode(), 0.3);
    let flat = controls(0.04, 0, None);
    let graded = controls(0.04, 3, None);
    let mut at_five = 1.0;
    // Grading targets the skin depth, which at the extreme strengths is far
    // outside (η = 1e-10) or far below (η = 1e10) any feasible edge length;
    // the energy identity bounds the spectrum on any mesh, so those two run
    // ungraded.
    for (eta, ctr) in [(1e-10, &flat), (0.1, &graded), (5.0, &graded), (1e10, &flat)] {
        let r = scattering_matrix(&g, eta, ctr).expect("five-mode solve");
        let moduli = r.eigenvalue_moduli();
        c.check(
            &format!("eigenvalue moduli at η = {eta:e}"),
            moduli[0] <= 1.0 + 1e-6,
            format!("max {:.9} (tolerance 1 + 1e-6)", moduli[0]),
        );
        if eta == 5.0 {
            at_five = moduli[0];
        }
    }
    c.check(
        "strict contraction at η = 5",
        at_five < 0.999,
        format!("max modulus {at_five:.6} (want < 0.999)"),
    );
    c.finish();
}
