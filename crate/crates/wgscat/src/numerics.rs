//! Small numerical utilities shared across the crate: Gauss quadrature,
//! adaptive integration, log-log slope fits, golden-section minimisation and
//! a few dense complex-matrix helpers built on nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Nodes and weights of the n-point Gauss-Legendre rule on (-1, 1).
///
/// Newton iteration on the Legendre recurrence; accurate to machine precision
/// for the orders used here (n ≤ a few hundred).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            if n == 1 {
                p1 = x;
            }
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            pp = n as f64 * (x * p - p0) / (x * x - 1.0);
            if n == 1 {
                pp = 1.0;
            }
            let dx = p / pp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        // Midpoint node of odd rules is exactly zero.
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// The n-point Gauss-Legendre rule mapped onto (a, b), as (node, weight) pairs.
pub fn gauss_on(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    x.iter()
        .zip(&w)
        .map(|(&xi, &wi)| (mid + half * xi, half * wi))
        .collect()
}

/// Adaptive Simpson integration of a complex-valued integrand.
///
/// `tol` is an absolute tolerance on the whole interval; subdivision follows
/// the usual Richardson estimate. Handles sharp boundary layers by recursing
/// to `max_depth`.
pub fn integrate_adaptive(
    f: &dyn Fn(f64) -> Complex64,
    a: f64,
    b: f64,
    tol: f64,
) -> Complex64 {
    fn simpson(fa: Complex64, fm: Complex64, fb: Complex64, h: f64) -> Complex64 {
        (fa + 4.0 * fm + fb) * (h / 6.0)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> Complex64,
        a: f64,
        b: f64,
        fa: Complex64,
        fm: Complex64,
        fb: Complex64,
        whole: Complex64,
        tol: f64,
        depth: u32,
    ) -> Complex64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let err = (left + right - whole).norm();
        if depth == 0 || err < 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Least-squares slope and intercept of ln(y) against ln(x).
///
/// Used for convergence-rate fits; panics if fewer than two points or any
/// non-positive value is supplied.
pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert!(xs.len() == ys.len() && xs.len() >= 2, "need at least two samples");
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            assert!(x > 0.0 && y > 0.0, "log-log fit needs positive data");
            (x.ln(), y.ln())
        })
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    (slope, intercept)
}

/// Golden-section search for the minimum of a unimodal function on [a, b].
///
/// Returns (argmin, min). `tol` is the absolute bracket width at which the
/// search stops.
pub fn golden_section_min(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (a, b);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Frobenius norm of a complex matrix.
pub fn frobenius(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// ‖M − Mᵀ‖_F, the defect of (non-conjugated) symmetry.
pub fn symmetry_defect(m: &DMatrix<Complex64>) -> f64 {
    frobenius(&(m - m.transpose()))
}

/// ‖M − M̄ᵀ‖_F, the defect of Hermitian symmetry.
pub fn hermitian_defect(m: &DMatrix<Complex64>) -> f64 {
    frobenius(&(m - m.adjoint()))
}

/// ‖M M̄ᵀ − I‖_F, the defect of unitarity.
pub fn unitarity_defect(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    frobenius(&(m * m.adjoint() - DMatrix::<Complex64>::identity(n, n)))
}

/// Real 2n×2n representation [[X, −Y], [Y, X]] of the complex matrix X + iY.
fn real_embedding(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut r = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = m[(i, j)];
            r[(i, j)] = z.re;
            r[(i, j + n)] = -z.im;
            r[(i + n, j)] = z.im;
            r[(i + n, j + n)] = z.re;
        }
    }
    r
}

/// Eigenvalues of a general complex n×n matrix.
///
/// Computed from the real Schur form of the 2n×2n real embedding, whose
/// spectrum is that of M together with its conjugate; conjugate partners are
/// paired off by sorting so each eigenvalue of M is reported once.
pub fn complex_eigenvalues(m: &DMatrix<Complex64>) -> Vec<Complex64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "eigenvalues need a square matrix");
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![m[(0, 0)]];
    }
    let embedded = real_embedding(m);
    let mut eig: Vec<Complex64> = embedded.complex_eigenvalues().iter().copied().collect();
    // The 2n values come in pairs {z, conj(z)} up to roundoff. Sort so that the
    // partners are adjacent, then keep the member with non-negative imaginary
    // part from each pair (for M's actual eigenvalue the sign is arbitrary,
    // but moduli — the quantity consumed downstream — are unaffected).
    eig.sort_by(|a, b| {
        (a.re, a.im.abs(), a.im)
            .partial_cmp(&(b.re, b.im.abs(), b.im))
            .unwrap()
    });
    (0..n).map(|k| eig[2 * k]).collect()
}

/// Eigenvalues of a Hermitian matrix (real, ascending).
pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let n = m.nrows();
    if n == 0 {
        return Vec::new();
    }
    let e = real_embedding(m).symmetric_eigen();
    let mut vals: Vec<f64> = e.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Embedding doubles each eigenvalue; keep one representative per pair.
    (0..n).map(|k| 0.5 * (vals[2 * k] + vals[2 * k + 1])).collect()
}

/// Solve M x = b for a small dense complex system (LU with partial pivoting).
pub fn dense_solve(m: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    m.clone().lu().solve(b)
}

/// ∫₀^d exp(c t) dt for complex c, stable for small |c d|.
pub fn int_exp(c: Complex64, d: f64) -> Complex64 {
    if (c * d).norm() < 1e-8 {
        // Series: d (1 + cd/2 + (cd)²/6 + (cd)³/24)
        let cd = c * d;
        d * (Complex64::new(1.0, 0.0) + cd * 0.5 + cd * cd / 6.0 + cd * cd * cd / 24.0)
    } else {
        ((c * d).exp() - 1.0) / c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_high_degree_polynomials_exactly() {
        // n-point rule is exact through degree 2n-1.
        for n in [2usize, 5, 16, 64] {
            let (x, w) = gauss_legendre(n);
            let deg = 2 * n - 1;
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            let num: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(deg as i32)).sum();
            assert!((num - exact).abs() < 1e-13, "n={n} deg={deg}: {num} vs {exact}");
            let total: f64 = w.iter().sum();
            assert_relative_eq!(total, 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn gauss_legendre_handles_oscillatory_integrands() {
        // ∫₀¹ cos(14πy)² dy = 1/2 with a 64-point rule.
        let pts = gauss_on(0.0, 1.0, 64);
        let s: f64 = pts
            .iter()
            .map(|&(y, w)| w * (14.0 * std::f64::consts::PI * y).cos().powi(2))
            .sum();
        assert_relative_eq!(s, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn adaptive_simpson_resolves_boundary_layer() {
        // ∫₀¹ e^{-200 t} dt = (1 - e^{-200})/200
        let f = |t: f64| Complex64::new((-200.0 * t).exp(), 0.0);
        let v = integrate_adaptive(&f, 0.0, 1.0, 1e-13);
        assert_relative_eq!(v.re, (1.0 - (-200.0f64).exp()) / 200.0, epsilon = 1e-11);
        assert!(v.im.abs() < 1e-15);
    }

    #[test]
    fn log_log_fit_recovers_power_law() {
        let xs: Vec<f64> = (1..=6).map(|k| 10f64.powi(-k)).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 3.7 * x.powf(1.5)).collect();
        let (slope, intercept) = log_log_fit(&xs, &ys);
        assert_relative_eq!(slope, 1.5, epsilon = 1e-12);
        assert_relative_eq!(intercept.exp(), 3.7, epsilon = 1e-10);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let mut f = |x: f64| (x - 0.37).powi(2) + 2.0;
        let (x, fx) = golden_section_min(&mut f, -1.0, 2.0, 1e-10);
        // Localisation of a smooth minimum saturates at sqrt(eps).
        assert_relative_eq!(x, 0.37, epsilon = 1e-7);
        assert_relative_eq!(fx, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn complex_eigenvalues_match_known_spectrum() {
        // diag(i, -2, 1+i) conjugated by a random-ish invertible map.
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(0.0, 1.0),
            Complex64::new(-2.0, 0.0),
            Complex64::new(1.0, 1.0),
        ]));
        let p = DMatrix::from_row_slice(
            3,
            3,
            &[
                Complex64::new(1.0, 0.0),
                Complex64::new(0.5, 0.2),
                Complex64::new(0.0, -0.3),
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.7, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
            ],
        );
        let pinv = p.clone().try_inverse().unwrap();
        let m = &p * d * pinv;
        let mut moduli: Vec<f64> = complex_eigenvalues(&m).iter().map(|z| z.norm()).collect();
        moduli.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expect = [1.0, 2.0f64.sqrt(), 2.0];
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (m, e) in moduli.iter().zip(expect) {
            assert_relative_eq!(*m, e, epsilon = 1e-10);
        }
    }

    #[test]
    fn hermitian_eigenvalues_of_gram_matrix_are_nonnegative() {
        let a = DMatrix::from_row_slice(
            2,
            3,
            &[
                Complex64::new(1.0, 0.5),
                Complex64::new(0.0, -1.0),
                Complex64::new(2.0, 0.0),
                Complex64::new(0.3, 0.0),
                Complex64::new(1.0, 1.0),
                Complex64::new(0.0, 0.7),
            ],
        );
        let g = &a * a.adjoint();
        let eig = hermitian_eigenvalues(&g);
        assert_eq!(eig.len(), 2);
        assert!(eig.iter().all(|&v| v >= -1e-12));
        let trace: f64 = g.diagonal().iter().map(|z| z.re).sum();
        assert_relative_eq!(eig.iter().sum::<f64>(), trace, epsilon = 1e-10);
    }

    #[test]
    fn int_exp_matches_quadrature_near_zero_exponent() {
        for c in [Complex64::new(1e-12, 3e-13), Complex64::new(-2.0, 150.0)] {
            let d = 0.7;
            let direct = integrate_adaptive(&|t| (c * t).exp(), 0.0, d, 1e-13);
            let closed = int_exp(c, d);
            assert!((direct - closed).norm() < 1e-10);
        }
    }
}
