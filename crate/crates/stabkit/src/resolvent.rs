//! Harmonic-forcing response and stability radii.
//!
//! The peak of the resolvent norm `||(iw - A)^-1||` over real frequencies w
//! determines both the harmonic dynamical stability (its inverse) and the
//! complex stability radius: the smallest constant matrix perturbation able
//! to destabilize `A` is the rank-one `P = u w* / v` built from the resonant
//! forcing/response pair, with `||P|| = 1/v`.
//!
//! The frequency sweep works on the dual quantity
//! `f(w) = sigma_min(iw I - A) = 1 / ||(iw - A)^-1||`: a coarse log+linear
//! grid seeded with every eigenvalue imaginary part, golden-section
//! refinement of the local minima, and a global certificate via level-set
//! bisection on the Hamiltonian pencil `[[A, g I], [-g I, -A^t]]`, which has
//! an imaginary-axis eigenvalue exactly when some singular-value curve of
//! `iw I - A` crosses the level `g`. If the bisection finds a lower level
//! than the grid, the imaginary parts of those eigenvalues are used to
//! re-seed the local search.
//!
//! The real stability radius uses the two-parameter level-set formula
//! (supremum over w, infimum over g in (0,1] of the second singular value of
//! a real 2n x 2n block matrix), with an explicit real rank-two certificate
//! reconstructed from the optimizer's singular vectors and cross-checked by
//! multi-start direct search over eigenvector placements.

use nalgebra::{DMatrix, DVector, SVD};
use num_complex::Complex64;

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg::{
    eigenvalues, spectral_abscissa, spectral_norm, spectral_norm_real, CMatrix, CVector,
    RealMatrix,
};

/// Peak response to harmonic forcing.
#[derive(Debug, Clone)]
pub struct ResonanceResult {
    /// The supremum of the resolvent norm over real frequencies.
    pub value: f64,
    /// Harmonic dynamical stability, `1 / value`.
    pub sdyn_h: f64,
    /// Non-negative frequency attaining the supremum.
    pub omega_star: f64,
    /// Unit forcing direction.
    pub direction_u: CVector,
    /// Unit response direction, `(iw* - A)^-1 u = value * w`.
    pub direction_w: CVector,
}

/// A destabilizing perturbation, real or complex depending on the measure.
#[derive(Debug, Clone)]
pub enum Perturbation {
    Real(DMatrix<f64>),
    Complex(CMatrix),
}

impl Perturbation {
    pub fn norm(&self) -> f64 {
        match self {
            Perturbation::Real(p) => spectral_norm_real(p),
            Perturbation::Complex(p) => spectral_norm(p),
        }
    }

    /// `A + P` as a complex matrix.
    pub fn added_to(&self, a: &RealMatrix) -> CMatrix {
        match self {
            Perturbation::Real(p) => (a.as_dmatrix() + p).map(|x| Complex64::new(x, 0.0)),
            Perturbation::Complex(p) => a.to_complex() + p,
        }
    }
}

/// A stability radius with its boundary certificate.
#[derive(Debug, Clone)]
pub struct RadiusResult {
    pub radius: f64,
    /// Perturbation with `||P|| = radius` and `alpha(A + P) = 0` within tol.
    pub certificate: Perturbation,
    /// Frequency w with `iw` in the spectrum of `A + P`.
    pub boundary_frequency: f64,
    /// False when the two independent estimators disagree beyond 1e-4.
    pub converged: bool,
    /// Absolute gap between the level-set estimate and the certificate norm.
    pub estimator_gap: f64,
}

/// Checks stability and returns the spectral abscissa. Matrices within the
/// margin of the boundary are refused: the measures diverge there.
pub(crate) fn ensure_stable(
    a: &RealMatrix,
    tol: &Tolerances,
    measure: &'static str,
) -> Result<f64> {
    let alpha = spectral_abscissa(a)?;
    let margin = tol.stability_margin * a.as_dmatrix().norm().max(1.0);
    if alpha >= margin {
        return Err(Error::Unstable { measure, alpha });
    }
    if alpha > -margin {
        return Err(Error::MarginallyStable {
            alpha,
            tol: tol.stability_margin,
        });
    }
    Ok(alpha)
}

/// `iw I - A` as a complex matrix.
fn shifted(a: &RealMatrix, omega: f64) -> CMatrix {
    let n = a.n();
    CMatrix::identity(n, n) * Complex64::new(0.0, omega) - a.to_complex()
}

fn sorted_singular_values(m: CMatrix) -> Vec<f64> {
    let mut sv: Vec<f64> = m.singular_values().iter().cloned().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sv
}

fn sorted_singular_values_real(m: DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.singular_values().iter().cloned().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sv
}

/// `sigma_min(iw I - A)`, the reciprocal resolvent norm.
fn min_gain(a: &RealMatrix, omega: f64) -> f64 {
    *sorted_singular_values(shifted(a, omega)).last().unwrap()
}

/// Spectral norm of `(iw I - A)^-1`, by explicit inversion.
pub fn resolvent_norm(a: &RealMatrix, omega: f64, tol: &Tolerances) -> Result<f64> {
    let m = shifted(a, omega);
    let scale = a.as_dmatrix().norm().max(1.0);
    let sv = sorted_singular_values(m.clone());
    if *sv.last().unwrap() <= tol.rel * scale * 1e-3 {
        return Err(Error::ShiftInSpectrum {
            z: Complex64::new(0.0, omega),
            tol: tol.rel,
        });
    }
    let inv = m.try_inverse().ok_or(Error::ShiftInSpectrum {
        z: Complex64::new(0.0, omega),
        tol: tol.rel,
    })?;
    Ok(spectral_norm(&inv))
}

/// Resolvent norm sampled on a frequency grid, for CSV export.
pub fn harmonic_response_curve(
    a: &RealMatrix,
    omega_grid: &[f64],
    tol: &Tolerances,
) -> Result<Vec<(f64, f64)>> {
    ensure_stable(a, tol, "harmonic response curve")?;
    omega_grid
        .iter()
        .map(|&w| resolvent_norm(a, w, tol).map(|v| (w, v)))
        .collect()
}

fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
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
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs() + b.abs()) {
            break;
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Candidate frequencies: zero, every |Im(eigenvalue)|, a linear grid to
/// ten times the spectral radius, and a log grid reaching the matrix norm
/// scale (strong non-normality pushes structure past the spectral radius).
fn omega_candidates(a: &RealMatrix, eigs: &[Complex64], tol: &Tolerances) -> Vec<f64> {
    let rho = eigs.iter().map(|l| l.norm()).fold(0.0f64, f64::max);
    let wmax_lin = 10.0 * (rho + 1.0);
    let wmax_log = 10.0 * (a.as_dmatrix().norm() + 1.0);
    let mut cand = vec![0.0];
    for l in eigs {
        if l.im.abs() > 0.0 {
            cand.push(l.im.abs());
        }
    }
    let npts = tol.omega_grid_linear.max(4);
    for k in 0..=npts {
        cand.push(wmax_lin * k as f64 / npts as f64);
    }
    let decades = (wmax_log / 1e-3).log10();
    let nlog = (decades * tol.omega_grid_per_decade as f64).ceil() as usize;
    for k in 0..=nlog {
        cand.push(1e-3 * 10f64.powf(decades * k as f64 / nlog as f64));
    }
    cand.retain(|w| w.is_finite());
    cand.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cand.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (1.0 + y.abs()));
    cand
}

/// Eigenvalue real-part threshold for "on the imaginary axis" when scanning
/// the Hamiltonian pencil.
const HAM_AXIS_REL: f64 = 1e-9;

/// Imaginary parts of the imaginary-axis eigenvalues of
/// `[[A, g I], [-g I, -A^t]]`, or None if the pencil stays off-axis.
fn hamiltonian_crossings(a: &RealMatrix, gamma: f64) -> Result<Option<Vec<f64>>> {
    let n = a.n();
    let m = a.as_dmatrix();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] = m[(i, j)];
            h[(i + n, j + n)] = -m[(j, i)];
        }
        h[(i, i + n)] = gamma;
        h[(i + n, i)] = -gamma;
    }
    let scale = h.norm().max(1.0);
    let eigs = eigenvalues(&RealMatrix::new(h)?)?;
    let mut crossings: Vec<f64> = eigs
        .iter()
        .filter(|l| l.re.abs() <= HAM_AXIS_REL * scale)
        .map(|l| l.im.abs())
        .collect();
    if crossings.is_empty() {
        return Ok(None);
    }
    crossings.sort_by(|x, y| x.partial_cmp(y).unwrap());
    crossings.dedup_by(|x, y| (*x - *y).abs() <= 1e-9 * (1.0 + y.abs()));
    Ok(Some(crossings))
}

/// Locates the global minimum of `w -> sigma_min(iw I - A)` over w >= 0.
///
/// Returns `(f_min, w_min)`. Grid plus golden-section gives the local
/// result; Byers-style bisection on the Hamiltonian pencil certifies global
/// optimality and re-seeds the search when a lower level exists.
fn global_min_gain(a: &RealMatrix, eigs: &[Complex64], tol: &Tolerances) -> Result<(f64, f64)> {
    let cand = omega_candidates(a, eigs, tol);
    let values: Vec<f64> = cand.iter().map(|&w| min_gain(a, w)).collect();

    let refine = |w_lo: f64, w_hi: f64| golden_min(|w| min_gain(a, w), w_lo, w_hi, tol.golden_iters);

    // Refine around every local minimum of the sampled curve, keeping the
    // best handful to bound the work.
    let mut locals: Vec<(f64, usize)> = Vec::new();
    for i in 0..cand.len() {
        let left = if i == 0 { f64::INFINITY } else { values[i - 1] };
        let right = if i + 1 == cand.len() {
            f64::INFINITY
        } else {
            values[i + 1]
        };
        if values[i] <= left && values[i] <= right {
            locals.push((values[i], i));
        }
    }
    locals.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    locals.truncate(6);

    let mut best_f = f64::INFINITY;
    let mut best_w = 0.0;
    for &(_, i) in &locals {
        let lo = if i == 0 { 0.0 } else { cand[i - 1] };
        let hi = if i + 1 == cand.len() {
            cand[i] * 1.5 + 1.0
        } else {
            cand[i + 1]
        };
        let (w, f) = refine(lo, hi);
        if f < best_f {
            best_f = f;
            best_w = w;
        }
    }
    for (&w, &f) in cand.iter().zip(&values) {
        if f < best_f {
            best_f = f;
            best_w = w;
        }
    }

    // Level-set bisection: gamma < min_w f(w) iff the pencil has no
    // imaginary-axis eigenvalue. Start from the proven upper bound.
    let mut lo = 0.0;
    let mut hi = best_f;
    for _ in 0..tol.bisection_iters {
        if hi - lo <= 1e-13 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if hamiltonian_crossings(a, mid)?.is_some() {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    if hi < best_f * (1.0 - 1e-8) {
        // The grid missed the global dip; probe the crossing frequencies at a
        // level just above the certified minimum.
        let probe = (hi * (1.0 + 1e-6)).min(best_f);
        if let Some(ws) = hamiltonian_crossings(a, probe)? {
            for pair in ws.windows(2) {
                let (w, f) = refine(pair[0], pair[1]);
                if f < best_f {
                    best_f = f;
                    best_w = w;
                }
            }
            for &w in &ws {
                let f = min_gain(a, w);
                if f < best_f {
                    best_f = f;
                    best_w = w;
                }
                let (wr, fr) = refine((w * 0.99).max(0.0), w * 1.01 + 1e-6);
                if fr < best_f {
                    best_f = fr;
                    best_w = wr;
                }
            }
        }
    }

    Ok((best_f, best_w.abs()))
}

/// The resonant peak of the resolvent norm, with forcing and response
/// directions. For a resonance at w* = 0 the directions are real.
pub fn harmonic_dynamical_stability(a: &RealMatrix, tol: &Tolerances) -> Result<ResonanceResult> {
    ensure_stable(a, tol, "harmonic dynamical stability")?;
    let eigs = eigenvalues(a)?;
    let (_, omega_star) = global_min_gain(a, &eigs, tol)?;

    // Directions from the SVD of the resolvent at the resonance. The
    // response is recomputed as G u / ||G u|| so that the certificate
    // identity (iw* - A)^-1 u = v w holds to working precision.
    let g = shifted(a, omega_star)
        .try_inverse()
        .ok_or(Error::ShiftInSpectrum {
            z: Complex64::new(0.0, omega_star),
            tol: tol.rel,
        })?;
    let (u, value) = if omega_star == 0.0 {
        // Real resolvent: real singular vectors, fixed sign.
        let gr = g.map(|z| z.re);
        let svd = SVD::new(gr, true, true);
        let vt = svd.v_t.as_ref().unwrap();
        let mut u = DVector::<f64>::from_fn(a.n(), |i, _| vt[(0, i)]);
        let k = u.iamax();
        if u[k] < 0.0 {
            u = -u;
        }
        (u.map(|x| Complex64::new(x, 0.0)), svd.singular_values[0])
    } else {
        let svd = SVD::new(g.clone(), true, true);
        let vt = svd.v_t.as_ref().unwrap();
        let mut u = CVector::from_fn(a.n(), |i, _| vt[(0, i)].conj());
        let k = (0..u.len())
            .max_by(|&i, &j| u[i].norm().partial_cmp(&u[j].norm()).unwrap())
            .unwrap();
        let phase = u[k] / Complex64::new(u[k].norm(), 0.0);
        u /= phase;
        (u, svd.singular_values[0])
    };
    let gu = &g * &u;
    let v = gu.norm();
    let w = gu / Complex64::new(v, 0.0);
    // v = ||G u|| differs from the SVD value only by rounding; keep the
    // realized amplification so that downstream certificates are exact.
    debug_assert!((v - value).abs() <= 1e-6 * value.max(1e-300));
    Ok(ResonanceResult {
        value: v,
        sdyn_h: 1.0 / v,
        omega_star,
        direction_u: u,
        direction_w: w,
    })
}

/// Complex stability radius with the rank-one boundary certificate
/// `P = u w* / v` from the resonant directions.
pub fn complex_stability_radius(a: &RealMatrix, tol: &Tolerances) -> Result<RadiusResult> {
    let res = harmonic_dynamical_stability(a, tol)?;
    let p = &res.direction_u * res.direction_w.adjoint() / Complex64::new(res.value, 0.0);
    let radius = spectral_norm(&p);
    Ok(RadiusResult {
        radius,
        certificate: Perturbation::Complex(p),
        boundary_frequency: res.omega_star,
        converged: true,
        estimator_gap: (radius - res.sdyn_h).abs(),
    })
}

/// `inf_g sigma_2` of the real level-set block matrix for `G = (iw-A)^-1`,
/// with the minimizing g. The inner function is unimodal on (0, 1].
fn mu_real(g: &CMatrix, tol: &Tolerances) -> (f64, f64) {
    let n = g.nrows();
    let re = g.map(|z| z.re);
    let im = g.map(|z| z.im);
    if im.norm() <= 1e-13 * re.norm().max(f64::MIN_POSITIVE) {
        // Real G: the block matrix is diag(G, G) for every g, so the second
        // singular value equals sigma_max(G).
        return (spectral_norm_real(&re), 1.0);
    }
    let second_sv = |gamma: f64| -> f64 {
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = re[(i, j)];
                m[(i, j + n)] = -gamma * im[(i, j)];
                m[(i + n, j)] = im[(i, j)] / gamma;
                m[(i + n, j + n)] = re[(i, j)];
            }
        }
        sorted_singular_values_real(m)[1]
    };
    let npts = tol.gamma_grid.max(8);
    let gammas: Vec<f64> = (0..=npts)
        .map(|k| 10f64.powf(-8.0 + 8.0 * k as f64 / npts as f64))
        .collect();
    let vals: Vec<f64> = gammas.iter().map(|&g| second_sv(g)).collect();
    let i = (0..vals.len())
        .min_by(|&x, &y| vals[x].partial_cmp(&vals[y]).unwrap())
        .unwrap();
    let lo = gammas[i.saturating_sub(1)];
    let hi = gammas[(i + 1).min(gammas.len() - 1)];
    let (gamma, val) = golden_min(second_sv, lo, hi, tol.golden_iters.min(80));
    if val < vals[i] {
        (val, gamma)
    } else {
        (vals[i], gammas[i])
    }
}

fn mu_at(a: &RealMatrix, omega: f64, tol: &Tolerances) -> (f64, f64) {
    match shifted(a, omega).try_inverse() {
        Some(g) => mu_real(&g, tol),
        None => (f64::NEG_INFINITY, 1.0),
    }
}

/// Minimal spectral-norm real matrix P with `P x = bx`, `P y = by`.
/// Rank-revealing: a numerically dependent (x, y) pair degrades to the
/// single consistent constraint.
fn min_norm_real_solution(
    x: &DVector<f64>,
    y: &DVector<f64>,
    bx: &DVector<f64>,
    by: &DVector<f64>,
) -> Option<DMatrix<f64>> {
    let n = x.len();
    let mut xm = DMatrix::zeros(n, 2);
    xm.set_column(0, x);
    xm.set_column(1, y);
    let mut bm = DMatrix::zeros(n, 2);
    bm.set_column(0, bx);
    bm.set_column(1, by);
    let svd = SVD::new(xm, true, true);
    let s = &svd.singular_values;
    if s[0] <= 0.0 {
        return None;
    }
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    // P = B V S^+ U^t restricted to the numerical rank.
    let mut p = DMatrix::zeros(n, n);
    for k in 0..s.len() {
        if s[k] <= 1e-9 * s[0] {
            continue;
        }
        let vk = DVector::from_fn(2, |i, _| vt[(k, i)]);
        let uk = u.column(k).clone_owned();
        p += (&bm * vk) * uk.transpose() / s[k];
    }
    Some(p)
}

/// Real rank-<=2 perturbation placing an eigenvalue at `iw` with eigenvector
/// `x + iy`: solves `P (x + iy) = (iw - A)(x + iy)` at minimal norm.
fn eigen_placement_norm(
    a: &RealMatrix,
    omega: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Option<(f64, DMatrix<f64>)> {
    let m = a.as_dmatrix();
    let bx = -y * omega - m * x;
    let by = x * omega - m * y;
    let p = min_norm_real_solution(x, y, &bx, &by)?;
    Some((spectral_norm_real(&p), p))
}

/// Certificate from the level-set optimizer: at the optimal (w, g) the
/// second right singular vector of the block matrix encodes the forcing
/// direction `u = q1 + i g q2`; the response `G u` is the placed
/// eigenvector.
fn level_set_certificate(
    a: &RealMatrix,
    omega: f64,
    gamma: f64,
) -> Option<(f64, DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    let n = a.n();
    let g = shifted(a, omega).try_inverse()?;
    let re = g.map(|z| z.re);
    let im = g.map(|z| z.im);
    let u_c: CVector = if im.norm() <= 1e-13 * re.norm().max(f64::MIN_POSITIVE) {
        let svd = SVD::new(re.clone(), true, true);
        let vt = svd.v_t.as_ref().unwrap();
        CVector::from_fn(n, |i, _| Complex64::new(vt[(0, i)], 0.0))
    } else {
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = re[(i, j)];
                m[(i, j + n)] = -gamma * im[(i, j)];
                m[(i + n, j)] = im[(i, j)] / gamma;
                m[(i + n, j + n)] = re[(i, j)];
            }
        }
        let svd = SVD::new(m, true, true);
        let vt = svd.v_t.as_ref().unwrap();
        CVector::from_fn(n, |i, _| {
            Complex64::new(vt[(1, i)], gamma * vt[(1, i + n)])
        })
    };
    let norm = u_c.norm();
    if norm == 0.0 {
        return None;
    }
    let u_c = u_c / Complex64::new(norm, 0.0);
    let w_c = &g * &u_c;
    let x = w_c.map(|z| z.re);
    let y = w_c.map(|z| z.im);
    let bx = u_c.map(|z| z.re);
    let by = u_c.map(|z| z.im);
    let p = min_norm_real_solution(&x, &y, &bx, &by)?;
    Some((spectral_norm_real(&p), p, x, y))
}

/// Rescales P so that `alpha(A + t P) = 0` to near machine precision. Any
/// feasible boundary perturbation stays feasible under this adjustment and
/// its norm can only shrink when alpha(A + P) overshoots.
fn boundary_rescale(a: &RealMatrix, p: &DMatrix<f64>, tol: &Tolerances) -> Option<(f64, DMatrix<f64>)> {
    let alpha_at = |t: f64| -> Option<f64> {
        let m = RealMatrix::new(a.as_dmatrix() + p * t).ok()?;
        spectral_abscissa(&m).ok()
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut f_hi = alpha_at(hi)?;
    let mut grow = 0;
    while f_hi < 0.0 {
        lo = hi;
        hi *= 1.25;
        f_hi = alpha_at(hi)?;
        grow += 1;
        if grow > 60 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = alpha_at(mid)?;
        if f_mid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    // Land on the unstable side of the bracket, then accept if on boundary.
    let t = hi;
    let alpha = alpha_at(t)?;
    let scale = a.as_dmatrix().norm().max(1.0);
    if alpha.abs() <= tol.rel.max(1e-12) * scale * 10.0 {
        Some((t, p * t))
    } else {
        None
    }
}

/// Nelder-Mead over packed parameters, for the cross-check search.
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    step: f64,
    iters: usize,
) -> (Vec<f64>, f64) {
    let d = start.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    simplex.push(start.to_vec());
    for i in 0..d {
        let mut v = start.to_vec();
        v[i] += step * (1.0 + v[i].abs());
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    for _ in 0..iters {
        let mut idx: Vec<usize> = (0..=d).collect();
        idx.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
        let best = idx[0];
        let worst = idx[d];
        let second_worst = idx[d - 1];
        if (values[worst] - values[best]).abs()
            <= 1e-14 * (1.0 + values[best].abs())
        {
            break;
        }
        let mut centroid = vec![0.0; d];
        for &i in idx.iter().take(d) {
            for k in 0..d {
                centroid[k] += simplex[i][k] / d as f64;
            }
        }
        let blend = |alpha: f64| -> Vec<f64> {
            (0..d)
                .map(|k| centroid[k] + alpha * (centroid[k] - simplex[worst][k]))
                .collect()
        };
        let reflected = blend(1.0);
        let fr = f(&reflected);
        if fr < values[best] {
            let expanded = blend(2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
        } else if fr < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = fr;
        } else {
            let contracted = blend(-0.5);
            let fc = f(&contracted);
            if fc < values[worst] {
                simplex[worst] = contracted;
                values[worst] = fc;
            } else {
                for &i in idx.iter().skip(1) {
                    for k in 0..d {
                        simplex[i][k] = 0.5 * (simplex[i][k] + simplex[best][k]);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let besti = (0..values.len())
        .min_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap())
        .unwrap();
    (simplex[besti].clone(), values[besti])
}

/// Real stability radius by the level-set formula, with a certified real
/// perturbation. Guarantees `S_STR^c <= radius <= |alpha(A)|`; the upper
/// bound comes from the always-feasible `|alpha| I`.
pub fn real_stability_radius(a: &RealMatrix, tol: &Tolerances) -> Result<RadiusResult> {
    let alpha = ensure_stable(a, tol, "real stability radius")?;
    let n = a.n();
    let eigs = eigenvalues(a)?;

    // Outer supremum of mu over frequency. The candidate set reuses the
    // resonance sweep plus the harmonic optimum, since the real and complex
    // optima frequently share a frequency.
    let mut cand = omega_candidates(a, &eigs, tol);
    if let Ok((_, w_res)) = global_min_gain(a, &eigs, tol) {
        cand.push(w_res);
    }
    cand.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cand.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (1.0 + y.abs()));

    let coarse: Vec<(f64, f64)> = cand.iter().map(|&w| (w, mu_at(a, w, tol).0)).collect();
    let mut locals: Vec<(f64, usize)> = Vec::new();
    for i in 0..coarse.len() {
        let left = if i == 0 {
            f64::NEG_INFINITY
        } else {
            coarse[i - 1].1
        };
        let right = if i + 1 == coarse.len() {
            f64::NEG_INFINITY
        } else {
            coarse[i + 1].1
        };
        if coarse[i].1 >= left && coarse[i].1 >= right {
            locals.push((coarse[i].1, i));
        }
    }
    locals.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    locals.truncate(4);

    let mut best_mu = f64::NEG_INFINITY;
    let mut best_w = 0.0;
    for &(_, i) in &locals {
        let lo = if i == 0 { 0.0 } else { coarse[i - 1].0 };
        let hi = if i + 1 == coarse.len() {
            coarse[i].0 * 1.5 + 1.0
        } else {
            coarse[i + 1].0
        };
        let (w, neg) = golden_min(|w| -mu_at(a, w, tol).0, lo, hi, tol.golden_iters.min(60));
        if -neg > best_mu {
            best_mu = -neg;
            best_w = w;
        }
    }
    for &(w, m) in &coarse {
        if m > best_mu {
            best_mu = m;
            best_w = w;
        }
    }
    if !best_mu.is_finite() || best_mu <= 0.0 {
        return Err(Error::Numerical(
            "real stability radius level-set sweep failed".into(),
        ));
    }
    let level_estimate = 1.0 / best_mu;

    // Certificate at the optimizer, then multi-start eigenvalue-placement
    // search as the independent upper-bound estimator.
    let gamma_star = mu_at(a, best_w, tol).1;
    let mut best_cert: Option<(f64, DMatrix<f64>)> = None;
    let mut consider = |norm: f64, p: DMatrix<f64>| {
        if let Some((t, scaled)) = boundary_rescale(a, &p, tol) {
            let realized = norm * t;
            if best_cert.as_ref().map_or(true, |(b, _)| realized < *b) {
                best_cert = Some((realized, scaled));
            }
        }
    };

    if let Some((norm, p, x0, y0)) = level_set_certificate(a, best_w, gamma_star) {
        consider(norm, p);

        // Direct search over (w, x, y): polish from the constructed
        // placement and from deterministic pseudo-random restarts.
        let objective = |theta: &[f64]| -> f64 {
            let w = theta[0].abs();
            let x = DVector::from_column_slice(&theta[1..1 + n]);
            let y = DVector::from_column_slice(&theta[1 + n..]);
            let scale = (x.norm_squared() + y.norm_squared()).sqrt();
            if scale < 1e-12 {
                return f64::INFINITY;
            }
            match eigen_placement_norm(a, w, &(x / scale), &(y / scale)) {
                Some((norm, _)) => norm,
                None => f64::INFINITY,
            }
        };
        let mut starts: Vec<Vec<f64>> = Vec::new();
        let pack = |w: f64, x: &DVector<f64>, y: &DVector<f64>| -> Vec<f64> {
            let mut v = Vec::with_capacity(1 + 2 * n);
            v.push(w);
            v.extend(x.iter());
            v.extend(y.iter());
            v
        };
        starts.push(pack(best_w, &x0, &y0));
        let mut seed = 0x1234_5678_9ABC_DEF0u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..5 {
            let x = DVector::from_fn(n, |_, _| next());
            let y = DVector::from_fn(n, |_, _| next());
            starts.push(pack(best_w * (1.0 + 0.2 * next()), &x, &y));
        }
        for start in &starts {
            let (theta, norm) = nelder_mead(objective, start, 0.1, 600);
            if norm.is_finite() {
                let w = theta[0].abs();
                let x = DVector::from_column_slice(&theta[1..1 + n]);
                let y = DVector::from_column_slice(&theta[1 + n..]);
                let scale = (x.norm_squared() + y.norm_squared()).sqrt();
                if scale >= 1e-12 {
                    if let Some((norm2, p2)) =
                        eigen_placement_norm(a, w, &(x / scale), &(y / scale))
                    {
                        consider(norm2, p2);
                    }
                }
            }
        }
    }

    // |alpha| I always reaches the boundary: alpha(A + |alpha| I) = 0.
    let fallback = DMatrix::identity(n, n) * (-alpha);
    consider(-alpha, fallback);

    let (cert_norm, cert) = best_cert.ok_or_else(|| {
        Error::Numerical("no feasible real boundary perturbation found".into())
    })?;
    let radius = cert_norm.min(level_estimate);
    let gap = (cert_norm - level_estimate).abs();
    let converged = gap <= 1e-4 * radius.max(1e-12);
    Ok(RadiusResult {
        radius,
        certificate: Perturbation::Real(cert),
        boundary_frequency: best_w,
        converged,
        estimator_gap: gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{is_normal, spectral_abscissa_complex};
    use approx::assert_relative_eq;

    fn tols() -> Tolerances {
        Tolerances::default()
    }

    fn family(m: f64) -> RealMatrix {
        RealMatrix::from_rows(2, &[-1.0, m * m, -1.0, -1.0]).unwrap()
    }

    #[test]
    fn resolvent_norm_identity_matrix() {
        let a = RealMatrix::scaled_identity(2, -1.0);
        assert_relative_eq!(resolvent_norm(&a, 0.0, &tols()).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(
            resolvent_norm(&a, 1.0, &tols()).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn resolvent_norm_matches_grid_svd_oracle() {
        // Dense grid around w = 10 for the strongly non-normal family member.
        let a = family(10.0);
        let direct = resolvent_norm(&a, 10.0, &tols()).unwrap();
        // Oracle: 1/sigma_min through an independent route on a 401-point grid.
        let mut best = 0.0f64;
        for k in 0..=400 {
            let w = 10.0 + (k as f64 - 200.0) * 1e-4;
            let oracle = 1.0 / min_gain(&a, w);
            best = best.max(oracle);
            if w == 10.0 {
                assert_relative_eq!(direct, oracle, max_relative = 1e-10);
            }
        }
        assert!(best >= direct * (1.0 - 1e-12));
    }

    #[test]
    fn resolvent_rejects_spectrum() {
        // iw = i2 is an eigenvalue of [[0, 2], [-2, 0]]... that matrix is
        // unstable though; use the error path directly: z on spectrum.
        let a = RealMatrix::from_rows(2, &[0.0, 2.0, -2.0, 0.0]).unwrap();
        assert!(resolvent_norm(&a, 2.0, &tols()).is_err());
    }

    #[test]
    fn resonance_scaled_identity() {
        let a = RealMatrix::scaled_identity(3, -2.5);
        let r = harmonic_dynamical_stability(&a, &tols()).unwrap();
        assert_relative_eq!(r.sdyn_h, 2.5, epsilon = 1e-9);
        assert_relative_eq!(r.omega_star, 0.0, epsilon = 1e-9);
        // real directions at the zero-frequency tie-break
        assert!(r.direction_u.iter().all(|z| z.im == 0.0));
    }

    #[test]
    fn resonance_normal_complex_pair() {
        // normal with eigenvalues -1 +- 2i
        let a = RealMatrix::from_rows(2, &[-1.0, 2.0, -2.0, -1.0]).unwrap();
        let r = harmonic_dynamical_stability(&a, &tols()).unwrap();
        assert_relative_eq!(r.sdyn_h, 1.0, epsilon = 1e-9);
        assert_relative_eq!(r.omega_star, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn resonance_result_invariants() {
        let a = family(10.0);
        let r = harmonic_dynamical_stability(&a, &tols()).unwrap();
        assert_relative_eq!(r.direction_u.norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.direction_w.norm(), 1.0, epsilon = 1e-12);
        let g = shifted(&a, r.omega_star).try_inverse().unwrap();
        let gu = &g * &r.direction_u;
        assert_relative_eq!(gu.norm(), r.value, max_relative = 1e-10);
        let diff = (&gu - &r.direction_w * Complex64::new(r.value, 0.0)).norm();
        assert!(diff <= 1e-9 * r.value, "diff {diff}");
    }

    #[test]
    fn family_sdyn_h_monotone_and_matches_grid_oracle() {
        let t = tols();
        let mut prev = f64::INFINITY;
        for m in 1..=30 {
            let a = family(m as f64);
            let r = harmonic_dynamical_stability(&a, &t).unwrap();
            assert!(
                r.sdyn_h < prev + 1e-12,
                "sdyn_h not decreasing at M = {m}: {} then {}",
                prev,
                r.sdyn_h
            );
            prev = r.sdyn_h;
            // peak near the eigenvalue imaginary part
            if m >= 3 {
                assert_relative_eq!(r.omega_star, m as f64, max_relative = 0.2);
            }
        }
        // dense-grid oracle at M = 10: the supremum bounds every grid value
        let a = family(10.0);
        let r = harmonic_dynamical_stability(&a, &t).unwrap();
        for k in 0..=2000 {
            let w = k as f64 * 0.02;
            assert!(1.0 / min_gain(&a, w) <= r.value * (1.0 + 1e-9));
        }
    }

    #[test]
    fn unstable_and_marginal_matrices_are_refused() {
        let t = tols();
        let unstable = RealMatrix::from_rows(2, &[1.0, 0.0, 0.0, -1.0]).unwrap();
        assert!(matches!(
            harmonic_dynamical_stability(&unstable, &t),
            Err(Error::Unstable { .. })
        ));
        let marginal = RealMatrix::from_rows(2, &[0.0, 1.0, 0.0, -1.0]).unwrap();
        assert!(matches!(
            harmonic_dynamical_stability(&marginal, &t),
            Err(Error::MarginallyStable { .. })
        ));
    }

    #[test]
    fn complex_radius_identity_matrix() {
        let a = RealMatrix::scaled_identity(2, -1.0);
        let r = complex_stability_radius(&a, &tols()).unwrap();
        assert_relative_eq!(r.radius, 1.0, epsilon = 1e-9);
        let shifted = r.certificate.added_to(&a);
        let alpha = spectral_abscissa_complex(&shifted).unwrap();
        assert!(alpha.abs() <= 1e-9, "alpha {alpha}");
    }

    #[test]
    fn complex_radius_family_certificate_is_exact() {
        let t = tols();
        let a = family(10.0);
        let res = harmonic_dynamical_stability(&a, &t).unwrap();
        let r = complex_stability_radius(&a, &t).unwrap();
        assert_relative_eq!(r.radius, res.sdyn_h, max_relative = 1e-10);
        let alpha = spectral_abscissa_complex(&r.certificate.added_to(&a)).unwrap();
        assert!(alpha.abs() <= 1e-8, "alpha {alpha}");
    }

    #[test]
    fn real_radius_family_is_one() {
        let t = tols();
        for m in [1.0f64, 2.0, 5.0, 10.0, 30.0] {
            let a = family(m);
            let r = real_stability_radius(&a, &t).unwrap();
            assert!(
                (r.radius - 1.0).abs() <= 1e-3,
                "family M = {m}: radius {}",
                r.radius
            );
            assert!(r.converged, "estimators disagree at M = {m}: gap {}", r.estimator_gap);
            let alpha = spectral_abscissa_complex(&r.certificate.added_to(&a)).unwrap();
            assert!(alpha.abs() <= 1e-7, "alpha {alpha}");
        }
    }

    #[test]
    fn real_radius_identity_and_normal() {
        let t = tols();
        let a = RealMatrix::scaled_identity(2, -1.0);
        let r = real_stability_radius(&a, &t).unwrap();
        assert_relative_eq!(r.radius, 1.0, epsilon = 1e-6);

        // normal non-diagonal matrix: radius = |alpha|
        let q = RealMatrix::from_rows(2, &[-1.0, 2.0, -2.0, -1.0]).unwrap();
        assert!(is_normal(&q, 1e-12));
        let r = real_stability_radius(&q, &t).unwrap();
        assert_relative_eq!(r.radius, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn radius_ordering_chain_on_fixed_matrices() {
        let t = tols();
        for entries in [
            [-1.0, 0.4, -2.0, -1.5],
            [-0.3, 1.0, -1.2, -0.8],
            [-2.0, 3.0, 0.5, -1.0],
        ] {
            let a = RealMatrix::from_rows(2, &entries).unwrap();
            let alpha = spectral_abscissa(&a).unwrap();
            if alpha >= -1e-6 {
                continue;
            }
            let rc = complex_stability_radius(&a, &t).unwrap();
            let rr = real_stability_radius(&a, &t).unwrap();
            assert!(rc.radius <= rr.radius + 1e-8, "{} > {}", rc.radius, rr.radius);
            assert!(rr.radius <= -alpha + 1e-8, "{} > {}", rr.radius, -alpha);
        }
    }

    #[test]
    fn response_curve_examples() {
        let t = tols();
        let a = RealMatrix::scaled_identity(1, -1.0);
        let curve = harmonic_response_curve(&a, &[-1.0, 0.0, 1.0], &t).unwrap();
        assert_relative_eq!(curve[0].1, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(curve[1].1, 1.0, epsilon = 1e-12);
        assert_relative_eq!(curve[2].1, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);

        // symmetry and boundedness by the supremum
        let a = family(10.0);
        let res = harmonic_dynamical_stability(&a, &t).unwrap();
        let grid: Vec<f64> = (0..400).map(|k| k as f64 * 0.05).collect();
        let curve = harmonic_response_curve(&a, &grid, &t).unwrap();
        let max = curve.iter().map(|&(_, v)| v).fold(0.0f64, f64::max);
        assert!(max <= res.value * (1.0 + 1e-9));
        // peak near w = 10
        let (w_peak, _) = curve
            .iter()
            .cloned()
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        assert!((w_peak - 10.0).abs() < 0.5, "peak at {w_peak}");
        for &(w, v) in &curve {
            let mirrored = resolvent_norm(&a, -w, &t).unwrap();
            assert_relative_eq!(v, mirrored, max_relative = 1e-11);
        }
    }
}
