//! Dense linear-algebra primitives and elementary stability quantities.
//!
//! Everything here is desk scale: dense square matrices up to a few tens of
//! rows, double precision, robustness preferred over speed. Eigenvalues go
//! through the QR/Schur path of nalgebra, with symmetric inputs routed to
//! the symmetric solver.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;

use crate::config::Tolerances;
use crate::error::{Error, Result};

/// Dense complex matrix used for resolvents and complex perturbations.
pub type CMatrix = DMatrix<Complex64>;
/// Dense complex vector.
pub type CVector = DVector<Complex64>;

/// A validated real square matrix with finite entries, typically a Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    inner: DMatrix<f64>,
}

impl RealMatrix {
    /// Wraps a dense matrix, rejecting non-square shapes and non-finite entries.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        for row in 0..m.nrows() {
            for col in 0..m.ncols() {
                let value = m[(row, col)];
                if !value.is_finite() {
                    return Err(Error::NonFinite { row, col, value });
                }
            }
        }
        Ok(Self { inner: m })
    }

    /// Builds an `n x n` matrix from row-major entries.
    pub fn from_rows(n: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n, n, entries))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: DMatrix::identity(n, n),
        }
    }

    /// `c * I`.
    pub fn scaled_identity(n: usize, c: f64) -> Self {
        Self {
            inner: DMatrix::identity(n, n) * c,
        }
    }

    pub fn n(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn to_complex(&self) -> CMatrix {
        self.inner.map(|x| Complex64::new(x, 0.0))
    }
}

impl std::fmt::Display for RealMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.inner)
    }
}

/// A real symmetric positive semi-definite matrix (noise or response
/// correlations). Symmetry and the eigenvalue floor are checked against the
/// configured tolerance at construction; negative eigenvalues inside the
/// tolerance band are kept as-is and only clipped on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    inner: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn new(m: DMatrix<f64>, tol: &Tolerances) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let scale = m.norm().max(f64::MIN_POSITIVE);
        let asymmetry = (&m - m.transpose()).norm();
        if asymmetry > tol.rel.sqrt() * scale {
            return Err(Error::NotPsd {
                min_eig: f64::NAN,
                asymmetry,
            });
        }
        let sym = symmetrize(&m);
        let eigs = SymmetricEigen::new(sym.clone()).eigenvalues;
        let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < -tol.rel.sqrt() * scale {
            return Err(Error::NotPsd { min_eig, asymmetry });
        }
        Ok(Self { inner: sym })
    }

    /// Wraps a matrix that is PSD by construction (e.g. `T T^t`).
    pub(crate) fn new_unchecked(m: DMatrix<f64>) -> Self {
        Self { inner: symmetrize(&m) }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: DMatrix::identity(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    /// Projects onto the PSD cone by clipping negative eigenvalues to zero.
    pub fn clipped(&self) -> CovarianceMatrix {
        let eig = SymmetricEigen::new(self.inner.clone());
        let clipped = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0)));
        let m = &eig.eigenvectors * clipped * eig.eigenvectors.transpose();
        Self { inner: symmetrize(&m) }
    }

    /// Smallest eigenvalue, for PSD diagnostics.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.inner.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Eigenvalues of a real matrix, with right eigenvectors when the matrix is
/// numerically diagonalizable. Eigenvectors are extracted by shifted inverse
/// iteration and dropped entirely if any residual check fails, so defective
/// matrices simply carry `None`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    pub right_eigenvectors: Option<Vec<CVector>>,
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a real square matrix. Symmetric inputs go through the
/// symmetric solver, everything else through Schur/QR.
pub fn eigenvalues(a: &RealMatrix) -> Result<Vec<Complex64>> {
    let m = a.as_dmatrix();
    let n = a.n();
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = m.norm();
    if scale == 0.0 {
        return Ok(vec![Complex64::new(0.0, 0.0); n]);
    }
    if (m - m.transpose()).norm() <= 1e-14 * scale {
        let eig = SymmetricEigen::new(m.clone());
        return Ok(eig
            .eigenvalues
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 100_000).ok_or_else(|| {
        Error::EigenFailure {
            n,
            norm: scale,
            cond_estimate: condition_estimate(m),
        }
    })?;
    Ok(schur.complex_eigenvalues().iter().cloned().collect())
}

/// Rough 2-norm condition estimate used only for error diagnostics.
fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Spectral abscissa: the largest real part over the spectrum. The matrix is
/// stable exactly when this is negative.
pub fn spectral_abscissa(a: &RealMatrix) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Spectral abscissa of a complex matrix, computed through the real 2n x 2n
/// embedding `[[Re M, -Im M], [Im M, Re M]]`, whose spectrum is the spectrum
/// of M together with its conjugates.
pub fn spectral_abscissa_complex(m: &CMatrix) -> Result<f64> {
    let e = embed_complex(m);
    spectral_abscissa(&RealMatrix::new(e)?)
}

/// Real 2n x 2n representation of a complex matrix acting on (Re z, Im z).
pub fn embed_complex(m: &CMatrix) -> DMatrix<f64> {
    let n = m.nrows();
    let mut e = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = m[(i, j)];
            e[(i, j)] = z.re;
            e[(i, j + n)] = -z.im;
            e[(i + n, j)] = z.im;
            e[(i + n, j + n)] = z.re;
        }
    }
    e
}

/// Full spectrum with optional right eigenvectors.
pub fn spectrum(a: &RealMatrix, tol: &Tolerances) -> Result<Spectrum> {
    let eigenvalues = eigenvalues(a)?;
    let vectors = eigenvectors_by_inverse_iteration(a, &eigenvalues, tol);
    Ok(Spectrum {
        eigenvalues,
        right_eigenvectors: vectors,
    })
}

fn eigenvectors_by_inverse_iteration(
    a: &RealMatrix,
    eigenvalues: &[Complex64],
    tol: &Tolerances,
) -> Option<Vec<CVector>> {
    let n = a.n();
    let ac = a.to_complex();
    let scale = a.as_dmatrix().norm().max(f64::MIN_POSITIVE);
    let mut vectors = Vec::with_capacity(n);
    for (k, &lambda) in eigenvalues.iter().enumerate() {
        let mut found = None;
        // Retry with growing shift jitter; clustered eigenvalues make the
        // shifted system singular to machine precision.
        for attempt in 0..4 {
            let jitter = scale * 1e-11 * 10f64.powi(attempt);
            let shift = lambda + Complex64::new(jitter, jitter);
            let shifted = &ac - CMatrix::identity(n, n) * shift;
            let Some(lu) = try_lu(&shifted) else { continue };
            let mut v = CVector::from_fn(n, |i, _| {
                Complex64::new(1.0 + (i + k) as f64 * 0.137, 0.3 - i as f64 * 0.071)
            });
            v /= Complex64::new(v.norm(), 0.0);
            let mut ok = false;
            for _ in 0..5 {
                let Some(w) = lu.solve(&v) else { break };
                let norm = w.norm();
                if !norm.is_finite() || norm == 0.0 {
                    break;
                }
                v = w / Complex64::new(norm, 0.0);
                let residual = (&ac * &v - &v * lambda).norm();
                if residual <= tol.rel.sqrt() * scale {
                    ok = true;
                    break;
                }
            }
            if ok {
                found = Some(v);
                break;
            }
        }
        match found {
            Some(v) => vectors.push(v),
            None => return None,
        }
    }
    Some(vectors)
}

fn try_lu(m: &CMatrix) -> Option<nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>> {
    let lu = m.clone().lu();
    // A fully singular U makes solve return garbage; probe the diagonal.
    let u_min = (0..m.nrows())
        .map(|i| lu.u()[(i, i)].norm())
        .fold(f64::INFINITY, f64::min);
    if u_min == 0.0 {
        None
    } else {
        Some(lu)
    }
}

/// Largest singular value of a complex matrix.
pub fn spectral_norm(b: &CMatrix) -> f64 {
    b.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Largest singular value of a real matrix.
pub fn spectral_norm_real(b: &DMatrix<f64>) -> f64 {
    b.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Smallest singular value of a complex matrix.
pub fn sigma_min(b: &CMatrix) -> f64 {
    b.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Frobenius norm (root sum of squared entries).
pub fn frobenius_norm(b: &CMatrix) -> f64 {
    b.norm()
}

/// Trace norm: the sum of singular values.
pub fn trace_norm(b: &CMatrix) -> f64 {
    b.clone().singular_values().iter().sum()
}

pub fn frobenius_norm_real(b: &DMatrix<f64>) -> f64 {
    b.norm()
}

pub fn trace_norm_real(b: &DMatrix<f64>) -> f64 {
    b.clone().singular_values().iter().sum()}

/// Checks the minimum-gain identity `min ||Bx|| = 1 / max ||B^-1 y||` over
/// unit vectors, for invertible B. Returns both sides, computed by
/// independent routes: the smallest singular value of B, and the reciprocal
/// of the spectral norm of an explicitly formed inverse.
pub fn min_gain_identity_check(b: &CMatrix, tol: &Tolerances) -> Result<(f64, f64)> {
    let sv = b.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin <= tol.rel * smax {
        return Err(Error::Singular { sigma_min: smin });
    }
    let inv = b
        .clone()
        .try_inverse()
        .ok_or(Error::Singular { sigma_min: smin })?;
    Ok((smin, 1.0 / spectral_norm(&inv)))
}

/// True when `A A^t` and `A^t A` agree within `tol * ||A||_F^2`.
pub fn is_normal(a: &RealMatrix, tol: f64) -> bool {
    let m = a.as_dmatrix();
    let commutator = m * m.transpose() - m.transpose() * m;
    commutator.norm() <= tol * m.norm().powi(2)
}

/// For a normal matrix, the resolvent norm at z equals the reciprocal
/// distance from z to the spectrum. Returns both sides of the identity,
/// again by independent routes (inverse + SVD vs eigenvalues).
pub fn resolvent_distance_identity(
    a: &RealMatrix,
    z: Complex64,
    tol: &Tolerances,
) -> Result<(f64, f64)> {
    let eigs = eigenvalues(a)?;
    let dist = eigs
        .iter()
        .map(|l| (z - l).norm())
        .fold(f64::INFINITY, f64::min);
    let scale = a.as_dmatrix().norm().max(1.0);
    if dist <= tol.rel * scale {
        return Err(Error::ShiftInSpectrum { z, tol: tol.rel });
    }
    let n = a.n();
    let shifted = CMatrix::identity(n, n) * z - a.to_complex();
    let inv = shifted
        .try_inverse()
        .ok_or(Error::ShiftInSpectrum { z, tol: tol.rel })?;
    Ok((spectral_norm(&inv), 1.0 / dist))
}

/// Column-stacking vectorization, fixed crate-wide.
pub fn vec_mat(c: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(c.as_slice())
}

/// Inverse of [`vec_mat`] for an n^2 vector.
pub fn unvec(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v.as_slice())
}

/// Kronecker product of two real matrices.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}
