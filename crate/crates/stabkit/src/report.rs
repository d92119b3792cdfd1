//! Aggregation of all stability measures for one Jacobian, with the
//! self-checked ordering chain.

use num_complex::Complex64;
use serde_json::{json, Value};

use crate::config::Tolerances;
use crate::destabilizer::{
    destabilizing_stochastic_perturbation, perturbed_lift_abscissa, DestabilizerCertificate,
};
use crate::error::Result;
use crate::io::matrix_to_json;
use crate::lifted::white_noise_dynamical_stability;
use crate::linalg::{
    is_normal, spectral_abscissa, spectral_abscissa_complex, CMatrix, RealMatrix,
};
use crate::resolvent::{
    complex_stability_radius, harmonic_dynamical_stability, real_stability_radius, Perturbation,
};

/// Identity `S_DYN^h = S_STR^c` must hold row-wise to this absolute slack;
/// the two sides come from different code paths (frequency supremum vs the
/// realized certificate norm).
pub const IDENTITY_SLACK: f64 = 1e-8;
/// Ordering chain slack, absolute.
pub const CHAIN_SLACK: f64 = 1e-6;

/// All five measures plus resonance data and destabilizer certificates for
/// one Jacobian. For an unstable input only `alpha` is populated, with an
/// explanatory note.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub n: usize,
    pub alpha: f64,
    pub is_normal: bool,
    pub measures: Option<Measures>,
    pub error_note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Measures {
    pub sdyn_h: f64,
    pub sstr_c: f64,
    pub sstr_real_c: f64,
    pub sdyn_w: f64,
    pub sstr_w: f64,
    pub omega_star: f64,
    pub real_radius_converged: bool,
    pub worst_sigma: nalgebra::DMatrix<f64>,
    pub worst_response: nalgebra::DMatrix<f64>,
    pub certificates: Option<Certificates>,
}

/// Boundary witnesses: the rank-one complex matrix for the harmonic radius,
/// the real matrix for the real radius, and the internal-noise operator for
/// the stochastic radius.
#[derive(Debug, Clone)]
pub struct Certificates {
    pub harmonic: CMatrix,
    pub harmonic_boundary_alpha: f64,
    pub real: nalgebra::DMatrix<f64>,
    pub real_boundary_alpha: f64,
    pub stochastic: DestabilizerCertificate,
    pub stochastic_boundary_alpha: f64,
}

/// Computes the full report. `with_certificates` controls whether the
/// destabilizer matrices are embedded (they are always computed, since the
/// stochastic measure is read off the constructed perturbation).
pub fn measures(
    a: &RealMatrix,
    tol: &Tolerances,
    with_certificates: bool,
) -> Result<StabilityReport> {
    let alpha = spectral_abscissa(a)?;
    let normal = is_normal(a, tol.rel);
    let margin = tol.stability_margin * a.as_dmatrix().norm().max(1.0);
    if alpha > -margin {
        let note = if alpha >= margin {
            format!("unstable equilibrium (alpha = {alpha:.6e}); only alpha is reported")
        } else {
            format!("marginally stable (alpha = {alpha:.3e}); measures diverge at the boundary")
        };
        return Ok(StabilityReport {
            n: a.n(),
            alpha,
            is_normal: normal,
            measures: None,
            error_note: Some(note),
        });
    }

    let resonance = harmonic_dynamical_stability(a, tol)?;
    let complex_radius = complex_stability_radius(a, tol)?;
    let real_radius = real_stability_radius(a, tol)?;
    let wn = white_noise_dynamical_stability(a, tol)?;
    let stochastic = destabilizing_stochastic_perturbation(a, tol)?;

    let harmonic_cert = match &complex_radius.certificate {
        Perturbation::Complex(p) => p.clone(),
        Perturbation::Real(p) => p.map(|x| Complex64::new(x, 0.0)),
    };
    let real_cert = match &real_radius.certificate {
        Perturbation::Real(p) => p.clone(),
        Perturbation::Complex(_) => unreachable!("real radius certificate is real"),
    };
    let certificates = if with_certificates {
        Some(Certificates {
            harmonic_boundary_alpha: spectral_abscissa_complex(
                &(a.to_complex() + &harmonic_cert),
            )?,
            harmonic: harmonic_cert,
            real_boundary_alpha: spectral_abscissa(&RealMatrix::new(
                a.as_dmatrix() + &real_cert,
            )?)?,
            real: real_cert,
            stochastic_boundary_alpha: perturbed_lift_abscissa(a, &stochastic.perturbation)?,
            stochastic: stochastic.clone(),
        })
    } else {
        None
    };

    Ok(StabilityReport {
        n: a.n(),
        alpha,
        is_normal: normal,
        measures: Some(Measures {
            sdyn_h: resonance.sdyn_h,
            sstr_c: complex_radius.radius,
            sstr_real_c: real_radius.radius,
            sdyn_w: wn.sdyn_w,
            sstr_w: stochastic.perturbation.op_norm(),
            omega_star: resonance.omega_star,
            real_radius_converged: real_radius.converged,
            worst_sigma: wn.worst_sigma.as_dmatrix().clone(),
            worst_response: wn.worst_response.as_dmatrix().clone(),
            certificates,
        }),
        error_note: None,
    })
}

impl StabilityReport {
    /// Violations of the measure identities and the ordering chain. Empty
    /// for a healthy report; the CLI turns a non-empty list into exit
    /// code 3.
    pub fn chain_violations(&self) -> Vec<String> {
        let Some(m) = &self.measures else {
            return Vec::new();
        };
        let mut v = Vec::new();
        if (m.sdyn_h - m.sstr_c).abs() > IDENTITY_SLACK {
            v.push(format!(
                "identity S_DYN^h = S_STR^c violated: {} vs {}",
                m.sdyn_h, m.sstr_c
            ));
        }
        if (m.sdyn_w - m.sstr_w).abs() > IDENTITY_SLACK {
            v.push(format!(
                "identity S_DYN^w = S_STR^w violated: {} vs {}",
                m.sdyn_w, m.sstr_w
            ));
        }
        if m.sstr_w > 2.0 * m.sstr_c + CHAIN_SLACK {
            v.push(format!(
                "ordering S_STR^w <= 2 S_STR^c violated: {} > 2 * {}",
                m.sstr_w, m.sstr_c
            ));
        }
        if m.sstr_c > m.sstr_real_c + CHAIN_SLACK {
            v.push(format!(
                "ordering S_STR^c <= S_STR^Re(c) violated: {} > {}",
                m.sstr_c, m.sstr_real_c
            ));
        }
        if m.sstr_real_c > self.alpha.abs() + CHAIN_SLACK {
            v.push(format!(
                "ordering S_STR^Re(c) <= |alpha| violated: {} > {}",
                m.sstr_real_c,
                self.alpha.abs()
            ));
        }
        v
    }

    pub fn to_json(&self) -> Value {
        let mut root = json!({
            "n": self.n,
            "alpha": self.alpha,
            "is_normal": self.is_normal,
        });
        if let Some(note) = &self.error_note {
            root["error"] = json!(note);
        }
        if let Some(m) = &self.measures {
            root["sdyn_h"] = json!(m.sdyn_h);
            root["sstr_c"] = json!(m.sstr_c);
            root["sstr_real_c"] = json!(m.sstr_real_c);
            root["sdyn_w"] = json!(m.sdyn_w);
            root["sstr_w"] = json!(m.sstr_w);
            root["omega_star"] = json!(m.omega_star);
            root["real_radius_converged"] = json!(m.real_radius_converged);
            root["worst_sigma"] = matrix_to_json(&m.worst_sigma);
            root["worst_response"] = matrix_to_json(&m.worst_response);
            let violations = self.chain_violations();
            root["chain_ok"] = json!(violations.is_empty());
            if !violations.is_empty() {
                root["chain_violations"] = json!(violations);
            }
            if let Some(c) = &m.certificates {
                root["certificates"] = json!({
                    "harmonic": complex_matrix_to_json(&c.harmonic),
                    "harmonic_boundary_alpha": c.harmonic_boundary_alpha,
                    "real": matrix_to_json(&c.real),
                    "real_boundary_alpha": c.real_boundary_alpha,
                    "stochastic_generators": c.stochastic
                        .perturbation
                        .generators()
                        .iter()
                        .map(matrix_to_json)
                        .collect::<Vec<_>>(),
                    "stochastic_op_norm": c.stochastic.perturbation.op_norm(),
                    "stochastic_generator_norm_sum": c.stochastic.perturbation.generator_norm_sum(),
                    "stochastic_kernel_residual": c.stochastic.residual,
                    "stochastic_boundary_alpha": c.stochastic_boundary_alpha,
                });
            }
        }
        root
    }
}

pub fn complex_matrix_to_json(m: &CMatrix) -> Value {
    let n = m.nrows();
    let mut re = Vec::with_capacity(n * n);
    let mut im = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            re.push(m[(i, j)].re);
            im.push(m[(i, j)].im);
        }
    }
    json!({ "n": n, "re": re, "im": im })
}
