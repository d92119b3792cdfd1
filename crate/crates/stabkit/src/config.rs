use serde::{Deserialize, Serialize};

/// Numerical tolerances and solver knobs.
///
/// One instance is threaded through every computation so that a whole
/// experiment runs under a single frozen set of parameters. All tolerances
/// are relative unless stated otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Baseline relative tolerance. Double precision keeps roughly six safe
    /// digits through the n^2 x n^2 lifted solves at desk scale.
    pub rel: f64,
    /// A matrix counts as stable only when its spectral abscissa is below
    /// `-stability_margin`; closer to zero is treated as marginally stable.
    pub stability_margin: f64,
    /// Points per decade for the coarse frequency sweep.
    pub omega_grid_per_decade: usize,
    /// Linear grid points for the coarse frequency sweep.
    pub omega_grid_linear: usize,
    /// Golden-section refinement iterations for scalar optimizations.
    pub golden_iters: usize,
    /// Bisection iterations for the Hamiltonian level-set certificate.
    pub bisection_iters: usize,
    /// Coarse grid points for the inner gamma minimization of the real
    /// stability radius.
    pub gamma_grid: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rel: 1e-9,
            stability_margin: 1e-9,
            omega_grid_per_decade: 60,
            omega_grid_linear: 400,
            golden_iters: 120,
            bisection_iters: 80,
            gamma_grid: 40,
        }
    }
}

impl Tolerances {
    pub fn with_rel(rel: f64) -> Self {
        Self {
            rel,
            stability_margin: rel,
            ..Self::default()
        }
    }

    /// Absolute tolerance for a quantity of the given magnitude scale.
    pub fn abs_for(&self, scale: f64) -> f64 {
        self.rel * scale.abs().max(1.0)
    }
}
