//! The MESA estimator: an outer majorization-minimization loop over the
//! stochastic ML criterion, each step a rank-constrained semidefinite
//! program solved by ADMM.
//!
//! Per outer iteration the log-det term is linearized at the previous
//! covariance, giving weight `W = Gamma^T R_{Omega,j-1}^{-1} Gamma`, and the
//! surrogate is rewritten as
//!
//! ```text
//! min tr(W T t) + tr(X) + 2 sqrt(tr W) ||Y_Omega - Z_Omega||_F
//! s.t. Q = [[X, Z^H], [Z, T t]],  Q PSD with rank <= K
//! ```
//!
//! which splits into closed-form ADMM updates (see [`admm_step`]).

mod admm;
mod solver;

pub use admm::{admm_step, run_admm, AdmmOutcome, Residuals};
pub use solver::{ground_truth_nll, initialize, solve, solve_covariance, SolveReport};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::ArrayGeometry;
use crate::linalg::{cholesky, frob, logdet_hpd, CMat};
use crate::toeplitz::{materialize, ToeplitzParam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Number of sources `K`.
    pub k: usize,
    /// ADMM penalty.
    pub mu: f64,
    /// Residual balancing: double or halve `mu` when the primal/dual residual
    /// ratio leaves `[1/10, 10]`.
    pub adaptive_mu: bool,
    /// Factor applied to `mu` every 10 sweeps once ADMM has run 100 sweeps
    /// with balanced residuals; 1 disables it.
    pub stall_mu_growth: f64,
    /// Relative change of the negative log-likelihood that stops the MM loop.
    pub mm_tol: f64,
    pub mm_max_iters: usize,
    pub admm_abs_tol: f64,
    pub admm_rel_tol: f64,
    pub admm_max_iters: usize,
    /// If `lambda_K / lambda_min` of the sample covariance is below this, the
    /// first MM iteration starts from the identity instead of the sample
    /// covariance.
    pub init_eig_ratio_threshold: f64,
    /// Stop after the first MM iteration (MESA-1).
    pub single_mm_iteration: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            k: 1,
            mu: 1.0,
            adaptive_mu: true,
            stall_mu_growth: 1.1,
            mm_tol: 1e-5,
            mm_max_iters: 20,
            admm_abs_tol: 1e-4,
            admm_rel_tol: 1e-5,
            admm_max_iters: 1000,
            init_eig_ratio_threshold: 5.0,
            single_mm_iteration: false,
        }
    }
}

impl SolverConfig {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    pub fn mesa1(mut self) -> Self {
        self.single_mm_iteration = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return invalid("source count k must be at least 1");
        }
        let positive = [self.mu, self.mm_tol, self.admm_abs_tol, self.admm_rel_tol, self.init_eig_ratio_threshold];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return invalid("penalty and tolerances must be positive");
        }
        if !(self.stall_mu_growth >= 1.0) || !self.stall_mu_growth.is_finite() {
            return invalid("stall_mu_growth must be at least 1");
        }
        if self.mm_max_iters == 0 || self.admm_max_iters == 0 {
            return invalid("iteration budgets must be positive");
        }
        Ok(())
    }
}

/// ADMM variables. With `c` columns in `Y`, `x` is `c x c`, `z` is `N x c`
/// and `q`, `lambda` are `(c + N) x (c + N)` with blocks
/// `[[Q1, Q2^H], [Q2, Q3]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t: ToeplitzParam,
    pub x: CMat,
    pub z: CMat,
    pub q: CMat,
    pub lambda: CMat,
    pub sigma: f64,
    pub w: CMat,
    pub mu: f64,
    /// `sqrt(tr W)`, cached per MM iteration.
    pub sqrt_tr_w: f64,
}

impl SolverState {
    pub fn zeros(n: usize, c: usize) -> Self {
        Self {
            t: ToeplitzParam::zeros(n),
            x: CMat::zeros(c, c),
            z: CMat::zeros(n, c),
            q: CMat::zeros(c + n, c + n),
            lambda: CMat::zeros(c + n, c + n),
            sigma: 0.0,
            w: CMat::zeros(n, n),
            mu: 1.0,
            sqrt_tr_w: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.t.n()
    }

    pub fn c(&self) -> usize {
        self.x.nrows()
    }

    /// Replaces `W` and refreshes the cached `sqrt(tr W)`.
    pub fn set_weight(&mut self, w: CMat) {
        self.sqrt_tr_w = crate::linalg::trace_re(&w).max(0.0).sqrt();
        self.w = w;
    }

    /// `[[X, Z^H], [Z, T t]]`.
    pub fn stacked(&self) -> CMat {
        let (n, c) = (self.n(), self.c());
        let mut b = CMat::zeros(c + n, c + n);
        b.view_mut((0, 0), (c, c)).copy_from(&self.x);
        b.view_mut((c, 0), (n, c)).copy_from(&self.z);
        b.view_mut((0, c), (c, n)).copy_from(&self.z.adjoint());
        b.view_mut((c, c), (n, n)).copy_from(&materialize(&self.t));
        b
    }
}

/// `ln det R_Omega + tr(R_Omega^{-1} R_hat)` with `R_Omega = Gamma (T t) Gamma^T + sigma I`.
pub fn nll(t: &ToeplitzParam, sigma: f64, r_hat: &CMat, g: &ArrayGeometry) -> Result<f64> {
    if t.n() != g.aperture_n() {
        return invalid(format!("Toeplitz size {} does not match aperture {}", t.n(), g.aperture_n()));
    }
    let mut r = g.principal(&materialize(t));
    for i in 0..r.nrows() {
        r[(i, i)].re += sigma;
    }
    nll_of_covariance(&r, r_hat)
}

pub(crate) fn nll_of_covariance(r: &CMat, r_hat: &CMat) -> Result<f64> {
    let chol = cholesky(r).ok_or_else(|| Error::Domain("model covariance is not positive definite".into()))?;
    let sol = chol.solve(r_hat);
    let tr: f64 = (0..r.nrows()).map(|i| sol[(i, i)].re).sum();
    Ok(logdet_hpd(&chol) + tr)
}

/// Proximal operator of `beta ||.||_F`: `(1 - beta / ||l||_F)_+ l`.
pub fn shrinkage(l: &CMat, beta: f64) -> CMat {
    let norm = frob(l);
    if norm == 0.0 || norm <= beta {
        return CMat::zeros(l.nrows(), l.ncols());
    }
    l.map(|z| z * (1.0 - beta / norm))
}

/// Closed-form noise power `||Y_Omega - Z_Omega||_F / sqrt(tr W)`.
pub fn sigma_from_state(state: &SolverState, y_omega: &CMat, g: &ArrayGeometry) -> Result<f64> {
    if !(state.sqrt_tr_w > 0.0) {
        return Err(Error::Domain("tr(W) must be positive".into()));
    }
    let zo = g.select_rows(&state.z);
    Ok(frob(&(y_omega - zo)) / state.sqrt_tr_w)
}
