use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::ArrayGeometry;
use crate::linalg::{inner_re, inv_hpd, trace_re, CMat, HermitianEig, C64};
use crate::signal::{covariance_sqrt, sample_covariance, SnapshotSet};
use crate::toeplitz::{materialize, numerical_rank, vandermonde_decompose, SourceEstimate, ToeplitzParam};

use super::{nll, nll_of_covariance, run_admm, sigma_from_state, SolverConfig, SolverState};

/// Relative eigenvalue threshold used to count the rank of the final `T t`.
const RANK_TOL: f64 = 1e-6;

/// An uphill MM step is retried this many times, each with the ADMM
/// tolerances multiplied by [`UPHILL_TIGHTENING`], before it is rejected.
const UPHILL_RETRIES: i32 = 2;
const UPHILL_TIGHTENING: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub estimate: SourceEstimate,
    /// Negative log-likelihood after each MM iteration.
    pub nll_trace: Vec<f64>,
    pub mm_iters: usize,
    pub total_admm_iters: usize,
    /// ADMM sweeps spent in each MM iteration.
    pub admm_iters: Vec<usize>,
    /// MM loop met its tolerance and no ADMM run hit the iteration cap.
    pub converged: bool,
    /// MM loop stopped on its tolerance or a rejected step rather than the
    /// iteration budget.
    pub mm_converged: bool,
    /// MM steps rejected because they would have raised the likelihood
    /// criterion; the previous iterate is kept and the loop stops.
    pub rejected_steps: usize,
    /// Whether the first MM iteration started from the identity.
    pub identity_init: bool,
    /// Eigenvalues of the final `T t` above `1e-6 lambda_max`.
    pub toeplitz_rank: usize,
    /// Fewer than `k` sources could be retrieved from `T t`.
    pub rank_deficient: bool,
    /// ADMM penalty in effect at the end.
    pub final_mu: f64,
    pub final_t: Vec<[f64; 2]>,
}

impl SolveReport {
    pub fn final_nll(&self) -> f64 {
        self.nll_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Builds the starting state and the data factor `Y_Omega` (`M x min(L, M)`).
pub fn initialize(r_hat: &CMat, snapshots: usize, cfg: &SolverConfig, g: &ArrayGeometry) -> Result<(SolverState, CMat, bool)> {
    let m = g.m();
    if r_hat.shape() != (m, m) {
        return invalid(format!("sample covariance is {:?}, expected {m}x{m}", r_hat.shape()));
    }
    let y_omega = covariance_sqrt(r_hat, snapshots)?;
    let c = y_omega.ncols();
    let n = g.aperture_n();

    let e = HermitianEig::new(r_hat)?;
    let lmin = e.min().max(0.0);
    let use_identity = cfg.k < m && e.values[cfg.k - 1] < cfg.init_eig_ratio_threshold * lmin;
    let r0 = if use_identity {
        CMat::identity(m, m)
    } else if lmin < 1e-10 * e.max() {
        ridge(r_hat, 1e-8)
    } else {
        r_hat.clone()
    };

    let mut state = SolverState::zeros(n, c);
    state.mu = cfg.mu;
    state.set_weight(g.embed(&inv_hpd(&r0)?));
    for (r, &o) in g.offsets().iter().enumerate() {
        state.z.row_mut(o).copy_from(&y_omega.row(r));
    }
    let q3 = g.embed(r_hat);
    state.q.view_mut((c, c), (n, n)).copy_from(&q3);
    // the dual of a solution carries the objective's gradient, I and W, on
    // its diagonal blocks; starting there spares ADMM growing it from zero
    state.lambda.view_mut((0, 0), (c, c)).fill_with_identity();
    state.lambda.view_mut((c, c), (n, n)).copy_from(&state.w);
    Ok((state, y_omega, use_identity))
}

/// `r + delta I` with `delta = scale * tr(r) / M`.
fn ridge(r: &CMat, scale: f64) -> CMat {
    let m = r.nrows();
    let delta = scale * trace_re(r).abs().max(f64::MIN_POSITIVE) / m as f64;
    let mut out = r.clone();
    for i in 0..m {
        out[(i, i)].re += delta;
    }
    out
}

/// `R_Omega^{-1}` embedded into N x N, with a small ridge if `R_Omega` is singular.
fn weight_for(t: &ToeplitzParam, sigma: f64, g: &ArrayGeometry) -> Result<CMat> {
    let mut r = g.principal(&materialize(t));
    for i in 0..r.nrows() {
        r[(i, i)].re += sigma;
    }
    let inv = match inv_hpd(&r) {
        Ok(inv) => inv,
        Err(_) => inv_hpd(&ridge(&r, 1e-10)).or_else(|_| {
            // T t can be slightly indefinite mid-run; lift it to PD
            let e = HermitianEig::new(&r)?;
            let lift = (-e.min()).max(0.0) + 1e-10 * e.max().abs().max(1e-300);
            let mut r2 = r.clone();
            for i in 0..r2.nrows() {
                r2[(i, i)].re += lift;
            }
            inv_hpd(&r2)
        })?,
    };
    Ok(g.embed(&inv))
}

/// Factors `(a2, b2, kappa)` for [`rescale`] that bring data of scale `s`
/// (`tr R_hat / M`) and a weight of scale `c` to unit scale. `c` is measured
/// along the data, `tr(W_Omega R_hat) / tr(R_hat)`, so near-null directions
/// of `R_hat` with huge weight do not set it.
fn unit_scaling(s: f64, c: f64) -> (f64, f64, f64) {
    let k = 1.0 / (s * c).sqrt();
    (k, (c / s).sqrt(), k)
}

/// Maps the inner problem to an equivalent one with objective scaled by
/// `kappa`: `Q -> D Q D` with `D = diag(sqrt(a2) I, sqrt(b2) I)`, the dual by
/// `kappa D^{-1} Lambda D^{-1}` and `W -> kappa W / b2`. Choosing
/// `a2 = kappa = 1/sqrt(s c)`, `b2 = sqrt(c / s)` makes `W` and the data
/// unit-scale, so a single penalty suits both diagonal blocks even when the
/// noise power is tiny. The rank-K PSD set is invariant under the congruence.
fn rescale(state: &mut SolverState, a2: f64, b2: f64, kappa: f64) {
    let (n, c) = (state.n(), state.c());
    let ab = (a2 * b2).sqrt();
    state.t = state.t.scale(b2);
    state.x *= C64::from(a2);
    state.z *= C64::from(ab);
    scale_blocks(&mut state.q, c, n, a2, ab, b2);
    scale_blocks(&mut state.lambda, c, n, kappa / a2, kappa / ab, kappa / b2);
    let w = state.w.map(|z| z * (kappa / b2));
    state.set_weight(w);
}

fn scale_blocks(m: &mut CMat, c: usize, n: usize, f1: f64, f2: f64, f3: f64) {
    for i in 0..c + n {
        for j in 0..c + n {
            let f = match (i < c, j < c) {
                (true, true) => f1,
                (false, false) => f3,
                _ => f2,
            };
            m[(i, j)] *= f;
        }
    }
}

/// An MM iterate: the ADMM Toeplitz output and its rank-K Vandermonde fit.
///
/// ADMM only meets the rank and PSD constraints up to its tolerance, and a
/// slightly indefinite `T t` next to a tiny `sigma` makes `R_Omega` nearly
/// singular and the likelihood spuriously low. Likelihood and weight are
/// therefore evaluated at the feasible fit.
struct Iterate {
    raw: ToeplitzParam,
    model: ToeplitzParam,
    sigma: f64,
    freqs: Vec<f64>,
    powers: Vec<f64>,
}

impl Iterate {
    fn fit(t: &ToeplitzParam, sigma: f64, k: usize) -> Result<Self> {
        let mut k_eff = k.min(numerical_rank(t, RANK_TOL)?.max(1));
        let (freqs, powers) = loop {
            match vandermonde_decompose(t, k_eff) {
                Ok(fp) => break fp,
                Err(Error::DegenerateSpectrum { found, .. }) if found >= 1 && found < k_eff => k_eff = found,
                Err(Error::DegenerateSpectrum { .. }) if k_eff > 1 => k_eff -= 1,
                Err(e) => return Err(e),
            }
        };
        let model = ToeplitzParam::from_spectrum(t.n(), &freqs, &powers);
        Ok(Self { raw: t.clone(), model, sigma, freqs, powers })
    }

    /// Noise power used to evaluate `R_Omega`, floored so that it stays
    /// invertible when the data are noiseless.
    fn sigma_eval(&self) -> f64 {
        self.sigma.max(1e-10 * self.model.t0.max(f64::MIN_POSITIVE))
    }
}

/// Runs MESA on a snapshot set.
pub fn solve(s: &SnapshotSet, cfg: &SolverConfig) -> Result<SolveReport> {
    solve_covariance(&sample_covariance(s), s.snapshots(), &s.geometry, cfg)
}

/// Runs MESA on a sample covariance built from `snapshots` snapshots.
pub fn solve_covariance(r_hat: &CMat, snapshots: usize, g: &ArrayGeometry, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let n = g.aperture_n();
    if cfg.k >= n {
        return invalid(format!("k = {} must be below the aperture N = {n}", cfg.k));
    }
    let (mut state, y_omega, identity_init) = initialize(r_hat, snapshots, cfg, g)?;
    let m = g.m() as f64;
    let data_scale = (trace_re(r_hat) / m).max(f64::MIN_POSITIVE);
    let y_unit = y_omega.map(|z| z / data_scale.sqrt());

    let mut nll_trace = Vec::new();
    let mut admm_iters = Vec::new();
    let mut all_admm_converged = true;
    let mut mm_converged = false;
    let mut rejected_steps = 0;
    let mut accepted: Option<Iterate> = None;

    for j in 0..cfg.mm_max_iters {
        let weight_scale = (inner_re(&g.principal(&state.w), r_hat) / (m * data_scale)).max(f64::MIN_POSITIVE);
        let (a2, b2, kappa) = unit_scaling(data_scale, weight_scale);
        let prev = nll_trace.last().copied();
        let mut inner = cfg.clone();
        let mut sweeps = 0;
        let (it, sigma, value) = loop {
            rescale(&mut state, a2, b2, kappa);
            state.mu = cfg.mu;
            let out = run_admm(&mut state, &y_unit, g, &inner);
            rescale(&mut state, 1.0 / a2, 1.0 / b2, 1.0 / kappa);
            let out = out?;
            sweeps += out.iters;

            let sigma = sigma_from_state(&state, &y_omega, g)?;
            let it = Iterate::fit(&state.t, sigma, cfg.k)?;
            let value = match nll(&it.model, it.sigma_eval(), r_hat, g) {
                Ok(v) => v,
                Err(Error::Domain(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            let uphill = prev.is_some_and(|p: f64| value > p + 1e-8 * p.abs());
            if uphill && inner.admm_abs_tol > cfg.admm_abs_tol * UPHILL_TIGHTENING.powi(UPHILL_RETRIES) * 1.5 {
                // likely an inexact inner solve: resume it with tighter tolerances
                inner.admm_abs_tol *= UPHILL_TIGHTENING;
                inner.admm_rel_tol *= UPHILL_TIGHTENING;
                continue;
            }
            all_admm_converged &= out.converged;
            break (it, sigma, value);
        };
        admm_iters.push(sweeps);

        if let Some(prev) = prev {
            if value > prev + 1e-8 * prev.abs() {
                // keep the previous iterate: an MM step must not go uphill
                rejected_steps += 1;
                mm_converged = true;
                break;
            }
        } else if !value.is_finite() {
            return Err(Error::NumericFailure("first MM iterate has singular covariance".into()));
        }
        let converged_now = nll_trace.last().is_some_and(|&prev: &f64| (value - prev).abs() / prev.abs().max(1.0) < cfg.mm_tol);
        nll_trace.push(value);
        let weight = if converged_now || cfg.single_mm_iteration || j + 1 == cfg.mm_max_iters {
            None
        } else {
            Some(weight_for(&it.model, it.sigma_eval(), g)?)
        };
        state.sigma = sigma;
        accepted = Some(it);
        match weight {
            Some(w) => {
                let c = state.c();
                let shift = &w - &state.w;
                let mut l3 = state.lambda.view_mut((c, c), (n, n));
                l3 += shift;
                state.set_weight(w);
            }
            None => {
                mm_converged = converged_now || cfg.single_mm_iteration;
                break;
            }
        }
    }

    let it = accepted.expect("at least one MM iterate");
    let toeplitz_rank = numerical_rank(&it.raw, RANK_TOL)?;
    let rank_deficient = it.freqs.len() < cfg.k;
    let (t, sigma, freqs, powers) = (it.raw, it.sigma, it.freqs, it.powers);
    let final_t = std::iter::once([t.t0, 0.0]).chain(t.t_pos.iter().map(|z| [z.re, z.im])).collect();

    Ok(SolveReport {
        estimate: SourceEstimate::new(freqs, Some(powers), Some(sigma)),
        mm_iters: nll_trace.len() + rejected_steps,
        total_admm_iters: admm_iters.iter().sum(),
        admm_iters,
        nll_trace,
        converged: mm_converged && all_admm_converged,
        mm_converged,
        rejected_steps,
        identity_init,
        toeplitz_rank,
        rank_deficient,
        final_mu: state.mu,
        final_t,
    })
}

/// NLL of the generating parameters, for comparison with solver output.
pub fn ground_truth_nll(freqs: &[f64], powers: &[f64], sigma: f64, r_hat: &CMat, g: &ArrayGeometry) -> Result<f64> {
    let a = g.steering_matrix(freqs)?;
    let mut r = CMat::zeros(g.m(), g.m());
    for (k, &p) in powers.iter().enumerate() {
        let col = a.column(k);
        r += (col * col.adjoint()).map(|z| z * p);
    }
    for i in 0..g.m() {
        r[(i, i)].re += sigma;
    }
    nll_of_covariance(&r, r_hat)
}
