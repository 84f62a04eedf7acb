use crate::error::Result;
use crate::geometry::ArrayGeometry;
use crate::linalg::{frob, symmetrize, CMat};
use crate::toeplitz::{adjoint, gram_solve, psd_rank_projection};

use super::{shrinkage, SolverConfig, SolverState};

/// Residuals of one sweep and the matching stopping thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// `||Q - [[X, Z^H], [Z, T t]]||_F`.
    pub primal: f64,
    /// `mu ||Q - Q_prev||_F`.
    pub dual: f64,
    pub eps_primal: f64,
    pub eps_dual: f64,
}

impl Residuals {
    pub fn converged(&self) -> bool {
        self.primal <= self.eps_primal && self.dual <= self.eps_dual
    }
}

/// One ADMM sweep in the order t, X, Z, Q, Lambda.
///
/// `y_omega` is the `M x c` data factor on the physical sensors. Rows of `Z`
/// on missing sensors are unconstrained by the data term and follow
/// `Q2 + Lambda2 / mu` directly.
pub fn admm_step(state: &mut SolverState, y_omega: &CMat, g: &ArrayGeometry, cfg: &SolverConfig) -> Result<Residuals> {
    let (n, c) = (state.n(), state.c());
    let mu = state.mu;
    let inv_mu = 1.0 / mu;

    // V = Q + Lambda / mu, shared by the three primal updates
    let v = &state.q + state.lambda.map(|z| z * inv_mu);

    let v3 = v.view((c, c), (n, n)).into_owned() - state.w.map(|z| z * inv_mu);
    state.t = gram_solve(&adjoint(&v3));

    let mut x = v.view((0, 0), (c, c)).into_owned();
    for i in 0..c {
        x[(i, i)].re -= inv_mu;
    }
    symmetrize(&mut x);
    state.x = x;

    let v2 = v.view((c, 0), (n, c)).into_owned();
    let v2_omega = g.select_rows(&v2);
    let l_omega = y_omega - &v2_omega;
    let z_omega = y_omega - shrinkage(&l_omega, state.sqrt_tr_w * inv_mu);
    let mut z = v2;
    for (r, &o) in g.offsets().iter().enumerate() {
        z.row_mut(o).copy_from(&z_omega.row(r));
    }
    state.z = z;

    let stacked = state.stacked();
    let mut q = psd_rank_projection(&(&stacked - state.lambda.map(|z| z * inv_mu)), cfg.k.min(n + c))?;
    symmetrize(&mut q);
    let diff = &q - &stacked;
    let dual = mu * frob(&(&q - &state.q));
    state.lambda += diff.map(|z| z * mu);
    symmetrize(&mut state.lambda);
    state.q = q;

    let dim = (n + c) as f64;
    Ok(Residuals {
        primal: frob(&diff),
        dual,
        eps_primal: dim * cfg.admm_abs_tol + cfg.admm_rel_tol * frob(&stacked).max(frob(&state.q)),
        eps_dual: dim * cfg.admm_abs_tol + cfg.admm_rel_tol * frob(&state.lambda),
    })
}

/// Sweeps after which balanced but unconverged residuals count as a stall.
const STALL_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOutcome {
    pub iters: usize,
    pub converged: bool,
    pub last: Option<Residuals>,
}

/// Runs sweeps until both residuals fall below their thresholds or the
/// iteration budget is spent. With `adaptive_mu`, every 10 sweeps `mu` is
/// doubled or halved to keep the residuals within a factor 10 of each other,
/// and after 100 sweeps it is multiplied by `stall_mu_growth` whenever they
/// already are.
pub fn run_admm(state: &mut SolverState, y_omega: &CMat, g: &ArrayGeometry, cfg: &SolverConfig) -> Result<AdmmOutcome> {
    let mut last = None;
    for it in 1..=cfg.admm_max_iters {
        let res = admm_step(state, y_omega, g, cfg)?;
        last = Some(res);
        if it % 50 == 0 {
            log::trace!("admm {it}: primal {:.3e}/{:.3e} dual {:.3e}/{:.3e} mu {}", res.primal, res.eps_primal, res.dual, res.eps_dual, state.mu);
        }
        if res.converged() {
            log::debug!("admm converged in {it}: primal {:.3e}/{:.3e} dual {:.3e}/{:.3e} mu {}", res.primal, res.eps_primal, res.dual, res.eps_dual, state.mu);
            return Ok(AdmmOutcome { iters: it, converged: true, last });
        }
        if cfg.adaptive_mu && it % 10 == 0 {
            if res.primal > 10.0 * res.dual {
                state.mu *= 2.0;
            } else if res.dual > 10.0 * res.primal {
                state.mu *= 0.5;
            } else if it >= STALL_ITERS {
                // balanced but stuck: the rank constraint makes ADMM cycle,
                // a growing penalty forces the iterates together
                state.mu *= cfg.stall_mu_growth;
            }
        }
    }
    Ok(AdmmOutcome { iters: cfg.admm_max_iters, converged: false, last })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_part, inner_re};
    use crate::signal::cn01;
    use crate::toeplitz::{materialize, ToeplitzParam};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_state(n: usize, c: usize, rng: &mut ChaCha8Rng) -> SolverState {
        let mut s = SolverState::zeros(n, c);
        let h = |d: usize, rng: &mut ChaCha8Rng| hermitian_part(&CMat::from_fn(d, d, |_, _| cn01(rng)));
        s.q = h(n + c, rng);
        s.lambda = h(n + c, rng);
        let b = CMat::from_fn(n, n, |_, _| cn01(rng));
        s.set_weight(hermitian_part(&(&b * b.adjoint())));
        s.mu = 1.7;
        s
    }

    /// Augmented Lagrangian restricted to the t-block.
    fn lagrangian_t(s: &SolverState, t: &ToeplitzParam) -> f64 {
        let (n, c) = (s.n(), s.c());
        let tm = materialize(t);
        let q3 = s.q.view((c, c), (n, n)).into_owned();
        let l3 = s.lambda.view((c, c), (n, n)).into_owned();
        let r = q3 - &tm + l3.map(|z| z / s.mu);
        inner_re(&s.w, &tm) + 0.5 * s.mu * frob(&r).powi(2)
    }

    #[test]
    fn t_update_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = ArrayGeometry::mra6();
        let mut s = random_state(14, 4, &mut rng);
        let y = CMat::from_fn(6, 4, |_, _| cn01(&mut rng));
        let before = s.clone();
        admm_step(&mut s, &y, &g, &SolverConfig::with_k(3)).unwrap();
        let t = s.t.clone();
        // central differences along every real coordinate of t
        let h = 1e-5;
        let base = lagrangian_t(&before, &t);
        let mut worst: f64 = 0.0;
        let mut probe = |f: &dyn Fn(&mut ToeplitzParam, f64)| {
            let mut tp = t.clone();
            f(&mut tp, h);
            let mut tm = t.clone();
            f(&mut tm, -h);
            let d = (lagrangian_t(&before, &tp) - lagrangian_t(&before, &tm)) / (2.0 * h);
            worst = worst.max(d.abs() / base.abs().max(1.0));
        };
        probe(&|p, e| p.t0 += e);
        for j in 0..13 {
            probe(&|p, e| p.t_pos[j].re += e);
            probe(&|p, e| p.t_pos[j].im += e);
        }
        assert!(worst < 1e-6, "gradient {worst}");
    }

    #[test]
    fn ula_z_update_matches_full_shrinkage() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let g = ArrayGeometry::ula(6).unwrap();
        let mut s = random_state(6, 3, &mut rng);
        let y = CMat::from_fn(6, 3, |_, _| cn01(&mut rng));
        let v2 = (s.q.view((3, 0), (6, 3)).into_owned() + s.lambda.view((3, 0), (6, 3)).map(|z| z / s.mu)).into_owned();
        let expect = &y - shrinkage(&(&y - &v2), s.sqrt_tr_w / s.mu);
        admm_step(&mut s, &y, &g, &SolverConfig::with_k(2)).unwrap();
        assert!(frob(&(&s.z - expect)) < 1e-13);
    }

    #[test]
    fn sla_missing_rows_follow_q2() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g = ArrayGeometry::from_indices(&[1, 2, 5]).unwrap();
        let mut s = random_state(5, 3, &mut rng);
        let y = CMat::from_fn(3, 3, |_, _| cn01(&mut rng));
        let v2 = (s.q.view((3, 0), (5, 3)).into_owned() + s.lambda.view((3, 0), (5, 3)).map(|z| z / s.mu)).into_owned();
        admm_step(&mut s, &y, &g, &SolverConfig::with_k(2)).unwrap();
        for o in g.missing_offsets() {
            for c in 0..3 {
                assert!((s.z[(o, c)] - v2[(o, c)]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn lambda_moves_by_primal_residual() {
        // Lambda changes by exactly mu (Q - stacked), so a state whose Q
        // already equals the stacked matrix is a fixed point of the update.
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let g = ArrayGeometry::ula(5).unwrap();
        let mut s = random_state(5, 2, &mut rng);
        let y = CMat::from_fn(5, 2, |_, _| cn01(&mut rng));
        let cfg = SolverConfig { adaptive_mu: false, admm_abs_tol: 1e-12, admm_rel_tol: 1e-12, admm_max_iters: 4000, ..SolverConfig::with_k(1) };
        for _ in 0..3 {
            let lambda0 = s.lambda.clone();
            let res = admm_step(&mut s, &y, &g, &cfg).unwrap();
            assert!((frob(&(&s.lambda - &lambda0)) - s.mu * res.primal).abs() < 1e-10);
        }
        let out = run_admm(&mut s, &y, &g, &cfg).unwrap();
        assert!(out.converged, "{out:?}");
        let lambda0 = s.lambda.clone();
        let res = admm_step(&mut s, &y, &g, &cfg).unwrap();
        assert!(res.primal < 1e-9);
        assert!(frob(&(&s.lambda - &lambda0)) < 1e-8);
    }

    #[test]
    fn q_iterate_has_bounded_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let g = ArrayGeometry::nested8();
        let mut s = random_state(20, 8, &mut rng);
        let y = CMat::from_fn(8, 8, |_, _| cn01(&mut rng));
        admm_step(&mut s, &y, &g, &SolverConfig::with_k(3)).unwrap();
        let e = crate::linalg::HermitianEig::new(&s.q).unwrap();
        assert!(e.values[3..].iter().all(|v| v.abs() < 1e-10 * e.max().max(1.0)));
        assert!(e.values.iter().all(|&v| v >= -1e-10));
    }
}
