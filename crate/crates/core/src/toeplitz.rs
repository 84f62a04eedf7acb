//! Hermitian Toeplitz parameterization and Vandermonde (Caratheodory)
//! retrieval of frequencies and powers.
//!
//! A [`ToeplitzParam`] stores `t_0` (real) and `t_1..t_{N-1}`; the matrix is
//! `T[i][j] = t_{i-j}` with `t_{-j} = conj(t_j)`. The parameter space carries
//! the real inner product of the full vector `(t_{1-N}, ..., t_{N-1})`, i.e.
//! `<t, u> = t_0 u_0 + 2 Re sum_{j>0} conj(t_j) u_j`, which makes
//! [`adjoint`] the exact adjoint of [`materialize`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{check_freqs, wrap_freq, ArrayGeometry};
use crate::linalg::{c64, poly_roots, CMat, HermitianEig, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzParam {
    pub t0: f64,
    pub t_pos: Vec<C64>,
}

impl ToeplitzParam {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1, "Toeplitz dimension must be positive");
        Self { t0: 0.0, t_pos: vec![c64(0.0, 0.0); n - 1] }
    }

    /// Builds `t` from its first column `(t_0, t_1, ..., t_{N-1})`; the
    /// imaginary part of `t_0` is dropped.
    pub fn from_first_column(col: &[C64]) -> Self {
        Self { t0: col[0].re, t_pos: col[1..].to_vec() }
    }

    /// `t` of `A(f) diag(p) A(f)^H` on an `n`-element ULA.
    pub fn from_spectrum(n: usize, freqs: &[f64], powers: &[f64]) -> Self {
        let mut t = Self::zeros(n);
        for (&f, &p) in freqs.iter().zip(powers) {
            t.t0 += p;
            for (j, tj) in t.t_pos.iter_mut().enumerate() {
                let ph = 2.0 * PI * f * (j + 1) as f64;
                *tj += c64(ph.cos(), ph.sin()) * p;
            }
        }
        t
    }

    pub fn n(&self) -> usize {
        self.t_pos.len() + 1
    }

    /// `t_j` for `|j| < N`.
    pub fn lag(&self, j: isize) -> C64 {
        match j {
            0 => c64(self.t0, 0.0),
            j if j > 0 => self.t_pos[j as usize - 1],
            j => self.t_pos[(-j) as usize - 1].conj(),
        }
    }

    /// Inner product on the full lag vector.
    pub fn inner(&self, other: &Self) -> f64 {
        self.t0 * other.t0
            + 2.0 * self.t_pos.iter().zip(&other.t_pos).map(|(a, b)| (a.conj() * b).re).sum::<f64>()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { t0: self.t0 * s, t_pos: self.t_pos.iter().map(|z| z * s).collect() }
    }

    pub fn add_identity(&self, s: f64) -> Self {
        Self { t0: self.t0 + s, t_pos: self.t_pos.clone() }
    }
}

/// `T t`, an N x N Hermitian Toeplitz matrix.
pub fn materialize(t: &ToeplitzParam) -> CMat {
    let n = t.n();
    CMat::from_fn(n, n, |i, j| t.lag(i as isize - j as isize))
}

/// `T^*(m)`: lag `j` collects the sum of the `j`-th subdiagonal of the
/// Hermitian part of `m`.
pub fn adjoint(m: &CMat) -> ToeplitzParam {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "adjoint needs a square matrix");
    let mut t = ToeplitzParam::zeros(n);
    t.t0 = (0..n).map(|i| m[(i, i)].re).sum();
    for d in 1..n {
        let mut s = c64(0.0, 0.0);
        for j in 0..n - d {
            // Hermitian part entry (j + d, j)
            s += (m[(j + d, j)] + m[(j, j + d)].conj()) * 0.5;
        }
        t.t_pos[d - 1] = s;
    }
    t
}

/// `(T^* T)^{-1} v`: lag `j` divided by `N - |j|`.
pub fn gram_solve(v: &ToeplitzParam) -> ToeplitzParam {
    let n = v.n();
    ToeplitzParam {
        t0: v.t0 / n as f64,
        t_pos: v.t_pos.iter().enumerate().map(|(j, z)| z / (n - j - 1) as f64).collect(),
    }
}

/// Frobenius projection onto PSD matrices of rank at most `k`: keep the
/// largest `k` positive eigenvalues.
pub fn psd_rank_projection(h: &CMat, k: usize) -> Result<CMat> {
    let n = h.nrows();
    if k == 0 || k > n {
        return invalid(format!("rank bound {k} outside [1, {n}]"));
    }
    let e = HermitianEig::new(h)?;
    let keep = e.values.iter().take(k).take_while(|&&v| v > 0.0).count();
    Ok(e.reconstruct_with(0..keep, |l| l))
}

/// Estimated spectrum. `powers` and `sigma` are absent for estimators that
/// only return frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEstimate {
    pub freqs: Vec<f64>,
    pub powers: Option<Vec<f64>>,
    pub sigma: Option<f64>,
}

impl SourceEstimate {
    /// Wraps, then sorts frequencies ascending (powers follow their frequency).
    pub fn new(freqs: Vec<f64>, powers: Option<Vec<f64>>, sigma: Option<f64>) -> Self {
        let mut idx: Vec<usize> = (0..freqs.len()).collect();
        let wrapped: Vec<f64> = freqs.iter().map(|&f| wrap_freq(f)).collect();
        idx.sort_by(|&a, &b| wrapped[a].total_cmp(&wrapped[b]));
        let freqs = idx.iter().map(|&i| wrapped[i]).collect();
        let powers = powers.map(|p| idx.iter().map(|&i| p[i].max(0.0)).collect());
        Self { freqs, powers, sigma: sigma.map(|s| s.max(0.0)) }
    }

    pub fn k(&self) -> usize {
        self.freqs.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RootMusicOptions {
    /// Polish each selected root angle by Newton steps on the derivative of
    /// the null spectrum. Useful when the noise subspace is exact, where the
    /// polynomial has double roots on the unit circle and raw roots are only
    /// accurate to about the square root of machine precision.
    pub refine: bool,
}

/// Root-MUSIC on a Hermitian matrix whose rows correspond to a contiguous
/// ULA. The noise subspace is spanned by the eigenvectors beyond the `k`
/// largest; the `k` roots inside (or numerically on) the unit circle closest
/// to it give the frequencies.
pub fn root_music(r: &CMat, k: usize, opts: RootMusicOptions) -> Result<Vec<f64>> {
    let n = r.nrows();
    if k == 0 || k >= n {
        return invalid(format!("root-MUSIC needs 1 <= k < N, got k={k}, N={n}"));
    }
    let e = HermitianEig::new(r)?;
    let scale = e.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 || e.values[k - 1] - e.values[k] <= 1e-8 * scale {
        let found = e.values.iter().filter(|&&v| v > e.min() + 1e-8 * scale).count().min(k);
        return Err(Error::DegenerateSpectrum { requested: k, found });
    }
    let noise = e.vectors.columns(k, n - k);
    let proj = noise * noise.adjoint();
    // coefficient of z^(d + N - 1) is the d-th superdiagonal sum of proj
    let mut coeffs = vec![c64(0.0, 0.0); 2 * n - 1];
    for r_ in 0..n {
        for c in 0..n {
            coeffs[c + n - 1 - r_] += proj[(r_, c)];
        }
    }
    let roots = poly_roots(&coeffs)?;
    let mut cand: Vec<C64> = roots.into_iter().filter(|z| z.norm() < 1.0 + 1e-7).collect();
    cand.sort_by(|a, b| (1.0 - a.norm()).abs().total_cmp(&(1.0 - b.norm()).abs()).then(a.arg().total_cmp(&b.arg())));
    let mut freqs: Vec<f64> = Vec::with_capacity(k);
    for z in cand {
        if freqs.len() == k {
            break;
        }
        let f = wrap_freq(z.arg() / (2.0 * PI));
        // a double root on the circle splits into two nearby candidates
        if freqs.iter().any(|&g| crate::geometry::freq_distance(f, g) < 1e-6) {
            continue;
        }
        freqs.push(f);
    }
    if freqs.len() < k {
        return Err(Error::DegenerateSpectrum { requested: k, found: freqs.len() });
    }
    if opts.refine {
        for f in freqs.iter_mut() {
            *f = refine_null(&coeffs, n, *f);
        }
    }
    Ok(freqs)
}

/// Null spectrum `g(f) = a(f)^H C a(f)` and its first two derivatives.
fn null_spectrum(coeffs: &[C64], n: usize, f: f64) -> (f64, f64, f64) {
    let (mut g, mut g1, mut g2) = (0.0, 0.0, 0.0);
    for (i, c) in coeffs.iter().enumerate() {
        let d = i as f64 - (n - 1) as f64;
        let w = 2.0 * PI * d;
        let e = c * C64::from_polar(1.0, w * f);
        g += e.re;
        g1 += (e * c64(0.0, w)).re;
        g2 -= e.re * w * w;
    }
    (g, g1, g2)
}

fn refine_null(coeffs: &[C64], n: usize, f0: f64) -> f64 {
    let max_step = 0.25 / n as f64;
    let mut f = f0;
    let (mut g, mut g1, mut g2) = null_spectrum(coeffs, n, f);
    for _ in 0..20 {
        if g2 <= 0.0 {
            break;
        }
        let step = (g1 / g2).clamp(-max_step, max_step);
        let cand = f - step;
        let (gc, g1c, g2c) = null_spectrum(coeffs, n, cand);
        if gc > g {
            break;
        }
        f = cand;
        (g, g1, g2) = (gc, g1c, g2c);
        if step.abs() < 1e-15 {
            break;
        }
    }
    if (f - f0).abs() > max_step {
        f0
    } else {
        wrap_freq(f)
    }
}

/// Nonnegative powers minimizing `||T - A(f) diag(p) A(f)^H||_F`.
///
/// Solves the normal equations `G p = b` with `G_kl = |a_k^H a_l|^2` and
/// `b_k = a_k^H T a_k`; negative components are clamped to zero and the
/// remaining ones re-solved until the support is stable.
pub fn fit_powers(tm: &CMat, freqs: &[f64]) -> Result<Vec<f64>> {
    let n = tm.nrows();
    let g = ArrayGeometry::ula(n)?;
    check_freqs(freqs)?;
    let a = g.steering_unchecked(freqs);
    let k = freqs.len();
    let cross = a.adjoint() * &a;
    let ta = tm * &a;
    let gram = DMatrix::from_fn(k, k, |i, j| cross[(i, j)].norm_sqr());
    let b = DVector::from_fn(k, |i, _| (a.column(i).adjoint() * ta.column(i))[(0, 0)].re);
    let mut active: Vec<usize> = (0..k).collect();
    let mut p = vec![0.0; k];
    while !active.is_empty() {
        let ga = DMatrix::from_fn(active.len(), active.len(), |i, j| gram[(active[i], active[j])]);
        let ba = DVector::from_fn(active.len(), |i, _| b[active[i]]);
        let sol = ga
            .clone()
            .cholesky()
            .map(|c| c.solve(&ba))
            .or_else(|| ga.pseudo_inverse(1e-12).ok().map(|pi| pi * &ba))
            .ok_or_else(|| Error::NumericFailure("power normal equations are singular".into()))?;
        if sol.iter().all(|&x| x >= 0.0) {
            p.iter_mut().for_each(|x| *x = 0.0);
            for (i, &ai) in active.iter().enumerate() {
                p[ai] = sol[i];
            }
            return Ok(p);
        }
        active = active.iter().zip(sol.iter()).filter(|(_, &x)| x > 0.0).map(|(&i, _)| i).collect();
    }
    Ok(vec![0.0; k])
}

/// Recovers `(f, p)` with `T t ~ A(f) diag(p) A(f)^H` from the `k` strongest
/// components, via refined root-MUSIC on `T t` and a nonnegative power fit.
pub fn vandermonde_decompose(t: &ToeplitzParam, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = t.n();
    if k == 0 || k >= n {
        return invalid(format!("decomposition needs 1 <= k < N, got k={k}, N={n}"));
    }
    let tm = materialize(t);
    let freqs = root_music(&tm, k, RootMusicOptions { refine: true })?;
    let powers = fit_powers(&tm, &freqs)?;
    let est = SourceEstimate::new(freqs, Some(powers), None);
    Ok((est.freqs, est.powers.unwrap()))
}

/// Number of eigenvalues of `T t` above `rel_tol * lambda_max`.
pub fn numerical_rank(t: &ToeplitzParam, rel_tol: f64) -> Result<usize> {
    let e = HermitianEig::new(&materialize(t))?;
    let top = e.max();
    if top <= 0.0 {
        return Ok(0);
    }
    Ok(e.values.iter().filter(|&&v| v > rel_tol * top).count())
}
