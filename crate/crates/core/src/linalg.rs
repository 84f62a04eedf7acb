//! Dense complex linear-algebra helpers shared by the estimators.

use nalgebra::linalg::{Cholesky, Schur, SymmetricEigen};
use nalgebra::{Complex, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

const EIG_EPS: f64 = 1e-15;
const EIG_MAX_ITERS: usize = 10_000;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// `(m + m^H) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).map(|z| z * 0.5)
}

/// In-place version of [`hermitian_part`] for square matrices.
pub fn symmetrize(m: &mut CMat) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in 0..i {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

/// Real Frobenius inner product `Re tr(a^H b)`.
pub fn inner_re(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn frob(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace_re(m: &CMat) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].re).sum()
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector for `values[i]`.
    pub vectors: CMat,
}

impl HermitianEig {
    pub fn new(m: &CMat) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidArgument(format!(
                "eigendecomposition of non-square {}x{} matrix",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        if n == 0 {
            return Ok(Self { values: vec![], vectors: CMat::zeros(0, 0) });
        }
        let eig = SymmetricEigen::try_new(hermitian_part(m), EIG_EPS, EIG_MAX_ITERS)
            .ok_or_else(|| Error::NumericFailure("Hermitian eigensolver did not converge".into()))?;
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure("non-finite eigenvalue".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(Self { values, vectors })
    }

    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `sum_{i in idx} w(lambda_i) u_i u_i^H`.
    pub fn reconstruct_with(&self, idx: impl IntoIterator<Item = usize>, w: impl Fn(f64) -> f64) -> CMat {
        let n = self.vectors.nrows();
        let mut out = CMat::zeros(n, n);
        for i in idx {
            let s = w(self.values[i]);
            if s == 0.0 {
                continue;
            }
            let u = self.vectors.column(i);
            for c in 0..n {
                let uc = u[c].conj() * s;
                for r in 0..n {
                    out[(r, c)] += u[r] * uc;
                }
            }
        }
        out
    }
}

/// Cholesky factor of a Hermitian positive-definite matrix.
pub fn cholesky(m: &CMat) -> Option<Cholesky<C64, Dyn>> {
    Cholesky::new(hermitian_part(m))
}

/// `ln det m` for Hermitian positive-definite `m`.
pub fn logdet_hpd(chol: &Cholesky<C64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum()
}

/// Inverse of a Hermitian positive-definite matrix, symmetrized.
pub fn inv_hpd(m: &CMat) -> Result<CMat> {
    let chol = cholesky(m).ok_or_else(|| Error::Domain("matrix is not positive definite".into()))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Roots of `sum_i coeffs[i] z^i`.
///
/// Leading and trailing zero coefficients are stripped first (trailing ones
/// are returned as exact roots at the origin). Roots come from the companion
/// matrix eigenvalues and are then polished with a few Newton steps.
pub fn poly_roots(coeffs: &[C64]) -> Result<Vec<C64>> {
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Domain("zero polynomial".into()));
    }
    let tol = 1e-13 * scale;
    let hi = coeffs.iter().rposition(|c| c.norm() > tol).unwrap();
    let lo = coeffs.iter().position(|c| c.norm() > tol).unwrap();
    let mut roots = vec![c64(0.0, 0.0); lo];
    let p = &coeffs[lo..=hi];
    let deg = p.len() - 1;
    if deg == 0 {
        return Ok(roots);
    }
    let lead = p[deg];
    let mut comp = CMat::zeros(deg, deg);
    for i in 0..deg {
        comp[(0, i)] = -p[deg - 1 - i] / lead;
        if i + 1 < deg {
            comp[(i + 1, i)] = c64(1.0, 0.0);
        }
    }
    let schur = Schur::try_new(comp, 1e-15, 100 * deg.max(10))
        .ok_or_else(|| Error::NumericFailure("companion Schur iteration did not converge".into()))?;
    let (_, t) = schur.unpack();
    for i in 0..deg {
        roots.push(polish_root(p, t[(i, i)]));
    }
    Ok(roots)
}

fn horner(p: &[C64], z: C64) -> (C64, C64) {
    let mut v = c64(0.0, 0.0);
    let mut d = c64(0.0, 0.0);
    for c in p.iter().rev() {
        d = d * z + v;
        v = v * z + c;
    }
    (v, d)
}

fn polish_root(p: &[C64], mut z: C64) -> C64 {
    let (mut fz, _) = horner(p, z);
    for _ in 0..8 {
        let (_, d) = horner(p, z);
        if d.norm() == 0.0 {
            break;
        }
        let cand = z - fz / d;
        let (fc, _) = horner(p, cand);
        if !(fc.norm() < fz.norm()) {
            break;
        }
        z = cand;
        fz = fc;
    }
    z
}
