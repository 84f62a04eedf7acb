//! Stochastic Cramer-Rao bounds for the Gaussian array model.
//!
//! Parameters are ordered as `eta = (f_1..f_K, p_11..p_KK, [Re p_ij, Im p_ij]
//! for each declared correlated pair, sigma)`, and the Fisher information is
//! `L tr(R^{-1} dR_a R^{-1} dR_b)`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::geometry::{check_freqs, ArrayGeometry};
use crate::linalg::{c64, inv_hpd, CMat, CVec, HermitianEig};
use crate::signal::SourceModel;

/// Condition number above which the Fisher information counts as singular.
const MAX_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, PartialEq)]
pub struct CrbRequest {
    pub freqs: Vec<f64>,
    /// K x K source covariance.
    pub p: CMat,
    pub sigma: f64,
    pub geometry: ArrayGeometry,
    pub snapshots: usize,
    /// Off-diagonal entries `(i, j)`, `i != j`, of `P` treated as unknown.
    pub free_pairs: Vec<(usize, usize)>,
}

impl CrbRequest {
    pub fn uncorrelated(freqs: &[f64], powers: &[f64], sigma: f64, geometry: &ArrayGeometry, snapshots: usize) -> Result<Self> {
        let model = SourceModel::uncorrelated(freqs.to_vec(), powers.to_vec())?;
        Self::from_model(&model, sigma, geometry, snapshots)
    }

    /// Every declared correlation becomes a free complex parameter, including
    /// ones whose modulus is zero.
    pub fn from_model(model: &SourceModel, sigma: f64, geometry: &ArrayGeometry, snapshots: usize) -> Result<Self> {
        model.validate()?;
        let mut free_pairs: Vec<(usize, usize)> = model.correlations.iter().map(|c| (c.i.max(c.j), c.i.min(c.j))).collect();
        free_pairs.sort_unstable();
        free_pairs.dedup();
        let req = Self {
            freqs: model.freqs.clone(),
            p: model.covariance(),
            sigma,
            geometry: geometry.clone(),
            snapshots,
            free_pairs,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn k(&self) -> usize {
        self.freqs.len()
    }

    pub fn n_params(&self) -> usize {
        2 * self.k() + 2 * self.free_pairs.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 {
            return invalid("no sources");
        }
        check_freqs(&self.freqs)?;
        if self.p.shape() != (k, k) {
            return invalid(format!("source covariance is {:?}, expected {k}x{k}", self.p.shape()));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return invalid("noise power must be positive");
        }
        if self.snapshots == 0 {
            return invalid("need at least one snapshot");
        }
        if self.free_pairs.iter().any(|&(i, j)| i == j || i >= k || j >= k) {
            return invalid("bad correlated pair");
        }
        let e = HermitianEig::new(&self.p)?;
        if e.min() < -1e-10 * e.max().max(1.0) {
            return invalid("source covariance is not positive semidefinite");
        }
        Ok(())
    }

    /// `R_Omega = A P A^H + sigma I`.
    pub fn covariance(&self) -> Result<CMat> {
        let a = self.geometry.steering_matrix(&self.freqs)?;
        let mut r = &a * &self.p * a.adjoint();
        for i in 0..r.nrows() {
            r[(i, i)].re += self.sigma;
        }
        Ok(r)
    }
}

/// `dR / d eta_a` for every parameter, in `eta` order.
pub fn derivatives(req: &CrbRequest) -> Result<Vec<CMat>> {
    req.validate()?;
    let g = &req.geometry;
    let a = g.steering_matrix(&req.freqs)?;
    let m = g.m();
    let ap = &a * &req.p;
    let pah = &req.p * a.adjoint();
    let mut out = Vec::with_capacity(req.n_params());

    for k in 0..req.k() {
        let scale: Vec<f64> = g.offsets().iter().map(|&o| 2.0 * std::f64::consts::PI * o as f64).collect();
        let d = CVec::from_fn(m, |r, _| a[(r, k)] * c64(0.0, scale[r]));
        out.push(&d * pah.row(k) + ap.column(k) * d.adjoint());
    }
    for k in 0..req.k() {
        out.push(a.column(k) * a.column(k).adjoint());
    }
    for &(i, j) in &req.free_pairs {
        let aij = a.column(i) * a.column(j).adjoint();
        let aji = aij.adjoint();
        out.push(&aij + &aji);
        out.push((&aij - &aji).map(|z| z * c64(0.0, 1.0)));
    }
    out.push(CMat::identity(m, m));
    Ok(out)
}

/// Fisher information over `eta`.
pub fn fisher_information(req: &CrbRequest) -> Result<DMatrix<f64>> {
    let r = req.covariance()?;
    let ri = inv_hpd(&r).map_err(|_| Error::Domain("array covariance is singular".into()))?;
    let g: Vec<CMat> = derivatives(req)?.iter().map(|d| &ri * d).collect();
    let n = g.len();
    let l = req.snapshots as f64;
    let mut fim = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..=a {
            let mut v = 0.0;
            for i in 0..g[a].nrows() {
                for j in 0..g[a].ncols() {
                    v += (g[a][(i, j)] * g[b][(j, i)]).re;
                }
            }
            v *= l;
            fim[(a, b)] = v;
            fim[(b, a)] = v;
        }
    }
    Ok(fim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBound {
    /// Variance bound for each frequency, in request order.
    pub variances: Vec<f64>,
    /// `lambda_max / lambda_min` of the Fisher information.
    pub condition: f64,
}

impl FrequencyBound {
    /// `sqrt(mean(variances))`, comparable to a frequency RMSE.
    pub fn rmse(&self) -> f64 {
        (self.variances.iter().sum::<f64>() / self.variances.len() as f64).sqrt()
    }
}

/// Diagonal of the frequency block of the inverse Fisher information.
pub fn crb_freqs(req: &CrbRequest) -> Result<FrequencyBound> {
    let fim = fisher_information(req)?;
    let e = SymmetricEigen::new(fim);
    let lmax = e.eigenvalues.max();
    let lmin = e.eigenvalues.min();
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(lmax > 0.0) || condition > MAX_CONDITION {
        return Err(Error::DegenerateBound { condition });
    }
    if condition > 1e10 {
        log::warn!("Fisher information is ill-conditioned (condition {condition:.3e})");
    }
    let variances = (0..req.k())
        .map(|i| {
            e.eigenvalues
                .iter()
                .enumerate()
                .map(|(c, &lam)| e.eigenvectors[(i, c)].powi(2) / lam)
                .sum::<f64>()
        })
        .collect();
    Ok(FrequencyBound { variances, condition })
}
