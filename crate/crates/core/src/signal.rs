//! Snapshot synthesis and sample statistics.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{check_freqs, ArrayGeometry};
use crate::linalg::{c64, cholesky, symmetrize, CMat, HermitianEig, C64};

/// Declared correlation `E[x_i conj(x_j)] = c sqrt(p_i p_j)` with
/// `c = modulus * exp(i phase)`. Source indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub i: usize,
    pub j: usize,
    pub modulus: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Correlation {
    pub fn coefficient(&self) -> C64 {
        C64::from_polar(self.modulus, self.phase)
    }

    pub fn is_coherent(&self) -> bool {
        (self.modulus - 1.0).abs() < 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub freqs: Vec<f64>,
    pub powers: Vec<f64>,
    #[serde(default)]
    pub correlations: Vec<Correlation>,
}

impl SourceModel {
    pub fn uncorrelated(freqs: Vec<f64>, powers: Vec<f64>) -> Result<Self> {
        let m = Self { freqs, powers, correlations: vec![] };
        m.validate()?;
        Ok(m)
    }

    pub fn with_correlations(freqs: Vec<f64>, powers: Vec<f64>, correlations: Vec<Correlation>) -> Result<Self> {
        let m = Self { freqs, powers, correlations };
        m.validate()?;
        Ok(m)
    }

    pub fn k(&self) -> usize {
        self.freqs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.freqs.is_empty() {
            return invalid("source model has no sources");
        }
        if self.freqs.len() != self.powers.len() {
            return invalid("freqs and powers differ in length");
        }
        check_freqs(&self.freqs)?;
        let mut sorted = self.freqs.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return invalid("source frequencies must be distinct");
        }
        if self.powers.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return invalid("source powers must be positive");
        }
        for c in &self.correlations {
            if c.i >= self.k() || c.j >= self.k() || c.i == c.j {
                return invalid(format!("bad correlation pair ({}, {})", c.i, c.j));
            }
            if !(0.0..=1.0 + 1e-12).contains(&c.modulus) {
                return invalid(format!("correlation modulus {} outside [0, 1]", c.modulus));
            }
        }
        let e = HermitianEig::new(&self.covariance())?;
        if e.min() < -1e-10 * e.max().max(1.0) {
            return invalid("implied source covariance is not positive semidefinite");
        }
        Ok(())
    }

    /// The K x K source covariance implied by powers and correlations.
    pub fn covariance(&self) -> CMat {
        let k = self.k();
        let mut p = CMat::from_diagonal(&nalgebra::DVector::from_iterator(k, self.powers.iter().map(|&x| c64(x, 0.0))));
        for c in &self.correlations {
            let v = c.coefficient() * (self.powers[c.i] * self.powers[c.j]).sqrt();
            p[(c.i, c.j)] = v;
            p[(c.j, c.i)] = v.conj();
        }
        p
    }
}

/// Array output `y_Omega(l)` stacked as columns, plus optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub data: CMat,
    pub geometry: ArrayGeometry,
    pub truth: Option<Truth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub sources: SourceModel,
    pub sigma: f64,
}

impl SnapshotSet {
    pub fn new(data: CMat, geometry: ArrayGeometry, truth: Option<Truth>) -> Result<Self> {
        if data.nrows() != geometry.m() {
            return invalid(format!("data has {} rows, geometry has {} sensors", data.nrows(), geometry.m()));
        }
        if data.ncols() == 0 {
            return invalid("snapshot set needs at least one column");
        }
        Ok(Self { data, geometry, truth })
    }

    pub fn snapshots(&self) -> usize {
        self.data.ncols()
    }
}

/// Circular complex Gaussian with unit variance.
pub fn cn01(rng: &mut impl Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    c64(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    parent[i] = r;
    r
}

/// Draws a K x L matrix of source signals.
///
/// Sources joined by coherent (`|c| = 1`) correlations are realized as exact
/// scalar multiples of one representative per group; the representatives are
/// drawn jointly through a Cholesky factor of their covariance.
pub fn draw_sources(model: &SourceModel, snapshots: usize, rng: &mut impl Rng) -> Result<CMat> {
    model.validate()?;
    let k = model.k();
    let mut parent: Vec<usize> = (0..k).collect();
    for c in model.correlations.iter().filter(|c| c.is_coherent()) {
        let (a, b) = (find(&mut parent, c.i), find(&mut parent, c.j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let roots: Vec<usize> = (0..k).map(|i| find(&mut parent, i)).collect();
    let reps: Vec<usize> = (0..k).filter(|&i| roots[i] == i).collect();

    // Coherent-link coefficients relative to each representative, by walking
    // the declared coherent pairs until every group member is reached.
    let mut rel: BTreeMap<usize, C64> = reps.iter().map(|&r| (r, c64(1.0, 0.0))).collect();
    let coh: Vec<&Correlation> = model.correlations.iter().filter(|c| c.is_coherent()).collect();
    let mut changed = true;
    while changed {
        changed = false;
        for c in &coh {
            // x_j = conj(c) sqrt(p_j / p_i) x_i, and x_i = c sqrt(p_i / p_j) x_j
            let coef = c.coefficient();
            match (rel.get(&c.i).copied(), rel.get(&c.j).copied()) {
                (Some(ri), None) => {
                    rel.insert(c.j, ri * coef.conj() * (model.powers[c.j] / model.powers[c.i]).sqrt());
                    changed = true;
                }
                (None, Some(rj)) => {
                    rel.insert(c.i, rj * coef * (model.powers[c.i] / model.powers[c.j]).sqrt());
                    changed = true;
                }
                _ => {}
            }
        }
    }

    let full = model.covariance();
    let sub = CMat::from_fn(reps.len(), reps.len(), |a, b| full[(reps[a], reps[b])]);
    let factor = psd_factor(&sub)?;
    let w = CMat::from_fn(reps.len(), snapshots, |_, _| cn01(rng));
    let xr = factor * w;

    let mut x = CMat::zeros(k, snapshots);
    for i in 0..k {
        let r = reps.iter().position(|&rep| rep == roots[i]).unwrap();
        let s = rel[&i];
        for l in 0..snapshots {
            x[(i, l)] = s * xr[(r, l)];
        }
    }
    Ok(x)
}

/// `F` with `F F^H = p`; Cholesky when possible, eigen square root otherwise.
fn psd_factor(p: &CMat) -> Result<CMat> {
    if let Some(ch) = cholesky(p) {
        return Ok(ch.l());
    }
    let e = HermitianEig::new(p)?;
    if e.min() < -1e-10 * e.max().max(1.0) {
        return Err(Error::InvalidArgument("covariance is not positive semidefinite".into()));
    }
    let n = p.nrows();
    Ok(CMat::from_fn(n, n, |r, c| e.vectors[(r, c)] * e.values[c].max(0.0).sqrt()))
}

/// `A_Omega(f) X + E` with `E` white circular Gaussian of per-entry variance `sigma`.
pub fn observe(g: &ArrayGeometry, freqs: &[f64], x: &CMat, sigma: f64, rng: &mut impl Rng) -> Result<CMat> {
    if !(sigma >= 0.0) {
        return invalid("noise power must be nonnegative");
    }
    let a = g.steering_matrix(freqs)?;
    let mut y = a * x;
    if sigma > 0.0 {
        let s = sigma.sqrt();
        for v in y.iter_mut() {
            *v += cn01(rng) * s;
        }
    }
    Ok(y)
}

pub fn synthesize(
    model: &SourceModel,
    sigma: f64,
    g: &ArrayGeometry,
    snapshots: usize,
    rng: &mut impl Rng,
) -> Result<SnapshotSet> {
    if snapshots == 0 {
        return invalid("need at least one snapshot");
    }
    let x = draw_sources(model, snapshots, rng)?;
    let data = observe(g, &model.freqs, &x, sigma, rng)?;
    SnapshotSet::new(data, g.clone(), Some(Truth { sources: model.clone(), sigma }))
}

/// `(1/L) sum_l y(l) y(l)^H`, symmetrized.
pub fn sample_covariance(s: &SnapshotSet) -> CMat {
    let y = &s.data;
    let mut r = (y * y.adjoint()).map(|z| z / y.ncols() as f64);
    symmetrize(&mut r);
    r
}

/// A factor `Y` of a PSD matrix with `Y Y^H = r` and `min(L, M)` columns.
///
/// Columns are the leading eigenvectors scaled by the root eigenvalues, so
/// when `L < M` the discarded eigenvalues must already be (numerically) zero,
/// as they are for a sample covariance of `L` snapshots.
pub fn covariance_sqrt(r: &CMat, snapshots: usize) -> Result<CMat> {
    if snapshots == 0 {
        return invalid("need at least one snapshot");
    }
    let e = HermitianEig::new(r)?;
    if e.min() < -1e-10 * e.max().abs().max(1.0) {
        return invalid(format!("matrix is indefinite (min eigenvalue {:.3e})", e.min()));
    }
    let m = r.nrows();
    let c = snapshots.min(m);
    Ok(CMat::from_fn(m, c, |row, col| e.vectors[(row, col)] * e.values[col].max(0.0).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frob;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn coherent_pair_is_exact_multiple() {
        let corr = Correlation { i: 0, j: 1, modulus: 1.0, phase: PI / 3.0 };
        let m = SourceModel::with_correlations(vec![-0.2, -0.1], vec![1.0, 1.0], vec![corr]).unwrap();
        let x = draw_sources(&m, 50, &mut rng(1)).unwrap();
        let c = C64::from_polar(1.0, -PI / 3.0);
        for l in 0..50 {
            assert_eq!(x[(1, l)], c * x[(0, l)]);
        }
    }

    #[test]
    fn coherent_group_respects_unequal_powers() {
        let corr = Correlation { i: 1, j: 2, modulus: 1.0, phase: 0.4 };
        let m = SourceModel::with_correlations(vec![-0.2, 0.0, 0.2], vec![1.0, 4.0, 0.25], vec![corr]).unwrap();
        let x = draw_sources(&m, 200_000, &mut rng(2)).unwrap();
        let emp = (&x * x.adjoint()).map(|z| z / 200_000.0);
        let p = m.covariance();
        for i in 0..3 {
            for j in 0..3 {
                assert!((emp[(i, j)] - p[(i, j)]).norm() < 0.05 * (p[(i, i)].re * p[(j, j)].re).sqrt(), "({i},{j})");
            }
        }
    }

    #[test]
    fn uncorrelated_moments() {
        let m = SourceModel::uncorrelated(vec![-0.3, 0.1, 0.4], vec![1.0, 2.0, 0.5]).unwrap();
        let n = 1_000_000;
        let x = draw_sources(&m, n, &mut rng(3)).unwrap();
        let emp = (&x * x.adjoint()).map(|z| z / n as f64);
        for i in 0..3 {
            assert!((emp[(i, i)].re / m.powers[i] - 1.0).abs() < 0.01);
            for j in 0..i {
                assert!(emp[(i, j)].norm() < 0.01);
            }
        }
    }

    #[test]
    fn correlated_moments_three_sigma() {
        // Each entry of the sample covariance has standard deviation about
        // sqrt(p_i p_j / n); check every entry within 3 of those.
        let corr = Correlation { i: 0, j: 2, modulus: 0.5, phase: PI / 4.0 };
        let m = SourceModel::with_correlations(vec![-0.3, 0.1, 0.4], vec![1.0, 1.0, 1.0], vec![corr]).unwrap();
        let n = 200_000;
        let x = draw_sources(&m, n, &mut rng(4)).unwrap();
        let emp = (&x * x.adjoint()).map(|z| z / n as f64);
        let p = m.covariance();
        let sd = (1.0 / n as f64).sqrt();
        for i in 0..3 {
            for j in 0..3 {
                assert!((emp[(i, j)] - p[(i, j)]).norm() < 3.0 * sd * 1.5, "({i},{j})");
            }
        }
    }

    #[test]
    fn single_scalar_unit_power() {
        let m = SourceModel::uncorrelated(vec![0.0], vec![1.0]).unwrap();
        let mut acc = 0.0;
        for seed in 0..20_000 {
            let x = draw_sources(&m, 1, &mut rng(seed)).unwrap();
            assert_eq!(x.shape(), (1, 1));
            acc += x[(0, 0)].norm_sqr();
        }
        assert!((acc / 20_000.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let c = |i, j, ph| Correlation { i, j, modulus: 1.0, phase: ph };
        let m = SourceModel { freqs: vec![-0.2, 0.0, 0.2], powers: vec![1.0; 3], correlations: vec![c(0, 1, 0.0), c(1, 2, 0.0), c(0, 2, PI)] };
        assert!(matches!(draw_sources(&m, 4, &mut rng(0)), Err(Error::InvalidArgument(_))));
        let bad = SourceModel { freqs: vec![0.1, 0.1], powers: vec![1.0, 1.0], correlations: vec![] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn noiseless_data_in_steering_span() {
        let g = ArrayGeometry::ula(6).unwrap();
        let m = SourceModel::uncorrelated(vec![0.0], vec![2.0]).unwrap();
        let s = synthesize(&m, 0.0, &g, 10, &mut rng(5)).unwrap();
        for l in 0..10 {
            let c = s.data.column(l);
            assert!(c.iter().all(|z| (z - c[0]).norm() < 1e-14));
        }

        let g = ArrayGeometry::mra6();
        let m = SourceModel::uncorrelated(vec![-0.3, 0.2], vec![1.0, 1.0]).unwrap();
        let s = synthesize(&m, 0.0, &g, 30, &mut rng(6)).unwrap();
        let r = sample_covariance(&s);
        let e = HermitianEig::new(&r).unwrap();
        assert!(e.values[2] < 1e-12 * e.max());
    }

    #[test]
    fn experiment_two_shape() {
        let freqs = vec![-0.43, -0.28, -0.21, -0.05, 0.1, 0.26, 0.42];
        let m = SourceModel::uncorrelated(freqs, vec![1.0; 7]).unwrap();
        let s = synthesize(&m, 0.1, &ArrayGeometry::mra6(), 200, &mut rng(7)).unwrap();
        assert_eq!(s.data.shape(), (6, 200));
    }

    #[test]
    fn sample_covariance_matches_population() {
        let g = ArrayGeometry::nested8();
        let m = SourceModel::uncorrelated(vec![-0.2, 0.1, 0.3], vec![1.0, 0.5, 2.0]).unwrap();
        let sigma = 0.3;
        let s = synthesize(&m, sigma, &g, 100_000, &mut rng(8)).unwrap();
        let r = sample_covariance(&s);
        let a = g.steering_matrix(&m.freqs).unwrap();
        let pop = &a * m.covariance() * a.adjoint() + CMat::identity(8, 8).map(|z| z * sigma);
        assert!(frob(&(r - &pop)) / frob(&pop) < 0.02);
    }

    #[test]
    fn sample_covariance_small_cases() {
        let g = ArrayGeometry::ula(3).unwrap();
        let y = CMat::from_column_slice(3, 1, &[c64(1.0, 0.0), c64(0.0, 2.0), c64(-1.0, 1.0)]);
        let r = sample_covariance(&SnapshotSet::new(y.clone(), g.clone(), None).unwrap());
        assert!(frob(&(&r - &y * y.adjoint())) < 1e-15);
        assert!(HermitianEig::new(&r).unwrap().values[1].abs() < 1e-12);

        let z = sample_covariance(&SnapshotSet::new(CMat::zeros(3, 4), g.clone(), None).unwrap());
        assert_eq!(z, CMat::zeros(3, 3));

        let mut r8 = rng(9);
        let y = CMat::from_fn(3, 17, |_, _| cn01(&mut r8));
        let r = sample_covariance(&SnapshotSet::new(y.clone(), g, None).unwrap());
        let mut naive = CMat::zeros(3, 3);
        for l in 0..17 {
            for i in 0..3 {
                for j in 0..3 {
                    naive[(i, j)] += y[(i, l)] * y[(j, l)].conj();
                }
            }
        }
        assert!(frob(&(r - naive.map(|z| z / 17.0))) < 1e-12);
    }

    #[test]
    fn sqrt_reconstructs() {
        let id = CMat::identity(4, 4);
        let y = covariance_sqrt(&id, 10).unwrap();
        assert_eq!(y.shape(), (4, 4));
        assert!(frob(&(&y * y.adjoint() - &id)) < 1e-12);

        let v = CMat::from_column_slice(3, 1, &[c64(1.0, 1.0), c64(0.5, 0.0), c64(0.0, -2.0)]);
        let y = covariance_sqrt(&(&v * v.adjoint()), 3).unwrap();
        let col = y.column(0);
        let ratio = col[0] / v[0];
        for i in 0..3 {
            assert!((col[i] - v[i] * ratio).norm() < 1e-10);
        }

        let mut r8 = rng(10);
        let b = CMat::from_fn(5, 5, |_, _| cn01(&mut r8));
        let r = &b * b.adjoint();
        let y = covariance_sqrt(&r, 100).unwrap();
        assert!(frob(&(&y * y.adjoint() - &r)) < 1e-10);

        // rank-deficient sample covariance with L < M
        let g = ArrayGeometry::ula(6).unwrap();
        let data = CMat::from_fn(6, 3, |_, _| cn01(&mut r8));
        let r = sample_covariance(&SnapshotSet::new(data, g, None).unwrap());
        let y = covariance_sqrt(&r, 3).unwrap();
        assert_eq!(y.ncols(), 3);
        assert!(frob(&(&y * y.adjoint() - &r)) < 1e-10);

        let bad = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c64(1.0, 0.0), c64(-0.5, 0.0)]));
        assert!(covariance_sqrt(&bad, 2).is_err());
    }
}
