//! Reference estimators: coarray SS-MUSIC for sparse arrays and plain
//! root-MUSIC for uniform ones.

use std::collections::BTreeMap;

use crate::error::{invalid, Error, Result};
use crate::geometry::ArrayGeometry;
use crate::linalg::{c64, CMat};
use crate::toeplitz::{materialize, root_music, RootMusicOptions, SourceEstimate, ToeplitzParam};

/// Difference coarray of an index set.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarrayStructure {
    /// All `indices[i] - indices[j]`, sorted, with multiplicity.
    pub differences: Vec<i64>,
    /// Largest `V` with `{0, 1, ..., V-1}` contained in the differences.
    pub contiguous_half_len: usize,
    /// Sensor pairs `(i, j)` (row positions in `Omega`) realizing each lag.
    pub averaging_map: BTreeMap<i64, Vec<(usize, usize)>>,
}

impl CoarrayStructure {
    pub fn new(g: &ArrayGeometry) -> Self {
        let idx = g.indices();
        let mut differences = Vec::with_capacity(idx.len() * idx.len());
        let mut averaging_map: BTreeMap<i64, Vec<(usize, usize)>> = BTreeMap::new();
        for (i, &a) in idx.iter().enumerate() {
            for (j, &b) in idx.iter().enumerate() {
                let d = a as i64 - b as i64;
                differences.push(d);
                averaging_map.entry(d).or_default().push((i, j));
            }
        }
        differences.sort_unstable();
        let contiguous_half_len = (0..).take_while(|d| averaging_map.contains_key(d)).count();
        Self { differences, contiguous_half_len, averaging_map }
    }
}

/// Coarray Toeplitz estimate of size `V`: lag `d` is the plain average of
/// the sample-covariance entries whose sensors are `d` apart.
pub fn coarray_covariance(r_hat: &CMat, g: &ArrayGeometry) -> Result<ToeplitzParam> {
    let m = g.m();
    if r_hat.shape() != (m, m) {
        return invalid(format!("sample covariance is {:?}, expected {m}x{m}", r_hat.shape()));
    }
    let co = CoarrayStructure::new(g);
    let v = co.contiguous_half_len;
    if v < 2 {
        return Err(Error::DegenerateCoarray(v));
    }
    let mut col = Vec::with_capacity(v);
    for d in 0..v as i64 {
        let pairs = &co.averaging_map[&d];
        let sum = pairs.iter().fold(c64(0.0, 0.0), |acc, &(i, j)| acc + r_hat[(i, j)]);
        col.push(sum / pairs.len() as f64);
    }
    Ok(ToeplitzParam::from_first_column(&col))
}

/// `(T + J conj(T) J) / 2` with `J` the exchange matrix.
pub fn forward_backward(t: &CMat) -> CMat {
    let n = t.nrows();
    CMat::from_fn(n, n, |i, j| (t[(i, j)] + t[(n - 1 - i, n - 1 - j)].conj()) * 0.5)
}

/// Coarray MUSIC: root-MUSIC on the forward-backward averaged coarray
/// Toeplitz matrix. Returns frequencies only.
pub fn ss_music(r_hat: &CMat, g: &ArrayGeometry, k: usize) -> Result<SourceEstimate> {
    let t = coarray_covariance(r_hat, g)?;
    if k == 0 || k >= t.n() {
        return invalid(format!("k = {k} must lie in [1, {})", t.n()));
    }
    let fb = forward_backward(&materialize(&t));
    let freqs = root_music(&fb, k, RootMusicOptions::default())?;
    Ok(SourceEstimate::new(freqs, None, None))
}

/// Root-MUSIC on the covariance of a full ULA.
pub fn rootmusic_direct(r_hat: &CMat, k: usize) -> Result<Vec<f64>> {
    let n = r_hat.nrows();
    if k == 0 || k >= n {
        return invalid(format!("k = {k} must lie in [1, {n})"));
    }
    let mut f = root_music(r_hat, k, RootMusicOptions::default())?;
    f.sort_by(f64::total_cmp);
    Ok(f)
}
