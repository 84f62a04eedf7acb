//! Linear-array index sets on a half-wavelength grid.
//!
//! Sensor positions are 1-based indices into an `N`-element virtual ULA, so a
//! sensor at index `n` sees phase `2*pi*f*(n-1)`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{c64, CMat};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GeometryRepr", into = "GeometryRepr")]
pub struct ArrayGeometry {
    indices: Vec<usize>,
    offsets: Vec<usize>,
}

/// Config-file form: `{ ula = N }`, an explicit index list, or any string
/// accepted by [`ArrayGeometry::parse`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum GeometryRepr {
    Ula { ula: usize },
    Indices(Vec<i64>),
    Named(String),
}

impl TryFrom<GeometryRepr> for ArrayGeometry {
    type Error = crate::Error;

    fn try_from(r: GeometryRepr) -> Result<Self> {
        match r {
            GeometryRepr::Ula { ula } => ArrayGeometry::ula(ula),
            GeometryRepr::Indices(v) => ArrayGeometry::from_indices(&v),
            GeometryRepr::Named(s) => ArrayGeometry::parse(&s),
        }
    }
}

impl From<ArrayGeometry> for GeometryRepr {
    fn from(g: ArrayGeometry) -> Self {
        if g.is_ula() {
            GeometryRepr::Ula { ula: g.aperture_n() }
        } else {
            GeometryRepr::Indices(g.indices.iter().map(|&i| i as i64).collect())
        }
    }
}

impl ArrayGeometry {
    pub fn ula(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("ULA needs at least one sensor");
        }
        Ok(Self::build((1..=n).collect()))
    }

    /// Any set of distinct positive indices; order does not matter.
    pub fn from_indices(indices: &[i64]) -> Result<Self> {
        if indices.is_empty() {
            return invalid("empty index set");
        }
        if let Some(bad) = indices.iter().find(|&&i| i < 1) {
            return invalid(format!("sensor index {bad} is not positive"));
        }
        let mut v: Vec<usize> = indices.iter().map(|&i| i as usize).collect();
        v.sort_unstable();
        if v.windows(2).any(|w| w[0] == w[1]) {
            return invalid("duplicate sensor index");
        }
        Ok(Self::build(v))
    }

    fn build(indices: Vec<usize>) -> Self {
        let offsets = indices.iter().map(|i| i - 1).collect();
        Self { indices, offsets }
    }

    /// 10-element ULA used for the convergence experiments.
    pub fn ula10() -> Self {
        Self::ula(10).expect("static geometry")
    }

    /// 6-element minimum redundancy array `{1, 2, 7, 10, 12, 14}`.
    pub fn mra6() -> Self {
        Self::from_indices(&[1, 2, 7, 10, 12, 14]).expect("static geometry")
    }

    /// 8-element nested array `{1, 2, 3, 4, 5, 10, 15, 20}`.
    pub fn nested8() -> Self {
        Self::from_indices(&[1, 2, 3, 4, 5, 10, 15, 20]).expect("static geometry")
    }

    /// Resolves `ula:N`, `mra`, `nested`, or a comma-separated index list.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "mra" => return Ok(Self::mra6()),
            "nested" => return Ok(Self::nested8()),
            _ => {}
        }
        if let Some(n) = s.strip_prefix("ula:").or_else(|| s.strip_prefix("ula=")) {
            let n: usize = n.trim().parse().map_err(|_| crate::Error::InvalidArgument(format!("bad ULA size '{n}'")))?;
            return Self::ula(n);
        }
        let v = s
            .split(',')
            .map(|t| t.trim().parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| crate::Error::InvalidArgument(format!("cannot parse geometry '{s}'")))?;
        Self::from_indices(&v)
    }

    /// 1-based sensor indices, strictly increasing.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// 0-based row offsets into the virtual ULA.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// `N`, the virtual ULA length.
    pub fn aperture_n(&self) -> usize {
        *self.indices.last().unwrap()
    }

    /// `M`, the number of physical sensors.
    pub fn m(&self) -> usize {
        self.indices.len()
    }

    pub fn is_ula(&self) -> bool {
        self.m() == self.aperture_n()
    }

    /// Indices of the virtual ULA that carry no sensor (0-based).
    pub fn missing_offsets(&self) -> Vec<usize> {
        let mut present = vec![false; self.aperture_n()];
        for &o in &self.offsets {
            present[o] = true;
        }
        (0..self.aperture_n()).filter(|&o| !present[o]).collect()
    }

    /// Row-selection matrix `Gamma` (M x N) with `Gamma y = y_Omega`.
    pub fn selection_matrix(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.m(), self.aperture_n());
        for (r, &o) in self.offsets.iter().enumerate() {
            g[(r, o)] = 1.0;
        }
        g
    }

    /// Extracts rows `Omega` from an N-row matrix.
    pub fn select_rows(&self, m: &CMat) -> CMat {
        CMat::from_fn(self.m(), m.ncols(), |r, c| m[(self.offsets[r], c)])
    }

    /// `Gamma m Gamma^T`, the Omega-principal submatrix.
    pub fn principal(&self, m: &CMat) -> CMat {
        CMat::from_fn(self.m(), self.m(), |r, c| m[(self.offsets[r], self.offsets[c])])
    }

    /// `Gamma^T m Gamma`, zero-padding an M x M matrix to N x N.
    pub fn embed(&self, m: &CMat) -> CMat {
        let n = self.aperture_n();
        let mut out = CMat::zeros(n, n);
        for (r, &or) in self.offsets.iter().enumerate() {
            for (c, &oc) in self.offsets.iter().enumerate() {
                out[(or, oc)] = m[(r, c)];
            }
        }
        out
    }

    /// Steering matrix `A_Omega(f)`, entry `(r, k) = exp(i 2 pi f_k (idx_r - 1))`.
    ///
    /// Frequencies outside `[-1/2, 1/2)` are rejected; callers that want
    /// wrapping should pass them through [`wrap_freq`] first.
    pub fn steering_matrix(&self, freqs: &[f64]) -> Result<CMat> {
        check_freqs(freqs)?;
        Ok(self.steering_unchecked(freqs))
    }

    pub(crate) fn steering_unchecked(&self, freqs: &[f64]) -> CMat {
        CMat::from_fn(self.m(), freqs.len(), |r, k| {
            let ph = 2.0 * PI * freqs[k] * self.offsets[r] as f64;
            c64(ph.cos(), ph.sin())
        })
    }

    /// Longest run of consecutive indices plus one.
    ///
    /// Any `r` steering vectors restricted to a contiguous run of length `r`
    /// form a nonsingular Vandermonde matrix, so this is a certified lower
    /// bound on the spark of the atom set. It is not the exact spark.
    pub fn spark_lower_bound(&self) -> usize {
        let mut best = 1;
        let mut run = 1;
        for w in self.indices.windows(2) {
            if w[1] == w[0] + 1 {
                run += 1;
                best = best.max(run);
            } else {
                run = 1;
            }
        }
        best + 1
    }
}

impl fmt::Display for ArrayGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ula() {
            write!(f, "ula:{}", self.aperture_n())
        } else {
            let s: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
            write!(f, "{}", s.join(","))
        }
    }
}

/// Maps any real frequency into `[-1/2, 1/2)`.
pub fn wrap_freq(f: f64) -> f64 {
    let w = f - f.round();
    if w >= 0.5 {
        w - 1.0
    } else if w < -0.5 {
        w + 1.0
    } else {
        w
    }
}

/// Wrap-around distance `min(|d|, 1 - |d|)` between two frequencies.
pub fn freq_distance(a: f64, b: f64) -> f64 {
    wrap_freq(a - b).abs()
}

pub(crate) fn check_freqs(freqs: &[f64]) -> Result<()> {
    match freqs.iter().find(|f| !(-0.5..0.5).contains(*f)) {
        Some(f) => invalid(format!("frequency {f} outside [-1/2, 1/2)")),
        None => Ok(()),
    }
}
