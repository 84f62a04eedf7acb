//! Binary snapshot container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "MESASNAP"
//! version  u32      1
//! m        u32      number of sensors
//! indices  m x u64  1-based sensor positions
//! n        u64      virtual ULA length (last index)
//! l        u64      number of snapshots
//! data     m*l x (f64 re, f64 im), column-major (snapshot by snapshot)
//! truth    u8 flag, then if 1:
//!          k u32, k x f64 freqs, k x f64 powers, f64 sigma,
//!          c u32, c x (u32 i, u32 j, f64 modulus, f64 phase)
//! ```

use std::io::{self, Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use mesa_core::linalg::{c64, CMat};
use mesa_core::signal::Truth;
use mesa_core::{ArrayGeometry, Correlation, SnapshotSet, SourceModel};

pub const MAGIC: &[u8; 8] = b"MESASNAP";
pub const VERSION: u32 = 1;

/// Upper bound on any declared count, to reject corrupt headers before
/// allocating.
const MAX_COUNT: u64 = 1 << 32;

#[derive(Debug)]
pub enum FormatError {
    Io(io::Error),
    Invalid(String),
}

impl std::fmt::Display for FormatError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FormatError::Io(e) => write!(f, "{e}"),
            FormatError::Invalid(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for FormatError {}

impl From<io::Error> for FormatError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FormatError::Invalid("truncated snapshot file".into())
        } else {
            FormatError::Io(e)
        }
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T, FormatError> {
    Err(FormatError::Invalid(msg.into()))
}

fn count(v: u64, what: &str) -> Result<usize, FormatError> {
    if v > MAX_COUNT {
        return bad(format!("implausible {what} {v}"));
    }
    Ok(v as usize)
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> io::Result<()> {
    v.iter().try_for_each(|&x| w.write_f64::<LE>(x))
}

// grows as data arrives so a corrupt count cannot trigger a huge allocation
fn read_f64s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut v = Vec::new();
    for _ in 0..n {
        v.push(r.read_f64::<LE>()?);
    }
    Ok(v)
}

pub fn write<W: Write>(mut w: W, s: &SnapshotSet) -> io::Result<()> {
    let g = &s.geometry;
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(g.m() as u32)?;
    for &i in g.indices() {
        w.write_u64::<LE>(i as u64)?;
    }
    w.write_u64::<LE>(g.aperture_n() as u64)?;
    w.write_u64::<LE>(s.snapshots() as u64)?;
    // nalgebra storage is column-major already
    for z in s.data.iter() {
        w.write_f64::<LE>(z.re)?;
        w.write_f64::<LE>(z.im)?;
    }
    match &s.truth {
        None => w.write_u8(0)?,
        Some(t) => {
            let src = &t.sources;
            w.write_u8(1)?;
            w.write_u32::<LE>(src.k() as u32)?;
            write_f64s(&mut w, &src.freqs)?;
            write_f64s(&mut w, &src.powers)?;
            w.write_f64::<LE>(t.sigma)?;
            w.write_u32::<LE>(src.correlations.len() as u32)?;
            for c in &src.correlations {
                w.write_u32::<LE>(c.i as u32)?;
                w.write_u32::<LE>(c.j as u32)?;
                w.write_f64::<LE>(c.modulus)?;
                w.write_f64::<LE>(c.phase)?;
            }
        }
    }
    w.flush()
}

pub fn read<R: Read>(mut r: R) -> Result<SnapshotSet, FormatError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return bad("not a snapshot file (bad magic)");
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return bad(format!("unsupported snapshot version {version}"));
    }
    let m = count(r.read_u32::<LE>()? as u64, "sensor count")?;
    let mut indices = Vec::new();
    for _ in 0..m {
        indices.push(r.read_u64::<LE>()? as i64);
    }
    let geometry = ArrayGeometry::from_indices(&indices).map_err(|e| FormatError::Invalid(e.to_string()))?;
    let n = r.read_u64::<LE>()?;
    if n != geometry.aperture_n() as u64 {
        return bad(format!("header says N = {n}, indices give N = {}", geometry.aperture_n()));
    }
    let l = count(r.read_u64::<LE>()?, "snapshot count")?;
    if l == 0 {
        return bad("snapshot file holds no snapshots");
    }
    let values = m.checked_mul(l).and_then(|v| v.checked_mul(2)).ok_or_else(|| FormatError::Invalid("data block too large".into()))?;
    let raw = read_f64s(&mut r, values)?;
    let data = CMat::from_iterator(m, l, raw.chunks_exact(2).map(|p| c64(p[0], p[1])));
    let truth = match r.read_u8()? {
        0 => None,
        1 => {
            let k = count(r.read_u32::<LE>()? as u64, "source count")?;
            let freqs = read_f64s(&mut r, k)?;
            let powers = read_f64s(&mut r, k)?;
            let sigma = r.read_f64::<LE>()?;
            let nc = count(r.read_u32::<LE>()? as u64, "correlation count")?;
            let mut correlations = Vec::new();
            for _ in 0..nc {
                correlations.push(Correlation {
                    i: r.read_u32::<LE>()? as usize,
                    j: r.read_u32::<LE>()? as usize,
                    modulus: r.read_f64::<LE>()?,
                    phase: r.read_f64::<LE>()?,
                });
            }
            let sources =
                SourceModel::with_correlations(freqs, powers, correlations).map_err(|e| FormatError::Invalid(format!("truth block: {e}")))?;
            Some(Truth { sources, sigma })
        }
        f => return bad(format!("bad truth flag {f}")),
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return bad("trailing bytes after snapshot data");
    }
    SnapshotSet::new(data, geometry, truth).map_err(|e| FormatError::Invalid(e.to_string()))
}
