//! Weight initialization schemes.
//!
//! The proposed scheme writes `W = D + Z` where `D` places the critical
//! gain `omega` at exactly one column per row (`D[i][j] = omega` iff
//! `i = j mod cols`) and `Z` is i.i.d. `N(0, sigma*^2 / cols)` noise. The
//! rectangular mod rule keeps the construction well defined for any
//! shape. Xavier-uniform, He-normal, and orthogonal (QR of a Gaussian
//! with sign-fixed diagonal, gain 1) are the baselines.
//!
//! Layer matrices are pure functions of `(scheme, shape, layer index)`:
//! entries come from per-`(seed, layer, row)` substreams, so construction
//! is bit-reproducible and rows can be filled in parallel.

use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::rng::substream2;

#[derive(Debug, thiserror::Error)]
pub enum InitError {
    #[error("x_prev[{0}] is zero; the elementwise gain is undefined there, pick another coordinate")]
    ZeroCoordinate(usize),
    #[error("gain statistics are defined for the proposed scheme only")]
    NotProposed,
    #[error("coordinate index {index} out of range for width {width}")]
    BadIndex { index: usize, width: usize },
    #[error("weight container: bad magic {0:?} (expected \"OSWI\")")]
    BadMagic([u8; 4]),
    #[error("weight container: unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Initialization family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitKind {
    /// `D + Z` with `D` the modular diagonal of `omega` and `Z` i.i.d.
    /// `N(0, sigma*^2 / fan_in)`.
    Proposed { sigma_star: f64, omega: f64 },
    /// `U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))`.
    XavierUniform,
    /// `N(0, 2 / fan_in)`.
    HeNormal,
    /// Orthonormal rows or columns (whichever dimension is smaller),
    /// gain 1.
    Orthogonal,
}

/// A weight initializer: a family plus the seed its substreams derive
/// from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitScheme {
    pub kind: InitKind,
    pub seed: u64,
}

impl InitScheme {
    pub fn new(kind: InitKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    /// Builds the weight matrix for one layer. Same `(scheme, shape,
    /// layer)` always produces the identical matrix.
    pub fn init_layer(&self, rows: usize, cols: usize, layer: u64) -> Array2<f64> {
        assert!(rows >= 1 && cols >= 1, "layer shape must be nonempty");
        match self.kind {
            InitKind::Proposed { sigma_star, omega } => {
                let std = sigma_star / (cols as f64).sqrt();
                let mut w = self.fill(rows, cols, layer, |rng| {
                    if std > 0.0 {
                        let z: f64 = rng.sample(StandardNormal);
                        z * std
                    } else {
                        0.0
                    }
                });
                for i in 0..rows {
                    w[(i, i % cols)] += omega;
                }
                w
            }
            InitKind::XavierUniform => {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                self.fill(rows, cols, layer, |rng| rng.random_range(-limit..=limit))
            }
            InitKind::HeNormal => {
                let std = (2.0 / cols as f64).sqrt();
                self.fill(rows, cols, layer, |rng| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * std
                })
            }
            InitKind::Orthogonal => {
                let gauss = self.fill(rows, cols, layer, |rng| rng.sample(StandardNormal));
                orthogonalize(gauss)
            }
        }
    }

    fn fill<F>(&self, rows: usize, cols: usize, layer: u64, gen: F) -> Array2<f64>
    where
        F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
    {
        let mut data = vec![0.0_f64; rows * cols];
        let seed = self.seed;
        data.par_chunks_mut(cols).enumerate().for_each(|(row, chunk)| {
            let mut rng = substream2(seed, layer, row as u64);
            for v in chunk.iter_mut() {
                *v = gen(&mut rng);
            }
        });
        Array2::from_shape_vec((rows, cols), data).expect("shape matches buffer")
    }
}

/// Orthogonalizes a Gaussian matrix: economy Householder QR on the tall
/// orientation, diagonal signs of the triangular factor fixed positive.
fn orthogonalize(g: Array2<f64>) -> Array2<f64> {
    let (rows, cols) = g.dim();
    if rows >= cols {
        qr_orthonormal(g)
    } else {
        // `.t().to_owned()` would keep the transposed memory order; force
        // standard layout so downstream slice views hold.
        let q = qr_orthonormal(g.t().to_owned());
        let mut w = Array2::zeros((rows, cols));
        w.assign(&q.t());
        w
    }
}

/// Householder QR of a tall `n x m` matrix (`n >= m`); returns the `n x m`
/// factor with orthonormal columns, sign-fixed so the implicit `R` has a
/// positive diagonal.
fn qr_orthonormal(mut a: Array2<f64>) -> Array2<f64> {
    let (n, m) = a.dim();
    debug_assert!(n >= m);
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut diag_signs = Vec::with_capacity(m);

    for k in 0..m {
        // Householder vector for column k below the diagonal.
        let mut v: Vec<f64> = (k..n).map(|i| a[(i, k)]).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Degenerate column (probability zero for Gaussian input);
            // skip the reflection, keep the sign positive.
            reflectors.push(Vec::new());
            diag_signs.push(1.0);
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm > 0.0 {
            for x in v.iter_mut() {
                *x /= vnorm;
            }
            for j in k..m {
                let dot: f64 = (k..n).map(|i| v[i - k] * a[(i, j)]).sum();
                for i in k..n {
                    a[(i, j)] -= 2.0 * v[i - k] * dot;
                }
            }
        }
        diag_signs.push(if a[(k, k)] >= 0.0 { 1.0 } else { -1.0 });
        reflectors.push(v);
    }

    // Accumulate Q = H_0 ... H_{m-1} applied to the first m identity
    // columns.
    let mut q = Array2::<f64>::zeros((n, m));
    for k in 0..m {
        q[(k, k)] = 1.0;
    }
    for k in (0..m).rev() {
        let v = &reflectors[k];
        if v.is_empty() {
            continue;
        }
        for j in 0..m {
            let dot: f64 = (k..n).map(|i| v[i - k] * q[(i, j)]).sum();
            for i in k..n {
                q[(i, j)] -= 2.0 * v[i - k] * dot;
            }
        }
    }
    for j in 0..m {
        if diag_signs[j] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Empirical statistics of the elementwise gain
/// `a_i = (W x)_i / x_i` under the proposed scheme, plus the analytic
/// variance floor `sigma*^2 / width` and the full conditional variance.
#[derive(Clone, Copy, Debug)]
pub struct GainStatistics {
    pub mean: f64,
    pub variance: f64,
    pub variance_floor: f64,
    pub variance_conditional: f64,
}

/// Draws independent noise rows and measures the gain distribution at
/// coordinate `i` for a square `width x width` proposed layer.
pub fn gain_statistics(
    scheme: &InitScheme,
    x_prev: &[f64],
    i: usize,
    samples: usize,
    seed: u64,
) -> Result<GainStatistics, InitError> {
    let InitKind::Proposed { sigma_star, omega } = scheme.kind else {
        return Err(InitError::NotProposed);
    };
    let width = x_prev.len();
    if i >= width {
        return Err(InitError::BadIndex { index: i, width });
    }
    if x_prev[i] == 0.0 {
        return Err(InitError::ZeroCoordinate(i));
    }
    assert!(samples >= 2, "need at least two samples for a variance");

    let std = sigma_star / (width as f64).sqrt();
    let ratios: Vec<f64> = x_prev.iter().map(|&xj| xj / x_prev[i]).collect();

    let gains: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = crate::rng::substream(seed, s);
            let mut acc = omega;
            for &ratio in &ratios {
                let z: f64 = rng.sample(StandardNormal);
                acc += z * std * ratio;
            }
            acc
        })
        .collect();

    let n = samples as f64;
    let mean = gains.iter().sum::<f64>() / n;
    let variance = gains.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / (n - 1.0);

    let var_unit = sigma_star * sigma_star / width as f64;
    let ratio_sq: f64 = ratios
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, r)| r * r)
        .sum();
    Ok(GainStatistics {
        mean,
        variance,
        variance_floor: var_unit,
        variance_conditional: var_unit * (1.0 + ratio_sq),
    })
}

// ---------------------------------------------------------------------------
// OSWI weight container: magic "OSWI", then version, rows, cols as u32
// little-endian, then row-major f64 little-endian entries.
// ---------------------------------------------------------------------------

const MAGIC: [u8; 4] = *b"OSWI";
const VERSION: u32 = 1;

pub fn write_weight_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> Result<(), InitError> {
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(m.nrows() as u32)?;
    w.write_u32::<LittleEndian>(m.ncols() as u32)?;
    for v in m.iter() {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

pub fn read_weight_matrix<R: Read>(r: &mut R) -> Result<Array2<f64>, InitError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(InitError::BadMagic(magic));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(InitError::UnsupportedVersion(version));
    }
    let rows = r.read_u32::<LittleEndian>()? as usize;
    let cols = r.read_u32::<LittleEndian>()? as usize;
    let mut data = vec![0.0_f64; rows * cols];
    for v in data.iter_mut() {
        *v = r.read_f64::<LittleEndian>()?;
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape matches buffer"))
}

pub fn save_weight_matrix(path: &Path, m: &Array2<f64>) -> Result<(), InitError> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    write_weight_matrix(&mut f, m)
}

pub fn load_weight_matrix(path: &Path) -> Result<Array2<f64>, InitError> {
    let mut f = io::BufReader::new(std::fs::File::open(path)?);
    read_weight_matrix(&mut f)
}

/// Writes a vector as a 1 x n container row.
pub fn write_weight_vector<W: Write>(w: &mut W, v: &Array1<f64>) -> Result<(), InitError> {
    let m = v.clone().insert_axis(ndarray::Axis(0));
    write_weight_matrix(w, &m)
}
