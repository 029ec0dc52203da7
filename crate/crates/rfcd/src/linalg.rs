//! Thin wrappers over the dense linear-algebra backend, plus the binary
//! matrix dump format.
//!
//! The BLAS is pinned to a single thread (parallelism in this crate lives
//! in chunked Monte Carlo, not inside BLAS) so that factorizations and
//! matrix products are bit-reproducible regardless of the `--threads`
//! setting.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use ndarray_linalg::{CholeskyFactorized, Eigh, FactorizeC, SolveC, UPLO};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Once;

extern "C" {
    fn openblas_set_num_threads(num: i32);
}

static BLAS_INIT: Once = Once::new();

/// Pin the BLAS to one thread. Idempotent; called by every entry point
/// that touches BLAS. Part of the determinism contract.
pub fn init_blas_single_thread() {
    BLAS_INIT.call_once(|| unsafe {
        openblas_set_num_threads(1);
    });
}

/// Largest matrix allocation accepted without an explicit override,
/// in bytes of f64 payload.
pub const MATRIX_BYTE_CAP: usize = 3 * 1024 * 1024 * 1024;

/// Fail with a resource error if an r×c f64 allocation exceeds the cap.
pub fn check_alloc(rows: usize, cols: usize, what: &str) -> Result<()> {
    let bytes = rows.checked_mul(cols).and_then(|n| n.checked_mul(8));
    match bytes {
        Some(b) if b <= MATRIX_BYTE_CAP => Ok(()),
        _ => Err(Error::resource(format!(
            "{what}: {rows}×{cols} f64 exceeds the {} MiB matrix cap",
            MATRIX_BYTE_CAP / (1024 * 1024)
        ))),
    }
}

/// In-place symmetrization M ← (M + Mᵀ)/2 to kill roundoff skew.
pub fn symmetrize(m: &mut Array2<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Maximum relative asymmetry max|M−Mᵀ| / max|M|.
pub fn relative_asymmetry(m: &Array2<f64>) -> f64 {
    let mut max_abs = 0.0f64;
    let mut max_skew = 0.0f64;
    let n = m.nrows();
    for i in 0..n {
        for j in i..n {
            max_abs = max_abs.max(m[(i, j)].abs()).max(m[(j, i)].abs());
            max_skew = max_skew.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if max_abs == 0.0 {
        0.0
    } else {
        max_skew / max_abs
    }
}

/// Ascending eigendecomposition of a symmetric matrix.
pub fn sym_eigh(m: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    init_blas_single_thread();
    m.eigh(UPLO::Lower)
        .map_err(|e| Error::numerical(format!("symmetric eigensolve failed: {e}")))
}

/// Cholesky factorization handle for repeated solves against an SPD matrix.
pub struct SymFactor {
    factor: CholeskyFactorized<ndarray::OwnedRepr<f64>>,
}

impl SymFactor {
    pub fn new(m: &Array2<f64>) -> Result<Self> {
        init_blas_single_thread();
        let factor = m
            .factorizec(UPLO::Lower)
            .map_err(|e| Error::numerical(format!("Cholesky factorization failed (matrix not positive definite?): {e}")))?;
        Ok(SymFactor { factor })
    }

    pub fn solve_vec(&self, b: &Array1<f64>) -> Result<Array1<f64>> {
        self.factor
            .solvec(b)
            .map_err(|e| Error::numerical(format!("triangular solve failed: {e}")))
    }

    /// Solve A·X = B column-by-column for a tall RHS.
    pub fn solve_mat(&self, b: &Array2<f64>) -> Result<Array2<f64>> {
        let (rows, cols) = b.dim();
        check_alloc(rows, cols, "solve_mat result")?;
        let mut out = Array2::<f64>::zeros((rows, cols));
        for j in 0..cols {
            let col = b.column(j).to_owned();
            let x = self.solve_vec(&col)?;
            out.column_mut(j).assign(&x);
        }
        Ok(out)
    }
}

const MAGIC: &[u8; 4] = b"RFCD";
const VERSION: u32 = 1;

/// Dump a matrix in the documented little-endian layout:
/// magic "RFCD", u32 version, u64 rows, u64 cols, row-major f64 payload.
pub fn write_matrix_binary(path: &Path, m: &Array2<f64>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        f.write_all(&(m.nrows() as u64).to_le_bytes())?;
        f.write_all(&(m.ncols() as u64).to_le_bytes())?;
        for row in m.rows() {
            for &v in row {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_matrix_binary(path: &Path) -> Result<Array2<f64>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::validation(format!("{}: bad magic", path.display())));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::validation(format!("unsupported dump version {version}")));
    }
    let mut u64buf = [0u8; 8];
    f.read_exact(&mut u64buf)?;
    let rows = u64::from_le_bytes(u64buf) as usize;
    f.read_exact(&mut u64buf)?;
    let cols = u64::from_le_bytes(u64buf) as usize;
    check_alloc(rows, cols, "binary matrix load")?;
    let mut data = vec![0.0f64; rows * cols];
    let mut f64buf = [0u8; 8];
    for slot in data.iter_mut() {
        f.read_exact(&mut f64buf)?;
        *slot = f64::from_le_bytes(f64buf);
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::validation(format!("shape error: {e}")))
}
