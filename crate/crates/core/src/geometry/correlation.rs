use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::SimLayout;
use crate::scalar::{lit, real, to_f64, CMatrix, Real};

/// Relative tolerance on negative eigenvalues before the PSD repair kicks in.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationKind {
    SincIsotropic,
    Identity,
    CustomFile,
}

/// Spatial correlation `R` of the NLoS channel at the final layer, together
/// with its Hermitian square root used for sampling.
#[derive(Debug, Clone)]
pub struct CorrelationModel<T: Real> {
    matrix: CMatrix<T>,
    sqrt: CMatrix<T>,
    kind: CorrelationKind,
    repaired: bool,
}

impl<T: Real> CorrelationModel<T> {
    /// Sinc model or identity on the final layer of `layout`.
    pub fn from_layout(layout: &SimLayout<T>, kind: CorrelationKind) -> Result<Self> {
        let n = layout.elements_per_layer;
        let matrix = match kind {
            CorrelationKind::Identity => CMatrix::identity(n, n),
            CorrelationKind::SincIsotropic => {
                let pts = layout.final_layer();
                let two_over_lambda = lit::<T>(2.0) / layout.wavelength;
                CMatrix::from_fn(n, n, |i, j| {
                    if i == j {
                        real(T::one())
                    } else {
                        real(sinc((pts[i] - pts[j]).norm() * two_over_lambda))
                    }
                })
            }
            CorrelationKind::CustomFile => {
                return Err(SimError::Correlation(
                    "custom correlation must be loaded with `CorrelationModel::custom`".into(),
                ))
            }
        };
        Self::finish(matrix, kind)
    }

    /// Wraps a user-supplied matrix after validating shape, Hermitian symmetry
    /// and the unit diagonal.
    pub fn custom(matrix: CMatrix<T>, n: usize) -> Result<Self> {
        if matrix.shape() != (n, n) {
            return Err(SimError::Correlation(format!(
                "expected {n}x{n}, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let tol = lit::<T>(1e-9) * matrix.norm().max(T::one());
        let asym = (&matrix - matrix.adjoint()).norm();
        if asym > tol {
            return Err(SimError::Correlation(format!(
                "matrix is not Hermitian (‖R − Rᴴ‖ = {:e})",
                to_f64(asym)
            )));
        }
        for i in 0..n {
            let d = matrix[(i, i)];
            if (d.re - T::one()).abs() > lit(1e-9) || d.im.abs() > lit(1e-9) {
                return Err(SimError::Correlation(format!(
                    "diagonal entry {i} is {}{:+}j, expected 1",
                    to_f64(d.re),
                    to_f64(d.im)
                )));
            }
        }
        Self::finish(matrix, CorrelationKind::CustomFile)
    }

    fn finish(matrix: CMatrix<T>, kind: CorrelationKind) -> Result<Self> {
        let n = matrix.nrows();
        let herm = (&matrix + matrix.adjoint()) * real(lit::<T>(0.5));
        let eig = herm.clone().symmetric_eigen();
        let max_abs = eig.eigenvalues.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let min = eig.eigenvalues.iter().fold(T::max_value().unwrap(), |m, v| m.min(*v));
        if !min.is_finite() || !max_abs.is_finite() {
            return Err(SimError::Correlation("non-finite eigenvalues".into()));
        }
        let repaired = min < -lit::<T>(PSD_TOLERANCE) * max_abs;

        let clipped: Vec<T> = eig.eigenvalues.iter().map(|v| v.max(T::zero())).collect();
        let v = &eig.eigenvectors;
        let mut sqrt = v.clone();
        for (j, lam) in clipped.iter().enumerate() {
            let s = real(lam.sqrt());
            for i in 0..n {
                sqrt[(i, j)] *= s;
            }
        }
        let sqrt = &sqrt * v.adjoint();

        let matrix = if repaired {
            let mut scaled = v.clone();
            for (j, lam) in clipped.iter().enumerate() {
                for i in 0..n {
                    scaled[(i, j)] *= real(*lam);
                }
            }
            let rebuilt = &scaled * v.adjoint();
            (&rebuilt + rebuilt.adjoint()) * real(lit::<T>(0.5))
        } else {
            matrix
        };
        Ok(Self {
            matrix,
            sqrt,
            kind,
            repaired,
        })
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.matrix
    }

    /// Hermitian PSD square root, `S·S = R`.
    pub fn sqrt(&self) -> &CMatrix<T> {
        &self.sqrt
    }

    pub fn kind(&self) -> CorrelationKind {
        self.kind
    }

    /// Whether negative eigenvalues had to be clipped.
    pub fn was_repaired(&self) -> bool {
        self.repaired
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `sin(πx)/(πx)`.
pub(crate) fn sinc<T: Real>(x: T) -> T {
    if x == T::zero() {
        T::one()
    } else {
        let px = T::pi() * x;
        px.sin() / px
    }
}

/// Reads `2N²` reals (row-major, interleaved re/im). Files ending in `.bin`
/// hold little-endian `f64`; anything else is parsed as text with comma or
/// whitespace separators.
pub fn read_correlation_file(path: &Path, n: usize) -> Result<CMatrix<f64>> {
    let bytes = std::fs::read(path).map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let format_err = |message: String| SimError::Format {
        path: path.to_path_buf(),
        message,
    };
    let values: Vec<f64> = if path.extension().is_some_and(|e| e == "bin") {
        if bytes.len() % 8 != 0 {
            return Err(format_err(format!("{} bytes is not a whole number of f64", bytes.len())));
        }
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    } else {
        let text = String::from_utf8(bytes).map_err(|e| format_err(e.to_string()))?;
        text.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| format_err(format!("bad number {t:?}: {e}")))
            })
            .collect::<Result<_>>()?
    };
    if values.len() != 2 * n * n {
        return Err(SimError::Correlation(format!(
            "expected {} reals for a {n}x{n} matrix, found {}",
            2 * n * n,
            values.len()
        )));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| {
        let k = 2 * (i * n + j);
        num_complex::Complex::new(values[k], values[k + 1])
    }))
}
