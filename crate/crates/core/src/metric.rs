//! Per-camera-pair Mahalanobis metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::dataset::CameraId;
use crate::error::{CcmError, Result};

pub const METRIC_MAGIC: &str = "ccmm";

pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    pub p: CameraId,
    pub q: CameraId,
    pub matrix: DMatrix<f64>,
}

impl MetricModel {
    pub fn identity(p: CameraId, q: CameraId, dim: usize) -> Self {
        Self {
            p,
            q,
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn symmetry_defect(&self) -> f64 {
        symmetry_defect(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        min_eigenvalue(&self.matrix)
    }

    /// Checks symmetry and positive semidefiniteness up to tolerance.
    pub fn validate(&self) -> Result<()> {
        let sym = self.symmetry_defect();
        if sym > SYMMETRY_TOLERANCE {
            return Err(CcmError::InvalidArgument(format!(
                "metric ({},{}) is not symmetric (defect {sym:e})",
                self.p, self.q
            )));
        }
        let min = self.min_eigenvalue()?;
        if min < -PSD_TOLERANCE {
            return Err(CcmError::InvalidArgument(format!(
                "metric ({},{}) is not PSD (min eigenvalue {min:e})",
                self.p, self.q
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let d = self.dim();
        let mut s = format!("{METRIC_MAGIC} 1 {} {} {d}\n", self.p, self.q);
        for i in 0..d {
            for j in 0..d {
                if j > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{:.16e}", self.matrix[(i, j)]);
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| CcmError::parse(origin, 1, "empty metric file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (p, q, d) = match fields.as_slice() {
            [METRIC_MAGIC, "1", p, q, d] => {
                let parse = |s: &str| {
                    s.parse::<u32>()
                        .map_err(|_| CcmError::parse(origin, 1, format!("invalid header field {s:?}")))
                };
                (parse(p)?, parse(q)?, parse(d)? as usize)
            }
            _ => {
                return Err(CcmError::parse(
                    origin,
                    1,
                    format!("expected header `ccmm 1 <p> <q> <d>`, found {header:?}"),
                ))
            }
        };
        if d == 0 {
            return Err(CcmError::parse(origin, 1, "dimension must be positive"));
        }
        let mut matrix = DMatrix::zeros(d, d);
        let mut row = 0;
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if row == d {
                return Err(CcmError::parse(origin, idx + 1, "more than d matrix rows"));
            }
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != d {
                return Err(CcmError::parse(
                    origin,
                    idx + 1,
                    format!("expected {d} values, found {}", vals.len()),
                ));
            }
            for (j, v) in vals.iter().enumerate() {
                matrix[(row, j)] = v
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| CcmError::parse(origin, idx + 1, format!("invalid value {v:?}")))?;
            }
            row += 1;
        }
        if row != d {
            return Err(CcmError::parse(
                origin,
                text.lines().count(),
                format!("expected {d} matrix rows, found {row}"),
            ));
        }
        Ok(Self { p, q, matrix })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| CcmError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CcmError::io(path, e))?;
        Self::from_text(&text, path)
    }
}

pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

fn eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let nonfinite = m.iter().filter(|x| !x.is_finite()).count();
    if nonfinite > 0 {
        return Err(CcmError::Eigen(format!(
            "{}x{} matrix has {nonfinite} non-finite entries",
            m.nrows(),
            m.ncols()
        )));
    }
    SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0).ok_or_else(|| {
        CcmError::Eigen(format!(
            "no convergence on {}x{} matrix (Frobenius norm {:e}, max |entry| {:e})",
            m.nrows(),
            m.ncols(),
            m.norm(),
            m.abs().max()
        ))
    })
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    let sym = (m + m.transpose()) * 0.5;
    Ok(eigen(&sym)?.eigenvalues.min())
}

/// Projection onto the PSD cone in Frobenius norm: symmetrize, clamp
/// negative eigenvalues to zero, reconstruct.
pub fn psd_project(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(psd_project_with_min(s)?.0)
}

/// As [`psd_project`], also returning the smallest retained eigenvalue.
pub(crate) fn psd_project_with_min(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if s.nrows() != s.ncols() {
        return Err(CcmError::ShapeMismatch {
            expected_rows: s.nrows(),
            expected_cols: s.nrows(),
            rows: s.nrows(),
            cols: s.ncols(),
        });
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = eigen(&sym)?;
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok((sym, eig.eigenvalues.min()));
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, k| v[(i, k)] * clamped[k]);
    let out = scaled * v.transpose();
    let out = (&out + out.transpose()) * 0.5;
    Ok((out, clamped.min()))
}
