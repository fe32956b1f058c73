//! Small dense linear-algebra helpers shared by the numerical modules.
//!
//! Matrices here are tiny (d ≤ 64), so everything is dense and allocation is
//! not a concern outside the per-path hot loops, which use the slice kernels
//! at the bottom of this file.

use nalgebra::{Cholesky, Complex, SymmetricEigen};

use crate::{Error, Mat, Result, Vector};

pub fn identity(d: usize) -> Mat {
    Mat::identity(d, d)
}

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// ‖M − Mᵀ‖_F.
pub fn asymmetry(m: &Mat) -> f64 {
    (m - m.transpose()).norm()
}

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(m: &Mat) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Principal (symmetric positive semi-definite) square root.
///
/// Eigenvalues down to `-1e-10 · (1 + ‖m‖)` are clamped to zero; anything more
/// negative is reported as a numerical error at `time`.
pub fn sqrt_psd(m: &Mat, time: f64) -> Result<Mat> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let floor = -1e-10 * (1.0 + m.norm());
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < floor {
            return Err(Error::numerical(time, format!("matrix not PSD (eigenvalue {v:.3e})")));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * Mat::from_diagonal(&roots) * q.transpose())
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &Mat, time: f64) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or(Error::SingularCovariance(time))
}

/// Solve `A x = b` for general square `A`, failing with the given time on singularity.
pub fn solve(a: &Mat, b: &Mat, time: f64) -> Result<Mat> {
    a.clone()
        .lu()
        .solve(b)
        .filter(is_finite)
        .ok_or_else(|| Error::numerical(time, "singular matrix in linear solve"))
}

pub fn inverse(a: &Mat, time: f64) -> Result<Mat> {
    solve(a, &identity(a.nrows()), time)
}

/// Complex eigenvalues of a real square matrix.
pub fn eigenvalues(m: &Mat) -> Vec<Complex<f64>> {
    m.complex_eigenvalues().iter().copied().collect()
}

/// Solve `f X + X fᵀ = c` by vectorising into a d²×d² dense system.
///
/// With column-major `vec`, `vec(f X) = (I ⊗ f) vec X` and
/// `vec(X fᵀ) = (f ⊗ I) vec X`.
pub fn solve_sylvester_self(f: &Mat, c: &Mat) -> Result<Mat> {
    let d = f.nrows();
    if f.ncols() != d || c.nrows() != d || c.ncols() != d {
        return Err(Error::Dimension { expected: d, got: c.nrows() });
    }
    let scale = 1.0 + f.norm();
    let eig = eigenvalues(f);
    let mut worst: Option<(Complex<f64>, Complex<f64>, f64)> = None;
    for (i, a) in eig.iter().enumerate() {
        for b in eig.iter().skip(i) {
            let s = (a + b).norm();
            if worst.map_or(true, |w| s < w.2) {
                worst = Some((*a, *b, s));
            }
        }
    }
    if let Some((a, b, s)) = worst {
        if s <= 1e-10 * scale {
            return Err(Error::SingularSylvester { first: fmt_complex(a), second: fmt_complex(b), sum: s });
        }
    }
    let eye = identity(d);
    let op = eye.kronecker(f) + f.kronecker(&eye);
    let rhs = Mat::from_column_slice(d * d, 1, c.as_slice());
    let sol = op.lu().solve(&rhs).filter(is_finite).ok_or_else(|| {
        let (a, b, s) = worst.unwrap_or_default();
        Error::SingularSylvester { first: fmt_complex(a), second: fmt_complex(b), sum: s }
    })?;
    Ok(Mat::from_column_slice(d, d, sol.as_slice()))
}

fn fmt_complex(z: Complex<f64>) -> String {
    if z.im == 0.0 {
        format!("{:.6}", z.re)
    } else {
        format!("{:.6}{:+.6}i", z.re, z.im)
    }
}

/// Orthonormality defect of the columns of `m`: ‖mᵀm − I‖_F.
pub fn gram_defect(m: &Mat) -> f64 {
    (m.transpose() * m - identity(m.ncols())).norm()
}

pub fn max_abs(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

// Slice kernels for the per-path loops. Matrices are row-major `d*d` slices.

pub(crate) fn to_row_major(m: &Mat) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * m.ncols());
    for i in 0..d {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[inline]
pub(crate) fn matvec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &a[i * d..(i + 1) * d];
        *o = row.iter().zip(x).map(|(r, v)| r * v).sum();
    }
}
