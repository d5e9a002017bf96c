//! Dense row-major matrices and the little linear algebra the crate needs.
//!
//! Graphs here stay small (tens of nodes), so everything is plain `Vec<f64>`
//! with partial-pivot LU for solves, inverses, and log-determinants.

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Mat { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Mat::from_vec(1, 1, vec![v])
    }

    pub fn eye(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Mat { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a 1x1 matrix.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar matrix");
        self.data[0]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// `self * other`, accumulated row-by-row to keep inner loops contiguous.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = i * other.cols;
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = k * other.cols;
                for j in 0..other.cols {
                    out.data[orow + j] += a * other.data[brow + j];
                }
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!(self.shape(), other.shape(), "elementwise shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn trace(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "trace of a non-square matrix");
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Result of `lu_factor`: packed LU, pivot rows, and the permutation sign.
pub struct LuFactors {
    n: usize,
    lu: Mat,
    piv: Vec<usize>,
    sign: f64,
}

pub fn lu_factor(a: &Mat) -> Result<LuFactors> {
    assert_eq!(a.rows(), a.cols(), "LU of a non-square matrix");
    let n = a.rows();
    let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // relative pivot floor: catches numerically collinear systems, not just
    // exact singularity
    let floor = (scale * 1e-12).max(1e-300);
    let mut lu = a.clone();
    let mut piv: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for k in 0..n {
        // pivot
        let mut p = k;
        let mut best = lu[(k, k)].abs();
        for i in k + 1..n {
            let v = lu[(i, k)].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best < floor {
            return Err(Error::Singular);
        }
        if p != k {
            for j in 0..n {
                let t = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = t;
            }
            piv.swap(k, p);
            sign = -sign;
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let f = lu[(i, k)] / pivot;
            lu[(i, k)] = f;
            for j in k + 1..n {
                let delta = f * lu[(k, j)];
                lu[(i, j)] -= delta;
            }
        }
    }
    Ok(LuFactors { n, lu, piv, sign })
}

impl LuFactors {
    /// Solve `A x = b` for possibly many right-hand sides.
    pub fn solve(&self, b: &Mat) -> Mat {
        assert_eq!(b.rows(), self.n, "solve shape mismatch");
        let n = self.n;
        let k = b.cols();
        // apply row permutation
        let mut x = Mat::zeros(n, k);
        for i in 0..n {
            for j in 0..k {
                x[(i, j)] = b[(self.piv[i], j)];
            }
        }
        // forward substitution (unit lower)
        for i in 1..n {
            for l in 0..i {
                let f = self.lu[(i, l)];
                if f == 0.0 {
                    continue;
                }
                for j in 0..k {
                    let delta = f * x[(l, j)];
                    x[(i, j)] -= delta;
                }
            }
        }
        // back substitution
        for i in (0..n).rev() {
            for l in i + 1..n {
                let f = self.lu[(i, l)];
                if f == 0.0 {
                    continue;
                }
                for j in 0..k {
                    let delta = f * x[(l, j)];
                    x[(i, j)] -= delta;
                }
            }
            let d = self.lu[(i, i)];
            for j in 0..k {
                x[(i, j)] /= d;
            }
        }
        x
    }

    /// Determinant from the packed factors.
    pub fn det(&self) -> f64 {
        let mut d = self.sign;
        for i in 0..self.n {
            d *= self.lu[(i, i)];
        }
        d
    }

    /// Natural log of the determinant; errors unless the determinant is
    /// strictly positive.
    pub fn log_det(&self) -> Result<f64> {
        let det = self.det();
        if !(det > 0.0) {
            return Err(Error::NonPositiveDet { det });
        }
        let mut ld = 0.0;
        for i in 0..self.n {
            ld += self.lu[(i, i)].abs().ln();
        }
        Ok(ld)
    }

    pub fn inverse(&self) -> Mat {
        self.solve(&Mat::eye(self.n))
    }
}

/// Solve `A x = b` once.
pub fn solve(a: &Mat, b: &Mat) -> Result<Mat> {
    Ok(lu_factor(a)?.solve(b))
}

/// Invert a small matrix.
pub fn inverse(a: &Mat) -> Result<Mat> {
    Ok(lu_factor(a)?.inverse())
}
