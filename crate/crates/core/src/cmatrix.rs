//! Small dense complex matrices for per-subcarrier channel algebra.

use num_complex::Complex64;

pub type C64 = Complex64;

/// Row-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        CMatrix { rows, cols, data }
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self::from_rows(rows, cols, data.iter().map(|v| C64::new(*v, 0.0)).collect())
    }

    pub fn diag(values: &[f64], rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for (i, v) in values.iter().enumerate().take(rows.min(cols)) {
            m[(i, i)] = C64::new(*v, 0.0);
        }
        m
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for p in 0..self.cols {
                let a = self[(i, p)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(p, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, x.len(), "matvec shape");
        (0..self.rows).map(|i| (0..self.cols).map(|j| self[(i, j)] * x[j]).sum()).collect()
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self::from_rows(self.rows, self.cols, self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_rows(self.rows, self.cols, self.data.iter().map(|v| v * s).collect())
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[C64]) {
        for (i, v) in col.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    /// `‖A^H A − I‖_F`.
    pub fn unitarity_residual(&self) -> f64 {
        self.adjoint().matmul(self).sub(&Self::identity(self.cols)).frobenius()
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}
