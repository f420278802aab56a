//! Small dense linear algebra: row-major matrices, Cholesky and
//! Gauss-Jordan solves, and column-equilibrated normal-equation least squares.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged matrix rows".into()));
        }
        Ok(Matrix { rows: rows.len(), cols, data: rows.iter().flatten().copied().collect() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Pivots below `rel_tol * max(diag)` are reported as rank deficiency.
pub fn cholesky(a: &Matrix, rel_tol: f64) -> Result<Matrix> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::InvalidArgument("cholesky needs a square matrix".into()));
    }
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > rel_tol * max_diag) || max_diag == 0.0 {
            return Err(Error::RankDeficient(format!("pivot {j} is {d:.3e} (max diagonal {max_diag:.3e})")));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

pub fn cholesky_inverse(l: &Matrix) -> Matrix {
    let n = l.rows;
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for c in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[c] = 1.0;
        let col = cholesky_solve(l, &e);
        for r in 0..n {
            inv[(r, c)] = col[r];
        }
    }
    inv
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &Matrix) -> Result<Matrix> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::InvalidArgument("inverse needs a square matrix".into()));
    }
    let mut m = a.clone();
    let mut inv = Matrix::identity(n);
    let scale = a.data.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs())).unwrap();
        if m[(piv, col)].abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::RankDeficient("singular matrix".into()));
        }
        if piv != col {
            for c in 0..n {
                m.data.swap(piv * n + c, col * n + c);
                inv.data.swap(piv * n + c, col * n + c);
            }
        }
        let p = m[(col, col)];
        for c in 0..n {
            m[(col, c)] /= p;
            inv[(col, c)] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[(r, col)];
                if f != 0.0 {
                    for c in 0..n {
                        m[(r, c)] -= f * m[(col, c)];
                        inv[(r, c)] -= f * inv[(col, c)];
                    }
                }
            }
        }
    }
    Ok(inv)
}

/// Least-squares solution of `X b = y` through the normal equations.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    /// `(X^T X)^-1` in the original (unscaled) parameterisation.
    pub xtx_inverse: Matrix,
}

/// Normal equations with column equilibration: each column is scaled to unit
/// RMS before forming `X^T X`, and the solution is scaled back.
pub fn least_squares(x: &Matrix, y: &[f64]) -> Result<LeastSquares> {
    let (n, p) = (x.rows, x.cols);
    if y.len() != n {
        return Err(Error::InvalidArgument(format!("{n} design rows but {} responses", y.len())));
    }
    if n < p {
        return Err(Error::RankDeficient(format!("{n} rows for {p} unknowns")));
    }
    let mut scale = vec![0.0; p];
    for r in 0..n {
        for (c, s) in scale.iter_mut().enumerate() {
            *s += x[(r, c)] * x[(r, c)];
        }
    }
    for s in scale.iter_mut() {
        *s = (*s / n as f64).sqrt();
        if *s == 0.0 {
            return Err(Error::RankDeficient("design column is identically zero".into()));
        }
    }
    let mut xtx = Matrix::zeros(p, p);
    let mut xty = vec![0.0; p];
    let mut row = vec![0.0; p];
    for r in 0..n {
        for c in 0..p {
            row[c] = x[(r, c)] / scale[c];
        }
        for i in 0..p {
            xty[i] += row[i] * y[r];
            for j in 0..=i {
                xtx[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[(j, i)] = xtx[(i, j)];
        }
    }
    let l = cholesky(&xtx, 1e-12)?;
    let b_scaled = cholesky_solve(&l, &xty);
    let inv_scaled = cholesky_inverse(&l);
    let coefficients = b_scaled.iter().zip(&scale).map(|(b, s)| b / s).collect();
    let mut xtx_inverse = Matrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            xtx_inverse[(i, j)] = inv_scaled[(i, j)] / (scale[i] * scale[j]);
        }
    }
    Ok(LeastSquares { coefficients, xtx_inverse })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trip() {
        let a = Matrix::from_rows(&[vec![4.0, 1.0, 0.5], vec![0.0, 3.0, -1.0], vec![2.0, 0.0, 1.0]]).unwrap();
        let inv = invert(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| a[(i, k)] * inv[(k, j)]).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        let sing = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(invert(&sing).is_err());
    }

    #[test]
    fn cholesky_solves_spd() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky(&a, 1e-12).unwrap();
        let x = cholesky_solve(&l, &[2.0, 1.0]);
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-12);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-12);
        let sing = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&sing, 1e-12), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn least_squares_line() {
        let x = Matrix::from_rows(&(1..=5).map(|v| vec![1.0, v as f64]).collect::<Vec<_>>()).unwrap();
        let fit = least_squares(&x, &[2.0, 4.0, 5.0, 4.0, 5.0]).unwrap();
        assert!((fit.coefficients[0] - 2.2).abs() < 1e-12);
        assert!((fit.coefficients[1] - 0.6).abs() < 1e-12);
    }
}
