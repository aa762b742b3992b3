//! Dense matrices and LU factorization with partial pivoting.
//!
//! The circuit systems and network layers here are tiny (tens of
//! unknowns), so a straightforward dense solver is both fast enough and
//! fully deterministic.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("singular matrix: no usable pivot in column {col} (max |entry| = {max_abs:e})")]
    Singular { col: usize, max_abs: f64 },
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::Shape("ragged row lengths".into()));
        }
        Ok(Mat {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            y[r] = acc;
        }
        y
    }
}

/// Solves A x = b in place via LU with partial pivoting. `a` is
/// destroyed; `b` is overwritten with the solution.
pub fn lu_solve(a: &mut Mat, b: &mut [f64]) -> Result<(), LinalgError> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(LinalgError::Shape(format!(
            "expected square system, got {}x{} with rhs {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    for k in 0..n {
        // Pivot: largest magnitude in column k at or below the diagonal.
        let mut piv = k;
        let mut max_abs = a.get(k, k).abs();
        for r in (k + 1)..n {
            let v = a.get(r, k).abs();
            if v > max_abs {
                max_abs = v;
                piv = r;
            }
        }
        if max_abs == 0.0 || !max_abs.is_finite() {
            return Err(LinalgError::Singular { col: k, max_abs });
        }
        if piv != k {
            for c in 0..n {
                let tmp = a.get(k, c);
                a.set(k, c, a.get(piv, c));
                a.set(piv, c, tmp);
            }
            b.swap(k, piv);
        }
        let diag = a.get(k, k);
        for r in (k + 1)..n {
            let factor = a.get(r, k) / diag;
            if factor == 0.0 {
                continue;
            }
            a.set(r, k, 0.0);
            for c in (k + 1)..n {
                let v = a.get(r, c) - factor * a.get(k, c);
                a.set(r, c, v);
            }
            b[r] -= factor * b[k];
        }
    }
    // Back substitution.
    for k in (0..n).rev() {
        let mut acc = b[k];
        for c in (k + 1)..n {
            acc -= a.get(k, c) * b[c];
        }
        b[k] = acc / a.get(k, k);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_known_system() {
        let mut a = Mat::from_rows(vec![
            vec![2.0, 1.0, -1.0],
            vec![-3.0, -1.0, 2.0],
            vec![-2.0, 1.0, 2.0],
        ])
        .unwrap();
        let mut b = vec![8.0, -11.0, -3.0];
        lu_solve(&mut a, &mut b).unwrap();
        let expect = [2.0, 3.0, -1.0];
        for (x, e) in b.iter().zip(expect) {
            assert!((x - e).abs() < 1e-12, "{x} vs {e}");
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let mut a = Mat::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let mut b = vec![3.0, 7.0];
        lu_solve(&mut a, &mut b).unwrap();
        assert_eq!(b, vec![7.0, 3.0]);
    }

    #[test]
    fn singular_reported() {
        let mut a = Mat::from_rows(vec![vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let mut b = vec![1.0, 2.0];
        let err = lu_solve(&mut a, &mut b).unwrap_err();
        assert!(matches!(err, LinalgError::Singular { .. }));
    }

    #[test]
    fn random_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 5, 12, 30] {
            let mut a = Mat::zeros(n, n);
            for r in 0..n {
                for c in 0..n {
                    a.set(r, c, rng.gen_range(-1.0..1.0));
                }
                a.add(r, r, 2.0); // keep well-conditioned
            }
            let x_true: Vec<f64> = (0..n).map(|i| (i as f64) - 1.5).collect();
            let mut b = a.matvec(&x_true);
            let mut a_fact = a.clone();
            lu_solve(&mut a_fact, &mut b).unwrap();
            for (x, e) in b.iter().zip(&x_true) {
                assert!((x - e).abs() < 1e-10);
            }
        }
    }
}
