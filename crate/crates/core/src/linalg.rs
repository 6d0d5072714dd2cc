//! Compressed sparse rows, a dense LU wrapper and restarted GMRES.

use nalgebra::{DMatrix, DVector};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a square matrix from triplets, summing duplicates and dropping exact zeros.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < n && j < n, "triplet ({i}, {j}) out of range for size {n}");
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (self.cols[p], self.vals[p]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).filter(|e| e.0 == j).map(|e| e.1).sum()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// `x^T A`.
    pub fn left_matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, xi) in x.iter().enumerate().take(self.n) {
            for (j, v) in self.row(i) {
                y[j] += xi * v;
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Dense LU factorization of a sparse operator.
pub struct DenseLu {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DenseLu {
    /// Factorizes; returns `None` if the matrix is numerically singular.
    pub fn new(a: &CsrMatrix) -> Option<Self> {
        let dense = a.to_dense();
        let scale = dense.amax().max(f64::MIN_POSITIVE);
        let lu = dense.lu();
        let u = lu.u();
        let min_pivot = u.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if !(min_pivot > 1e-14 * scale) {
            return None;
        }
        Some(Self { lu })
    }

    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let x = self.lu.solve(&DVector::from_column_slice(b))?;
        x.iter().all(|v| v.is_finite()).then(|| x.as_slice().to_vec())
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone)]
pub struct IterativeResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Right-preconditioned (Jacobi) restarted GMRES.
pub fn gmres(a: &CsrMatrix, b: &[f64], tol: f64, restart: usize, max_iter: usize) -> IterativeResult {
    let n = a.n;
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&inv_diag).map(|(x, d)| x * d).collect() };
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return IterativeResult { x, iterations: 0, relative_residual: 0.0, converged: true };
    }
    let m = restart.max(1).min(n.max(1));
    let mut iterations = 0;
    loop {
        let ax = a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta <= tol * bnorm || iterations >= max_iter {
            return IterativeResult { x, iterations, relative_residual: beta / bnorm, converged: beta <= tol * bnorm };
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let mut w = a.matvec(&precond(&basis[k]));
            for (j, q) in basis.iter().enumerate() {
                let h = dot(&w, q);
                hess[j][k] = h;
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= h * qi;
                }
            }
            let hn = norm(&w);
            hess[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * hess[j][k] + sn[j] * hess[j + 1][k];
                hess[j + 1][k] = -sn[j] * hess[j][k] + cs[j] * hess[j + 1][k];
                hess[j][k] = t;
            }
            let denom = hess[k][k].hypot(hess[k + 1][k]);
            cs[k] = if denom == 0.0 { 1.0 } else { hess[k][k] / denom };
            sn[k] = if denom == 0.0 { 0.0 } else { hess[k + 1][k] / denom };
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k_used = k + 1;
            if g[k + 1].abs() <= tol * bnorm || hn == 0.0 || iterations >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|j| hess[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / hess[i][i];
        }
        let mut z = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            for (zi, qi) in z.iter_mut().zip(&basis[j]) {
                *zi += yj * qi;
            }
        }
        for (xi, zi) in x.iter_mut().zip(precond(&z)) {
            *xi += zi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            vec![(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (1, 2, -1.0), (2, 2, 2.0), (2, 0, 0.5), (0, 0, 1.0)],
        )
    }

    #[test]
    fn triplets_are_summed() {
        let a = sample();
        assert_eq!(a.get(0, 0), 5.0);
        assert_eq!(a.nnz(), 7);
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]), vec![6.0, 3.0, 2.5]);
        assert_eq!(a.left_matvec(&[1.0, 0.0, 0.0]), vec![5.0, 1.0, 0.0]);
    }

    #[test]
    fn direct_and_iterative_agree() {
        let a = sample();
        let b = [1.0, 2.0, 3.0];
        let x = DenseLu::new(&a).unwrap().solve(&b).unwrap();
        let it = gmres(&a, &b, 1e-13, 200, 100);
        assert!(it.converged);
        for (p, q) in x.iter().zip(&it.x) {
            assert!((p - q).abs() < 1e-11);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(DenseLu::new(&a).is_none());
    }
}
