//! Sparse linear algebra used by the finite-element modules.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < n_rows && j < n_cols, "triplet out of range");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&k| self.col_idx[k] == i)
                    .map_or(0.0, |k| self.values[k])
            })
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        (self.row_ptr[i]..self.row_ptr[i + 1])
            .find(|&k| self.col_idx[k] == j)
            .map_or(0.0, |k| self.values[k])
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] += self.values[k];
            }
        }
        m
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// (semi-)definite operator. `project` is applied to every residual; use it
/// to stay in the complement of a known null space.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    diag: &[f64],
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
    project: Option<&dyn Fn(&mut [f64])>,
) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    if let Some(p) = project {
        p(&mut r);
    }
    let b_norm = norm(&r);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let precond = |r: &[f64]| -> Vec<f64> {
        r.iter().zip(diag).map(|(ri, di)| if *di > 0.0 { ri / di } else { *ri }).collect()
    };
    let mut z = precond(&r);
    if let Some(p) = project {
        p(&mut z);
    }
    let mut p_dir = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        let ap = apply(&p_dir);
        let pap = dot(&p_dir, &ap);
        if pap <= 0.0 {
            return Err(Error::LinearSolver("operator is not positive definite on the search space".into()));
        }
        let alpha = rz / pap;
        axpy(alpha, &p_dir, &mut x);
        axpy(-alpha, &ap, &mut r);
        if let Some(p) = project {
            p(&mut r);
        }
        if norm(&r) <= rel_tol * b_norm {
            return Ok(x);
        }
        z = precond(&r);
        if let Some(p) = project {
            p(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p_dir.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::LinearSolver(format!("CG did not reach {rel_tol:.1e} in {max_iter} iterations")))
}

/// Solves a tridiagonal system (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom.abs() < 1e-300 {
        return Err(Error::LinearSolver("zero pivot in tridiagonal solve".into()));
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom.abs() < 1e-300 || !denom.is_finite() {
            return Err(Error::LinearSolver(format!("zero pivot in tridiagonal solve at row {i}")));
        }
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Envelope (skyline) Cholesky factorization of a symmetric positive
/// definite matrix. Each row stores the factor from its first structural
/// nonzero up to the diagonal.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n_rows;
        let mut first = vec![0usize; n];
        for i in 0..n {
            let mut f = i;
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                f = f.min(a.col_idx[k]);
            }
            first[i] = f;
        }
        // symmetric structure: also account for entries above the diagonal
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[k];
                if j > i {
                    first[j] = first[j].min(i);
                }
            }
        }
        let mut offset = vec![0usize; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; offset[n]];
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[k];
                if j <= i {
                    data[offset[i] + j - first[i]] += a.values[k];
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let start = fi.max(fj);
                let (row_i, row_j) = if offset[i] > offset[j] {
                    let (lo, hi) = data.split_at_mut(offset[i]);
                    (&mut hi[..], &lo[offset[j]..offset[j + 1]])
                } else {
                    unreachable!("rows are stored in order")
                };
                let ri = &row_i[start - fi..j - fi];
                let rj = &row_j[start - fj..j - fj];
                let s: f64 = ri.iter().zip(rj).map(|(x, y)| x * y).sum();
                let ljj = row_j[j - fj];
                row_i[j - fi] = (row_i[j - fi] - s) / ljj;
            }
            let row = &mut data[offset[i]..offset[i + 1]];
            let len = i - fi;
            let s: f64 = row[..len].iter().map(|x| x * x).sum();
            let d = row[len] - s;
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::LinearSolver(format!("matrix not positive definite at row {i} (pivot {d:.3e})")));
            }
            row[len] = d.sqrt();
        }
        Ok(Self { first, offset, data })
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            let s: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (l, v) in row[..i - fi].iter().zip(&mut y[fi..i]) {
                *v -= l * yi;
            }
        }
        y
    }
}

/// Result of a generalized Rayleigh-quotient maximization.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
}

/// Largest eigenpair of the symmetric pencil `N x = λ D x` with `D`
/// positive definite, by Lanczos iteration on `D⁻¹N` in the `D` inner
/// product (shift-invert at zero). `numerator` applies `N`. `project`, when
/// given, must be a `D`-orthogonal projector; the iteration is then
/// restricted to its range.
pub fn largest_pencil_eigen(
    numerator: &dyn Fn(&[f64]) -> Vec<f64>,
    denominator: &CsrMatrix,
    solve_denominator: &dyn Fn(&[f64]) -> Vec<f64>,
    project: Option<&dyn Fn(&mut [f64])>,
    start: &[f64],
    rel_tol: f64,
    max_restarts: usize,
) -> Result<EigenPair> {
    let n = start.len();
    let basis_size = n.min(60);
    let mut v0 = start.to_vec();
    let mut previous = f64::NAN;
    let mut last_change = f64::NAN;
    let mut total_iters = 0;
    for _restart in 0..=max_restarts {
        if let Some(p) = project {
            p(&mut v0);
        }
        let dv0 = denominator.mul_vec(&v0);
        let nrm = dot(&v0, &dv0).sqrt();
        if !(nrm > 0.0) {
            return Err(Error::DegenerateInput("start vector vanishes in the admissible space".into()));
        }
        v0.iter_mut().for_each(|x| *x /= nrm);
        // basis vectors and their images under D
        let mut basis: Vec<Vec<f64>> = vec![v0.clone()];
        let mut d_basis: Vec<Vec<f64>> = vec![dv0.iter().map(|x| x / nrm).collect()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut best = (f64::NAN, Vec::new());
        for k in 0..basis_size {
            total_iters += 1;
            let mut w = solve_denominator(&numerator(&basis[k]));
            if let Some(p) = project {
                p(&mut w);
            }
            let a = dot(&d_basis[k], &w);
            alpha.push(a);
            // full reorthogonalization, twice
            for _ in 0..2 {
                for (q, dq) in basis.iter().zip(&d_basis) {
                    let c = dot(dq, &w);
                    axpy(-c, q, &mut w);
                }
            }
            let dw = denominator.mul_vec(&w);
            let b = dot(&w, &dw).max(0.0).sqrt();
            let m = alpha.len();
            let mut t = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                t[(i, i)] = alpha[i];
                if i + 1 < m {
                    t[(i, i + 1)] = beta[i];
                    t[(i + 1, i)] = beta[i];
                }
            }
            let eig = SymmetricEigen::new(t);
            let (imax, &lmax) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            let s = eig.eigenvectors.column(imax);
            let resid = (b * s[m - 1]).abs();
            let converged = resid <= rel_tol * lmax.abs() || b < 1e-14 * lmax.abs().max(1e-300);
            if converged || k + 1 == basis_size {
                let mut x = vec![0.0; n];
                for (j, q) in basis.iter().enumerate() {
                    axpy(s[j], q, &mut x);
                }
                best = (lmax, x);
                if converged {
                    return Ok(EigenPair { value: lmax, vector: best.1, iterations: total_iters });
                }
                break;
            }
            beta.push(b);
            w.iter_mut().for_each(|x| *x /= b);
            basis.push(w);
            d_basis.push(dw.iter().map(|x| x / b).collect());
        }
        let change = ((best.0 - previous) / best.0).abs();
        if change < rel_tol {
            return Ok(EigenPair { value: best.0, vector: best.1, iterations: total_iters });
        }
        previous = best.0;
        last_change = change;
        v0 = best.1;
    }
    Err(Error::Eigensolver { iterations: total_iters, change: last_change })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, 2.0), (0, 0, 3.0)]);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(1, 1), 2.0);
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn skyline_matches_cg() {
        let a = laplacian_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let chol = SkylineCholesky::factor(&a).unwrap();
        let x = chol.solve(&b);
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm(&r) < 1e-12);
        let y = conjugate_gradient(|v| a.mul_vec(v), &a.diagonal(), &b, 1e-13, 500, None).unwrap();
        assert!(x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-9));
    }

    #[test]
    fn skyline_rejects_indefinite() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(SkylineCholesky::factor(&a).is_err());
    }

    #[test]
    fn tridiagonal_solve() {
        let n = 6;
        let lower = vec![-1.0; n];
        let diag = vec![4.0; n];
        let upper = vec![-1.0; n];
        let rhs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
        for i in 0..n {
            let mut s = 4.0 * x[i];
            if i > 0 {
                s -= x[i - 1];
            }
            if i + 1 < n {
                s -= x[i + 1];
            }
            assert!((s - rhs[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn lanczos_finds_largest_generalized_eigenvalue() {
        // N = identity, D = 1D Laplacian: largest λ = 1 / λ_min(D)
        let n = 40;
        let d = laplacian_1d(n);
        let id = CsrMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect());
        let chol = SkylineCholesky::factor(&d).unwrap();
        let start: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        let e = largest_pencil_eigen(&|x| id.mul_vec(x), &d, &|b| chol.solve(b), None, &start, 1e-10, 5).unwrap();
        let lam_min = 2.0 - 2.0 * (std::f64::consts::PI / (n as f64 + 1.0)).cos();
        assert!((e.value - 1.0 / lam_min).abs() < 1e-8 * e.value);
    }
}
