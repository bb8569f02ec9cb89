//! Sparse symmetric solves for the elliptic step.
//!
//! The production path is diagonally preconditioned conjugate gradients on a
//! CSR matrix. A dense LU path (with a Lagrange-multiplier gauge for the
//! singular Neumann operator) exists for small systems and serves as the
//! independent oracle in tests.

/// Compressed sparse row matrix, square, with sorted column indices per row.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assemble from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(r, c, v) in triplets {
            per_row[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut per_row {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] == r {
                    diag[r] = self.values[k];
                }
            }
        }
        diag
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                dense[r][self.col_idx[k]] = self.values[k];
            }
        }
        dense
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub converged: bool,
    pub iterations: usize,
    /// Final residual 2-norm divided by the load 2-norm.
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Conjugate gradients with Jacobi (diagonal) preconditioning.
///
/// Solves `A x = b` for symmetric positive (semi)definite `A`; for the
/// singular Neumann operator the load must be orthogonal to constants, which
/// keeps the iterates in the range of `A`. Convergence criterion:
/// ‖b − A x‖₂ ≤ tol_rel · ‖b‖₂.
pub fn pcg_jacobi(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol_rel: f64,
    max_iter: usize,
) -> (Vec<f64>, CgOutcome) {
    let n = a.n();
    let b_norm = norm(b);
    let mut x = match x0 {
        Some(guess) => guess.to_vec(),
        None => vec![0.0; n],
    };
    if b_norm == 0.0 {
        return (
            vec![0.0; n],
            CgOutcome {
                converged: true,
                iterations: 0,
                relative_residual: 0.0,
            },
        );
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut r = vec![0.0; n];
    a.mul_vec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let threshold = tol_rel * b_norm;

    let mut iterations = 0;
    let mut res_norm = norm(&r);
    while res_norm > threshold && iterations < max_iter {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break; // lost positive definiteness numerically
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_next;
        iterations += 1;
        res_norm = norm(&r);
    }

    (
        x,
        CgOutcome {
            converged: res_norm <= threshold,
            iterations,
            relative_residual: res_norm / b_norm,
        },
    )
}

/// LU factorization with partial pivoting, solving `A x = b` in place.
/// Returns `None` when a pivot collapses (singular matrix).
pub fn lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        let pivot = a[col][col];
        for row in col + 1..n {
            let factor = a[row][col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                let upper = a[col][k];
                a[row][k] -= factor * upper;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Dense direct solve of the singular Neumann system `A u = b` with the gauge
/// Σ u·w = 0 enforced through one Lagrange multiplier:
///
/// ```text
/// [ A  w ] [u]   [b]
/// [ wᵀ 0 ] [λ] = [0]
/// ```
///
/// Intended for small systems (mesh ≤ 500 vertices); used as the test oracle
/// for the iterative path.
pub fn solve_neumann_dense(a: &CsrMatrix, b: &[f64], weights: &[f64]) -> Option<Vec<f64>> {
    let n = a.n();
    let mut dense = vec![vec![0.0; n + 1]; n + 1];
    for (r, row) in a.to_dense().into_iter().enumerate() {
        dense[r][..n].copy_from_slice(&row);
        dense[r][n] = weights[r];
        dense[n][r] = weights[r];
    }
    let mut rhs = b.to_vec();
    rhs.push(0.0);
    let mut solution = lu_solve(dense, rhs)?;
    solution.truncate(n);
    Some(solution)
}
