//! Sparse symmetric positive-definite solves.
//!
//! Below [`DIRECT_SOLVER_MAX_DOFS`] unknowns the matrix is factorized with a
//! sparse Cholesky decomposition (the symbolic analysis can be shared between
//! matrices with the same pattern); above it a Jacobi-preconditioned
//! conjugate gradient iteration is used.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};

pub const DIRECT_SOLVER_MAX_DOFS: usize = 200_000;

pub type SparseMat = SparseColMat<usize, f64>;

pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<SparseMat> {
    let t: Vec<Triplet<usize, usize, f64>> = triplets.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
    SparseColMat::try_new_from_triplets(n, n, &t).map_err(|e| Error::LinearAlgebra(format!("{e:?}")))
}

pub fn symbolic(mat: &SparseMat) -> Result<SymbolicLlt<usize>> {
    SymbolicLlt::try_new(mat.symbolic(), Side::Lower).map_err(|e| Error::LinearAlgebra(format!("{e:?}")))
}

pub fn mat_vec(mat: &SparseMat, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for j in 0..mat.ncols() {
        let rows = mat.row_idx_of_col_raw(j);
        let vals = mat.val_of_col(j);
        for (i, v) in rows.iter().zip(vals) {
            y[*i] += v * x[j];
        }
    }
    y
}

pub enum Factorization {
    Cholesky(Llt<usize, f64>),
    ConjugateGradient { mat: SparseMat, inv_diag: Vec<f64> },
}

impl Factorization {
    /// Factorizes `mat`, reusing `symbolic` when its pattern matches.
    pub fn new(mat: &SparseMat, symbolic: Option<&SymbolicLlt<usize>>) -> Result<Self> {
        let n = mat.nrows();
        if n >= DIRECT_SOLVER_MAX_DOFS {
            let mut inv_diag = vec![0.0; n];
            for j in 0..n {
                for (i, v) in mat.row_idx_of_col_raw(j).iter().zip(mat.val_of_col(j)) {
                    if *i == j {
                        inv_diag[j] += v;
                    }
                }
            }
            if inv_diag.iter().any(|d| *d <= 0.0) {
                return Err(Error::Singular("matrix has a non-positive diagonal entry".into()));
            }
            for d in inv_diag.iter_mut() {
                *d = 1.0 / *d;
            }
            return Ok(Factorization::ConjugateGradient { mat: mat.clone(), inv_diag });
        }
        let sym = match symbolic {
            Some(s) => s.clone(),
            None => self::symbolic(mat)?,
        };
        let llt = Llt::try_new_with_symbolic(sym, mat.as_ref(), Side::Lower)
            .map_err(|e| Error::Singular(format!("Cholesky factorization failed ({e:?}); the problem is not positive definite")))?;
        Ok(Factorization::Cholesky(llt))
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            Factorization::Cholesky(llt) => {
                let rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
                let x = llt.solve(&rhs);
                let out: Vec<f64> = (0..b.len()).map(|i| x[(i, 0)]).collect();
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Singular("non-finite solution of the linear system".into()));
                }
                Ok(out)
            }
            Factorization::ConjugateGradient { mat, inv_diag } => conjugate_gradient(mat, inv_diag, b, 1e-12),
        }
    }
}

/// Jacobi-preconditioned conjugate gradient on `A x = b`.
pub fn conjugate_gradient(mat: &SparseMat, inv_diag: &[f64], b: &[f64], rtol: f64) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..10 * n.max(100) {
        let ap = mat_vec(mat, &p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::Singular("conjugate gradient met a non-positive curvature direction".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= rtol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearAlgebra("conjugate gradient did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> SparseMat {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        from_triplets(n, &t).unwrap()
    }

    #[test]
    fn cholesky_and_cg_agree() {
        let a = laplacian_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let x1 = Factorization::new(&a, None).unwrap().solve(&b).unwrap();
        let x2 = conjugate_gradient(&a, &vec![0.5; 50], &b, 1e-14).unwrap();
        let r = mat_vec(&a, &x1);
        for i in 0..50 {
            assert!((r[i] - b[i]).abs() < 1e-10);
            assert!((x1[i] - x2[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let a = from_triplets(1, &[(0, 0, 1.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(mat_vec(&a, &[1.0]), vec![3.0]);
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let a = from_triplets(2, &[(0, 0, 1.0), (1, 1, -1.0)]).unwrap();
        assert!(matches!(Factorization::new(&a, None), Err(Error::Singular(_))));
    }
}
