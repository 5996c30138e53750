//! Sparse Cholesky of latent Hessians with a reverse Cuthill–McKee ordering.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};
use crate::random_field::diag_of;

/// Reverse Cuthill–McKee permutation of a symmetric pattern given as
/// adjacency lists. `perm[k]` is the original index placed at position `k`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &start in &by_degree {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !seen[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            next.dedup();
            for w in next {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// `P H Pᵀ = L Lᵀ` for a symmetric positive definite `H` assembled from
/// triplets (duplicates summed).
pub struct SparseFactor {
    n: usize,
    perm: Vec<usize>,
    chol: CscCholesky<f64>,
    log_det: f64,
}

impl std::fmt::Debug for SparseFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseFactor")
            .field("n", &self.n)
            .field("log_det", &self.log_det)
            .finish()
    }
}

impl SparseFactor {
    /// Factors `H + ridge·I`; `ridge` is 0 unless the plain factorization fails.
    pub fn new(n: usize, triplets: &[(usize, usize, f64)]) -> Result<(Self, f64)> {
        let mut adj = vec![Vec::new(); n];
        for &(i, j, _) in triplets {
            if i != j {
                adj[i].push(j);
            }
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut inv = vec![0; n];
        for (k, &i) in perm.iter().enumerate() {
            inv[i] = k;
        }
        let mut ridge = 0.0;
        loop {
            let mut coo = CooMatrix::new(n, n);
            for &(i, j, v) in triplets {
                coo.push(inv[i], inv[j], v);
            }
            if ridge > 0.0 {
                (0..n).for_each(|i| coo.push(i, i, ridge));
            }
            match CscCholesky::factor(&CscMatrix::from(&coo)) {
                Ok(chol) => {
                    let l = chol.l();
                    let log_det = (0..n).map(|j| 2.0 * diag_of(l, j).ln()).sum();
                    return Ok((
                        Self {
                            n,
                            perm,
                            chol,
                            log_det,
                        },
                        ridge,
                    ));
                }
                Err(_) if ridge < 1e6 => ridge = if ridge == 0.0 { 1e-10 } else { ridge * 100.0 },
                Err(e) => {
                    return Err(Error::Numerical(format!(
                        "latent Hessian factorization failed: {e}"
                    )))
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `H⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = DMatrix::from_iterator(self.n, 1, self.perm.iter().map(|&i| b[i]));
        let x = self.chol.solve(&rhs);
        let mut out = vec![0.0; self.n];
        for (k, &i) in self.perm.iter().enumerate() {
            out[i] = x[(k, 0)];
        }
        out
    }
}
