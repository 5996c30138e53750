use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::bessel::bessel_k01;
use super::{FieldTerms, MaternParams, DENSE_JITTER};
use crate::error::{Error, Result};
use crate::mesh::TriangulatedDomain;
use crate::numeric::LN_2PI;

/// Factorization, inverse and `log κ` derivative kernel at one parameter value.
#[derive(Debug)]
struct Factored {
    key: (u64, u64),
    chol: Cholesky<f64, Dyn>,
    inv: DMatrix<f64>,
    /// `D_ij = −x² K₀(x)` off the diagonal, `x = κ d_ij`.
    dk: DMatrix<f64>,
}

/// Exact Matérn covariance over mesh vertices. The factorization at the most
/// recent parameter value is kept, since latent updates leave it unchanged.
#[derive(Debug)]
pub struct DenseMatern {
    dists: DMatrix<f64>,
    last: Mutex<Option<Arc<Factored>>>,
}

impl Clone for DenseMatern {
    fn clone(&self) -> Self {
        Self {
            dists: self.dists.clone(),
            last: Mutex::new(None),
        }
    }
}

impl DenseMatern {
    pub fn new(mesh: &TriangulatedDomain, limit: usize) -> Result<Self> {
        let n = mesh.num_vertices();
        if n > limit {
            return Err(Error::DenseLimit { vertices: n, limit });
        }
        let v = mesh.vertices();
        let mut dists = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let d = v[i].dist(v[j]);
                if d == 0.0 {
                    return Err(Error::Geometry(format!("vertices {j} and {i} coincide")));
                }
                dists[(i, j)] = d;
                dists[(j, i)] = d;
            }
        }
        Ok(Self {
            dists,
            last: Mutex::new(None),
        })
    }

    pub fn dim(&self) -> usize {
        self.dists.nrows()
    }

    pub fn covariance(&self, params: &MaternParams) -> DMatrix<f64> {
        let s2 = params.marginal_variance();
        let kappa = params.kappa();
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                s2 * (1.0 + DENSE_JITTER)
            } else {
                let x = kappa * self.dists[(i, j)];
                s2 * x * bessel_k01(x).1
            }
        })
    }

    fn factored(&self, params: &MaternParams) -> Result<Arc<Factored>> {
        let key = (params.log_tau.to_bits(), params.log_kappa.to_bits());
        if let Some(f) = self
            .last
            .lock()
            .expect("cache lock")
            .as_ref()
            .filter(|f| f.key == key)
        {
            return Ok(f.clone());
        }
        let n = self.dim();
        let s2 = params.marginal_variance();
        let kappa = params.kappa();
        let mut cov = DMatrix::zeros(n, n);
        let mut dk = DMatrix::zeros(n, n);
        for j in 0..n {
            cov[(j, j)] = s2 * (1.0 + DENSE_JITTER);
            for i in 0..j {
                let x = kappa * self.dists[(i, j)];
                let (k0, k1) = bessel_k01(x);
                cov[(i, j)] = s2 * x * k1;
                cov[(j, i)] = cov[(i, j)];
                dk[(i, j)] = -x * x * k0;
                dk[(j, i)] = dk[(i, j)];
            }
        }
        let chol = Cholesky::new(cov).ok_or_else(|| {
            Error::InvalidPrior("Matérn covariance is not positive definite".into())
        })?;
        let inv = chol.inverse();
        let f = Arc::new(Factored { key, chol, inv, dk });
        *self.last.lock().expect("cache lock") = Some(f.clone());
        Ok(f)
    }

    pub fn evaluate(&self, params: &MaternParams, u: &[f64]) -> Result<FieldTerms> {
        let n = self.dim();
        let f = self.factored(params)?;
        let uv = DVector::from_column_slice(u);
        let alpha = f.chol.solve(&uv);
        let quad = uv.dot(&alpha);
        let log_det: f64 = f
            .chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| 2.0 * d.ln())
            .sum();
        let nf = n as f64;
        let log_density = -0.5 * nf * LN_2PI - 0.5 * log_det - 0.5 * quad;

        // dΣ/dlog κ = -2Σ + σ² D.
        let s2 = params.marginal_variance();
        let tr = f.inv.component_mul(&f.dk).sum();
        let form = (alpha.transpose() * &f.dk * &alpha)[(0, 0)];
        Ok(FieldTerms {
            log_density,
            d_log_tau: nf - quad,
            d_log_kappa: nf - quad + s2 * (-0.5 * tr + 0.5 * form),
            grad_u: alpha.iter().map(|a| -a).collect(),
        })
    }

    /// Inverse covariance, the latent Hessian block of the negative log-density.
    pub fn precision(&self, params: &MaternParams) -> Result<DMatrix<f64>> {
        Ok(self.factored(params)?.inv.clone())
    }
}
