//! Gaussian random field with Matérn (ν = 1) correlation over mesh vertices.
//!
//! Two prior representations are available: the exact dense covariance and the
//! sparse finite-element precision. Hyperparameters are (log τ, log κ) with
//! marginal variance `σ² = 1 / (4π τ² κ²)`, and the covariance is
//! `σ² · Cor(d)` (variance, not standard deviation, scales the correlation).

pub mod bessel;
mod dense;
mod spde;

pub use dense::DenseMatern;
pub(crate) use spde::{csc_times, diag_of};
pub use spde::{SpdeOperator, SPECTRAL_LIMIT};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::ops::serial::spsolve_csc_lower_triangular;
use nalgebra_sparse::ops::Op;
use nalgebra_sparse::CscMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangulatedDomain;
use crate::numeric::LN_2PI;

/// Smoothness is fixed at one.
pub const NU: f64 = 1.0;

/// Relative diagonal jitter on the dense covariance.
pub const DENSE_JITTER: f64 = 1e-8;

/// Default vertex limit for the dense covariance path.
pub const DEFAULT_DENSE_LIMIT: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub log_tau: f64,
    pub log_kappa: f64,
}

impl MaternParams {
    pub fn new(log_tau: f64, log_kappa: f64) -> Self {
        Self { log_tau, log_kappa }
    }

    /// Parameters giving marginal variance `sigma2` at range parameter `kappa`.
    pub fn from_variance(sigma2: f64, kappa: f64) -> Self {
        Self {
            log_tau: log_tau_for(sigma2, kappa),
            log_kappa: kappa.ln(),
        }
    }

    /// Parameters from marginal standard deviation and practical range `√8/κ`.
    pub fn from_sd_and_range(sigma: f64, range: f64) -> Self {
        Self::from_variance(sigma * sigma, 8f64.sqrt() / range)
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn kappa(&self) -> f64 {
        self.log_kappa.exp()
    }

    pub fn marginal_variance(&self) -> f64 {
        marginal_variance(self)
    }

    pub fn practical_range(&self) -> f64 {
        8f64.sqrt() / self.kappa()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.log_tau.is_finite() && self.log_kappa.is_finite()) {
            return Err(Error::InvalidPrior(format!(
                "non-finite hyperparameters (log τ = {}, log κ = {})",
                self.log_tau, self.log_kappa
            )));
        }
        Ok(())
    }
}

/// `1 / (4π τ² κ²)`.
pub fn marginal_variance(params: &MaternParams) -> f64 {
    1.0 / (4.0 * std::f64::consts::PI * params.tau().powi(2) * params.kappa().powi(2))
}

/// Inverse of [`marginal_variance`] in τ: `log τ = -log(4π σ² κ²) / 2`.
pub fn log_tau_for(sigma2: f64, kappa: f64) -> f64 {
    -(4.0 * std::f64::consts::PI * sigma2 * kappa * kappa).ln() / 2.0
}

/// Matérn correlation `κd K₁(κd)`, equal to 1 at zero lag.
pub fn matern_correlation(params: &MaternParams, d: f64) -> Result<f64> {
    if d < 0.0 || d.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "distance must be nonnegative, got {d}"
        )));
    }
    if d == 0.0 {
        return Ok(1.0);
    }
    let x = params.kappa() * d;
    if x < 1e-300 {
        return Ok(1.0);
    }
    Ok(x * bessel::bessel_k1(x))
}

/// Node values of one field realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRealization {
    pub node_values: Vec<f64>,
}

impl FieldRealization {
    pub fn zeros(n: usize) -> Self {
        Self {
            node_values: vec![0.0; n],
        }
    }
}

/// Log-density and its gradients, as needed by the joint objective.
#[derive(Debug, Clone)]
pub struct FieldTerms {
    pub log_density: f64,
    pub d_log_tau: f64,
    pub d_log_kappa: f64,
    pub grad_u: Vec<f64>,
}

pub enum FieldPrior {
    DenseCovariance {
        matrix: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
    SparsePrecision {
        matrix: CscMatrix<f64>,
        chol: CscCholesky<f64>,
    },
}

impl std::fmt::Debug for FieldPrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldPrior::DenseCovariance { matrix, .. } => {
                write!(
                    f,
                    "FieldPrior::DenseCovariance({}x{})",
                    matrix.nrows(),
                    matrix.ncols()
                )
            }
            FieldPrior::SparsePrecision { matrix, .. } => {
                write!(
                    f,
                    "FieldPrior::SparsePrecision({}x{}, nnz {})",
                    matrix.nrows(),
                    matrix.ncols(),
                    matrix.nnz()
                )
            }
        }
    }
}

impl FieldPrior {
    pub fn dim(&self) -> usize {
        match self {
            FieldPrior::DenseCovariance { matrix, .. } => matrix.nrows(),
            FieldPrior::SparsePrecision { matrix, .. } => matrix.nrows(),
        }
    }

    /// log det of the precision (negative log det of the covariance on the dense path).
    pub fn log_det_precision(&self) -> f64 {
        match self {
            FieldPrior::DenseCovariance { chol, .. } => -chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| 2.0 * d.ln())
                .sum::<f64>(),
            FieldPrior::SparsePrecision { chol, .. } => {
                let l = chol.l();
                (0..l.ncols()).map(|j| 2.0 * diag_of(l, j).ln()).sum()
            }
        }
    }
}

pub fn build_dense_covariance(
    mesh: &TriangulatedDomain,
    params: &MaternParams,
) -> Result<FieldPrior> {
    build_dense_covariance_with_limit(mesh, params, DEFAULT_DENSE_LIMIT)
}

pub fn build_dense_covariance_with_limit(
    mesh: &TriangulatedDomain,
    params: &MaternParams,
    limit: usize,
) -> Result<FieldPrior> {
    params.validate()?;
    let matrix = DenseMatern::new(mesh, limit)?.covariance(params);
    let chol = Cholesky::new(matrix.clone())
        .ok_or_else(|| Error::InvalidPrior("dense covariance is not positive definite".into()))?;
    Ok(FieldPrior::DenseCovariance { matrix, chol })
}

pub fn build_sparse_precision(
    mesh: &TriangulatedDomain,
    params: &MaternParams,
) -> Result<FieldPrior> {
    params.validate()?;
    let matrix = SpdeOperator::new(mesh)?.precision(params);
    let chol = CscCholesky::factor(&matrix)
        .map_err(|e| Error::InvalidPrior(format!("precision is not positive definite: {e}")))?;
    Ok(FieldPrior::SparsePrecision { matrix, chol })
}

/// Zero-mean multivariate normal log-density of a realization.
pub fn field_log_density(real: &FieldRealization, prior: &FieldPrior) -> Result<f64> {
    let n = prior.dim();
    let u = &real.node_values;
    if u.len() != n {
        return Err(Error::InvalidArgument(format!(
            "realization has {} values, prior has dimension {n}",
            u.len()
        )));
    }
    let quad = match prior {
        FieldPrior::DenseCovariance { chol, .. } => {
            let mut x = DVector::from_column_slice(u);
            chol.l_dirty().solve_lower_triangular_mut(&mut x);
            x.norm_squared()
        }
        FieldPrior::SparsePrecision { matrix, .. } => {
            let qu = csc_times(matrix, u);
            crate::numeric::neumaier_sum(qu.iter().zip(u).map(|(a, b)| a * b))
        }
    };
    Ok(-0.5 * n as f64 * LN_2PI + 0.5 * prior.log_det_precision() - 0.5 * quad)
}

/// Draws one realization; deterministic in `seed`.
pub fn sample_field(prior: &FieldPrior, seed: u64) -> Result<FieldRealization> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    sample_field_with(prior, &mut rng)
}

pub fn sample_field_with<R: rand::Rng + ?Sized>(
    prior: &FieldPrior,
    rng: &mut R,
) -> Result<FieldRealization> {
    let n = prior.dim();
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let node_values = match prior {
        FieldPrior::DenseCovariance { chol, .. } => {
            let zv = DVector::from_vec(z);
            (chol.l_dirty().lower_triangle() * zv)
                .iter()
                .copied()
                .collect()
        }
        FieldPrior::SparsePrecision { chol, .. } => {
            let mut b = DMatrix::from_vec(n, 1, z);
            spsolve_csc_lower_triangular(Op::Transpose(chol.l()), &mut b)
                .map_err(|e| Error::Numerical(format!("triangular solve failed: {e}")))?;
            b.iter().copied().collect()
        }
    };
    Ok(FieldRealization { node_values })
}

/// Field prior used inside the joint objective.
#[derive(Debug, Clone)]
pub enum FieldModel {
    Sparse(SpdeOperator),
    Dense(DenseMatern),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PriorRepresentation {
    #[default]
    SparsePrecision,
    DenseCovariance,
}

impl FieldModel {
    pub fn new(mesh: &TriangulatedDomain, repr: PriorRepresentation) -> Result<Self> {
        Ok(match repr {
            PriorRepresentation::SparsePrecision => FieldModel::Sparse(SpdeOperator::new(mesh)?),
            PriorRepresentation::DenseCovariance => {
                FieldModel::Dense(DenseMatern::new(mesh, DEFAULT_DENSE_LIMIT)?)
            }
        })
    }

    pub fn evaluate(&self, params: &MaternParams, u: &[f64]) -> Result<FieldTerms> {
        params.validate()?;
        match self {
            FieldModel::Sparse(op) => op.evaluate(params, u),
            FieldModel::Dense(d) => d.evaluate(params, u),
        }
    }

    /// Precision entries (i, j, value) for the latent Hessian.
    pub fn precision_triplets(&self, params: &MaternParams) -> Result<Vec<(usize, usize, f64)>> {
        match self {
            FieldModel::Sparse(op) => Ok(op
                .precision(params)
                .triplet_iter()
                .map(|(i, j, v)| (i, j, *v))
                .collect()),
            FieldModel::Dense(d) => {
                let p = d.precision(params)?;
                let n = p.nrows();
                let mut out = Vec::with_capacity(n * n);
                for j in 0..n {
                    for i in 0..n {
                        out.push((i, j, p[(i, j)]));
                    }
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, Polygon};

    #[test]
    fn marginal_variance_values() {
        let p = MaternParams::new(0.0, 0.0);
        assert!((marginal_variance(&p) - 1.0 / (4.0 * std::f64::consts::PI)).abs() < 1e-15);
        let p = MaternParams::new(0.0, 2f64.ln());
        assert!((marginal_variance(&p) - 1.0 / (16.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!((log_tau_for(1.0, 1.0) + (4.0 * std::f64::consts::PI).ln() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn correlation_edge_cases() {
        let p = MaternParams::new(0.0, 0.0);
        assert_eq!(matern_correlation(&p, 0.0).unwrap(), 1.0);
        assert!(matern_correlation(&p, -1.0).is_err());
        assert!(matern_correlation(&p, 20.0).unwrap() < 1e-6);
        assert!((matern_correlation(&p, 1e-9).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dense_diagonal_is_variance_plus_jitter() {
        let m = build_mesh(&Polygon::unit_square(), 0.3).unwrap();
        let p = MaternParams::from_variance(0.7, 3.0);
        let FieldPrior::DenseCovariance { matrix, .. } = build_dense_covariance(&m, &p).unwrap()
        else {
            unreachable!()
        };
        for i in 0..matrix.nrows() {
            assert_eq!(matrix[(i, i)], p.marginal_variance() * (1.0 + DENSE_JITTER));
            assert!((matrix[(i, i)] - 0.7 * (1.0 + DENSE_JITTER)).abs() < 1e-12);
        }
        assert!(matches!(
            build_dense_covariance_with_limit(&m, &p, 3),
            Err(Error::DenseLimit { .. })
        ));
    }

    #[test]
    fn zero_realization_density() {
        let m = build_mesh(&Polygon::unit_square(), 0.25).unwrap();
        let p = MaternParams::from_variance(1.0, 4.0);
        let prior = build_sparse_precision(&m, &p).unwrap();
        let n = m.num_vertices();
        let z = FieldRealization::zeros(n);
        let expect = -0.5 * n as f64 * LN_2PI + 0.5 * prior.log_det_precision();
        assert!((field_log_density(&z, &prior).unwrap() - expect).abs() < 1e-12);
        let mut bumped = z.clone();
        bumped.node_values[3] = 0.5;
        assert!(
            field_log_density(&bumped, &prior).unwrap() < field_log_density(&z, &prior).unwrap()
        );
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = build_mesh(&Polygon::unit_square(), 0.3).unwrap();
        let p = MaternParams::from_variance(1.0, 4.0);
        for prior in [
            build_sparse_precision(&m, &p).unwrap(),
            build_dense_covariance(&m, &p).unwrap(),
        ] {
            assert_eq!(
                sample_field(&prior, 7).unwrap(),
                sample_field(&prior, 7).unwrap()
            );
            assert_ne!(
                sample_field(&prior, 7).unwrap(),
                sample_field(&prior, 8).unwrap()
            );
        }
    }
}
