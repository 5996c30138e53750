//! Finite-element precision for the ν = 1 Matérn field in two dimensions.
//!
//! With lumped mass `C` and stiffness `G` of the piecewise-linear basis,
//! `Q = τ² (κ⁴ C + 2κ² G + G C⁻¹ G) = τ² K C⁻¹ K` where `K = κ² C + G`.
//! The factored form gives a closed-form log-determinant in terms of the
//! generalized eigenvalues `λ_i` of `G v = λ C v`:
//!
//! `log det Q = 2n log τ + log det C + 2 Σ log(κ² + λ_i)`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use super::{FieldTerms, MaternParams};
use crate::error::{Error, Result};
use crate::mesh::TriangulatedDomain;
use crate::numeric::{Accumulator, LN_2PI};

/// Meshes up to this many vertices use the eigenvalue form of the log-determinant.
pub const SPECTRAL_LIMIT: usize = 1500;

#[derive(Debug)]
pub struct SpdeOperator {
    n: usize,
    mass: Vec<f64>,
    stiffness: CscMatrix<f64>,
    log_det_mass: f64,
    spectrum: OnceLock<Vec<f64>>,
}

impl Clone for SpdeOperator {
    fn clone(&self) -> Self {
        let spectrum = OnceLock::new();
        if let Some(s) = self.spectrum.get() {
            let _ = spectrum.set(s.clone());
        }
        Self {
            n: self.n,
            mass: self.mass.clone(),
            stiffness: self.stiffness.clone(),
            log_det_mass: self.log_det_mass,
            spectrum,
        }
    }
}

impl SpdeOperator {
    pub fn new(mesh: &TriangulatedDomain) -> Result<Self> {
        let n = mesh.num_vertices();
        let verts = mesh.vertices();
        let mut coo = CooMatrix::new(n, n);
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let area = mesh.triangle_area(t);
            if !(area > 0.0) {
                return Err(Error::InvalidPrior(format!(
                    "triangle {t} has zero area; mass matrix is singular"
                )));
            }
            // Edge opposite vertex k, oriented consistently.
            let e: [(f64, f64); 3] = std::array::from_fn(|k| {
                let a = verts[tri[(k + 1) % 3]];
                let b = verts[tri[(k + 2) % 3]];
                (b.x - a.x, b.y - a.y)
            });
            for i in 0..3 {
                for j in 0..3 {
                    let v = (e[i].0 * e[j].0 + e[i].1 * e[j].1) / (4.0 * area);
                    coo.push(tri[i], tri[j], v);
                }
            }
        }
        let mass = mesh.dual_areas().to_vec();
        if let Some(i) = mass.iter().position(|&c| !(c > 0.0)) {
            return Err(Error::InvalidPrior(format!("vertex {i} has zero mass")));
        }
        let log_det_mass = mass.iter().map(|c| c.ln()).sum();
        Ok(Self {
            n,
            mass,
            stiffness: CscMatrix::from(&coo),
            log_det_mass,
            spectrum: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn stiffness(&self) -> &CscMatrix<f64> {
        &self.stiffness
    }

    fn stiffness_times(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        let g = &self.stiffness;
        for (j, col) in (0..self.n).map(|j| (j, g.col(j))) {
            let uj = u[j];
            for (&i, &v) in col.row_indices().iter().zip(col.values()) {
                out[i] += v * uj;
            }
        }
        out
    }

    /// `Q u` without forming `Q`.
    pub fn apply_precision(&self, params: &MaternParams, u: &[f64]) -> Vec<f64> {
        let (tau2, k2) = (params.tau().powi(2), params.kappa().powi(2));
        let gu = self.stiffness_times(u);
        let cinv_gu: Vec<f64> = gu.iter().zip(&self.mass).map(|(g, c)| g / c).collect();
        let gcg_u = self.stiffness_times(&cinv_gu);
        (0..self.n)
            .map(|i| tau2 * (k2 * k2 * self.mass[i] * u[i] + 2.0 * k2 * gu[i] + gcg_u[i]))
            .collect()
    }

    /// Assembled sparse precision matrix.
    pub fn precision(&self, params: &MaternParams) -> CscMatrix<f64> {
        let (tau2, k2) = (params.tau().powi(2), params.kappa().powi(2));
        let g = &self.stiffness;
        // C⁻¹ G: scale row i by 1/c_i.
        let mut cinv_g = g.clone();
        {
            let (_, row_idx, vals) = cinv_g.csc_data_mut();
            for (r, v) in row_idx.iter().zip(vals.iter_mut()) {
                *v /= self.mass[*r];
            }
        }
        let gcg = g * &cinv_g;
        let mut coo = CooMatrix::new(self.n, self.n);
        for i in 0..self.n {
            coo.push(i, i, tau2 * k2 * k2 * self.mass[i]);
        }
        for (i, j, v) in g.triplet_iter() {
            coo.push(i, j, tau2 * 2.0 * k2 * v);
        }
        for (i, j, v) in gcg.triplet_iter() {
            coo.push(i, j, tau2 * v);
        }
        CscMatrix::from(&coo)
    }

    fn spectrum(&self) -> &[f64] {
        self.spectrum.get_or_init(|| {
            let mut dense = DMatrix::<f64>::zeros(self.n, self.n);
            for (i, j, v) in self.stiffness.triplet_iter() {
                dense[(i, j)] = v / (self.mass[i] * self.mass[j]).sqrt();
            }
            let mut ev: Vec<f64> = dense
                .symmetric_eigenvalues()
                .iter()
                .map(|&l| l.max(0.0))
                .collect();
            ev.sort_by(f64::total_cmp);
            ev
        })
    }

    /// Log-determinant of `Q` and its derivative with respect to log κ
    /// (the log τ derivative is always `2n`).
    pub fn log_det(&self, params: &MaternParams) -> Result<(f64, f64)> {
        let k2 = params.kappa().powi(2);
        let n = self.n as f64;
        if self.n <= SPECTRAL_LIMIT {
            let mut s = Accumulator::new();
            let mut ds = Accumulator::new();
            for &l in self.spectrum() {
                s.add((k2 + l).ln());
                ds.add(1.0 / (k2 + l));
            }
            let value = 2.0 * n * params.log_tau + self.log_det_mass + 2.0 * s.value();
            return Ok((value, 4.0 * k2 * ds.value()));
        }
        // Large meshes: factor K = κ²C + G and get diag(K⁻¹) column by column.
        let mut coo = CooMatrix::new(self.n, self.n);
        for i in 0..self.n {
            coo.push(i, i, k2 * self.mass[i]);
        }
        for (i, j, v) in self.stiffness.triplet_iter() {
            coo.push(i, j, *v);
        }
        let k = CscMatrix::from(&coo);
        let chol = CscCholesky::factor(&k)
            .map_err(|e| Error::InvalidPrior(format!("K factorization failed: {e}")))?;
        let l = chol.l();
        let log_det_k: f64 = (0..self.n).map(|j| 2.0 * diag_of(l, j).ln()).sum();
        let mut trace = Accumulator::new();
        let mut e = DMatrix::<f64>::zeros(self.n, 1);
        for j in 0..self.n {
            e.fill(0.0);
            e[(j, 0)] = 1.0;
            let x = chol.solve(&e);
            trace.add(self.mass[j] * x[(j, 0)]);
        }
        let value = 2.0 * n * params.log_tau + 2.0 * log_det_k - self.log_det_mass;
        Ok((value, 4.0 * k2 * trace.value()))
    }

    /// Log-density of `u` with hyperparameter and latent gradients.
    pub fn evaluate(&self, params: &MaternParams, u: &[f64]) -> Result<FieldTerms> {
        let (tau2, k2) = (params.tau().powi(2), params.kappa().powi(2));
        let gu = self.stiffness_times(u);
        let mut a = Accumulator::new();
        let mut b = Accumulator::new();
        let mut c = Accumulator::new();
        for i in 0..self.n {
            a.add(self.mass[i] * u[i] * u[i]);
            b.add(u[i] * gu[i]);
            c.add(gu[i] * gu[i] / self.mass[i]);
        }
        let (a, b, c) = (a.value(), b.value(), c.value());
        let quad = tau2 * (k2 * k2 * a + 2.0 * k2 * b + c);
        let (log_det, dlog_det_kappa) = self.log_det(params)?;
        let n = self.n as f64;
        let log_density = -0.5 * n * LN_2PI + 0.5 * log_det - 0.5 * quad;
        let qu = self.apply_precision(params, u);
        Ok(FieldTerms {
            log_density,
            d_log_tau: n - quad,
            d_log_kappa: 0.5 * dlog_det_kappa - 0.5 * tau2 * (4.0 * k2 * k2 * a + 4.0 * k2 * b),
            grad_u: qu.into_iter().map(|v| -v).collect(),
        })
    }
}

pub(crate) fn diag_of(l: &CscMatrix<f64>, j: usize) -> f64 {
    let col = l.col(j);
    col.row_indices()
        .iter()
        .zip(col.values())
        .find(|(&i, _)| i == j)
        .map(|(_, &v)| v)
        .unwrap_or(0.0)
}

pub(crate) fn csc_times(m: &CscMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let x = DVector::from_column_slice(v);
    let y = m * &x;
    y.iter().copied().collect()
}
