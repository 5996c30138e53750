//! MAP fitting, latent profiling and Laplace curvature.
//!
//! Three treatments of the latent block `u` (field nodes and overdispersion
//! values) given the remaining parameters `φ`:
//!
//! * `Joint`: minimize the negative log posterior `f(φ, u)` over everything.
//! * `Profile`: minimize `f(φ, û(φ))` where an inner Newton loop finds `û`.
//! * `Laplace`: minimize `L(φ) = f(φ, û) + ½ log det H(φ, û) − (m/2) log 2π`,
//!   the Laplace approximation to `−log ∫ exp(−f) du`, with `H` the latent
//!   Hessian. Joint maximization over `u` and free field hyperparameters is
//!   degenerate (`u → 0`, `τ → ∞`); the determinant term removes that.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compiled::{CompiledModel, Decomposition, Evaluation};
use super::layout::{ParamKind, ParameterVector, Role};
use super::optim::{minimize, LbfgsOptions, LbfgsReport};
use super::sparse::SparseFactor;
use crate::error::{Error, Result};
use crate::numeric::LN_2PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    /// `Laplace` when a field or overdispersion hyperparameter is free,
    /// otherwise `Profile` above the vertex threshold and `Joint` below it.
    #[default]
    Auto,
    Joint,
    Profile,
    Laplace,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub lbfgs: LbfgsOptions,
    pub latent: LatentMode,
    pub profile_threshold: usize,
    pub inner_max_iter: usize,
    /// Relative step for finite-difference Hessian columns.
    pub hessian_step: f64,
    /// Relative step for the derivative of the log-determinant term.
    pub laplace_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsOptions::default(),
            latent: LatentMode::Auto,
            profile_threshold: 500,
            inner_max_iter: 50,
            hessian_step: 1e-5,
            laplace_step: 1e-5,
        }
    }
}

/// Uncertainty of the latent block under the Laplace treatment:
/// `Cov(u) ≈ H⁻¹ + J Σ_φ Jᵀ` with `J = dû/dφ`.
#[derive(Debug, Clone)]
pub struct LatentUncertainty {
    pub factor: Arc<SparseFactor>,
    /// `m × d`, columns ordered as `FitResult::hessian_params`.
    pub jacobian: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub optimum: ParameterVector,
    /// Objective at the optimum: `f` for joint and profiled fits, `L` for Laplace fits.
    pub neg_loglik: f64,
    /// ∞-norm of the optimizer's gradient at the optimum.
    pub gradient_norm: f64,
    /// ∞-norm of the latent gradient after the final inner solve.
    pub latent_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub line_search_failures: usize,
    pub message: String,
    pub mode: LatentMode,
    /// Every dataset was empty, so the fit reflects priors only.
    pub prior_only: bool,
    pub decomposition: Decomposition,
    /// `½ log det H − (m/2) log 2π` for Laplace fits.
    pub laplace_correction: Option<f64>,
    pub clamped: usize,
    /// Objective after each accepted optimizer step.
    pub history: Vec<f64>,
    /// Finite-difference Hessian over `hessian_params`.
    pub hessian: Option<DMatrix<f64>>,
    pub hessian_params: Vec<usize>,
    pub covariance: Option<DMatrix<f64>>,
    pub latent_uncertainty: Option<LatentUncertainty>,
    /// Standard errors of non-latent parameters; `None` when withheld.
    pub standard_errors: BTreeMap<String, Option<f64>>,
    pub se_diagnostic: Option<String>,
}

impl FitResult {
    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.optimum.get(name)
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.standard_errors.get(name).copied().flatten()
    }

    /// Variance of `Σ c_i θ_i` under the fitted curvature. Fixed parameters
    /// contribute nothing; `None` when a coefficient falls on a parameter
    /// without curvature information.
    pub fn linear_variance(&self, model: &CompiledModel, coefs: &[(usize, f64)]) -> Option<f64> {
        let cov = self.covariance.as_ref()?;
        let fixed = |i: usize| model.spec().fixed.contains_key(model.layout().name(i));
        let row = |i: usize| self.hessian_params.iter().position(|&p| p == i);
        let l0 = model.layout().latent_start();
        let d = self.hessian_params.len();
        let mut a_phi = DVector::zeros(d);
        let mut a_u: Vec<(usize, f64)> = Vec::new();
        for &(i, c) in coefs {
            if c == 0.0 || fixed(i) {
                continue;
            }
            match (row(i), &self.latent_uncertainty) {
                (Some(r), _) => a_phi[r] += c,
                (None, Some(_)) if i >= l0 => a_u.push((i - l0, c)),
                _ => return None,
            }
        }
        let mut v = 0.0;
        if let Some(lu) = &self.latent_uncertainty {
            if !a_u.is_empty() {
                let mut dense = vec![0.0; lu.factor.dim()];
                for &(k, c) in &a_u {
                    dense[k] += c;
                }
                let x = lu.factor.solve(&dense);
                v += dense.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
                a_phi += lu.jacobian.transpose() * DVector::from_vec(dense);
            }
        }
        v += (a_phi.transpose() * cov * &a_phi)[(0, 0)];
        Some(v.max(0.0))
    }
}

fn inf_norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// Newton solver for the latent block with everything else held.
struct Latent<'a> {
    model: &'a CompiledModel,
    l0: usize,
    m: usize,
    max_iter: usize,
}

struct InnerSolution {
    eval: Evaluation,
    evaluations: usize,
}

impl<'a> Latent<'a> {
    fn new(model: &'a CompiledModel, max_iter: usize) -> Self {
        let l0 = model.layout().latent_start();
        Self {
            model,
            l0,
            m: model.dim() - l0,
            max_iter,
        }
    }

    fn factor(&self, th: &[f64]) -> Result<SparseFactor> {
        let (f, ridge) = SparseFactor::new(self.m, &self.model.latent_hessian(th)?)?;
        if ridge > 0.0 {
            log::warn!("latent Hessian needed a ridge of {ridge:e}");
        }
        Ok(f)
    }

    fn residual(&self, ev: &Evaluation) -> f64 {
        inf_norm(ev.gradient[self.l0..].iter().copied())
    }

    fn solve(&self, th: &mut [f64]) -> Result<InnerSolution> {
        let mut ev = self.model.evaluate(th)?;
        let mut evaluations = 1;
        for _ in 0..self.max_iter {
            let scale = 1.0 + ev.value.abs();
            let r0 = self.residual(&ev);
            if r0 <= 1e-11 * scale {
                break;
            }
            let g = &ev.gradient[self.l0..];
            let step: Vec<f64> = self.factor(th)?.solve(g).into_iter().map(|v| -v).collect();
            let decrement = -g.iter().zip(&step).map(|(a, b)| a * b).sum::<f64>();
            let base = th[self.l0..].to_vec();
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                for (k, x) in th[self.l0..].iter_mut().enumerate() {
                    *x = base[k] + t * step[k];
                }
                evaluations += 1;
                if let Ok(trial) = self.model.evaluate(th) {
                    let sufficient = trial.value <= ev.value - 1e-4 * t * decrement;
                    let at_noise = decrement <= 1e-10 * scale
                        && trial.value <= ev.value + 1e-14 * scale
                        && self.residual(&trial) < r0;
                    if sufficient || at_noise {
                        ev = trial;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                th[self.l0..].copy_from_slice(&base);
                break;
            }
        }
        Ok(InnerSolution {
            eval: ev,
            evaluations,
        })
    }
}

/// The Laplace objective and its gradient over the outer coordinates.
struct LaplaceObjective<'a> {
    latent: Latent<'a>,
    outer: Vec<usize>,
    step: f64,
}

struct LaplacePoint {
    th: Vec<f64>,
    value: f64,
    correction: f64,
    gradient: Vec<f64>,
    evaluations: usize,
}

impl LaplaceObjective<'_> {
    fn correction(&self, th: &[f64]) -> Result<f64> {
        let m = self.latent.m as f64;
        Ok(0.5 * self.latent.factor(th)?.log_det() - 0.5 * m * LN_2PI)
    }

    /// Solves the latents from `warm` with `x` on the outer coordinates.
    fn at(&self, warm: &[f64], x: &[f64]) -> Result<LaplacePoint> {
        let mut th = warm.to_vec();
        for (k, &i) in self.outer.iter().enumerate() {
            th[i] = x[k];
        }
        let inner = self.latent.solve(&mut th)?;
        let factor = self.latent.factor(&th)?;
        let m = self.latent.m as f64;
        let correction = 0.5 * factor.log_det() - 0.5 * m * LN_2PI;
        // d/dφ_j of the correction along û(φ). Central differences along the
        // tangent (e_j, dû/dφ_j) agree with the curve to second order, and the
        // second-order offsets cancel between the two sides.
        let l0 = self.latent.l0;
        let exact = self.latent.model.latent_hessian_exact(&th)?;
        let parts: Vec<f64> = self
            .outer
            .par_iter()
            .map(|&i| -> Result<f64> {
                let h = self.step * th[i].abs().max(1.0);
                let shifted = |s: f64, du: Option<&[f64]>| {
                    let mut t = th.clone();
                    t[i] += s * h;
                    if let Some(du) = du {
                        t[l0..]
                            .iter_mut()
                            .zip(du)
                            .for_each(|(a, d)| *a += s * h * d);
                    }
                    t
                };
                let gp = self.latent.model.evaluate(&shifted(1.0, None))?.gradient;
                let gm = self.latent.model.evaluate(&shifted(-1.0, None))?.gradient;
                let mixed: Vec<f64> = gp[l0..]
                    .iter()
                    .zip(&gm[l0..])
                    .map(|(a, b)| (a - b) / (2.0 * h))
                    .collect();
                let du: Vec<f64> = refine(&factor, &exact, &mixed)
                    .into_iter()
                    .map(|v| -v)
                    .collect();
                let cp = self.correction(&shifted(1.0, Some(&du)))?;
                let cm = self.correction(&shifted(-1.0, Some(&du)))?;
                Ok((cp - cm) / (2.0 * h))
            })
            .collect::<Result<_>>()?;
        let gradient = self
            .outer
            .iter()
            .zip(&parts)
            .map(|(&i, d)| inner.eval.gradient[i] + d)
            .collect();
        let evaluations = inner.evaluations + 2 * parts.len();
        Ok(LaplacePoint {
            value: inner.eval.value + correction,
            correction,
            gradient,
            th,
            evaluations,
        })
    }
}

/// Laplace objective at the non-latent values of `th` (latents are solved
/// from `th` as a start), with its gradient over the free non-latent
/// parameters in layout order.
pub fn laplace_objective(
    model: &CompiledModel,
    th: &[f64],
    opts: &FitOptions,
) -> Result<(f64, Vec<f64>)> {
    if th.len() != model.dim() {
        return Err(Error::InvalidArgument(
            "vector does not match the model layout".into(),
        ));
    }
    let l0 = model.layout().latent_start();
    let outer: Vec<usize> = model.free().iter().copied().filter(|&i| i < l0).collect();
    let x: Vec<f64> = outer.iter().map(|&i| th[i]).collect();
    let objective = LaplaceObjective {
        latent: Latent::new(model, opts.inner_max_iter),
        outer,
        step: opts.laplace_step,
    };
    let p = objective.at(th, &x)?;
    Ok((p.value, p.gradient))
}

/// Solves `H x = b` for the exact latent Hessian `H` (as triplets), using the
/// factor of its semidefinite approximation as a preconditioner. The
/// approximation adds a semidefinite part to `H`, so the iteration contracts
/// wherever `H` itself is positive definite.
fn refine(approx: &SparseFactor, exact: &[(usize, usize, f64)], b: &[f64]) -> Vec<f64> {
    let residual = |x: &[f64]| {
        let mut r = b.to_vec();
        for &(i, j, v) in exact {
            r[i] -= v * x[j];
        }
        r
    };
    let scale = inf_norm(b.iter().copied()).max(f64::MIN_POSITIVE);
    let mut x = approx.solve(b);
    let mut r = residual(&x);
    let mut norm = inf_norm(r.iter().copied());
    for _ in 0..50 {
        if norm <= 1e-13 * scale {
            break;
        }
        let next: Vec<f64> = x.iter().zip(approx.solve(&r)).map(|(a, d)| a + d).collect();
        let r_next = residual(&next);
        let n_next = inf_norm(r_next.iter().copied());
        if n_next >= norm {
            break;
        }
        (x, r, norm) = (next, r_next, n_next);
    }
    x
}

fn resolve_mode(model: &CompiledModel, opts: &FitOptions) -> LatentMode {
    let layout = model.layout();
    let l0 = layout.latent_start();
    let latent_free = model.free().iter().filter(|&&i| i >= l0).count();
    if latent_free == 0 {
        return LatentMode::Joint;
    }
    if latent_free < layout.len() - l0 {
        if !matches!(opts.latent, LatentMode::Joint | LatentMode::Auto) {
            log::warn!("some latent values are held fixed; using the joint treatment");
        }
        return LatentMode::Joint;
    }
    match opts.latent {
        LatentMode::Auto => {
            let free_hyper = model.free().iter().any(|&i| {
                !model.dead()[i]
                    && matches!(
                        layout.params()[i].role,
                        Role::LogTau | Role::LogKappa | Role::LogSigmaEps
                    )
            });
            if free_hyper {
                LatentMode::Laplace
            } else if model.spec().mesh.num_vertices() > opts.profile_threshold {
                LatentMode::Profile
            } else {
                LatentMode::Joint
            }
        }
        mode => mode,
    }
}

/// Penalized maximum likelihood (MAP) fit; see the module docs for the
/// latent treatments.
pub fn fit_map(
    model: &CompiledModel,
    init: Option<ParameterVector>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if model.spec().datasets.is_empty() {
        return Err(Error::Spec(
            "at least one dataset is required to fit".into(),
        ));
    }
    let init = match init {
        Some(mut p) => {
            if **p.layout() != **model.layout() {
                return Err(Error::InvalidArgument(
                    "initial vector does not match the model layout".into(),
                ));
            }
            for (name, v) in &model.spec().fixed {
                p.set(name, *v)?;
            }
            p
        }
        None => model.initial(),
    };
    let layout = model.layout().clone();
    let mode = resolve_mode(model, opts);
    let free = model.free().to_vec();
    let l0 = layout.latent_start();
    let outer: Vec<usize> = free.iter().copied().filter(|&i| i < l0).collect();
    let base = init.values().to_vec();
    let latent = Latent::new(model, opts.inner_max_iter);

    let report: LbfgsReport;
    let mut th_final = base.clone();
    let mut extra_evals = 0;
    let mut laplace = None;
    match mode {
        LatentMode::Joint | LatentMode::Auto => {
            let x0: Vec<f64> = free.iter().map(|&i| base[i]).collect();
            let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
                let mut th = base.clone();
                for (k, &i) in free.iter().enumerate() {
                    th[i] = x[k];
                }
                let ev = model.evaluate(&th)?;
                Ok((ev.value, free.iter().map(|&i| ev.gradient[i]).collect()))
            };
            report = minimize(f, x0, &opts.lbfgs)?;
            for (k, &i) in free.iter().enumerate() {
                th_final[i] = report.x[k];
            }
        }
        LatentMode::Profile => {
            let mut warm = base.clone();
            let x0: Vec<f64> = outer.iter().map(|&i| base[i]).collect();
            let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
                let mut th = warm.clone();
                for (k, &i) in outer.iter().enumerate() {
                    th[i] = x[k];
                }
                let sol = latent.solve(&mut th)?;
                extra_evals += sol.evaluations;
                warm = th;
                Ok((
                    sol.eval.value,
                    outer.iter().map(|&i| sol.eval.gradient[i]).collect(),
                ))
            };
            report = minimize(f, x0, &opts.lbfgs)?;
            th_final = with_outer(&warm, &outer, &report.x);
            extra_evals += latent.solve(&mut th_final)?.evaluations;
        }
        LatentMode::Laplace => {
            let objective = LaplaceObjective {
                latent: Latent::new(model, opts.inner_max_iter),
                outer: outer.clone(),
                step: opts.laplace_step,
            };
            let mut warm = base.clone();
            let x0: Vec<f64> = outer.iter().map(|&i| base[i]).collect();
            let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
                let p = objective.at(&warm, x)?;
                extra_evals += p.evaluations;
                warm = p.th;
                Ok((p.value, p.gradient))
            };
            report = minimize(f, x0, &opts.lbfgs)?;
            let p = objective.at(&warm, &report.x)?;
            extra_evals += p.evaluations;
            th_final = p.th.clone();
            laplace = Some(p);
        }
    }

    let ev = model.evaluate(&th_final)?;
    let latent_residual = inf_norm(free.iter().filter(|&&i| i >= l0).map(|&i| ev.gradient[i]));
    let (value, gradient_norm, correction) = match (&laplace, mode) {
        (Some(p), _) => (
            p.value,
            inf_norm(p.gradient.iter().copied()),
            Some(p.correction),
        ),
        (None, LatentMode::Profile) => (
            ev.value,
            inf_norm(outer.iter().map(|&i| ev.gradient[i])),
            None,
        ),
        _ => (
            ev.value,
            inf_norm(free.iter().map(|&i| ev.gradient[i])),
            None,
        ),
    };
    let scale = 1.0 + value.abs();
    let tol_ok = gradient_norm < opts.lbfgs.grad_tol * scale;
    let latent_ok = mode == LatentMode::Joint || latent_residual < 1e-6 * scale;
    let converged = report.converged && tol_ok && latent_ok;
    let message = if report.converged && !converged {
        format!(
            "{}; gradient above tolerance after the final latent solve",
            report.message
        )
    } else {
        report.message.clone()
    };
    let prior_only = model.spec().datasets.iter().all(|d| d.dataset.is_empty());
    if prior_only {
        log::warn!("all datasets are empty; the fit reflects priors only");
    }
    if ev.clamped > 0 {
        log::warn!(
            "{} probability evaluations were clamped at the optimum",
            ev.clamped
        );
    }
    Ok(FitResult {
        optimum: ParameterVector::new(layout.clone(), th_final)?,
        neg_loglik: value,
        gradient_norm,
        latent_residual,
        converged,
        iterations: report.iterations,
        evaluations: report.evaluations + extra_evals,
        line_search_failures: report.line_search_failures,
        message,
        mode,
        prior_only,
        decomposition: ev.parts,
        laplace_correction: correction,
        clamped: ev.clamped,
        history: report.history,
        hessian: None,
        hessian_params: Vec::new(),
        covariance: None,
        latent_uncertainty: None,
        standard_errors: BTreeMap::new(),
        se_diagnostic: None,
    })
}

fn with_outer(base: &[f64], outer: &[usize], x: &[f64]) -> Vec<f64> {
    let mut th = base.to_vec();
    for (k, &i) in outer.iter().enumerate() {
        th[i] = x[k];
    }
    th
}

/// Central differences of a gradient function over the coordinates in
/// `index`, symmetrized. `grad` returns the gradient restricted to `index`.
fn fd_hessian<G>(th: &[f64], index: &[usize], rel_step: f64, grad: G) -> Result<DMatrix<f64>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let m = index.len();
    let cols: Vec<Vec<f64>> = index
        .par_iter()
        .map(|&j| -> Result<Vec<f64>> {
            let h = rel_step * th[j].abs().max(1.0);
            let mut tp = th.to_vec();
            tp[j] += h;
            let mut tm = th.to_vec();
            tm[j] -= h;
            let (gp, gm) = (grad(&tp)?, grad(&tm)?);
            Ok(gp
                .iter()
                .zip(&gm)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect())
        })
        .collect::<Result<_>>()?;
    let hm = DMatrix::from_fn(m, m, |r, c| cols[c][r]);
    Ok((&hm + hm.transpose()) * 0.5)
}

/// Dense Hessian of the negative log posterior over `index`, by central
/// differences of the analytic gradient.
pub fn finite_difference_hessian(
    model: &CompiledModel,
    th: &[f64],
    index: &[usize],
    rel_step: f64,
) -> Result<DMatrix<f64>> {
    fd_hessian(th, index, rel_step, |t| {
        let g = model.evaluate(t)?.gradient;
        Ok(index.iter().map(|&i| g[i]).collect())
    })
}

/// Laplace standard errors: the inverse Hessian of the fitted objective at
/// the optimum. Dead and fixed parameters have their SEs withheld; an
/// indefinite Hessian withholds all of them with a diagnostic.
pub fn laplace_standard_errors(
    model: &CompiledModel,
    mut fit: FitResult,
    opts: &FitOptions,
) -> Result<FitResult> {
    let layout = model.layout().clone();
    let th = fit.optimum.values().to_vec();
    let l0 = layout.latent_start();
    let laplace = fit.mode == LatentMode::Laplace;
    let candidates: Vec<usize> = model
        .free()
        .iter()
        .copied()
        .filter(|&i| !model.dead()[i] && (!laplace || i < l0))
        .collect();

    let h_full = if laplace {
        let objective = LaplaceObjective {
            latent: Latent::new(model, opts.inner_max_iter),
            outer: candidates.clone(),
            step: opts.laplace_step,
        };
        // The outer gradient is itself partly a difference quotient, so step wider.
        let step = (opts.hessian_step * 10.0).max(1e-4);
        fd_hessian(&th, &candidates, step, |t| {
            let x: Vec<f64> = candidates.iter().map(|&i| t[i]).collect();
            Ok(objective.at(&th, &x)?.gradient)
        })?
    } else {
        finite_difference_hessian(model, &th, &candidates, opts.hessian_step)?
    };
    let keep: Vec<usize> = (0..candidates.len())
        .filter(|&r| h_full.row(r).iter().any(|v| *v != 0.0))
        .collect();
    let params: Vec<usize> = keep.iter().map(|&r| candidates[r]).collect();
    let hessian = DMatrix::from_fn(keep.len(), keep.len(), |a, b| h_full[(keep[a], keep[b])]);

    fit.standard_errors.clear();
    fit.se_diagnostic = (!fit.converged)
        .then(|| "fit did not converge; standard errors may be unreliable".to_string());
    let reported = |kind: ParamKind| !matches!(kind, ParamKind::Latent | ParamKind::Overdispersion);
    match Cholesky::new(hessian.clone()) {
        Some(chol) => {
            let cov = chol.inverse();
            for (i, p) in layout.params().iter().enumerate() {
                if reported(p.kind) {
                    let se = params
                        .iter()
                        .position(|&q| q == i)
                        .map(|a| cov[(a, a)].sqrt())
                        .filter(|v| v.is_finite());
                    fit.standard_errors.insert(p.name.clone(), se);
                }
            }
            fit.latent_uncertainty = if laplace {
                Some(latent_uncertainty(model, &th, &params, opts)?)
            } else {
                None
            };
            fit.covariance = Some(cov);
        }
        None => {
            for p in layout.params() {
                if reported(p.kind) {
                    fit.standard_errors.insert(p.name.clone(), None);
                }
            }
            fit.se_diagnostic =
                Some("Hessian is not positive definite; standard errors withheld".into());
            fit.covariance = None;
            fit.latent_uncertainty = None;
        }
    }
    fit.hessian = Some(hessian);
    fit.hessian_params = params;
    Ok(fit)
}

/// `H` at the optimum and `J = dû/dφ = −H⁻¹ ∂²f/∂u∂φ`, the mixed block by
/// central differences of the analytic gradient.
fn latent_uncertainty(
    model: &CompiledModel,
    th: &[f64],
    outer: &[usize],
    opts: &FitOptions,
) -> Result<LatentUncertainty> {
    let latent = Latent::new(model, opts.inner_max_iter);
    let factor = latent.factor(th)?;
    let exact = model.latent_hessian_exact(th)?;
    let l0 = latent.l0;
    let cols: Vec<Vec<f64>> = outer
        .par_iter()
        .map(|&j| -> Result<Vec<f64>> {
            let h = opts.hessian_step * th[j].abs().max(1.0);
            let mut tp = th.to_vec();
            tp[j] += h;
            let mut tm = th.to_vec();
            tm[j] -= h;
            let (gp, gm) = (model.evaluate(&tp)?.gradient, model.evaluate(&tm)?.gradient);
            let b: Vec<f64> = gp[l0..]
                .iter()
                .zip(&gm[l0..])
                .map(|(a, c)| (a - c) / (2.0 * h))
                .collect();
            Ok(refine(&factor, &exact, &b)
                .into_iter()
                .map(|v| -v)
                .collect())
        })
        .collect::<Result<_>>()?;
    let jacobian = DMatrix::from_fn(latent.m, outer.len(), |r, c| cols[c][r]);
    Ok(LatentUncertainty {
        factor: Arc::new(factor),
        jacobian,
    })
}

/// Second derivative of the negative log posterior along `d` at `th`, by
/// central differences of the gradient.
pub fn directional_curvature(
    model: &CompiledModel,
    th: &[f64],
    d: &[f64],
    step: f64,
) -> Result<f64> {
    let norm = DVector::from_column_slice(d).norm();
    let h = step / norm.max(1e-300);
    let tp: Vec<f64> = th.iter().zip(d).map(|(a, b)| a + h * b).collect();
    let tm: Vec<f64> = th.iter().zip(d).map(|(a, b)| a - h * b).collect();
    let gp = model.evaluate(&tp)?.gradient;
    let gm = model.evaluate(&tm)?.gradient;
    Ok(gp
        .iter()
        .zip(&gm)
        .zip(d)
        .map(|((a, b), di)| (a - b) / (2.0 * h) * di)
        .sum())
}
