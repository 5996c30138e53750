//! The joint negative log-posterior compiled against the flat layout.
//!
//! Every dataset record becomes one or more terms whose linear predictor is a
//! [`Form`]: an affine function of the flat parameters, plus range-map terms
//! `−e^{θ_g} d` and logistic thinning terms `log σ(ζ)`.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layout::{Layout, ParamKind, ParameterVector, Role};
use super::spec::{DatasetBinding, ModelSpec, Prior};
use crate::error::{Error, Result};
use crate::mesh::{Point2D, TriangulatedDomain};
use crate::numeric::{logistic, normal_logpdf, Accumulator};
use crate::observation::{check_region, kernel, Dataset, Effort, PointKernel, ThinningLink};
use crate::process_model::{range_distance, LinearPredictor, Term};
use crate::random_field::{log_tau_for, FieldModel, MaternParams};

/// Default prior sd for fixed effects and observation coefficients.
pub const COEFFICIENT_PRIOR_SD: f64 = 10.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearForm {
    pub offset: f64,
    pub coefs: Vec<(usize, f64)>,
}

impl LinearForm {
    pub fn eval(&self, th: &[f64]) -> f64 {
        self.offset + self.coefs.iter().map(|&(i, c)| c * th[i]).sum::<f64>()
    }

    fn dot(&self, d: &[f64]) -> f64 {
        self.coefs.iter().map(|&(i, c)| c * d[i]).sum()
    }
}

/// `η = offset + Σ c_i θ_i − Σ e^{θ_g} d_g + Σ log σ(ζ_k)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Form {
    pub offset: f64,
    pub coefs: Vec<(usize, f64)>,
    pub range: Vec<(usize, f64)>,
    pub links: Vec<LinearForm>,
}

fn log_logistic(z: f64) -> f64 {
    if z > 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

impl Form {
    pub fn eval(&self, th: &[f64]) -> f64 {
        let mut s = self.offset;
        for &(i, c) in &self.coefs {
            s += c * th[i];
        }
        for &(g, d) in &self.range {
            s -= th[g].exp() * d;
        }
        for l in &self.links {
            s += log_logistic(l.eval(th));
        }
        s
    }

    /// `g += scale · ∇η`.
    pub fn add_grad(&self, th: &[f64], scale: f64, g: &mut [f64]) {
        for &(i, c) in &self.coefs {
            g[i] += scale * c;
        }
        for &(gi, d) in &self.range {
            g[gi] -= scale * th[gi].exp() * d;
        }
        for l in &self.links {
            let s = scale * (1.0 - logistic(l.eval(th)));
            for &(i, c) in &l.coefs {
                g[i] += s * c;
            }
        }
    }

    /// Nonzero entries of `∇η`, sorted by index.
    pub fn gradient_terms(&self, th: &[f64]) -> Vec<(usize, f64)> {
        let mut out = self.coefs.clone();
        out.extend(self.range.iter().map(|&(g, d)| (g, -th[g].exp() * d)));
        for l in &self.links {
            let s = 1.0 - logistic(l.eval(th));
            out.extend(l.coefs.iter().map(|&(i, c)| (i, s * c)));
        }
        merge(&mut out);
        out
    }

    /// `(∇η·d, dᵀ ∇²η d)`.
    pub fn directional(&self, th: &[f64], d: &[f64]) -> (f64, f64) {
        let mut first = self.coefs.iter().map(|&(i, c)| c * d[i]).sum::<f64>();
        let mut second = 0.0;
        for &(g, dist) in &self.range {
            let r = -th[g].exp() * dist;
            first += r * d[g];
            second += r * d[g] * d[g];
        }
        for l in &self.links {
            let s = logistic(l.eval(th));
            let ld = l.dot(d);
            first += (1.0 - s) * ld;
            second -= s * (1.0 - s) * ld * ld;
        }
        (first, second)
    }

    fn normalize(&mut self) {
        merge(&mut self.coefs);
        merge(&mut self.range);
        for l in &mut self.links {
            merge(&mut l.coefs);
        }
    }

    fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.coefs
            .iter()
            .map(|c| c.0)
            .chain(self.range.iter().map(|r| r.0))
            .chain(self.links.iter().flat_map(|l| l.coefs.iter().map(|c| c.0)))
    }
}

fn merge(v: &mut Vec<(usize, f64)>) {
    v.sort_by_key(|a| a.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(v.len());
    for &(i, c) in v.iter() {
        match out.last_mut() {
            Some(last) if last.0 == i => last.1 += c,
            _ => out.push((i, c)),
        }
    }
    *v = out;
}

#[derive(Debug, Clone)]
pub enum LikTerm {
    Point {
        form: Form,
        kernel: PointKernel,
    },
    Region {
        cells: Vec<(f64, Form)>,
        present: bool,
    },
}

#[derive(Debug, Clone)]
pub struct CompiledDataset {
    pub name: String,
    pub terms: Vec<LikTerm>,
}

#[derive(Debug, Clone)]
struct FieldBlock {
    model: FieldModel,
    log_tau: usize,
    log_kappa: usize,
    start: usize,
    len: usize,
    /// Dual-area integral penalty sd for bias-only fields.
    integral_sd: Option<f64>,
}

#[derive(Debug, Clone)]
struct EpsBlock {
    name: String,
    start: usize,
    len: usize,
    log_sigma: usize,
}

/// Per-part log-densities (positive orientation) of one evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub fields: Vec<(String, f64)>,
    pub bias_penalty: f64,
    pub overdispersion: Vec<(String, f64)>,
    pub priors: f64,
    pub datasets: Vec<(String, f64)>,
}

impl Decomposition {
    /// Log posterior, the negative of the objective.
    pub fn total(&self) -> f64 {
        let mut acc = Accumulator::new();
        for (_, v) in self
            .fields
            .iter()
            .chain(&self.overdispersion)
            .chain(&self.datasets)
        {
            acc.add(*v);
        }
        acc.add(self.bias_penalty);
        acc.add(self.priors);
        acc.value()
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Negative log posterior.
    pub value: f64,
    pub gradient: Vec<f64>,
    pub parts: Decomposition,
    /// Probability evaluations that hit the clamp.
    pub clamped: usize,
}

/// Joint objective bound to a spec.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    spec: Arc<ModelSpec>,
    layout: Arc<Layout>,
    fields: Vec<(String, FieldBlock)>,
    eps: Vec<EpsBlock>,
    datasets: Vec<CompiledDataset>,
    priors: Vec<(usize, Prior)>,
    dead: Vec<bool>,
    free: Vec<usize>,
}

#[derive(Clone, Copy)]
enum Loc {
    Point(Point2D, [(usize, f64); 3]),
    Vertex(usize),
}

struct Compiler<'a> {
    spec: &'a ModelSpec,
    layout: &'a Layout,
}

impl Compiler<'_> {
    fn mesh(&self) -> &TriangulatedDomain {
        &self.spec.mesh
    }

    fn covariate_at(&self, name: &str, loc: Loc) -> Result<f64> {
        let vals = &self.spec.covariates.require(name)?.values;
        Ok(match loc {
            Loc::Point(_, w) => w.iter().map(|&(i, wi)| wi * vals[i]).sum(),
            Loc::Vertex(v) => vals[v],
        })
    }

    fn position(&self, loc: Loc) -> Point2D {
        match loc {
            Loc::Point(p, _) => p,
            Loc::Vertex(v) => self.mesh().vertices()[v],
        }
    }

    fn add_predictor(&self, form: &mut Form, lp: &LinearPredictor, loc: Loc) -> Result<()> {
        for term in &lp.terms {
            match term {
                Term::Intercept { param } => form.coefs.push((self.layout.require(param)?, 1.0)),
                Term::Covariate { covariate, param } => form.coefs.push((
                    self.layout.require(param)?,
                    self.covariate_at(covariate, loc)?,
                )),
                Term::RangeMap { map, log_gamma } => {
                    let polys = self
                        .spec
                        .range_maps
                        .get(map)
                        .ok_or_else(|| Error::Spec(format!("unknown range map `{map}`")))?;
                    let d = range_distance(polys, self.position(loc));
                    form.range.push((self.layout.require(log_gamma)?, d));
                }
                Term::Field { component } => {
                    let b = self.layout.field_block(component).ok_or_else(|| {
                        Error::Spec(format!("unknown field component `{component}`"))
                    })?;
                    match loc {
                        Loc::Point(_, w) => {
                            for &(i, wi) in &w {
                                form.coefs.push((b.start + i, wi));
                            }
                        }
                        Loc::Vertex(v) => form.coefs.push((b.start + v, 1.0)),
                    }
                }
            }
        }
        Ok(())
    }

    fn add_links(&self, form: &mut Form, links: &[ThinningLink], loc: Loc) -> Result<()> {
        for link in links {
            let mut lf = LinearForm {
                offset: 0.0,
                coefs: vec![(self.layout.require(&link.intercept)?, 1.0)],
            };
            for t in &link.terms {
                lf.coefs.push((
                    self.layout.require(&t.param)?,
                    self.covariate_at(&t.covariate, loc)?,
                ));
            }
            form.links.push(lf);
        }
        Ok(())
    }

    fn add_effort(&self, form: &mut Form, effort: &Effort) -> Result<()> {
        match effort {
            Effort::Fixed { log_effort } => form.offset += log_effort,
            Effort::Estimated { param } => form.coefs.push((self.layout.require(param)?, 1.0)),
        }
        Ok(())
    }

    fn locate(&self, p: Point2D, record: usize) -> Result<Loc> {
        let w = self
            .mesh()
            .weights(p)
            .map_err(|e| e.in_record("", record))?;
        Ok(Loc::Point(p, w))
    }

    fn base_form(&self, b: &DatasetBinding, loc: Loc, with_bias: bool) -> Result<Form> {
        let mut form = Form::default();
        self.add_predictor(&mut form, &b.predictor, loc)?;
        if with_bias {
            if let Some(bias) = b.bias() {
                self.add_predictor(&mut form, bias, loc)?;
            }
        }
        self.add_links(&mut form, &b.links, loc)?;
        Ok(form)
    }

    fn dataset(&self, b: &DatasetBinding) -> Result<CompiledDataset> {
        let mut terms = Vec::new();
        // A dataset without records contributes nothing, not even an integral.
        if b.dataset.is_empty() {
            return Ok(CompiledDataset {
                name: b.name.clone(),
                terms,
            });
        }
        match &b.dataset {
            Dataset::Count(ds) => {
                let eps = self
                    .layout
                    .eps_blocks()
                    .iter()
                    .find(|e| e.name == b.name)
                    .map(|e| e.start);
                for (i, r) in ds.records.iter().enumerate() {
                    let loc = self.locate(r.site, i)?;
                    let mut form = self.base_form(b, loc, false)?;
                    self.add_effort(&mut form, &ds.effort)?;
                    if ds.duration_offset {
                        if let Some(t) = r.duration {
                            form.offset += t.ln();
                        }
                    }
                    if let Some(start) = eps {
                        form.coefs.push((start + i, 1.0));
                    }
                    form.normalize();
                    terms.push(LikTerm::Point {
                        form,
                        kernel: PointKernel::count(r.count),
                    });
                }
            }
            Dataset::Occupancy(ds) => {
                for (i, r) in ds.records.iter().enumerate() {
                    let loc = self.locate(r.site, i)?;
                    let mut form = self.base_form(b, loc, false)?;
                    self.add_effort(&mut form, &ds.effort)?;
                    form.normalize();
                    terms.push(LikTerm::Point {
                        form,
                        kernel: PointKernel::Cloglog {
                            trials: r.visits,
                            successes: r.detections,
                        },
                    });
                }
            }
            Dataset::PresenceOnly(ds) => {
                for (i, &p) in ds.points.iter().enumerate() {
                    let loc = self.locate(p, i)?;
                    let mut form = self.base_form(b, loc, true)?;
                    form.normalize();
                    terms.push(LikTerm::Point {
                        form,
                        kernel: PointKernel::Poisson {
                            response: 1.0,
                            weight: ds.data_weight,
                            constant: 0.0,
                        },
                    });
                }
                for (v, &a) in self.mesh().dual_areas().iter().enumerate() {
                    let mut form = self.base_form(b, Loc::Vertex(v), true)?;
                    form.normalize();
                    terms.push(LikTerm::Point {
                        form,
                        kernel: PointKernel::void(a),
                    });
                }
            }
            Dataset::RegionalList(ds) => {
                for (i, r) in ds.records.iter().enumerate() {
                    check_region(self.mesh(), &r.region, ds.max_diameter)
                        .map_err(|e| e.in_record("", i))?;
                    let verts = self.mesh().vertices_in(&r.region);
                    if verts.is_empty() {
                        log::warn!(
                            "dataset `{}` record {i}: region contains no integration points",
                            b.name
                        );
                    }
                    let mut cells = Vec::with_capacity(verts.len());
                    for v in verts {
                        let mut form = self.base_form(b, Loc::Vertex(v), false)?;
                        form.normalize();
                        cells.push((self.mesh().dual_areas()[v], form));
                    }
                    terms.push(LikTerm::Region {
                        cells,
                        present: r.present,
                    });
                }
            }
        }
        Ok(CompiledDataset {
            name: b.name.clone(),
            terms,
        })
    }
}

/// Default log κ and log τ prior means: range one fifth of the domain
/// diameter and unit marginal standard deviation.
pub fn default_hyper_means(mesh: &TriangulatedDomain) -> MaternParams {
    MaternParams::from_sd_and_range(1.0, mesh.diameter() / 5.0)
}

fn default_prior(mesh: &TriangulatedDomain, role: Role) -> Prior {
    match role {
        Role::Coefficient => Prior::normal(0.0, COEFFICIENT_PRIOR_SD),
        Role::LogGamma => Prior::normal(0.0, 1.0),
        Role::LogSigmaEps => Prior::normal(0.3f64.ln(), 1.0),
        Role::LogTau => Prior::normal(default_hyper_means(mesh).log_tau, 1.0),
        Role::LogKappa => Prior::normal(default_hyper_means(mesh).log_kappa, 1.0),
        Role::FieldNode | Role::EpsNode => Prior::Flat,
    }
}

impl CompiledModel {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        Self::from_arc(Arc::new(spec.clone()))
    }

    pub fn from_arc(spec: Arc<ModelSpec>) -> Result<Self> {
        spec.validate()?;
        let layout = Arc::new(Layout::from_spec(&spec)?);
        let compiler = Compiler {
            spec: &spec,
            layout: &layout,
        };
        let datasets = spec
            .datasets
            .par_iter()
            .map(|b| compiler.dataset(b).map_err(|e| e.with_dataset(&b.name)))
            .collect::<Result<Vec<_>>>()?;

        let bias_fields = spec.bias_fields();
        let mut fields = Vec::new();
        for ((f, block), (_, t, k)) in spec
            .fields
            .iter()
            .zip(layout.field_blocks())
            .zip(layout.hyper())
        {
            let model = FieldModel::new(&spec.mesh, f.representation)?;
            let integral_sd = if bias_fields.contains(&f.name) {
                spec.bias_integral_sd
            } else {
                None
            };
            fields.push((
                f.name.clone(),
                FieldBlock {
                    model,
                    log_tau: *t,
                    log_kappa: *k,
                    start: block.start,
                    len: block.len,
                    integral_sd,
                },
            ));
        }
        let mut eps = Vec::new();
        for b in layout.eps_blocks() {
            let binding = spec
                .datasets
                .iter()
                .find(|d| d.name == b.name)
                .expect("eps block of a dataset");
            eps.push(EpsBlock {
                name: b.name.clone(),
                start: b.start,
                len: b.len,
                log_sigma: layout.require(&binding.log_sigma_eps_name())?,
            });
        }

        let mut used = vec![false; layout.len()];
        for d in &datasets {
            for t in &d.terms {
                match t {
                    LikTerm::Point { form, .. } => form.indices().for_each(|i| used[i] = true),
                    LikTerm::Region { cells, .. } => cells
                        .iter()
                        .for_each(|(_, f)| f.indices().for_each(|i| used[i] = true)),
                }
            }
        }
        for (_, f) in &fields {
            used[f.log_tau] = true;
            used[f.log_kappa] = true;
            used[f.start..f.start + f.len]
                .iter_mut()
                .for_each(|u| *u = true);
        }
        for e in &eps {
            used[e.log_sigma] = true;
            used[e.start..e.start + e.len]
                .iter_mut()
                .for_each(|u| *u = true);
        }
        let dead: Vec<bool> = used.iter().map(|u| !u).collect();

        for name in spec.priors.keys() {
            layout.require(name)?;
        }
        let mut priors = Vec::new();
        for (i, info) in layout.params().iter().enumerate() {
            if dead[i] || matches!(info.kind, ParamKind::Latent | ParamKind::Overdispersion) {
                continue;
            }
            let prior = spec
                .priors
                .get(&info.name)
                .copied()
                .unwrap_or_else(|| default_prior(&spec.mesh, info.role));
            if prior != Prior::Flat {
                priors.push((i, prior));
            }
        }
        let mut fixed = BTreeSet::new();
        for name in spec.fixed.keys() {
            fixed.insert(layout.require(name)?);
        }
        let free = (0..layout.len()).filter(|i| !fixed.contains(i)).collect();
        Ok(Self {
            spec,
            layout,
            fields,
            eps,
            datasets,
            priors,
            dead,
            free,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    /// Parameters that appear in no term; they carry no prior and zero gradient.
    pub fn dead(&self) -> &[bool] {
        &self.dead
    }

    /// Indices the optimizer may move (everything not held fixed).
    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn datasets(&self) -> &[CompiledDataset] {
        &self.datasets
    }

    /// Effective prior of a parameter (None when dead or latent).
    pub fn prior_of(&self, i: usize) -> Option<Prior> {
        self.priors.iter().find(|p| p.0 == i).map(|p| p.1)
    }

    /// Starting point: coefficients 0 except data-driven intercepts,
    /// hyperparameters at their prior means, latents 0, fixed values applied.
    pub fn initial(&self) -> ParameterVector {
        let mut th = vec![0.0; self.dim()];
        let mesh = &self.spec.mesh;
        for (i, info) in self.layout.params().iter().enumerate() {
            let prior = self
                .spec
                .priors
                .get(&info.name)
                .copied()
                .unwrap_or_else(|| default_prior(mesh, info.role));
            if !matches!(info.role, Role::Coefficient) {
                th[i] = prior.mean().unwrap_or(0.0);
            }
        }
        let mut set = BTreeSet::new();
        for b in &self.spec.datasets {
            let Some(param) = b.predictor.terms.iter().find_map(|t| match t {
                Term::Intercept { param } => Some(param.clone()),
                _ => None,
            }) else {
                continue;
            };
            if !set.insert(param.clone()) || b.dataset.is_empty() {
                continue;
            }
            if let Some(v) = initial_intercept(b, mesh) {
                th[self
                    .layout
                    .require(&param)
                    .expect("predictor params are in the layout")] = v;
            }
        }
        for (name, v) in &self.spec.fixed {
            th[self.layout.require(name).expect("validated at compile")] = *v;
        }
        ParameterVector::new(self.layout.clone(), th).expect("layout length")
    }

    /// Negative log posterior, gradient and per-part decomposition.
    pub fn evaluate(&self, th: &[f64]) -> Result<Evaluation> {
        if th.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.dim(),
                th.len()
            )));
        }
        let n = self.dim();
        let mut grad = vec![0.0; n];
        let mut parts = Decomposition::default();

        for (name, f) in &self.fields {
            let params = MaternParams::new(th[f.log_tau], th[f.log_kappa]);
            let u = &th[f.start..f.start + f.len];
            let terms = f.model.evaluate(&params, u)?;
            parts.fields.push((name.clone(), terms.log_density));
            grad[f.log_tau] -= terms.d_log_tau;
            grad[f.log_kappa] -= terms.d_log_kappa;
            for (g, gu) in grad[f.start..f.start + f.len].iter_mut().zip(&terms.grad_u) {
                *g -= gu;
            }
            if let Some(sd) = f.integral_sd {
                let areas = self.spec.mesh.dual_areas();
                let s: f64 = areas.iter().zip(u).map(|(a, x)| a * x).sum();
                parts.bias_penalty += normal_logpdf(s, 0.0, sd);
                for (g, a) in grad[f.start..f.start + f.len].iter_mut().zip(areas) {
                    *g += s * a / (sd * sd);
                }
            }
        }

        for e in &self.eps {
            let ls = th[e.log_sigma];
            let sigma = ls.exp();
            let mut acc = Accumulator::new();
            let mut dls = 0.0;
            for i in e.start..e.start + e.len {
                let x = th[i];
                acc.add(normal_logpdf(x, 0.0, sigma));
                grad[i] += x / (sigma * sigma);
                dls += -1.0 + x * x / (sigma * sigma);
            }
            grad[e.log_sigma] -= dls;
            parts.overdispersion.push((e.name.clone(), acc.value()));
        }

        let mut prior_acc = Accumulator::new();
        for &(i, p) in &self.priors {
            let (v, d) = p.log_density(th[i]);
            prior_acc.add(v);
            grad[i] -= d;
        }
        parts.priors = prior_acc.value();

        let per_dataset: Vec<(f64, Vec<f64>, usize)> = self
            .datasets
            .par_iter()
            .map(|d| dataset_eval(d, th, n))
            .collect();
        let mut clamped = 0;
        for (d, (v, g, c)) in self.datasets.iter().zip(per_dataset) {
            parts.datasets.push((d.name.clone(), v));
            for (a, b) in grad.iter_mut().zip(&g) {
                *a -= b;
            }
            clamped += c;
        }
        let value = -parts.total();
        if !value.is_finite() {
            return Err(Error::Numerical("objective is not finite".into()));
        }
        Ok(Evaluation {
            value,
            gradient: grad,
            parts,
            clamped,
        })
    }

    pub fn value(&self, th: &[f64]) -> Result<f64> {
        Ok(self.evaluate(th)?.value)
    }

    /// Second directional derivative of the negative data log-likelihood
    /// (fields and priors excluded) along `d`.
    pub fn data_curvature(&self, th: &[f64], d: &[f64]) -> f64 {
        let mut acc = Accumulator::new();
        for ds in &self.datasets {
            for t in &ds.terms {
                match t {
                    LikTerm::Point { form, kernel } => {
                        let k = kernel.eval(form.eval(th));
                        let (first, second) = form.directional(th, d);
                        acc.add(-(k.d2 * first * first + k.d1 * second));
                    }
                    LikTerm::Region { cells, present } => {
                        let (mut mu, mut dmu, mut d2mu) = (0.0, 0.0, 0.0);
                        for (a, f) in cells {
                            let m = a * f.eval(th).exp();
                            let (first, second) = f.directional(th, d);
                            mu += m;
                            dmu += m * first;
                            d2mu += m * (first * first + second);
                        }
                        let k = kernel::regional(mu, *present);
                        acc.add(-(k.d2 * dmu * dmu + k.d1 * d2mu));
                    }
                }
            }
        }
        acc.value()
    }

    /// Positive semidefinite approximation to the latent block of the Hessian
    /// as triplets relative to [`Layout::latent_start`]. Field precisions are
    /// exact; likelihood terms keep only their nonnegative curvature parts.
    pub fn latent_hessian(&self, th: &[f64]) -> Result<Vec<(usize, usize, f64)>> {
        self.latent_curvature(th, false)
    }

    /// The latent block of the Hessian with every curvature part kept.
    pub fn latent_hessian_exact(&self, th: &[f64]) -> Result<Vec<(usize, usize, f64)>> {
        self.latent_curvature(th, true)
    }

    fn latent_curvature(&self, th: &[f64], exact: bool) -> Result<Vec<(usize, usize, f64)>> {
        let l0 = self.layout.latent_start();
        let mut trip = Vec::new();
        for (_, f) in &self.fields {
            let params = MaternParams::new(th[f.log_tau], th[f.log_kappa]);
            for (i, j, v) in f.model.precision_triplets(&params)? {
                trip.push((f.start + i - l0, f.start + j - l0, v));
            }
        }
        for e in &self.eps {
            let prec = (-2.0 * th[e.log_sigma]).exp();
            for i in e.start..e.start + e.len {
                trip.push((i - l0, i - l0, prec));
            }
        }
        let latent = |form: &Form| -> Vec<(usize, f64)> {
            form.coefs
                .iter()
                .filter(|c| c.0 >= l0)
                .map(|&(i, c)| (i - l0, c))
                .collect()
        };
        for ds in &self.datasets {
            for t in &ds.terms {
                match t {
                    LikTerm::Point { form, kernel } => {
                        let a = latent(form);
                        if a.is_empty() {
                            continue;
                        }
                        let w = -kernel.eval(form.eval(th)).d2;
                        if exact || w > 0.0 {
                            for &(i, ci) in &a {
                                for &(j, cj) in &a {
                                    trip.push((i, j, w * ci * cj));
                                }
                            }
                        }
                    }
                    LikTerm::Region { cells, present } => {
                        let ms: Vec<f64> =
                            cells.iter().map(|(a, f)| a * f.eval(th).exp()).collect();
                        let mu: f64 = ms.iter().sum();
                        let k = kernel::regional(mu, *present);
                        let mut b: Vec<(usize, f64)> = Vec::new();
                        for ((_, f), m) in cells.iter().zip(&ms) {
                            let a = latent(f);
                            if exact || k.d1 < 0.0 {
                                for &(i, ci) in &a {
                                    for &(j, cj) in &a {
                                        trip.push((i, j, -k.d1 * m * ci * cj));
                                    }
                                }
                            }
                            b.extend(a.iter().map(|&(i, c)| (i, m * c)));
                        }
                        if exact || k.d2 < 0.0 {
                            merge(&mut b);
                            for &(i, bi) in &b {
                                for &(j, bj) in &b {
                                    trip.push((i, j, -k.d2 * bi * bj));
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(trip)
    }

    /// The linear predictor of `lp` (plus `extra`, if any) at `p` as a form over the layout.
    pub fn predictor_form(
        &self,
        lp: &LinearPredictor,
        extra: Option<&LinearPredictor>,
        p: Point2D,
    ) -> Result<Form> {
        let compiler = Compiler {
            spec: &self.spec,
            layout: &self.layout,
        };
        let w = self.spec.mesh.weights(p)?;
        let loc = Loc::Point(p, w);
        let mut form = Form::default();
        compiler.add_predictor(&mut form, lp, loc)?;
        if let Some(e) = extra {
            compiler.add_predictor(&mut form, e, loc)?;
        }
        form.normalize();
        Ok(form)
    }
}

fn dataset_eval(d: &CompiledDataset, th: &[f64], n: usize) -> (f64, Vec<f64>, usize) {
    let mut acc = Accumulator::new();
    let mut g = vec![0.0; n];
    let mut clamped = 0;
    for t in &d.terms {
        match t {
            LikTerm::Point { form, kernel } => {
                let k = kernel.eval(form.eval(th));
                acc.add(k.value);
                clamped += k.clamped as usize;
                if k.d1 != 0.0 {
                    form.add_grad(th, k.d1, &mut g);
                }
            }
            LikTerm::Region { cells, present } => {
                let ms: Vec<f64> = cells.iter().map(|(a, f)| a * f.eval(th).exp()).collect();
                let mut mu_acc = Accumulator::new();
                ms.iter().for_each(|m| mu_acc.add(*m));
                let k = kernel::regional(mu_acc.value(), *present);
                acc.add(k.value);
                clamped += k.clamped as usize;
                if k.d1 != 0.0 {
                    for ((_, f), m) in cells.iter().zip(&ms) {
                        f.add_grad(th, k.d1 * m, &mut g);
                    }
                }
            }
        }
    }
    (acc.value(), g, clamped)
}

fn cloglog(p: f64) -> f64 {
    (-(-p).ln_1p()).ln()
}

fn initial_intercept(b: &DatasetBinding, mesh: &TriangulatedDomain) -> Option<f64> {
    let fixed_effort = |e: &Effort| match e {
        Effort::Fixed { log_effort } => *log_effort,
        Effort::Estimated { .. } => 0.0,
    };
    match &b.dataset {
        Dataset::PresenceOnly(po) => Some((po.points.len().max(1) as f64 / mesh.area()).ln()),
        Dataset::Count(c) => {
            let n = c.records.len() as f64;
            let mean = c.records.iter().map(|r| r.count as f64).sum::<f64>() / n;
            let log_t = if c.duration_offset {
                c.records
                    .iter()
                    .map(|r| r.duration.map_or(0.0, f64::ln))
                    .sum::<f64>()
                    / n
            } else {
                0.0
            };
            Some((mean + 0.5).ln() - log_t - fixed_effort(&c.effort))
        }
        Dataset::Occupancy(o) => {
            let n: u64 = o.records.iter().map(|r| r.detections).sum();
            let trials: u64 = o.records.iter().map(|r| r.visits).sum();
            let p = (n as f64 + 0.5) / (trials as f64 + 1.0);
            Some(cloglog(p) - fixed_effort(&o.effort))
        }
        Dataset::RegionalList(r) => {
            let k = r.records.iter().filter(|x| x.present).count() as f64;
            let p = (k + 0.5) / (r.records.len() as f64 + 1.0);
            let area = r
                .records
                .iter()
                .map(|x| {
                    mesh.vertices_in(&x.region)
                        .iter()
                        .map(|&v| mesh.dual_areas()[v])
                        .sum::<f64>()
                })
                .sum::<f64>()
                / r.records.len() as f64;
            (area > 0.0).then(|| cloglog(p) - area.ln())
        }
    }
}

/// Joint negative log posterior of `spec` at `theta`.
pub fn joint_negloglik(spec: &ModelSpec, theta: &ParameterVector) -> Result<f64> {
    let m = CompiledModel::new(spec)?;
    check_layout(&m, theta)?;
    m.value(theta.values())
}

/// Analytic gradient of [`joint_negloglik`].
pub fn gradient(spec: &ModelSpec, theta: &ParameterVector) -> Result<Vec<f64>> {
    let m = CompiledModel::new(spec)?;
    check_layout(&m, theta)?;
    Ok(m.evaluate(theta.values())?.gradient)
}

fn check_layout(m: &CompiledModel, theta: &ParameterVector) -> Result<()> {
    if **theta.layout() != **m.layout() {
        return Err(Error::InvalidArgument(
            "parameter vector does not match the model layout".into(),
        ));
    }
    Ok(())
}

/// `log τ` giving marginal sd `sigma` at the given `log κ`.
pub fn log_tau_for_sd(sigma: f64, log_kappa: f64) -> f64 {
    log_tau_for(sigma * sigma, log_kappa.exp())
}
