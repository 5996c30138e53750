//! Log-intensity composition and intensity functionals.
//!
//! `η(s) = Σ β_i X_i(s) + ρ(s) + Σ_c u_c(s) + α`, with covariates and fields
//! stored at mesh vertices and interpolated barycentrically. Integrals over a
//! region use the dual-cell quadrature `μ(B) ≈ Σ_{v ∈ B} A(v) exp(η(v))`, where a
//! dual cell belongs to `B` when its generating vertex does.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Point2D, Polygon, TriangulatedDomain};
use crate::numeric::Accumulator;
use crate::random_field::FieldRealization;

/// A covariate stored at mesh vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateField {
    pub name: String,
    pub values: Vec<f64>,
}

impl CovariateField {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "covariate `{name}` is not finite at vertex {i}"
            )));
        }
        Ok(Self { name, values })
    }

    /// Evaluates `f` at every vertex.
    pub fn from_fn(
        mesh: &TriangulatedDomain,
        name: impl Into<String>,
        f: impl Fn(Point2D) -> f64,
    ) -> Result<Self> {
        Self::new(name, mesh.vertices().iter().map(|&p| f(p)).collect())
    }

    /// Projects scattered point values onto vertices by nearest neighbour.
    pub fn from_points(
        mesh: &TriangulatedDomain,
        name: impl Into<String>,
        points: &[(Point2D, f64)],
    ) -> Result<Self> {
        let name = name.into();
        if points.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "covariate `{name}` has no points"
            )));
        }
        let values = mesh
            .vertices()
            .iter()
            .map(|v| {
                let mut best = (f64::INFINITY, 0.0);
                for &(p, val) in points {
                    let d = (p.x - v.x).powi(2) + (p.y - v.y).powi(2);
                    if d < best.0 {
                        best = (d, val);
                    }
                }
                best.1
            })
            .collect();
        Self::new(name, values)
    }
}

/// Named covariates, unique by name, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateSet {
    fields: Vec<CovariateField>,
}

impl CovariateSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, field: CovariateField) -> Result<()> {
        if self.get(&field.name).is_some() {
            return Err(Error::Spec(format!("duplicate covariate `{}`", field.name)));
        }
        self.fields.push(field);
        Ok(())
    }

    pub fn with(mut self, field: CovariateField) -> Result<Self> {
        self.insert(field)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&CovariateField> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&CovariateField> {
        self.get(name)
            .ok_or_else(|| Error::Spec(format!("unknown covariate `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &CovariateField> {
        self.fields.iter()
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Checks every field has one finite value per mesh vertex.
    pub fn validate(&self, mesh: &TriangulatedDomain) -> Result<()> {
        for f in &self.fields {
            if f.values.len() != mesh.num_vertices() {
                return Err(Error::Spec(format!(
                    "covariate `{}` has {} values for {} vertices",
                    f.name,
                    f.values.len(),
                    mesh.num_vertices()
                )));
            }
        }
        Ok(())
    }
}

/// Expert range map entering the predictor as `ρ(s) = -γ d(s, R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeMapTerm {
    pub polygons: Vec<Polygon>,
    pub gamma: f64,
    /// Normal prior (mean, sd) on log γ.
    pub log_gamma_prior: (f64, f64),
}

impl RangeMapTerm {
    pub fn new(polygons: Vec<Polygon>, gamma: f64) -> Self {
        Self {
            polygons,
            gamma,
            log_gamma_prior: (0.0, 1.0),
        }
    }

    /// Zero inside any range polygon, Euclidean distance to the nearest
    /// polygon boundary otherwise.
    pub fn distance(&self, p: Point2D) -> f64 {
        range_distance(&self.polygons, p)
    }
}

pub fn range_distance(polygons: &[Polygon], p: Point2D) -> f64 {
    if polygons.iter().any(|r| r.contains(p)) {
        return 0.0;
    }
    polygons
        .iter()
        .map(|r| r.boundary_distance(p))
        .fold(f64::INFINITY, f64::min)
}

/// `ρ(p) = -γ · d(p, R)`.
pub fn range_covariate(term: &RangeMapTerm, p: Point2D) -> f64 {
    if term.gamma == 0.0 {
        return 0.0;
    }
    -term.gamma * term.distance(p)
}

/// One additive component of a linear predictor. Parameters are referenced by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    Intercept {
        param: String,
    },
    Covariate {
        covariate: String,
        param: String,
    },
    /// `-exp(log_gamma) · d(s, R)` for the named range map.
    RangeMap {
        map: String,
        log_gamma: String,
    },
    Field {
        component: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub terms: Vec<Term>,
}

impl LinearPredictor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intercept(mut self, param: impl Into<String>) -> Self {
        self.terms.push(Term::Intercept {
            param: param.into(),
        });
        self
    }

    pub fn covariate(mut self, covariate: impl Into<String>, param: impl Into<String>) -> Self {
        self.terms.push(Term::Covariate {
            covariate: covariate.into(),
            param: param.into(),
        });
        self
    }

    pub fn range_map(mut self, map: impl Into<String>, log_gamma: impl Into<String>) -> Self {
        self.terms.push(Term::RangeMap {
            map: map.into(),
            log_gamma: log_gamma.into(),
        });
        self
    }

    pub fn field(mut self, component: impl Into<String>) -> Self {
        self.terms.push(Term::Field {
            component: component.into(),
        });
        self
    }

    pub fn field_components(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().filter_map(|t| match t {
            Term::Field { component } => Some(component.as_str()),
            _ => None,
        })
    }

    /// Scalar parameter names referenced by this predictor.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().filter_map(|t| match t {
            Term::Intercept { param } | Term::Covariate { param, .. } => Some(param.as_str()),
            Term::RangeMap { log_gamma, .. } => Some(log_gamma.as_str()),
            Term::Field { .. } => None,
        })
    }
}

/// Static inputs shared by every predictor: the mesh, covariates and range maps.
#[derive(Debug, Clone, Copy)]
pub struct ProcessContext<'a> {
    pub mesh: &'a TriangulatedDomain,
    pub covariates: &'a CovariateSet,
    pub range_maps: &'a BTreeMap<String, Vec<Polygon>>,
}

/// Parameter values and field realizations, keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessState {
    pub params: BTreeMap<String, f64>,
    pub fields: BTreeMap<String, FieldRealization>,
}

impl ProcessState {
    pub fn param(&self, name: &str) -> Result<f64> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::Spec(format!("missing parameter `{name}`")))
    }

    pub fn field(&self, name: &str) -> Result<&FieldRealization> {
        self.fields
            .get(name)
            .ok_or_else(|| Error::Spec(format!("missing field component `{name}`")))
    }

    pub fn set(mut self, name: impl Into<String>, value: f64) -> Self {
        self.params.insert(name.into(), value);
        self
    }
}

fn range_polygons<'a>(ctx: &ProcessContext<'a>, map: &str) -> Result<&'a [Polygon]> {
    ctx.range_maps
        .get(map)
        .map(|v| v.as_slice())
        .ok_or_else(|| Error::Spec(format!("unknown range map `{map}`")))
}

/// η at an arbitrary in-domain point.
pub fn eval_linear_predictor(
    ctx: &ProcessContext<'_>,
    lp: &LinearPredictor,
    state: &ProcessState,
    p: Point2D,
) -> Result<f64> {
    let w = ctx.mesh.weights(p)?;
    let interp = |vals: &[f64]| w.iter().map(|&(i, wi)| wi * vals[i]).sum::<f64>();
    let mut acc = Accumulator::new();
    for term in &lp.terms {
        match term {
            Term::Intercept { param } => acc.add(state.param(param)?),
            Term::Covariate { covariate, param } => {
                acc.add(state.param(param)? * interp(&ctx.covariates.require(covariate)?.values))
            }
            Term::RangeMap { map, log_gamma } => {
                let gamma = state.param(log_gamma)?.exp();
                acc.add(-gamma * range_distance(range_polygons(ctx, map)?, p));
            }
            Term::Field { component } => acc.add(interp(&state.field(component)?.node_values)),
        }
    }
    Ok(acc.value())
}

/// η at mesh vertex `v` (no interpolation).
pub fn eval_at_vertex(
    ctx: &ProcessContext<'_>,
    lp: &LinearPredictor,
    state: &ProcessState,
    v: usize,
) -> Result<f64> {
    let mut acc = Accumulator::new();
    for term in &lp.terms {
        match term {
            Term::Intercept { param } => acc.add(state.param(param)?),
            Term::Covariate { covariate, param } => {
                acc.add(state.param(param)? * ctx.covariates.require(covariate)?.values[v])
            }
            Term::RangeMap { map, log_gamma } => {
                let gamma = state.param(log_gamma)?.exp();
                acc.add(-gamma * range_distance(range_polygons(ctx, map)?, ctx.mesh.vertices()[v]));
            }
            Term::Field { component } => acc.add(state.field(component)?.node_values[v]),
        }
    }
    Ok(acc.value())
}

/// `λ(p) = exp(η(p))`.
pub fn intensity(
    ctx: &ProcessContext<'_>,
    lp: &LinearPredictor,
    state: &ProcessState,
    p: Point2D,
) -> Result<f64> {
    Ok(eval_linear_predictor(ctx, lp, state, p)?.exp())
}

/// Dual-cell quadrature of the intensity over `region` (whole domain when `None`).
pub fn region_mean(
    ctx: &ProcessContext<'_>,
    lp: &LinearPredictor,
    state: &ProcessState,
    region: Option<&Polygon>,
) -> Result<f64> {
    let surface = PredictorSurface::new(*ctx, lp, state)?;
    Ok(surface_region_mean(&surface, region))
}

/// [`region_mean`] for any log-intensity surface.
pub fn surface_region_mean(surface: &dyn LogIntensity, region: Option<&Polygon>) -> f64 {
    let mesh = surface.mesh();
    let areas = mesh.dual_areas();
    let mut acc = Accumulator::new();
    match region {
        None => {
            for (v, &a) in areas.iter().enumerate() {
                acc.add(a * surface.at_vertex(v).exp());
            }
        }
        Some(b) => {
            let inside = mesh.vertices_in(b);
            if inside.is_empty() {
                log::warn!("region contains no integration points; mean set to 0");
            }
            for v in inside {
                acc.add(areas[v] * surface.at_vertex(v).exp());
            }
        }
    }
    acc.value()
}

/// `1 - exp(-μ)`.
pub fn occupancy_probability(mu: f64) -> Result<f64> {
    if !(mu >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mean must be nonnegative, got {mu}"
        )));
    }
    Ok(-(-mu).exp_m1())
}

/// Read access to a log-intensity surface on the mesh.
pub trait LogIntensity: Sync {
    fn mesh(&self) -> &TriangulatedDomain;
    fn at_point(&self, p: Point2D) -> Result<f64>;
    fn at_vertex(&self, v: usize) -> f64;
}

/// A predictor bound to its context and state, with vertex values cached.
pub struct PredictorSurface<'a> {
    ctx: ProcessContext<'a>,
    lp: &'a LinearPredictor,
    state: &'a ProcessState,
    vertex_eta: Vec<f64>,
}

impl<'a> PredictorSurface<'a> {
    pub fn new(
        ctx: ProcessContext<'a>,
        lp: &'a LinearPredictor,
        state: &'a ProcessState,
    ) -> Result<Self> {
        for c in lp.field_components() {
            let f = state.field(c)?;
            if f.node_values.len() != ctx.mesh.num_vertices() {
                return Err(Error::Spec(format!("field `{c}` has wrong length")));
            }
        }
        let vertex_eta = (0..ctx.mesh.num_vertices())
            .map(|v| eval_at_vertex(&ctx, lp, state, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ctx,
            lp,
            state,
            vertex_eta,
        })
    }
}

impl LogIntensity for PredictorSurface<'_> {
    fn mesh(&self) -> &TriangulatedDomain {
        self.ctx.mesh
    }

    fn at_point(&self, p: Point2D) -> Result<f64> {
        eval_linear_predictor(&self.ctx, self.lp, self.state, p)
    }

    fn at_vertex(&self, v: usize) -> f64 {
        self.vertex_eta[v]
    }
}

/// Piecewise-linear surface given by vertex values.
pub struct VertexSurface<'a> {
    pub mesh: &'a TriangulatedDomain,
    pub values: Vec<f64>,
}

impl LogIntensity for VertexSurface<'_> {
    fn mesh(&self) -> &TriangulatedDomain {
        self.mesh
    }

    fn at_point(&self, p: Point2D) -> Result<f64> {
        self.mesh.interpolate(&self.values, p)
    }

    fn at_vertex(&self, v: usize) -> f64 {
        self.values[v]
    }
}

/// Constant log-intensity over the domain.
pub struct ConstantSurface<'a> {
    pub mesh: &'a TriangulatedDomain,
    pub eta: f64,
}

impl LogIntensity for ConstantSurface<'_> {
    fn mesh(&self) -> &TriangulatedDomain {
        self.mesh
    }

    fn at_point(&self, p: Point2D) -> Result<f64> {
        self.mesh.locate(p)?;
        Ok(self.eta)
    }

    fn at_vertex(&self, _v: usize) -> f64 {
        self.eta
    }
}

/// Thinned surface `log φ = η + log q`.
pub struct ThinnedSurface<'a> {
    pub process: &'a dyn LogIntensity,
    pub log_q: &'a dyn LogIntensity,
}

impl LogIntensity for ThinnedSurface<'_> {
    fn mesh(&self) -> &TriangulatedDomain {
        self.process.mesh()
    }

    fn at_point(&self, p: Point2D) -> Result<f64> {
        Ok(self.process.at_point(p)? + self.log_q.at_point(p)?)
    }

    fn at_vertex(&self, v: usize) -> f64 {
        self.process.at_vertex(v) + self.log_q.at_vertex(v)
    }
}
