//! Dataset types and their log-likelihood contributions given a log-intensity surface.
//!
//! The evaluators here take the already-composed linear predictor (process
//! terms plus any bias or thinning terms) as a [`LogIntensity`] surface. The
//! inference module compiles the same kernels against a flat parameter vector.

pub mod kernel;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Point2D, Polygon, TriangulatedDomain};
use crate::numeric::{ln_factorial, logistic, Accumulator};
use crate::process_model::{surface_region_mean, CovariateSet, LinearPredictor, LogIntensity};

pub use kernel::{KernelValue, PointKernel, P_CLAMP};

/// Regions larger than this multiple of the mesh edge length are refused.
pub const DEFAULT_REGION_FACTOR: f64 = 3.0;

/// How a dataset's effort intercept `log E` is handled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Effort {
    /// Estimated as a named parameter.
    Estimated { param: String },
    /// Known and held at the given value.
    Fixed { log_effort: f64 },
}

impl Default for Effort {
    fn default() -> Self {
        Effort::Fixed { log_effort: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountRecord {
    pub site: Point2D,
    pub count: u64,
    #[serde(default)]
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountDataset {
    pub records: Vec<CountRecord>,
    #[serde(default)]
    pub effort: Effort,
    /// Adds `log t` to the predictor for records with a duration.
    #[serde(default = "yes")]
    pub duration_offset: bool,
    /// Per-site Gaussian noise on the log scale, estimated jointly.
    #[serde(default)]
    pub overdispersion: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancyRecord {
    pub site: Point2D,
    pub visits: u64,
    pub detections: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancyDataset {
    pub records: Vec<OccupancyRecord>,
    #[serde(default)]
    pub effort: Effort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresenceOnlyDataset {
    pub points: Vec<Point2D>,
    /// Terms of `log q(s)`; the intercept absorbs overall thinning.
    #[serde(default)]
    pub bias: LinearPredictor,
    /// Nominal quadrature weight carried by each data point (see [`po_loglik_quadrature`]).
    #[serde(default)]
    pub data_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionalRecord {
    pub region: Polygon,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionalListDataset {
    pub records: Vec<RegionalRecord>,
    /// Largest accepted region diameter; `None` means 3 × mesh max edge.
    #[serde(default)]
    pub max_diameter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dataset {
    Count(CountDataset),
    Occupancy(OccupancyDataset),
    PresenceOnly(PresenceOnlyDataset),
    RegionalList(RegionalListDataset),
}

impl Dataset {
    pub fn kind(&self) -> &'static str {
        match self {
            Dataset::Count(_) => "count",
            Dataset::Occupancy(_) => "occupancy",
            Dataset::PresenceOnly(_) => "presence_only",
            Dataset::RegionalList(_) => "regional_list",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Count(d) => d.records.len(),
            Dataset::Occupancy(d) => d.records.len(),
            Dataset::PresenceOnly(d) => d.points.len(),
            Dataset::RegionalList(d) => d.records.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record-level checks that do not need the mesh.
    pub fn validate(&self) -> Result<()> {
        let bad = |i: usize, msg: String| Error::InvalidArgument(msg).in_record("", i);
        match self {
            Dataset::Count(d) => {
                for (i, r) in d.records.iter().enumerate() {
                    if !r.site.is_finite() {
                        return Err(bad(i, "non-finite site".into()));
                    }
                    if let Some(t) = r.duration {
                        if !(t > 0.0 && t.is_finite()) {
                            return Err(bad(i, format!("duration must be positive, got {t}")));
                        }
                    }
                }
            }
            Dataset::Occupancy(d) => {
                for (i, r) in d.records.iter().enumerate() {
                    if !r.site.is_finite() {
                        return Err(bad(i, "non-finite site".into()));
                    }
                    if r.visits == 0 {
                        return Err(bad(i, "visits must be at least 1".into()));
                    }
                    if r.detections > r.visits {
                        return Err(bad(
                            i,
                            format!("{} detections in {} visits", r.detections, r.visits),
                        ));
                    }
                }
            }
            Dataset::PresenceOnly(d) => {
                if let Some(i) = d.points.iter().position(|p| !p.is_finite()) {
                    return Err(bad(i, "non-finite point".into()));
                }
                if !(d.data_weight >= 0.0 && d.data_weight.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "data_weight must be nonnegative".into(),
                    ));
                }
            }
            Dataset::RegionalList(d) => {
                for (i, r) in d.records.iter().enumerate() {
                    if r.region.ring.len() < 3 {
                        return Err(bad(i, "region needs at least three vertices".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Log-likelihood value with the number of clamped probability evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LogLik {
    pub value: f64,
    pub clamped: usize,
}

fn eta_at(surface: &dyn LogIntensity, p: Point2D, record: usize) -> Result<f64> {
    surface.at_point(p).map_err(|e| e.in_record("", record))
}

/// Poisson counts with `log θ(s) = log E + [log t] + η(s) + ε(s)`.
pub fn count_loglik(
    ds: &CountDataset,
    surface: &dyn LogIntensity,
    log_effort: f64,
    eps: Option<&[f64]>,
) -> Result<LogLik> {
    if let Some(e) = eps {
        if e.len() != ds.records.len() {
            return Err(Error::InvalidArgument(
                "one overdispersion value per record required".into(),
            ));
        }
    }
    let mut acc = Accumulator::new();
    for (i, r) in ds.records.iter().enumerate() {
        let mut log_theta = log_effort + eta_at(surface, r.site, i)?;
        if ds.duration_offset {
            if let Some(t) = r.duration {
                log_theta += t.ln();
            }
        }
        if let Some(e) = eps {
            log_theta += e[i];
        }
        acc.add(PointKernel::count(r.count).eval(log_theta).value);
    }
    Ok(LogLik {
        value: acc.value(),
        clamped: 0,
    })
}

/// Binomial detections with cloglog link; the binomial coefficient is omitted.
pub fn occupancy_loglik(
    ds: &OccupancyDataset,
    surface: &dyn LogIntensity,
    log_effort: f64,
) -> Result<LogLik> {
    let mut acc = Accumulator::new();
    let mut clamped = 0;
    for (i, r) in ds.records.iter().enumerate() {
        let eta = log_effort + eta_at(surface, r.site, i)?;
        let k = PointKernel::Cloglog {
            trials: r.visits,
            successes: r.detections,
        }
        .eval(eta);
        clamped += k.clamped as usize;
        acc.add(k.value);
    }
    Ok(LogLik {
        value: acc.value(),
        clamped,
    })
}

/// Thinned point-process likelihood `Σ log φ(s_i) − ∫ φ − ln M!`, with the
/// integral taken by dual-cell quadrature. `surface` is `log φ`.
pub fn po_loglik_direct(ds: &PresenceOnlyDataset, surface: &dyn LogIntensity) -> Result<LogLik> {
    let mut acc = Accumulator::new();
    for (i, &p) in ds.points.iter().enumerate() {
        acc.add(eta_at(surface, p, i)?);
    }
    acc.add(-surface_region_mean(surface, None));
    acc.add(-ln_factorial(ds.points.len() as u64));
    Ok(LogLik {
        value: acc.value(),
        clamped: 0,
    })
}

/// Weighted-Poisson (Berman–Turner) form `Σ w_i (z_i log φ_i − φ_i)` over mesh
/// vertices (weight = dual area, z = 0) and data points (weight
/// `ds.data_weight`, `w·z = 1`).
///
/// Equals `po_loglik_direct + ln M! − data_weight · Σ φ(s_i)`.
pub fn po_loglik_quadrature(
    ds: &PresenceOnlyDataset,
    surface: &dyn LogIntensity,
) -> Result<LogLik> {
    let mut acc = Accumulator::new();
    let w = ds.data_weight;
    for (i, &p) in ds.points.iter().enumerate() {
        let eta = eta_at(surface, p, i)?;
        acc.add(
            PointKernel::Poisson {
                response: 1.0,
                weight: w,
                constant: 0.0,
            }
            .eval(eta)
            .value,
        );
    }
    let mesh = surface.mesh();
    for (v, &a) in mesh.dual_areas().iter().enumerate() {
        acc.add(PointKernel::void(a).eval(surface.at_vertex(v)).value);
    }
    Ok(LogLik {
        value: acc.value(),
        clamped: 0,
    })
}

/// Checks a region is small enough for the constant-surface approximation and
/// overlaps the domain.
pub fn check_region(
    mesh: &TriangulatedDomain,
    region: &Polygon,
    max_diameter: Option<f64>,
) -> Result<()> {
    let limit = max_diameter.unwrap_or(DEFAULT_REGION_FACTOR * mesh.max_edge());
    let diameter = region.diameter();
    if diameter > limit {
        return Err(Error::RegionTooLarge { diameter, limit });
    }
    if !region.intersects(mesh.boundary()) {
        return Err(Error::Geometry("region lies outside the domain".into()));
    }
    Ok(())
}

/// Presence/absence lists for small regions: `present ? log(1 − e^{−μ(B)}) : −μ(B)`.
pub fn regional_list_loglik(
    ds: &RegionalListDataset,
    surface: &dyn LogIntensity,
) -> Result<LogLik> {
    let mesh = surface.mesh();
    let mut acc = Accumulator::new();
    let mut clamped = 0;
    for (i, r) in ds.records.iter().enumerate() {
        check_region(mesh, &r.region, ds.max_diameter).map_err(|e| e.in_record("", i))?;
        let mu = surface_region_mean(surface, Some(&r.region));
        let k = kernel::regional(mu, r.present);
        clamped += k.clamped as usize;
        acc.add(k.value);
    }
    Ok(LogLik {
        value: acc.value(),
        clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinningKind {
    Sampling,
    Detection,
    Reporting,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkTerm {
    pub covariate: String,
    pub param: String,
}

/// Logistic thinning probability `logit⁻¹(c₀ + Σ c_k z_k(s))`; it enters a
/// dataset's predictor as `log` of the probability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThinningLink {
    pub kind: ThinningKind,
    pub intercept: String,
    #[serde(default)]
    pub terms: Vec<LinkTerm>,
}

/// `logit⁻¹(coefficients[0] + Σ coefficients[k] · covariates[k-1])`.
pub fn thinning_probability(coefficients: &[f64], covariates: &[f64]) -> f64 {
    assert_eq!(
        coefficients.len(),
        covariates.len() + 1,
        "one coefficient per covariate plus intercept"
    );
    let z = coefficients[0]
        + coefficients[1..]
            .iter()
            .zip(covariates)
            .map(|(c, x)| c * x)
            .sum::<f64>();
    logistic(z)
}

/// Evaluates a named thinning link at `p` with covariates interpolated from the mesh.
pub fn thinning_link(
    link: &ThinningLink,
    params: &std::collections::BTreeMap<String, f64>,
    mesh: &TriangulatedDomain,
    covariates: &CovariateSet,
    p: Point2D,
) -> Result<f64> {
    let get = |name: &str| {
        params
            .get(name)
            .copied()
            .ok_or_else(|| Error::Spec(format!("missing parameter `{name}`")))
    };
    let mut coefs = vec![get(&link.intercept)?];
    let mut values = Vec::with_capacity(link.terms.len());
    for t in &link.terms {
        coefs.push(get(&t.param)?);
        values.push(mesh.interpolate(&covariates.require(&t.covariate)?.values, p)?);
    }
    Ok(thinning_probability(&coefs, &values))
}

/// `log` of a thinning link as a surface, for composing thinned predictors.
pub struct LinkSurface<'a> {
    pub mesh: &'a TriangulatedDomain,
    pub covariates: &'a CovariateSet,
    pub intercept: f64,
    pub terms: Vec<(&'a [f64], f64)>,
}

impl<'a> LinkSurface<'a> {
    pub fn new(
        link: &ThinningLink,
        params: &std::collections::BTreeMap<String, f64>,
        mesh: &'a TriangulatedDomain,
        covariates: &'a CovariateSet,
    ) -> Result<Self> {
        let get = |name: &str| {
            params
                .get(name)
                .copied()
                .ok_or_else(|| Error::Spec(format!("missing parameter `{name}`")))
        };
        let mut terms = Vec::new();
        for t in &link.terms {
            terms.push((
                covariates.require(&t.covariate)?.values.as_slice(),
                get(&t.param)?,
            ));
        }
        Ok(Self {
            mesh,
            covariates,
            intercept: get(&link.intercept)?,
            terms,
        })
    }
}

impl LogIntensity for LinkSurface<'_> {
    fn mesh(&self) -> &TriangulatedDomain {
        self.mesh
    }

    fn at_point(&self, p: Point2D) -> Result<f64> {
        let w = self.mesh.weights(p)?;
        let mut z = self.intercept;
        for (vals, c) in &self.terms {
            z += c * w.iter().map(|&(i, wi)| wi * vals[i]).sum::<f64>();
        }
        Ok(logistic(z).ln())
    }

    fn at_vertex(&self, v: usize) -> f64 {
        let z = self.intercept + self.terms.iter().map(|(vals, c)| c * vals[v]).sum::<f64>();
        logistic(z).ln()
    }
}
