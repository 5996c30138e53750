//! Data-generating oracle: log-Gaussian Cox processes on the mesh and the
//! observation mechanisms that turn them into datasets.
//!
//! Randomness is split into independent ChaCha streams of one seed: stream 0
//! draws the fields, stream 1 the individuals, stream `2 + i` dataset `i`.
//! Replicate `r` of a base seed uses [`replicate_seed`].

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::DatasetBinding;
use crate::mesh::{Point2D, Polygon, TriangulatedDomain};
use crate::observation::{
    CountDataset, CountRecord, Dataset, Effort, LinkSurface, OccupancyDataset, OccupancyRecord,
    PresenceOnlyDataset, RegionalListDataset, RegionalRecord, ThinningLink,
};
use crate::process_model::{
    surface_region_mean, LinearPredictor, LogIntensity, PredictorSurface, ProcessContext,
    ProcessState,
};
use crate::random_field::{build_sparse_precision, log_tau_for, sample_field_with, MaternParams};

pub const DEFAULT_SAFETY_FACTOR: f64 = 1.2;

/// A Matérn field component given by marginal standard deviation and κ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueField {
    pub name: String,
    pub sigma: f64,
    pub kappa: f64,
}

impl TrueField {
    pub fn params(&self) -> MaternParams {
        MaternParams::new(
            log_tau_for(self.sigma * self.sigma, self.kappa),
            self.kappa.ln(),
        )
    }
}

/// Explicit locations or a number of points drawn uniformly over the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sites {
    Listed(Vec<Point2D>),
    Random { random: usize },
}

/// Explicit regions or axis-aligned squares of side `size` at random centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Regions {
    Listed(Vec<Polygon>),
    Random { random: usize, size: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetDesign {
    PresenceOnly {
        name: String,
        /// `log q(s)` of the observer bias.
        #[serde(default)]
        bias: LinearPredictor,
        /// Extra Bernoulli retention applied to every point.
        #[serde(default = "one")]
        retention: f64,
        #[serde(default)]
        links: Vec<ThinningLink>,
    },
    Count {
        name: String,
        sites: Sites,
        /// Survey durations, cycled over the sites; none means no offset.
        #[serde(default)]
        durations: Vec<f64>,
        #[serde(default)]
        effort: Effort,
        /// Standard deviation of per-site log-scale noise.
        #[serde(default)]
        overdispersion_sd: Option<f64>,
        #[serde(default)]
        links: Vec<ThinningLink>,
    },
    Occupancy {
        name: String,
        sites: Sites,
        visits: u64,
        #[serde(default)]
        effort: Effort,
        #[serde(default)]
        links: Vec<ThinningLink>,
    },
    RegionalList {
        name: String,
        regions: Regions,
        #[serde(default)]
        max_diameter: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl DatasetDesign {
    pub fn name(&self) -> &str {
        match self {
            DatasetDesign::PresenceOnly { name, .. }
            | DatasetDesign::Count { name, .. }
            | DatasetDesign::Occupancy { name, .. }
            | DatasetDesign::RegionalList { name, .. } => name,
        }
    }

    pub fn links(&self) -> &[ThinningLink] {
        match self {
            DatasetDesign::PresenceOnly { links, .. }
            | DatasetDesign::Count { links, .. }
            | DatasetDesign::Occupancy { links, .. } => links,
            DatasetDesign::RegionalList { .. } => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    #[serde(default)]
    pub fields: Vec<TrueField>,
    /// True values of every scalar parameter the predictors and links use.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub process: LinearPredictor,
    #[serde(default)]
    pub datasets: Vec<DatasetDesign>,
    #[serde(default = "default_safety")]
    pub safety_factor: f64,
}

fn default_safety() -> f64 {
    DEFAULT_SAFETY_FACTOR
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in &self.params {
            if !v.is_finite() {
                return Err(Error::Spec(format!(
                    "true parameter `{k}` must be finite, got {v}"
                )));
            }
        }
        for f in &self.fields {
            if !(f.sigma > 0.0 && f.sigma.is_finite() && f.kappa > 0.0 && f.kappa.is_finite()) {
                return Err(Error::Spec(format!(
                    "field `{}` needs positive finite sigma and kappa",
                    f.name
                )));
            }
        }
        if !(self.safety_factor >= 1.0 && self.safety_factor.is_finite()) {
            return Err(Error::Spec("safety_factor must be at least 1".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for d in &self.datasets {
            if !names.insert(d.name()) {
                return Err(Error::Spec(format!("duplicate dataset `{}`", d.name())));
            }
            match d {
                DatasetDesign::PresenceOnly { retention, .. }
                    if !(0.0..=1.0).contains(retention) =>
                {
                    return Err(Error::Spec(format!(
                        "dataset `{}`: retention must lie in [0, 1]",
                        d.name()
                    )));
                }
                DatasetDesign::Count {
                    durations,
                    overdispersion_sd,
                    ..
                } => {
                    if durations.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                        return Err(Error::Spec(format!(
                            "dataset `{}`: durations must be positive",
                            d.name()
                        )));
                    }
                    if overdispersion_sd.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
                        return Err(Error::Spec(format!(
                            "dataset `{}`: overdispersion_sd must be positive",
                            d.name()
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Generating values recorded for recovery scoring. Field hyperparameters
/// appear under the names the fitter uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
    pub fields: BTreeMap<String, Vec<f64>>,
}

impl Truth {
    pub fn state(&self) -> ProcessState {
        ProcessState {
            params: self.params.clone(),
            fields: self
                .fields
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        crate::random_field::FieldRealization {
                            node_values: v.clone(),
                        },
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub truth: Truth,
    /// Unthinned individuals of the process.
    pub individuals: Vec<Point2D>,
    /// Datasets bound to the generating process predictor, ready to fit.
    pub datasets: Vec<DatasetBinding>,
}

/// SplitMix64 finalizer of `base + r·φ`, with φ the 64-bit golden ratio.
pub fn replicate_seed(base: u64, r: u64) -> u64 {
    let mut z = base.wrapping_add(r.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if mean == 0.0 {
        return Ok(0);
    }
    let d =
        Poisson::new(mean).map_err(|e| Error::Numerical(format!("Poisson mean {mean}: {e}")))?;
    Ok(d.sample(rng) as u64)
}

fn uniform_in_triangle<R: Rng + ?Sized>(t: [Point2D; 3], rng: &mut R) -> Point2D {
    let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
    if u + v > 1.0 {
        (u, v) = (1.0 - u, 1.0 - v);
    }
    Point2D::new(
        t[0].x + u * (t[1].x - t[0].x) + v * (t[2].x - t[0].x),
        t[0].y + u * (t[1].y - t[0].y) + v * (t[2].y - t[0].y),
    )
}

/// Points of a Poisson process with intensity `exp(surface)`, by rejection
/// per triangle against `safety × max vertex intensity`. A candidate above
/// the bound doubles the factor and redraws that triangle.
pub fn simulate_lgcp<R: Rng + ?Sized>(
    surface: &dyn LogIntensity,
    safety: f64,
    rng: &mut R,
) -> Result<Vec<Point2D>> {
    let mesh = surface.mesh();
    let verts = mesh.vertices();
    let mut out = Vec::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let corners = tri.map(|v| verts[v]);
        let peak = tri
            .iter()
            .map(|&v| surface.at_vertex(v).exp())
            .fold(0.0, f64::max);
        if !peak.is_finite() {
            return Err(Error::Numerical(format!(
                "intensity overflows in triangle {t}"
            )));
        }
        let mut factor = safety;
        'attempt: loop {
            let bound = peak * factor;
            let n = poisson(bound * mesh.triangle_area(t), rng)?;
            let mut kept = Vec::new();
            for _ in 0..n {
                let p = uniform_in_triangle(corners, rng);
                let lam = surface.at_point(p)?.exp();
                if lam > bound {
                    factor *= 2.0;
                    log::debug!("intensity bound violated in triangle {t}; factor now {factor}");
                    continue 'attempt;
                }
                if rng.random::<f64>() * bound < lam {
                    kept.push(p);
                }
            }
            out.extend(kept);
            break;
        }
    }
    Ok(out)
}

/// Keeps each point independently with probability `q(p)`.
pub fn thin_pattern<R: Rng + ?Sized>(
    pattern: &[Point2D],
    q: impl Fn(Point2D) -> Result<f64>,
    rng: &mut R,
) -> Result<Vec<Point2D>> {
    let mut out = Vec::new();
    for &p in pattern {
        let qp = q(p)?;
        if !(0.0..=1.0).contains(&qp) {
            return Err(Error::InvalidArgument(format!(
                "retention probability {qp} at ({}, {}) is outside [0, 1]",
                p.x, p.y
            )));
        }
        if rng.random::<f64>() < qp {
            out.push(p);
        }
    }
    Ok(out)
}

/// Sum of log-intensity surfaces.
struct SumSurface<'a> {
    parts: Vec<&'a dyn LogIntensity>,
}

impl LogIntensity for SumSurface<'_> {
    fn mesh(&self) -> &TriangulatedDomain {
        self.parts[0].mesh()
    }

    fn at_point(&self, p: Point2D) -> Result<f64> {
        self.parts.iter().map(|s| s.at_point(p)).sum()
    }

    fn at_vertex(&self, v: usize) -> f64 {
        self.parts.iter().map(|s| s.at_vertex(v)).sum()
    }
}

fn uniform_sites<R: Rng + ?Sized>(
    mesh: &TriangulatedDomain,
    n: usize,
    rng: &mut R,
) -> Vec<Point2D> {
    let (lo, hi) = mesh.bbox();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = Point2D::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
        if mesh.contains(p) {
            out.push(p);
        }
    }
    out
}

fn resolve_sites<R: Rng + ?Sized>(
    mesh: &TriangulatedDomain,
    sites: &Sites,
    rng: &mut R,
) -> Result<Vec<Point2D>> {
    match sites {
        Sites::Listed(v) => {
            for (i, p) in v.iter().enumerate() {
                if !mesh.contains(*p) {
                    return Err(Error::InvalidArgument(format!(
                        "design site {i} at ({}, {}) lies outside the domain",
                        p.x, p.y
                    )));
                }
            }
            Ok(v.clone())
        }
        Sites::Random { random } => Ok(uniform_sites(mesh, *random, rng)),
    }
}

fn log_effort(effort: &Effort, params: &BTreeMap<String, f64>) -> Result<f64> {
    match effort {
        Effort::Fixed { log_effort } => Ok(*log_effort),
        Effort::Estimated { param } => params
            .get(param)
            .copied()
            .ok_or_else(|| Error::Spec(format!("missing true value for effort `{param}`"))),
    }
}

/// Counts `~ Poisson(E · t · λ(s) · e^ε)`, with `surface` carrying any thinning.
pub fn simulate_counts<R: Rng + ?Sized>(
    surface: &dyn LogIntensity,
    sites: &[Point2D],
    durations: &[f64],
    log_effort: f64,
    overdispersion_sd: Option<f64>,
    rng: &mut R,
) -> Result<Vec<CountRecord>> {
    let noise = match overdispersion_sd {
        Some(sd) => Some(Normal::new(0.0, sd).map_err(|e| Error::InvalidArgument(e.to_string()))?),
        None => None,
    };
    let mut out = Vec::with_capacity(sites.len());
    for (i, &site) in sites.iter().enumerate() {
        let duration = (!durations.is_empty()).then(|| durations[i % durations.len()]);
        let mut log_theta = log_effort + surface.at_point(site)?;
        if let Some(t) = duration {
            log_theta += t.ln();
        }
        if let Some(n) = &noise {
            log_theta += n.sample(rng);
        }
        let count = poisson(log_theta.exp(), rng)?;
        out.push(CountRecord {
            site,
            count,
            duration,
        });
    }
    Ok(out)
}

/// Detections `~ Binomial(N, 1 − exp(−E · λ(s)))` with thinning in `surface`.
pub fn simulate_occupancy<R: Rng + ?Sized>(
    surface: &dyn LogIntensity,
    sites: &[Point2D],
    visits: u64,
    log_effort: f64,
    rng: &mut R,
) -> Result<Vec<OccupancyRecord>> {
    let mut out = Vec::with_capacity(sites.len());
    for &site in sites {
        let p = -(-(log_effort + surface.at_point(site)?).exp()).exp_m1();
        let d = Binomial::new(visits, p.clamp(0.0, 1.0))
            .map_err(|e| Error::Numerical(format!("binomial p = {p}: {e}")))?;
        out.push(OccupancyRecord {
            site,
            visits,
            detections: d.sample(rng),
        });
    }
    Ok(out)
}

/// Presence `~ Bernoulli(1 − exp(−μ(B)))` with `μ` by dual-cell quadrature.
pub fn simulate_regional<R: Rng + ?Sized>(
    surface: &dyn LogIntensity,
    regions: &[Polygon],
    rng: &mut R,
) -> Result<Vec<RegionalRecord>> {
    Ok(regions
        .iter()
        .map(|b| {
            let mu = surface_region_mean(surface, Some(b));
            let p = -(-mu).exp_m1();
            RegionalRecord {
                region: b.clone(),
                present: rng.random::<f64>() < p,
            }
        })
        .collect())
}

/// Parameter values and field realizations drawn from stream 0.
pub fn sample_truth(config: &SimulationConfig, mesh: &TriangulatedDomain) -> Result<Truth> {
    config.validate()?;
    let mut rng = stream(config.seed, 0);
    let mut params = config.params.clone();
    let mut fields = BTreeMap::new();
    for f in &config.fields {
        let mp = f.params();
        let prior = build_sparse_precision(mesh, &mp)?;
        let real = sample_field_with(&prior, &mut rng)?;
        params.insert(format!("{}.log_tau", f.name), mp.log_tau);
        params.insert(format!("{}.log_kappa", f.name), mp.log_kappa);
        fields.insert(f.name.clone(), real.node_values);
    }
    for d in &config.datasets {
        if let DatasetDesign::Count {
            name,
            overdispersion_sd: Some(sd),
            ..
        } = d
        {
            params.insert(format!("{name}.log_sigma_eps"), sd.ln());
        }
    }
    Ok(Truth {
        seed: config.seed,
        params,
        fields,
    })
}

/// Draws the truth, the individuals and every designed dataset.
pub fn simulate(config: &SimulationConfig, ctx: &ProcessContext<'_>) -> Result<Simulation> {
    let mesh = ctx.mesh;
    let truth = sample_truth(config, mesh)?;
    let state = truth.state();
    let process = PredictorSurface::new(*ctx, &config.process, &state)?;
    let individuals = simulate_lgcp(&process, config.safety_factor, &mut stream(config.seed, 1))?;

    let mut datasets = Vec::with_capacity(config.datasets.len());
    for (i, design) in config.datasets.iter().enumerate() {
        let mut rng = stream(config.seed, 2 + i as u64);
        let links = design
            .links()
            .iter()
            .map(|l| LinkSurface::new(l, &state.params, mesh, ctx.covariates))
            .collect::<Result<Vec<_>>>()?;
        let mut parts: Vec<&dyn LogIntensity> = vec![&process];
        parts.extend(links.iter().map(|l| l as &dyn LogIntensity));
        let name = design.name().to_string();
        let dataset = match design {
            DatasetDesign::PresenceOnly {
                bias, retention, ..
            } => {
                let bias_surface = PredictorSurface::new(*ctx, bias, &state)?;
                parts.push(&bias_surface);
                let observed = SumSurface { parts };
                // Independent thinnings of a Poisson process are again Poisson,
                // so each dataset draws its own thinned process.
                let points = simulate_lgcp(&observed, config.safety_factor, &mut rng)?;
                let points = thin_pattern(&points, |_| Ok(*retention), &mut rng)?;
                Dataset::PresenceOnly(PresenceOnlyDataset {
                    points,
                    bias: bias.clone(),
                    data_weight: 0.0,
                })
            }
            DatasetDesign::Count {
                sites,
                durations,
                effort,
                overdispersion_sd,
                ..
            } => {
                let sites = resolve_sites(mesh, sites, &mut rng)?;
                let le = log_effort(effort, &state.params)?;
                let records = simulate_counts(
                    &SumSurface { parts },
                    &sites,
                    durations,
                    le,
                    *overdispersion_sd,
                    &mut rng,
                )?;
                Dataset::Count(CountDataset {
                    records,
                    effort: effort.clone(),
                    duration_offset: true,
                    overdispersion: overdispersion_sd.is_some(),
                })
            }
            DatasetDesign::Occupancy {
                sites,
                visits,
                effort,
                ..
            } => {
                let sites = resolve_sites(mesh, sites, &mut rng)?;
                let le = log_effort(effort, &state.params)?;
                let records =
                    simulate_occupancy(&SumSurface { parts }, &sites, *visits, le, &mut rng)?;
                Dataset::Occupancy(OccupancyDataset {
                    records,
                    effort: effort.clone(),
                })
            }
            DatasetDesign::RegionalList {
                regions,
                max_diameter,
                ..
            } => {
                let regions = match regions {
                    Regions::Listed(v) => v.clone(),
                    Regions::Random { random, size } => uniform_sites(mesh, *random, &mut rng)
                        .into_iter()
                        .map(|c| {
                            let h = size / 2.0;
                            Polygon::rectangle(c.x - h, c.y - h, c.x + h, c.y + h)
                        })
                        .collect(),
                };
                let records = simulate_regional(&SumSurface { parts }, &regions, &mut rng)?;
                Dataset::RegionalList(RegionalListDataset {
                    records,
                    max_diameter: *max_diameter,
                })
            }
        };
        let mut binding = DatasetBinding::new(name, dataset, config.process.clone());
        binding.links = design.links().to_vec();
        datasets.push(binding);
    }
    Ok(Simulation {
        truth,
        individuals,
        datasets,
    })
}

/// `n` replicates in parallel, replicate `r` seeded with [`replicate_seed`].
pub fn simulate_replicates(
    config: &SimulationConfig,
    ctx: &ProcessContext<'_>,
    n: usize,
) -> Result<Vec<Simulation>> {
    (0..n)
        .into_par_iter()
        .map(|r| {
            let cfg = SimulationConfig {
                seed: replicate_seed(config.seed, r as u64),
                ..config.clone()
            };
            simulate(&cfg, ctx)
        })
        .collect()
}
