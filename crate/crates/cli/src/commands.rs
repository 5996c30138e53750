use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use isdm_core::inference::fit::{fit_map, laplace_standard_errors, FitOptions};
use isdm_core::inference::{
    compose_case_study_spec, predict_grid, CompiledModel, DatasetBinding, Decomposition,
    FieldComponent, LatentMode, LbfgsOptions, ModelSpec, ParameterVector, Parameters,
    PredictionTarget, SpeciesData,
};
use isdm_core::io::{
    read_boundary_geojson, read_counts_csv, read_covariates_csv, read_occupancy_csv,
    read_points_csv, read_polygons_geojson, read_regional_geojson, write_counts_csv,
    write_grid_csv, write_occupancy_csv, write_points_csv, write_regional_geojson, GridRow,
};
use isdm_core::mesh::{build_mesh, MeshFile, Polygon, TriangulatedDomain};
use isdm_core::observation::{
    CountDataset, Dataset, OccupancyDataset, PresenceOnlyDataset, RegionalListDataset,
};
use isdm_core::process_model::{CovariateField, CovariateSet, ProcessContext};
use isdm_core::simulate::{simulate_replicates, Simulation, Truth};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Loaded, ModelDatasetConfig};
use crate::error::{CliError, Result};

const MESH_CACHE: &str = "mesh.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshCache {
    key: String,
    mesh: MeshFile,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn boundary(l: &Loaded) -> Result<Polygon> {
    let d = &l.config.domain;
    match (&d.rectangle, &d.boundary) {
        (Some([x0, y0, x1, y1]), _) => Ok(Polygon::rectangle(*x0, *y0, *x1, *y1)),
        (None, Some(p)) => {
            let path = l.resolve(p);
            Ok(read_boundary_geojson(
                &read(&path)?,
                &path.display().to_string(),
            )?)
        }
        (None, None) => Err(CliError::Config("domain has no boundary".into())),
    }
}

/// The mesh for this configuration, from the cache when its key matches.
/// Fresh meshes also pass through the serialized form so both paths agree.
pub fn load_mesh(l: &Loaded) -> Result<(Arc<TriangulatedDomain>, bool)> {
    let poly = boundary(l)?;
    let max_edge = l.config.domain.max_edge;
    let key = {
        let mut h = Sha256::new();
        h.update(
            serde_json::to_vec(&(&poly, max_edge, env!("CARGO_PKG_VERSION")))
                .expect("serializable"),
        );
        hex::encode(h.finalize())
    };
    let path = l.out_dir().join(MESH_CACHE);
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(cache) = serde_json::from_str::<MeshCache>(&text) {
            if cache.key == key {
                return Ok((Arc::new(TriangulatedDomain::from_file(&cache.mesh)?), true));
            }
        }
        log::info!("mesh cache at {} is stale; rebuilding", path.display());
    }
    let mesh = build_mesh(&poly, max_edge)?.to_file();
    write(
        &path,
        to_json(&MeshCache {
            key,
            mesh: mesh.clone(),
        }),
    )?;
    Ok((Arc::new(TriangulatedDomain::from_file(&mesh)?), false))
}

fn covariates(l: &Loaded, mesh: &TriangulatedDomain) -> Result<CovariateSet> {
    let mut set = CovariateSet::new();
    for c in &l.config.covariates.linear {
        set.insert(CovariateField::from_fn(mesh, c.name.clone(), |p| {
            c.intercept + c.x * p.x + c.y * p.y
        })?)?;
    }
    for f in &l.config.covariates.files {
        let path = l.resolve(f);
        let text = read(&path)?;
        for field in read_covariates_csv(text.as_bytes(), &path.display().to_string(), mesh)?.iter()
        {
            set.insert(field.clone())?;
        }
    }
    Ok(set)
}

fn range_maps(l: &Loaded) -> Result<BTreeMap<String, Vec<Polygon>>> {
    l.config
        .range_maps
        .iter()
        .map(|(name, p)| {
            let path = l.resolve(p);
            Ok((
                name.clone(),
                read_polygons_geojson(&read(&path)?, &path.display().to_string())?,
            ))
        })
        .collect()
}

/// Mesh, covariates and range maps shared by every command.
pub struct Domain {
    pub mesh: Arc<TriangulatedDomain>,
    pub covariates: CovariateSet,
    pub range_maps: BTreeMap<String, Vec<Polygon>>,
}

impl Domain {
    pub fn load(l: &Loaded) -> Result<Self> {
        let (mesh, _) = load_mesh(l)?;
        let covariates = covariates(l, &mesh)?;
        let range_maps = range_maps(l)?;
        Ok(Self {
            mesh,
            covariates,
            range_maps,
        })
    }

    pub fn context(&self) -> ProcessContext<'_> {
        ProcessContext {
            mesh: &self.mesh,
            covariates: &self.covariates,
            range_maps: &self.range_maps,
        }
    }
}

fn read_dataset(l: &Loaded, d: &ModelDatasetConfig, data_dir: &Path) -> Result<DatasetBinding> {
    let path = l.data_path(d.file(), data_dir);
    let text = read(&path)?;
    let ctx = path.display().to_string();
    let binding = match d {
        ModelDatasetConfig::Count {
            name,
            predictor,
            effort,
            duration_offset,
            overdispersion,
            links,
            ..
        } => {
            let ds = CountDataset {
                records: read_counts_csv(text.as_bytes(), &ctx)?,
                effort: effort.clone(),
                duration_offset: *duration_offset,
                overdispersion: *overdispersion,
            };
            let mut b = DatasetBinding::new(name.clone(), Dataset::Count(ds), predictor.build());
            b.links = links.clone();
            b
        }
        ModelDatasetConfig::Occupancy {
            name,
            predictor,
            effort,
            links,
            ..
        } => {
            let ds = OccupancyDataset {
                records: read_occupancy_csv(text.as_bytes(), &ctx)?,
                effort: effort.clone(),
            };
            let mut b =
                DatasetBinding::new(name.clone(), Dataset::Occupancy(ds), predictor.build());
            b.links = links.clone();
            b
        }
        ModelDatasetConfig::PresenceOnly {
            name,
            predictor,
            bias,
            data_weight,
            links,
            ..
        } => {
            let ds = PresenceOnlyDataset {
                points: read_points_csv(text.as_bytes(), &ctx)?,
                bias: bias.build(),
                data_weight: *data_weight,
            };
            let mut b =
                DatasetBinding::new(name.clone(), Dataset::PresenceOnly(ds), predictor.build());
            b.links = links.clone();
            b
        }
        ModelDatasetConfig::RegionalList {
            name,
            predictor,
            max_diameter,
            ..
        } => {
            let ds = RegionalListDataset {
                records: read_regional_geojson(&text, &ctx)?,
                max_diameter: *max_diameter,
            };
            DatasetBinding::new(name.clone(), Dataset::RegionalList(ds), predictor.build())
        }
    };
    if binding.dataset.is_empty() {
        log::warn!(
            "dataset `{}` in {} has no records",
            binding.name,
            path.display()
        );
    }
    Ok(binding)
}

/// The model specification with datasets read from disk.
pub fn build_spec(l: &Loaded, domain: &Domain, data_dir: &Path) -> Result<ModelSpec> {
    let m = l.model()?;
    let mut spec = if m.species.is_empty() {
        let mut spec = ModelSpec::new(domain.mesh.clone());
        spec.covariates = domain.covariates.clone();
        spec.fields = m
            .fields
            .iter()
            .map(|f| FieldComponent {
                name: f.name.clone(),
                representation: f.representation,
            })
            .collect();
        for d in &m.datasets {
            spec.datasets.push(read_dataset(l, d, data_dir)?);
        }
        spec
    } else {
        if !m.fields.is_empty() {
            return Err(CliError::Config(
                "species models declare their own fields; remove `model.fields`".into(),
            ));
        }
        let mut species = Vec::new();
        for s in &m.species {
            let mut sp = SpeciesData {
                name: s.name.clone(),
                ..Default::default()
            };
            if let Some(f) = &s.presence_absence {
                let path = l.data_path(f, data_dir);
                sp.presence_absence =
                    read_occupancy_csv(read(&path)?.as_bytes(), &path.display().to_string())?;
            }
            if let Some(f) = &s.presence_only {
                let path = l.data_path(f, data_dir);
                sp.presence_only =
                    read_points_csv(read(&path)?.as_bytes(), &path.display().to_string())?;
            }
            species.push(sp);
        }
        let opts = m.case_study.clone().unwrap_or_default();
        compose_case_study_spec(
            domain.mesh.clone(),
            domain.covariates.clone(),
            &species,
            &opts,
        )?
    };
    spec.range_maps = domain.range_maps.clone();
    spec.priors = m.priors.clone();
    spec.fixed = m.fixed.clone();
    spec.bias_integral_sd = m.bias_integral_sd;
    for (name, t) in &m.targets {
        spec.targets.insert(
            name.clone(),
            PredictionTarget {
                predictor: t.predictor.build(),
                bias: t.bias.build(),
            },
        );
    }
    spec.validate()?;
    Ok(spec)
}

pub fn default_data_dir(l: &Loaded) -> PathBuf {
    l.out_dir().join("sim")
}

pub fn cmd_mesh(l: &Loaded) -> Result<()> {
    let (mesh, hit) = load_mesh(l)?;
    println!(
        "{}",
        if hit {
            "cache hit"
        } else {
            "cache miss: mesh built"
        }
    );
    println!(
        "mesh: {} vertices, {} triangles",
        mesh.num_vertices(),
        mesh.num_triangles()
    );
    let target = mesh.boundary().area();
    let dual: f64 = mesh.dual_areas().iter().sum();
    if (mesh.area() - target).abs() <= 1e-9 * target && (dual - target).abs() <= 1e-9 * target {
        println!("area ok: {target}");
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "area check failed: triangles {} and dual cells {dual} against boundary {target}",
            mesh.area()
        )))
    }
}

fn write_simulation(dir: &Path, sim: &Simulation) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut buf = Vec::new();
    write_points_csv(&mut buf, &sim.individuals)?;
    write(&dir.join("individuals.csv"), &buf)?;
    for b in &sim.datasets {
        let mut buf = Vec::new();
        let file = match &b.dataset {
            Dataset::PresenceOnly(d) => {
                write_points_csv(&mut buf, &d.points)?;
                format!("{}.csv", b.name)
            }
            Dataset::Count(d) => {
                write_counts_csv(&mut buf, &d.records)?;
                format!("{}.csv", b.name)
            }
            Dataset::Occupancy(d) => {
                write_occupancy_csv(&mut buf, &d.records)?;
                format!("{}.csv", b.name)
            }
            Dataset::RegionalList(d) => {
                buf = write_regional_geojson(&d.records).into_bytes();
                format!("{}.geojson", b.name)
            }
        };
        write(&dir.join(file), &buf)?;
    }
    write(&dir.join("truth.json"), to_json(&sim.truth))
}

/// Replicate `r` of `n` goes to `sim/` for a single run, else `rep_{r:03}/`.
pub fn replicate_dir(out: &Path, r: usize, n: usize) -> PathBuf {
    if n == 1 {
        out.join("sim")
    } else {
        out.join(format!("rep_{r:03}"))
    }
}

pub fn cmd_simulate(l: &Loaded) -> Result<()> {
    let sc = l
        .config
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("configuration has no [simulate] table".into()))?;
    if sc.replicates == 0 {
        return Err(CliError::Config(
            "simulate.replicates must be at least 1".into(),
        ));
    }
    let cfg = sc.build();
    cfg.validate()?;
    let domain = Domain::load(l)?;
    let sims = if sc.replicates == 1 {
        vec![isdm_core::simulate::simulate(&cfg, &domain.context())?]
    } else {
        simulate_replicates(&cfg, &domain.context(), sc.replicates)?
    };
    let out = l.out_dir();
    for (r, sim) in sims.iter().enumerate() {
        let dir = replicate_dir(&out, r, sims.len());
        write_simulation(&dir, sim)?;
        let sizes: Vec<String> = sim
            .datasets
            .iter()
            .map(|d| format!("{} {}", d.name, d.dataset.len()))
            .collect();
        println!(
            "{}: {} individuals; {}",
            dir.display(),
            sim.individuals.len(),
            sizes.join(", ")
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSummary {
    pub converged: bool,
    pub message: String,
    pub mode: LatentMode,
    pub prior_only: bool,
    pub neg_loglik: f64,
    pub laplace_correction: Option<f64>,
    pub gradient_norm: f64,
    pub latent_residual: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub clamped: usize,
    pub estimates: BTreeMap<String, f64>,
    pub standard_errors: BTreeMap<String, Option<f64>>,
    pub se_diagnostic: Option<String>,
    pub decomposition: Decomposition,
    /// The full optimum, latent values included.
    pub parameters: Parameters,
}

fn fit_options(l: &Loaded, mode: LatentMode, max_iter: usize) -> FitOptions {
    let f = &l.config.fit;
    FitOptions {
        lbfgs: LbfgsOptions {
            max_iter,
            grad_tol: f.grad_tol,
            ..Default::default()
        },
        latent: mode,
        profile_threshold: f.profile_threshold,
        ..Default::default()
    }
}

pub fn cmd_fit(l: &Loaded, data_dir: &Path, output: Option<&Path>) -> Result<FitSummary> {
    let domain = Domain::load(l)?;
    let spec = build_spec(l, &domain, data_dir)?;
    let model = CompiledModel::new(&spec)?;
    let opts = fit_options(l, l.config.fit.latent, l.config.fit.max_iter);
    let mut init = model.initial();
    for (k, v) in &l.config.fit.init {
        init.set(k, *v)?;
    }
    let mut fit = fit_map(&model, Some(init), &opts)?;
    if l.config.fit.standard_errors {
        fit = laplace_standard_errors(&model, fit, &opts)?;
    }
    if fit.prior_only {
        println!("prior-only fit: every dataset is empty");
    }
    let layout = model.layout();
    let values = fit.optimum.values();
    let estimates = (0..layout.latent_start())
        .map(|i| (layout.name(i).to_string(), values[i]))
        .collect();
    let summary = FitSummary {
        converged: fit.converged,
        message: fit.message.clone(),
        mode: fit.mode,
        prior_only: fit.prior_only,
        neg_loglik: fit.neg_loglik,
        laplace_correction: fit.laplace_correction,
        gradient_norm: fit.gradient_norm,
        latent_residual: fit.latent_residual,
        iterations: fit.iterations,
        evaluations: fit.evaluations,
        clamped: fit.clamped,
        estimates,
        standard_errors: fit.standard_errors.clone(),
        se_diagnostic: fit.se_diagnostic.clone(),
        decomposition: fit.decomposition.clone(),
        parameters: fit.optimum.parameters(),
    };
    let path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| l.out_dir().join("fit.json"));
    write(&path, to_json(&summary))?;
    println!(
        "fit {}: {} after {} iterations, objective {}; summary in {}",
        if summary.converged {
            "converged"
        } else {
            "did not converge"
        },
        summary.message,
        summary.iterations,
        summary.neg_loglik,
        path.display()
    );
    if !summary.converged {
        return Err(CliError::NonConvergence(format!(
            "{}; summary written to {}",
            summary.message,
            path.display()
        )));
    }
    Ok(summary)
}

pub fn read_summary(path: &Path) -> Result<FitSummary> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn cmd_predict(
    l: &Loaded,
    data_dir: &Path,
    fit_path: Option<&Path>,
    output: Option<&Path>,
) -> Result<()> {
    let pc = l
        .config
        .predict
        .as_ref()
        .ok_or_else(|| CliError::Config("configuration has no [predict] table".into()))?;
    let fit_path = fit_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| l.out_dir().join("fit.json"));
    let summary = read_summary(&fit_path)?;
    let domain = Domain::load(l)?;
    let spec = build_spec(l, &domain, data_dir)?;
    let model = CompiledModel::new(&spec)?;
    let at = ParameterVector::from_parameters(model.layout().clone(), &summary.parameters)
        .map_err(|e| CliError::Data(format!("{}: {e}", fit_path.display())))?;
    // Zero iterations: rebuilds curvature at the stored optimum without moving it.
    let opts = fit_options(l, summary.mode, 0);
    let mut fit = fit_map(&model, Some(at), &opts)?;
    if l.config.fit.standard_errors {
        fit = laplace_standard_errors(&model, fit, &opts)?;
    }
    let targets = if !pc.targets.is_empty() {
        pc.targets.clone()
    } else if !spec.targets.is_empty() {
        spec.targets.keys().cloned().collect()
    } else {
        vec![spec.default_target()?]
    };
    let layered = targets.len() > 1;
    let mut rows = Vec::new();
    let mut dropped = 0;
    for t in &targets {
        let grid = predict_grid(&model, &fit, pc.resolution, t, pc.include_bias)?;
        dropped = grid.dropped;
        for ((p, mean), se) in grid.points.iter().zip(&grid.mean).zip(&grid.se) {
            rows.push(GridRow {
                x: p.x,
                y: p.y,
                mean: *mean,
                se: *se,
                species: layered.then(|| t.clone()),
            });
        }
    }
    let path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| l.out_dir().join("grid.csv"));
    let mut buf = Vec::new();
    write_grid_csv(&mut buf, &rows)?;
    write(&path, &buf)?;
    eprintln!(
        "grid: {} points per layer, {dropped} outside the domain dropped, {} layer(s)",
        rows.len() / targets.len(),
        targets.len()
    );
    println!("prediction grid in {}", path.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamScore {
    pub truth: f64,
    pub estimate: f64,
    pub se: Option<f64>,
    /// `(estimate − truth) / se`.
    pub z: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateScore {
    pub source: String,
    pub converged: bool,
    pub params: BTreeMap<String, ParamScore>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub replicates: usize,
    pub mean_bias: f64,
    pub mean_abs_bias: f64,
    pub mean_abs_z: Option<f64>,
    /// Fraction of replicates with `|z| ≤ 1.96` among those with a standard error.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreReport {
    pub parameters: BTreeMap<String, Aggregate>,
    pub replicates: Vec<ReplicateScore>,
}

fn score_one(
    source: String,
    truth: &Truth,
    fit: &FitSummary,
    names: &[String],
) -> Result<ReplicateScore> {
    let mut params = BTreeMap::new();
    for n in names {
        let t = *truth
            .params
            .get(n)
            .ok_or_else(|| CliError::Data(format!("{source}: truth has no value for `{n}`")))?;
        let e = *fit
            .estimates
            .get(n)
            .ok_or_else(|| CliError::Data(format!("{source}: fit has no estimate for `{n}`")))?;
        let se = fit.standard_errors.get(n).copied().flatten();
        params.insert(
            n.clone(),
            ParamScore {
                truth: t,
                estimate: e,
                se,
                z: se.map(|s| (e - t) / s),
            },
        );
    }
    Ok(ReplicateScore {
        source,
        converged: fit.converged,
        params,
    })
}

/// Scores `(truth, fit)` pairs. Without explicit names every estimated
/// parameter that is not held fixed is scored, and each must have a truth.
pub fn cmd_score(pairs: &[(PathBuf, PathBuf)], names: Option<Vec<String>>) -> Result<ScoreReport> {
    if pairs.is_empty() {
        return Err(CliError::Config(
            "nothing to score: give replicate directories or --truth and --fit".into(),
        ));
    }
    let mut reps = Vec::new();
    for (tp, fp) in pairs {
        let truth: Truth = serde_json::from_str(&read(tp)?)
            .map_err(|e| CliError::Data(format!("{}: {e}", tp.display())))?;
        let fit = read_summary(fp)?;
        let names = match &names {
            Some(n) => n.clone(),
            None => fit.standard_errors.keys().cloned().collect(),
        };
        reps.push(score_one(fp.display().to_string(), &truth, &fit, &names)?);
    }
    let mut parameters = BTreeMap::new();
    let keys: Vec<String> = reps[0].params.keys().cloned().collect();
    for k in keys {
        let scores: Vec<&ParamScore> = reps.iter().filter_map(|r| r.params.get(&k)).collect();
        if scores.len() != reps.len() {
            return Err(CliError::Data(format!(
                "parameter `{k}` is missing from some replicates"
            )));
        }
        let n = scores.len() as f64;
        let zs: Vec<f64> = scores.iter().filter_map(|s| s.z).collect();
        parameters.insert(
            k,
            Aggregate {
                replicates: scores.len(),
                mean_bias: scores.iter().map(|s| s.estimate - s.truth).sum::<f64>() / n,
                mean_abs_bias: scores
                    .iter()
                    .map(|s| (s.estimate - s.truth).abs())
                    .sum::<f64>()
                    / n,
                mean_abs_z: (!zs.is_empty())
                    .then(|| zs.iter().map(|z| z.abs()).sum::<f64>() / zs.len() as f64),
                coverage: (!zs.is_empty()).then(|| {
                    zs.iter().filter(|z| z.abs() <= 1.96).count() as f64 / zs.len() as f64
                }),
            },
        );
    }
    Ok(ScoreReport {
        parameters,
        replicates: reps,
    })
}

pub fn write_score(report: &ScoreReport, output: Option<&Path>) -> Result<()> {
    let text = to_json(report);
    match output {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_validate(l: &Loaded, data_dir: &Path) -> Result<()> {
    let domain = Domain::load(l)?;
    println!(
        "domain ok: {} vertices, {} covariates",
        domain.mesh.num_vertices(),
        domain.covariates.len()
    );
    if let Some(sc) = &l.config.simulate {
        sc.build().validate()?;
        println!("simulation ok: {} dataset designs", sc.datasets.len());
    }
    if l.config.model.is_some() {
        let spec = build_spec(l, &domain, data_dir)?;
        let model = CompiledModel::new(&spec)?;
        println!(
            "model ok: {} datasets, {} parameters",
            spec.datasets.len(),
            model.dim()
        );
    }
    Ok(())
}
