//! Run configuration (TOML). Every table rejects unknown keys. Relative paths
//! resolve against the directory of the configuration file; dataset paths
//! may start with `{data_dir}`, replaced by the `--data-dir` argument.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use isdm_core::inference::{CaseStudyOptions, LatentMode, Prior};
use isdm_core::observation::{Effort, ThinningLink};
use isdm_core::process_model::LinearPredictor;
use isdm_core::random_field::PriorRepresentation;
use isdm_core::simulate::{
    DatasetDesign, Regions, SimulationConfig, Sites, TrueField, DEFAULT_SAFETY_FACTOR,
};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub domain: DomainConfig,
    #[serde(default)]
    pub covariates: CovariatesConfig,
    /// Range-map name to GeoJSON polygon file.
    #[serde(default)]
    pub range_maps: BTreeMap<String, PathBuf>,
    pub simulate: Option<SimulateConfig>,
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub fit: FitConfig,
    pub predict: Option<PredictConfig>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// GeoJSON polygon file.
    pub boundary: Option<PathBuf>,
    /// `[x0, y0, x1, y1]`.
    pub rectangle: Option<[f64; 4]>,
    pub max_edge: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariatesConfig {
    /// CSV files with `x,y,name,value` rows.
    #[serde(default)]
    pub files: Vec<PathBuf>,
    #[serde(default)]
    pub linear: Vec<LinearCovariate>,
}

/// `intercept + x·X + y·Y` evaluated at the mesh vertices.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearCovariate {
    pub name: String,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub y: f64,
}

/// Predictor terms by role; covariate and range-map tables map a covariate
/// (or map) name to its coefficient name.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    pub intercept: Option<String>,
    #[serde(default)]
    pub covariates: BTreeMap<String, String>,
    #[serde(default)]
    pub range_maps: BTreeMap<String, String>,
    #[serde(default)]
    pub fields: Vec<String>,
}

impl PredictorConfig {
    pub fn build(&self) -> LinearPredictor {
        let mut lp = LinearPredictor::new();
        if let Some(a) = &self.intercept {
            lp = lp.intercept(a.clone());
        }
        for (c, p) in &self.covariates {
            lp = lp.covariate(c.clone(), p.clone());
        }
        for (m, g) in &self.range_maps {
            lp = lp.range_map(m.clone(), g.clone());
        }
        for f in &self.fields {
            lp = lp.field(f.clone());
        }
        lp
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub seed: u64,
    #[serde(default = "one_replicate")]
    pub replicates: usize,
    #[serde(default = "default_safety")]
    pub safety_factor: f64,
    #[serde(default)]
    pub fields: Vec<TrueField>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub process: PredictorConfig,
    #[serde(default)]
    pub datasets: Vec<SimDatasetConfig>,
}

fn one_replicate() -> usize {
    1
}

fn default_safety() -> f64 {
    DEFAULT_SAFETY_FACTOR
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SimDatasetConfig {
    PresenceOnly {
        name: String,
        #[serde(default)]
        bias: PredictorConfig,
        #[serde(default = "one")]
        retention: f64,
        #[serde(default)]
        links: Vec<ThinningLink>,
    },
    Count {
        name: String,
        sites: Sites,
        #[serde(default)]
        durations: Vec<f64>,
        #[serde(default)]
        effort: Effort,
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
        max_diameter: Option<f64>,
    },
}

impl SimulateConfig {
    pub fn build(&self) -> SimulationConfig {
        let datasets = self
            .datasets
            .iter()
            .map(|d| match d.clone() {
                SimDatasetConfig::PresenceOnly {
                    name,
                    bias,
                    retention,
                    links,
                } => DatasetDesign::PresenceOnly {
                    name,
                    bias: bias.build(),
                    retention,
                    links,
                },
                SimDatasetConfig::Count {
                    name,
                    sites,
                    durations,
                    effort,
                    overdispersion_sd,
                    links,
                } => DatasetDesign::Count {
                    name,
                    sites,
                    durations,
                    effort,
                    overdispersion_sd,
                    links,
                },
                SimDatasetConfig::Occupancy {
                    name,
                    sites,
                    visits,
                    effort,
                    links,
                } => DatasetDesign::Occupancy {
                    name,
                    sites,
                    visits,
                    effort,
                    links,
                },
                SimDatasetConfig::RegionalList {
                    name,
                    regions,
                    max_diameter,
                } => DatasetDesign::RegionalList {
                    name,
                    regions,
                    max_diameter,
                },
            })
            .collect();
        SimulationConfig {
            seed: self.seed,
            fields: self.fields.clone(),
            params: self.params.clone(),
            process: self.process.build(),
            datasets,
            safety_factor: self.safety_factor,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub name: String,
    #[serde(default)]
    pub representation: PriorRepresentation,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelDatasetConfig {
    Count {
        name: String,
        file: String,
        predictor: PredictorConfig,
        #[serde(default)]
        effort: Effort,
        #[serde(default = "yes")]
        duration_offset: bool,
        #[serde(default)]
        overdispersion: bool,
        #[serde(default)]
        links: Vec<ThinningLink>,
    },
    Occupancy {
        name: String,
        file: String,
        predictor: PredictorConfig,
        #[serde(default)]
        effort: Effort,
        #[serde(default)]
        links: Vec<ThinningLink>,
    },
    PresenceOnly {
        name: String,
        file: String,
        predictor: PredictorConfig,
        #[serde(default)]
        bias: PredictorConfig,
        #[serde(default)]
        data_weight: f64,
        #[serde(default)]
        links: Vec<ThinningLink>,
    },
    RegionalList {
        name: String,
        file: String,
        predictor: PredictorConfig,
        max_diameter: Option<f64>,
    },
}

impl ModelDatasetConfig {
    pub fn file(&self) -> &str {
        match self {
            ModelDatasetConfig::Count { file, .. }
            | ModelDatasetConfig::Occupancy { file, .. }
            | ModelDatasetConfig::PresenceOnly { file, .. }
            | ModelDatasetConfig::RegionalList { file, .. } => file,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    pub name: String,
    /// Occupancy CSV.
    pub presence_absence: Option<String>,
    /// Presence-only CSV.
    pub presence_only: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub bias: PredictorConfig,
}

/// Either explicit datasets or a multi-species composition.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub fields: Vec<FieldConfig>,
    #[serde(default)]
    pub datasets: Vec<ModelDatasetConfig>,
    #[serde(default)]
    pub species: Vec<SpeciesConfig>,
    pub case_study: Option<CaseStudyOptions>,
    #[serde(default)]
    pub priors: BTreeMap<String, Prior>,
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    #[serde(default)]
    pub targets: BTreeMap<String, TargetConfig>,
    pub bias_integral_sd: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub latent: LatentMode,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_profile_threshold")]
    pub profile_threshold: usize,
    #[serde(default = "yes")]
    pub standard_errors: bool,
    /// Starting values by parameter name.
    #[serde(default)]
    pub init: BTreeMap<String, f64>,
}

fn default_max_iter() -> usize {
    3000
}

fn default_grad_tol() -> f64 {
    1e-6
}

fn default_profile_threshold() -> usize {
    500
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            latent: LatentMode::Auto,
            max_iter: default_max_iter(),
            grad_tol: default_grad_tol(),
            profile_threshold: default_profile_threshold(),
            standard_errors: true,
            init: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub resolution: f64,
    /// Targets to predict; all declared targets when empty, else the default target.
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default)]
    pub include_bias: bool,
}

/// A parsed configuration together with the directory it was read from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { config, base };
        loaded.check()?;
        Ok(loaded)
    }

    fn check(&self) -> Result<()> {
        let d = &self.config.domain;
        if d.boundary.is_some() == d.rectangle.is_some() {
            return Err(CliError::Config(
                "domain needs exactly one of `boundary` or `rectangle`".into(),
            ));
        }
        if let Some(m) = &self.config.model {
            if !m.species.is_empty() && !m.datasets.is_empty() {
                return Err(CliError::Config(
                    "model takes either `datasets` or `species`, not both".into(),
                ));
            }
            if m.species.is_empty() && m.case_study.is_some() {
                return Err(CliError::Config(
                    "`case_study` options need `species`".into(),
                ));
            }
        }
        if let Some(p) = &self.config.predict {
            if !(p.resolution > 0.0 && p.resolution.is_finite()) {
                return Err(CliError::Config(
                    "predict.resolution must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.config.out_dir)
    }

    /// A dataset path. `{data_dir}` is replaced by `data_dir`, which is used
    /// as given; other relative paths resolve against the configuration.
    pub fn data_path(&self, template: &str, data_dir: &Path) -> PathBuf {
        match template.strip_prefix("{data_dir}") {
            Some(rest) => data_dir.join(rest.trim_start_matches(['/', '\\'])),
            None => self.resolve(Path::new(template)),
        }
    }

    pub fn model(&self) -> Result<&ModelConfig> {
        self.config
            .model
            .as_ref()
            .ok_or_else(|| CliError::Config("configuration has no [model] table".into()))
    }
}
