use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Polygon, TriangulatedDomain};
use crate::numeric::normal_logpdf;
use crate::observation::{Dataset, Effort, ThinningLink};
use crate::process_model::{CovariateSet, LinearPredictor, Term};
use crate::random_field::PriorRepresentation;

/// Prior on a scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    Normal { mean: f64, sd: f64 },
    Flat,
}

impl Prior {
    pub fn normal(mean: f64, sd: f64) -> Self {
        Prior::Normal { mean, sd }
    }

    /// Log density (up to nothing for `Flat`) and its first derivative.
    pub fn log_density(&self, x: f64) -> (f64, f64) {
        match *self {
            Prior::Normal { mean, sd } => (normal_logpdf(x, mean, sd), -(x - mean) / (sd * sd)),
            Prior::Flat => (0.0, 0.0),
        }
    }

    pub fn curvature(&self) -> f64 {
        match *self {
            Prior::Normal { sd, .. } => 1.0 / (sd * sd),
            Prior::Flat => 0.0,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match *self {
            Prior::Normal { mean, .. } => Some(mean),
            Prior::Flat => None,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if let Prior::Normal { mean, sd } = *self {
            if !mean.is_finite() || !(sd > 0.0 && sd.is_finite()) {
                return Err(Error::Spec(format!(
                    "prior on `{name}` needs finite mean and positive sd"
                )));
            }
        }
        Ok(())
    }
}

/// A named Matérn field component with its own hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldComponent {
    pub name: String,
    #[serde(default)]
    pub representation: PriorRepresentation,
}

impl FieldComponent {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            representation: PriorRepresentation::default(),
        }
    }

    pub fn log_tau_name(&self) -> String {
        format!("{}.log_tau", self.name)
    }

    pub fn log_kappa_name(&self) -> String {
        format!("{}.log_kappa", self.name)
    }
}

/// One dataset with the process predictor it observes and any thinning links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBinding {
    pub name: String,
    pub dataset: Dataset,
    pub predictor: LinearPredictor,
    #[serde(default)]
    pub links: Vec<ThinningLink>,
}

impl DatasetBinding {
    pub fn new(name: impl Into<String>, dataset: Dataset, predictor: LinearPredictor) -> Self {
        Self {
            name: name.into(),
            dataset,
            predictor,
            links: Vec::new(),
        }
    }

    pub fn with_link(mut self, link: ThinningLink) -> Self {
        self.links.push(link);
        self
    }

    pub fn log_sigma_eps_name(&self) -> String {
        format!("{}.log_sigma_eps", self.name)
    }

    /// Predictor of the observation-process terms (`log q` for presence-only data).
    pub fn bias(&self) -> Option<&LinearPredictor> {
        match &self.dataset {
            Dataset::PresenceOnly(po) if !po.bias.terms.is_empty() => Some(&po.bias),
            _ => None,
        }
    }

    pub fn effort(&self) -> Option<&Effort> {
        match &self.dataset {
            Dataset::Count(c) => Some(&c.effort),
            Dataset::Occupancy(o) => Some(&o.effort),
            _ => None,
        }
    }

    pub fn has_overdispersion(&self) -> bool {
        matches!(&self.dataset, Dataset::Count(c) if c.overdispersion)
    }
}

/// What a prediction layer shows: an ecological predictor plus the
/// observation-bias terms that can optionally be added back.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionTarget {
    pub predictor: LinearPredictor,
    #[serde(default)]
    pub bias: LinearPredictor,
}

/// Everything the joint likelihood needs: the mesh, covariates, field
/// components, dataset bindings, priors and held-fixed parameters.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub mesh: Arc<TriangulatedDomain>,
    pub covariates: CovariateSet,
    pub range_maps: BTreeMap<String, Vec<Polygon>>,
    pub fields: Vec<FieldComponent>,
    pub datasets: Vec<DatasetBinding>,
    /// Overrides of the default priors, by parameter name.
    pub priors: BTreeMap<String, Prior>,
    /// Parameters held at a value during fitting.
    pub fixed: BTreeMap<String, f64>,
    /// Declared parameters that need not appear in any predictor.
    pub extra_params: Vec<String>,
    pub targets: BTreeMap<String, PredictionTarget>,
    /// Optional Normal(0, sd²) penalty on the dual-area integral of fields that
    /// only appear in presence-only bias predictors.
    pub bias_integral_sd: Option<f64>,
}

impl ModelSpec {
    pub fn new(mesh: Arc<TriangulatedDomain>) -> Self {
        Self {
            mesh,
            covariates: CovariateSet::new(),
            range_maps: BTreeMap::new(),
            fields: Vec::new(),
            datasets: Vec::new(),
            priors: BTreeMap::new(),
            fixed: BTreeMap::new(),
            extra_params: Vec::new(),
            targets: BTreeMap::new(),
            bias_integral_sd: None,
        }
    }

    pub fn field(&self, name: &str) -> Option<&FieldComponent> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Fields referenced by some presence-only bias predictor.
    pub fn bias_fields(&self) -> BTreeSet<String> {
        self.datasets
            .iter()
            .filter_map(|d| d.bias())
            .flat_map(|b| b.field_components().map(str::to_string))
            .collect()
    }

    fn check_predictor(&self, lp: &LinearPredictor, context: &str) -> Result<()> {
        for term in &lp.terms {
            match term {
                Term::Covariate { covariate, .. } => {
                    self.covariates.require(covariate).map_err(|_| {
                        Error::Spec(format!("{context}: unknown covariate `{covariate}`"))
                    })?;
                }
                Term::RangeMap { map, .. } => {
                    if !self.range_maps.contains_key(map) {
                        return Err(Error::Spec(format!("{context}: unknown range map `{map}`")));
                    }
                }
                Term::Field { component } => {
                    if self.field(component).is_none() {
                        return Err(Error::Spec(format!(
                            "{context}: unknown field component `{component}`"
                        )));
                    }
                }
                Term::Intercept { .. } => {}
            }
        }
        Ok(())
    }

    /// Structural checks: unique names, resolvable references, and bias
    /// fields confined to presence-only bias predictors.
    pub fn validate(&self) -> Result<()> {
        self.covariates.validate(&self.mesh)?;
        let mut names = BTreeSet::new();
        for f in &self.fields {
            if !names.insert(f.name.as_str()) {
                return Err(Error::Spec(format!(
                    "duplicate field component `{}`",
                    f.name
                )));
            }
        }
        let mut ds_names = BTreeSet::new();
        for d in &self.datasets {
            if !ds_names.insert(d.name.as_str()) {
                return Err(Error::Spec(format!("duplicate dataset `{}`", d.name)));
            }
            d.dataset.validate().map_err(|e| e.with_dataset(&d.name))?;
            self.check_predictor(&d.predictor, &format!("dataset `{}`", d.name))?;
            if let Some(b) = d.bias() {
                self.check_predictor(b, &format!("bias of dataset `{}`", d.name))?;
                if b.terms.iter().any(|t| matches!(t, Term::RangeMap { .. })) {
                    return Err(Error::Spec(format!(
                        "bias of dataset `{}` cannot use a range map",
                        d.name
                    )));
                }
            }
            for link in &d.links {
                for t in &link.terms {
                    self.covariates.require(&t.covariate)?;
                }
            }
        }
        let bias = self.bias_fields();
        for d in &self.datasets {
            for c in d.predictor.field_components() {
                if bias.contains(c) {
                    return Err(Error::Spec(format!(
                        "field `{c}` is a presence-only bias field and cannot enter the process predictor of `{}`",
                        d.name
                    )));
                }
            }
        }
        for (name, t) in &self.targets {
            self.check_predictor(&t.predictor, &format!("target `{name}`"))?;
            self.check_predictor(&t.bias, &format!("target `{name}`"))?;
        }
        for (name, p) in &self.priors {
            p.validate(name)?;
        }
        if let Some(sd) = self.bias_integral_sd {
            if !(sd > 0.0) {
                return Err(Error::Spec("bias_integral_sd must be positive".into()));
            }
        }
        Ok(())
    }

    /// The prediction target with the given name: an explicit target, or the
    /// process predictor (and bias) of a dataset.
    pub fn target(&self, name: &str) -> Result<PredictionTarget> {
        if let Some(t) = self.targets.get(name) {
            return Ok(t.clone());
        }
        if let Some(d) = self.datasets.iter().find(|d| d.name == name) {
            return Ok(PredictionTarget {
                predictor: d.predictor.clone(),
                bias: d.bias().cloned().unwrap_or_default(),
            });
        }
        Err(Error::Spec(format!("unknown prediction target `{name}`")))
    }

    /// Default target: the first declared target, else the first dataset.
    pub fn default_target(&self) -> Result<String> {
        self.targets
            .keys()
            .next()
            .cloned()
            .or_else(|| self.datasets.first().map(|d| d.name.clone()))
            .ok_or_else(|| Error::Spec("model has no datasets or targets to predict".into()))
    }
}
