//! Multi-species composition: one shared field per species entering both its
//! presence/absence and presence-only predictors, and a bias field shared by
//! every presence-only dataset.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::spec::{DatasetBinding, FieldComponent, ModelSpec, PredictionTarget};
use crate::error::{Error, Result};
use crate::mesh::{Point2D, TriangulatedDomain};
use crate::observation::{Dataset, Effort, OccupancyDataset, OccupancyRecord, PresenceOnlyDataset};
use crate::process_model::{CovariateSet, LinearPredictor};
use crate::random_field::PriorRepresentation;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesData {
    pub name: String,
    #[serde(default)]
    pub presence_absence: Vec<OccupancyRecord>,
    #[serde(default)]
    pub presence_only: Vec<Point2D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseStudyOptions {
    /// Covariates entering every species predictor, each with a species-specific slope.
    pub covariates: Vec<String>,
    /// Covariates of the shared presence-only bias, slopes `b_{cov}`.
    #[serde(default)]
    pub bias_covariates: Vec<String>,
    #[serde(default = "yes")]
    pub bias_field: bool,
    #[serde(default)]
    pub representation: PriorRepresentation,
}

fn yes() -> bool {
    true
}

impl Default for CaseStudyOptions {
    fn default() -> Self {
        Self {
            covariates: Vec::new(),
            bias_covariates: Vec::new(),
            bias_field: true,
            representation: PriorRepresentation::default(),
        }
    }
}

pub const BIAS_FIELD: &str = "xi_bias";

/// Builds the joint specification for several species. Survey effort is
/// absorbed by the intercepts `alpha_pa_{sp}`, so presence/absence datasets
/// carry a fixed zero log effort. Each species becomes a prediction target
/// named after it, on the presence-only intercept when it has such data.
pub fn compose_case_study_spec(
    mesh: Arc<TriangulatedDomain>,
    covariates: CovariateSet,
    species: &[SpeciesData],
    opts: &CaseStudyOptions,
) -> Result<ModelSpec> {
    if species.is_empty() {
        return Err(Error::Spec("case study needs at least one species".into()));
    }
    let mut seen = BTreeSet::new();
    for s in species {
        if s.name.is_empty() || !seen.insert(s.name.as_str()) {
            return Err(Error::Spec(format!(
                "species names must be unique and non-empty, got `{}`",
                s.name
            )));
        }
        if s.presence_absence.is_empty() && s.presence_only.is_empty() {
            return Err(Error::Spec(format!("species `{}` has no data", s.name)));
        }
    }
    let mut spec = ModelSpec::new(mesh);
    spec.covariates = covariates;
    let any_po = species.iter().any(|s| !s.presence_only.is_empty());

    let mut bias = LinearPredictor::new();
    for c in &opts.bias_covariates {
        bias = bias.covariate(c.clone(), format!("b_{c}"));
    }
    if any_po && opts.bias_field {
        bias = bias.field(BIAS_FIELD);
    }

    for s in species {
        let sp = &s.name;
        let field = format!("xi_{sp}");
        spec.fields.push(FieldComponent {
            name: field.clone(),
            representation: opts.representation,
        });
        let shared = |intercept: String| {
            let mut lp = LinearPredictor::new().intercept(intercept);
            for c in &opts.covariates {
                lp = lp.covariate(c.clone(), format!("beta_{sp}_{c}"));
            }
            lp.field(field.clone())
        };
        let mut target = None;
        if !s.presence_absence.is_empty() {
            let lp = shared(format!("alpha_pa_{sp}"));
            let ds = OccupancyDataset {
                records: s.presence_absence.clone(),
                effort: Effort::Fixed { log_effort: 0.0 },
            };
            spec.datasets.push(DatasetBinding::new(
                format!("{sp}_pa"),
                Dataset::Occupancy(ds),
                lp.clone(),
            ));
            target = Some(PredictionTarget {
                predictor: lp,
                bias: LinearPredictor::new(),
            });
        }
        if !s.presence_only.is_empty() {
            let lp = shared(format!("alpha_po_{sp}"));
            let ds = PresenceOnlyDataset {
                points: s.presence_only.clone(),
                bias: bias.clone(),
                data_weight: 0.0,
            };
            spec.datasets.push(DatasetBinding::new(
                format!("{sp}_po"),
                Dataset::PresenceOnly(ds),
                lp.clone(),
            ));
            target = Some(PredictionTarget {
                predictor: lp,
                bias: bias.clone(),
            });
        }
        spec.targets
            .insert(sp.clone(), target.expect("species has data"));
    }
    if any_po && opts.bias_field {
        spec.fields.push(FieldComponent {
            name: BIAS_FIELD.into(),
            representation: opts.representation,
        });
    }
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, Polygon};
    use crate::process_model::CovariateField;

    fn mesh() -> Arc<TriangulatedDomain> {
        Arc::new(build_mesh(&Polygon::unit_square(), 0.3).unwrap())
    }

    fn pa() -> Vec<OccupancyRecord> {
        vec![OccupancyRecord {
            site: Point2D::new(0.5, 0.5),
            visits: 2,
            detections: 1,
        }]
    }

    #[test]
    fn single_presence_absence_species_is_a_plain_occupancy_model() {
        let sp = SpeciesData {
            name: "cod".into(),
            presence_absence: pa(),
            ..Default::default()
        };
        let spec = compose_case_study_spec(
            mesh(),
            CovariateSet::new(),
            &[sp],
            &CaseStudyOptions::default(),
        )
        .unwrap();
        assert_eq!(spec.fields.len(), 1);
        assert_eq!(spec.datasets.len(), 1);
        assert!(matches!(spec.datasets[0].dataset, Dataset::Occupancy(_)));
        assert!(spec.bias_fields().is_empty());
    }

    #[test]
    fn two_species_share_one_bias_field() {
        let m = mesh();
        let cov = CovariateSet::new()
            .with(CovariateField::from_fn(&m, "depth", |p| p.x).unwrap())
            .unwrap();
        let po = vec![Point2D::new(0.2, 0.3)];
        let species = [
            SpeciesData {
                name: "a".into(),
                presence_absence: pa(),
                presence_only: po.clone(),
            },
            SpeciesData {
                name: "b".into(),
                presence_absence: Vec::new(),
                presence_only: po,
            },
        ];
        let opts = CaseStudyOptions {
            covariates: vec!["depth".into()],
            ..Default::default()
        };
        let spec = compose_case_study_spec(m, cov, &species, &opts).unwrap();
        let names: Vec<&str> = spec.fields.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["xi_a", "xi_b", "xi_bias"]);
        assert_eq!(spec.datasets.len(), 3);
        assert_eq!(
            spec.bias_fields().into_iter().collect::<Vec<_>>(),
            [BIAS_FIELD]
        );
        let a_pa = &spec.datasets[0].predictor;
        let a_po = &spec.datasets[1].predictor;
        let a_fields: Vec<&str> = a_pa.field_components().collect();
        assert_eq!(a_fields, a_po.field_components().collect::<Vec<_>>());
        assert_eq!(spec.targets.len(), 2);
    }

    #[test]
    fn species_without_data_is_rejected() {
        let species = [SpeciesData {
            name: "ghost".into(),
            ..Default::default()
        }];
        assert!(compose_case_study_spec(
            mesh(),
            CovariateSet::new(),
            &species,
            &CaseStudyOptions::default()
        )
        .is_err());
        assert!(compose_case_study_spec(
            mesh(),
            CovariateSet::new(),
            &[],
            &CaseStudyOptions::default()
        )
        .is_err());
    }
}
