//! Flat parameter layout.
//!
//! Order: fixed effects (process predictor coefficients and range-map
//! `log γ`, then declared extras), observation parameters (effort, bias,
//! thinning-link coefficients, `log σ_ε`), field hyperparameters (`log τ`,
//! `log κ` per component), latent node values per component, and per-site
//! overdispersion values per count dataset. Within each group names appear in
//! first-use order, walking datasets as declared.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::observation::Effort;
use crate::process_model::{LinearPredictor, ProcessState, Term};
use crate::random_field::{FieldRealization, MaternParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    FixedEffect,
    Observation,
    Hyper,
    Latent,
    Overdispersion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Coefficient,
    LogGamma,
    LogSigmaEps,
    LogTau,
    LogKappa,
    FieldNode,
    EpsNode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    params: Vec<ParamInfo>,
    index: BTreeMap<String, usize>,
    n_scalar: usize,
    hyper: Vec<(String, usize, usize)>,
    fields: Vec<Block>,
    eps: Vec<Block>,
}

struct Builder {
    params: Vec<ParamInfo>,
    index: BTreeMap<String, usize>,
}

impl Builder {
    fn push(&mut self, name: String, kind: ParamKind, role: Role) -> Result<usize> {
        if let Some(&i) = self.index.get(&name) {
            let existing = &self.params[i];
            let compatible = matches!(
                (existing.role, role),
                (Role::Coefficient, Role::Coefficient) | (Role::LogGamma, Role::LogGamma)
            );
            if !compatible {
                return Err(Error::Spec(format!(
                    "parameter name `{name}` is used in incompatible roles"
                )));
            }
            return Ok(i);
        }
        let i = self.params.len();
        self.index.insert(name.clone(), i);
        self.params.push(ParamInfo { name, kind, role });
        Ok(i)
    }

    fn predictor(&mut self, lp: &LinearPredictor, kind: ParamKind) -> Result<()> {
        for t in &lp.terms {
            match t {
                Term::Intercept { param } | Term::Covariate { param, .. } => {
                    self.push(param.clone(), kind, Role::Coefficient)?;
                }
                Term::RangeMap { log_gamma, .. } => {
                    self.push(log_gamma.clone(), kind, Role::LogGamma)?;
                }
                Term::Field { .. } => {}
            }
        }
        Ok(())
    }
}

impl Layout {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let mut b = Builder {
            params: Vec::new(),
            index: BTreeMap::new(),
        };
        for d in &spec.datasets {
            b.predictor(&d.predictor, ParamKind::FixedEffect)?;
        }
        for name in &spec.extra_params {
            b.push(name.clone(), ParamKind::FixedEffect, Role::Coefficient)?;
        }
        for d in &spec.datasets {
            if let Some(Effort::Estimated { param }) = d.effort() {
                b.push(param.clone(), ParamKind::Observation, Role::Coefficient)?;
            }
            if let Some(bias) = d.bias() {
                b.predictor(bias, ParamKind::Observation)?;
            }
            for link in &d.links {
                b.push(
                    link.intercept.clone(),
                    ParamKind::Observation,
                    Role::Coefficient,
                )?;
                for t in &link.terms {
                    b.push(t.param.clone(), ParamKind::Observation, Role::Coefficient)?;
                }
            }
            if d.has_overdispersion() {
                b.push(
                    d.log_sigma_eps_name(),
                    ParamKind::Observation,
                    Role::LogSigmaEps,
                )?;
            }
        }
        let n_scalar = b.params.len();
        let mut hyper = Vec::new();
        for f in &spec.fields {
            let t = b.push(f.log_tau_name(), ParamKind::Hyper, Role::LogTau)?;
            let k = b.push(f.log_kappa_name(), ParamKind::Hyper, Role::LogKappa)?;
            if t != b.params.len() - 2 || k != b.params.len() - 1 {
                return Err(Error::Spec(format!(
                    "hyperparameter names of field `{}` collide with other parameters",
                    f.name
                )));
            }
            hyper.push((f.name.clone(), t, k));
        }
        let n = spec.mesh.num_vertices();
        let mut fields = Vec::new();
        for f in &spec.fields {
            let start = b.params.len();
            for i in 0..n {
                let name = format!("{}[{i}]", f.name);
                if b.index.contains_key(&name) {
                    return Err(Error::Spec(format!(
                        "parameter name `{name}` collides with a latent value"
                    )));
                }
                b.push(name, ParamKind::Latent, Role::FieldNode)?;
            }
            fields.push(Block {
                name: f.name.clone(),
                start,
                len: n,
            });
        }
        let mut eps = Vec::new();
        for d in &spec.datasets {
            if d.has_overdispersion() {
                let start = b.params.len();
                let len = d.dataset.len();
                for i in 0..len {
                    let name = format!("{}.eps[{i}]", d.name);
                    if b.index.contains_key(&name) {
                        return Err(Error::Spec(format!(
                            "parameter name `{name}` collides with a latent value"
                        )));
                    }
                    b.push(name, ParamKind::Overdispersion, Role::EpsNode)?;
                }
                eps.push(Block {
                    name: d.name.clone(),
                    start,
                    len,
                });
            }
        }
        Ok(Self {
            params: b.params,
            index: b.index,
            n_scalar,
            hyper,
            fields,
            eps,
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[ParamInfo] {
        &self.params
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Spec(format!("unknown parameter `{name}`")))
    }

    pub fn name(&self, i: usize) -> &str {
        &self.params[i].name
    }

    /// Number of scalar (fixed-effect and observation) parameters.
    pub fn n_scalar(&self) -> usize {
        self.n_scalar
    }

    /// First latent index; everything from here on is a field node or overdispersion value.
    pub fn latent_start(&self) -> usize {
        self.n_scalar + 2 * self.hyper.len()
    }

    pub fn is_latent(&self, i: usize) -> bool {
        i >= self.latent_start()
    }

    /// (field name, log τ index, log κ index) per component.
    pub fn hyper(&self) -> &[(String, usize, usize)] {
        &self.hyper
    }

    pub fn field_blocks(&self) -> &[Block] {
        &self.fields
    }

    pub fn eps_blocks(&self) -> &[Block] {
        &self.eps
    }

    pub fn field_block(&self, name: &str) -> Option<&Block> {
        self.fields.iter().find(|b| b.name == name)
    }

    /// Splits a flat vector into named pieces.
    pub fn unflatten(&self, values: &[f64]) -> Result<Parameters> {
        if values.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                self.len(),
                values.len()
            )));
        }
        let scalars = (0..self.n_scalar)
            .map(|i| (self.params[i].name.clone(), values[i]))
            .collect();
        let hyper = self
            .hyper
            .iter()
            .map(|(f, t, k)| (f.clone(), MaternParams::new(values[*t], values[*k])))
            .collect();
        let fields = self
            .fields
            .iter()
            .map(|b| (b.name.clone(), values[b.start..b.start + b.len].to_vec()))
            .collect();
        let overdispersion = self
            .eps
            .iter()
            .map(|b| (b.name.clone(), values[b.start..b.start + b.len].to_vec()))
            .collect();
        Ok(Parameters {
            scalars,
            hyper,
            fields,
            overdispersion,
        })
    }

    /// Inverse of [`Layout::unflatten`]; every piece must be present with the right length.
    pub fn flatten(&self, p: &Parameters) -> Result<Vec<f64>> {
        let expected = (
            self.n_scalar,
            self.hyper.len(),
            self.fields.len(),
            self.eps.len(),
        );
        let got = (
            p.scalars.len(),
            p.hyper.len(),
            p.fields.len(),
            p.overdispersion.len(),
        );
        if expected != got {
            return Err(Error::InvalidArgument(
                "parameter structure does not match the layout".into(),
            ));
        }
        let mut out = vec![0.0; self.len()];
        for i in 0..self.n_scalar {
            let name = &self.params[i].name;
            out[i] = *p
                .scalars
                .get(name)
                .ok_or_else(|| Error::Spec(format!("missing parameter `{name}`")))?;
        }
        for (f, t, k) in &self.hyper {
            let h = p
                .hyper
                .get(f)
                .ok_or_else(|| Error::Spec(format!("missing hyperparameters of `{f}`")))?;
            out[*t] = h.log_tau;
            out[*k] = h.log_kappa;
        }
        for (blocks, map) in [(&self.fields, &p.fields), (&self.eps, &p.overdispersion)] {
            for b in blocks {
                let v = map
                    .get(&b.name)
                    .ok_or_else(|| Error::Spec(format!("missing latent block `{}`", b.name)))?;
                if v.len() != b.len {
                    return Err(Error::InvalidArgument(format!(
                        "block `{}` needs {} values",
                        b.name, b.len
                    )));
                }
                out[b.start..b.start + b.len].copy_from_slice(v);
            }
        }
        Ok(out)
    }
}

/// Structured view of a parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub scalars: BTreeMap<String, f64>,
    pub hyper: BTreeMap<String, MaternParams>,
    pub fields: BTreeMap<String, Vec<f64>>,
    pub overdispersion: BTreeMap<String, Vec<f64>>,
}

/// A flat parameter vector tied to its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.len();
        Self {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.layout.index_of(name).map(|i| self.values[i])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self.layout.require(name)?;
        self.values[i] = value;
        Ok(())
    }

    pub fn parameters(&self) -> Parameters {
        self.layout
            .unflatten(&self.values)
            .expect("length checked at construction")
    }

    pub fn from_parameters(layout: Arc<Layout>, p: &Parameters) -> Result<Self> {
        let values = layout.flatten(p)?;
        Ok(Self { layout, values })
    }

    /// Every value by name, in layout order.
    pub fn named(&self) -> Vec<(String, f64)> {
        self.layout
            .params()
            .iter()
            .zip(&self.values)
            .map(|(p, v)| (p.name.clone(), *v))
            .collect()
    }

    pub fn from_named(layout: Arc<Layout>, named: &BTreeMap<String, f64>) -> Result<Self> {
        let mut values = vec![0.0; layout.len()];
        for (i, p) in layout.params().iter().enumerate() {
            values[i] = *named
                .get(&p.name)
                .ok_or_else(|| Error::Spec(format!("missing parameter `{}`", p.name)))?;
        }
        if named.len() != layout.len() {
            let extra = named
                .keys()
                .find(|k| layout.index_of(k).is_none())
                .cloned()
                .unwrap_or_default();
            return Err(Error::Spec(format!("unknown parameter `{extra}`")));
        }
        Ok(Self { layout, values })
    }

    /// Process-model state (scalars and field realizations) at these values.
    pub fn process_state(&self) -> ProcessState {
        let p = self.parameters();
        let fields: BTreeMap<String, FieldRealization> = p
            .fields
            .into_iter()
            .map(|(k, v)| (k, FieldRealization { node_values: v }))
            .collect();
        ProcessState {
            params: p.scalars,
            fields,
        }
    }
}
