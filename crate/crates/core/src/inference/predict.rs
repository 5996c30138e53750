//! Prediction grids of the fitted log-intensity with delta-method errors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compiled::CompiledModel;
use super::fit::FitResult;
use crate::error::{Error, Result};
use crate::mesh::Point2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    pub target: String,
    pub include_bias: bool,
    /// Cell side length.
    pub resolution: f64,
    pub points: Vec<Point2D>,
    /// `η̂(s)` at each point.
    pub mean: Vec<f64>,
    /// Delta-method standard error; `None` without usable curvature.
    pub se: Vec<Option<f64>>,
    /// Cell centres that fell outside the domain.
    pub dropped: usize,
}

impl PredictionGrid {
    pub fn cell_area(&self) -> f64 {
        self.resolution * self.resolution
    }

    /// `Σ exp(η̂) · cell area`, a grid estimate of the expected count.
    pub fn integrated_intensity(&self) -> f64 {
        self.mean.iter().map(|m| m.exp()).sum::<f64>() * self.cell_area()
    }
}

/// Cell centres of a square grid with side `resolution` covering the domain's
/// bounding box, split into those inside the domain and a count of the rest.
pub fn grid_points(model: &CompiledModel, resolution: f64) -> Result<(Vec<Point2D>, usize)> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "grid resolution must be positive, got {resolution}"
        )));
    }
    let mesh = &model.spec().mesh;
    let (lo, hi) = mesh.bbox();
    let nx = ((hi.x - lo.x) / resolution).ceil().max(1.0) as usize;
    let ny = ((hi.y - lo.y) / resolution).ceil().max(1.0) as usize;
    let mut inside = Vec::new();
    let mut dropped = 0;
    for j in 0..ny {
        for i in 0..nx {
            let p = Point2D::new(
                lo.x + (i as f64 + 0.5) * resolution,
                lo.y + (j as f64 + 0.5) * resolution,
            );
            if mesh.contains(p) {
                inside.push(p);
            } else {
                dropped += 1;
            }
        }
    }
    Ok((inside, dropped))
}

/// Fitted log-intensity of a prediction target on a regular grid. The
/// target's observation-bias terms are left out unless `include_bias`.
pub fn predict_grid(
    model: &CompiledModel,
    fit: &FitResult,
    resolution: f64,
    target: &str,
    include_bias: bool,
) -> Result<PredictionGrid> {
    if fit.optimum.values().len() != model.layout().len() {
        return Err(Error::InvalidArgument(
            "fit does not belong to this model".into(),
        ));
    }
    if !fit.converged {
        log::warn!("predicting from a fit that did not converge");
    }
    let t = model.spec().target(target)?;
    let extra = (include_bias && !t.bias.terms.is_empty()).then_some(&t.bias);
    let (points, dropped) = grid_points(model, resolution)?;
    if dropped > 0 {
        log::info!("{dropped} grid points outside the domain were dropped");
    }
    let th = fit.optimum.values();
    let cells: Vec<(f64, Option<f64>)> = points
        .par_iter()
        .map(|&p| -> Result<(f64, Option<f64>)> {
            let form = model.predictor_form(&t.predictor, extra, p)?;
            let var = fit.linear_variance(model, &form.gradient_terms(th));
            Ok((form.eval(th), var.map(f64::sqrt)))
        })
        .collect::<Result<_>>()?;
    let (mean, se) = cells.into_iter().unzip();
    Ok(PredictionGrid {
        target: target.to_string(),
        include_bias,
        resolution,
        points,
        mean,
        se,
        dropped,
    })
}
