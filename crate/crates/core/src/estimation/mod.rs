//! Approximate-likelihood estimation: the tapered (or Wendland) Gaussian likelihood, a
//! Nelder-Mead driver in log-parameter space, and subsample-based estimation procedures for
//! datasets too large to fit directly.

mod likelihood;
mod nelder_mead;
mod report;
mod subsample;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Dataset;
use crate::kernels::{CovarianceModel, CovarianceParams};
use crate::variogram::{empirical_variogram_with, guess_initial_params, VariogramConfig};

pub use likelihood::{
    neg_loglik, EstimationModel, FreeParams, Likelihood, LikelihoodConfig, MeanConvention,
};
pub use nelder_mead::{nelder_mead, NelderMeadOptions, NelderMeadResult};
pub use report::{EstimationReport, OrderScore, RepeatReport, TaperReport};
pub use subsample::{
    estimate_repeat_average, quantile_trim, quantile_trim_indices, select_wendland_order,
    stabilize_estimate, StabilizeCaps, StabilizeStep, SubsampleSpec,
};

use likelihood::Packing;
#[cfg(test)]
use subsample::geometric_mean;

/// Outcome of one optimization.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepeatEstimate {
    pub params: CovarianceParams,
    pub neg_loglik: f64,
    pub n_evals: usize,
    pub converged: bool,
    /// Generator seed used to draw the subsample.
    pub seed: u64,
    /// Rows of the input dataset that were fitted, in ascending order.
    pub subsample_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationResult {
    /// Fitted model, taper included.
    pub model: CovarianceModel,
    pub neg_loglik: f64,
    pub n_evals: usize,
    pub converged: bool,
    /// Rows of the input dataset used for a single fit; `None` when all rows were used or the
    /// estimate combines several subsamples (see `repeats`).
    pub subsample_indices: Option<Vec<usize>>,
    /// Per-repeat results behind an averaged estimate; empty for a single fit.
    pub repeats: Vec<RepeatEstimate>,
    /// Best objective value per optimizer iteration (single fits only).
    pub trace: Vec<f64>,
    pub seed: u64,
}

impl EstimationResult {
    pub fn params(&self) -> CovarianceParams {
        self.model.params
    }
}

/// Starting point for a fit: the configured one, or a variogram-based guess.
pub fn initial_params(dataset: &Dataset, config: &LikelihoodConfig) -> Result<CovarianceParams> {
    if let Some(p) = config.initial {
        return Ok(p);
    }
    let vg_config = VariogramConfig {
        seed: config.seed,
        ..VariogramConfig::default()
    };
    let vg = empirical_variogram_with(dataset, &vg_config)?;
    Ok(guess_initial_params(&vg)?.params)
}

/// Maximizes the approximate likelihood on all of `dataset`.
pub fn estimate(dataset: &Dataset, config: &LikelihoodConfig) -> Result<EstimationResult> {
    let start = initial_params(dataset, config)?;
    estimate_from(dataset, config, start)
}

pub(crate) fn estimate_from(
    dataset: &Dataset,
    config: &LikelihoodConfig,
    start: CovarianceParams,
) -> Result<EstimationResult> {
    let lik = Likelihood::new(dataset, config)?;
    let packing = Packing::new(config, start);
    let objective = |x: &[f64]| lik.eval(packing.unpack(x)).unwrap_or(f64::INFINITY);
    let nm = nelder_mead(objective, &packing.pack(&packing.base()), &config.optimizer)?;
    let params = packing.unpack(&nm.x);
    if !nm.value.is_finite() {
        return Err(Error::Estimation(
            "optimizer ended at a non-finite objective".into(),
        ));
    }
    Ok(EstimationResult {
        model: config.model_for(params)?,
        neg_loglik: nm.value,
        n_evals: nm.n_evals,
        converged: nm.converged,
        subsample_indices: None,
        repeats: Vec::new(),
        trace: nm.trace,
        seed: config.seed,
    })
}
