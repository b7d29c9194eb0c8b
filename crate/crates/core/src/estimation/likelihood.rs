use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::nelder_mead::NelderMeadOptions;
use crate::error::{Error, Result};
use crate::geometry::Dataset;
use crate::kernels::{select_taper, CovarianceModel, CovarianceParams, TaperSpec};
use crate::sparse::{CovarianceStructure, FactorOptions, SymbolicCholesky};

/// Covariance family fitted by the approximate likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationModel {
    /// Matérn times the taper chosen from the smoothness; the taper range is fixed.
    TaperedMatern,
    /// Wendland function of the given order with its support fixed to the taper range.
    Wendland(u32),
}

/// How the mean is removed before fitting and restored after prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanConvention {
    /// Subtract the sample mean of the training values.
    Centered,
    /// Subtract a fixed, known mean.
    Known(f64),
}

impl MeanConvention {
    pub fn mean_of(&self, dataset: &Dataset) -> f64 {
        match *self {
            MeanConvention::Centered => dataset.mean(),
            MeanConvention::Known(m) => m,
        }
    }
}

/// Which covariance parameters the optimizer may move. The smoothness is always fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreeParams {
    pub sill: bool,
    pub range: bool,
    pub nugget: bool,
}

impl Default for FreeParams {
    fn default() -> Self {
        Self {
            sill: true,
            range: true,
            nugget: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub model: EstimationModel,
    /// Taper range, or the Wendland support.
    pub theta: f64,
    #[serde(default)]
    pub free: FreeParams,
    /// Starting point; `None` derives one from the empirical variogram of the data being fitted.
    #[serde(default)]
    pub initial: Option<CovarianceParams>,
    #[serde(default)]
    pub optimizer: NelderMeadOptions,
    #[serde(default = "centered")]
    pub mean: MeanConvention,
    #[serde(default)]
    pub seed: u64,
}

fn centered() -> MeanConvention {
    MeanConvention::Centered
}

impl LikelihoodConfig {
    pub fn new(model: EstimationModel, theta: f64) -> Self {
        Self {
            model,
            theta,
            free: FreeParams::default(),
            initial: None,
            optimizer: NelderMeadOptions::default(),
            mean: MeanConvention::Centered,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(Error::config(format!(
                "taper range must be finite and > 0, got {}",
                self.theta
            )));
        }
        if let EstimationModel::Wendland(k) = self.model {
            if !(1..=3).contains(&k) {
                return Err(Error::config(format!(
                    "Wendland order must be 1, 2 or 3, got {k}"
                )));
            }
        }
        if let MeanConvention::Known(m) = self.mean {
            if !m.is_finite() {
                return Err(Error::config("known mean must be finite"));
            }
        }
        if self.free_mask().iter().all(|f| !f) {
            return Err(Error::config("at least one parameter must be free"));
        }
        if let Some(p) = &self.initial {
            p.validate()?;
        }
        Ok(())
    }

    /// Free flags for (sill, range, nugget). The Wendland range is pinned to the support.
    pub(crate) fn free_mask(&self) -> [bool; 3] {
        let range = self.free.range && matches!(self.model, EstimationModel::TaperedMatern);
        [self.free.sill, range, self.free.nugget]
    }

    /// Covariance model this configuration assigns to `params`.
    pub fn model_for(&self, params: CovarianceParams) -> Result<CovarianceModel> {
        match self.model {
            EstimationModel::TaperedMatern => {
                let taper = TaperSpec::new(select_taper(params.smoothness)?, self.theta)?;
                CovarianceModel::tapered_matern(params, taper)
            }
            EstimationModel::Wendland(k) => CovarianceModel::wendland(
                k,
                CovarianceParams {
                    range: self.theta,
                    ..params
                },
            ),
        }
    }
}

/// Negative log-likelihood on a fixed dataset, reusing the sparsity pattern and symbolic
/// analysis across parameter values. Safe to evaluate from several threads at once.
pub struct Likelihood {
    config: LikelihoodConfig,
    structure: CovarianceStructure,
    symbolic: Arc<SymbolicCholesky>,
    z: Vec<f64>,
    mean: f64,
}

impl Likelihood {
    pub fn new(dataset: &Dataset, config: &LikelihoodConfig) -> Result<Self> {
        config.validate()?;
        let mean = config.mean.mean_of(dataset);
        let z = dataset.values().iter().map(|v| v - mean).collect();
        let structure = CovarianceStructure::new(dataset.locations(), Some(config.theta))?;
        let symbolic = Arc::new(SymbolicCholesky::analyze(
            structure.pattern(),
            FactorOptions::default(),
        )?);
        Ok(Self {
            config: config.clone(),
            structure,
            symbolic,
            z,
            mean,
        })
    }

    pub fn config(&self) -> &LikelihoodConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    /// Mean removed from the data.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn nnz(&self) -> usize {
        self.structure.pattern().nnz()
    }

    /// `(logdet K + zᵀK⁻¹z + n ln 2π) / 2`, or +infinity when `K` fails to factorize.
    pub fn eval(&self, params: CovarianceParams) -> Result<f64> {
        let model = self.config.model_for(params)?;
        let k = self.structure.assemble(&model.covariance()?);
        let factor = match self.symbolic.factor(&k) {
            Ok(f) => f,
            Err(Error::NotPositiveDefinite { .. }) => return Ok(f64::INFINITY),
            Err(e) => return Err(e),
        };
        let w = factor.solve(&self.z)?;
        let quad: f64 = self.z.iter().zip(&w).map(|(a, b)| a * b).sum();
        let value = 0.5 * (factor.logdet() + quad + self.n() as f64 * (2.0 * PI).ln());
        Ok(if value.is_finite() {
            value
        } else {
            f64::INFINITY
        })
    }
}

/// Gaussian negative log-likelihood of the mean-corrected data under the configured
/// approximate covariance. Factorization failure yields +infinity.
pub fn neg_loglik(
    dataset: &Dataset,
    config: &LikelihoodConfig,
    params: CovarianceParams,
) -> Result<f64> {
    params.validate()?;
    Likelihood::new(dataset, config)?.eval(params)
}

/// Maps free parameters to and from the optimizer's log-scale coordinates.
pub(crate) struct Packing {
    mask: [bool; 3],
    base: CovarianceParams,
}

impl Packing {
    pub(crate) fn new(config: &LikelihoodConfig, mut base: CovarianceParams) -> Self {
        let mask = config.free_mask();
        if let EstimationModel::Wendland(_) = config.model {
            base.range = config.theta;
        }
        // A free nugget cannot start at zero on the log scale.
        if mask[2] && base.nugget < 1e-3 * base.sill {
            base.nugget = 1e-3 * base.sill;
        }
        Self { mask, base }
    }

    pub(crate) fn base(&self) -> CovarianceParams {
        self.base
    }

    pub(crate) fn pack(&self, p: &CovarianceParams) -> Vec<f64> {
        [p.sill, p.range, p.nugget]
            .iter()
            .zip(self.mask)
            .filter(|(_, free)| *free)
            .map(|(v, _)| v.ln())
            .collect()
    }

    pub(crate) fn unpack(&self, x: &[f64]) -> CovarianceParams {
        let mut vals = [self.base.sill, self.base.range, self.base.nugget];
        let mut it = x.iter();
        for (v, free) in vals.iter_mut().zip(self.mask) {
            if free {
                *v = it.next().expect("packed length matches mask").exp();
            }
        }
        CovarianceParams {
            sill: vals[0],
            range: vals[1],
            nugget: vals[2],
            smoothness: self.base.smoothness,
        }
    }
}
