//! Simple kriging with a fitted covariance model. The training covariance is factorized once
//! and the weights `w = K⁻¹ (z - mean)` are shared by every prediction, so each target only
//! gathers the training points within the model's support.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::MeanConvention;
use crate::geometry::{build_index, Dataset, Location, SpatialIndex};
use crate::kernels::{Covariance, CovarianceModel};
use crate::sparse::{assemble, factorize};

#[derive(Clone, Debug)]
pub struct PredictionRequest<'a> {
    pub training: &'a Dataset,
    /// Must be the model the parameters were estimated with.
    pub model: CovarianceModel,
    pub targets: &'a [Location],
    pub mean: MeanConvention,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionResult {
    /// Predictions in field units, one per target.
    pub values: Vec<f64>,
    /// Stored lower-triangle entries of the training covariance.
    pub nnz: usize,
    /// Stored entries of its Cholesky factor.
    pub factor_nnz: usize,
    pub factor_bytes: usize,
    pub factor_seconds: f64,
    pub predict_seconds: f64,
}

/// Weights and index for repeated predictions from one training set.
pub struct Kriger {
    index: SpatialIndex,
    weights: Vec<f64>,
    mean: f64,
    cov: Covariance,
    nnz: usize,
    factor_nnz: usize,
    factor_bytes: usize,
}

impl Kriger {
    pub fn new(training: &Dataset, model: &CovarianceModel, mean: MeanConvention) -> Result<Self> {
        let cov = model.covariance()?;
        let mean = mean.mean_of(training);
        if !mean.is_finite() {
            return Err(Error::config("prediction mean must be finite"));
        }
        let k = assemble(training, model, None)?;
        let factor = factorize(&k)?;
        let z: Vec<f64> = training.values().iter().map(|v| v - mean).collect();
        let weights = factor.solve(&z)?;
        Ok(Self {
            index: build_index(training.locations())?,
            weights,
            mean,
            cov,
            nnz: k.nnz(),
            factor_nnz: factor.l_nnz(),
            factor_bytes: factor.memory_bytes(),
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Prediction at one target. The nugget enters the cross-covariance only at an exact
    /// coincidence with a training location.
    pub fn predict(&self, target: &Location) -> f64 {
        let cov = &self.cov;
        let mut s = 0.0;
        match cov.support_radius() {
            Some(r) => self
                .index
                .for_each_within(target, r, |i, h| s += cov.at(h) * self.weights[i]),
            None => {
                for (i, p) in self.index.locations().iter().enumerate() {
                    s += cov.at(p.distance(target)) * self.weights[i];
                }
            }
        }
        self.mean + s
    }

    pub fn predict_many(&self, targets: &[Location]) -> Vec<f64> {
        targets
            .par_iter()
            .with_min_len(256)
            .map(|t| self.predict(t))
            .collect()
    }
}

fn check_targets(targets: &[Location]) -> Result<()> {
    let bad: Vec<usize> = (0..targets.len())
        .filter(|&i| !targets[i].is_finite())
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Ingest {
            message: "non-finite prediction location".into(),
            indices: bad,
        })
    }
}

/// Predicts every target with one factorization of the training covariance.
pub fn krige_predict(request: &PredictionRequest) -> Result<PredictionResult> {
    krige_batch(request, request.targets.len().max(1))
}

/// As [`krige_predict`], streaming the targets in chunks of `chunk_size`. Each prediction is
/// computed independently, so the output does not depend on the chunk size.
pub fn krige_batch(request: &PredictionRequest, chunk_size: usize) -> Result<PredictionResult> {
    if chunk_size == 0 {
        return Err(Error::config("chunk size must be >= 1"));
    }
    check_targets(request.targets)?;
    let t = Instant::now();
    let kriger = Kriger::new(request.training, &request.model, request.mean)?;
    let factor_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let mut values = Vec::with_capacity(request.targets.len());
    for chunk in request.targets.chunks(chunk_size) {
        values.extend(kriger.predict_many(chunk));
    }
    Ok(PredictionResult {
        values,
        nnz: kriger.nnz,
        factor_nnz: kriger.factor_nnz,
        factor_bytes: kriger.factor_bytes,
        factor_seconds,
        predict_seconds: t.elapsed().as_secs_f64(),
    })
}
