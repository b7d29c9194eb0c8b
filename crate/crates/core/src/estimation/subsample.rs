use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    estimate, estimate_from, initial_params, EstimationModel, EstimationResult, LikelihoodConfig,
    RepeatEstimate,
};
use crate::error::{Error, Result};
use crate::geometry::Dataset;
use crate::kernels::CovarianceParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleSpec {
    /// Observations outside the empirical `[gamma, 1 - gamma]` quantiles are dropped first.
    pub trim_gamma: f64,
    pub size: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl SubsampleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.trim_gamma) {
            return Err(Error::config(format!(
                "trim quantile must lie in [0, 0.5), got {}",
                self.trim_gamma
            )));
        }
        if self.size < 30 {
            return Err(Error::config(format!(
                "subsample size must be >= 30, got {}",
                self.size
            )));
        }
        if self.repeats == 0 {
            return Err(Error::config("at least one repeat is required"));
        }
        Ok(())
    }
}

/// Empirical quantile by linear interpolation between order statistics (`sorted` ascending).
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Ascending indices of the rows whose value lies in `[q(gamma), q(1 - gamma)]`.
pub fn quantile_trim_indices(dataset: &Dataset, gamma: f64) -> Result<Vec<usize>> {
    if !(0.0..0.5).contains(&gamma) {
        return Err(Error::domain(format!(
            "trim quantile must lie in [0, 0.5), got {gamma}"
        )));
    }
    let mut sorted = dataset.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (quantile(&sorted, gamma), quantile(&sorted, 1.0 - gamma));
    let kept: Vec<usize> = (0..dataset.len())
        .filter(|&i| (lo..=hi).contains(&dataset.values()[i]))
        .collect();
    if kept.is_empty() {
        return Err(Error::Estimation(format!(
            "trimming at {gamma} removed every observation"
        )));
    }
    Ok(kept)
}

/// Keeps the observations inside the closed empirical `[gamma, 1 - gamma]` quantile interval.
pub fn quantile_trim(dataset: &Dataset, gamma: f64) -> Result<Dataset> {
    Ok(dataset.subset(&quantile_trim_indices(dataset, gamma)?))
}

pub(crate) fn geometric_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut k) = (0.0, 0usize);
    for v in values {
        s += v.ln();
        k += 1;
    }
    (s / k as f64).exp()
}

/// Trims, then fits `spec.repeats` independent uniform subsamples of `spec.size` rows and
/// combines the estimates by their geometric mean. Repeat `r` (1-based) draws with seed
/// `spec.seed ^ r`. Repeats that fail are dropped.
pub fn estimate_repeat_average(
    dataset: &Dataset,
    config: &LikelihoodConfig,
    spec: &SubsampleSpec,
) -> Result<EstimationResult> {
    spec.validate()?;
    config.validate()?;
    if dataset.len() <= spec.size {
        return Err(Error::config(format!(
            "subsample size {} must be smaller than the dataset ({} rows)",
            spec.size,
            dataset.len()
        )));
    }
    let kept = quantile_trim_indices(dataset, spec.trim_gamma)?;
    if kept.len() < spec.size {
        return Err(Error::config(format!(
            "only {} rows survive trimming, fewer than the subsample size",
            kept.len()
        )));
    }

    let outcomes: Vec<Result<RepeatEstimate>> = (1..=spec.repeats as u64)
        .into_par_iter()
        .map(|r| {
            let seed = spec.seed ^ r;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = index::sample(&mut rng, kept.len(), spec.size)
                .into_iter()
                .map(|i| kept[i])
                .collect();
            idx.sort_unstable();
            let fit = estimate(
                &dataset.subset(&idx),
                &LikelihoodConfig {
                    seed,
                    ..config.clone()
                },
            )?;
            Ok(RepeatEstimate {
                params: fit.params(),
                neg_loglik: fit.neg_loglik,
                n_evals: fit.n_evals,
                converged: fit.converged,
                seed,
                subsample_indices: idx,
            })
        })
        .collect();

    let mut errors = Vec::new();
    let mut repeats = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) if r.neg_loglik.is_finite() => repeats.push(r),
            Ok(_) => errors.push("non-finite objective".to_string()),
            Err(e) => errors.push(e.to_string()),
        }
    }
    if repeats.is_empty() {
        return Err(Error::Estimation(format!(
            "every repeat failed: {}",
            errors.join("; ")
        )));
    }
    let gm = |f: fn(&CovarianceParams) -> f64| geometric_mean(repeats.iter().map(|r| f(&r.params)));
    let params = if let [only] = repeats.as_slice() {
        only.params
    } else {
        CovarianceParams {
            sill: gm(|p| p.sill),
            range: gm(|p| p.range),
            smoothness: gm(|p| p.smoothness),
            nugget: gm(|p| p.nugget),
        }
    };
    let k = repeats.len() as f64;
    let single = repeats.len() == 1;
    Ok(EstimationResult {
        model: config.model_for(params)?,
        neg_loglik: repeats.iter().map(|r| r.neg_loglik).sum::<f64>() / k,
        n_evals: repeats.iter().map(|r| r.n_evals).sum(),
        converged: repeats.iter().all(|r| r.converged),
        subsample_indices: single.then(|| repeats[0].subsample_indices.clone()),
        repeats,
        trace: Vec::new(),
        seed: spec.seed,
    })
}

/// Fits every candidate Wendland order on the same subsamples and returns the order with the
/// smallest averaged negative log-likelihood (ties go to the lower order), together with the
/// per-order outcomes.
pub fn select_wendland_order(
    dataset: &Dataset,
    orders: &[u32],
    config: &LikelihoodConfig,
    spec: &SubsampleSpec,
) -> Result<(u32, Vec<(u32, Result<EstimationResult>)>)> {
    if orders.is_empty() {
        return Err(Error::config("no candidate Wendland orders"));
    }
    let mut sorted = orders.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let results: Vec<(u32, Result<EstimationResult>)> = sorted
        .iter()
        .map(|&k| {
            let cfg = LikelihoodConfig {
                model: EstimationModel::Wendland(k),
                ..config.clone()
            };
            let fit = if dataset.len() > spec.size {
                estimate_repeat_average(dataset, &cfg, spec)
            } else {
                estimate(dataset, &cfg)
            };
            (k, fit)
        })
        .collect();
    let mut best: Option<(u32, f64)> = None;
    for (k, r) in &results {
        if let Ok(fit) = r {
            if best.is_none_or(|(_, v)| fit.neg_loglik < v) {
                best = Some((*k, fit.neg_loglik));
            }
        }
    }
    match best {
        Some((k, _)) => Ok((k, results)),
        None => Err(Error::Estimation(
            "every candidate Wendland order failed".into(),
        )),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilizeCaps {
    pub max_theta: f64,
    pub max_iterations: usize,
    /// Relative change below which every free parameter counts as settled.
    pub tolerance: f64,
}

impl Default for StabilizeCaps {
    fn default() -> Self {
        Self {
            max_theta: 0.3,
            max_iterations: 12,
            tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilizeStep {
    pub iteration: usize,
    pub size: usize,
    pub theta: f64,
    pub params: CovarianceParams,
    pub neg_loglik: f64,
    /// Largest relative change of a free parameter against the previous iteration.
    pub max_relative_change: Option<f64>,
}

fn max_relative_change(a: &CovarianceParams, b: &CovarianceParams, mask: [bool; 3]) -> f64 {
    let floor = 1e-10 * a.sill.max(b.sill);
    [(a.sill, b.sill), (a.range, b.range), (a.nugget, b.nugget)]
        .iter()
        .zip(mask)
        .filter(|(_, free)| *free)
        .map(|(&(x, y), _)| {
            let scale = x.abs().max(y.abs());
            if scale <= floor {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Refits on growing nested subsamples until the free parameters change by less than
/// `caps.tolerance` between iterations. The subsample doubles until it covers the data, then
/// the taper range grows by half up to `caps.max_theta`. Each fit starts from the previous one.
/// Without stability the last fit is returned with `converged = false`.
pub fn stabilize_estimate(
    dataset: &Dataset,
    config: &LikelihoodConfig,
    initial_size: usize,
    caps: &StabilizeCaps,
) -> Result<(EstimationResult, Vec<StabilizeStep>)> {
    config.validate()?;
    if initial_size == 0 || caps.max_iterations == 0 || !(caps.tolerance > 0.0) {
        return Err(Error::config(
            "initial size, iteration cap and tolerance must be positive",
        ));
    }
    let n = dataset.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));

    let mut cfg = config.clone();
    let mut size = initial_size.min(n);
    let mut log: Vec<StabilizeStep> = Vec::new();
    let mut start: Option<CovarianceParams> = None;
    loop {
        let mut idx = perm[..size].to_vec();
        idx.sort_unstable();
        let sub = dataset.subset(&idx);
        let from = match start {
            Some(p) => p,
            None => initial_params(&sub, &cfg)?,
        };
        let mut fit = estimate_from(&sub, &cfg, from)?;
        let change = log
            .last()
            .map(|prev| max_relative_change(&prev.params, &fit.params(), cfg.free_mask()));
        log.push(StabilizeStep {
            iteration: log.len() + 1,
            size,
            theta: cfg.theta,
            params: fit.params(),
            neg_loglik: fit.neg_loglik,
            max_relative_change: change,
        });
        if size < n {
            fit.subsample_indices = Some(idx);
        }
        let stable =
            (log.len() == 1 && n <= initial_size) || change.is_some_and(|c| c < caps.tolerance);
        if stable {
            return Ok((fit, log));
        }
        let can_grow = size < n || cfg.theta < caps.max_theta;
        if log.len() >= caps.max_iterations || !can_grow {
            fit.converged = false;
            return Ok((fit, log));
        }
        if size < n {
            size = (2 * size).min(n);
        } else {
            cfg.theta = (1.5 * cfg.theta).min(caps.max_theta);
        }
        start = Some(fit.params());
    }
}
