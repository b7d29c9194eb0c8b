//! Synthetic Gaussian random fields, train/test splits, RMSE scoring and the simulate,
//! estimate, predict, score experiment loop.

use std::io::Write;
use std::time::Instant;

use faer::{Mat, Side};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{estimate, estimate_repeat_average, LikelihoodConfig, SubsampleSpec};
use crate::geometry::{Dataset, Location};
use crate::kernels::CovarianceModel;
use crate::kriging::{krige_predict, PredictionRequest};
use crate::sparse::{assemble, factorize_with, FactorOptions};

/// Largest field simulated through a dense Cholesky factor.
pub const DENSE_SIMULATION_LIMIT: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationSpec {
    Explicit(Vec<Location>),
    /// `n` points uniform on the unit square.
    Uniform {
        n: usize,
        seed: u64,
    },
}

impl LocationSpec {
    pub fn generate(&self) -> Vec<Location> {
        match self {
            LocationSpec::Explicit(v) => v.clone(),
            LocationSpec::Uniform { n, seed } => uniform_locations(*n, *seed),
        }
    }
}

pub fn uniform_locations(n: usize, seed: u64) -> Vec<Location> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Location::new(rng.random(), rng.random()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub locations: LocationSpec,
    pub model: CovarianceModel,
    /// Seed of the standard normal draws.
    pub seed: u64,
}

/// Draws `z = L ε` with `L L^T` the model covariance (nugget included) at the locations.
///
/// Up to [`DENSE_SIMULATION_LIMIT`] points the dense Cholesky factor is used. Larger fields
/// need a compactly supported model and go through the sparse factor, which is equally exact.
pub fn simulate_grf(spec: &SimulationSpec) -> Result<Dataset> {
    let locations = spec.locations.generate();
    let n = locations.len();
    if n == 0 {
        return Err(Error::config("cannot simulate a field with no locations"));
    }
    spec.model.validate()?;
    let placeholder = Dataset::new(locations, vec![0.0; n])?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let values = if n <= DENSE_SIMULATION_LIMIT {
        dense_draw(&placeholder, &spec.model, &eps)?
    } else if spec.model.has_compact_support() {
        let k = assemble(&placeholder, &spec.model, None)?;
        let options = FactorOptions {
            allow_dense: false,
            ..FactorOptions::default()
        };
        factorize_with(&k, options)?.lower_mul(&eps)?
    } else {
        return Err(Error::Size(format!(
            "{n} locations exceed the dense simulation limit of {DENSE_SIMULATION_LIMIT}; \
             larger fields need a compactly supported model"
        )));
    };
    Ok(placeholder.with_values(values))
}

fn dense_draw(data: &Dataset, model: &CovarianceModel, eps: &[f64]) -> Result<Vec<f64>> {
    let cov = model.covariance()?;
    let locs = data.locations();
    let n = locs.len();
    let k = Mat::<f64>::from_fn(n, n, |i, j| cov.at(locs[i].distance(&locs[j])));
    let llt = k.llt(Side::Lower).map_err(|e| match e {
        faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index } => {
            Error::NotPositiveDefinite {
                pivot: index,
                value: f64::NAN,
            }
        }
    })?;
    let l = llt.L();
    let e = Mat::<f64>::from_fn(n, 1, |i, _| eps[i]);
    let z = l * e;
    Ok((0..n).map(|i| z[(i, 0)]).collect())
}

/// Disjoint uniform split into `(train, test)` with `n_holdout` test rows; both keep the
/// original row order.
pub fn holdout_split(dataset: &Dataset, n_holdout: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if n_holdout == 0 || n_holdout >= n {
        return Err(Error::config(format!(
            "holdout size must lie in [1, {}), got {n_holdout}",
            n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = vec![false; n];
    for i in index::sample(&mut rng, n, n_holdout) {
        test[i] = true;
    }
    let (te, tr): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| test[i]);
    Ok((dataset.subset(&tr), dataset.subset(&te)))
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Dimension {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::config("rmse of empty vectors"));
    }
    let ss: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).powi(2))
        .sum();
    Ok((ss / actual.len() as f64).sqrt())
}

/// Grid of taper ranges and subsample sizes evaluated on simulated fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub truth: CovarianceModel,
    /// Field size, holdouts included.
    pub n: usize,
    pub n_holdout: usize,
    pub thetas: Vec<f64>,
    /// Rows used for estimation; sizes at or above the training size use every training row.
    pub subsample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Estimation settings; `theta` and `seed` are overwritten per cell.
    pub estimation: LikelihoodConfig,
    #[serde(default)]
    pub trim_gamma: f64,
    #[serde(default = "one")]
    pub repeats: usize,
    /// Timing columns are left empty unless requested, keeping the table reproducible.
    #[serde(default)]
    pub record_timing: bool,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreReport {
    pub theta: f64,
    pub subsample: usize,
    pub seed: u64,
    pub nugget_flag: bool,
    pub rmse: f64,
    pub n_holdout: usize,
    pub fit_seconds: Option<f64>,
    pub predict_seconds: Option<f64>,
    /// Stored lower-triangle entries of the training covariance used for prediction.
    pub nnz: usize,
    pub params: crate::kernels::CovarianceParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellFailure {
    pub theta: f64,
    pub subsample: usize,
    pub seed: u64,
    pub nugget_flag: bool,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub reports: Vec<ScoreReport>,
    pub failures: Vec<CellFailure>,
}

/// Cell seed: the master seed mixed with a hash of the cell index.
fn cell_seed(master: u64, cell: usize) -> u64 {
    let mut x = (cell as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    master ^ x ^ (x >> 31)
}

/// Runs simulate, split, estimate, predict and score for every `(seed, theta, size)` cell.
/// Fields and splits depend on the seed only, so cells sharing a seed see the same data.
/// Cell failures are recorded and the remaining cells still run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    if config.thetas.is_empty() || config.subsample_sizes.is_empty() || config.seeds.is_empty() {
        return Err(Error::config("experiment grid has an empty axis"));
    }
    if config.thetas.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::config("taper ranges must be finite and > 0"));
    }
    if config.n_holdout == 0 || config.n_holdout >= config.n {
        return Err(Error::config("holdout size must lie in [1, n)"));
    }
    config.truth.validate()?;
    let nugget_flag = config.truth.params.nugget > 0.0;

    let fields: Vec<Result<(Dataset, Dataset)>> = config
        .seeds
        .iter()
        .map(|&seed| {
            let spec = SimulationSpec {
                locations: LocationSpec::Uniform { n: config.n, seed },
                model: config.truth,
                seed: seed.wrapping_add(1),
            };
            holdout_split(
                &simulate_grf(&spec)?,
                config.n_holdout,
                seed.wrapping_add(2),
            )
        })
        .collect();

    let mut cells = Vec::new();
    for (s, &seed) in config.seeds.iter().enumerate() {
        for &theta in &config.thetas {
            for &size in &config.subsample_sizes {
                cells.push((s, seed, theta, size));
            }
        }
    }
    let results: Vec<std::result::Result<ScoreReport, CellFailure>> = cells
        .par_iter()
        .enumerate()
        .map(|(c, &(s, seed, theta, size))| {
            let fail = |e: Error| CellFailure {
                theta,
                subsample: size,
                seed,
                nugget_flag,
                message: e.to_string(),
            };
            let (train, test) = fields[s]
                .as_ref()
                .map_err(|e| fail(Error::Estimation(e.to_string())))?;
            let cfg = LikelihoodConfig {
                theta,
                seed: cell_seed(seed, c),
                ..config.estimation.clone()
            };
            let t = Instant::now();
            let fit = if size < train.len() {
                let spec = SubsampleSpec {
                    trim_gamma: config.trim_gamma,
                    size,
                    repeats: config.repeats,
                    seed: cfg.seed,
                };
                estimate_repeat_average(train, &cfg, &spec)
            } else {
                estimate(train, &cfg)
            }
            .map_err(fail)?;
            let fit_seconds = t.elapsed().as_secs_f64();
            let request = PredictionRequest {
                training: train,
                model: fit.model,
                targets: test.locations(),
                mean: cfg.mean,
            };
            let pred = krige_predict(&request).map_err(fail)?;
            let score = rmse(&pred.values, test.values()).map_err(fail)?;
            Ok(ScoreReport {
                theta,
                subsample: size.min(train.len()),
                seed,
                nugget_flag,
                rmse: score,
                n_holdout: test.len(),
                fit_seconds: config.record_timing.then_some(fit_seconds),
                predict_seconds: config
                    .record_timing
                    .then_some(pred.factor_seconds + pred.predict_seconds),
                nnz: pred.nnz,
                params: fit.params(),
            })
        })
        .collect();

    let mut outcome = ExperimentOutcome {
        reports: Vec::new(),
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok(rep) => outcome.reports.push(rep),
            Err(f) => outcome.failures.push(f),
        }
    }
    Ok(outcome)
}

/// CSV with header `theta,subsample,seed,nugget_flag,rmse,fit_seconds,predict_seconds,nnz`.
/// Failed cells follow the scored rows with every result column left empty.
pub fn write_experiment_csv<W: Write>(outcome: &ExperimentOutcome, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "theta",
        "subsample",
        "seed",
        "nugget_flag",
        "rmse",
        "fit_seconds",
        "predict_seconds",
        "nnz",
    ])?;
    let opt = |v: Option<f64>| v.map(|s| s.to_string()).unwrap_or_default();
    for r in &outcome.reports {
        out.write_record([
            r.theta.to_string(),
            r.subsample.to_string(),
            r.seed.to_string(),
            r.nugget_flag.to_string(),
            r.rmse.to_string(),
            opt(r.fit_seconds),
            opt(r.predict_seconds),
            r.nnz.to_string(),
        ])?;
    }
    for f in &outcome.failures {
        out.write_record([
            f.theta.to_string(),
            f.subsample.to_string(),
            f.seed.to_string(),
            f.nugget_flag.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{EstimationModel, FreeParams};
    use crate::kernels::{CovarianceParams, TaperFamily, TaperSpec};

    fn matern(sill: f64, range: f64, nu: f64, nugget: f64) -> CovarianceModel {
        CovarianceModel::matern(CovarianceParams::new(sill, range, nu, nugget).unwrap()).unwrap()
    }

    fn uniform(n: usize, model: CovarianceModel, seed: u64) -> SimulationSpec {
        SimulationSpec {
            locations: LocationSpec::Uniform {
                n,
                seed: 1000 + seed,
            },
            model,
            seed,
        }
    }

    #[test]
    fn tiny_variance_gives_tiny_values() {
        let d = simulate_grf(&uniform(300, matern(1e-12, 0.1, 1.0, 0.0), 1)).unwrap();
        assert!(d.values().iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = simulate_grf(&uniform(500, matern(1.0, 0.1, 1.0, 0.1), 2)).unwrap();
        let b = simulate_grf(&uniform(500, matern(1.0, 0.1, 1.0, 0.1), 2)).unwrap();
        let c = simulate_grf(&uniform(500, matern(1.0, 0.1, 1.0, 0.1), 3)).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn sample_variance_near_total_variance() {
        let mut ok = 0;
        for seed in 0..20 {
            let d = simulate_grf(&uniform(2000, matern(1.0, 0.05, 1.0, 0.0), seed)).unwrap();
            let m = d.mean();
            let var = d.values().iter().map(|v| (v - m).powi(2)).sum::<f64>() / 1999.0;
            ok += (0.7..=1.3).contains(&var) as usize;
        }
        assert!(ok >= 19, "{ok}/20");
    }

    #[test]
    fn duplicate_free_but_singular_fails() {
        let locs = vec![
            Location::new(0.2, 0.2),
            Location::new(0.2 + 1e-13, 0.2),
            Location::new(0.8, 0.8),
        ];
        let spec = SimulationSpec {
            locations: LocationSpec::Explicit(locs),
            model: matern(1.0, 0.3, 2.5, 0.0),
            seed: 0,
        };
        assert!(matches!(
            simulate_grf(&spec),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn large_plain_matern_rejected() {
        let spec = uniform(DENSE_SIMULATION_LIMIT + 1, matern(1.0, 0.1, 1.0, 0.0), 0);
        assert!(matches!(simulate_grf(&spec), Err(Error::Size(_))));
    }

    #[test]
    fn holdout_examples() {
        let d = simulate_grf(&uniform(50, matern(1.0, 0.1, 0.5, 0.0), 4)).unwrap();
        let (train, test) = holdout_split(&d, 49, 1).unwrap();
        assert_eq!((train.len(), test.len()), (1, 49));
        let (train, test) = holdout_split(&d, 20, 9).unwrap();
        let mut merged: Vec<(u64, u64, u64)> = train
            .locations()
            .iter()
            .zip(train.values())
            .chain(test.locations().iter().zip(test.values()))
            .map(|(p, v)| (p.x.to_bits(), p.y.to_bits(), v.to_bits()))
            .collect();
        let mut orig: Vec<(u64, u64, u64)> = d
            .locations()
            .iter()
            .zip(d.values())
            .map(|(p, v)| (p.x.to_bits(), p.y.to_bits(), v.to_bits()))
            .collect();
        merged.sort_unstable();
        orig.sort_unstable();
        assert_eq!(merged, orig);
        assert_eq!(holdout_split(&d, 20, 9).unwrap().1, test);
        assert!(holdout_split(&d, 0, 1).is_err());
        assert!(holdout_split(&d, 50, 1).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        let a = [1.0, -2.0, 3.5, 0.25];
        let b = [0.5, 1.0, -1.0, 2.0];
        let (pa, pb) = ([a[2], a[0], a[3], a[1]], [b[2], b[0], b[3], b[1]]);
        assert_eq!(rmse(&a, &b).unwrap(), rmse(&pa, &pb).unwrap());
    }

    #[test]
    fn constant_predictor_rmse_is_field_sd() {
        let mut total = 0.0;
        for seed in 0..10 {
            let d = simulate_grf(&uniform(1000, matern(2.0, 0.05, 0.5, 0.0), seed)).unwrap();
            total += rmse(&vec![0.0; d.len()], d.values()).unwrap();
        }
        assert!((total / 10.0 - 2f64.sqrt()).abs() < 0.2, "{}", total / 10.0);
    }

    #[test]
    fn sparse_path_draws_the_right_covariance() {
        // Tiny compact support: neighbors rarely overlap, so the sample variance pins the
        // marginal and the lag-pair product pins a covariance value.
        let p = CovarianceParams::new(1.0, 0.003, 0.5, 0.2).unwrap();
        let model = CovarianceModel::tapered_matern(
            p,
            TaperSpec::new(TaperFamily::Spherical, 0.006).unwrap(),
        )
        .unwrap();
        let n = DENSE_SIMULATION_LIMIT + 5000;
        let d = simulate_grf(&uniform(n, model, 5)).unwrap();
        let var = d.values().iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((var - 1.2).abs() < 0.05, "{var}");
    }

    #[test]
    fn experiment_grid_and_csv() {
        let truth = matern(1.0, 0.05, 0.5, 0.1);
        let cfg = ExperimentConfig {
            truth,
            n: 400,
            n_holdout: 50,
            thetas: vec![0.1, 0.2],
            subsample_sizes: vec![200, 400],
            seeds: vec![1],
            estimation: LikelihoodConfig {
                free: FreeParams {
                    sill: true,
                    range: true,
                    nugget: false,
                },
                initial: Some(truth.params),
                ..LikelihoodConfig::new(EstimationModel::TaperedMatern, 0.1)
            },
            trim_gamma: 0.0,
            repeats: 1,
            record_timing: false,
        };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.reports.len() + out.failures.len(), 4);
        assert!(out.failures.is_empty());
        assert!(out
            .reports
            .iter()
            .all(|r| r.nugget_flag && r.rmse >= 0.0 && r.n_holdout == 50));
        assert_eq!(out.reports[1].subsample, 350);
        let again = run_experiment(&cfg).unwrap();
        assert_eq!(again, out);
        let mut csv = Vec::new();
        write_experiment_csv(&out, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("theta,subsample,seed,nugget_flag,rmse,fit_seconds,predict_seconds,nnz")
        );
        assert!(lines.next().unwrap().starts_with("0.1,200,1,true,"));
        assert!(text.lines().nth(1).unwrap().contains(",,,"));
    }

    #[test]
    fn failed_cells_are_flagged_rows() {
        let out = ExperimentOutcome {
            reports: Vec::new(),
            failures: vec![CellFailure {
                theta: 0.25,
                subsample: 100,
                seed: 7,
                nugget_flag: false,
                message: "boom".into(),
            }],
        };
        let mut csv = Vec::new();
        write_experiment_csv(&out, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().nth(1), Some("0.25,100,7,false,,,,"));
    }

    #[test]
    fn single_cell_experiment() {
        let truth = matern(1.0, 0.05, 0.5, 0.0);
        let cfg = ExperimentConfig {
            truth,
            n: 200,
            n_holdout: 20,
            thetas: vec![0.15],
            subsample_sizes: vec![10_000],
            seeds: vec![3],
            estimation: LikelihoodConfig {
                initial: Some(truth.params),
                ..LikelihoodConfig::new(EstimationModel::TaperedMatern, 0.1)
            },
            trim_gamma: 0.0,
            repeats: 1,
            record_timing: true,
        };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.reports.len(), 1);
        assert!(out.reports[0].fit_seconds.is_some());
    }
}
