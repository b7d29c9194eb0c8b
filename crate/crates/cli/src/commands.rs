//! The five workflows. Every input path is checked before any work starts, and every output
//! is a pure function of the inputs, the config and the seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use taperkrige::estimation::{
    estimate, estimate_repeat_average, quantile_trim, select_wendland_order, stabilize_estimate,
    EstimationModel, EstimationReport, LikelihoodConfig, MeanConvention, NelderMeadOptions,
    OrderScore, StabilizeCaps, SubsampleSpec,
};
use taperkrige::geometry::Dataset;
use taperkrige::io::{
    create, read_dataset_file, read_locations_file, write_dataset, write_predictions,
};
use taperkrige::kernels::{CovarianceModel, CovarianceParams};
use taperkrige::kriging::{krige_batch, PredictionRequest};
use taperkrige::simulation::{
    run_experiment, simulate_grf, write_experiment_csv, ExperimentConfig, LocationSpec,
    SimulationSpec,
};
use taperkrige::variogram::{
    empirical_variogram_with, guess_initial_params, unit_effective_range, VariogramConfig,
};
use taperkrige::{Error, Result};

use crate::config::{
    input_path, load, EstimateConfig, EvaluateConfig, Mode, OrderChoice, PredictConfig,
    SimulateConfig, VariogramRunConfig,
};

/// Flags shared by every sub-command.
pub struct Run {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Run {
    fn base(&self) -> PathBuf {
        self.config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }

    fn prepare_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| {
            Error::config(format!(
                "cannot create output directory {}: {e}",
                self.out.display()
            ))
        })
    }

    fn seed(&self, configured: u64) -> u64 {
        self.seed.unwrap_or(configured)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Truth {
    model: CovarianceModel,
    n: usize,
    seed: u64,
}

/// Writes `data.csv` and `truth.json`.
pub fn simulate(run: &Run) -> Result<()> {
    let cfg: SimulateConfig = load(&run.config)?;
    let seed = run.seed(cfg.seed);
    let locations = match &cfg.locations {
        Some(p) => Some(input_path(&run.base(), p, "locations")?),
        None => None,
    };
    let model = cfg.model_spec().build()?;
    run.prepare_out()?;

    let locations = match (locations, cfg.n) {
        (Some(p), n) => {
            let locs = read_locations_file(&p)?;
            if n.is_some_and(|n| n != locs.len()) {
                return Err(Error::config(format!(
                    "n = {} disagrees with the {} rows of the locations file",
                    n.unwrap_or(0),
                    locs.len()
                )));
            }
            LocationSpec::Explicit(locs)
        }
        (None, Some(n)) => LocationSpec::Uniform { n, seed },
        (None, None) => return Err(Error::config("either n or locations is required")),
    };
    let spec = SimulationSpec {
        locations,
        model,
        seed: seed.wrapping_add(1),
    };
    let data = simulate_grf(&spec)?;
    write_dataset(&data, create(&run.out.join("data.csv"))?)?;
    write_json(
        &run.out.join("truth.json"),
        &Truth {
            model,
            n: data.len(),
            seed,
        },
    )
}

/// Writes `variogram.csv` and, when the variogram supports one, `guess.json`.
pub fn variogram(run: &Run) -> Result<()> {
    let cfg: VariogramRunConfig = load(&run.config)?;
    let data_path = input_path(&run.base(), &cfg.data, "data")?;
    run.prepare_out()?;
    let data = read_dataset_file(&data_path)?;
    let defaults = VariogramConfig::default();
    let vg_cfg = VariogramConfig {
        max_dist: cfg.max_dist,
        n_bins: cfg.n_bins.unwrap_or(defaults.n_bins),
        max_pairs: cfg.max_pairs.unwrap_or(defaults.max_pairs),
        seed: run.seed(cfg.seed),
    };
    let vg = empirical_variogram_with(&data, &vg_cfg)?;
    vg.write_csv(create(&run.out.join("variogram.csv"))?)?;
    match guess_initial_params(&vg) {
        Ok(guess) => write_json(&run.out.join("guess.json"), &guess),
        Err(e) if e.is_numerical() => {
            eprintln!("warning: no initial guess written: {e}");
            Ok(())
        }
        Err(e) => Err(e),
    }
}

/// Starting point from the variogram of the full dataset, with the smoothness optionally
/// fixed and the range converted to keep the guessed effective range.
fn variogram_start(data: &Dataset, seed: u64, smoothness: Option<f64>) -> Result<CovarianceParams> {
    let vg = empirical_variogram_with(
        data,
        &VariogramConfig {
            seed,
            ..VariogramConfig::default()
        },
    )?;
    let guess = guess_initial_params(&vg)?;
    match smoothness {
        None => Ok(guess.params),
        Some(nu) => CovarianceParams::new(
            guess.params.sill,
            guess.effective_range / unit_effective_range(nu)?,
            nu,
            guess.params.nugget,
        ),
    }
}

fn optimizer(tolerance: Option<f64>, max_iterations: Option<usize>) -> Result<NelderMeadOptions> {
    let d = NelderMeadOptions::default();
    let opts = NelderMeadOptions {
        tolerance: tolerance.unwrap_or(d.tolerance),
        max_iterations: max_iterations.unwrap_or(d.max_iterations),
        ..d
    };
    if !(opts.tolerance > 0.0) || opts.max_iterations == 0 {
        return Err(Error::config(
            "tolerance and max_iterations must be positive",
        ));
    }
    Ok(opts)
}

/// Writes `estimate.json`, which `predict` accepts unchanged.
pub fn estimate_cmd(run: &Run) -> Result<()> {
    let cfg: EstimateConfig = load(&run.config)?;
    let data_path = input_path(&run.base(), &cfg.data, "data")?;
    let seed = run.seed(cfg.seed);
    let auto_order = match (cfg.mode, cfg.order) {
        (Mode::Tapered, None) => false,
        (Mode::Tapered, Some(_)) => {
            return Err(Error::config("order applies to mode \"wendland\" only"))
        }
        (Mode::Wendland, None | Some(OrderChoice::Named(_))) => true,
        (Mode::Wendland, Some(OrderChoice::Fixed(_))) => false,
    };
    let model = match (cfg.mode, cfg.order) {
        (Mode::Wendland, Some(OrderChoice::Fixed(k))) => EstimationModel::Wendland(k),
        (Mode::Wendland, _) => EstimationModel::Wendland(1),
        (Mode::Tapered, _) => EstimationModel::TaperedMatern,
    };
    if cfg.stabilize && (auto_order || cfg.repeats > 1) {
        return Err(Error::config(
            "stabilize needs a fixed order and a single repeat",
        ));
    }
    let mut lc = LikelihoodConfig {
        model,
        theta: cfg.theta,
        free: cfg.free,
        initial: cfg.initial,
        optimizer: optimizer(cfg.tolerance, cfg.max_iterations)?,
        mean: cfg.mean.unwrap_or(MeanConvention::Centered),
        seed,
    };
    lc.validate()?;
    run.prepare_out()?;

    let data = read_dataset_file(&data_path)?;
    lc.initial = Some(match lc.initial {
        Some(p) => CovarianceParams {
            smoothness: cfg.smoothness.unwrap_or(p.smoothness),
            ..p
        },
        None => variogram_start(&data, seed, cfg.smoothness)?,
    });
    lc.validate()?;

    let n = data.len();
    let size = cfg.size.unwrap_or(n);
    // Without subsampling, or when stabilizing, trimming applies to the data up front.
    let (data, trim_gamma) = if (size >= n || cfg.stabilize) && cfg.trim_gamma > 0.0 {
        (quantile_trim(&data, cfg.trim_gamma)?, 0.0)
    } else {
        (data, cfg.trim_gamma)
    };
    let spec = SubsampleSpec {
        trim_gamma,
        size: size.min(n),
        repeats: cfg.repeats,
        seed,
    };

    let report = if auto_order {
        let (best, outcomes) = select_wendland_order(&data, &[1, 2, 3], &lc, &spec)?;
        let mut chosen = None;
        let mut scores = Vec::new();
        for (k, r) in outcomes {
            scores.push(match &r {
                Ok(fit) => OrderScore {
                    order: k,
                    neg_loglik: Some(fit.neg_loglik),
                    error: None,
                },
                Err(e) => OrderScore {
                    order: k,
                    neg_loglik: None,
                    error: Some(e.to_string()),
                },
            });
            if k == best {
                chosen = r.ok();
            }
        }
        let fit = chosen.ok_or_else(|| Error::Estimation("selected order has no fit".into()))?;
        EstimationReport {
            order_selection: Some(scores),
            ..EstimationReport::from_result(&fit)
        }
    } else if cfg.stabilize {
        let caps = StabilizeCaps {
            max_theta: cfg.max_theta.unwrap_or(StabilizeCaps::default().max_theta),
            ..StabilizeCaps::default()
        };
        let initial_size = cfg.initial_size.or(cfg.size).unwrap_or(1000);
        let (fit, steps) = stabilize_estimate(&data, &lc, initial_size, &caps)?;
        EstimationReport {
            stabilize: Some(steps),
            ..EstimationReport::from_result(&fit)
        }
    } else if size < n {
        EstimationReport::from_result(&estimate_repeat_average(&data, &lc, &spec)?)
    } else {
        EstimationReport::from_result(&estimate(&data, &lc)?)
    };
    write_json(&run.out.join("estimate.json"), &report)
}

/// Writes `predictions.csv`.
pub fn predict(run: &Run) -> Result<()> {
    let cfg: PredictConfig = load(&run.config)?;
    let base = run.base();
    let data_path = input_path(&base, &cfg.data, "data")?;
    let model_path = input_path(&base, &cfg.model, "model")?;
    let targets_path = input_path(&base, &cfg.targets, "targets")?;
    if cfg.chunk_size == 0 {
        return Err(Error::config("chunk_size must be >= 1"));
    }
    run.prepare_out()?;

    let report: EstimationReport = load(&model_path)?;
    let model = report.to_model()?;
    let data = read_dataset_file(&data_path)?;
    let targets = read_locations_file(&targets_path)?;
    let request = PredictionRequest {
        training: &data,
        model,
        targets: &targets,
        mean: cfg.mean.unwrap_or(MeanConvention::Centered),
    };
    let result = krige_batch(&request, cfg.chunk_size)?;
    write_predictions(
        &targets,
        &result.values,
        create(&run.out.join("predictions.csv"))?,
    )
}

/// Seed of field `i` derived from the master seed.
fn field_seed(master: u64, i: usize) -> u64 {
    let mut x = master ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Writes `experiment.csv`. Failed cells become flagged rows and do not fail the run unless
/// every cell failed.
pub fn evaluate(run: &Run) -> Result<()> {
    let cfg: EvaluateConfig = load(&run.config)?;
    let seed = run.seed(cfg.seed);
    let truth = cfg.truth.build()?;
    let model = match (cfg.mode, cfg.order) {
        (Mode::Tapered, None) => EstimationModel::TaperedMatern,
        (Mode::Wendland, Some(k)) => EstimationModel::Wendland(k),
        (Mode::Tapered, Some(_)) => {
            return Err(Error::config("order applies to mode \"wendland\" only"))
        }
        (Mode::Wendland, None) => return Err(Error::config("mode \"wendland\" needs order")),
    };
    if cfg.fields == 0 {
        return Err(Error::config("fields must be >= 1"));
    }
    if !(0.0..0.5).contains(&cfg.trim_gamma) || cfg.repeats == 0 {
        return Err(Error::config(
            "trim_gamma must lie in [0, 0.5) and repeats be >= 1",
        ));
    }
    let estimation = LikelihoodConfig {
        model,
        theta: cfg.thetas.first().copied().unwrap_or(f64::NAN),
        free: cfg.free,
        initial: cfg.initial,
        optimizer: optimizer(cfg.tolerance, cfg.max_iterations)?,
        mean: cfg.mean.unwrap_or(MeanConvention::Centered),
        seed,
    };
    estimation.validate()?;
    let experiment = ExperimentConfig {
        truth,
        n: cfg.n,
        n_holdout: cfg.n_holdout,
        thetas: cfg.thetas,
        subsample_sizes: cfg.subsample_sizes,
        seeds: (0..cfg.fields).map(|i| field_seed(seed, i)).collect(),
        estimation,
        trim_gamma: cfg.trim_gamma,
        repeats: cfg.repeats,
        record_timing: cfg.record_timing,
    };
    run.prepare_out()?;

    let outcome = run_experiment(&experiment)?;
    write_experiment_csv(&outcome, create(&run.out.join("experiment.csv"))?)?;
    for f in &outcome.failures {
        eprintln!(
            "warning: cell theta={} subsample={} seed={} failed: {}",
            f.theta, f.subsample, f.seed, f.message
        );
    }
    if outcome.reports.is_empty() {
        return Err(Error::Estimation("every experiment cell failed".into()));
    }
    Ok(())
}
