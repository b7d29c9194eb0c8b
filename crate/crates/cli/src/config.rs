//! Run configurations. Each sub-command reads one flat JSON document; unknown keys are
//! rejected and relative paths resolve against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use taperkrige::estimation::{FreeParams, MeanConvention};
use taperkrige::kernels::{select_taper, CovarianceModel, CovarianceParams, TaperSpec};
use taperkrige::{Error, Result};

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("invalid config {}: {e}", path.display())))
}

/// Resolves `path` against `base` and checks that it names an existing file.
pub fn input_path(base: &Path, path: &Path, what: &str) -> Result<PathBuf> {
    let full = if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    };
    if !full.is_file() {
        return Err(Error::config(format!(
            "{what} file {} does not exist",
            full.display()
        )));
    }
    Ok(full)
}

fn half() -> f64 {
    0.5
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Matern,
    TaperedMatern,
    Wendland,
}

/// A covariance model in flat form.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model: ModelName,
    pub sill: f64,
    /// Matérn range, or the Wendland support.
    pub range: f64,
    #[serde(default = "half")]
    pub smoothness: f64,
    #[serde(default)]
    pub nugget: f64,
    /// Required for `tapered_matern`; the family follows from the smoothness.
    #[serde(default)]
    pub taper_range: Option<f64>,
    /// Required for `wendland`.
    #[serde(default)]
    pub order: Option<u32>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<CovarianceModel> {
        let params = CovarianceParams::new(self.sill, self.range, self.smoothness, self.nugget)?;
        match (self.model, self.taper_range, self.order) {
            (ModelName::Matern, None, None) => CovarianceModel::matern(params),
            (ModelName::TaperedMatern, Some(theta), None) => CovarianceModel::tapered_matern(
                params,
                TaperSpec::new(select_taper(self.smoothness)?, theta)?,
            ),
            (ModelName::Wendland, None, Some(k)) => CovarianceModel::wendland(k, params),
            (ModelName::TaperedMatern, None, _) => {
                Err(Error::config("tapered_matern needs taper_range"))
            }
            (ModelName::Wendland, _, None) => Err(Error::config("wendland needs order")),
            _ => Err(Error::config(
                "taper_range applies to tapered_matern only and order to wendland only",
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Number of uniform locations on the unit square; optional when `locations` is given.
    #[serde(default)]
    pub n: Option<usize>,
    /// CSV with `x` and `y` columns.
    #[serde(default)]
    pub locations: Option<PathBuf>,
    pub model: ModelName,
    pub sill: f64,
    pub range: f64,
    #[serde(default = "half")]
    pub smoothness: f64,
    #[serde(default)]
    pub nugget: f64,
    #[serde(default)]
    pub taper_range: Option<f64>,
    #[serde(default)]
    pub order: Option<u32>,
    #[serde(default)]
    pub seed: u64,
}

impl SimulateConfig {
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            model: self.model,
            sill: self.sill,
            range: self.range,
            smoothness: self.smoothness,
            nugget: self.nugget,
            taper_range: self.taper_range,
            order: self.order,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariogramRunConfig {
    pub data: PathBuf,
    #[serde(default)]
    pub max_dist: Option<f64>,
    #[serde(default)]
    pub n_bins: Option<usize>,
    #[serde(default)]
    pub max_pairs: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Tapered,
    Wendland,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum OrderChoice {
    Fixed(u32),
    Named(AutoOrder),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoOrder {
    Auto,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub data: PathBuf,
    pub mode: Mode,
    /// Taper range, or the Wendland support.
    pub theta: f64,
    /// Wendland order; `"auto"` (the default) picks the best of 1, 2 and 3.
    #[serde(default)]
    pub order: Option<OrderChoice>,
    /// Fixes the Matérn smoothness instead of taking it from the variogram.
    #[serde(default)]
    pub smoothness: Option<f64>,
    #[serde(default)]
    pub free: FreeParams,
    #[serde(default)]
    pub initial: Option<CovarianceParams>,
    #[serde(default)]
    pub trim_gamma: f64,
    /// Subsample size; the full dataset when absent or not smaller than it.
    #[serde(default)]
    pub size: Option<usize>,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub mean: Option<MeanConvention>,
    #[serde(default)]
    pub stabilize: bool,
    #[serde(default)]
    pub initial_size: Option<usize>,
    #[serde(default)]
    pub max_theta: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn chunk() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub data: PathBuf,
    /// Report written by `estimate`.
    pub model: PathBuf,
    /// CSV with `x` and `y` columns.
    pub targets: PathBuf,
    #[serde(default = "chunk")]
    pub chunk_size: usize,
    #[serde(default)]
    pub mean: Option<MeanConvention>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub truth: ModelSpec,
    pub n: usize,
    pub n_holdout: usize,
    pub thetas: Vec<f64>,
    pub subsample_sizes: Vec<usize>,
    /// Number of simulated fields.
    #[serde(default = "one")]
    pub fields: usize,
    pub mode: Mode,
    /// Wendland order for `mode = "wendland"`.
    #[serde(default)]
    pub order: Option<u32>,
    #[serde(default)]
    pub free: FreeParams,
    #[serde(default)]
    pub initial: Option<CovarianceParams>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub mean: Option<MeanConvention>,
    #[serde(default)]
    pub trim_gamma: f64,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use taperkrige::kernels::{ModelKind, TaperFamily};

    fn spec(json: &str) -> Result<CovarianceModel> {
        serde_json::from_str::<ModelSpec>(json)?.build()
    }

    #[test]
    fn model_specs() {
        let m =
            spec(r#"{"model":"tapered_matern","sill":1,"range":0.1,"taper_range":0.3}"#).unwrap();
        assert_eq!(m.taper.unwrap().family, TaperFamily::Spherical);
        let m = spec(r#"{"model":"wendland","sill":1,"range":0.1,"order":2}"#).unwrap();
        assert_eq!(m.kind, ModelKind::Wendland(2));
        assert!(spec(r#"{"model":"matern","sill":1,"range":0.1,"order":2}"#).is_err());
        assert!(spec(r#"{"model":"tapered_matern","sill":1,"range":0.1}"#).is_err());
        assert!(spec(r#"{"model":"matern","sill":1,"range":0.1,"colour":2}"#).is_err());
    }

    #[test]
    fn order_choice() {
        let o: OrderChoice = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(o, OrderChoice::Named(AutoOrder::Auto));
        let o: OrderChoice = serde_json::from_str("3").unwrap();
        assert_eq!(o, OrderChoice::Fixed(3));
        assert!(serde_json::from_str::<OrderChoice>("\"best\"").is_err());
    }
}
