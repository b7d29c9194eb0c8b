use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EstimationResult, StabilizeStep};
use crate::error::{Error, Result};
use crate::kernels::{CovarianceModel, CovarianceParams, ModelKind, TaperFamily, TaperSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaperReport {
    pub family: String,
    pub range: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeatReport {
    pub params: CovarianceParams,
    pub neg_loglik: f64,
    pub n_evals: usize,
    pub converged: bool,
    pub seed: u64,
    pub subsample_size: usize,
}

/// Serialized form of an estimation result. `checksum` covers the model, parameters and taper
/// so that a prediction run can refuse a report edited by hand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationReport {
    pub model: String,
    pub params: CovarianceParams,
    /// Taper of a tapered Matérn model; for a Wendland model, the function and its support.
    pub taper: Option<TaperReport>,
    pub neg_loglik: f64,
    pub n_evals: usize,
    pub converged: bool,
    pub repeats: Vec<RepeatReport>,
    pub seed: u64,
    pub checksum: String,
    /// Per-order outcomes when the Wendland order was selected automatically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_selection: Option<Vec<OrderScore>>,
    /// Iterations of a stabilized estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stabilize: Option<Vec<StabilizeStep>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderScore {
    pub order: u32,
    /// Averaged negative log-likelihood; absent when the fit failed.
    pub neg_loglik: Option<f64>,
    pub error: Option<String>,
}

impl EstimationReport {
    pub fn from_result(result: &EstimationResult) -> Self {
        let m = &result.model;
        let (model, taper) = match m.kind {
            ModelKind::Matern => ("matern".to_string(), None),
            ModelKind::TaperedMatern => {
                let t = m.taper.expect("tapered model carries a taper");
                (
                    "tapered_matern".to_string(),
                    Some(TaperReport {
                        family: t.family.name().into(),
                        range: t.range,
                    }),
                )
            }
            ModelKind::Wendland(k) => {
                let name = format!("wendland{k}");
                (
                    name.clone(),
                    Some(TaperReport {
                        family: name,
                        range: m.params.range,
                    }),
                )
            }
        };
        let repeats = result
            .repeats
            .iter()
            .map(|r| RepeatReport {
                params: r.params,
                neg_loglik: r.neg_loglik,
                n_evals: r.n_evals,
                converged: r.converged,
                seed: r.seed,
                subsample_size: r.subsample_indices.len(),
            })
            .collect();
        let mut report = Self {
            model,
            params: m.params,
            taper,
            neg_loglik: result.neg_loglik,
            n_evals: result.n_evals,
            converged: result.converged,
            repeats,
            seed: result.seed,
            checksum: String::new(),
            order_selection: None,
            stabilize: None,
        };
        report.checksum = report.compute_checksum();
        report
    }

    fn compute_checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.model.as_bytes());
        let p = &self.params;
        for v in [p.sill, p.range, p.smoothness, p.nugget] {
            h.update(v.to_bits().to_le_bytes());
        }
        if let Some(t) = &self.taper {
            h.update(t.family.as_bytes());
            h.update(t.range.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Rebuilds the fitted model after checking the checksum.
    pub fn to_model(&self) -> Result<CovarianceModel> {
        if self.checksum != self.compute_checksum() {
            return Err(Error::config(
                "estimation report checksum does not match its model and parameters",
            ));
        }
        match (self.model.as_str(), &self.taper) {
            ("matern", None) => CovarianceModel::matern(self.params),
            ("tapered_matern", Some(t)) => {
                let family: TaperFamily = serde_json::from_value(serde_json::Value::String(
                    t.family.clone(),
                ))
                .map_err(|_| Error::config(format!("unknown taper family {:?}", t.family)))?;
                CovarianceModel::tapered_matern(self.params, TaperSpec::new(family, t.range)?)
            }
            (name, _) if name.starts_with("wendland") => {
                let k: u32 = name["wendland".len()..]
                    .parse()
                    .map_err(|_| Error::config(format!("unknown model {name:?}")))?;
                CovarianceModel::wendland(k, self.params)
            }
            (name, _) => Err(Error::config(format!(
                "unknown model {name:?} or missing taper"
            ))),
        }
    }
}
