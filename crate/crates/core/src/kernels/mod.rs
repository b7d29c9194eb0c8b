//! Isotropic covariance models: Matérn, tapered Matérn and compactly supported Wendland
//! functions, plus the smoothness-driven choice of taper.
//!
//! All correlation functions take a distance `h >= 0`. The Matérn family is parameterized as
//!
//! ```text
//! rho(h) = 2^(1 - nu) / Gamma(nu) * (h / beta)^nu * K_nu(h / beta)
//! ```
//!
//! so that `nu = 1/2` is the exponential `exp(-h / beta)`. Nugget variance is added at `h == 0`
//! exactly and nowhere else.

pub mod bessel;
mod compact;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bessel::{bessel_k, bessel_k_scaled};

/// Correlation level that defines the effective range.
pub const EFFECTIVE_RANGE_LEVEL: f64 = 0.05;

/// Parameters shared by every covariance family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceParams {
    /// Marginal variance of the spatially correlated component.
    pub sill: f64,
    /// Matérn range, or the support radius for Wendland models.
    pub range: f64,
    /// Matérn smoothness. Carried but unused by Wendland models.
    pub smoothness: f64,
    /// Measurement-error variance, added on the diagonal only.
    pub nugget: f64,
}

impl CovarianceParams {
    pub fn new(sill: f64, range: f64, smoothness: f64, nugget: f64) -> Result<Self> {
        let params = Self {
            sill,
            range,
            smoothness,
            nugget,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::domain(format!(
                    "{name} must be finite and > 0, got {v}"
                )))
            }
        };
        positive("sill", self.sill)?;
        positive("range", self.range)?;
        positive("smoothness", self.smoothness)?;
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return Err(Error::domain(format!(
                "nugget must be finite and >= 0, got {}",
                self.nugget
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaperFamily {
    Spherical,
    Wendland1,
    Wendland2,
}

impl TaperFamily {
    /// Taper value at scaled distance `r = h / theta`.
    #[inline]
    pub fn at_scaled(self, r: f64) -> f64 {
        match self {
            TaperFamily::Spherical => compact::spherical_r(r),
            TaperFamily::Wendland1 => compact::wendland1_r(r),
            TaperFamily::Wendland2 => compact::wendland2_r(r),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaperFamily::Spherical => "spherical",
            TaperFamily::Wendland1 => "wendland1",
            TaperFamily::Wendland2 => "wendland2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaperSpec {
    pub family: TaperFamily,
    pub range: f64,
}

impl TaperSpec {
    pub fn new(family: TaperFamily, range: f64) -> Result<Self> {
        if !(range.is_finite() && range > 0.0) {
            return Err(Error::domain(format!(
                "taper range must be finite and > 0, got {range}"
            )));
        }
        Ok(Self { family, range })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Matern,
    TaperedMatern,
    /// Closed-form Wendland function of order 1, 2 or 3 with support `params.range`.
    Wendland(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub kind: ModelKind,
    pub params: CovarianceParams,
    pub taper: Option<TaperSpec>,
}

impl CovarianceModel {
    pub fn matern(params: CovarianceParams) -> Result<Self> {
        Self {
            kind: ModelKind::Matern,
            params,
            taper: None,
        }
        .validated()
    }

    pub fn tapered_matern(params: CovarianceParams, taper: TaperSpec) -> Result<Self> {
        Self {
            kind: ModelKind::TaperedMatern,
            params,
            taper: Some(taper),
        }
        .validated()
    }

    pub fn wendland(order: u32, params: CovarianceParams) -> Result<Self> {
        Self {
            kind: ModelKind::Wendland(order),
            params,
            taper: None,
        }
        .validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        match (self.kind, self.taper) {
            (ModelKind::TaperedMatern, None) => Err(Error::config(
                "tapered Matérn model requires a taper specification",
            )),
            (ModelKind::TaperedMatern, Some(t)) => TaperSpec::new(t.family, t.range).map(|_| ()),
            (ModelKind::Wendland(k), _) if !(1..=3).contains(&k) => Err(Error::domain(format!(
                "Wendland order must be 1, 2 or 3, got {k}"
            ))),
            _ => Ok(()),
        }
    }

    /// Distance beyond which the covariance is exactly zero, if any.
    pub fn support_radius(&self) -> Option<f64> {
        match self.kind {
            ModelKind::Matern => None,
            ModelKind::TaperedMatern => self.taper.map(|t| t.range),
            ModelKind::Wendland(_) => Some(self.params.range),
        }
    }

    pub fn has_compact_support(&self) -> bool {
        self.support_radius().is_some()
    }

    /// Prepare a fast evaluator. Validates the model once.
    pub fn covariance(&self) -> Result<Covariance> {
        self.validate()?;
        let p = self.params;
        let shape = match self.kind {
            ModelKind::Matern => Shape::Matern {
                matern: Matern::new(p.smoothness)?,
                range: p.range,
            },
            ModelKind::TaperedMatern => {
                let taper = self.taper.expect("validated");
                Shape::TaperedMatern {
                    matern: Matern::new(p.smoothness)?,
                    range: p.range,
                    family: taper.family,
                    theta: taper.range,
                }
            }
            ModelKind::Wendland(order) => Shape::Wendland {
                order,
                support: p.range,
            },
        };
        Ok(Covariance {
            sill: p.sill,
            nugget: p.nugget,
            shape,
        })
    }
}

/// Prepared Matérn correlation in the scaled distance `x = h / beta`.
#[derive(Clone, Copy, Debug)]
pub struct Matern {
    smoothness: f64,
    ln_norm: f64,
    closed: Option<HalfInteger>,
}

#[derive(Clone, Copy, Debug)]
enum HalfInteger {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl Matern {
    pub fn new(smoothness: f64) -> Result<Self> {
        let mut m = Self::general(smoothness)?;
        m.closed = match smoothness {
            s if s == 0.5 => Some(HalfInteger::Half),
            s if s == 1.5 => Some(HalfInteger::ThreeHalves),
            s if s == 2.5 => Some(HalfInteger::FiveHalves),
            _ => None,
        };
        Ok(m)
    }

    /// Always goes through the Bessel function, even at half-integer smoothness.
    pub fn general(smoothness: f64) -> Result<Self> {
        if !(smoothness.is_finite() && smoothness > 0.0) {
            return Err(Error::domain(format!(
                "smoothness must be finite and > 0, got {smoothness}"
            )));
        }
        let ln_norm = (1.0 - smoothness) * std::f64::consts::LN_2
            - statrs::function::gamma::ln_gamma(smoothness);
        Ok(Self {
            smoothness,
            ln_norm,
            closed: None,
        })
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    #[inline]
    pub fn corr(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        match self.closed {
            Some(HalfInteger::Half) => (-x).exp(),
            Some(HalfInteger::ThreeHalves) => (1.0 + x) * (-x).exp(),
            Some(HalfInteger::FiveHalves) => (1.0 + x + x * x / 3.0) * (-x).exp(),
            None => {
                let nu = self.smoothness;
                let ln =
                    self.ln_norm + nu * x.ln() + bessel::ln_bessel_k_scaled_unchecked(nu, x) - x;
                ln.exp().min(1.0)
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Matern {
        matern: Matern,
        range: f64,
    },
    TaperedMatern {
        matern: Matern,
        range: f64,
        family: TaperFamily,
        theta: f64,
    },
    Wendland {
        order: u32,
        support: f64,
    },
}

/// Validated, ready-to-evaluate covariance function.
#[derive(Clone, Copy, Debug)]
pub struct Covariance {
    sill: f64,
    nugget: f64,
    shape: Shape,
}

impl Covariance {
    /// Correlation of the spatial component (no sill, no nugget).
    #[inline]
    pub fn correlation(&self, h: f64) -> f64 {
        match self.shape {
            Shape::Matern { matern, range } => matern.corr(h / range),
            Shape::TaperedMatern {
                matern,
                range,
                family,
                theta,
            } => {
                let t = family.at_scaled(h / theta);
                if t == 0.0 {
                    0.0
                } else {
                    matern.corr(h / range) * t
                }
            }
            Shape::Wendland { order, support } => compact::wendland_r(order, h / support),
        }
    }

    /// Covariance at distance `h`, nugget included only at `h == 0`.
    #[inline]
    pub fn at(&self, h: f64) -> f64 {
        if h == 0.0 {
            self.sill + self.nugget
        } else {
            self.sill * self.correlation(h)
        }
    }

    pub fn sill(&self) -> f64 {
        self.sill
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn support_radius(&self) -> Option<f64> {
        match self.shape {
            Shape::Matern { .. } => None,
            Shape::TaperedMatern { theta, .. } => Some(theta),
            Shape::Wendland { support, .. } => Some(support),
        }
    }
}

fn check_distance(h: f64) -> Result<()> {
    if h.is_finite() && h >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "distance must be finite and >= 0, got {h}"
        )))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} must be finite and > 0, got {v}"
        )))
    }
}

/// Matérn correlation at distance `h`.
pub fn matern_corr(h: f64, range: f64, smoothness: f64) -> Result<f64> {
    check_distance(h)?;
    check_positive("range", range)?;
    Ok(Matern::new(smoothness)?.corr(h / range))
}

/// Matérn correlation through the general Bessel path, bypassing the half-integer closed forms.
pub fn matern_corr_bessel(h: f64, range: f64, smoothness: f64) -> Result<f64> {
    check_distance(h)?;
    check_positive("range", range)?;
    Ok(Matern::general(smoothness)?.corr(h / range))
}

pub fn spherical(h: f64, theta: f64) -> Result<f64> {
    check_distance(h)?;
    check_positive("theta", theta)?;
    Ok(compact::spherical_r(h / theta))
}

/// Wendland function of order `k` in {1, 2, 3} with support `theta`.
pub fn wendland(k: u32, h: f64, theta: f64) -> Result<f64> {
    if !(1..=3).contains(&k) {
        return Err(Error::domain(format!(
            "Wendland order must be 1, 2 or 3, got {k}"
        )));
    }
    check_distance(h)?;
    check_positive("theta", theta)?;
    Ok(compact::wendland_r(k, h / theta))
}

pub fn evaluate_model(model: &CovarianceModel, h: f64) -> Result<f64> {
    check_distance(h)?;
    Ok(model.covariance()?.at(h))
}

/// Taper family for a field of smoothness `nu`: spherical on (0, 0.5], Wendland1 on (0.5, 1.5],
/// Wendland2 on (1.5, 2.5]. Outside (0, 2.5] the caller has to choose.
pub fn select_taper(smoothness: f64) -> Result<TaperFamily> {
    match smoothness {
        s if s > 0.0 && s <= 0.5 => Ok(TaperFamily::Spherical),
        s if s > 0.5 && s <= 1.5 => Ok(TaperFamily::Wendland1),
        s if s > 1.5 && s <= 2.5 => Ok(TaperFamily::Wendland2),
        s => Err(Error::domain(format!(
            "smoothness {s} is outside the taper selection rule (0, 2.5]; choose a taper manually"
        ))),
    }
}

/// Smallest distance at which the correlation drops to [`EFFECTIVE_RANGE_LEVEL`], to a relative
/// tolerance of 1e-8.
pub fn effective_range(model: &CovarianceModel) -> Result<f64> {
    let cov = model.covariance()?;
    let mut lo = 0.0;
    let mut hi = match cov.support_radius() {
        Some(r) => r,
        None => {
            let mut hi = model.params.range;
            while cov.correlation(hi) > EFFECTIVE_RANGE_LEVEL {
                lo = hi;
                hi *= 2.0;
            }
            hi
        }
    };
    while hi - lo > 1e-8 * hi {
        let mid = 0.5 * (lo + hi);
        if cov.correlation(mid) <= EFFECTIVE_RANGE_LEVEL {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
