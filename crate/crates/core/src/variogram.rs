//! Empirical semivariogram (Matheron estimator) and rule-of-thumb starting values for
//! likelihood optimization.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Dataset;
use crate::kernels::{self, CovarianceModel, CovarianceParams};

/// Binning and pair-sampling settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariogramConfig {
    /// Upper edge of the last bin; `None` means half the bounding-box diagonal.
    pub max_dist: Option<f64>,
    pub n_bins: usize,
    /// Above this many candidate pairs, pairs are drawn at random instead of enumerated.
    pub max_pairs: usize,
    pub seed: u64,
}

impl Default for VariogramConfig {
    fn default() -> Self {
        Self {
            max_dist: None,
            n_bins: 30,
            max_pairs: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalVariogram {
    bin_edges: Vec<f64>,
    semivariance: Vec<Option<f64>>,
    counts: Vec<u64>,
}

impl EmpiricalVariogram {
    /// Builds a variogram from precomputed bins. `semivariance[b]` must be `Some` exactly when
    /// `counts[b] > 0`.
    pub fn from_bins(
        bin_edges: Vec<f64>,
        semivariance: Vec<Option<f64>>,
        counts: Vec<u64>,
    ) -> Result<Self> {
        let b = counts.len();
        if b < 1 || bin_edges.len() != b + 1 || semivariance.len() != b {
            return Err(Error::config(
                "variogram needs B + 1 edges and B semivariances and counts",
            ));
        }
        if bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("bin edges must be strictly increasing"));
        }
        if semivariance
            .iter()
            .zip(&counts)
            .any(|(g, &c)| g.is_some() != (c > 0))
        {
            return Err(Error::config(
                "semivariance must be present exactly for nonempty bins",
            ));
        }
        Ok(Self {
            bin_edges,
            semivariance,
            counts,
        })
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn semivariance(&self) -> &[Option<f64>] {
        &self.semivariance
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn max_dist(&self) -> f64 {
        self.bin_edges[self.n_bins()]
    }

    pub fn midpoint(&self, bin: usize) -> f64 {
        0.5 * (self.bin_edges[bin] + self.bin_edges[bin + 1])
    }

    /// `(midpoint, semivariance)` of every nonempty bin.
    pub fn nonempty(&self) -> Vec<(f64, f64)> {
        (0..self.n_bins())
            .filter_map(|b| self.semivariance[b].map(|g| (self.midpoint(b), g)))
            .collect()
    }

    /// CSV with header `bin_lo,bin_hi,count,semivariance`; empty bins leave the last field blank.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_lo", "bin_hi", "count", "semivariance"])?;
        for b in 0..self.n_bins() {
            out.write_record([
                self.bin_edges[b].to_string(),
                self.bin_edges[b + 1].to_string(),
                self.counts[b].to_string(),
                self.semivariance[b]
                    .map(|g| g.to_string())
                    .unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Matheron estimator on `n_bins` equal-width bins over `[0, max_dist)`.
///
/// When the dataset has more than `max_pairs` pairs, `max_pairs` pairs are drawn uniformly
/// (with replacement) from a generator seeded by `seed`; otherwise every pair is used.
pub fn empirical_variogram(
    dataset: &Dataset,
    max_dist: f64,
    n_bins: usize,
    max_pairs: usize,
    seed: u64,
) -> Result<EmpiricalVariogram> {
    if !(max_dist.is_finite() && max_dist > 0.0) {
        return Err(Error::domain(format!(
            "max_dist must be finite and > 0, got {max_dist}"
        )));
    }
    if n_bins < 2 {
        return Err(Error::domain(format!("need at least 2 bins, got {n_bins}")));
    }
    if max_pairs == 0 {
        return Err(Error::domain("max_pairs must be >= 1"));
    }
    let locs = dataset.locations();
    let z = dataset.values();
    let n = locs.len();
    let width = max_dist / n_bins as f64;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0u64; n_bins];
    let mut add = |i: usize, j: usize| {
        let d = locs[i].distance(&locs[j]);
        if d < max_dist {
            let b = ((d / width) as usize).min(n_bins - 1);
            sums[b] += (z[i] - z[j]).powi(2);
            counts[b] += 1;
        }
    };

    let total = n as u128 * (n as u128 - 1) / 2;
    if total <= max_pairs as u128 {
        for i in 0..n {
            for j in i + 1..n {
                add(i, j);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..max_pairs {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            add(i, j);
        }
    }

    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Estimation(format!(
            "no pairs closer than {max_dist}"
        )));
    }
    let bin_edges = (0..=n_bins).map(|b| b as f64 * width).collect();
    let semivariance = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / (2.0 * c as f64)))
        .collect();
    EmpiricalVariogram::from_bins(bin_edges, semivariance, counts)
}

/// [`empirical_variogram`] with settings from `config`.
pub fn empirical_variogram_with(
    dataset: &Dataset,
    config: &VariogramConfig,
) -> Result<EmpiricalVariogram> {
    let max_dist = match config.max_dist {
        Some(d) => d,
        None => 0.5 * dataset.diameter(),
    };
    empirical_variogram(
        dataset,
        max_dist,
        config.n_bins,
        config.max_pairs,
        config.seed,
    )
}

/// Starting values read off an empirical variogram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InitialGuess {
    /// Matérn parameters; `range` is converted from `effective_range` for the guessed smoothness.
    pub params: CovarianceParams,
    /// Distance at which the variogram first reaches 95% of its plateau.
    pub effective_range: f64,
    /// Set when the variogram was unusable and fallback values were returned.
    pub degenerate: bool,
}

/// Log-log slope separating the rough (ν = 0.5) and smooth (ν = 1) guesses.
const SLOPE_THRESHOLD: f64 = 1.3;

/// A variogram whose first quartile sits this far above its plateau counts as decreasing.
const DECREASING_FACTOR: f64 = 1.2;

/// Heuristic starting values.
///
/// - nugget: linear extrapolation of the first two nonempty bins to zero, clamped at 0;
/// - plateau: mean of the last quarter of the nonempty bins, and sill = plateau - nugget;
/// - effective range: midpoint of the first bin reaching 95% of the plateau;
/// - smoothness: 0.5 when the log-log slope of the nugget-corrected variogram between the
///   first and third nonempty bins is below 1.3, otherwise 1.0.
///
/// A decreasing or zero variogram yields ν = 1, effective range `max_dist / 3`,
/// sill = plateau and no nugget, with `degenerate` set.
pub fn guess_initial_params(vg: &EmpiricalVariogram) -> Result<InitialGuess> {
    let bins = vg.nonempty();
    let m = bins.len();
    if m < 3 {
        return Err(Error::Estimation(format!(
            "need at least 3 nonempty variogram bins, got {m}"
        )));
    }
    let quarter = m.div_ceil(4);
    let plateau = bins[m - quarter..].iter().map(|b| b.1).sum::<f64>() / quarter as f64;
    let head = bins[..quarter].iter().map(|b| b.1).sum::<f64>() / quarter as f64;
    if !(plateau.is_finite() && plateau > 0.0) {
        return Err(Error::Estimation(format!(
            "variogram plateau {plateau} is not positive"
        )));
    }
    if head > DECREASING_FACTOR * plateau {
        return fallback(vg, plateau);
    }

    let ((h1, g1), (h2, g2), (h3, g3)) = (bins[0], bins[1], bins[2]);
    let nugget = (g1 - h1 * (g2 - g1) / (h2 - h1)).clamp(0.0, plateau);
    // Keep the sill a visible fraction of the plateau so the optimizer can move it.
    let sill = (plateau - nugget).max(1e-3 * plateau);
    let effective = bins
        .iter()
        .find(|b| b.1 >= 0.95 * plateau)
        .map_or(bins[m - 1].0, |b| b.0);

    let (a, c) = (g1 - nugget, g3 - nugget);
    let smoothness = if a > 0.0 && c > 0.0 && (c / a).ln() / (h3 / h1).ln() >= SLOPE_THRESHOLD {
        1.0
    } else {
        0.5
    };
    let range = effective / unit_effective_range(smoothness)?;
    Ok(InitialGuess {
        params: CovarianceParams::new(sill, range, smoothness, nugget)?,
        effective_range: effective,
        degenerate: false,
    })
}

fn fallback(vg: &EmpiricalVariogram, plateau: f64) -> Result<InitialGuess> {
    let effective = vg.max_dist() / 3.0;
    Ok(InitialGuess {
        params: CovarianceParams::new(plateau, effective / unit_effective_range(1.0)?, 1.0, 0.0)?,
        effective_range: effective,
        degenerate: true,
    })
}

/// Effective range of a unit-range Matérn correlation.
pub fn unit_effective_range(smoothness: f64) -> Result<f64> {
    kernels::effective_range(&CovarianceModel::matern(CovarianceParams::new(
        1.0, 1.0, smoothness, 0.0,
    )?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Location;
    use crate::kernels::matern_corr;

    fn analytic(model: impl Fn(f64) -> f64, max_dist: f64, n_bins: usize) -> EmpiricalVariogram {
        let w = max_dist / n_bins as f64;
        let edges: Vec<f64> = (0..=n_bins).map(|b| b as f64 * w).collect();
        let gamma = (0..n_bins)
            .map(|b| Some(model((b as f64 + 0.5) * w)))
            .collect();
        EmpiricalVariogram::from_bins(edges, gamma, vec![100; n_bins]).unwrap()
    }

    fn grid(n: usize, f: impl Fn(f64, f64) -> f64) -> Dataset {
        let mut locs = Vec::new();
        let mut vals = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
                locs.push(Location::new(x, y));
                vals.push(f(x, y));
            }
        }
        Dataset::new(locs, vals).unwrap()
    }

    #[test]
    fn constant_field_is_flat() {
        let d = grid(12, |_, _| 3.5);
        let vg = empirical_variogram(&d, 0.7, 10, 1_000_000, 0).unwrap();
        assert!(vg.semivariance().iter().flatten().all(|&g| g == 0.0));
        assert!(guess_initial_params(&vg).is_err());
    }

    #[test]
    fn two_points() {
        let d = Dataset::new(
            vec![Location::new(0.0, 0.0), Location::new(0.1, 0.0)],
            vec![0.0, 2.0],
        )
        .unwrap();
        let vg = empirical_variogram(&d, 0.25, 5, 10, 0).unwrap();
        assert_eq!(vg.counts(), &[0, 0, 1, 0, 0]);
        assert_eq!(vg.semivariance()[2], Some(2.0));
        assert!(vg
            .semivariance()
            .iter()
            .enumerate()
            .all(|(b, g)| g.is_some() == (b == 2)));
    }

    #[test]
    fn pairs_at_or_beyond_max_dist_are_ignored() {
        let d = Dataset::new(
            vec![Location::new(0.0, 0.0), Location::new(0.5, 0.0)],
            vec![0.0, 1.0],
        )
        .unwrap();
        assert!(matches!(
            empirical_variogram(&d, 0.5, 4, 10, 0),
            Err(Error::Estimation(_))
        ));
        assert!(empirical_variogram(&d, 0.0, 4, 10, 0).is_err());
        assert!(empirical_variogram(&d, 1.0, 1, 10, 0).is_err());
    }

    #[test]
    fn brute_force_oracle() {
        let d = grid(9, |x, y| (7.0 * x).sin() + y * y);
        let vg = empirical_variogram(&d, 0.6, 6, usize::MAX, 0).unwrap();
        let (locs, z) = (d.locations(), d.values());
        for b in 0..6 {
            let (lo, hi) = (vg.bin_edges()[b], vg.bin_edges()[b + 1]);
            let mut s = 0.0;
            let mut c = 0u64;
            for i in 0..locs.len() {
                for j in 0..i {
                    let h = locs[i].distance(&locs[j]);
                    if h >= lo && h < hi {
                        s += (z[i] - z[j]).powi(2);
                        c += 1;
                    }
                }
            }
            assert_eq!(vg.counts()[b], c);
            match vg.semivariance()[b] {
                Some(g) => assert!((g - s / (2.0 * c as f64)).abs() <= 1e-12 * g),
                None => assert_eq!(c, 0),
            }
        }
    }

    #[test]
    fn shift_and_scale() {
        let d = grid(10, |x, y| (5.0 * x).cos() * y);
        let base = empirical_variogram(&d, 0.5, 8, usize::MAX, 0).unwrap();
        let shifted =
            empirical_variogram(&d.map_values(|v| v + 100.0), 0.5, 8, usize::MAX, 0).unwrap();
        let scaled =
            empirical_variogram(&d.map_values(|v| 3.0 * v), 0.5, 8, usize::MAX, 0).unwrap();
        assert!(base.semivariance().iter().flatten().count() >= 6);
        for b in 0..8 {
            let Some(g) = base.semivariance()[b] else {
                continue;
            };
            assert!((shifted.semivariance()[b].unwrap() - g).abs() <= 1e-9 * g.max(1e-12));
            assert!((scaled.semivariance()[b].unwrap() - 9.0 * g).abs() <= 1e-12 * g);
        }
    }

    #[test]
    fn subsampled_pairs_are_unbiased() {
        let d = grid(30, |x, y| (6.0 * x).sin() * (4.0 * y).cos() + 0.3 * x);
        let full = empirical_variogram(&d, 0.5, 5, usize::MAX, 0).unwrap();
        let draws: Vec<EmpiricalVariogram> = (0..20)
            .map(|s| empirical_variogram(&d, 0.5, 5, 20_000, s).unwrap())
            .collect();
        for b in 0..5 {
            let g: Vec<f64> = draws.iter().map(|v| v.semivariance()[b].unwrap()).collect();
            let mean = g.iter().sum::<f64>() / 20.0;
            let sd = (g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
            let se = sd / 20f64.sqrt();
            assert!(
                (mean - full.semivariance()[b].unwrap()).abs() <= 3.0 * se,
                "bin {b}"
            );
        }
        let again = empirical_variogram(&d, 0.5, 5, 20_000, 3).unwrap();
        assert_eq!(again, draws[3]);
    }

    #[test]
    fn exponential_guess() {
        let vg = analytic(|h| 2.0 * (1.0 - (-h / 0.1).exp()), 1.0, 30);
        let g = guess_initial_params(&vg).unwrap();
        assert!(!g.degenerate);
        assert!(g.params.nugget <= 0.05 * g.params.sill);
        assert_eq!(g.params.smoothness, 0.5);
        assert!(
            (g.effective_range - 0.3).abs() < 0.04,
            "{}",
            g.effective_range
        );
        let unit = unit_effective_range(0.5).unwrap();
        assert!((g.params.range * unit - g.effective_range).abs() < 1e-12);
    }

    #[test]
    fn smooth_guess() {
        for beta in [0.05, 0.1, 0.2] {
            let vg = analytic(|h| 1.0 - matern_corr(h, beta, 2.5).unwrap(), 1.0, 30);
            assert_eq!(
                guess_initial_params(&vg).unwrap().params.smoothness,
                1.0,
                "beta={beta}"
            );
        }
    }

    #[test]
    fn nugget_is_recovered() {
        let vg = analytic(|h| 0.3 + (1.0 - (-h / 0.15).exp()), 1.0, 30);
        let g = guess_initial_params(&vg).unwrap();
        assert!((g.params.nugget - 0.3).abs() < 0.03, "{}", g.params.nugget);
        assert!((g.params.sill - 1.0).abs() < 0.05, "{}", g.params.sill);
    }

    #[test]
    fn pure_nugget_guess() {
        let vg = analytic(|_| 1.7, 0.9, 30);
        let g = guess_initial_params(&vg).unwrap();
        assert_eq!(g.effective_range, vg.midpoint(0));
        assert!(g.params.sill > 0.0);
    }

    #[test]
    fn decreasing_variogram_falls_back() {
        let vg = analytic(|h| 2.0 - h, 0.9, 30);
        let g = guess_initial_params(&vg).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.params.smoothness, 1.0);
        assert_eq!(g.params.nugget, 0.0);
        assert!((g.effective_range - 0.3).abs() < 1e-15);
    }

    #[test]
    fn too_few_bins() {
        let vg = EmpiricalVariogram::from_bins(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![Some(1.0), None, Some(1.0)],
            vec![1, 0, 1],
        )
        .unwrap();
        assert!(guess_initial_params(&vg).is_err());
    }

    #[test]
    fn csv_layout() {
        let vg =
            EmpiricalVariogram::from_bins(vec![0.0, 0.5, 1.0], vec![Some(0.25), None], vec![3, 0])
                .unwrap();
        let mut out = Vec::new();
        vg.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "bin_lo,bin_hi,count,semivariance\n0,0.5,3,0.25\n0.5,1,0,\n"
        );
    }
}
