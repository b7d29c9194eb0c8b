use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NelderMeadOptions {
    /// Converged once every vertex lies within this relative distance of the best one.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Offset of the initial vertices along each coordinate axis.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 500,
            initial_step: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub n_evals: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective value after each iteration, starting with the initial simplex.
    pub trace: Vec<f64>,
    /// Number of evaluations that returned a non-finite value.
    pub failed_evals: usize,
}

/// Minimizes `f` with the Nelder-Mead simplex method (standard coefficients 1, 2, 1/2, 1/2).
///
/// Non-finite objective values are treated as +infinity, so infeasible points are simply
/// never accepted. The initial simplex and shrink steps evaluate their vertices in parallel.
pub fn nelder_mead<F>(
    f: F,
    initial: &[f64],
    options: &NelderMeadOptions,
) -> Result<NelderMeadResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = initial.len();
    if dim == 0 {
        return Err(Error::config("nothing to optimize: no free parameters"));
    }
    if !(options.tolerance > 0.0 && options.initial_step != 0.0 && options.initial_step.is_finite())
    {
        return Err(Error::config(
            "optimizer tolerance must be > 0 and initial step finite and nonzero",
        ));
    }
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let f0 = eval(initial);
    if !f0.is_finite() {
        return Err(Error::Estimation(format!(
            "objective is not finite at the initial point {initial:?}"
        )));
    }

    let mut simplex: Vec<Vec<f64>> = vec![initial.to_vec()];
    for i in 0..dim {
        let mut v = initial.to_vec();
        v[i] += options.initial_step;
        simplex.push(v);
    }
    let mut values = vec![f0];
    values.extend(simplex[1..].par_iter().map(|v| eval(v)).collect::<Vec<_>>());
    let mut n_evals = dim + 1;
    let mut failed_evals = values.iter().filter(|v| !v.is_finite()).count();

    let mut order: Vec<usize> = (0..=dim).collect();
    let sort = |order: &mut Vec<usize>, values: &[f64]| {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    };
    sort(&mut order, &values);
    let mut trace = vec![values[order[0]]];
    let mut iterations = 0;
    let mut converged = spread(&simplex, order[0]) < options.tolerance;

    while !converged && iterations < options.max_iterations {
        iterations += 1;
        let best = order[0];
        let worst = order[dim];
        let second = order[dim - 1];
        let centroid: Vec<f64> = (0..dim)
            .map(|k| order[..dim].iter().map(|&i| simplex[i][k]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let mut count = |v: f64| {
            n_evals += 1;
            if !v.is_finite() {
                failed_evals += 1;
            }
            v
        };

        let xr = along(1.0);
        let fr = count(eval(&xr));
        if fr < values[best] {
            let xe = along(2.0);
            let fe = count(eval(&xe));
            if fe < fr {
                simplex[worst] = xe;
                values[worst] = fe;
            } else {
                simplex[worst] = xr;
                values[worst] = fr;
            }
        } else if fr < values[second] {
            simplex[worst] = xr;
            values[worst] = fr;
        } else {
            let outside = fr < values[worst];
            let xc = if outside { along(0.5) } else { along(-0.5) };
            let fc = count(eval(&xc));
            if (outside && fc <= fr) || (!outside && fc < values[worst]) {
                simplex[worst] = xc;
                values[worst] = fc;
            } else {
                let anchor = simplex[best].clone();
                let shrunk: Vec<(usize, Vec<f64>, f64)> = (0..=dim)
                    .into_par_iter()
                    .filter(|&i| i != best)
                    .map(|i| {
                        let v: Vec<f64> = anchor
                            .iter()
                            .zip(&simplex[i])
                            .map(|(a, x)| a + 0.5 * (x - a))
                            .collect();
                        let fv = eval(&v);
                        (i, v, fv)
                    })
                    .collect();
                for (i, v, fv) in shrunk {
                    count(fv);
                    simplex[i] = v;
                    values[i] = fv;
                }
            }
        }
        sort(&mut order, &values);
        trace.push(values[order[0]]);
        converged = spread(&simplex, order[0]) < options.tolerance;
    }

    let best = order[0];
    Ok(NelderMeadResult {
        x: simplex[best].clone(),
        value: values[best],
        n_evals,
        iterations,
        converged,
        trace,
        failed_evals,
    })
}

/// Largest coordinate distance from the best vertex, relative to its magnitude (at least 1).
fn spread(simplex: &[Vec<f64>], best: usize) -> f64 {
    let b = &simplex[best];
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    simplex
        .iter()
        .flat_map(|v| v.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
        / scale
}
