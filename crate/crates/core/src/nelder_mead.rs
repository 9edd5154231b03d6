//! Derivative-free simplex minimisation.
//!
//! Reflection 1, expansion 2, contraction 0.5 and shrink 0.5. The run stops
//! once every vertex lies within `tol_x` (max norm) of the best one and every
//! value within `tol_f` of the best value, or after `max_iter` iterations.
//! Non-finite objective values are treated as `+inf`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    pub tol_f: f64,
    pub tol_x: f64,
    pub max_iter: usize,
    /// Per-dimension offsets of the initial simplex. `None` uses 5% of each
    /// start coordinate, or `0.00025` where it is zero.
    pub steps: Option<Vec<f64>>,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            tol_f: 1e-12,
            tol_x: 1e-10,
            max_iter: 5000,
            steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

pub fn nelder_mead<F>(mut objective: F, x0: &[f64], options: &NelderMeadOptions) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::InvalidArgument("nelder-mead needs at least one dimension"));
    }
    let f0 = objective(x0);
    if !f0.is_finite() || x0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteStart);
    }
    let steps: Vec<f64> = match &options.steps {
        Some(s) if s.len() == n => s.clone(),
        Some(s) => {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: s.len(),
            })
        }
        None => x0
            .iter()
            .map(|&x| if x != 0.0 { 0.05 * x } else { 0.00025 })
            .collect(),
    };

    let mut evaluations = 1;
    let mut eval = |x: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        let v = objective(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for (i, &s) in steps.iter().enumerate() {
        let mut x = x0.to_vec();
        x[i] += s;
        let f = eval(&x, &mut evaluations);
        simplex.push((x, f));
    }

    let mut centroid = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    loop {
        // stable sort keeps earlier vertices first among equal values
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best_x, best_f) = (&simplex[0].0, simplex[0].1);
        let spread_f = simplex[1..]
            .iter()
            .map(|v| libm::fabs(v.1 - best_f))
            .fold(0.0, f64::max);
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|v| v.0.iter().zip(best_x).map(|(a, b)| libm::fabs(a - b)))
            .fold(0.0, f64::max);
        if spread_f <= options.tol_f && spread_x <= options.tol_x {
            converged = true;
            break;
        }
        if iterations >= options.max_iter {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(&v.0) {
                *c += x / n as f64;
            }
        }
        let worst_f = simplex[n].1;
        let second_worst_f = simplex[n - 1].1;
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            centroid.iter().zip(worst).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(1.0, &simplex[n].0);
        let fr = eval(&xr, &mut evaluations);
        if fr < best_f {
            let xe = along(2.0, &simplex[n].0);
            let fe = eval(&xe, &mut evaluations);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < second_worst_f {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc, accept) = if fr < worst_f {
            let xc = along(0.5, &simplex[n].0);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc, fc <= fr)
        } else {
            let xc = along(-0.5, &simplex[n].0);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc, fc < worst_f)
        };
        if accept {
            simplex[n] = (xc, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            for (x, a) in v.0.iter_mut().zip(&anchor) {
                *x = a + 0.5 * (*x - a);
            }
            v.1 = eval(&v.0, &mut evaluations);
        }
    }

    let (x, f) = simplex.swap_remove(0);
    Ok(NelderMeadResult {
        x,
        f,
        iterations,
        evaluations,
        converged,
    })
}
