//! Least-squares calibration with a Gaussian (Laplace) posterior.
//!
//! Under a uniform prior and i.i.d. Gaussian measurement noise the MAP point
//! minimises the misfit `sum_k (u_k,exp - S u_k(v))^2`. The posterior is
//! approximated by `N(v_MAP, sigma^2 (J^T J)^-1)` with `J` the Jacobian of
//! the observed outputs at `v_MAP` and `sigma^2 = misfit(v_MAP) / K`.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::misc::MiscSurrogate;
use crate::nelder_mead::{nelder_mead, NelderMeadOptions};
use crate::params::ParamSpace;

/// Anything that maps a parameter vector to named outputs.
pub trait ForwardModel {
    fn dim(&self) -> usize;
    fn qoi_names(&self) -> &[String];
    /// Writes all outputs into `out`; returns the extrapolation flag.
    fn evaluate_into(&self, v: &[f64], out: &mut [f64]) -> Result<bool>;
}

impl ForwardModel for MiscSurrogate {
    fn dim(&self) -> usize {
        MiscSurrogate::dim(self)
    }

    fn qoi_names(&self) -> &[String] {
        MiscSurrogate::qoi_names(self)
    }

    fn evaluate_into(&self, v: &[f64], out: &mut [f64]) -> Result<bool> {
        MiscSurrogate::evaluate_into(self, v, out)
    }
}

/// Measured values `u_k,exp` keyed by output name.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    entries: Vec<(String, f64)>,
}

impl ObservationSet {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("at least one observation is required"));
        }
        if entries.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidArgument("observed values must be finite"));
        }
        Ok(ObservationSet { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .map(|(_, v)| libm::fabs(*v))
            .fold(0.0, f64::max)
    }
}

/// Observations resolved against a model's output list.
pub struct Calibration<'a, M: ?Sized> {
    model: &'a M,
    indices: Vec<usize>,
    observed: Vec<f64>,
}

impl<'a, M: ForwardModel + ?Sized> Calibration<'a, M> {
    pub fn new(model: &'a M, obs: &ObservationSet) -> Result<Self> {
        let names = model.qoi_names();
        let mut indices = Vec::with_capacity(obs.len());
        for (name, _) in obs.entries() {
            let i = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::UnknownQoi(name.clone()))?;
            indices.push(i);
        }
        Ok(Calibration {
            model,
            indices,
            observed: obs.entries().iter().map(|(_, v)| *v).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    /// Model outputs at the observed names.
    pub fn predict(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut all = vec![0.0; self.model.qoi_names().len()];
        self.model.evaluate_into(v, &mut all)?;
        Ok(self.indices.iter().map(|&i| all[i]).collect())
    }

    pub fn misfit(&self, v: &[f64]) -> Result<f64> {
        Ok(self
            .predict(v)?
            .iter()
            .zip(&self.observed)
            .map(|(p, o)| (o - p) * (o - p))
            .sum())
    }

    pub fn log_likelihood(&self, v: &[f64], sigma: f64) -> Result<f64> {
        log_likelihood_from_misfit(self.misfit(v)?, self.len(), sigma)
    }

    /// `J[k][n] = d S u_k / d v_n`, row-major `K x N`.
    ///
    /// Central differences with step `h_n`; a side whose value is not finite
    /// falls back to the one-sided quotient.
    pub fn jacobian(&self, v: &[f64], steps: &[f64]) -> Result<Vec<f64>> {
        let n = self.model.dim();
        if v.len() != n || steps.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: if v.len() != n { v.len() } else { steps.len() },
            });
        }
        let k = self.len();
        let center = self.predict(v)?;
        let finite = |p: &Vec<f64>| p.iter().all(|x| x.is_finite());
        let mut jac = vec![0.0; k * n];
        let mut x = v.to_vec();
        for d in 0..n {
            let h = steps[d];
            x[d] = v[d] + h;
            let plus = self.predict(&x)?;
            x[d] = v[d] - h;
            let minus = self.predict(&x)?;
            x[d] = v[d];
            let column: Vec<f64> = match (finite(&plus), finite(&minus)) {
                (true, true) => plus
                    .iter()
                    .zip(&minus)
                    .map(|(p, m)| (p - m) / (2.0 * h))
                    .collect(),
                (true, false) => plus.iter().zip(&center).map(|(p, c)| (p - c) / h).collect(),
                (false, true) => center.iter().zip(&minus).map(|(c, m)| (c - m) / h).collect(),
                (false, false) => return Err(Error::Numerical("jacobian is not finite")),
            };
            for (row, val) in column.into_iter().enumerate() {
                jac[row * n + d] = val;
            }
        }
        Ok(jac)
    }
}

pub fn log_likelihood_from_misfit(misfit: f64, k: usize, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument("sigma must be positive"));
    }
    let k = k as f64;
    Ok(-k * libm::log(sigma * libm::sqrt(2.0 * core::f64::consts::PI)) - misfit / (2.0 * sigma * sigma))
}

pub fn misfit<M: ForwardModel + ?Sized>(model: &M, obs: &ObservationSet, v: &[f64]) -> Result<f64> {
    Calibration::new(model, obs)?.misfit(v)
}

pub fn log_likelihood<M: ForwardModel + ?Sized>(
    model: &M,
    obs: &ObservationSet,
    v: &[f64],
    sigma: f64,
) -> Result<f64> {
    Calibration::new(model, obs)?.log_likelihood(v, sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapOptions {
    pub n_starts: usize,
    pub seed: u64,
    /// `mu = penalty_scale * misfit(center) / diam^2`.
    pub penalty_scale: f64,
    /// Initial simplex offsets as a fraction of each box width.
    pub simplex_fraction: f64,
    /// Vertex spread tolerance relative to the largest box width.
    pub rel_tol_x: f64,
    /// Value spread tolerance relative to `misfit(center)`.
    pub rel_tol_f: f64,
    pub max_iter: usize,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            n_starts: 20,
            seed: 0,
            penalty_scale: 1e3,
            simplex_fraction: 0.05,
            rel_tol_x: 1e-10,
            rel_tol_f: 1e-14,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartReport {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub misfit: f64,
    pub penalized: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the objective was not finite at the start point.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEstimate {
    pub v_map: Vec<f64>,
    pub misfit: f64,
    pub starts: Vec<StartReport>,
    pub evaluations: usize,
    pub penalty_weight: f64,
}

/// Box used for the MAP penalty: uniform bounds, or `mean ± 3 std`.
pub fn prior_box(space: &ParamSpace) -> Vec<(f64, f64)> {
    space
        .params()
        .iter()
        .map(|p| {
            p.distribution.bounds().unwrap_or_else(|| {
                let (m, w) = (p.distribution.mean(), p.distribution.width());
                (m - 0.5 * w, m + 0.5 * w)
            })
        })
        .collect()
}

fn box_distance_sq(v: &[f64], bx: &[(f64, f64)]) -> f64 {
    v.iter()
        .zip(bx)
        .map(|(&x, &(lo, hi))| {
            let d = if x < lo {
                lo - x
            } else if x > hi {
                x - hi
            } else {
                0.0
            };
            d * d
        })
        .sum()
}

/// Multi-start Nelder–Mead on the misfit plus a quadratic penalty on the
/// distance to the prior box.
///
/// Each start is restarted once from its own end point, which recovers from
/// simplices that collapsed early. The reported MAP is the end point with
/// the lowest misfit, earlier starts winning ties.
pub fn find_map<M: ForwardModel + ?Sized>(
    model: &M,
    obs: &ObservationSet,
    space: &ParamSpace,
    options: &MapOptions,
) -> Result<MapEstimate> {
    let cal = Calibration::new(model, obs)?;
    if space.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: space.dim(),
        });
    }
    if options.n_starts == 0 {
        return Err(Error::InvalidArgument("at least one start is required"));
    }
    let bx = prior_box(space);
    let widths: Vec<f64> = bx.iter().map(|(lo, hi)| hi - lo).collect();
    let diam_sq: f64 = widths.iter().map(|w| w * w).sum();
    let center_misfit = cal.misfit(&space.center())?;
    let mu = options.penalty_scale * center_misfit / diam_sq;
    let f_scale = if center_misfit > 0.0 { center_misfit } else { 1.0 };
    let nm = NelderMeadOptions {
        tol_f: options.rel_tol_f * f_scale,
        tol_x: options.rel_tol_x * widths.iter().cloned().fold(0.0, f64::max),
        max_iter: options.max_iter,
        steps: Some(widths.iter().map(|w| options.simplex_fraction * w).collect()),
    };

    let mut evaluations = 0usize;
    let mut objective = |v: &[f64]| {
        evaluations += 1;
        match cal.misfit(v) {
            Ok(m) => m + mu * box_distance_sq(v, &bx),
            Err(_) => f64::NAN,
        }
    };

    let mut starts = Vec::with_capacity(options.n_starts);
    for start in space.sample(options.n_starts, options.seed)? {
        let first = nelder_mead(&mut objective, &start, &nm);
        let report = match first {
            Ok(r1) => {
                let r = nelder_mead(&mut objective, &r1.x, &nm)?;
                StartReport {
                    misfit: cal.misfit(&r.x)?,
                    penalized: r.f,
                    iterations: r1.iterations + r.iterations,
                    converged: r.converged,
                    start,
                    end: r.x,
                    failed: false,
                }
            }
            Err(Error::NonFiniteStart) => StartReport {
                end: start.clone(),
                start,
                misfit: f64::NAN,
                penalized: f64::NAN,
                iterations: 0,
                converged: false,
                failed: true,
            },
            Err(e) => return Err(e),
        };
        starts.push(report);
    }

    let best = starts
        .iter()
        .filter(|s| !s.failed)
        .fold(None::<&StartReport>, |acc, s| match acc {
            Some(b) if b.misfit <= s.misfit => Some(b),
            _ => Some(s),
        })
        .ok_or(Error::AllStartsFailed(options.n_starts))?;
    Ok(MapEstimate {
        v_map: best.end.clone(),
        misfit: best.misfit,
        penalty_weight: mu,
        starts: starts.clone(),
        evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaEstimate {
    pub sigma: f64,
    /// The misfit was zero and `sigma` was clamped to the floor.
    pub floored: bool,
}

/// `sigma^2 = misfit / K`, floored at `1e-12 * max |u_exp|`.
pub fn estimate_sigma_from_misfit(misfit: f64, k: usize, max_abs_obs: f64) -> Result<SigmaEstimate> {
    if k == 0 {
        return Err(Error::InvalidArgument("at least one observation is required"));
    }
    let sigma = libm::sqrt(misfit / k as f64);
    let floor = 1e-12 * max_abs_obs;
    if sigma > floor && sigma.is_finite() {
        return Ok(SigmaEstimate {
            sigma,
            floored: false,
        });
    }
    let floor = if floor > 0.0 { floor } else { f64::MIN_POSITIVE };
    Ok(SigmaEstimate {
        sigma: floor,
        floored: true,
    })
}

pub fn estimate_sigma<M: ForwardModel + ?Sized>(
    model: &M,
    obs: &ObservationSet,
    v_map: &[f64],
) -> Result<SigmaEstimate> {
    let m = misfit(model, obs, v_map)?;
    estimate_sigma_from_misfit(m, obs.len(), obs.max_abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceCovariance {
    /// Row-major `N x N`.
    pub covariance: Vec<f64>,
    /// Directions along which `J^T J` is numerically singular.
    pub flat_directions: usize,
}

/// `sigma^2 (J^T J)^+` from a row-major `K x N` Jacobian. Eigenvalues below
/// `1e-12` of the largest are treated as zero.
pub fn covariance_from_jacobian(jac: &[f64], k: usize, n: usize, sigma: f64) -> Result<LaplaceCovariance> {
    if jac.len() != k * n {
        return Err(Error::ValueCount {
            expected: k * n,
            got: jac.len(),
        });
    }
    let j = DMatrix::from_row_slice(k, n, jac);
    let jtj = j.transpose() * &j;
    let eig = SymmetricEigen::new(jtj);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if !(lmax > 0.0 && lmax.is_finite()) {
        return Err(Error::Numerical("jacobian vanishes at the MAP point"));
    }
    let mut flat = 0;
    let inv: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if l > 1e-12 * lmax {
                1.0 / l
            } else {
                flat += 1;
                0.0
            }
        })
        .collect();
    let v = &eig.eigenvectors;
    let s2 = sigma * sigma;
    let mut cov = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for (e, il) in inv.iter().enumerate() {
                acc += v[(r, e)] * il * v[(c, e)];
            }
            cov[r * n + c] = s2 * acc;
        }
    }
    // exact symmetry
    for r in 0..n {
        for c in 0..r {
            let m = 0.5 * (cov[r * n + c] + cov[c * n + r]);
            cov[r * n + c] = m;
            cov[c * n + r] = m;
        }
    }
    Ok(LaplaceCovariance {
        covariance: cov,
        flat_directions: flat,
    })
}

/// Finite-difference steps `1e-4 * width` of the prior box.
pub fn fd_steps(space: &ParamSpace) -> Vec<f64> {
    prior_box(space).iter().map(|(lo, hi)| 1e-4 * (hi - lo)).collect()
}

pub fn laplace_covariance<M: ForwardModel + ?Sized>(
    model: &M,
    obs: &ObservationSet,
    v_map: &[f64],
    sigma: f64,
    steps: &[f64],
) -> Result<LaplaceCovariance> {
    let cal = Calibration::new(model, obs)?;
    let jac = cal.jacobian(v_map, steps)?;
    covariance_from_jacobian(&jac, cal.len(), model.dim(), sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    /// Row-major `N x N`.
    pub covariance: Vec<f64>,
    pub sigma_meas: f64,
    pub sigma_floored: bool,
    pub flat_directions: usize,
    pub map: MapEstimate,
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| libm::sqrt(self.covariance[i * n + i].max(0.0)))
            .collect()
    }
}

/// MAP, noise level and Laplace covariance in one pass.
pub fn calibrate<M: ForwardModel + ?Sized>(
    model: &M,
    obs: &ObservationSet,
    space: &ParamSpace,
    options: &MapOptions,
) -> Result<GaussianPosterior> {
    let map = find_map(model, obs, space, options)?;
    let sigma = estimate_sigma_from_misfit(map.misfit, obs.len(), obs.max_abs())?;
    let cov = laplace_covariance(model, obs, &map.v_map, sigma.sigma, &fd_steps(space))?;
    Ok(GaussianPosterior {
        names: space.names().map(|s| s.to_string()).collect(),
        mean: map.v_map.clone(),
        covariance: cov.covariance,
        sigma_meas: sigma.sigma,
        sigma_floored: sigma.floored,
        flat_directions: cov.flat_directions,
        map,
    })
}
