//! Forward propagation: push parameter draws through a model, estimate
//! per-output densities and summarise them by mode and quantile band.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution as _, StandardNormal};

use crate::bayes::{ForwardModel, GaussianPosterior};
use crate::error::{Error, Result};
use crate::params::ParamSpace;

/// Default number of forward draws.
pub const DEFAULT_SAMPLES: usize = 10_000;
/// Points of the density evaluation grid.
pub const KDE_GRID: usize = 512;

#[derive(Debug, Clone, Copy)]
pub enum SampleSource<'a> {
    Prior(&'a ParamSpace),
    Posterior(&'a GaussianPosterior),
}

impl SampleSource<'_> {
    pub fn dim(&self) -> usize {
        match self {
            SampleSource::Prior(s) => s.dim(),
            SampleSource::Posterior(p) => p.dim(),
        }
    }

    pub fn draw(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        match self {
            SampleSource::Prior(space) => space.sample(count, seed),
            SampleSource::Posterior(post) => sample_gaussian(&post.mean, &post.covariance, count, seed),
        }
    }
}

/// Draws `mean + V sqrt(max(L, 0)) z` with `C = V L V^T`.
pub fn sample_gaussian(mean: &[f64], covariance: &[f64], count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = mean.len();
    if covariance.len() != n * n {
        return Err(Error::ValueCount {
            expected: n * n,
            got: covariance.len(),
        });
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, covariance));
    let mut root = eig.eigenvectors.clone();
    for (c, &l) in eig.eigenvalues.iter().enumerate() {
        let s = libm::sqrt(l.max(0.0));
        for r in 0..n {
            root[(r, c)] *= s;
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut z = vec![0.0; n];
    Ok((0..count)
        .map(|_| {
            z.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
            (0..n)
                .map(|r| mean[r] + (0..n).map(|c| root[(r, c)] * z[c]).sum::<f64>())
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PushedSamples {
    pub qoi_names: Vec<String>,
    /// `per_qoi[j][s]`.
    pub per_qoi: Vec<Vec<f64>>,
    pub extrapolated: usize,
    pub count: usize,
}

impl PushedSamples {
    pub fn extrapolated_fraction(&self) -> f64 {
        self.extrapolated as f64 / self.count as f64
    }
}

pub fn push_samples<M: ForwardModel + ?Sized>(
    model: &M,
    source: SampleSource<'_>,
    count: usize,
    seed: u64,
) -> Result<PushedSamples> {
    if count < 2 {
        return Err(Error::InvalidArgument("at least two samples are required"));
    }
    if source.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: source.dim(),
        });
    }
    let nq = model.qoi_names().len();
    let mut per_qoi = vec![Vec::with_capacity(count); nq];
    let mut out = vec![0.0; nq];
    let mut extrapolated = 0;
    for v in source.draw(count, seed)? {
        if model.evaluate_into(&v, &mut out)? {
            extrapolated += 1;
        }
        for (col, &x) in per_qoi.iter_mut().zip(&out) {
            col.push(x);
        }
    }
    Ok(PushedSamples {
        qoi_names: model.qoi_names().to_vec(),
        per_qoi,
        extrapolated,
        count,
    })
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Linear interpolation between order statistics at `h = (S - 1) p + 1`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.len() < 2 {
        return Err(Error::InvalidArgument("at least two samples are required"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument("probability must lie in (0, 1)"));
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let frac = h - lo as f64;
    if lo + 1 >= sorted.len() {
        return Ok(sorted[sorted.len() - 1]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

pub fn quantiles(samples: &[f64], probs: &[f64]) -> Result<Vec<f64>> {
    let s = sorted(samples);
    probs.iter().map(|&p| quantile_sorted(&s, p)).collect()
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

/// `0.9 min(std, IQR / 1.34) S^(-1/5)`; falls back to `std` when the IQR is
/// zero.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let s = sorted(samples);
    let (_, std) = mean_std(&s);
    let iqr = quantile_sorted(&s, 0.75)? - quantile_sorted(&s, 0.25)?;
    let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    Ok(0.9 * spread * libm::pow(s.len() as f64, -0.2))
}

/// Gaussian-kernel density estimate on an equispaced grid.
///
/// Samples are linearly binned onto the grid and the binned counts are
/// convolved with the kernel, so cost is `O(S + G^2)` rather than `O(S G)`.
/// The binning error is second order in `spacing / bandwidth`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdfEstimate {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    /// All samples equal this value; grid and density are empty.
    pub degenerate: Option<f64>,
}

impl PdfEstimate {
    /// Grid spacing, i.e. the resolution of [`PdfEstimate::mode`].
    pub fn resolution(&self) -> f64 {
        if self.grid.len() < 2 {
            0.0
        } else {
            self.grid[1] - self.grid[0]
        }
    }

    /// Abscissa of the largest density value; the smallest one on ties.
    pub fn mode(&self) -> f64 {
        if let Some(v) = self.degenerate {
            return v;
        }
        let mut best = 0;
        for (i, &d) in self.density.iter().enumerate() {
            if d > self.density[best] {
                best = i;
            }
        }
        self.grid[best]
    }

    pub fn integral(&self) -> f64 {
        let h = self.resolution();
        self.density.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum()
    }
}

pub fn kde(samples: &[f64], bandwidth: Option<f64>) -> Result<PdfEstimate> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("at least two samples are required"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("samples must be finite"));
    }
    let (min, max) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    if min == max {
        return Ok(PdfEstimate {
            bandwidth: 0.0,
            grid: Vec::new(),
            density: Vec::new(),
            degenerate: Some(min),
        });
    }
    let bw = match bandwidth {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(_) => return Err(Error::InvalidArgument("bandwidth must be positive")),
        None => silverman_bandwidth(samples)?,
    };
    let lo = min - 3.0 * bw;
    let hi = max + 3.0 * bw;
    let g = KDE_GRID;
    let step = (hi - lo) / (g - 1) as f64;
    let grid: Vec<f64> = (0..g).map(|i| lo + step * i as f64).collect();

    let mut counts = vec![0.0; g];
    for &x in samples {
        let t = (x - lo) / step;
        let i = (libm::floor(t) as usize).min(g - 2);
        let frac = t - i as f64;
        counts[i] += 1.0 - frac;
        counts[i + 1] += frac;
    }
    let norm = 1.0 / (samples.len() as f64 * bw * libm::sqrt(2.0 * core::f64::consts::PI));
    let kernel: Vec<f64> = (0..g)
        .map(|d| {
            let u = d as f64 * step / bw;
            libm::exp(-0.5 * u * u)
        })
        .collect();
    let density = (0..g)
        .map(|i| {
            let s: f64 = counts
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(j, c)| c * kernel[i.abs_diff(j)])
                .sum();
            s * norm
        })
        .collect();
    Ok(PdfEstimate {
        bandwidth: bw,
        grid,
        density,
        degenerate: None,
    })
}

/// Direct kernel sum, used as a reference for the binned estimate.
pub fn kde_exact(samples: &[f64], bandwidth: f64, x: f64) -> f64 {
    let norm = 1.0 / (samples.len() as f64 * bandwidth * libm::sqrt(2.0 * core::f64::consts::PI));
    samples
        .iter()
        .map(|s| {
            let u = (x - s) / bandwidth;
            libm::exp(-0.5 * u * u)
        })
        .sum::<f64>()
        * norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandRow {
    pub qoi: String,
    pub mode: f64,
    pub q05: f64,
    pub q95: f64,
    pub extrapolated_fraction: f64,
}

impl BandRow {
    pub fn width(&self) -> f64 {
        self.q95 - self.q05
    }
}

/// Mode and 5%–95% band per output.
pub fn band_summary(
    pushed: &PushedSamples,
    bandwidth: Option<f64>,
) -> Result<(Vec<BandRow>, Vec<PdfEstimate>)> {
    let frac = pushed.extrapolated_fraction();
    let mut rows = Vec::with_capacity(pushed.per_qoi.len());
    let mut pdfs = Vec::with_capacity(pushed.per_qoi.len());
    for (name, samples) in pushed.qoi_names.iter().zip(&pushed.per_qoi) {
        let pdf = kde(samples, bandwidth)?;
        let s = sorted(samples);
        rows.push(BandRow {
            qoi: name.clone(),
            mode: pdf.mode(),
            q05: quantile_sorted(&s, 0.05)?,
            q95: quantile_sorted(&s, 0.95)?,
            extrapolated_fraction: frac,
        });
        pdfs.push(pdf);
    }
    Ok((rows, pdfs))
}

/// `100 / J * sum_j (W_prior,j - W_post,j) / W_prior,j`.
pub fn uncertainty_reduction(prior: &[BandRow], post: &[BandRow]) -> Result<f64> {
    if prior.len() != post.len() || prior.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: prior.len(),
            got: post.len(),
        });
    }
    let mut acc = 0.0;
    for (a, b) in prior.iter().zip(post) {
        if a.qoi != b.qoi {
            return Err(Error::UnknownQoi(b.qoi.clone()));
        }
        let w = a.width();
        if !(w > 0.0) {
            return Err(Error::ZeroPriorWidth(a.qoi.clone()));
        }
        acc += (w - b.width()) / w;
    }
    Ok(100.0 * acc / prior.len() as f64)
}
