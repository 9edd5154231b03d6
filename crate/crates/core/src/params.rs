//! Uncertain-parameter spaces and their prior distributions.
//!
//! Parameters are taken as given: if a physical quantity is modelled through
//! a transform (say the base-10 logarithm of a convection coefficient), the
//! space describes the transformed variable and the label only documents it.
//!
//! Random streams come from ChaCha20 seeded with `seed_from_u64`, so a given
//! `(space, count, seed)` triple yields the same points on every platform.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::distr::{Distribution as _, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, std: f64 },
}

impl Distribution {
    pub fn density(&self, x: f64) -> f64 {
        match *self {
            Distribution::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Distribution::Gaussian { mean, std } => {
                let z = (x - mean) / std;
                libm::exp(-0.5 * z * z) / (std * libm::sqrt(2.0 * PI))
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            Distribution::Gaussian { mean, .. } => mean,
        }
    }

    pub fn std(&self) -> f64 {
        match *self {
            Distribution::Uniform { lo, hi } => (hi - lo) / libm::sqrt(12.0),
            Distribution::Gaussian { std, .. } => std,
        }
    }

    /// Bounded support, if any.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            Distribution::Uniform { lo, hi } => Some((lo, hi)),
            Distribution::Gaussian { .. } => None,
        }
    }

    /// Characteristic width: the interval length for a uniform, six standard
    /// deviations for a Gaussian.
    pub fn width(&self) -> f64 {
        match *self {
            Distribution::Uniform { lo, hi } => hi - lo,
            Distribution::Gaussian { std, .. } => 6.0 * std,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let bad = |reason| Error::InvalidParam {
            name: name.into(),
            reason,
        };
        match *self {
            Distribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite()) {
                    return Err(bad("uniform bounds must be finite"));
                }
                if lo >= hi {
                    return Err(bad("uniform requires lo < hi"));
                }
            }
            Distribution::Gaussian { mean, std } => {
                if !(mean.is_finite() && std.is_finite()) {
                    return Err(bad("gaussian mean and std must be finite"));
                }
                if std <= 0.0 {
                    return Err(bad("gaussian requires std > 0"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub distribution: Distribution,
    /// Free-text note on how the parameter relates to a physical quantity.
    pub transform_label: Option<String>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, distribution: Distribution) -> Self {
        ParamSpec {
            name: name.into(),
            distribution,
            transform_label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.transform_label = Some(label.into());
        self
    }
}

/// Ordered product of independent marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpace {
    params: Vec<ParamSpec>,
}

impl ParamSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::EmptySpace);
        }
        let mut seen = BTreeSet::new();
        for p in &params {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::DuplicateParam(p.name.clone()));
            }
            p.distribution.validate(&p.name)?;
        }
        Ok(ParamSpace { params })
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn center(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.distribution.mean()).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.distribution.width()).collect()
    }

    pub(crate) fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    pub fn prior_density(&self, v: &[f64]) -> Result<f64> {
        self.check_dim(v)?;
        Ok(self
            .params
            .iter()
            .zip(v)
            .map(|(p, &x)| p.distribution.density(x))
            .product())
    }

    /// Draws `count` points, coordinates in parameter order within each point.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1"));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let samplers: Vec<Marginal> = self
            .params
            .iter()
            .map(|p| match p.distribution {
                Distribution::Uniform { lo, hi } => {
                    Marginal::Uniform(Uniform::new_inclusive(lo, hi).expect("validated bounds"))
                }
                Distribution::Gaussian { mean, std } => {
                    Marginal::Gaussian(Normal::new(mean, std).expect("validated std"))
                }
            })
            .collect();
        Ok((0..count)
            .map(|_| {
                samplers
                    .iter()
                    .map(|s| match s {
                        Marginal::Uniform(u) => u.sample(&mut rng),
                        Marginal::Gaussian(n) => n.sample(&mut rng),
                    })
                    .collect()
            })
            .collect())
    }
}

enum Marginal {
    Uniform(Uniform<f64>),
    Gaussian(Normal<f64>),
}
