//! Nested univariate knot families.
//!
//! Both families are built greedily over a dense equispaced candidate grid
//! on a reference domain and then mapped affinely:
//!
//! * symmetric Leja on `[-1, 1]`: seed `0`; every even step maximises
//!   `prod_j |x - x_j|` over `100_001` candidates and every odd step adds the
//!   mirror of the previous knot, so odd-length prefixes are symmetric sets;
//! * weighted Gaussian Leja for the standard normal: seed `0`; every step
//!   maximises `exp(-x^2 / 4) * prod_j |x - x_j|` over `200_001` candidates
//!   on `[-10, 10]`.
//!
//! Ties go to the smallest abscissa, except the second symmetric knot, which
//! is the positive endpoint. Objective values within a relative `1e-12` of
//! each other count as ties, so the choice does not depend on the order in
//! which the distance products were accumulated.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const SYMMETRIC_CANDIDATES: usize = 100_001;
pub const GAUSSIAN_CANDIDATES: usize = 200_001;
/// Half-width of the truncated candidate domain for Gaussian Leja knots.
pub const GAUSSIAN_TRUNCATION: f64 = 10.0;

const TIE_RTOL: f64 = 1e-12;

/// Number of knots used at level `i`: `m(i) = 2i - 1`.
pub fn level_to_knots(level: u32) -> Result<usize> {
    if level == 0 {
        return Err(Error::ZeroLevel);
    }
    Ok(2 * level as usize - 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KnotKind {
    SymmetricLeja { lo: f64, hi: f64 },
    WeightedGaussianLeja { mean: f64, std: f64 },
}

/// Where reference knots are sent by [`affine_map`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KnotTarget {
    /// `[-1, 1]` onto `[lo, hi]`.
    Interval { lo: f64, hi: f64 },
    /// Standard-normal abscissas onto `mean + std * x`.
    Normal { mean: f64, std: f64 },
}

impl KnotKind {
    pub fn target(&self) -> KnotTarget {
        match *self {
            KnotKind::SymmetricLeja { lo, hi } => KnotTarget::Interval { lo, hi },
            KnotKind::WeightedGaussianLeja { mean, std } => KnotTarget::Normal { mean, std },
        }
    }

    /// Box on which a surrogate built from this family is considered an
    /// interpolant rather than an extrapolant.
    pub fn trusted_range(&self) -> (f64, f64) {
        match *self {
            KnotKind::SymmetricLeja { lo, hi } => (lo, hi),
            KnotKind::WeightedGaussianLeja { mean, std } => (mean - 4.0 * std, mean + 4.0 * std),
        }
    }
}

pub fn affine_map(reference: &[f64], target: KnotTarget) -> Result<Vec<f64>> {
    match target {
        KnotTarget::Interval { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
                return Err(Error::DegenerateTarget("interval requires lo < hi"));
            }
            // centre-plus-offset keeps symmetric reference sets symmetric;
            // endpoints are pinned so they never round outside the interval
            let centre = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            Ok(reference
                .iter()
                .map(|&x| match x {
                    x if x <= -1.0 => lo,
                    x if x >= 1.0 => hi,
                    x => (centre + half * x).clamp(lo, hi),
                })
                .collect())
        }
        KnotTarget::Normal { mean, std } => {
            if !(mean.is_finite() && std.is_finite()) || std <= 0.0 {
                return Err(Error::DegenerateTarget("normal target requires std > 0"));
            }
            Ok(reference.iter().map(|&x| mean + std * x).collect())
        }
    }
}

/// A knot family together with its cached prefix.
///
/// Knots are generated on demand and never regenerated for a shorter count,
/// so every grid slicing the family sees bit-identical abscissas. Equality
/// compares the kind only, since the cached prefix is determined by it.
#[derive(Debug, Clone)]
pub struct KnotFamily {
    kind: KnotKind,
    reference: Vec<f64>,
    mapped: Vec<f64>,
}

impl PartialEq for KnotFamily {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl KnotFamily {
    pub fn new(kind: KnotKind) -> Result<Self> {
        // validates the target
        affine_map(&[], kind.target())?;
        Ok(KnotFamily {
            kind,
            reference: Vec::new(),
            mapped: Vec::new(),
        })
    }

    pub fn symmetric_leja(lo: f64, hi: f64) -> Result<Self> {
        Self::new(KnotKind::SymmetricLeja { lo, hi })
    }

    pub fn weighted_gaussian_leja(mean: f64, std: f64) -> Result<Self> {
        Self::new(KnotKind::WeightedGaussianLeja { mean, std })
    }

    pub fn kind(&self) -> KnotKind {
        self.kind
    }

    pub fn cached_len(&self) -> usize {
        self.mapped.len()
    }

    /// Extends the cache to at least `count` knots.
    pub fn ensure(&mut self, count: usize) {
        if count <= self.reference.len() {
            return;
        }
        // regeneration is deterministic, so growing geometrically only
        // changes how often the greedy search reruns
        let target = count.max(2 * self.reference.len()).max(9);
        self.reference = reference_sequence(self.kind, target);
        self.mapped = affine_map(&self.reference, self.kind.target()).expect("validated target");
    }

    pub fn knots(&mut self, count: usize) -> Result<&[f64]> {
        if count == 0 {
            return Err(Error::InvalidArgument("knot count must be at least 1"));
        }
        self.ensure(count);
        Ok(&self.mapped[..count])
    }

    /// Cached prefix without extending, `None` if not enough knots are cached.
    pub fn cached(&self, count: usize) -> Option<&[f64]> {
        self.mapped.get(..count)
    }

    /// Reference-domain knots (`[-1, 1]` or standard normal).
    pub fn reference(&self) -> &[f64] {
        &self.reference
    }
}

fn reference_sequence(kind: KnotKind, count: usize) -> Vec<f64> {
    match kind {
        KnotKind::SymmetricLeja { .. } => symmetric_leja_reference(count),
        KnotKind::WeightedGaussianLeja { .. } => gaussian_leja_reference(count),
    }
}

/// `(2i - M) / M` is exact in the numerator, so the grid is exactly symmetric.
fn symmetric_grid(points: usize, half_width: f64) -> Vec<f64> {
    let m = (points - 1) as f64;
    (0..points)
        .map(|i| half_width * (2.0 * i as f64 - m) / m)
        .collect()
}

struct Greedy {
    candidates: Vec<f64>,
    weight: Option<Vec<f64>>,
    product: Vec<f64>,
    knots: Vec<f64>,
}

impl Greedy {
    fn new(candidates: Vec<f64>, weight: Option<Vec<f64>>) -> Self {
        let product = vec![1.0; candidates.len()];
        Greedy {
            candidates,
            weight,
            product,
            knots: Vec::new(),
        }
    }

    fn push(&mut self, x: f64) {
        for (p, &c) in self.product.iter_mut().zip(&self.candidates) {
            *p *= libm::fabs(c - x);
        }
        self.knots.push(x);
    }

    fn objective(&self, i: usize) -> f64 {
        match &self.weight {
            Some(w) => w[i] * self.product[i],
            None => self.product[i],
        }
    }

    /// Index of the maximal objective; scans ascending (smallest abscissa
    /// wins ties) or descending (largest wins).
    fn argmax(&self, prefer_largest: bool) -> usize {
        let n = self.candidates.len();
        let mut best = if prefer_largest { n - 1 } else { 0 };
        let mut best_val = self.objective(best);
        let mut consider = |i: usize| {
            let v = self.objective(i);
            if v > best_val * (1.0 + TIE_RTOL) {
                best = i;
                best_val = v;
            }
        };
        if prefer_largest {
            (0..n).rev().for_each(&mut consider);
        } else {
            (0..n).for_each(&mut consider);
        }
        best
    }
}

fn symmetric_leja_reference(count: usize) -> Vec<f64> {
    let mut g = Greedy::new(symmetric_grid(SYMMETRIC_CANDIDATES, 1.0), None);
    g.push(0.0);
    while g.knots.len() < count {
        let step = g.knots.len() + 1;
        let x = if step.is_multiple_of(2) {
            g.candidates[g.argmax(step == 2)]
        } else {
            -g.knots[g.knots.len() - 1]
        };
        g.push(x);
    }
    g.knots
}

fn gaussian_leja_reference(count: usize) -> Vec<f64> {
    let candidates = symmetric_grid(GAUSSIAN_CANDIDATES, GAUSSIAN_TRUNCATION);
    let weight = candidates.iter().map(|&x| libm::exp(-0.25 * x * x)).collect();
    let mut g = Greedy::new(candidates, Some(weight));
    g.push(0.0);
    while g.knots.len() < count {
        let x = g.candidates[g.argmax(false)];
        g.push(x);
    }
    g.knots
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_map() {
        assert_eq!(level_to_knots(1).unwrap(), 1);
        assert_eq!(level_to_knots(2).unwrap(), 3);
        assert_eq!(level_to_knots(4).unwrap(), 7);
        assert_eq!(level_to_knots(0), Err(Error::ZeroLevel));
    }

    #[test]
    fn first_symmetric_knots() {
        let mut f = KnotFamily::symmetric_leja(-1.0, 1.0).unwrap();
        assert_eq!(f.knots(1).unwrap(), &[0.0]);
        assert_eq!(f.knots(3).unwrap(), &[0.0, 1.0, -1.0]);
    }

    #[test]
    fn first_gaussian_knot() {
        let mut f = KnotFamily::weighted_gaussian_leja(0.0, 1.0).unwrap();
        assert_eq!(f.knots(1).unwrap(), &[0.0]);
        // second knot sits at the maximiser of |x| exp(-x^2/4), i.e. ±sqrt(2)
        let k = f.knots(2).unwrap()[1];
        assert!((libm::fabs(k) - libm::sqrt(2.0)).abs() < 1e-4, "{k}");
        assert!(k < 0.0, "ties go to the smallest abscissa");
    }

    #[test]
    fn affine_examples() {
        assert_eq!(
            affine_map(
                &[-1.0, 0.0, 1.0],
                KnotTarget::Interval {
                    lo: 1130.0,
                    hi: 1450.0
                }
            )
            .unwrap(),
            vec![1130.0, 1290.0, 1450.0]
        );
        assert_eq!(
            affine_map(&[0.0], KnotTarget::Interval { lo: -5.0, hi: 0.0 }).unwrap(),
            vec![-2.5]
        );
        assert_eq!(
            affine_map(
                &[0.0],
                KnotTarget::Normal {
                    mean: -3.0,
                    std: 0.92
                }
            )
            .unwrap(),
            vec![-3.0]
        );
        assert!(affine_map(&[0.0], KnotTarget::Interval { lo: 1.0, hi: 1.0 }).is_err());
        assert!(affine_map(&[0.0], KnotTarget::Normal { mean: 0.0, std: -1.0 }).is_err());
        assert!(KnotFamily::weighted_gaussian_leja(0.0, 0.0).is_err());
    }

    #[test]
    fn mapped_knots_stay_in_interval() {
        let mut f = KnotFamily::symmetric_leja(1130.0, 1450.0).unwrap();
        let k = f.knots(15).unwrap();
        assert!(k.iter().all(|&x| (1130.0..=1450.0).contains(&x)));
        assert_eq!(k[0], 1290.0);
    }

    #[test]
    fn growing_keeps_prefix() {
        let mut f = KnotFamily::weighted_gaussian_leja(1.0, 2.0).unwrap();
        let short = f.knots(5).unwrap().to_vec();
        let long = f.knots(11).unwrap().to_vec();
        assert_eq!(&long[..5], &short[..]);
        assert!(f.knots(0).is_err());
    }
}
