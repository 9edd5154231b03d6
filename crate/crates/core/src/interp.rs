//! Tensor-product Lagrange interpolation on Cartesian knot grids.
//!
//! Evaluation uses the second (true) barycentric form in each dimension and
//! contracts the resulting one-dimensional basis values against the stored
//! grid values. A coordinate that hits a knot (relative `1e-14`) selects that
//! knot's slice directly.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::leja::{level_to_knots, KnotFamily};

const COINCIDENCE_RTOL: f64 = 1e-14;

fn coincide(a: f64, b: f64) -> bool {
    a == b || libm::fabs(a - b) <= COINCIDENCE_RTOL * libm::fmax(libm::fabs(a), libm::fabs(b))
}

/// Cartesian product of per-dimension knot lists.
///
/// Points are enumerated in row-major order: the last dimension's knot index
/// varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    knots: Vec<Vec<f64>>,
}

impl TensorGrid {
    /// Grid `T_{m(beta)}` sliced from the shared families.
    pub fn for_level(beta: &[u32], families: &mut [KnotFamily]) -> Result<Self> {
        if beta.len() != families.len() {
            return Err(Error::DimensionMismatch {
                expected: families.len(),
                got: beta.len(),
            });
        }
        let knots = beta
            .iter()
            .zip(families.iter_mut())
            .map(|(&b, fam)| Ok(fam.knots(level_to_knots(b)?)?.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_knots(knots)
    }

    pub fn from_knots(knots: Vec<Vec<f64>>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one dimension"));
        }
        for (dim, k) in knots.iter().enumerate() {
            if k.is_empty() {
                return Err(Error::InvalidArgument("every dimension needs a knot"));
            }
            for i in 0..k.len() {
                for j in 0..i {
                    if coincide(k[i], k[j]) {
                        return Err(Error::DuplicateKnots {
                            dim,
                            first: k[j],
                            second: k[i],
                        });
                    }
                }
            }
        }
        Ok(TensorGrid { knots })
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    pub fn len(&self) -> usize {
        self.knots.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn knots(&self) -> &[Vec<f64>] {
        &self.knots
    }

    pub fn point(&self, mut flat: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        for (d, k) in self.knots.iter().enumerate().rev() {
            p[d] = k[flat % k.len()];
            flat /= k.len();
        }
        p
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

/// Barycentric weights, computed on knots rescaled to unit half-width so the
/// products neither overflow nor underflow for physical intervals.
fn barycentric_weights(knots: &[f64]) -> Vec<f64> {
    let (lo, hi) = knots
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let scale = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
    (0..knots.len())
        .map(|j| {
            let prod: f64 = (0..knots.len())
                .filter(|&k| k != j)
                .map(|k| (knots[j] - knots[k]) / scale)
                .product();
            1.0 / prod
        })
        .collect()
}

/// Lagrange basis values `l_j(x)` for all knots of one dimension.
fn basis_values(knots: &[f64], weights: &[f64], x: f64, out: &mut Vec<f64>) {
    out.clear();
    if let Some(hit) = knots.iter().position(|&k| coincide(k, x)) {
        out.extend((0..knots.len()).map(|j| if j == hit { 1.0 } else { 0.0 }));
        return;
    }
    let mut denom = 0.0;
    for (&k, &w) in knots.iter().zip(weights) {
        let t = w / (x - k);
        out.push(t);
        denom += t;
    }
    for t in out.iter_mut() {
        *t /= denom;
    }
}

/// Interpolant of a (possibly vector-valued) function on a tensor grid.
///
/// Values are stored as one contiguous block of `n_outputs` per grid point,
/// in grid enumeration order.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorInterpolant {
    grid: TensorGrid,
    n_outputs: usize,
    values: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

impl TensorInterpolant {
    pub fn new(grid: TensorGrid, n_outputs: usize, values: Vec<f64>) -> Result<Self> {
        if n_outputs == 0 {
            return Err(Error::InvalidArgument("interpolant needs at least one output"));
        }
        let expected = grid.len() * n_outputs;
        if values.len() != expected {
            return Err(Error::ValueCount {
                expected,
                got: values.len(),
            });
        }
        let weights = grid.knots.iter().map(|k| barycentric_weights(k)).collect();
        Ok(TensorInterpolant {
            grid,
            n_outputs,
            values,
            weights,
        })
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn evaluate(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_outputs];
        self.accumulate(v, 1.0, &mut out)?;
        Ok(out)
    }

    /// Adds `scale * U(v)` into `out`.
    pub fn accumulate(&self, v: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        let dim = self.grid.dim();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        if out.len() != self.n_outputs {
            return Err(Error::DimensionMismatch {
                expected: self.n_outputs,
                got: out.len(),
            });
        }
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
        let mut buf = Vec::new();
        for ((knots, weights), &x) in self.grid.knots.iter().zip(&self.weights).zip(v) {
            basis_values(knots, weights, x, &mut buf);
            basis.push(buf.clone());
        }

        let mut idx = vec![0usize; dim];
        let nq = self.n_outputs;
        for block in self.values.chunks_exact(nq) {
            let w: f64 = idx.iter().zip(&basis).map(|(&j, b)| b[j]).product();
            if w != 0.0 {
                let w = w * scale;
                for (o, &val) in out.iter_mut().zip(block) {
                    *o += w * val;
                }
            }
            // row-major odometer
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] < basis[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes_and_order() {
        let mut fams = vec![
            KnotFamily::symmetric_leja(-1.0, 1.0).unwrap(),
            KnotFamily::symmetric_leja(-1.0, 1.0).unwrap(),
        ];
        let g11 = TensorGrid::for_level(&[1, 1], &mut fams).unwrap();
        assert_eq!(g11.points(), vec![vec![0.0, 0.0]]);
        let g21 = TensorGrid::for_level(&[2, 1], &mut fams).unwrap();
        assert_eq!(
            g21.points(),
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]]
        );
        let g22 = TensorGrid::for_level(&[2, 2], &mut fams).unwrap();
        assert_eq!(g22.len(), 9);
        assert_eq!(g22.point(1), vec![0.0, 1.0]);
        assert!(TensorGrid::for_level(&[1], &mut fams).is_err());
        assert!(TensorGrid::for_level(&[0, 1], &mut fams).is_err());
    }

    #[test]
    fn constant_is_reproduced() {
        let g = TensorGrid::from_knots(vec![vec![0.0, 1.0, -1.0], vec![0.3, 0.9]]).unwrap();
        let itp = TensorInterpolant::new(g, 1, vec![2.5; 6]).unwrap();
        for v in [[0.1, -0.4], [3.0, 2.0], [-1.0, 0.9]] {
            assert!((itp.evaluate(&v).unwrap()[0] - 2.5).abs() < 1e-13);
        }
    }

    #[test]
    fn quadratic_in_one_dimension() {
        let g = TensorGrid::from_knots(vec![vec![0.0, 1.0, -1.0]]).unwrap();
        let itp = TensorInterpolant::new(g, 1, vec![0.0, 1.0, 1.0]).unwrap();
        assert!((itp.evaluate(&[0.5]).unwrap()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bilinear_plus_cross_term() {
        let f = |x: f64, y: f64| 3.0 * x + 2.0 * y - x * y;
        let g = TensorGrid::from_knots(vec![vec![0.0, 1.0, -1.0], vec![0.0, 1.0, -1.0]]).unwrap();
        let vals = g.points().iter().map(|p| f(p[0], p[1])).collect();
        let itp = TensorInterpolant::new(g, 1, vals).unwrap();
        let got = itp.evaluate(&[0.3, -0.7]).unwrap()[0];
        assert!((got - (-0.29)).abs() < 1e-14, "{got}");
    }

    #[test]
    fn vector_outputs_share_the_basis() {
        let g = TensorGrid::from_knots(vec![vec![0.0, 1.0, -1.0]]).unwrap();
        let vals = g.points().iter().flat_map(|p| [p[0], p[0] * p[0]]).collect();
        let itp = TensorInterpolant::new(g, 2, vals).unwrap();
        let out = itp.evaluate(&[0.25]).unwrap();
        assert!((out[0] - 0.25).abs() < 1e-15 && (out[1] - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn rejects_duplicates_and_bad_lengths() {
        let dup = TensorGrid::from_knots(vec![vec![1.0, 1.0 + 1e-16]]);
        assert!(matches!(dup, Err(Error::DuplicateKnots { .. })));
        let g = TensorGrid::from_knots(vec![vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            TensorInterpolant::new(g.clone(), 1, vec![1.0]),
            Err(Error::ValueCount { expected: 2, got: 1 })
        ));
        let itp = TensorInterpolant::new(g, 1, vec![1.0, 2.0]).unwrap();
        assert!(itp.evaluate(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn wide_physical_interval_is_stable() {
        let mut fam = vec![KnotFamily::symmetric_leja(1130.0, 1450.0).unwrap()];
        let g = TensorGrid::for_level(&[9], &mut fam).unwrap();
        let vals: Vec<f64> = g
            .points()
            .iter()
            .map(|p| libm::tanh((p[0] - 1290.0) / 160.0))
            .collect();
        let itp = TensorInterpolant::new(g, 1, vals).unwrap();
        let v = 1333.3;
        let err = (itp.evaluate(&[v]).unwrap()[0] - libm::tanh((v - 1290.0) / 160.0)).abs();
        assert!(err < 1e-8, "{err}");
    }
}
