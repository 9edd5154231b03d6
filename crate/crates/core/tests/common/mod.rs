#![allow(dead_code)]

use std::collections::BTreeMap;

use misc_uq_core::error::OracleError;
use misc_uq_core::oracle::{Backend, EvalResult};
use misc_uq_core::{ExtMultiIndex, MultiIndexSet};
use rand::Rng;

/// Grows a random downward-closed set from the root by repeatedly adding a
/// random reduced-margin element.
pub fn random_downward_closed<R: Rng>(rng: &mut R, dim: usize, size: usize) -> MultiIndexSet {
    let mut set = MultiIndexSet::root(dim);
    while set.len() < size {
        let margin: Vec<_> = set.reduced_margin().into_iter().collect();
        let pick = margin[rng.random_range(0..margin.len())].clone();
        set.insert(pick).unwrap();
    }
    set
}

/// Expands `sum_{k in I} prod_d (U_{k_d} - U_{k_d - 1})` term by term, with
/// `U_0 = 0`, and collects the weight of every tensor operator.
pub fn brute_force_coefficients(set: &MultiIndexSet) -> BTreeMap<ExtMultiIndex, i64> {
    let mut acc: BTreeMap<Vec<u32>, i64> = BTreeMap::new();
    for k in set.iter() {
        let comps: Vec<u32> = std::iter::once(k.alpha).chain(k.beta.iter().copied()).collect();
        // product of binomials: start with the empty term and multiply out
        let mut terms: Vec<(Vec<u32>, i64)> = vec![(Vec::new(), 1)];
        for &c in &comps {
            let mut next = Vec::new();
            for (t, w) in &terms {
                let mut a = t.clone();
                a.push(c);
                next.push((a, *w));
                if c > 1 {
                    let mut b = t.clone();
                    b.push(c - 1);
                    next.push((b, -*w));
                }
            }
            terms = next;
        }
        for (t, w) in terms {
            *acc.entry(t).or_insert(0) += w;
        }
    }
    acc.into_iter()
        .filter(|(_, w)| *w != 0)
        .map(|(t, w)| (ExtMultiIndex::new(t[0], t[1..].to_vec()).unwrap(), w))
        .collect()
}

/// `f_alpha(v) = g_q(v) + 2^-alpha h_q(v)` for smooth `g`, `h`; QoIs are
/// named `q0`, `q1`, ... and may be requested in any subset.
#[derive(Debug, Clone, Copy, Default)]
pub struct Analytic;

impl Analytic {
    pub fn value(alpha: u32, v: &[f64], q: usize) -> f64 {
        let s: f64 = v.iter().enumerate().map(|(d, x)| (d as f64 + 1.0) * x).sum();
        let g = (0.3 * s + 0.1 * q as f64).sin() + 0.05 * v[0] * v[0];
        let h = (0.5 * s).cos() * (1.0 + q as f64);
        g + h * 0.5f64.powi(alpha as i32)
    }
}

impl Backend for Analytic {
    fn evaluate(
        &self,
        fidelity: u32,
        points: &[Vec<f64>],
        qois: &[String],
    ) -> Result<Vec<EvalResult>, OracleError> {
        let idx: Vec<usize> = qois
            .iter()
            .map(|q| {
                q.strip_prefix('q')
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| OracleError::UnknownQoi(q.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(points
            .iter()
            .map(|p| Ok(idx.iter().map(|&q| Self::value(fidelity, p, q)).collect()))
            .collect())
    }
}

pub fn qois(n: usize) -> Vec<String> {
    (0..n).map(|q| format!("q{q}")).collect()
}

/// `u_k(v) = A_k . v + b_k`.
pub struct Linear {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub names: Vec<String>,
}

impl Linear {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Self {
        let names = (0..a.len()).map(|k| format!("u{}", k + 1)).collect();
        Linear { a, b, names }
    }
}

impl misc_uq_core::ForwardModel for Linear {
    fn dim(&self) -> usize {
        self.a[0].len()
    }

    fn qoi_names(&self) -> &[String] {
        &self.names
    }

    fn evaluate_into(&self, v: &[f64], out: &mut [f64]) -> misc_uq_core::Result<bool> {
        for ((o, row), b) in out.iter_mut().zip(&self.a).zip(&self.b) {
            *o = row.iter().zip(v).map(|(x, y)| x * y).sum::<f64>() + b;
        }
        Ok(false)
    }
}

/// Solves `M x = r` for each column `r` of `rhs` by Gauss-Jordan elimination
/// with partial pivoting; `m` is row-major `n x n`.
pub fn solve(m: &[f64], n: usize, rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = rhs.len();
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = m[i * n..(i + 1) * n].to_vec();
            row.extend(rhs.iter().map(|r| r[i]));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| aug[i][c].abs().total_cmp(&aug[j][c].abs()))
            .unwrap();
        aug.swap(c, p);
        let piv = aug[c][c];
        for x in aug[c].iter_mut() {
            *x /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = aug[r][c];
                let pivot_row = aug[c].clone();
                for (x, y) in aug[r].iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
            }
        }
    }
    (0..cols)
        .map(|j| (0..n).map(|i| aug[i][n + j]).collect())
        .collect()
}

/// Closed-form posterior of `y = A v + b + noise` under a flat prior:
/// mean `(A^T A)^-1 A^T (y - b)`, `sigma^2 = |r|^2 / K`, covariance
/// `sigma^2 (A^T A)^-1` (row-major).
pub fn linear_gaussian(model: &Linear, y: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
    let n = model.a[0].len();
    let k = y.len();
    let mut ata = vec![0.0; n * n];
    let mut aty = vec![0.0; n];
    for (row, (yk, bk)) in model.a.iter().zip(y.iter().zip(&model.b)) {
        for i in 0..n {
            aty[i] += row[i] * (yk - bk);
            for j in 0..n {
                ata[i * n + j] += row[i] * row[j];
            }
        }
    }
    let mean = solve(&ata, n, &[aty]).remove(0);
    let ss: f64 = model
        .a
        .iter()
        .zip(y.iter().zip(&model.b))
        .map(|(row, (yk, bk))| {
            let pred: f64 = row.iter().zip(&mean).map(|(a, v)| a * v).sum::<f64>() + bk;
            (yk - pred).powi(2)
        })
        .sum();
    let sigma2 = ss / k as f64;
    let unit: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let inv = solve(&ata, n, &unit);
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cov[i * n + j] = sigma2 * inv[j][i];
        }
    }
    (mean, sigma2.sqrt(), cov)
}
