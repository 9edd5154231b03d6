//! The model boundary `f_alpha(v)`.
//!
//! A [`Backend`] answers batches of point evaluations at one fidelity. The
//! [`Evaluator`] puts an [`EvalCache`] in front of it: coordinates are keyed
//! by their exact bit patterns, which is sound because knot families are
//! deterministic and nested grids reuse identical abscissas.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::OracleError;

/// Outcome for one point: one value per requested QoI, or a failure message.
pub type EvalResult = Result<Vec<f64>, String>;

pub trait Backend {
    /// Evaluates `points` at `fidelity`, returning one outcome per point in
    /// request order. Per-point failures go in the outcome; an `Err` aborts
    /// the whole batch.
    fn evaluate(
        &self,
        fidelity: u32,
        points: &[Vec<f64>],
        qois: &[String],
    ) -> Result<Vec<EvalResult>, OracleError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn evaluate(
        &self,
        fidelity: u32,
        points: &[Vec<f64>],
        qois: &[String],
    ) -> Result<Vec<EvalResult>, OracleError> {
        (**self).evaluate(fidelity, points, qois)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn evaluate(
        &self,
        fidelity: u32,
        points: &[Vec<f64>],
        qois: &[String],
    ) -> Result<Vec<EvalResult>, OracleError> {
        (**self).evaluate(fidelity, points, qois)
    }
}

/// Exact binary image of a point.
pub fn point_key(point: &[f64]) -> Vec<u64> {
    point.iter().map(|x| x.to_bits()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct CacheKey {
    fidelity: u32,
    point: Vec<u64>,
}

/// One `(fidelity, point, qoi) -> value` entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheRecord {
    pub fidelity: u32,
    pub point: Vec<f64>,
    pub qoi: String,
    pub value: f64,
}

/// In-memory evaluation store.
///
/// Records inserted after construction are also appended to a journal so a
/// persistence layer can write only what is new.
#[derive(Debug, Clone, Default)]
pub struct EvalCache {
    map: BTreeMap<CacheKey, BTreeMap<String, f64>>,
    journal: Vec<CacheRecord>,
}

impl EvalCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Restores a persisted record without journaling it.
    pub fn restore(&mut self, record: CacheRecord) {
        self.put(&record.point, record.fidelity, record.qoi, record.value);
    }

    pub fn insert(&mut self, fidelity: u32, point: &[f64], qoi: &str, value: f64) {
        let prev = self.put(point, fidelity, qoi.to_string(), value);
        if prev.map(f64::to_bits) != Some(value.to_bits()) {
            self.journal.push(CacheRecord {
                fidelity,
                point: point.to_vec(),
                qoi: qoi.to_string(),
                value,
            });
        }
    }

    fn put(&mut self, point: &[f64], fidelity: u32, qoi: String, value: f64) -> Option<f64> {
        let key = CacheKey {
            fidelity,
            point: point_key(point),
        };
        self.map.entry(key).or_default().insert(qoi, value)
    }

    /// All requested QoIs at this point, or `None` if any is missing.
    pub fn lookup(&self, fidelity: u32, point: &[f64], qois: &[String]) -> Option<Vec<f64>> {
        let key = CacheKey {
            fidelity,
            point: point_key(point),
        };
        let row = self.map.get(&key)?;
        qois.iter().map(|q| row.get(q).copied()).collect()
    }

    pub fn take_journal(&mut self) -> Vec<CacheRecord> {
        core::mem::take(&mut self.journal)
    }

    /// Number of stored `(fidelity, point, qoi)` records.
    pub fn len(&self) -> usize {
        self.map.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Distinct points per fidelity at which every one of `qois` is stored.
    pub fn points_per_fidelity(&self, qois: &[String]) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for (key, row) in &self.map {
            if qois.iter().all(|q| row.contains_key(q)) {
                *out.entry(key.fidelity).or_insert(0) += 1;
            }
        }
        out
    }

    pub fn records(&self) -> impl Iterator<Item = CacheRecord> + '_ {
        self.map.iter().flat_map(|(key, row)| {
            row.iter().map(move |(q, &value)| CacheRecord {
                fidelity: key.fidelity,
                point: key.point.iter().map(|&b| f64::from_bits(b)).collect(),
                qoi: q.clone(),
                value,
            })
        })
    }
}

/// Counters for backend traffic, useful for checking cache effectiveness.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalStats {
    pub backend_batches: usize,
    pub backend_points: BTreeMap<u32, usize>,
    pub cache_hits: usize,
}

impl EvalStats {
    pub fn total_backend_points(&self) -> usize {
        self.backend_points.values().sum()
    }
}

pub struct Evaluator<B> {
    backend: B,
    cache: EvalCache,
    stats: EvalStats,
}

impl<B: Backend> Evaluator<B> {
    pub fn new(backend: B) -> Self {
        Self::with_cache(backend, EvalCache::new())
    }

    pub fn with_cache(backend: B, cache: EvalCache) -> Self {
        Evaluator {
            backend,
            cache,
            stats: EvalStats::default(),
        }
    }

    pub fn cache(&self) -> &EvalCache {
        &self.cache
    }

    pub fn cache_mut(&mut self) -> &mut EvalCache {
        &mut self.cache
    }

    pub fn stats(&self) -> &EvalStats {
        &self.stats
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn into_cache(self) -> EvalCache {
        self.cache
    }

    /// Serves hits from the cache, sends the distinct misses to the backend
    /// in one batch and returns outcomes in request order.
    pub fn eval_batch(
        &mut self,
        fidelity: u32,
        points: &[Vec<f64>],
        qois: &[String],
    ) -> Result<Vec<EvalResult>, OracleError> {
        let mut out: Vec<Option<EvalResult>> = Vec::with_capacity(points.len());
        let mut misses: Vec<Vec<f64>> = Vec::new();
        let mut miss_slot: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        let mut pending: Vec<(usize, usize)> = Vec::new();

        for (i, p) in points.iter().enumerate() {
            if let Some(vals) = self.cache.lookup(fidelity, p, qois) {
                self.stats.cache_hits += 1;
                out.push(Some(Ok(vals)));
            } else {
                let slot = *miss_slot.entry(point_key(p)).or_insert_with(|| {
                    misses.push(p.clone());
                    misses.len() - 1
                });
                pending.push((i, slot));
                out.push(None);
            }
        }

        if !misses.is_empty() {
            let answers = self.backend.evaluate(fidelity, &misses, qois)?;
            if answers.len() != misses.len() {
                return Err(OracleError::Protocol(format!(
                    "backend returned {} results for {} points",
                    answers.len(),
                    misses.len()
                )));
            }
            self.stats.backend_batches += 1;
            *self.stats.backend_points.entry(fidelity).or_insert(0) += misses.len();
            for (p, ans) in misses.iter().zip(&answers) {
                if let Ok(vals) = ans {
                    if vals.len() != qois.len() {
                        return Err(OracleError::Protocol(format!(
                            "backend returned {} values for {} quantities",
                            vals.len(),
                            qois.len()
                        )));
                    }
                    for (q, &v) in qois.iter().zip(vals) {
                        self.cache.insert(fidelity, p, q, v);
                    }
                }
            }
            for (i, slot) in pending {
                out[i] = Some(answers[slot].clone());
            }
        }
        Ok(out.into_iter().map(|r| r.expect("every slot filled")).collect())
    }
}

/// Synthetic two-fidelity stand-in for a thermo-mechanical beam model.
///
/// Parameters are `v = (T_A, L)`: an activation temperature and the base-10
/// log of a powder convection coefficient. With `t = (T_A - 1290) / 160` and
/// `l = (L + 2.5) / 2.5`:
///
/// ```text
/// u_k = 0.1 k (1 + 0.3 s_k tanh t) (1 + 0.15 r_k l),   s_k = (k-1)/2, r_k = (5-k)/2,  k = 1..5
/// e_j = (1.5 - 0.01 j) 1e-3 (1 + 0.2 tanh t + 0.1 sin(pi l / 2)),                       j = 1..120
/// f_alpha = f (1 + delta_alpha cos(T_A / 200) cos L),   delta_1 = 0.05, delta_2 = 0.05 / 36
/// ```
///
/// The ridge weights `s_k`, `r_k` make the displacements respond to the two
/// parameters in different proportions, so both are identifiable from
/// `u_1..u_5`; ridge 3 has unit weights. All constants are synthetic. Points
/// outside `T_A in [0, 3000]`, `L in [-12, 7]` fail individually.
#[derive(Debug, Clone, Copy, Default)]
pub struct BeamAnalog;

pub const BEAM_ANALOG: &str = "beam-analog";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamQoi {
    Displacement(u32),
    Strain(u32),
}

impl BeamQoi {
    pub fn parse(name: &str) -> Option<Self> {
        let (kind, num) = name.split_at(name.char_indices().nth(1)?.0);
        let n: u32 = num.parse().ok()?;
        match kind {
            "u" if (1..=5).contains(&n) => Some(BeamQoi::Displacement(n)),
            "e" if (1..=120).contains(&n) => Some(BeamQoi::Strain(n)),
            _ => None,
        }
    }
}

impl BeamAnalog {
    pub const DOMAIN: [(f64, f64); 2] = [(0.0, 3000.0), (-12.0, 7.0)];
    pub const FIDELITY_BIAS: [f64; 2] = [0.05, 0.05 / 36.0];

    pub fn qoi_names() -> Vec<String> {
        (1..=5)
            .map(|k| format!("u{k}"))
            .chain((1..=120).map(|j| format!("e{j}")))
            .collect()
    }

    pub fn exact(v: &[f64], qoi: BeamQoi) -> f64 {
        let (ta, l) = (v[0], v[1]);
        let t = libm::tanh((ta - 1290.0) / 160.0);
        let ell = (l + 2.5) / 2.5;
        match qoi {
            BeamQoi::Displacement(k) => {
                let k = k as f64;
                let s = 0.5 * (k - 1.0);
                let r = 0.5 * (5.0 - k);
                0.1 * k * (1.0 + 0.3 * s * t) * (1.0 + 0.15 * r * ell)
            }
            BeamQoi::Strain(j) => {
                (1.5 - 0.01 * j as f64) * 1e-3 * (1.0 + 0.2 * t + 0.1 * libm::sin(0.5 * PI * ell))
            }
        }
    }

    pub fn fidelity_value(alpha: u32, v: &[f64], qoi: BeamQoi) -> Option<f64> {
        let delta = *Self::FIDELITY_BIAS.get((alpha as usize).checked_sub(1)?)?;
        Some(Self::exact(v, qoi) * (1.0 + delta * libm::cos(v[0] / 200.0) * libm::cos(v[1])))
    }

    fn in_domain(v: &[f64]) -> bool {
        v.len() == 2
            && v.iter()
                .zip(Self::DOMAIN.iter())
                .all(|(&x, &(lo, hi))| x.is_finite() && (lo..=hi).contains(&x))
    }
}

impl Backend for BeamAnalog {
    fn evaluate(
        &self,
        fidelity: u32,
        points: &[Vec<f64>],
        qois: &[String],
    ) -> Result<Vec<EvalResult>, OracleError> {
        if !(1..=2).contains(&fidelity) {
            return Err(OracleError::UnknownFidelity(fidelity));
        }
        let parsed = qois
            .iter()
            .map(|q| BeamQoi::parse(q).ok_or_else(|| OracleError::UnknownQoi(q.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(points
            .iter()
            .map(|p| {
                if !Self::in_domain(p) {
                    return Err(format!("point {p:?} outside the model domain"));
                }
                Ok(parsed
                    .iter()
                    .map(|&q| Self::fidelity_value(fidelity, p, q).expect("checked fidelity"))
                    .collect())
            })
            .collect())
    }
}

/// Looks up a builtin model by name.
pub fn builtin_model(name: &str) -> Result<Box<dyn Backend + Send + Sync>, OracleError> {
    match name {
        BEAM_ANALOG => Ok(Box::new(BeamAnalog)),
        other => Err(OracleError::UnknownModel(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::cell::Cell;

    struct Counting<'a> {
        calls: &'a Cell<usize>,
    }

    impl Backend for Counting<'_> {
        fn evaluate(
            &self,
            fidelity: u32,
            points: &[Vec<f64>],
            qois: &[String],
        ) -> Result<Vec<EvalResult>, OracleError> {
            self.calls.set(self.calls.get() + points.len());
            BeamAnalog.evaluate(fidelity, points, qois)
        }
    }

    fn names(q: &[&str]) -> Vec<String> {
        q.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn center_values() {
        let c = [1290.0, -2.5];
        assert!((BeamAnalog::exact(&c, BeamQoi::Displacement(3)) - 0.3).abs() < 1e-15);
        assert!((BeamAnalog::exact(&c, BeamQoi::Strain(120)) - 3.0e-4).abs() < 1e-18);
    }

    #[test]
    fn fidelity_gap_identity() {
        for v in [[1290.0, -2.5], [1200.0, -4.1], [1440.0, -0.3]] {
            for q in [BeamQoi::Displacement(2), BeamQoi::Strain(17)] {
                let f = BeamAnalog::exact(&v, q);
                let f1 = BeamAnalog::fidelity_value(1, &v, q).unwrap();
                let f2 = BeamAnalog::fidelity_value(2, &v, q).unwrap();
                let gap = f * (0.05 / 36.0 - 0.05) * libm::cos(v[0] / 200.0) * libm::cos(v[1]);
                assert!(((f2 - f1) - gap).abs() < 1e-15 * f.abs().max(1.0));
                // bias shrinks by 36 between the two levels
                let r = (f1 - f) / (f2 - f);
                assert!((r - 36.0).abs() < 1e-6, "{r}");
            }
        }
    }

    #[test]
    fn alpha_two_at_center() {
        let v = [1290.0, -2.5];
        let g = BeamAnalog::exact(&v, BeamQoi::Displacement(1));
        let b = 0.05 * g * libm::cos(1290.0 / 200.0) * libm::cos(-2.5);
        let got = BeamAnalog.evaluate(2, &[v.to_vec()], &names(&["u1"])).unwrap();
        assert!((got[0].as_ref().unwrap()[0] - (g + b / 36.0)).abs() < 1e-15);
    }

    #[test]
    fn qoi_parsing() {
        assert_eq!(BeamQoi::parse("u5"), Some(BeamQoi::Displacement(5)));
        assert_eq!(BeamQoi::parse("e120"), Some(BeamQoi::Strain(120)));
        assert_eq!(BeamQoi::parse("u6"), None);
        assert_eq!(BeamQoi::parse("e0"), None);
        assert_eq!(BeamQoi::parse("x1"), None);
        assert_eq!(BeamQoi::parse(""), None);
        assert_eq!(BeamAnalog::qoi_names().len(), 125);
        assert!(builtin_model("nope").is_err());
    }

    #[test]
    fn repeat_request_hits_cache() {
        let calls = Cell::new(0);
        let mut ev = Evaluator::new(Counting { calls: &calls });
        let pts = vec![vec![1290.0, -2.5], vec![1300.0, -1.0]];
        let q = names(&["u1", "e3"]);
        let first = ev.eval_batch(1, &pts, &q).unwrap();
        assert_eq!(calls.get(), 2);
        let second = ev.eval_batch(1, &pts, &q).unwrap();
        assert_eq!(calls.get(), 2);
        assert_eq!(first, second);
        assert_eq!(ev.stats().cache_hits, 2);
        // a new fidelity is a miss
        ev.eval_batch(2, &pts[..1], &q).unwrap();
        assert_eq!(calls.get(), 3);
        assert_eq!(ev.cache().points_per_fidelity(&q).get(&1), Some(&2));
    }

    #[test]
    fn duplicate_points_in_one_batch_go_out_once() {
        let calls = Cell::new(0);
        let mut ev = Evaluator::new(Counting { calls: &calls });
        let p = vec![1290.0, -2.5];
        let res = ev
            .eval_batch(1, &[p.clone(), p.clone()], &names(&["u2"]))
            .unwrap();
        assert_eq!(calls.get(), 1);
        assert_eq!(res[0], res[1]);
    }

    #[test]
    fn out_of_domain_point_fails_alone() {
        let mut ev = Evaluator::new(BeamAnalog);
        let pts = vec![vec![1290.0, -2.5], vec![9000.0, -2.5], vec![1300.0, -2.0]];
        let res = ev.eval_batch(1, &pts, &names(&["u1"])).unwrap();
        assert!(res[0].is_ok() && res[1].is_err() && res[2].is_ok());
        // failures are not cached
        assert_eq!(ev.cache().len(), 2);
        assert!(matches!(
            ev.eval_batch(3, &pts, &names(&["u1"])),
            Err(OracleError::UnknownFidelity(3))
        ));
        assert!(matches!(
            ev.eval_batch(1, &pts, &names(&["zz"])),
            Err(OracleError::UnknownQoi(_))
        ));
    }

    #[test]
    fn journal_tracks_new_records_only() {
        let mut cache = EvalCache::new();
        cache.restore(CacheRecord {
            fidelity: 1,
            point: vec![0.5],
            qoi: "u1".into(),
            value: 1.0,
        });
        cache.insert(1, &[0.5], "u1", 1.0);
        cache.insert(1, &[0.25], "u1", 2.0);
        let j = cache.take_journal();
        assert_eq!(j.len(), 1);
        assert_eq!(j[0].point, vec![0.25]);
        assert!(cache.take_journal().is_empty());
        assert_eq!(cache.records().count(), 2);
    }
}
