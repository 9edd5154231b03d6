//! Multi-index stochastic collocation.
//!
//! A surrogate is `S_I f(v) = sum_{[a,b] in I} c_{a,b} U_{a,m(b)}(v)`: a
//! signed combination of tensor interpolants of the fidelity-`a` model on the
//! grids `T_{m(b)}`. [`AdaptiveMisc`] grows `I` greedily by profit, the
//! mean absolute hierarchical surplus at fixed probe points divided by the
//! work of the new oracle points.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::interp::{TensorGrid, TensorInterpolant};
use crate::leja::KnotFamily;
use crate::multiindex::{ExtMultiIndex, MultiIndexSet};
use crate::oracle::{point_key, Backend, Evaluator};

/// Probe points used to measure surplus magnitudes.
pub const PROBE_COUNT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelitySpec {
    /// Fidelity id passed to the oracle.
    pub alpha: u32,
    /// Relative work of one evaluation.
    pub cost_weight: f64,
}

/// Ordered fidelities; MISC level `a` (1-based) uses `levels[a - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityLadder {
    levels: Vec<FidelitySpec>,
}

impl FidelityLadder {
    pub fn new(levels: Vec<FidelitySpec>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidFidelities("at least one fidelity is required"));
        }
        for w in levels.windows(2) {
            if w[1].alpha <= w[0].alpha {
                return Err(Error::InvalidFidelities("fidelity ids must increase"));
            }
            if w[1].cost_weight <= w[0].cost_weight {
                return Err(Error::InvalidFidelities(
                    "cost weights must increase with fidelity",
                ));
            }
        }
        if levels
            .iter()
            .any(|l| !(l.cost_weight.is_finite() && l.cost_weight > 0.0) || l.alpha == 0)
        {
            return Err(Error::InvalidFidelities(
                "cost weights must be positive, ids >= 1",
            ));
        }
        Ok(FidelityLadder { levels })
    }

    /// Coarse and fine levels with the 1:36 cost ratio (4 hours against 6 days).
    pub fn coarse_fine() -> Self {
        FidelityLadder {
            levels: vec![
                FidelitySpec {
                    alpha: 1,
                    cost_weight: 1.0,
                },
                FidelitySpec {
                    alpha: 2,
                    cost_weight: 36.0,
                },
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[FidelitySpec] {
        &self.levels
    }

    fn spec(&self, level: u32) -> Result<FidelitySpec> {
        self.levels
            .get((level as usize).wrapping_sub(1))
            .copied()
            .ok_or(Error::InvalidFidelities(
                "index set uses an undefined fidelity level",
            ))
    }

    pub fn oracle_fidelity(&self, level: u32) -> Result<u32> {
        Ok(self.spec(level)?.alpha)
    }

    pub fn cost(&self, level: u32) -> Result<f64> {
        Ok(self.spec(level)?.cost_weight)
    }
}

fn check_families(families: &[KnotFamily], dim: usize) -> Result<()> {
    if families.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: families.len(),
        });
    }
    Ok(())
}

/// Index, point and failure message of an evaluation the oracle refused.
type MissingPoint = (ExtMultiIndex, Vec<f64>, String);

fn evaluate_grid<B: Backend>(
    idx: &ExtMultiIndex,
    families: &mut [KnotFamily],
    ladder: &FidelityLadder,
    evaluator: &mut Evaluator<B>,
    qois: &[String],
) -> Result<core::result::Result<TensorInterpolant, Vec<MissingPoint>>> {
    let grid = TensorGrid::for_level(&idx.beta, families)?;
    let points = grid.points();
    let outcomes = evaluator.eval_batch(ladder.oracle_fidelity(idx.alpha)?, &points, qois)?;
    let mut values = Vec::with_capacity(points.len() * qois.len());
    let mut missing = Vec::new();
    for (p, o) in points.into_iter().zip(outcomes) {
        match o {
            Ok(vals) => values.extend(vals),
            Err(msg) => missing.push((idx.clone(), p, msg)),
        }
    }
    if !missing.is_empty() {
        return Ok(Err(missing));
    }
    Ok(Ok(TensorInterpolant::new(grid, qois.len(), values)?))
}

/// Result of evaluating a surrogate at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateValue {
    pub values: Vec<f64>,
    /// Set when some coordinate lies outside its family's trusted range.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiscSurrogate {
    qoi_names: Vec<String>,
    families: Vec<KnotFamily>,
    ladder: FidelityLadder,
    index_set: MultiIndexSet,
    coefficients: BTreeMap<ExtMultiIndex, i64>,
    interpolants: BTreeMap<ExtMultiIndex, TensorInterpolant>,
}

impl MiscSurrogate {
    /// Evaluates the oracle on every grid with a nonzero coefficient and
    /// assembles the combination.
    pub fn build<B: Backend>(
        index_set: &MultiIndexSet,
        evaluator: &mut Evaluator<B>,
        ladder: &FidelityLadder,
        mut families: Vec<KnotFamily>,
        qois: &[String],
    ) -> Result<Self> {
        check_families(&families, index_set.dim())?;
        if index_set.is_empty() {
            return Err(Error::InvalidArgument("index set is empty"));
        }
        if qois.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one quantity of interest is required",
            ));
        }
        ladder.spec(index_set.max_alpha())?;
        let coefficients = index_set.combination_coefficients();
        let mut interpolants = BTreeMap::new();
        let mut missing = Vec::new();
        for idx in coefficients.keys() {
            match evaluate_grid(idx, &mut families, ladder, evaluator, qois)? {
                Ok(itp) => {
                    interpolants.insert(idx.clone(), itp);
                }
                Err(m) => missing.extend(m),
            }
        }
        if let Some(first) = missing.first() {
            return Err(Error::MissingEvaluations {
                first: first.0.clone(),
                missing,
            });
        }
        Ok(MiscSurrogate {
            qoi_names: qois.to_vec(),
            families,
            ladder: ladder.clone(),
            index_set: index_set.clone(),
            coefficients,
            interpolants,
        })
    }

    /// Reassembles a surrogate from stored parts, checking that the
    /// interpolants match the nonzero coefficients and slice the families.
    pub fn from_parts(
        qoi_names: Vec<String>,
        families: Vec<KnotFamily>,
        ladder: FidelityLadder,
        index_set: MultiIndexSet,
        interpolants: BTreeMap<ExtMultiIndex, TensorInterpolant>,
    ) -> Result<Self> {
        check_families(&families, index_set.dim())?;
        ladder.spec(index_set.max_alpha())?;
        let coefficients = index_set.combination_coefficients();
        if !coefficients.keys().eq(interpolants.keys()) {
            return Err(Error::InvalidArgument(
                "interpolants do not match the nonzero combination coefficients",
            ));
        }
        for (idx, itp) in &interpolants {
            if itp.n_outputs() != qoi_names.len() {
                return Err(Error::DimensionMismatch {
                    expected: qoi_names.len(),
                    got: itp.n_outputs(),
                });
            }
            check_families(&families, itp.grid().dim())?;
            for ((knots, fam), &b) in itp.grid().knots().iter().zip(&families).zip(&idx.beta) {
                let want = crate::leja::level_to_knots(b)?;
                let same = knots.len() == want
                    && fam
                        .cached(want)
                        .is_some_and(|c| c.iter().zip(knots).all(|(a, b)| a.to_bits() == b.to_bits()));
                if !same {
                    return Err(Error::InvalidArgument("grid knots are not a family prefix"));
                }
            }
        }
        Ok(MiscSurrogate {
            qoi_names,
            families,
            ladder,
            index_set,
            coefficients,
            interpolants,
        })
    }

    pub fn dim(&self) -> usize {
        self.index_set.dim()
    }

    pub fn qoi_names(&self) -> &[String] {
        &self.qoi_names
    }

    pub fn families(&self) -> &[KnotFamily] {
        &self.families
    }

    pub fn ladder(&self) -> &FidelityLadder {
        &self.ladder
    }

    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    pub fn coefficients(&self) -> &BTreeMap<ExtMultiIndex, i64> {
        &self.coefficients
    }

    pub fn interpolants(&self) -> &BTreeMap<ExtMultiIndex, TensorInterpolant> {
        &self.interpolants
    }

    pub fn is_extrapolated(&self, v: &[f64]) -> bool {
        self.families.iter().zip(v).any(|(f, &x)| {
            let (lo, hi) = f.kind().trusted_range();
            !(lo..=hi).contains(&x)
        })
    }

    pub fn evaluate_into(&self, v: &[f64], out: &mut [f64]) -> Result<bool> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for (idx, itp) in &self.interpolants {
            itp.accumulate(v, self.coefficients[idx] as f64, out)?;
        }
        Ok(self.is_extrapolated(v))
    }

    pub fn evaluate(&self, v: &[f64]) -> Result<SurrogateValue> {
        let mut values = vec![0.0; self.qoi_names.len()];
        let extrapolated = self.evaluate_into(v, &mut values)?;
        Ok(SurrogateValue { values, extrapolated })
    }

    /// Distinct grid points per oracle fidelity.
    pub fn points_per_fidelity(&self) -> BTreeMap<u32, usize> {
        let mut seen: BTreeSet<(u32, Vec<u64>)> = BTreeSet::new();
        for (idx, itp) in &self.interpolants {
            let fid = self.ladder.oracle_fidelity(idx.alpha).expect("validated ladder");
            for p in itp.grid().points() {
                seen.insert((fid, point_key(&p)));
            }
        }
        let mut out = BTreeMap::new();
        for (fid, _) in seen {
            *out.entry(fid).or_insert(0) += 1;
        }
        out
    }

    /// Cost-weighted number of oracle points behind this surrogate.
    pub fn work(&self) -> f64 {
        let by_fid = self.points_per_fidelity();
        self.ladder
            .levels()
            .iter()
            .map(|l| l.cost_weight * *by_fid.get(&l.alpha).unwrap_or(&0) as f64)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopCriteria {
    /// Upper bound on the cost-weighted points of the surrogate.
    pub max_work: f64,
    /// Upper bound on committed candidates (the root not counted).
    pub max_candidates: usize,
    /// Stop once the best profit falls below this fraction of the
    /// surrogate's range at the probes.
    pub profit_floor: f64,
    /// Largest admissible grid level per parameter.
    pub max_level: u32,
}

impl Default for StopCriteria {
    fn default() -> Self {
        StopCriteria {
            max_work: 200.0,
            max_candidates: usize::MAX,
            profit_floor: 1e-8,
            max_level: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    WorkBudget,
    CandidateLimit,
    ProfitFloor,
    NoCandidates,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::WorkBudget => "work-budget",
            StopReason::CandidateLimit => "candidate-limit",
            StopReason::ProfitFloor => "profit-floor",
            StopReason::NoCandidates => "no-candidates",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptStep {
    pub index: ExtMultiIndex,
    pub profit: f64,
    pub surplus: f64,
    pub delta_work: f64,
    pub work_after: f64,
}

#[derive(Debug, Clone)]
struct Candidate {
    surplus_at_probes: Vec<f64>,
    surplus: f64,
    delta_work: f64,
    profit: f64,
}

/// Greedy a-posteriori enlargement of the index set.
///
/// Every iteration scores each affordable reduced-margin index (evaluating
/// its grid if not yet done), commits the one with the largest profit and
/// refreshes the pool. The surplus `S_{I+c} - S_I` of a candidate does not
/// depend on the rest of `I`, so scores are computed once per candidate.
#[derive(Debug, Clone)]
pub struct AdaptiveMisc {
    qoi_names: Vec<String>,
    families: Vec<KnotFamily>,
    ladder: FidelityLadder,
    index_set: MultiIndexSet,
    interpolants: BTreeMap<ExtMultiIndex, TensorInterpolant>,
    pool: BTreeMap<ExtMultiIndex, Candidate>,
    probes: Vec<Vec<f64>>,
    current_at_probes: Vec<f64>,
    used_points: BTreeSet<(u32, Vec<u64>)>,
    committed_work: f64,
    history: Vec<AdaptStep>,
    skipped: Vec<ExtMultiIndex>,
}

impl AdaptiveMisc {
    /// Starts from `{[1, (1, ..., 1)]}`, evaluating its single point.
    pub fn new<B: Backend>(
        mut families: Vec<KnotFamily>,
        ladder: FidelityLadder,
        qois: &[String],
        evaluator: &mut Evaluator<B>,
    ) -> Result<Self> {
        if qois.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one quantity of interest is required",
            ));
        }
        if families.is_empty() {
            return Err(Error::InvalidArgument("at least one knot family is required"));
        }
        let dim = families.len();
        let root = ExtMultiIndex::root(dim);
        let itp = match evaluate_grid(&root, &mut families, &ladder, evaluator, qois)? {
            Ok(itp) => itp,
            Err(missing) => return Err(Error::MissingEvaluations { first: root, missing }),
        };
        let probes = probe_points(&families, PROBE_COUNT);
        let mut current_at_probes = Vec::with_capacity(probes.len() * qois.len());
        for p in &probes {
            current_at_probes.extend(itp.evaluate(p)?);
        }
        let mut used_points = BTreeSet::new();
        for p in itp.grid().points() {
            used_points.insert((1, point_key(&p)));
        }
        let committed_work = ladder.cost(1)?;
        let mut interpolants = BTreeMap::new();
        interpolants.insert(root, itp);
        Ok(AdaptiveMisc {
            qoi_names: qois.to_vec(),
            families,
            ladder,
            index_set: MultiIndexSet::root(dim),
            interpolants,
            pool: BTreeMap::new(),
            probes,
            current_at_probes,
            used_points,
            committed_work,
            history: Vec::new(),
            skipped: Vec::new(),
        })
    }

    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    pub fn history(&self) -> &[AdaptStep] {
        &self.history
    }

    pub fn committed_work(&self) -> f64 {
        self.committed_work
    }

    pub fn ladder(&self) -> &FidelityLadder {
        &self.ladder
    }

    /// Candidates skipped in the last iteration because an evaluation failed.
    pub fn skipped(&self) -> &[ExtMultiIndex] {
        &self.skipped
    }

    /// Distinct evaluated points per oracle fidelity, including candidates
    /// that were scored but never committed.
    pub fn explored_points(&self) -> BTreeMap<u32, usize> {
        let mut seen: BTreeSet<(u32, Vec<u64>)> = BTreeSet::new();
        for (idx, itp) in &self.interpolants {
            let fid = self.ladder.oracle_fidelity(idx.alpha).expect("validated ladder");
            for p in itp.grid().points() {
                seen.insert((fid, point_key(&p)));
            }
        }
        let mut out = BTreeMap::new();
        for (fid, _) in seen {
            *out.entry(fid).or_insert(0) += 1;
        }
        out
    }

    fn probe_range(&self) -> f64 {
        let nq = self.qoi_names.len();
        (0..nq)
            .map(|q| {
                let (lo, hi) = self
                    .current_at_probes
                    .iter()
                    .skip(q)
                    .step_by(nq)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                        (a.min(x), b.max(x))
                    });
                hi - lo
            })
            .sum()
    }

    fn new_points(&self, idx: &ExtMultiIndex) -> Result<usize> {
        let grid = TensorGrid::for_level(&idx.beta, &mut self.families.clone())?;
        Ok(grid
            .points()
            .iter()
            .filter(|p| !self.used_points.contains(&(idx.alpha, point_key(p))))
            .count())
    }

    fn surplus_at_probes(&self, idx: &ExtMultiIndex) -> Result<Vec<f64>> {
        let n = idx.dim();
        let nq = self.qoi_names.len();
        let mut out = vec![0.0; self.probes.len() * nq];
        for mask in 0u64..(1u64 << (n + 1)) {
            let i = (mask & 1) as u32;
            if idx.alpha <= i {
                continue;
            }
            let mut beta = idx.beta.clone();
            let mut valid = true;
            for (d, b) in beta.iter_mut().enumerate() {
                let j = ((mask >> (d + 1)) & 1) as u32;
                if *b <= j {
                    valid = false;
                    break;
                }
                *b -= j;
            }
            if !valid {
                continue;
            }
            let key = ExtMultiIndex {
                alpha: idx.alpha - i,
                beta,
            };
            let itp = self
                .interpolants
                .get(&key)
                .ok_or(Error::InvalidArgument("surplus needs an unevaluated grid"))?;
            let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            for (p, chunk) in self.probes.iter().zip(out.chunks_exact_mut(nq)) {
                itp.accumulate(p, sign, chunk)?;
            }
        }
        Ok(out)
    }

    fn score<B: Backend>(
        &mut self,
        idx: &ExtMultiIndex,
        delta_work: f64,
        evaluator: &mut Evaluator<B>,
    ) -> Result<bool> {
        if !self.interpolants.contains_key(idx) {
            match evaluate_grid(idx, &mut self.families, &self.ladder, evaluator, &self.qoi_names)? {
                Ok(itp) => {
                    self.interpolants.insert(idx.clone(), itp);
                }
                Err(_) => return Ok(false),
            }
        }
        let surplus_at_probes = self.surplus_at_probes(idx)?;
        let surplus =
            surplus_at_probes.iter().map(|x| libm::fabs(*x)).sum::<f64>() / self.probes.len() as f64;
        let profit = if delta_work > 0.0 {
            surplus / delta_work
        } else {
            f64::INFINITY
        };
        self.pool.insert(
            idx.clone(),
            Candidate {
                surplus_at_probes,
                surplus,
                delta_work,
                profit,
            },
        );
        Ok(true)
    }

    /// One iteration; `Ok(None)` after committing a candidate.
    pub fn step<B: Backend>(
        &mut self,
        evaluator: &mut Evaluator<B>,
        stop: &StopCriteria,
    ) -> Result<Option<StopReason>> {
        if self.history.len() >= stop.max_candidates {
            return Ok(Some(StopReason::CandidateLimit));
        }
        let margin: Vec<ExtMultiIndex> = self
            .index_set
            .reduced_margin()
            .into_iter()
            .filter(|c| c.alpha as usize <= self.ladder.len())
            .filter(|c| c.beta.iter().all(|&b| b <= stop.max_level))
            .collect();
        if margin.is_empty() {
            return Ok(Some(StopReason::NoCandidates));
        }

        self.skipped.clear();
        let mut best: Option<(ExtMultiIndex, f64)> = None;
        for cand in &margin {
            let delta_work = match self.pool.get(cand) {
                Some(c) => c.delta_work,
                None => self.ladder.cost(cand.alpha)? * self.new_points(cand)? as f64,
            };
            if self.committed_work + delta_work > stop.max_work {
                continue;
            }
            if !self.pool.contains_key(cand) && !self.score(cand, delta_work, evaluator)? {
                self.skipped.push(cand.clone());
                continue;
            }
            let profit = self.pool[cand].profit;
            if best.as_ref().is_none_or(|(_, p)| profit > *p) {
                best = Some((cand.clone(), profit));
            }
        }

        let Some((chosen, profit)) = best else {
            return Ok(Some(if self.skipped.is_empty() {
                StopReason::WorkBudget
            } else {
                StopReason::NoCandidates
            }));
        };
        if profit < stop.profit_floor * self.probe_range() {
            return Ok(Some(StopReason::ProfitFloor));
        }

        let cand = self.pool.remove(&chosen).expect("scored candidate");
        self.index_set.insert(chosen.clone())?;
        let grid = self.interpolants[&chosen].grid().points();
        for p in grid {
            self.used_points.insert((chosen.alpha, point_key(&p)));
        }
        for (c, d) in self.current_at_probes.iter_mut().zip(&cand.surplus_at_probes) {
            *c += d;
        }
        self.committed_work += cand.delta_work;
        self.history.push(AdaptStep {
            index: chosen,
            profit,
            surplus: cand.surplus,
            delta_work: cand.delta_work,
            work_after: self.committed_work,
        });
        Ok(None)
    }

    pub fn run<B: Backend>(
        &mut self,
        evaluator: &mut Evaluator<B>,
        stop: &StopCriteria,
    ) -> Result<StopReason> {
        loop {
            if let Some(reason) = self.step(evaluator, stop)? {
                return Ok(reason);
            }
        }
    }

    pub fn surrogate(&self) -> MiscSurrogate {
        let coefficients = self.index_set.combination_coefficients();
        let interpolants = coefficients
            .keys()
            .map(|k| (k.clone(), self.interpolants[k].clone()))
            .collect();
        MiscSurrogate {
            qoi_names: self.qoi_names.clone(),
            families: self.families.clone(),
            ladder: self.ladder.clone(),
            index_set: self.index_set.clone(),
            coefficients,
            interpolants,
        }
    }
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().all(|p| !c.is_multiple_of(*p)) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut f = 0.0;
    while i > 0 {
        f += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    f
}

/// Halton points `1..=count` mapped onto each family's domain: uniform
/// families span `[lo, hi]`, Gaussian ones `mean ± 3 std`.
pub fn probe_points(families: &[KnotFamily], count: usize) -> Vec<Vec<f64>> {
    use crate::leja::KnotKind;
    let bases = first_primes(families.len());
    (1..=count as u64)
        .map(|i| {
            families
                .iter()
                .zip(&bases)
                .map(|(f, &b)| {
                    let u = radical_inverse(i, b);
                    match f.kind() {
                        KnotKind::SymmetricLeja { lo, hi } => lo + u * (hi - lo),
                        KnotKind::WeightedGaussianLeja { mean, std } => mean + std * (6.0 * u - 3.0),
                    }
                })
                .collect()
        })
        .collect()
}
