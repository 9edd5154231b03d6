mod common;

use misc_uq_core::error::OracleError;
use misc_uq_core::misc::{AdaptiveMisc, FidelityLadder, FidelitySpec, StopCriteria, StopReason};
use misc_uq_core::oracle::{Backend, BeamAnalog, BeamQoi, EvalResult, Evaluator};
use misc_uq_core::params::Distribution;
use misc_uq_core::{KnotFamily, ParamSpace, ParamSpec};

fn single() -> FidelityLadder {
    FidelityLadder::new(vec![FidelitySpec {
        alpha: 1,
        cost_weight: 1.0,
    }])
    .unwrap()
}

fn unit_square() -> Vec<KnotFamily> {
    vec![
        KnotFamily::symmetric_leja(-1.0, 1.0).unwrap(),
        KnotFamily::symmetric_leja(-1.0, 1.0).unwrap(),
    ]
}

/// `sin(2 x) + x y / 2 + y`: smooth in `x`, affine in `y`.
struct Anisotropic;

impl Backend for Anisotropic {
    fn evaluate(&self, _: u32, points: &[Vec<f64>], qois: &[String]) -> Result<Vec<EvalResult>, OracleError> {
        Ok(points
            .iter()
            .map(|p| Ok(vec![(2.0 * p[0]).sin() + 0.5 * p[0] * p[1] + p[1]; qois.len()]))
            .collect())
    }
}

#[test]
fn affine_direction_is_not_refined() {
    let mut ev = Evaluator::new(Anisotropic);
    let mut a = AdaptiveMisc::new(unit_square(), single(), &common::qois(1), &mut ev).unwrap();
    let stop = StopCriteria {
        max_work: 400.0,
        ..StopCriteria::default()
    };
    let reason = a.run(&mut ev, &stop).unwrap();
    let max_b = |d: usize| a.index_set().iter().map(|i| i.beta[d]).max().unwrap();
    assert!(max_b(0) >= 5, "x refined to {}", max_b(0));
    assert!(max_b(1) <= 2, "y refined to {}", max_b(1));
    assert!(matches!(reason, StopReason::ProfitFloor | StopReason::WorkBudget));
}

fn beam_families() -> Vec<KnotFamily> {
    vec![
        KnotFamily::symmetric_leja(1130.0, 1450.0).unwrap(),
        KnotFamily::symmetric_leja(-5.0, 0.0).unwrap(),
    ]
}

#[test]
fn expensive_fidelity_is_used_sparingly() {
    let qois = BeamAnalog::qoi_names();
    let mut ev = Evaluator::new(BeamAnalog);
    let mut a = AdaptiveMisc::new(beam_families(), FidelityLadder::coarse_fine(), &qois, &mut ev).unwrap();
    a.run(&mut ev, &StopCriteria::default()).unwrap();
    let s = a.surrogate();
    let pts = s.points_per_fidelity();
    assert!(pts.get(&2).copied().unwrap_or(0) <= pts[&1], "{pts:?}");
    assert_eq!(s.work(), a.committed_work());
    assert!(a.committed_work() <= 200.0);
    let works: Vec<f64> = a.history().iter().map(|h| h.work_after).collect();
    assert!(works.windows(2).all(|w| w[0] < w[1]));
}

fn max_error(a: &AdaptiveMisc, pts: &[Vec<f64>]) -> f64 {
    let s = a.surrogate();
    let qois = BeamAnalog::qoi_names();
    let mut err: f64 = 0.0;
    for p in pts {
        let v = s.evaluate(p).unwrap().values;
        for (x, q) in v.iter().zip(&qois) {
            let exact = BeamAnalog::fidelity_value(2, p, BeamQoi::parse(q).unwrap()).unwrap();
            err = err.max((x - exact).abs());
        }
    }
    err
}

#[test]
fn error_shrinks_along_the_greedy_sequence() {
    let space = ParamSpace::new(vec![
        ParamSpec::new(
            "T_A",
            Distribution::Uniform {
                lo: 1130.0,
                hi: 1450.0,
            },
        ),
        ParamSpec::new("log_hp", Distribution::Uniform { lo: -5.0, hi: 0.0 }),
    ])
    .unwrap();
    let pts = space.sample(100, 5).unwrap();
    let qois = BeamAnalog::qoi_names();
    let mut ev = Evaluator::new(BeamAnalog);
    let mut a = AdaptiveMisc::new(beam_families(), FidelityLadder::coarse_fine(), &qois, &mut ev).unwrap();
    let mut errors = vec![max_error(&a, &pts)];
    for budget in [25.0, 60.0, 200.0, 600.0] {
        a.run(
            &mut ev,
            &StopCriteria {
                max_work: budget,
                ..StopCriteria::default()
            },
        )
        .unwrap();
        errors.push(max_error(&a, &pts));
    }
    assert!(errors.last().unwrap() * 10.0 < errors[0], "{errors:?}");
    assert!(
        errors.windows(2).filter(|w| w[1] > w[0]).count() <= 1,
        "{errors:?}"
    );
}

#[test]
fn warm_cache_replays_without_oracle_calls() {
    let qois = BeamAnalog::qoi_names();
    let mut ev = Evaluator::new(BeamAnalog);
    let mut a = AdaptiveMisc::new(beam_families(), FidelityLadder::coarse_fine(), &qois, &mut ev).unwrap();
    a.run(&mut ev, &StopCriteria::default()).unwrap();
    let spent = ev.stats().total_backend_points();

    let mut warm = Evaluator::with_cache(BeamAnalog, ev.into_cache());
    let mut b = AdaptiveMisc::new(beam_families(), FidelityLadder::coarse_fine(), &qois, &mut warm).unwrap();
    b.run(&mut warm, &StopCriteria::default()).unwrap();
    assert_eq!(warm.stats().total_backend_points(), 0);
    assert!(spent > 0);
    assert_eq!(a.index_set(), b.index_set());
    assert_eq!(a.history(), b.history());
}

/// Fails wherever `x > 0.9`, which rules out every grid containing the
/// right endpoint.
struct Holey;

impl Backend for Holey {
    fn evaluate(&self, _: u32, points: &[Vec<f64>], qois: &[String]) -> Result<Vec<EvalResult>, OracleError> {
        Ok(points
            .iter()
            .map(|p| {
                if p[0] > 0.9 {
                    Err("solver diverged".to_string())
                } else {
                    Ok(vec![p[0] + p[1] * p[1]; qois.len()])
                }
            })
            .collect())
    }
}

#[test]
fn failed_candidates_are_skipped() {
    let mut ev = Evaluator::new(Holey);
    let mut a = AdaptiveMisc::new(unit_square(), single(), &common::qois(1), &mut ev).unwrap();
    let reason = a
        .run(
            &mut ev,
            &StopCriteria {
                max_work: 60.0,
                ..StopCriteria::default()
            },
        )
        .unwrap();
    assert!(
        a.index_set().iter().all(|i| i.beta[0] == 1),
        "x cannot be refined"
    );
    assert!(a.index_set().iter().any(|i| i.beta[1] >= 2));
    assert!(!a.skipped().is_empty() || reason != StopReason::NoCandidates);
    let s = a.surrogate();
    let v = s.evaluate(&[0.3, 0.5]).unwrap().values[0];
    assert!((v - (0.0 + 0.25)).abs() < 1e-12, "{v}");
}

/// `I_n = {[alpha, beta] : (alpha - 1) + |beta - 1| <= n}` over both
/// fidelities.
#[test]
fn error_decreases_along_nested_total_degree_sets() {
    let space = ParamSpace::new(vec![
        ParamSpec::new(
            "T_A",
            Distribution::Uniform {
                lo: 1130.0,
                hi: 1450.0,
            },
        ),
        ParamSpec::new("log_hp", Distribution::Uniform { lo: -5.0, hi: 0.0 }),
    ])
    .unwrap();
    let pts = space.sample(200, 0).unwrap();
    let qois = BeamAnalog::qoi_names();
    let mut ev = Evaluator::new(BeamAnalog);
    let mut errors = Vec::new();
    for n in 0..=6u32 {
        let mut entries = Vec::new();
        for a in 1..=2u32 {
            for b1 in 1..=n + 1 {
                for b2 in 1..=n + 1 {
                    if (a - 1) + (b1 - 1) + (b2 - 1) <= n {
                        entries.push(misc_uq_core::ExtMultiIndex::new(a, vec![b1, b2]).unwrap());
                    }
                }
            }
        }
        let set = misc_uq_core::MultiIndexSet::from_entries(2, entries).unwrap();
        let s = misc_uq_core::MiscSurrogate::build(
            &set,
            &mut ev,
            &FidelityLadder::coarse_fine(),
            beam_families(),
            &qois,
        )
        .unwrap();
        let mut err: f64 = 0.0;
        for p in &pts {
            let v = s.evaluate(p).unwrap().values;
            for (x, q) in v.iter().zip(&qois) {
                err = err
                    .max((x - BeamAnalog::fidelity_value(2, p, BeamQoi::parse(q).unwrap()).unwrap()).abs());
            }
        }
        errors.push(err);
    }
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}
