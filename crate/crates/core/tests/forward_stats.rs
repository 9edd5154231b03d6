mod common;

use common::Linear;
use misc_uq_core::bayes::{GaussianPosterior, MapEstimate};
use misc_uq_core::forward::{self, kde, kde_exact, push_samples, quantiles, BandRow, SampleSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..count).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn standard_normal_mode_and_normalisation() {
    let s = normal(100_000, 0);
    let pdf = kde(&s, None).unwrap();
    assert!(pdf.mode().abs() < 0.05, "mode {}", pdf.mode());
    // the binned mode agrees with the maximiser of the direct kernel sum
    let fine = (0..=400).map(|i| -0.2 + i as f64 * 0.001);
    let direct = fine
        .map(|x| (x, kde_exact(&s, pdf.bandwidth, x)))
        .fold((0.0, 0.0), |b, c| if c.1 > b.1 { c } else { b });
    assert!(
        (direct.0 - pdf.mode()).abs() <= pdf.resolution(),
        "{} vs {}",
        direct.0,
        pdf.mode()
    );
    assert!((pdf.integral() - 1.0).abs() < 1e-2);
    assert_eq!(pdf.grid.len(), forward::KDE_GRID);
    assert!(pdf.density.iter().all(|&d| d >= 0.0));
    // grid spans [min - 3 bw, max + 3 bw]
    let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
        (a.min(x), b.max(x))
    });
    assert!((pdf.grid[0] - (lo - 3.0 * pdf.bandwidth)).abs() < 1e-12);
    assert!((pdf.grid[511] - (hi + 3.0 * pdf.bandwidth)).abs() < 1e-9);
}

#[test]
fn bimodal_mode_sits_on_the_heavier_component() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let s: Vec<f64> = (0..100_000)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if rng.random_bool(0.7) {
                0.1 * z
            } else {
                5.0 + 0.1 * z
            }
        })
        .collect();
    let pdf = kde(&s, None).unwrap();
    assert!(pdf.mode().abs() < 0.05, "mode {}", pdf.mode());
    // binned estimate agrees with the direct kernel sum
    let peak = pdf.density.iter().cloned().fold(0.0, f64::max);
    for i in (0..pdf.grid.len()).step_by(17) {
        let direct = kde_exact(&s, pdf.bandwidth, pdf.grid[i]);
        assert!(
            (pdf.density[i] - direct).abs() < 1e-2 * peak,
            "at {}",
            pdf.grid[i]
        );
    }
}

#[test]
fn quantile_examples() {
    let one_to_five = [5.0, 3.0, 1.0, 4.0, 2.0];
    assert_eq!(quantiles(&one_to_five, &[0.5]).unwrap(), vec![3.0]);
    let q = quantiles(&one_to_five, &[0.95]).unwrap()[0];
    assert!((q - 4.8).abs() < 1e-12);
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let q = quantiles(&grid, &[0.05]).unwrap()[0];
    assert!((q - 0.05).abs() < 1e-15);
}

#[test]
fn quantiles_are_monotone_and_affine() {
    let s = normal(5_000, 3);
    let q = quantiles(&s, &[0.05, 0.5, 0.95]).unwrap();
    assert!(q[0] <= q[1] && q[1] <= q[2]);
    let (a, b) = (2.5, -7.0);
    let t: Vec<f64> = s.iter().map(|x| a * x + b).collect();
    let qt = quantiles(&t, &[0.05, 0.5, 0.95]).unwrap();
    for (x, y) in q.iter().zip(&qt) {
        assert!((a * x + b - y).abs() < 1e-12);
    }
    let m = kde(&s, None).unwrap();
    let mt = kde(&t, None).unwrap();
    assert!((a * m.mode() + b - mt.mode()).abs() <= mt.resolution() + 1e-12);
}

fn band(w_lo: f64, w_hi: f64) -> BandRow {
    BandRow {
        qoi: "e1".into(),
        mode: 0.5 * (w_lo + w_hi),
        q05: w_lo,
        q95: w_hi,
        extrapolated_fraction: 0.0,
    }
}

#[test]
fn reduction_examples() {
    let prior = vec![band(0.0, 2.0), band(1.0, 5.0)];
    assert_eq!(forward::uncertainty_reduction(&prior, &prior).unwrap(), 0.0);
    let half = vec![band(0.5, 1.5), band(2.0, 4.0)];
    assert_eq!(forward::uncertainty_reduction(&prior, &half).unwrap(), 50.0);
    assert!(forward::uncertainty_reduction(&[band(1.0, 1.0)], &[band(1.0, 1.0)]).is_err());
}

fn standard_posterior(n: usize) -> GaussianPosterior {
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        cov[i * n + i] = 1.0;
    }
    GaussianPosterior {
        names: (0..n).map(|i| format!("v{i}")).collect(),
        mean: vec![0.0; n],
        covariance: cov,
        sigma_meas: 1.0,
        sigma_floored: false,
        flat_directions: 0,
        map: MapEstimate {
            v_map: vec![0.0; n],
            misfit: 0.0,
            starts: Vec::new(),
            evaluations: 0,
            penalty_weight: 0.0,
        },
    }
}

#[test]
fn pushing_through_simple_models() {
    let post = standard_posterior(1);
    let identity = Linear::new(vec![vec![1.0]], vec![0.0]);
    let pushed = push_samples(&identity, SampleSource::Posterior(&post), 100_000, 4).unwrap();
    let s = &pushed.per_qoi[0];
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let sd = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (s.len() - 1) as f64).sqrt();
    assert!((sd - 1.0).abs() < 0.02);

    let constant = Linear::new(vec![vec![0.0]], vec![2.5]);
    let pushed = push_samples(&constant, SampleSource::Posterior(&post), 10, 4).unwrap();
    assert!(pushed.per_qoi[0].iter().all(|&x| x == 2.5));
    let (rows, pdfs) = forward::band_summary(&pushed, None).unwrap();
    assert_eq!(pdfs[0].degenerate, Some(2.5));
    assert_eq!((rows[0].mode, rows[0].q05, rows[0].q95), (2.5, 2.5, 2.5));

    assert!(push_samples(&identity, SampleSource::Posterior(&post), 1, 4).is_err());
    assert_eq!(forward::DEFAULT_SAMPLES, 10_000);
}
