mod common;

use common::*;
use rand::Rng;
use viscal::distributions::{seeded_rng, CensoredLaw, GammaLaw};
use viscal::mixture_model::{fit, logs_objective, MixtureCase, MixtureFitOptions, MixtureParams};

fn objective(free: &[f64], cases: &[MixtureCase], has_hres: bool, has_ctrl: bool) -> f64 {
    logs_objective(&MixtureParams::from_free(free, has_hres, has_ctrl), cases, X_MAX).unwrap()
}

fn fd_gradient_norm(free: &[f64], cases: &[MixtureCase]) -> f64 {
    (0..free.len())
        .map(|i| {
            let h = 1e-5 * (1.0 + free[i].abs());
            let mut up = free.to_vec();
            let mut down = free.to_vec();
            up[i] += h;
            down[i] -= h;
            ((objective(&up, cases, false, false) - objective(&down, cases, false, false)) / (2.0 * h)).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

#[test]
fn predictive_mass_is_one() {
    let mut rng = seeded_rng(100);
    for _ in 0..100 {
        let (_, _, pred) = random_feasible(&mut rng);
        let total = total_mass(&pred);
        assert!((total - 1.0).abs() < 1e-6, "{pred:?}: {total}");
    }
}

#[test]
fn cdf_is_monotone_and_inverts_quantile() {
    let mut rng = seeded_rng(101);
    for _ in 0..50 {
        let (_, _, pred) = random_feasible(&mut rng);
        let grid: Vec<f64> = (0..=1000).map(|i| X_MAX * f64::from(i) / 1000.0).collect();
        let cdf: Vec<f64> = grid.iter().map(|&x| pred.cdf(x)).collect();
        assert!(cdf.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(cdf[1000], 1.0);
        for p in [0.01, 0.2, 0.5, 0.8, 0.97] {
            let q = pred.quantile(p).unwrap();
            if q < X_MAX {
                assert!((pred.cdf(q) - p).abs() < 1e-8, "p {p}: q {q} cdf {}", pred.cdf(q));
            } else {
                assert!(pred.cdf_left(X_MAX) <= p + 1e-12);
            }
        }
    }
}

#[test]
fn samples_follow_the_cdf() {
    let mut rng = seeded_rng(102);
    for seed in 0..5 {
        let (_, _, pred) = random_feasible(&mut rng);
        let draws = pred.sample(20_000, seed);
        // Randomized PIT handles the atom at the bound.
        let pit: Vec<f64> = draws
            .iter()
            .map(|&x| {
                let lo = pred.cdf_left(x);
                lo + (pred.cdf(x) - lo) * rng.random::<f64>()
            })
            .collect();
        assert!(ks_uniform(&pit) < ks_critical_1pct(pit.len()), "{pred:?}");
    }
}

#[test]
fn generator_beats_perturbed_parameters() {
    let truth = generator_params();
    let cases = synthetic_mixture_cases(10_000, 103, &truth);
    let base = logs_objective(&truth, &cases, X_MAX).unwrap();
    let free = truth.to_free();
    let mut rng = seeded_rng(104);
    for _ in 0..20 {
        let perturbed: Vec<f64> = free.iter().map(|v| v + rng.random_range(-0.05..0.05) * (1.0 + v.abs())).collect();
        let p = MixtureParams::from_free(&perturbed, false, false);
        // The sample optimum undercuts the truth by about χ²_13/(2n); the
        // 99.9% point of χ²_13 is 34.5.
        let eps = 34.5 / (2.0 * cases.len() as f64);
        if let Ok(other) = logs_objective(&p, &cases, X_MAX) {
            assert!(base <= other + eps, "{base} vs {other}");
        }
    }
}

#[test]
fn recovery_and_stationarity() {
    let truth = generator_params();
    let train = synthetic_mixture_cases(2000, 1, &truth);
    let test = synthetic_mixture_cases(2000, 2, &truth);
    let fitted = fit(&train, X_MAX, false, false, None, &MixtureFitOptions::default()).unwrap();
    let gen = logs_objective(&truth, &test, X_MAX).unwrap();
    let got = logs_objective(&fitted.params, &test, X_MAX).unwrap();
    assert!((got - gen).abs() < 0.02 * gen.abs(), "{got} vs {gen}");
    assert!(fitted.objective <= logs_objective(&MixtureParams::cold_start(&train, false, false), &train, X_MAX).unwrap());

    let start = fd_gradient_norm(&MixtureParams::cold_start(&train, false, false).to_free(), &train);
    let end = fd_gradient_norm(&fitted.params.to_free(), &train);
    assert!(end < 1e-2 * start, "{end} vs {start}");

    let again = fit(&train, X_MAX, false, false, Some(&fitted.params), &MixtureFitOptions::default()).unwrap();
    assert!(again.objective <= fitted.objective + 1e-12);
    assert!(fitted.objective - again.objective < 1e-6, "{} -> {} ({} evals, converged {})", fitted.objective, again.objective, fitted.evals, fitted.converged);
}

#[test]
fn duplicated_training_set_has_same_optimum() {
    let truth = generator_params();
    let train = synthetic_mixture_cases(300, 5, &truth);
    let doubled: Vec<MixtureCase> = train.iter().chain(&train).copied().collect();
    let a = fit(&train, X_MAX, false, false, None, &MixtureFitOptions::default()).unwrap();
    let b = fit(&doubled, X_MAX, false, false, None, &MixtureFitOptions::default()).unwrap();
    assert!((a.objective - b.objective).abs() < 1e-9, "{} vs {}", a.objective, b.objective);
}

#[test]
fn absent_members_keep_zero_coefficients() {
    let truth = generator_params();
    let mut rng = seeded_rng(6);
    let train: Vec<MixtureCase> = synthetic_mixture_cases(300, 6, &truth)
        .into_iter()
        .map(|mut c| {
            c.f_hres = Some(rng.random_range(0.0..40.0));
            c
        })
        .collect();
    let fitted = fit(&train, X_MAX, false, true, None, &MixtureFitOptions::default());
    // CTRL is required but missing: nothing is usable.
    assert!(fitted.is_err());
    let fitted = fit(&train, X_MAX, false, false, None, &MixtureFitOptions::default()).unwrap();
    let p = fitted.params;
    assert_eq!((p.a[1], p.alpha[1], p.a[2], p.alpha[2]), (0.0, 0.0, 0.0, 0.0));
    assert_eq!(p.free_count(), 13);
    assert_eq!(MixtureParams::zeros(true, false).free_count(), 15);
    assert_eq!(MixtureParams::zeros(true, true).free_count(), 17);
}

#[test]
fn constant_ensemble_fit_tracks_sample_mean() {
    // Observations from a gamma law well below the bound; the ensemble is
    // uninformative.
    let law = CensoredLaw::new(GammaLaw::new(3.0, 4.0).unwrap(), X_MAX).unwrap();
    let obs = law.sample(5000, 7);
    let stats = viscal::data_io::EnsembleStats { mean_ens: 10.0, sd_ens: 2.0, day_of_year: 100 };
    let cases: Vec<MixtureCase> = obs.iter().map(|&x| MixtureCase::new(stats, None, None, Some(x)).unwrap()).collect();
    let fitted = fit(&cases, X_MAX, false, false, None, &MixtureFitOptions::default()).unwrap();
    let pred = cases[0].predictive(&fitted.params, X_MAX).unwrap();
    let sample_mean = obs.iter().sum::<f64>() / obs.len() as f64;
    assert!((pred.mean() - sample_mean).abs() < 0.05 * sample_mean, "{} vs {sample_mean}", pred.mean());
}
