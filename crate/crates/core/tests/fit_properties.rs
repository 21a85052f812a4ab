mod common;

use proptest::prelude::*;
use spordinal::fit::{fit, fit_restricted, optimality_violation, FitOptions, Restriction};
use spordinal::penalty::{objective, penalty_value};
use spordinal::HyperParams;

fn hyper(lambda: f64, alpha: f64, rho: f64) -> HyperParams {
    HyperParams::new(lambda, alpha, rho).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_trace_never_increases(
        seed in any::<u64>(), n in 60..200usize, p in 1..6usize, k in 3..5usize,
        log_lambda in -3.0..1.0f64, alpha in 0.0..=1.0f64, rho in 0.2..5.0f64,
    ) {
        let (data, design, _) = common::instance(seed, n, p, k);
        let f = fit(&data, &design, &hyper(10f64.powf(log_lambda), alpha, rho), &FitOptions::default()).unwrap();
        for w in f.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs(), "trace rose: {:?}", w);
        }
        let c = &f.coefs.thresholds;
        prop_assert!(c.windows(2).all(|w| w[0] < w[1]));
        let recomputed = objective(&data, &design, &f.coefs, &f.hyper).unwrap();
        prop_assert!((recomputed - f.final_objective()).abs() <= 1e-9 * recomputed.abs().max(1.0));
    }

    #[test]
    fn interior_optima_satisfy_the_optimality_conditions(
        seed in any::<u64>(), p in 1..5usize, log_lambda in -2.0..1.0f64, alpha in 0.0..=1.0f64, rho in 0.5..2.0f64,
    ) {
        let (data, design, _) = common::instance(seed, 400, p, 3);
        let f = fit(&data, &design, &hyper(10f64.powf(log_lambda), alpha, rho), &FitOptions::default()).unwrap();
        prop_assert!(f.converged);
        let v = optimality_violation(&data, &design, &f).unwrap();
        prop_assert!(v < 1e-4, "violation {v}");
    }

    #[test]
    fn penalty_shrinks_along_the_lambda_path(
        seed in any::<u64>(), p in 1..5usize, alpha in 0.0..=1.0f64, rho in 0.5..2.0f64,
    ) {
        let (data, design, _) = common::instance(seed, 150, p, 3);
        let mut previous = f64::INFINITY;
        for lambda in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let h = hyper(lambda, alpha, rho);
            let f = fit(&data, &design, &h, &FitOptions::default()).unwrap();
            // The penalty without its lambda factor is nonincreasing in lambda.
            let size = penalty_value(&f.coefs, &hyper(1.0, alpha, rho));
            prop_assert!(size <= previous + 1e-6 * previous.max(1.0), "lambda {lambda}: {size} > {previous}");
            previous = size;
        }
    }

    #[test]
    fn heavy_deviation_penalty_recovers_the_parallel_fit(
        seed in any::<u64>(), p in 1..5usize, log_lambda in -2.0..0.5f64,
    ) {
        let (data, design, _) = common::instance(seed, 200, p, 4);
        let target = 10f64.powf(log_lambda);
        let parallel = fit_restricted(
            &data,
            &design,
            &hyper(target, 0.5, 1.0),
            &FitOptions::default().with_restriction(Restriction::Parallel),
        )
        .unwrap();
        let big = 1e6;
        let semi = fit(&data, &design, &hyper(big, 0.5, target / big), &FitOptions::default()).unwrap();
        let gap = parallel
            .coefs
            .to_flat()
            .iter()
            .zip(semi.coefs.to_flat().iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(gap < 1e-3, "max coefficient gap {gap}");
    }
}
