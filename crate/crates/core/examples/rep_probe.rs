use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recurode::estimator::{fit, FitOptions};
use recurode::inference::{empirical_information, resampling_sandwich};
use recurode::model::{KnotSpec, ModelSpec, T0Spec, Variant};
use recurode::simgen::{setting_catalog, simulate_dataset};
use recurode::spline::KnotRule;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "am".into());
    let mut root = ChaCha8Rng::seed_from_u64(102);
    let seeds: Vec<u64> = (0..10).map(|_| root.random()).collect();

    if which == "am" {
        let tm = setting_catalog(2).unwrap();
        let mut spec = ModelSpec::new(Variant::Am);
        spec.g.order = 4;
        spec.g.rule = KnotRule::Equal;
        spec.g.knots = KnotSpec::Exponent(0.2);
        for &s in &seeds {
            let t0 = Instant::now();
            let data = simulate_dataset(&tm, 1000, s).unwrap();
            let t_sim = t0.elapsed();
            let t0 = Instant::now();
            let f = fit(&data, &spec, &FitOptions { seed: s, ..Default::default() }).unwrap();
            let t_fit = t0.elapsed();
            let t0 = Instant::now();
            let cov = empirical_information(&data, &f.theta_hat, &f.model, 0.95).unwrap();
            let t_inf = t0.elapsed();
            println!(
                "seed {s:>20}: sim {t_sim:>8.2?} fit {t_fit:>8.2?} (outer {:>3}, conv {}, gnorm {:.1e}) inf {t_inf:>8.2?} se2 {:.4}",
                f.outer_iterations, f.converged, f.gradient_norm, cov.beta[1].se
            );
        }
    } else {
        let mut root = ChaCha8Rng::seed_from_u64(103);
        let seeds: Vec<u64> = (0..10).map(|_| root.random()).collect();
        let tm = setting_catalog(4).unwrap();
        let mut spec = ModelSpec::new(Variant::Flex);
        spec.gamma.order = 4;
        spec.gamma.rule = KnotRule::Quantile;
        spec.gamma.knots = KnotSpec::Exponent(0.2);
        spec.g.order = 4;
        spec.g.rule = KnotRule::Quantile;
        spec.g.knots = KnotSpec::Exponent(0.2);
        spec.t0 = T0Spec::At(2.0);
        for &s in &seeds {
            let data = simulate_dataset(&tm, 1000, s).unwrap();
            let t0 = Instant::now();
            let f = fit(&data, &spec, &FitOptions { seed: s, ..Default::default() }).unwrap();
            let t_fit = t0.elapsed();
            let t0 = Instant::now();
            let cov =
                resampling_sandwich(&data, &f.theta_hat, &f.model, 500, 0.95, s ^ 0x9e37_79b9_7f4a_7c15)
                    .unwrap();
            let t_res = t0.elapsed();
            let info = empirical_information(&data, &f.theta_hat, &f.model, 0.95).unwrap();
            println!(
                "seed {s:>20}: fit {t_fit:>8.2?} (outer {:>3}, gnorm {:.1e}) res {t_res:>8.2?} dropped {:>2} | se2 res {:.4} info {:.4} | est2 {:+.3}",
                f.outer_iterations, f.gradient_norm, cov.dropped_resamples,
                cov.beta[0].se, info.beta[0].se, cov.beta[0].estimate
            );
        }
    }
}
