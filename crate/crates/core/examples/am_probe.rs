use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recurode::estimator::{fit, FitOptions};
use recurode::model::{KnotSpec, ModelSpec, Variant};
use recurode::simgen::{setting_catalog, simulate_dataset};
use recurode::spline::KnotRule;

fn main() {
    let tm = setting_catalog(2).unwrap();
    let mut spec = ModelSpec::new(Variant::Am);
    spec.g.order = 4;
    spec.g.rule = KnotRule::Equal;
    spec.g.knots = KnotSpec::Exponent(0.2);
    let mut root = ChaCha8Rng::seed_from_u64(102);
    let seeds: Vec<u64> = (0..40).map(|_| root.random()).collect();
    let mut worst: Vec<(f64, u64, Vec<f64>, f64, bool)> = Vec::new();
    for &s in &seeds {
        let data = simulate_dataset(&tm, 1000, s).unwrap();
        let f = fit(&data, &spec, &FitOptions { seed: s, ..Default::default() }).unwrap();
        let dev = f
            .theta_hat
            .beta
            .iter()
            .map(|b| (b - 1.0).abs())
            .fold(0.0f64, f64::max);
        worst.push((dev, s, f.theta_hat.beta.clone(), f.gradient_norm, f.converged));
    }
    worst.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    println!("top deviations:");
    for (dev, s, beta, g, conv) in worst.iter().take(8) {
        println!("  dev {dev:.3} seed {s} beta {beta:?} gnorm {g:.1e} conv {conv}");
    }
    let mean2: f64 = worst.iter().map(|w| w.2[1]).sum::<f64>() / worst.len() as f64;
    let sd2 = (worst.iter().map(|w| (w.2[1] - mean2) * (w.2[1] - mean2)).sum::<f64>()
        / (worst.len() - 1) as f64)
        .sqrt();
    println!("beta2: mean {mean2:.4} sd {sd2:.4}");
    // Re-fit the worst dataset from several starting seeds.
    let bad = worst[0].1;
    let data = simulate_dataset(&tm, 1000, bad).unwrap();
    for init_seed in [1u64, 2, 3] {
        let f = fit(&data, &spec, &FitOptions { seed: init_seed, ..Default::default() }).unwrap();
        println!(
            "  refit worst (init {init_seed}): beta {:?} ll {:.6} gnorm {:.1e}",
            f.theta_hat.beta, f.loglik_at_opt, f.gradient_norm
        );
    }
}
