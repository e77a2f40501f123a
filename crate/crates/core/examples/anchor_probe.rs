use recurode::estimator::{fit, FitOptions};
use recurode::meanode::{EvalOptions, Evaluator};
use recurode::model::{KnotSpec, ModelSpec, T0Spec, Variant};
use recurode::ode::OdeOptions;
use recurode::optim::LbfgsOptions;
use recurode::simgen::{setting_catalog, simulate_dataset};
use recurode::spline::KnotRule;

fn main() {
    let tm = setting_catalog(4).unwrap();
    let data = simulate_dataset(&tm, 300, 31).unwrap();
    let tight = FitOptions {
        outer_tol: 1e-14,
        grad_tol: 1e-9,
        max_outer: 3000,
        inner: LbfgsOptions { grad_tol: 1e-11, max_iters: 400, memory: 10 },
        seed: 1,
        eval: EvalOptions { ode: OdeOptions { rtol: 1e-12, atol: 1e-14 } },
        ..Default::default()
    };
    let mk_spec = |t0: f64| {
        let mut spec = ModelSpec::new(Variant::Flex);
        spec.gamma.order = 4;
        spec.gamma.knots = KnotSpec::Count(1);
        spec.g.order = 4;
        spec.g.knots = KnotSpec::Count(1);
        spec.gamma.rule = KnotRule::Equal;
        spec.g.rule = KnotRule::Equal;
        spec.t0 = T0Spec::At(t0);
        spec
    };
    let fit_a = fit(&data, &mk_spec(2.0), &tight).unwrap();
    let fit_b = fit(&data, &mk_spec(1.6), &tight).unwrap();
    println!(
        "fit_a: gnorm {:.3e} outers {} ll {:.12}",
        fit_a.gradient_norm, fit_a.outer_iterations, fit_a.loglik_at_opt
    );
    println!(
        "fit_b: gnorm {:.3e} outers {} ll {:.12}",
        fit_b.gradient_norm, fit_b.outer_iterations, fit_b.loglik_at_opt
    );
    let times: Vec<f64> = (1..=8).map(|i| 0.35 * i as f64).collect();
    let mut worst: f64 = 0.0;
    for idx in [0usize, 7, 23, 101, 250] {
        let mut ev_a = Evaluator::new(&data, &fit_a.model).with_options(tight.eval);
        let mut ev_b = Evaluator::new(&data, &fit_b.model).with_options(tight.eval);
        let pa = ev_a.mean_path(idx, &fit_a.theta_hat, &times, false).unwrap();
        let pb = ev_b.mean_path(idx, &fit_b.theta_hat, &times, false).unwrap();
        for (a, b) in pa.mu.iter().zip(&pb.mu) {
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    println!("worst relative curve deviation: {worst:.3e}");
}
