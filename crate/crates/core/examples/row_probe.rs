use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use recurode::estimator::{fit, FitOptions};
use recurode::meanode::Evaluator;
use recurode::model::{KnotSpec, ModelSpec, T0Spec, Variant};
use recurode::simgen::{setting_catalog, simulate_dataset};
use recurode::spline::KnotRule;

fn main() {
    let mut root = ChaCha8Rng::seed_from_u64(103);
    let seeds: Vec<u64> = (0..10).map(|_| root.random()).collect();
    let bad_seed = seeds[5]; // the rep with the inflated SE
    let tm = setting_catalog(4).unwrap();
    let mut spec = ModelSpec::new(Variant::Flex);
    spec.gamma.order = 4;
    spec.gamma.rule = KnotRule::Quantile;
    spec.gamma.knots = KnotSpec::Exponent(0.2);
    spec.g.order = 4;
    spec.g.rule = KnotRule::Quantile;
    spec.g.knots = KnotSpec::Exponent(0.2);
    spec.t0 = T0Spec::At(2.0);
    let data = simulate_dataset(&tm, 1000, bad_seed).unwrap();
    let f = fit(&data, &spec, &FitOptions { seed: bad_seed, ..Default::default() }).unwrap();
    let model = &f.model;
    let free = model.free();
    let theta_free = free.pack(&f.theta_hat);
    let p = theta_free.len();
    let n = data.len() as f64;
    let base = Evaluator::new(&data, model);

    // Score outer product diagonal for scale reference.
    let rows = base.fork().per_subject_scores(&f.theta_hat).unwrap();
    let bdiag: Vec<f64> = (0..p)
        .map(|j| rows.iter().map(|r| r[j] * r[j]).sum::<f64>() / n)
        .collect();
    println!("sqrt diag B: {:?}", bdiag.iter().map(|v| v.sqrt()).collect::<Vec<_>>());

    let mut norms = Vec::new();
    let mut fails = 0;
    for stream in 1..=250u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(bad_seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(stream);
        let z: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let plus: Vec<f64> = theta_free.iter().zip(&z).map(|(t, zi)| t + zi / n.sqrt()).collect();
        let minus: Vec<f64> = theta_free.iter().zip(&z).map(|(t, zi)| t - zi / n.sqrt()).collect();
        let up = base.fork().loglik_and_score(&free.unpack(&plus));
        let um = base.fork().loglik_and_score(&free.unpack(&minus));
        match (up, um) {
            (Ok((_, gp)), Ok((_, gm))) => {
                // S = (U+ - U-)/2/sqrt(n), U = n * score
                let s: Vec<f64> = gp
                    .iter()
                    .zip(&gm)
                    .map(|(a, b)| 0.5 * (a - b) * n / n.sqrt())
                    .collect();
                // Normalize each coordinate by sqrt(B_jj) for comparability.
                let norm = s
                    .iter()
                    .zip(&bdiag)
                    .map(|(v, b)| v.abs() / b.sqrt().max(1e-12))
                    .fold(0.0f64, f64::max);
                norms.push(norm);
            }
            _ => fails += 1,
        }
    }
    norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| norms[((norms.len() - 1) as f64 * p) as usize];
    println!(
        "pairs kept {} fails {}; normalized row max-|S|/sqrt(Bjj): median {:.2} q90 {:.2} q99 {:.2} max {:.3e}",
        norms.len(),
        fails,
        q(0.5),
        q(0.9),
        q(0.99),
        norms.last().unwrap()
    );
    // Top 10 norms:
    println!("top: {:?}", &norms[norms.len().saturating_sub(10)..]);
}
