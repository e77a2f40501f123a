use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recurode::data::Dataset;
use recurode::estimator::{fit_resolved, FitOptions};
use recurode::inference::empirical_information;
use recurode::model::{CurveRep, ParamVector, ResolvedModel, Variant};
use recurode::simgen::{setting_catalog, simulate_dataset};
use recurode::spline::{knot_count, SplineBasis};

fn upper_quantile(data: &Dataset, p: f64) -> f64 {
    let ranks = data.pooled_event_ranks();
    let h = (ranks.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let hi = (lo + 1).min(ranks.len() - 1);
    (ranks[lo] * (1.0 - frac) + ranks[hi] * frac).max(1.0)
}

fn main() {
    let tm = setting_catalog(2).unwrap();
    let mut root = ChaCha8Rng::seed_from_u64(102);
    let seeds: Vec<u64> = (0..30).map(|_| root.random()).collect();

    for mode in ["q95", "q99", "max", "max15"] {
        let mut ests = Vec::new();
        let mut ses = Vec::new();
        let mut fails = 0;
        let mut nonconv = 0;
        for &s in &seeds {
            let data = simulate_dataset(&tm, 1000, s).unwrap();
            let upper = match mode {
                "q95" => upper_quantile(&data, 0.95),
                "q99" => upper_quantile(&data, 0.99),
                "max" => data.max_event_count() as f64,
                _ => data.max_event_count() as f64 * 1.5,
            };
            let k = knot_count(data.total_events(), 0.2).unwrap();
            let basis = match SplineBasis::from_rule(
                4,
                &[],
                recurode::spline::KnotRule::Equal,
                k,
                (0.0, upper),
            ) {
                Ok(b) => b,
                Err(_) => {
                    fails += 1;
                    continue;
                }
            };
            let model = ResolvedModel::new(
                Variant::Am,
                CurveRep::Zero,
                CurveRep::Spline { basis },
                3,
                None,
                false,
            )
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let init = ParamVector {
                beta: (0..3).map(|_| rng.random_range(-0.1..0.1)).collect(),
                a: vec![],
                b: vec![0.0; model.g.coef_len()],
            };
            match fit_resolved(&data, &model, init, &FitOptions { seed: s, ..Default::default() }) {
                Ok(f) => {
                    if !f.converged {
                        nonconv += 1;
                    }
                    match empirical_information(&data, &f.theta_hat, &f.model, 0.95) {
                        Ok(cov) => {
                            ests.push(f.theta_hat.beta[1]);
                            ses.push(cov.beta[1].se);
                        }
                        Err(_) => fails += 1,
                    }
                }
                Err(_) => fails += 1,
            }
        }
        let n = ests.len() as f64;
        let mean = ests.iter().sum::<f64>() / n;
        let sd = (ests.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        let ese = ses.iter().sum::<f64>() / n;
        println!(
            "{mode:>6}: bias {:+.4} sd {sd:.4} ese {ese:.4} | fails {fails} nonconv {nonconv}",
            mean - 1.0
        );
    }
}
