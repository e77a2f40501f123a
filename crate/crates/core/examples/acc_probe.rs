use std::time::Instant;

use recurode::estimator::FitOptions;
use recurode::model::{KnotSpec, ModelSpec, T0Spec, Variant};
use recurode::simgen::{mc_study, setting_catalog, CovChoice};
use recurode::spline::KnotRule;

fn show(label: &str, s: &recurode::simgen::McSummary, t: std::time::Duration) {
    println!("== {label} ({:?}, {} used / {} failures)", t, s.reps_used, s.failures);
    for r in &s.rows {
        println!(
            "  {}: bias {:+.4} se {:.4} ese {:.4} cp {:.3}",
            r.coef, r.bias, r.se, r.ese, r.cp
        );
    }
}

fn main() {
    let reps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);

    // C1: Setting 1 Cox.
    let tm = setting_catalog(1).unwrap();
    let spec = ModelSpec::new(Variant::Cox);
    let t = Instant::now();
    let s = mc_study(&tm, 1000, reps, &spec, &FitOptions::default(), CovChoice::InverseInformation, 0.95, 101).unwrap();
    show("C1 S1 cox n=1000 info", &s, t.elapsed());

    // C2: Setting 2 AM, cubic, N^(1/5) equal knots.
    let tm = setting_catalog(2).unwrap();
    let mut spec = ModelSpec::new(Variant::Am);
    spec.g.order = 4;
    spec.g.rule = KnotRule::Equal;
    spec.g.knots = KnotSpec::Exponent(0.2);
    let t = Instant::now();
    let s = mc_study(&tm, 1000, reps, &spec, &FitOptions::default(), CovChoice::InverseInformation, 0.95, 102).unwrap();
    show("C2 S2 am n=1000 info", &s, t.elapsed());

    // C3: Setting 4 Flex, cubic both, quantile knots, anchors beta1=1, alpha(2)=1.
    let tm = setting_catalog(4).unwrap();
    let mut spec = ModelSpec::new(Variant::Flex);
    spec.gamma.order = 4;
    spec.gamma.rule = KnotRule::Quantile;
    spec.gamma.knots = KnotSpec::Exponent(0.2);
    spec.g.order = 4;
    spec.g.rule = KnotRule::Quantile;
    spec.g.knots = KnotSpec::Exponent(0.2);
    spec.t0 = T0Spec::At(2.0);
    let t = Instant::now();
    let s = mc_study(&tm, 1000, reps.min(25), &spec, &FitOptions::default(), CovChoice::Resampling { resamples: 500 }, 0.95, 103).unwrap();
    show("C3 S4 flex n=1000 resample500", &s, t.elapsed());

    // C4: Setting 5 frailty Cox n=2000, resampling sandwich.
    let tm = setting_catalog(5).unwrap();
    let spec = ModelSpec::new(Variant::Cox);
    let t = Instant::now();
    let s = mc_study(&tm, 2000, reps, &spec, &FitOptions::default(), CovChoice::Resampling { resamples: 300 }, 0.95, 104).unwrap();
    show("C4 S5 cox n=2000 resample300", &s, t.elapsed());
}
