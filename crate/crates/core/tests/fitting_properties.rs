use collective_rabi::datagen::{synth, SignalModel, SynthSpec};
use collective_rabi::fitting::{
    default_alpha, fit, initialize, multi_start_fit, FitModelSpec, ModelEvaluator, ModelKind, ParamId, ParamMap,
};
use collective_rabi::model::ChirpedOscParams;
use collective_rabi::units::mhz_to_angular;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn eq5_counts(omega_mhz: f64, chirp: f64, seed: u64) -> collective_rabi::analysis::TimeTrace {
    let osc = ChirpedOscParams { beta: 6.0, chirp, t0: 0.1, omega_n: mhz_to_angular(omega_mhz), delta: 0.0 };
    synth(&SynthSpec {
        model: SignalModel::Eq5 { osc, alpha: default_alpha() },
        t_start: 0.0,
        t_end: 0.3,
        n_bins: 150,
        amplitude: 100.0,
        baseline: 2.0,
        seed,
    })
    .unwrap()
}

// Above the 250 MHz sampling limit of a 2 ns bin the spectrum folds back.
#[test]
fn aliased_traces_multi_start_never_worse() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let spec = FitModelSpec::single();
    for k in 0..12 {
        let f = rng.random_range(255.0..290.0);
        let tr = eq5_counts(f, 2.0, k);
        let one = multi_start_fit(&tr, &spec, 1, k).unwrap();
        let many = multi_start_fit(&tr, &spec, 16, k).unwrap();
        assert!(many.cost <= one.cost, "{f}: {} > {}", many.cost, one.cost);
        let got = many.get(ParamId::OmegaN).unwrap();
        assert!((got / mhz_to_angular(f) - 1.0).abs() < 0.01, "{f} MHz fitted as {got}");
    }
}

fn double_truth(f1: f64, f2: f64) -> ParamMap {
    let mut m = ParamMap::new();
    m.insert(ParamId::Amplitude, 50.0);
    m.insert(ParamId::Amplitude2, 50.0);
    m.insert(ParamId::Baseline, 2.0);
    m.insert(ParamId::Beta, 6.0);
    m.insert(ParamId::Chirp, 1.0);
    m.insert(ParamId::T0, 0.1);
    m.insert(ParamId::OmegaN, mhz_to_angular(f1));
    m.insert(ParamId::OmegaN2, mhz_to_angular(f2));
    m.insert(ParamId::Alpha, default_alpha());
    m
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn accepted_steps_never_raise_cost(f in 30.0f64..90.0, chirp in 0.0f64..8.0, seed in 0u64..1000) {
        let tr = eq5_counts(f, chirp, seed);
        let spec = FitModelSpec::single();
        let res = fit(&tr, &spec, &initialize(&tr, &spec).unwrap()).unwrap();
        for w in res.cost_history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert!(res.reduced_chi2 >= 0.0);
        if res.converged {
            prop_assert!(res.final_gradient < 1e-6 * res.initial_gradient || res.final_gradient < 1e-8);
        }
    }

    #[test]
    fn swapped_double_starts_give_same_pair(f1 in 40.0f64..50.0, gap in 12.0f64..25.0) {
        let truth = double_truth(f1, f1 + gap);
        let ev = ModelEvaluator::new(ModelKind::Double, 40).unwrap();
        let times: Vec<f64> = (0..150).map(|i| (i as f64 + 0.5) * 0.002).collect();
        let y = ev.eval(&collective_rabi::fitting::to_array(&truth), &times);
        let sigma = y.iter().map(|&c: &f64| c.max(1.0).sqrt()).collect();
        let tr = collective_rabi::analysis::TimeTrace::new(times, y, sigma).unwrap();
        let spec = FitModelSpec::double();
        let mut start = truth.clone();
        start.insert(ParamId::OmegaN, truth[&ParamId::OmegaN] * 1.01);
        start.insert(ParamId::OmegaN2, truth[&ParamId::OmegaN2] * 0.99);
        let mut swapped = start.clone();
        swapped.insert(ParamId::OmegaN, start[&ParamId::OmegaN2]);
        swapped.insert(ParamId::OmegaN2, start[&ParamId::OmegaN]);
        swapped.insert(ParamId::Amplitude, start[&ParamId::Amplitude2]);
        swapped.insert(ParamId::Amplitude2, start[&ParamId::Amplitude]);
        let a = fit(&tr, &spec, &start).unwrap();
        let b = fit(&tr, &spec, &swapped).unwrap();
        let (a1, a2) = (a.get(ParamId::OmegaN).unwrap(), a.get(ParamId::OmegaN2).unwrap());
        let (b1, b2) = (b.get(ParamId::OmegaN).unwrap(), b.get(ParamId::OmegaN2).unwrap());
        prop_assert!(a1 < a2 && b1 < b2);
        prop_assert!((a1 - b1).abs() < 1e-6 * a1 && (a2 - b2).abs() < 1e-6 * a2, "{a1} {a2} / {b1} {b2}");
    }
}
