use plm_core::ffn::{
    activation_sparsity_measure, determine_sparsity_rate, executed_params, mask_smallest, relu2, sparsity_sweep,
    zero_fraction, Activation, SparsityOptions,
};
use plm_core::model::{count_params, presets, Model, ModelConfig};
use plm_core::tensor::{Linear, Rng};
use proptest::prelude::*;

fn toy_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 32,
        d_ffn: 60,
        vocab_size: 40,
        max_seq_len: 64,
        ..presets::plm_micro()
    }
}

/// Zeroes the first 90% of every up-projection row, so at least 90% of the
/// post-activation entries are exactly zero.
fn ninety_percent_zeros(seed: u64) -> Model {
    let cfg = toy_config();
    let mut model = Model::build(&cfg, seed).unwrap();
    for i in 0..cfg.n_layers {
        let up = &mut model.layer_mut(i).unwrap().ffn.weights_mut().up;
        if let Linear::Dense(m) = up {
            for r in 0..cfg.d_ffn * 9 / 10 {
                m.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    model
}

fn candidates() -> Vec<f64> {
    (0..=9).map(|i| i as f64 / 10.0).collect()
}

#[test]
fn toy_model_reaches_ninety_percent() {
    let model = ninety_percent_zeros(1);
    let stream = Rng::new(2).tokens(96, 40);
    assert!(activation_sparsity_measure(&model, &stream).unwrap() >= 0.9);
    let opts = SparsityOptions {
        delta_ppl: 1.0,
        candidates: candidates(),
        literal: false,
    };
    let report = determine_sparsity_rate(&model, &stream, &opts).unwrap().unwrap();
    assert!(report.rate >= 0.9, "rate {}", report.rate);
    assert!((report.masked_ppl - report.baseline_ppl).abs() < 1e-9);
    assert_eq!(
        report.executed_params + report.masked_params,
        count_params(model.config()).total()
    );

    // every candidate up to 0.9 masks only exact zeros and is bit-identical
    for row in sparsity_sweep(&model, &stream, &candidates()).unwrap() {
        assert_eq!(row.ppl_delta, 0.0, "r={}", row.r);
        assert_eq!(row.threshold, 0.0);
    }
}

#[test]
fn infinite_tolerance_takes_the_largest_rate() {
    let model = Model::build(&toy_config(), 3).unwrap();
    let stream = Rng::new(4).tokens(40, 40);
    let opts = SparsityOptions {
        delta_ppl: f64::INFINITY,
        candidates: vec![0.0, 0.5, 0.99],
        literal: false,
    };
    let report = determine_sparsity_rate(&model, &stream, &opts).unwrap().unwrap();
    assert_eq!(report.rate, 0.99);
    assert!(report.zero_fraction >= 0.99);
}

#[test]
fn zero_rate_is_the_baseline_exactly() {
    let model = Model::build(&toy_config(), 5).unwrap();
    let stream = Rng::new(6).tokens(40, 40);
    let rows = sparsity_sweep(&model, &stream, &[0.0, 0.3]).unwrap();
    assert_eq!(rows[0].ppl, model.perplexity(&stream).unwrap());
    assert_eq!(rows[0].ppl_delta, 0.0);
    assert_eq!(rows[0].masked_params, 0);
}

#[test]
fn literal_direction_rejects_every_increase() {
    let model = ninety_percent_zeros(7);
    let stream = Rng::new(8).tokens(40, 40);
    let opts = SparsityOptions {
        delta_ppl: 1.0,
        candidates: candidates(),
        literal: true,
    };
    assert!(determine_sparsity_rate(&model, &stream, &opts).unwrap().is_none());
}

#[test]
fn invalid_candidates_rejected() {
    let model = Model::build(&toy_config(), 9).unwrap();
    let stream = [1, 2, 3];
    let mut opts = SparsityOptions {
        candidates: vec![0.5, 0.1],
        ..SparsityOptions::default()
    };
    assert!(determine_sparsity_rate(&model, &stream, &opts).is_err());
    opts.candidates = vec![1.5];
    assert!(determine_sparsity_rate(&model, &stream, &opts).is_err());
    assert!(activation_sparsity_measure(&model, &[]).is_err());
}

#[test]
fn relu2_closed_form_on_a_million_points() {
    let mut rng = Rng::new(10);
    for _ in 0..1_000_000 {
        let x = (rng.normal() * 10.0) as f32;
        let want = if x > 0.0 { x * x } else { 0.0 };
        assert_eq!(relu2(x), want);
        assert!(relu2(x) >= 0.0);
    }
}

#[test]
fn gaussian_zero_fractions() {
    let mut rng = Rng::new(11);
    let standard: Vec<f32> = (0..200_000).map(|_| relu2(rng.normal() as f32)).collect();
    assert!((zero_fraction(&standard) - 0.5).abs() < 0.02);

    // N(-2, 1) is inactive with probability Φ(2)
    let biased: Vec<f32> = (0..200_000).map(|_| relu2((rng.normal() - 2.0) as f32)).collect();
    let phi2 = 0.5 * libm::erfc(-2.0 / std::f64::consts::SQRT_2);
    assert!(
        (zero_fraction(&biased) - phi2).abs() < 0.003,
        "{}",
        zero_fraction(&biased)
    );
}

#[test]
fn model_level_measures() {
    let stream = Rng::new(12).tokens(64, 512);
    let relu = Model::build(&presets::plm_micro(), 13).unwrap();
    let f = activation_sparsity_measure(&relu, &stream).unwrap();
    assert!((f - 0.5).abs() < 0.05, "relu2 zero fraction {f}");
    let swiglu = Model::build(&presets::by_name("plm-micro-swiglu").unwrap(), 13).unwrap();
    assert_eq!(swiglu.config().activation, Activation::Swiglu);
    assert!(activation_sparsity_measure(&swiglu, &stream).unwrap() < 1e-3);
}

#[test]
fn plm_masked_parameters() {
    let (masked, executed, ratio) = executed_params(&presets::plm_1_8b(), 0.909);
    assert!((masked as f64 / 0.4832e9 - 1.0).abs() < 0.02, "masked {masked}");
    let total = count_params(&presets::plm_1_8b()).total();
    assert_eq!(masked + executed, total);
    assert_eq!(ratio, executed as f64 / total as f64);
    assert_eq!(executed_params(&presets::plm_1_8b(), 0.0).2, 1.0);
}

#[test]
fn masking_exact_zeros_changes_nothing() {
    let model = ninety_percent_zeros(14);
    let stream = Rng::new(15).tokens(30, 40);
    let rows = sparsity_sweep(&model, &stream, &[0.0, 0.45, 0.9]).unwrap();
    assert!(rows.iter().all(|r| r.ppl == rows[0].ppl));
}

proptest! {
    #[test]
    fn mask_matches_sort_oracle(xs in prop::collection::vec(-4.0f32..4.0, 0..40), r in 0.0f64..=1.0) {
        let (masked, _, mask) = mask_smallest(&xs, r);
        let k = ((r * xs.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| xs[a].abs().partial_cmp(&xs[b].abs()).unwrap().then(a.cmp(&b)));
        let chosen: std::collections::BTreeSet<usize> = order[..k.min(xs.len())].iter().copied().collect();
        for i in 0..xs.len() {
            prop_assert_eq!(mask[i] == 1, chosen.contains(&i));
            prop_assert_eq!(masked[i], if chosen.contains(&i) { 0.0 } else { xs[i] });
        }
        // idempotent at fixed r
        prop_assert_eq!(mask_smallest(&masked, r).0, masked);
    }

    #[test]
    fn executed_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let cfg = presets::plm_micro();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (m1, e1, _) = executed_params(&cfg, lo);
        let (m2, e2, _) = executed_params(&cfg, hi);
        prop_assert!(e2 <= e1);
        prop_assert_eq!(m1 + e1, m2 + e2);
    }
}
