use plm_core::cost::{generation_macs, CostOptions};
use plm_core::model::{presets, ModelConfig};
use plm_core::tensor::BitWidth;
use plm_lab::bench::{check_capacity, run_latency_bench, run_offload_bench, BenchSpec, Quant};
use plm_lab::weights::{save_weights, WeightIndex};
use plm_lab::LabError;

fn spec(name: &str, quant: Quant, prefill: usize, gen: usize) -> BenchSpec {
    let cfg = presets::by_name(name).unwrap();
    BenchSpec {
        prefill_tokens: prefill,
        gen_tokens: gen,
        trials: 2,
        warmup_trials: 0,
        ..BenchSpec::new(name, cfg, quant)
    }
}

#[test]
fn tokens_are_trial_and_run_invariant() {
    let s = spec("plm-micro", Quant::Q8, 24, 6);
    let a = run_latency_bench(&s).unwrap();
    let b = run_latency_bench(&s).unwrap();
    assert_eq!(a.output_tokens.len(), 24 + 6);
    assert_eq!(a.output_tokens, b.output_tokens);
    assert_eq!(a.without_timings(), b.without_timings());

    let other = run_latency_bench(&BenchSpec { seed: 9, ..s }).unwrap();
    assert_ne!(a.output_tokens, other.output_tokens);
}

#[test]
fn macs_equal_cost_model() {
    for name in ["plm-micro", "gqa-micro", "plm-micro-swiglu"] {
        let s = spec(name, Quant::Fp16, 17, 5);
        let r = run_latency_bench(&s).unwrap();
        let (p, d) = generation_macs(&s.config, 17, 5, &CostOptions::default()).unwrap();
        assert_eq!((r.macs_prefill, r.macs_decode, r.macs_total), (p, d, p + d), "{name}");
    }
}

#[test]
fn weight_bytes_halve_per_step() {
    let bytes: Vec<f64> = Quant::ALL
        .iter()
        .map(|&q| run_latency_bench(&spec("plm-micro", q, 4, 1)).unwrap().weight_bytes as f64)
        .collect();
    for (ratio, nominal) in [
        (bytes[0] / bytes[1], 2.0),
        (bytes[1] / bytes[2], 2.0),
        (bytes[0] / bytes[2], 4.0),
    ] {
        assert!((ratio / nominal - 1.0).abs() < 0.02, "{ratio} vs {nominal}");
    }
}

#[test]
fn offload_zero_matches_resident_run() {
    let s = spec("plm-micro", Quant::Q4, 12, 4);
    let resident = run_latency_bench(&s).unwrap();
    let full = run_latency_bench(&BenchSpec {
        offload_layers: 4,
        ..s.clone()
    })
    .unwrap();
    assert_eq!(resident.output_tokens, full.output_tokens);
    assert_eq!(resident.macs_total, full.macs_total);
    assert_eq!(resident.io_bytes_per_step, 0);
    assert!(full.peak_resident_bytes < resident.peak_resident_bytes);
    assert!(matches!(run_offload_bench(&s), Err(LabError::Bench(_))));
}

#[test]
fn io_bytes_are_serialized_layer_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.plmw");
    let mut s = spec("plm-micro", Quant::Q8, 8, 3);
    let model = plm_core::model::Model::build(&s.config, s.seed).unwrap();
    save_weights(&model, &path).unwrap();
    let index = WeightIndex::read(&mut std::fs::File::open(&path).unwrap()).unwrap();

    s.weights_path = Some(path);
    s.offload_layers = 3;
    let r = run_offload_bench(&s).unwrap();
    let expect: u64 = (0..3).map(|i| index.layer_bytes(i)).sum();
    assert!(expect > 0);
    assert_eq!(r.io_bytes_per_step, expect);

    // the same model, fully resident
    let resident = run_latency_bench(&BenchSpec {
        offload_layers: 0,
        ..s.clone()
    })
    .unwrap();
    assert_eq!(resident.output_tokens, r.output_tokens);
}

#[test]
fn missing_weight_file_is_reported() {
    let mut s = spec("plm-micro", Quant::Q8, 4, 1);
    s.offload_layers = 1;
    s.weights_path = Some("/nonexistent/weights.plmw".into());
    assert!(matches!(run_offload_bench(&s), Err(LabError::Io { .. })));
}

#[test]
fn mla_peak_is_below_gqa_at_long_context() {
    let n = 900;
    let mla = run_latency_bench(&BenchSpec {
        trials: 1,
        ..spec("plm-micro", Quant::Q8, n, 2)
    })
    .unwrap();
    let mha = run_latency_bench(&BenchSpec {
        trials: 1,
        ..spec("mha-micro", Quant::Q8, n, 2)
    })
    .unwrap();
    assert!(mla.cache_bytes_final < mha.cache_bytes_final);
    assert!(mla.peak_resident_bytes < mha.peak_resident_bytes);
    let cfg = presets::plm_micro();
    assert_eq!(
        mla.cache_bytes_final,
        plm_core::cost::cache_bytes(&cfg, BitWidth::Sixteen, n + 2)
    );
}

#[test]
fn capacity_error_names_tensor() {
    let cfg = presets::plm_micro();
    let err = check_capacity(&cfg, 100_000).unwrap_err();
    match err {
        LabError::Capacity { tensor, needed, limit } => {
            assert_eq!(tensor, "embed");
            assert!(needed > limit);
        }
        e => panic!("unexpected {e}"),
    }
    check_capacity(&cfg, u64::MAX).unwrap();

    let s = BenchSpec {
        memory_limit: Some(300_000),
        ..spec("plm-micro", Quant::Q8, 4, 1)
    };
    assert!(matches!(run_latency_bench(&s), Err(LabError::Capacity { .. })));
}

#[test]
fn invalid_specs_rejected() {
    let base = spec("plm-micro", Quant::Q8, 4, 1);
    for bad in [
        BenchSpec {
            trials: 0,
            ..base.clone()
        },
        BenchSpec {
            prefill_tokens: 0,
            ..base.clone()
        },
        BenchSpec {
            offload_layers: 5,
            ..base.clone()
        },
        BenchSpec {
            prefill_tokens: 1000,
            gen_tokens: 100,
            ..base.clone()
        },
    ] {
        assert!(run_latency_bench(&bad).is_err());
    }
}

#[test]
fn sample_std_is_nonnegative() {
    let r = run_latency_bench(&BenchSpec {
        trials: 3,
        ..spec("plm-micro", Quant::Fp16, 16, 4)
    })
    .unwrap();
    for s in [r.prefill_tps, r.decode_tps] {
        assert!(s.mean > 0.0 && s.std >= 0.0);
    }
    let _: &ModelConfig = &r.spec.config;
}
