//! Parameter, MAC and cache figures of the published configurations.

use plm_core::attention::{gqa_cache_bytes, mla_cache_bytes};
use plm_core::cost::{
    decode_cost_difference, decode_crossover, decode_latency, generate_cost, prefill_cost, rank_architectures,
    CostOptions, HardwareProfile, RankKey,
};
use plm_core::model::{count_params, presets, Model, ModelConfig};
use plm_core::tensor::{BitWidth, Rng};

#[test]
fn plm_parameter_counts() {
    let p = count_params(&presets::plm_1_8b());
    assert_eq!(p.embedding, 311_164_928);
    assert!(
        (p.non_embedding as f64 / 1.51e9 - 1.0).abs() < 0.01,
        "{}",
        p.non_embedding
    );
}

const TABLE_PARAMS: [f64; 7] = [1.54, 1.21, 1.47, 1.36, 1.51, 1.55, 1.54];
const TABLE_GMACS: [f64; 7] = [206.0, 164.0, 198.0, 184.0, 205.0, 207.0, 203.0];

#[test]
fn search_candidates_match_the_table() {
    for (i, (name, cfg)) in presets::search_candidates().into_iter().enumerate() {
        let params = count_params(&cfg).non_embedding as f64;
        assert!(
            (params / (TABLE_PARAMS[i] * 1e9) - 1.0).abs() < 0.03,
            "{name} params {params}"
        );
        let r = prefill_cost(&cfg, 128, &CostOptions::non_embedding()).unwrap();
        assert!(
            (r.macs as f64 / (TABLE_GMACS[i] * 1e9) - 1.0).abs() < 0.03,
            "{name} macs {}",
            r.macs
        );
        assert_eq!(r.flops, 2 * r.macs);
    }
}

#[test]
fn ranking_is_sorted_and_stable() {
    let cands: Vec<(String, ModelConfig)> = presets::search_candidates()
        .into_iter()
        .map(|(n, c)| (n.to_string(), c))
        .collect();
    let rows = rank_architectures(&cands, 128, &CostOptions::non_embedding(), RankKey::Macs, None).unwrap();
    assert_eq!(rows.len(), 7);
    for (i, w) in rows.windows(2).enumerate() {
        assert!(w[0].macs <= w[1].macs);
        assert_eq!(w[0].rank, i + 1);
    }
    assert_eq!(rows[0].name, "cand-2");
    // duplicated candidates tie and keep input order
    let dup = vec![cands[0].clone(), ("again".to_string(), cands[0].1.clone())];
    let rows = rank_architectures(&dup, 16, &CostOptions::non_embedding(), RankKey::Params, None).unwrap();
    assert_eq!(rows[0].name, "cand-1");
    assert_eq!(rows[1].rank, 2);
    assert!(rank_architectures(&dup, 16, &CostOptions::non_embedding(), RankKey::Latency, None).is_err());
}

#[test]
fn live_caches_match_the_formulas() {
    for (name, cfg) in presets::desk_scale() {
        let cfg = ModelConfig {
            n_layers: 2,
            max_seq_len: 512,
            ..cfg
        };
        let model = Model::build(&cfg, 1).unwrap();
        let tokens = Rng::new(2).tokens(512, cfg.vocab_size);
        for n in [0usize, 1, 7, 512] {
            let state = if n == 0 {
                model.new_state()
            } else {
                model.prefill(&tokens[..n]).unwrap().state
            };
            for bits in BitWidth::ALL {
                let want = if cfg.attention_kind.is_mla() {
                    mla_cache_bytes(cfg.kv_rank, cfg.d_rope, bits, n as u64, cfg.n_layers)
                } else {
                    gqa_cache_bytes(cfg.n_kv_heads, cfg.d_head(), bits, n as u64, cfg.n_layers)
                };
                assert_eq!(state.cache_bytes(bits), want, "{name} n={n} bits={bits}");
                if n > 0 {
                    let opts = CostOptions {
                        cache_bits: bits,
                        ..CostOptions::default()
                    };
                    assert_eq!(prefill_cost(&cfg, n, &opts).unwrap().cache_bytes, want);
                }
            }
        }
    }
}

#[test]
fn cache_arithmetic() {
    let plm = presets::plm_1_8b();
    assert_eq!(mla_cache_bytes(512, 64, BitWidth::Sixteen, 4095, 32), 150_958_080);
    assert_eq!(
        generate_cost(&plm, 4096, &CostOptions::default()).unwrap().cache_bytes,
        150_958_080
    );
    let gqa = gqa_cache_bytes(16, 192, BitWidth::Sixteen, 4096, 32);
    assert_eq!(gqa, 1_610_612_736);
    let ratio = gqa as f64 / mla_cache_bytes(512, 64, BitWidth::Sixteen, 4096, 32) as f64;
    assert!((ratio - 2.0 * 16.0 * 192.0 / 576.0).abs() < 1e-9);
    // linear in tokens and in bit width
    for n in [1u64, 9, 100] {
        assert_eq!(
            mla_cache_bytes(32, 8, BitWidth::Sixteen, n, 4),
            2 * mla_cache_bytes(32, 8, BitWidth::Eight, n, 4)
        );
        assert_eq!(
            gqa_cache_bytes(2, 24, BitWidth::Eight, 2 * n, 4),
            2 * gqa_cache_bytes(2, 24, BitWidth::Eight, n, 4)
        );
    }
}

#[test]
fn halving_kv_heads_changes_only_kv_terms() {
    let mha = presets::by_name("mha-micro").unwrap();
    let gqa = ModelConfig {
        n_kv_heads: 2,
        attention_kind: plm_core::model::AttentionKind::Gqa,
        ..mha.clone()
    };
    let opts = CostOptions::default();
    let a = generate_cost(&mha, 50, &opts).unwrap();
    let b = generate_cost(&gqa, 50, &opts).unwrap();
    let dh = mha.d_head() as u64;
    let layers = mha.n_layers as u64;
    let kv_proj = |kv: u64| layers * 2 * kv * dh * mha.d_model as u64;
    let rope = |kv: u64| layers * 2 * kv * dh;
    assert_eq!(a.breakdown.attn_proj - b.breakdown.attn_proj, kv_proj(4) - kv_proj(2));
    assert_eq!(a.breakdown.rope - b.breakdown.rope, rope(4) - rope(2));
    assert_eq!(a.breakdown.attn_scores, b.breakdown.attn_scores);
    assert_eq!(a.breakdown.ffn, b.breakdown.ffn);
    assert_eq!(a.cache_bytes, 2 * b.cache_bytes);
}

#[test]
fn decode_difference_coefficients() {
    let mla = presets::plm_1_8b();
    let gqa = presets::plm_1_8b_gqa();
    let opts = CostOptions::default();
    let d = decode_cost_difference(&mla, &gqa, 100, &opts).unwrap();
    let d2 = decode_cost_difference(&mla, &gqa, 101, &opts).unwrap();
    assert_eq!(d2.mac_delta - d.mac_delta, d.mac_coefficient);
    assert_eq!((d2.cache_delta - d.cache_delta) as f64, d.cache_coefficient);
    assert_eq!(d.cache_coefficient, 32.0 * (2.0 * 16.0 * 192.0 - 512.0 - 64.0) * 2.0);
    assert!(d.mac_coefficient > 0);

    // d_c + d_rope = 2 n_kv d_h makes the caches equal
    let small_mla = presets::plm_micro();
    let matched = ModelConfig {
        attention_kind: plm_core::model::AttentionKind::Gqa,
        n_kv_heads: 1,
        d_nope: 16,
        d_rope: 4,
        kv_rank: 0,
        ..small_mla.clone()
    };
    assert_eq!(
        2 * matched.n_kv_heads * matched.d_head(),
        small_mla.kv_rank + small_mla.d_rope
    );
    let d = decode_cost_difference(&small_mla, &matched, 64, &opts).unwrap();
    assert_eq!(d.cache_delta, 0);
    assert_eq!(d.cache_coefficient, 0.0);
    assert!(decode_cost_difference(&small_mla, &presets::plm_1_8b_gqa(), 1, &opts).is_err());
}

#[test]
fn crossover_matches_grid_search() {
    let mla = presets::plm_1_8b();
    let gqa = presets::plm_1_8b_gqa();
    let opts = CostOptions::attention_only();
    for (io, flops) in [(1e9, 1e15), (5e8, 2e14), (1e10, 1e13)] {
        let profile = HardwareProfile::new("synthetic", io, flops).unwrap();
        let grid = (1..=20_000).find(|&n| {
            decode_latency(&mla, n, &profile, &opts).unwrap() < decode_latency(&gqa, n, &profile, &opts).unwrap()
        });
        let closed = decode_crossover(&mla, &gqa, &profile, &opts, 20_000).unwrap();
        assert_eq!(closed, grid, "io={io} flops={flops}");
    }
    // with io far slower than compute, MLA wins early
    let profile = HardwareProfile::new("io-bound", 1e9, 1e15).unwrap();
    let n = decode_crossover(&mla, &gqa, &profile, &opts, 20_000).unwrap().unwrap();
    assert!(n < 100, "crossover at {n}");
}
