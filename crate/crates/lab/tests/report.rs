use std::path::PathBuf;

use plm_core::model::presets;
use plm_lab::bench::{run_latency_bench, BenchRecord, BenchSpec, Quant, Stat};
use plm_lab::report::{emit_report, read_json, render, Format, CSV_HEADER};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

fn micro(quant: Quant) -> BenchRecord {
    let spec = BenchSpec {
        prefill_tokens: 32,
        gen_tokens: 8,
        trials: 2,
        warmup_trials: 1,
        seed: 7,
        ..BenchSpec::new("plm-micro", presets::plm_micro(), quant)
    };
    run_latency_bench(&spec).unwrap()
}

#[test]
fn csv_header_and_rows() {
    let rec = micro(Quant::Q8);
    let text = String::from_utf8(render(std::slice::from_ref(&rec), Format::Csv).unwrap()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(
        lines[0],
        "model,quant,phase,tokens,tps_mean,tps_std,peak_bytes,macs,cache_bytes"
    );
    assert_eq!(lines[0], CSV_HEADER.join(","));
    let prefill: Vec<&str> = lines[1].split(',').collect();
    let decode: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(&prefill[..4], &["plm-micro", "q8", "prefill", "32"]);
    assert_eq!(&decode[..4], &["plm-micro", "q8", "decode", "8"]);
    assert_eq!(
        prefill[7].parse::<u64>().unwrap() + decode[7].parse::<u64>().unwrap(),
        rec.macs_total
    );
    assert_eq!(decode[8].parse::<u64>().unwrap(), rec.cache_bytes_final);
    assert_eq!(prefill[6], decode[6]);
}

#[test]
fn json_round_trips() {
    let recs = vec![micro(Quant::Fp16), micro(Quant::Q4)];
    let text = String::from_utf8(render(&recs, Format::Json).unwrap()).unwrap();
    assert_eq!(read_json(&text).unwrap(), recs);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let keys: Vec<&str> = v[0].as_object().unwrap().keys().map(String::as_str).collect();
    for k in [
        "spec",
        "prefill_tps",
        "decode_tps",
        "peak_resident_bytes",
        "macs_total",
        "cache_bytes_final",
    ] {
        assert!(keys.contains(&k), "{k} missing from {keys:?}");
    }
}

#[test]
fn field_order_is_stable() {
    let rec = micro(Quant::Q8).without_timings();
    let a = render(std::slice::from_ref(&rec), Format::Json).unwrap();
    let b = render(&[rec], Format::Json).unwrap();
    assert_eq!(a, b);
}

#[test]
fn emit_writes_files_and_rejects_empty() {
    let dir = tempfile::tempdir().unwrap();
    let rec = micro(Quant::Q8);
    let csv = dir.path().join("r.csv");
    emit_report(std::slice::from_ref(&rec), Format::Csv, &csv).unwrap();
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("model,quant,phase"));
    assert!(emit_report(&[], Format::Json, &dir.path().join("e.json")).is_err());
    assert!(emit_report(&[rec], Format::Json, &dir.path().join("no/such/dir/r.json")).is_err());
}

#[test]
fn stat_is_mean_and_sample_std() {
    let s = Stat::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
    assert_eq!(s.mean, 5.0);
    assert!((s.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    assert_eq!(Stat::of(&[3.0]).std, 0.0);
}

/// Counts, bytes and tokens of a seeded run, timings zeroed.
#[test]
fn golden_micro_bench() {
    let recs: Vec<BenchRecord> = Quant::ALL.iter().map(|&q| micro(q).without_timings()).collect();
    let path = golden("micro_bench.json");
    if std::env::var("PLM_LAB_BLESS").is_ok_and(|v| v == "1") {
        std::fs::write(&path, render(&recs, Format::Json).unwrap()).unwrap();
    }
    let expect = read_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(recs, expect);
}
