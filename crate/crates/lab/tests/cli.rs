use std::process::{Command, Output};

use plm_core::model::{count_params, presets};

fn plm_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plm-lab"))
        .args(args)
        .env_remove("PLM_LAB_PRESET_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        &[][..],
        &["frobnicate"],
        &["params", "--bogus"],
        &["cache"],
        &["cost", "--n", "x"],
    ] {
        let o = plm_lab(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr).into_owned();
        assert!(err.contains("Usage") || err.starts_with("error:"), "{args:?}");
        assert!(o.stdout.is_empty(), "{args:?}");
    }
    assert_eq!(plm_lab(&["--help"]).status.code(), Some(0));
    assert_eq!(plm_lab(&["--version"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_one() {
    for args in [
        &["params", "--preset", "no-such-model"][..],
        &["params", "--config", "/nonexistent.json"],
        &["cache", "--n", "4", "--bits", "3"],
        &["bench", "--trials", "0", "--prefill", "4", "--gen", "1"],
        &["prefloss", "--batch", "/nonexistent.json"],
        &["init"],
    ] {
        let o = plm_lab(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"), "{args:?}");
    }
}

#[test]
fn params_matches_counter() {
    let v = json(&plm_lab(&["params", "--preset", "plm-1.8b"]));
    let p = count_params(&presets::plm_1_8b());
    assert_eq!(v["embedding"], 311_164_928u64);
    assert_eq!(v["embedding"], p.embedding);
    assert_eq!(v["non_embedding"], p.non_embedding);
    assert_eq!(v["model"], "plm-1.8b");
}

#[test]
fn cache_of_position_4096() {
    let o = plm_lab(&["cache", "--preset", "plm-1.8b", "--n", "4096", "--bits", "16"]);
    let v = json(&o);
    assert_eq!(v["bytes"], 150_958_080u64);
    assert!(stdout(&o).contains("150958080"));

    let o = plm_lab(&["cache", "--preset", "plm-1.8b", "--n", "4096", "--format", "csv"]);
    assert_eq!(
        stdout(&o),
        "model,position,cached_tokens,bits,bytes\nplm-1.8b,4096,4095,16,150958080\n"
    );
}

#[test]
fn config_file_and_preset_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = presets::plm_micro();
    let path = dir.path().join("mine.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let v = json(&plm_lab(&["params", "--config", path.to_str().unwrap()]));
    assert_eq!(v["total"], count_params(&cfg).total());

    let o = Command::new(env!("CARGO_BIN_EXE_plm-lab"))
        .args(["params", "--preset", "mine"])
        .env("PLM_LAB_PRESET_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(json(&o)["total"], count_params(&cfg).total());
}

#[test]
fn cost_reports_flops_twice_macs() {
    let v = json(&plm_lab(&[
        "cost",
        "--preset",
        "plm-micro",
        "--n",
        "64",
        "--phase",
        "decode",
    ]));
    assert_eq!(v["flops"].as_u64().unwrap(), 2 * v["macs"].as_u64().unwrap());
    let t = json(&plm_lab(&[
        "cost",
        "--preset",
        "plm-micro",
        "--n",
        "64",
        "--io-bps",
        "1e9",
        "--flops-ps",
        "1e12",
    ]));
    assert!(t["timing"]["io_seconds"].as_f64().unwrap() > 0.0);
}

#[test]
fn search_csv_columns() {
    let o = plm_lab(&["search", "--n", "128"]);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "name,params_nonemb,macs,flops,macs_per_param,cache_bytes,rank"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 7);
    let ranks: Vec<usize> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    assert_eq!(ranks, (1..=7).collect::<Vec<_>>());
    let macs: Vec<u64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(macs.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn bench_writes_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.json");
    let o = plm_lab(&[
        "bench",
        "--preset",
        "plm-micro",
        "--prefill",
        "8",
        "--gen",
        "2",
        "--trials",
        "1",
        "--quant",
        "q4",
        "--format",
        "json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let recs = plm_lab::report::read_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].output_tokens.len(), 10);
}

#[test]
fn init_then_sparsity_on_weights() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("m.plmw");
    let ws = w.to_str().unwrap();
    assert_eq!(
        plm_lab(&["init", "--preset", "plm-micro", "--seed", "3", "--out", ws])
            .status
            .code(),
        Some(0)
    );

    let m = json(&plm_lab(&["sparsity", "measure", "--weights", ws, "--tokens", "64"]));
    let z = m["zero_fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&z));

    let o = plm_lab(&[
        "sparsity",
        "sweep",
        "--weights",
        ws,
        "--tokens",
        "64",
        "--rates",
        "0,0.5",
    ]);
    let text = stdout(&o);
    assert!(text.starts_with("r,threshold,ppl,ppl_delta,zero_fraction,masked_params,executed_params"));
    assert_eq!(text.lines().count(), 3);

    let d = json(&plm_lab(&[
        "sparsity",
        "determine",
        "--weights",
        ws,
        "--tokens",
        "64",
        "--rates",
        "0,0.3",
    ]));
    assert!(d["rate"].as_f64().unwrap() >= 0.0);
}

#[test]
fn schedule_csv() {
    let o = plm_lab(&["schedule", "--total", "1000", "--every", "100"]);
    let text = stdout(&o);
    let rows: Vec<(u64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let (s, lr) = l.split_once(',').unwrap();
            (s.parse().unwrap(), lr.parse().unwrap())
        })
        .collect();
    assert!(text.starts_with("step,lr\n"));
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0], (0, 0.0));
    assert_eq!(rows[5].1, 3e-4);
    assert_eq!(rows[9].1, 3e-5);

    let c = stdout(&plm_lab(&[
        "schedule", "--kind", "cosine", "--total", "10", "--format", "json",
    ]));
    let v: serde_json::Value = serde_json::from_str(&c).unwrap();
    assert_eq!(v[0]["lr"], 3e-4);
    assert_eq!(v.as_array().unwrap().len(), 11);
}

#[test]
fn prefloss_neutral_batch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.json");
    let ex = |c: f64, r: f64| {
        let ctx = serde_json::json!({"policy_chosen": c, "policy_rejected": r, "ref_chosen": c, "ref_rejected": r});
        serde_json::json!({
            "policy_chosen": c, "policy_rejected": r, "ref_chosen": c, "ref_rejected": r,
            "refine_after_rejected": ctx, "refine_after_chosen": ctx,
        })
    };
    let batch = serde_json::json!({"examples": [ex(-1.0, -2.0), ex(-3.5, -0.5)]});
    std::fs::write(&path, batch.to_string()).unwrap();
    let v = json(&plm_lab(&["prefloss", "--batch", path.to_str().unwrap()]));
    assert!((v["dpo_loss"].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((v["refine_loss"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((v["aries_loss"].as_f64().unwrap() - 0.538_629).abs() < 1e-6);
    assert_eq!(v["implicit_reward_accuracy"], 0.5);
    assert!(v["max_grad_rel_error"]["aries"].as_f64().unwrap() < 1e-4);
}
