//! Latency benchmark: greedy generation timed per phase over repeated trials.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use plm_core::cost::{cache_bytes, generation_macs, CostOptions};
use plm_core::model::{weight_manifest, GenPhase, LayerSource, Model, ModelConfig, Resident};
use plm_core::tensor::{BitWidth, Rng};

use crate::error::{LabError, Result};
use crate::offload::FileLayerSource;
use crate::weights::{read_weights_partial, save_weights, with_path};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Quant {
    Fp16,
    Q8,
    Q4,
}

impl Quant {
    pub const ALL: [Quant; 3] = [Quant::Fp16, Quant::Q8, Quant::Q4];

    pub fn bits(self) -> BitWidth {
        match self {
            Quant::Fp16 => BitWidth::Sixteen,
            Quant::Q8 => BitWidth::Eight,
            Quant::Q4 => BitWidth::Four,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quant::Fp16 => "fp16",
            Quant::Q8 => "q8",
            Quant::Q4 => "q4",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    /// Preset or config file name, echoed into reports.
    pub model: String,
    pub config: ModelConfig,
    pub quant: Quant,
    pub prefill_tokens: usize,
    pub gen_tokens: usize,
    pub trials: usize,
    pub warmup_trials: usize,
    /// Layers (the first ones) re-read from storage every time they run.
    pub offload_layers: usize,
    pub seed: u64,
    /// Weight file used for offloading; a temporary file when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<PathBuf>,
    /// Upper bound on weight storage; defaults to the host's available memory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_limit: Option<u64>,
}

impl BenchSpec {
    pub fn new(model: impl Into<String>, config: ModelConfig, quant: Quant) -> Self {
        Self {
            model: model.into(),
            config,
            quant,
            prefill_tokens: 512,
            gen_tokens: 128,
            trials: 5,
            warmup_trials: 1,
            offload_layers: 0,
            seed: 0,
            weights_path: None,
            memory_limit: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Bench(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.prefill_tokens == 0 {
            return bad("prefill_tokens must be at least 1".into());
        }
        if self.prefill_tokens + self.gen_tokens > self.config.max_seq_len {
            return bad(format!(
                "prefill {} + generate {} exceeds max_seq_len {}",
                self.prefill_tokens, self.gen_tokens, self.config.max_seq_len
            ));
        }
        if self.offload_layers > self.config.n_layers {
            return bad(format!(
                "offload_layers {} exceeds n_layers {}",
                self.offload_layers, self.config.n_layers
            ));
        }
        Ok(())
    }

    /// The prompt every trial uses.
    pub fn prompt(&self) -> Vec<u32> {
        Rng::new(self.seed.wrapping_add(1)).tokens(self.prefill_tokens, self.config.vocab_size)
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub spec: BenchSpec,
    /// Tokens per second over the prefill phase.
    pub prefill_tps: Stat,
    /// Tokens per second over the generated tokens only.
    pub decode_tps: Stat,
    /// Resident weights and norms, the largest streamed layer, and the final
    /// cache at 16 bits per value.
    pub peak_resident_bytes: u64,
    pub weight_bytes: u64,
    pub macs_prefill: u64,
    pub macs_decode: u64,
    pub macs_total: u64,
    pub cache_bytes_prefill: u64,
    pub cache_bytes_final: u64,
    /// Bytes re-read from storage by one decode step.
    pub io_bytes_per_step: u64,
    /// Prompt followed by the generated tokens.
    pub output_tokens: Vec<u32>,
}

impl BenchRecord {
    /// Copy with timings cleared, for comparisons that must be exact.
    pub fn without_timings(&self) -> Self {
        Self {
            prefill_tps: Stat::default(),
            decode_tps: Stat::default(),
            ..self.clone()
        }
    }
}

/// Fails with the first tensor whose cumulative `f32` storage exceeds `limit`.
pub fn check_capacity(cfg: &ModelConfig, limit: u64) -> Result<()> {
    let mut total = 0u64;
    for (name, shape) in weight_manifest(cfg) {
        total += 4 * shape.iter().product::<usize>() as u64;
        if total > limit {
            return Err(LabError::Capacity {
                tensor: name,
                needed: total,
                limit,
            });
        }
    }
    Ok(())
}

/// `MemAvailable` from `/proc/meminfo`, where present.
pub fn available_memory() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kib: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib * 1024)
}

struct Trial {
    prefill_secs: f64,
    decode_secs: f64,
    tokens: Vec<u32>,
    macs_prefill: u64,
    macs_decode: u64,
    cache_final: u64,
}

fn run_trial(model: &Model, prompt: &[u32], n_new: usize, source: &mut dyn LayerSource) -> Result<Trial> {
    let start = Instant::now();
    let mut prefill_done = None;
    let mut decode_done = None;
    let generation = model.generate_with(prompt, n_new, source, &mut |phase| match phase {
        GenPhase::PrefillDone => prefill_done = Some(Instant::now()),
        GenPhase::DecodeDone => decode_done = Some(Instant::now()),
    })?;
    let (p, d) = (prefill_done.expect("prefill mark"), decode_done.expect("decode mark"));
    Ok(Trial {
        prefill_secs: (p - start).as_secs_f64(),
        decode_secs: (d - p).as_secs_f64(),
        tokens: generation.tokens,
        macs_prefill: generation.prefill_ops.macs(),
        macs_decode: generation.decode_ops.macs(),
        cache_final: generation.state.cache_bytes(BitWidth::Sixteen),
    })
}

fn tps(tokens: usize, secs: f64) -> f64 {
    if tokens == 0 {
        0.0
    } else {
        tokens as f64 / secs.max(1e-12)
    }
}

pub fn run_latency_bench(spec: &BenchSpec) -> Result<BenchRecord> {
    spec.validate()?;
    let cfg = &spec.config;
    if let Some(limit) = spec.memory_limit.or_else(available_memory) {
        check_capacity(cfg, limit)?;
    }
    let bits = spec.quant.bits();
    let offloaded = |i: usize| i < spec.offload_layers;

    // Streamed layers are stored unquantized and quantized on every load.
    let mut temp = None;
    let (mut model, path) = match &spec.weights_path {
        Some(path) => {
            let mut f = std::fs::File::open(path).map_err(|e| LabError::io(path, e))?;
            let model = read_weights_partial(&mut std::io::BufReader::new(&mut f), &|i| !offloaded(i))
                .map_err(|e| with_path(e, path))?;
            if model.config() != cfg {
                return Err(LabError::Config(format!(
                    "{} holds a different config than the benchmark spec",
                    path.display()
                )));
            }
            (model, Some(path.clone()))
        }
        None if spec.offload_layers > 0 => {
            let mut model = Model::build(cfg, spec.seed)?;
            let f = tempfile::Builder::new()
                .suffix(".plmw")
                .tempfile()
                .map_err(|e| LabError::io(std::env::temp_dir(), e))?;
            let p = f.path().to_path_buf();
            save_weights(&model, &p)?;
            temp = Some(f);
            for i in 0..spec.offload_layers {
                model.evict_layer(i);
            }
            (model, Some(p))
        }
        None => (Model::build(cfg, spec.seed)?, None),
    };
    let mut source = match (&path, spec.offload_layers) {
        (Some(p), n) if n > 0 => Some(FileLayerSource::open(p, Some(bits))?),
        _ => None,
    };
    model.quantize(bits)?;

    let prompt = spec.prompt();
    let mut prefill = Vec::with_capacity(spec.trials);
    let mut decode = Vec::with_capacity(spec.trials);
    let mut first: Option<Trial> = None;
    for k in 0..spec.warmup_trials + spec.trials {
        let src: &mut dyn LayerSource = match &mut source {
            Some(s) => {
                s.reset_counters();
                s
            }
            None => &mut Resident,
        };
        let trial = run_trial(&model, &prompt, spec.gen_tokens, src)?;
        if let Some(f) = &first {
            if f.tokens != trial.tokens {
                return Err(LabError::Bench("generated tokens differ between trials".into()));
            }
        }
        if k >= spec.warmup_trials {
            prefill.push(tps(spec.prefill_tokens, trial.prefill_secs));
            decode.push(tps(spec.gen_tokens, trial.decode_secs));
        }
        if first.is_none() {
            first = Some(trial);
        }
    }
    let trial = first.expect("at least one trial");

    let opts = CostOptions::default();
    let (want_prefill, want_decode) = generation_macs(cfg, spec.prefill_tokens, spec.gen_tokens, &opts)?;
    if (want_prefill, want_decode) != (trial.macs_prefill, trial.macs_decode) {
        return Err(LabError::Bench(format!(
            "counted MACs ({}, {}) differ from the cost model ({want_prefill}, {want_decode})",
            trial.macs_prefill, trial.macs_decode
        )));
    }

    let (io_bytes_per_step, streamed) = match &source {
        Some(s) => {
            let per_step: u64 = (0..spec.offload_layers).map(|i| s.index().layer_bytes(i)).sum();
            let steps = 1 + spec.gen_tokens as u64;
            if s.io_bytes() != per_step * steps {
                return Err(LabError::Bench(format!(
                    "read {} bytes from storage, expected {} per pass x {steps}",
                    s.io_bytes(),
                    per_step
                )));
            }
            (per_step, s.largest_layer_bytes() as u64)
        }
        None => (0, 0),
    };
    drop(source);
    drop(temp);

    let weight_bytes = model.weight_bytes() as u64;
    let cache_bytes_final = trial.cache_final;
    Ok(BenchRecord {
        spec: spec.clone(),
        prefill_tps: Stat::of(&prefill),
        decode_tps: Stat::of(&decode),
        peak_resident_bytes: weight_bytes + model.norm_bytes() as u64 + streamed + cache_bytes_final,
        weight_bytes,
        macs_prefill: trial.macs_prefill,
        macs_decode: trial.macs_decode,
        macs_total: trial.macs_prefill + trial.macs_decode,
        cache_bytes_prefill: cache_bytes(cfg, BitWidth::Sixteen, spec.prefill_tokens),
        cache_bytes_final,
        io_bytes_per_step,
        output_tokens: trial.tokens,
    })
}

/// `run_latency_bench` for specs that stream at least one layer. With a
/// `weights_path` the file must already exist.
pub fn run_offload_bench(spec: &BenchSpec) -> Result<BenchRecord> {
    if spec.offload_layers == 0 {
        return Err(LabError::Bench("offload bench needs offload_layers > 0".into()));
    }
    run_latency_bench(spec)
}
