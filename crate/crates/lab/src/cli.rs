//! Command-line interface. Exit codes: 0 success, 1 runtime error, 2 usage.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use plm_core::cost::{generate_cost, prefill_cost, rank_architectures, CostOptions, HardwareProfile, RankKey};
use plm_core::ffn::{activation_sparsity_measure, determine_sparsity_rate, sparsity_sweep, SparsityOptions};
use plm_core::model::{count_params, presets, Model, ModelConfig};
use plm_core::tensor::{BitWidth, Rng};
use plm_core::train::{
    aries_loss, cosine_lr, dpo_loss, grad_check, implicit_reward_accuracy, refine_loss, wsdc_lr, FinalCosine,
    LossParams, PreferenceBatch, WsdcSchedule,
};

use crate::bench::{run_latency_bench, BenchSpec, Quant};
use crate::config_io::{load_config, resolve};
use crate::error::{LabError, Result};
use crate::report::{render, Format};
use crate::weights::{load_weights, save_weights};

#[derive(Debug, Parser)]
#[command(
    name = "plm-lab",
    version,
    about = "Edge-LLM laboratory: costs, caches, sparsity, benchmarks"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Model config JSON file (takes precedence over --preset).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Built-in preset, or <name>.json under $PLM_LAB_PRESET_DIR.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Write output here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embedding and non-embedding parameter counts.
    Params,
    /// Closed-form MACs, FLOPs and cache bytes for one phase.
    Cost(CostArgs),
    /// KV-cache bytes while generating the token at position N.
    Cache(CacheArgs),
    /// Rank architecture candidates by analytic cost.
    Search(SearchArgs),
    /// Prefill/decode latency benchmark.
    Bench(BenchArgs),
    /// Activation sparsity tools.
    #[command(subcommand)]
    Sparsity(SparsityCommand),
    /// Learning-rate schedule as (step, lr) rows.
    Schedule(ScheduleArgs),
    /// Preference losses, accuracy and gradient checks for a batch file.
    Prefloss(PreflossArgs),
    /// Write a randomly initialized weight file to --out.
    Init,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PhaseArg {
    Prefill,
    Decode,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Prompt length (prefill) or position of the generated token (decode).
    #[arg(long, default_value_t = 128)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = PhaseArg::Prefill)]
    pub phase: PhaseArg,
    /// Cache bit width.
    #[arg(long, default_value_t = 16)]
    pub bits: u32,
    /// Leave out the logits head.
    #[arg(long)]
    pub no_lm_head: bool,
    /// Leave out the feed-forward blocks.
    #[arg(long)]
    pub no_ffn: bool,
    /// Storage/memory bandwidth in bytes per second, for timing.
    #[arg(long, requires = "flops_ps")]
    pub io_bps: Option<f64>,
    /// Compute throughput in FLOP/s, for timing.
    #[arg(long, requires = "io_bps")]
    pub flops_ps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 16)]
    pub bits: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum KeyArg {
    Params,
    Macs,
    Flops,
    MacsPerParam,
    CacheBytes,
    Latency,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, default_value_t = 128)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = KeyArg::Macs)]
    pub key: KeyArg,
    /// Candidate config files; the built-in search candidates when absent.
    #[arg(long = "candidate", value_name = "FILE")]
    pub candidates: Vec<PathBuf>,
    #[arg(long)]
    pub include_lm_head: bool,
    #[arg(long, requires = "flops_ps")]
    pub io_bps: Option<f64>,
    #[arg(long, requires = "io_bps")]
    pub flops_ps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Quantization formats to run (repeatable); all three when absent.
    #[arg(long = "quant", value_enum)]
    pub quants: Vec<Quant>,
    #[arg(long, default_value_t = 512)]
    pub prefill: usize,
    #[arg(long, default_value_t = 128)]
    pub gen: usize,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Layers re-read from storage every time they run.
    #[arg(long, default_value_t = 0)]
    pub offload_layers: usize,
    /// Existing weight file to benchmark (its config must match).
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Weight memory limit in bytes.
    #[arg(long)]
    pub memory_limit: Option<u64>,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    /// Length of the seeded token stream.
    #[arg(long, default_value_t = 256)]
    pub tokens: usize,
    /// Weight file; a seeded random model when absent.
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SparsityCommand {
    /// Fraction of exactly-zero activations.
    Measure(StreamArgs),
    /// Perplexity at each candidate rate.
    Sweep {
        #[command(flatten)]
        stream: StreamArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        rates: Vec<f64>,
    },
    /// Largest rate whose perplexity increase stays within the tolerance.
    Determine {
        #[command(flatten)]
        stream: StreamArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        delta_ppl: f64,
        /// Accept rates whose perplexity drops by at least the tolerance.
        #[arg(long)]
        literal: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ScheduleKind {
    Wsdc,
    Cosine,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, value_enum, default_value_t = ScheduleKind::Wsdc)]
    pub kind: ScheduleKind,
    #[arg(long, default_value_t = 10_000)]
    pub total: u64,
    #[arg(long, default_value_t = 0.01)]
    pub warmup_fraction: f64,
    #[arg(long, default_value_t = 3e-4)]
    pub peak: f64,
    #[arg(long, default_value_t = 3e-5)]
    pub decay_end_lr: f64,
    /// Last stable step; 70% of --total when absent.
    #[arg(long)]
    pub stable_end: Option<u64>,
    /// Last decay step; 90% of --total when absent.
    #[arg(long)]
    pub decay_end: Option<u64>,
    #[arg(long, default_value_t = 3e-5)]
    pub constant_lr: f64,
    /// Start of an optional final cosine segment.
    #[arg(long)]
    pub cosine_start: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    pub cosine_end_lr: f64,
    /// Floor of the plain cosine schedule.
    #[arg(long, default_value_t = 0.0)]
    pub min_lr: f64,
    /// Emit every k-th step (the last step is always included).
    #[arg(long, default_value_t = 1)]
    pub every: u64,
}

#[derive(Debug, Args)]
pub struct PreflossArgs {
    /// JSON file: {"examples": [...]}.
    #[arg(long, value_name = "FILE")]
    pub batch: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta_dpo: f64,
    #[arg(long, default_value_t = 0.01)]
    pub beta_refine: f64,
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn output(global: &Global, bytes: &[u8]) -> Result<()> {
    match &global.out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| LabError::io(path, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| LabError::io("<stdout>", e))
        }
    }
}

fn json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| LabError::json("output", e))?;
    v.push(b'\n');
    Ok(v)
}

fn csv_rows<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| LabError::Bench(e.to_string()))
}

fn structured<T: Serialize>(global: &Global, default: Format, rows: &[T]) -> Result<Vec<u8>> {
    match global.format.unwrap_or(default) {
        Format::Json if rows.len() == 1 => json(&rows[0]),
        Format::Json => json(rows),
        Format::Csv => csv_rows(rows),
    }
}

fn bits(b: u32) -> Result<BitWidth> {
    Ok(BitWidth::try_from(b)?)
}

fn model_config(global: &Global) -> Result<(String, ModelConfig)> {
    resolve(global.config.as_deref(), global.preset.as_deref(), "plm-micro")
}

fn profile(io: Option<f64>, flops: Option<f64>) -> Result<Option<HardwareProfile>> {
    match (io, flops) {
        (Some(io), Some(f)) => Ok(Some(HardwareProfile::new("cli", io, f)?)),
        _ => Ok(None),
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Params => {
            #[derive(Serialize)]
            struct Row {
                model: String,
                embedding: u64,
                non_embedding: u64,
                total: u64,
            }
            let (name, cfg) = model_config(g)?;
            let p = count_params(&cfg);
            let row = Row {
                model: name,
                embedding: p.embedding,
                non_embedding: p.non_embedding,
                total: p.total(),
            };
            output(g, &structured(g, Format::Json, &[row])?)
        }
        Command::Cost(a) => {
            let (_, cfg) = model_config(g)?;
            let opts = CostOptions {
                cache_bits: bits(a.bits)?,
                include_ffn: !a.no_ffn,
                include_lm_head: !a.no_lm_head,
            };
            let mut report = match a.phase {
                PhaseArg::Prefill => prefill_cost(&cfg, a.n, &opts)?,
                PhaseArg::Decode => generate_cost(&cfg, a.n, &opts)?,
            };
            if let Some(p) = profile(a.io_bps, a.flops_ps)? {
                report = report.timed(&p);
            }
            output(g, &json(&report)?)
        }
        Command::Cache(a) => {
            #[derive(Serialize)]
            struct Row {
                model: String,
                position: usize,
                cached_tokens: usize,
                bits: u32,
                bytes: u64,
            }
            let (name, cfg) = model_config(g)?;
            let b = bits(a.bits)?;
            let cached = a.n.saturating_sub(1);
            let row = Row {
                model: name,
                position: a.n,
                cached_tokens: cached,
                bits: b.bits(),
                bytes: plm_core::cost::cache_bytes(&cfg, b, cached),
            };
            output(g, &structured(g, Format::Json, &[row])?)
        }
        Command::Search(a) => {
            let candidates: Vec<(String, ModelConfig)> = if a.candidates.is_empty() {
                presets::search_candidates()
                    .into_iter()
                    .map(|(n, c)| (n.to_string(), c))
                    .collect()
            } else {
                a.candidates
                    .iter()
                    .map(|p| Ok((stem(p), load_config(p)?)))
                    .collect::<Result<_>>()?
            };
            let opts = CostOptions {
                include_lm_head: a.include_lm_head,
                ..CostOptions::non_embedding()
            };
            let key = match a.key {
                KeyArg::Params => RankKey::Params,
                KeyArg::Macs => RankKey::Macs,
                KeyArg::Flops => RankKey::Flops,
                KeyArg::MacsPerParam => RankKey::MacsPerParam,
                KeyArg::CacheBytes => RankKey::CacheBytes,
                KeyArg::Latency => RankKey::Latency,
            };
            let p = profile(a.io_bps, a.flops_ps)?;
            let rows = rank_architectures(&candidates, a.n, &opts, key, p.as_ref())?;
            match g.format.unwrap_or(Format::Csv) {
                Format::Json => output(g, &json(&rows)?),
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    w.write_record([
                        "name",
                        "params_nonemb",
                        "macs",
                        "flops",
                        "macs_per_param",
                        "cache_bytes",
                        "rank",
                    ])?;
                    for r in &rows {
                        w.write_record([
                            r.name.clone(),
                            r.params_nonemb.to_string(),
                            r.macs.to_string(),
                            r.flops.to_string(),
                            format!("{:.4}", r.macs_per_param),
                            r.cache_bytes.to_string(),
                            r.rank.to_string(),
                        ])?;
                    }
                    output(g, &w.into_inner().map_err(|e| LabError::Bench(e.to_string()))?)
                }
            }
        }
        Command::Bench(a) => {
            let (name, cfg) = model_config(g)?;
            let quants = if a.quants.is_empty() {
                Quant::ALL.to_vec()
            } else {
                a.quants.clone()
            };
            let mut records = Vec::new();
            for q in quants {
                let spec = BenchSpec {
                    prefill_tokens: a.prefill,
                    gen_tokens: a.gen,
                    trials: a.trials,
                    warmup_trials: a.warmup,
                    offload_layers: a.offload_layers,
                    seed: g.seed,
                    weights_path: a.weights.clone(),
                    memory_limit: a.memory_limit,
                    ..BenchSpec::new(name.clone(), cfg.clone(), q)
                };
                records.push(run_latency_bench(&spec)?);
            }
            output(g, &render(&records, g.format.unwrap_or(Format::Csv))?)
        }
        Command::Sparsity(cmd) => sparsity(g, cmd),
        Command::Schedule(a) => schedule(g, a),
        Command::Prefloss(a) => prefloss(g, a),
        Command::Init => {
            let path = g
                .out
                .as_ref()
                .ok_or_else(|| LabError::Config("init needs --out <path>".into()))?;
            let (_, cfg) = model_config(g)?;
            save_weights(&Model::build(&cfg, g.seed)?, path)
        }
    }
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn stream_model(g: &Global, s: &StreamArgs) -> Result<(Model, Vec<u32>)> {
    let model = match &s.weights {
        Some(path) => load_weights(path)?,
        None => Model::build(&model_config(g)?.1, g.seed)?,
    };
    let stream = Rng::new(g.seed.wrapping_add(2)).tokens(s.tokens, model.config().vocab_size);
    Ok((model, stream))
}

fn sparsity(g: &Global, cmd: &SparsityCommand) -> Result<()> {
    match cmd {
        SparsityCommand::Measure(s) => {
            #[derive(Serialize)]
            struct Row {
                tokens: usize,
                zero_fraction: f64,
            }
            let (model, stream) = stream_model(g, s)?;
            let row = Row {
                tokens: stream.len(),
                zero_fraction: activation_sparsity_measure(&model, &stream)?,
            };
            output(g, &structured(g, Format::Json, &[row])?)
        }
        SparsityCommand::Sweep { stream, rates } => {
            let (model, tokens) = stream_model(g, stream)?;
            let rows = sparsity_sweep(&model, &tokens, rates)?;
            match g.format.unwrap_or(Format::Csv) {
                Format::Json => output(g, &json(&rows)?),
                Format::Csv => output(g, &csv_rows(&rows)?),
            }
        }
        SparsityCommand::Determine {
            stream,
            rates,
            delta_ppl,
            literal,
        } => {
            let (model, tokens) = stream_model(g, stream)?;
            let opts = SparsityOptions {
                delta_ppl: *delta_ppl,
                candidates: rates.clone(),
                literal: *literal,
            };
            let report = determine_sparsity_rate(&model, &tokens, &opts)?;
            output(g, &json(&report)?)
        }
    }
}

fn schedule(g: &Global, a: &ScheduleArgs) -> Result<()> {
    let every = a.every.max(1);
    let mut steps: Vec<u64> = (0..=a.total).step_by(every as usize).collect();
    if steps.last() != Some(&a.total) {
        steps.push(a.total);
    }
    let lr: Box<dyn Fn(u64) -> plm_core::Result<f64>> = match a.kind {
        ScheduleKind::Cosine => {
            let (peak, min, total) = (a.peak, a.min_lr, a.total);
            Box::new(move |s| cosine_lr(s, peak, min, total))
        }
        ScheduleKind::Wsdc => {
            let mut s = WsdcSchedule {
                warmup_fraction: a.warmup_fraction,
                peak_lr: a.peak,
                decay_end_lr: a.decay_end_lr,
                constant_lr: a.constant_lr,
                final_cosine: a.cosine_start.map(|start_step| FinalCosine {
                    start_step,
                    end_lr: a.cosine_end_lr,
                }),
                ..WsdcSchedule::with_total(a.total)
            };
            if let Some(v) = a.stable_end {
                s.stable_end_step = v;
            }
            if let Some(v) = a.decay_end {
                s.decay_end_step = v;
            }
            s.validate()?;
            Box::new(move |step| wsdc_lr(step, &s))
        }
    };
    #[derive(Serialize)]
    struct Row {
        step: u64,
        lr: f64,
    }
    let rows = steps
        .into_iter()
        .map(|step| Ok(Row { step, lr: lr(step)? }))
        .collect::<Result<Vec<_>>>()?;
    match g.format.unwrap_or(Format::Csv) {
        Format::Json => output(g, &json(&rows)?),
        Format::Csv => output(g, &csv_rows(&rows)?),
    }
}

fn prefloss(g: &Global, a: &PreflossArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.batch).map_err(|e| LabError::io(&a.batch, e))?;
    let batch: PreferenceBatch =
        serde_json::from_str(&text).map_err(|e| LabError::json(a.batch.display().to_string(), e))?;
    let params = LossParams {
        alpha: a.alpha,
        beta_dpo: a.beta_dpo,
        beta_refine: a.beta_refine,
    };
    params.validate()?;
    let x = batch.policy_vector();
    let check = |f: &dyn Fn(&PreferenceBatch) -> plm_core::Result<f64>, grad: Vec<f64>| {
        grad_check(
            &|v: &[f64]| f(&batch.with_policy(v)).unwrap_or(f64::NAN),
            &grad,
            &x,
            1e-5,
        )
    };
    let dpo = dpo_loss(&batch, params.beta_dpo)?;
    let refine = refine_loss(&batch, params.beta_refine).ok();
    let aries = aries_loss(&batch, &params)?;

    #[derive(Serialize)]
    struct GradCheck {
        dpo: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        refine: Option<f64>,
        aries: f64,
    }
    #[derive(Serialize)]
    struct Out {
        examples: usize,
        dpo_loss: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        refine_loss: Option<f64>,
        aries_loss: f64,
        implicit_reward_accuracy: f64,
        max_grad_rel_error: GradCheck,
    }
    let out = Out {
        examples: batch.len(),
        dpo_loss: dpo.loss,
        refine_loss: refine.as_ref().map(|r| r.loss),
        aries_loss: aries.loss,
        implicit_reward_accuracy: implicit_reward_accuracy(&batch, params.beta_dpo)?,
        max_grad_rel_error: GradCheck {
            dpo: check(&|b| dpo_loss(b, params.beta_dpo).map(|l| l.loss), dpo.flat_grad()),
            refine: refine
                .as_ref()
                .map(|r| check(&|b| refine_loss(b, params.beta_refine).map(|l| l.loss), r.flat_grad())),
            aries: check(&|b| aries_loss(b, &params).map(|l| l.loss), aries.flat_grad()),
        },
    };
    output(g, &json(&out)?)
}
