//! CSV and JSON benchmark reports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::BenchRecord;
use crate::error::{LabError, Result};

pub const CSV_HEADER: [&str; 9] = [
    "model",
    "quant",
    "phase",
    "tokens",
    "tps_mean",
    "tps_std",
    "peak_bytes",
    "macs",
    "cache_bytes",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Two rows per record: prefill, then decode.
pub fn write_csv<W: Write>(records: &[BenchRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in records {
        let s = &r.spec;
        let rows = [
            (
                "prefill",
                s.prefill_tokens,
                r.prefill_tps,
                r.macs_prefill,
                r.cache_bytes_prefill,
            ),
            ("decode", s.gen_tokens, r.decode_tps, r.macs_decode, r.cache_bytes_final),
        ];
        for (phase, tokens, tps, macs, cache) in rows {
            out.write_record([
                s.model.clone(),
                s.quant.name().to_string(),
                phase.to_string(),
                tokens.to_string(),
                format!("{:.2}", tps.mean),
                format!("{:.2}", tps.std),
                r.peak_resident_bytes.to_string(),
                macs.to_string(),
                cache.to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| LabError::io("<csv>", e))?;
    Ok(())
}

pub fn write_json<W: Write>(records: &[BenchRecord], mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, records).map_err(|e| LabError::json("report", e))?;
    writeln!(w).map_err(|e| LabError::io("<json>", e))
}

pub fn read_json(text: &str) -> Result<Vec<BenchRecord>> {
    serde_json::from_str(text).map_err(|e| LabError::json("report", e))
}

pub fn render(records: &[BenchRecord], format: Format) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    match format {
        Format::Csv => write_csv(records, &mut buf)?,
        Format::Json => write_json(records, &mut buf)?,
    }
    Ok(buf)
}

pub fn emit_report(records: &[BenchRecord], format: Format, path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(LabError::Bench("no records to report".into()));
    }
    let bytes = render(records, format)?;
    std::fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}
