//! Line-delimited JSON result records.

use std::io::Write;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Hash of the command, the config text and the seed.
pub fn run_id(command: &str, config_text: &str, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(config_text.as_bytes());
    h.update([0]);
    h.update(seed.to_le_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
pub struct Header<'a> {
    pub schema_version: u32,
    pub run_id: &'a str,
    pub record: &'static str,
    pub command: &'a str,
    pub mode: &'a str,
    pub order: usize,
    pub points: usize,
    pub seed: u64,
}

#[derive(Serialize)]
pub struct ValueRecord<'a> {
    pub schema_version: u32,
    pub run_id: &'a str,
    pub record: &'static str,
    pub point: usize,
    pub order: usize,
    pub graph_id: &'a str,
    pub re: f64,
    pub im: f64,
    pub abs_err: f64,
    pub mode: &'a str,
    pub elapsed_ms: Option<u64>,
}

#[derive(Serialize)]
pub struct FailureRecord<'a> {
    pub schema_version: u32,
    pub run_id: &'a str,
    pub record: &'static str,
    pub point: usize,
    pub order: usize,
    pub graph_id: &'a str,
    pub mode: &'a str,
    pub error: String,
    pub elapsed_ms: Option<u64>,
}

#[derive(Serialize)]
pub struct CompareRecord<'a> {
    pub schema_version: u32,
    pub run_id: &'a str,
    pub record: &'static str,
    pub point: usize,
    pub order: usize,
    pub graph_id: &'a str,
    pub re: f64,
    pub im: f64,
    pub abs_err: f64,
    pub oracle_re: f64,
    pub oracle_im: f64,
    pub oracle_err: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub bound: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
    pub mode: &'a str,
    pub elapsed_ms: Option<u64>,
}

#[derive(Serialize)]
pub struct ScanRecord<'a> {
    pub schema_version: u32,
    pub run_id: &'a str,
    pub record: &'static str,
    pub point: usize,
    pub order: usize,
    pub graph_id: &'a str,
    pub scale: f64,
    pub re: f64,
    pub im: f64,
    pub abs_err: f64,
    pub gap: f64,
    pub mode: &'a str,
    pub elapsed_ms: Option<u64>,
}

#[derive(Serialize)]
pub struct LimitRecord<'a> {
    pub schema_version: u32,
    pub run_id: &'a str,
    pub record: &'static str,
    pub point: usize,
    pub order: usize,
    pub graph_id: &'a str,
    pub re: f64,
    pub im: f64,
    pub abs_err: f64,
    pub extrapolated_re: f64,
    pub extrapolated_im: f64,
    pub extrapolated_err: f64,
    pub mode: &'a str,
    pub elapsed_ms: Option<u64>,
}

pub fn emit<T: Serialize>(out: &mut dyn Write, record: &T) -> Result<(), CliError> {
    serde_json::to_writer(&mut *out, record).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}
