//! HSIM checkpoint: magic, version, the spec as JSON, then every tensor as
//! a named, shaped f64 record. Running statistics ride along as reserved
//! `.running_mean` / `.running_var` entries after the trainable tensors, so
//! the on-disk format is one uniform record type.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hsi::{write_f64_block, Cursor};
use crate::tensor::RunningStats;

use super::{ModelParams, ModelSpec, ParamTensor};

const CHECKPOINT_MAGIC: &[u8; 4] = b"HSIM";
const CHECKPOINT_VERSION: u16 = 1;

fn write_record(
    w: &mut impl Write,
    name: &str,
    shape: &[usize],
    values: &[f64],
) -> std::io::Result<()> {
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[shape.len() as u8])?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    write_f64_block(w, values)
}

/// Write a checkpoint; the layout is the model's canonical tensor order.
pub fn save_params(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    let spec_json = serde_json::to_vec(params.spec()).map_err(|e| Error::json(path, e))?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(spec_json.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&spec_json).map_err(io)?;

    let record_count = params.tensors().len() + 2 * params.stats().len();
    w.write_all(&(record_count as u32).to_le_bytes()).map_err(io)?;
    for (name, t) in params.tensors() {
        write_record(&mut w, name, &t.shape, &t.values).map_err(io)?;
    }
    for (name, s) in params.stats() {
        let c = s.mean.len();
        write_record(&mut w, &format!("{name}.running_mean"), &[c], &s.mean).map_err(io)?;
        write_record(&mut w, &format!("{name}.running_var"), &[c], &s.var).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Read a checkpoint back; the record list must match the embedded spec's
/// canonical layout exactly.
pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor::new(BufReader::new(file));

    let magic = c.bytes(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            what: format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"),
        });
    }
    let version = c.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 4,
            what: format!("unsupported version {version}"),
        });
    }
    let json_len = c.u32("spec length")? as usize;
    let spec_offset = c.offset();
    let spec_json = c.bytes(json_len, "spec JSON")?;
    let spec: ModelSpec = serde_json::from_slice(&spec_json).map_err(|e| Error::Format {
        offset: spec_offset,
        what: format!("spec JSON does not parse: {e}"),
    })?;

    let record_count = c.u32("record count")? as usize;
    let mut records = Vec::with_capacity(record_count);
    for ri in 0..record_count {
        let name_len = c.u16("record name length")? as usize;
        let name = c.string(name_len, "record name")?;
        let rank = c.bytes(1, "record rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("record extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let data_offset = c.offset();
        let values = c.f64_block(numel, "record values")?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format {
                offset: data_offset + 8 * i as u64,
                what: format!("record {ri} ('{name}') value {} not finite", values[i]),
            });
        }
        records.push((name, ParamTensor { shape, values }));
    }
    c.expect_end("checkpoint")?;

    // Split the flat record list back into trainable tensors and stat pairs.
    let stats_at = records
        .iter()
        .position(|(name, _)| name.ends_with(".running_mean"))
        .unwrap_or(records.len());
    let stat_records = records.split_off(stats_at);
    if stat_records.len() % 2 != 0 {
        return Err(Error::Checkpoint(
            "running statistics records are not paired".into(),
        ));
    }
    let mut stats = Vec::with_capacity(stat_records.len() / 2);
    for pair in stat_records.chunks_exact(2) {
        let (mean_name, mean) = &pair[0];
        let (var_name, var) = &pair[1];
        let base = mean_name.strip_suffix(".running_mean").ok_or_else(|| {
            Error::Checkpoint(format!("unexpected record '{mean_name}' among statistics"))
        })?;
        if var_name.strip_suffix(".running_var") != Some(base) {
            return Err(Error::Checkpoint(format!(
                "statistics pair mismatch: '{mean_name}' then '{var_name}'"
            )));
        }
        if var.values.len() != mean.values.len() {
            return Err(Error::Checkpoint(format!(
                "statistics lengths differ for '{base}'"
            )));
        }
        if var.values.iter().any(|&v| v < 0.0) {
            return Err(Error::Checkpoint(format!(
                "negative running variance in '{base}'"
            )));
        }
        stats.push((
            base.to_string(),
            RunningStats { mean: mean.values.clone(), var: var.values.clone() },
        ));
    }

    ModelParams::from_parts(spec, records, stats)
}
