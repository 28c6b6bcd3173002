//! Trace persistence: packed little-endian records plus a JSON sidecar.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::qdyne::{AcquisitionTrace, Record, TraceMetadata};
use super::sweep::SweepPoint;
use crate::error::{Error, Result};
use crate::fmt::num;

/// Bytes per record: u64 index, f64 start time, u32 photon count.
pub const RECORD_BYTES: usize = 20;

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `path` (binary records) and `<path>.json` (metadata).
pub fn write_trace(trace: &AcquisitionTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in trace.records() {
        w.write_all(&r.index.to_le_bytes())?;
        w.write_all(&r.t_start.to_le_bytes())?;
        w.write_all(&r.photons.to_le_bytes())?;
    }
    w.flush()?;
    let meta = serde_json::to_string_pretty(&trace.metadata)
        .map_err(|e| Error::Numerical(format!("cannot serialize trace metadata: {e}")))?;
    std::fs::write(sidecar_path(path), meta)?;
    Ok(())
}

/// Decodes the binary record file alone.
pub fn read_trace_binary(path: &Path) -> Result<Vec<Record>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::CorruptTrace {
            record: (bytes.len() / RECORD_BYTES) as u64,
            reason: format!("file length {} is not a multiple of {RECORD_BYTES} bytes", bytes.len()),
        });
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, b)| {
            let index = u64::from_le_bytes(b[0..8].try_into().unwrap());
            let t_start = f64::from_le_bytes(b[8..16].try_into().unwrap());
            let photons = u32::from_le_bytes(b[16..20].try_into().unwrap());
            if !t_start.is_finite() {
                return Err(Error::CorruptTrace { record: i as u64, reason: format!("non-finite start time {t_start}") });
            }
            Ok(Record { index, t_start, photons })
        })
        .collect()
}

/// Reads a trace and its sidecar, checking that they agree.
pub fn read_trace(path: &Path) -> Result<AcquisitionTrace> {
    let records = read_trace_binary(path)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side)?;
    let metadata: TraceMetadata =
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: side, message: e.to_string() })?;
    if metadata.n_records != records.len() as u64 {
        return Err(Error::CorruptTrace {
            record: records.len() as u64,
            reason: format!("sidecar declares {} records, file holds {}", metadata.n_records, records.len()),
        });
    }
    AcquisitionTrace::from_records(&records, metadata)
}

/// CSV export with header `n,t_start_s,photons`.
pub fn write_trace_csv(trace: &AcquisitionTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "n,t_start_s,photons")?;
    for r in trace.records() {
        writeln!(w, "{},{},{}", r.index, num(r.t_start), r.photons)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV export with header `tau_s,mean,stderr`.
pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "tau_s,mean,stderr")?;
    for p in points {
        writeln!(w, "{},{},{}", num(p.tau), num(p.mean), num(p.stderr))?;
    }
    w.flush()?;
    Ok(())
}
