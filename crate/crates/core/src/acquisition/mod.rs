//! Measurement protocols: Qdyne heterodyne acquisition and swept XY8
//! spectroscopy, plus trace persistence.

mod io;
mod qdyne;
mod sweep;

pub use io::{read_trace, read_trace_binary, write_sweep_csv, write_trace, write_trace_csv, RECORD_BYTES};
pub use qdyne::{
    expected_phase_series, run_qdyne, simulate_binned, AcquisitionTrace, BinnedCounts, QdyneConfig,
    QdyneSimulator, Record, TraceMetadata,
};
pub use sweep::{run_sweep, SweepConfig, SweepPoint};
