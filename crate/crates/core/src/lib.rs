//! Compressed-chunk quantum state-vector simulation.
//!
//! The state vector lives in host memory as `2^(n-c)` independently
//! compressed chunks of `2^c` amplitudes. A circuit is split into stages by
//! the [`planner`]; each stage is one sweep over the state in which batches
//! of partner chunks are decompressed, moved to a bounded-memory [`device`],
//! updated, moved back and recompressed by the [`pipeline`].
//!
//! Kernels and bulk chunk work are data-parallel through rayon when the
//! `parallel` feature is enabled (the default); every parallel path has a
//! sequential twin selected with [`ExecMode::Sequential`], and the two are
//! bit-identical.

pub mod bench;
pub mod circuit;
pub mod codec;
pub mod device;
pub mod kernels;
pub mod oracle;
pub mod pipeline;
pub mod planner;
pub mod store;

pub use circuit::{Circuit, Gate, GateKind};
pub use codec::{CodecId, CompressedChunk};
pub use device::{DeviceConfig, ReferenceDevice, TransferStats, TransferStrategy};
pub use oracle::DenseState;
pub use pipeline::{PipelineConfig, SimulationReport};
pub use planner::{BatchDescriptor, ExecutionPlan, Stage};
pub use store::ChunkStore;

/// Complex double-precision amplitude.
pub type Amplitude = num_complex::Complex64;

/// Bytes occupied by one dense amplitude.
pub const AMPLITUDE_BYTES: u64 = 16;

/// How data-parallel loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    /// Splits work over the current rayon pool. Falls back to
    /// [`ExecMode::Sequential`] when built without the `parallel` feature.
    #[default]
    Parallel,
}

impl ExecMode {
    /// Whether this mode actually runs on multiple threads in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}
