//! Bounded-memory execution device with an in-order asynchronous queue.
//!
//! [`ReferenceDevice`] runs in-process: a dedicated thread owns the device
//! buffers and executes commands strictly in submission order, and gate
//! kernels run on a private pool of `kernel_worker_count` workers.
//!
//! Each host/device transfer command is charged a fixed submission cost
//! (`command_overhead_ns`, spun on the device thread) in addition to the real
//! memory copy. This models per-command launch latency of an accelerator
//! link, which is what separates one-command-per-amplitude transfers from
//! bulk copies.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Sender};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::Gate;
use crate::kernels::{self, KernelError};
use crate::planner::BatchDescriptor;
use crate::{Amplitude, ExecMode, AMPLITUDE_BYTES};

/// Default per-command submission cost.
pub const DEFAULT_COMMAND_OVERHEAD_NS: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferStrategy {
    /// One bulk copy per chunk.
    Synchronous,
    /// One copy command per amplitude.
    PerElement,
    /// One bulk copy of the whole batch into a staging area, then a
    /// device-side permutation into layout positions.
    Buffered,
}

impl TransferStrategy {
    pub const ALL: [TransferStrategy; 3] = [
        TransferStrategy::Synchronous,
        TransferStrategy::PerElement,
        TransferStrategy::Buffered,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransferStrategy::Synchronous => "sync",
            TransferStrategy::PerElement => "per-element",
            TransferStrategy::Buffered => "buffered",
        }
    }
}

impl fmt::Display for TransferStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransferStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sync" | "synchronous" => Ok(TransferStrategy::Synchronous),
            "per-element" | "per_element" | "perelement" | "async" => Ok(TransferStrategy::PerElement),
            "buffered" | "buffer" => Ok(TransferStrategy::Buffered),
            other => Err(format!(
                "unknown transfer strategy '{other}' (expected sync, per-element or buffered)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub memory_limit_bytes: u64,
    pub kernel_worker_count: usize,
    pub strategy: TransferStrategy,
    pub command_overhead_ns: u64,
}

impl DeviceConfig {
    /// Device bytes needed to hold a batch of `amplitudes` under `strategy`.
    pub fn required_bytes(amplitudes: usize, strategy: TransferStrategy) -> u64 {
        let buffer = amplitudes as u64 * AMPLITUDE_BYTES;
        match strategy {
            TransferStrategy::Buffered => 2 * buffer,
            _ => buffer,
        }
    }

    /// Smallest configuration for batches of `2^batch_qubits` amplitudes.
    pub fn for_batch_qubits(batch_qubits: u32, strategy: TransferStrategy) -> Self {
        DeviceConfig {
            memory_limit_bytes: Self::required_bytes(1 << batch_qubits, strategy),
            kernel_worker_count: 1,
            strategy,
            command_overhead_ns: DEFAULT_COMMAND_OVERHEAD_NS,
        }
    }
}

/// Cumulative device counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferStats {
    pub h2d_seconds: f64,
    pub d2h_seconds: f64,
    pub h2d_op_count: u64,
    pub d2h_op_count: u64,
    /// Host/device payload bytes in both directions.
    pub bytes_moved: u64,
    pub kernel_seconds: f64,
    /// Gate kernels plus staging permutation passes.
    pub kernel_launches: u64,
}

impl TransferStats {
    /// Counter-wise difference `self - earlier`.
    pub fn since(&self, earlier: &TransferStats) -> TransferStats {
        TransferStats {
            h2d_seconds: self.h2d_seconds - earlier.h2d_seconds,
            d2h_seconds: self.d2h_seconds - earlier.d2h_seconds,
            h2d_op_count: self.h2d_op_count - earlier.h2d_op_count,
            d2h_op_count: self.d2h_op_count - earlier.d2h_op_count,
            bytes_moved: self.bytes_moved - earlier.bytes_moved,
            kernel_seconds: self.kernel_seconds - earlier.kernel_seconds,
            kernel_launches: self.kernel_launches - earlier.kernel_launches,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("batch needs {required} device bytes, limit is {limit}")]
    MemoryLimit { required: u64, limit: u64 },
    #[error("invalid device configuration: {0}")]
    Config(String),
    #[error("host batch provider: {0}")]
    Provider(String),
    #[error("kernel: {0}")]
    Kernel(#[from] KernelError),
    #[error("no batch resident on the device")]
    NoResidentBatch,
    #[error("a batch is already resident on the device")]
    BatchResident,
    #[error("scatter requested batch {requested}, resident batch is {resident}")]
    BatchMismatch { requested: usize, resident: usize },
    #[error("device worker terminated")]
    Terminated,
    #[error("unknown device backend '{0}'")]
    UnknownBackend(String),
}

/// Host-side staging buffers for one batch: member `k`'s chunk occupies
/// `data[k * 2^c .. (k + 1) * 2^c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HostBatch {
    pub descriptor: BatchDescriptor,
    pub data: Vec<Amplitude>,
}

impl HostBatch {
    pub fn zeroed(descriptor: BatchDescriptor) -> Self {
        let data = vec![Amplitude::new(0.0, 0.0); descriptor.len()];
        HostBatch { descriptor, data }
    }

    /// Reuses this allocation for another batch of the same size.
    pub fn retarget(&mut self, descriptor: BatchDescriptor) {
        self.data.resize(descriptor.len(), Amplitude::new(0.0, 0.0));
        self.descriptor = descriptor;
    }

    pub fn member(&self, k: usize) -> &[Amplitude] {
        let len = self.descriptor.chunk_len();
        &self.data[k * len..(k + 1) * len]
    }

    pub fn member_mut(&mut self, k: usize) -> &mut [Amplitude] {
        let len = self.descriptor.chunk_len();
        &mut self.data[k * len..(k + 1) * len]
    }

    pub fn bytes(&self) -> u64 {
        self.data.len() as u64 * AMPLITUDE_BYTES
    }

    fn check(&self) -> Result<(), DeviceError> {
        if self.data.len() != self.descriptor.len() || self.data.is_empty() {
            return Err(DeviceError::Provider(format!(
                "batch {} supplies {} amplitudes, layout needs {}",
                self.descriptor.index,
                self.data.len(),
                self.descriptor.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug)]
enum SlotState {
    Pending,
    Done(Option<HostBatch>),
    Failed(DeviceError),
}

#[derive(Debug)]
struct Completion {
    state: Mutex<SlotState>,
    cond: Condvar,
}

impl Completion {
    fn settle(&self, state: SlotState) {
        *self.state.lock().unwrap() = state;
        self.cond.notify_all();
    }
}

/// Token for a submitted command.
#[derive(Debug, Clone)]
pub struct CommandHandle {
    seq: u64,
    completion: Arc<Completion>,
}

impl CommandHandle {
    /// Submission sequence number.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn status(&self) -> CommandStatus {
        match &*self.completion.state.lock().unwrap() {
            SlotState::Pending => CommandStatus::Pending,
            SlotState::Done(_) => CommandStatus::Done,
            SlotState::Failed(_) => CommandStatus::Failed,
        }
    }

    fn block(&self) -> Result<(), DeviceError> {
        let mut state = self.completion.state.lock().unwrap();
        loop {
            match &*state {
                SlotState::Pending => state = self.completion.cond.wait(state).unwrap(),
                SlotState::Done(_) => return Ok(()),
                SlotState::Failed(e) => return Err(e.clone()),
            }
        }
    }

    /// Takes the host batch delivered by a completed scatter.
    pub fn take_output(&self) -> Option<HostBatch> {
        match &mut *self.completion.state.lock().unwrap() {
            SlotState::Done(out) => out.take(),
            _ => None,
        }
    }
}

/// Execution backend. Commands complete in submission order; failures are
/// reported through the handle.
pub trait Device: Send + Sync {
    /// Moves a decompressed batch into device memory in gather layout.
    fn gather(&self, batch: HostBatch) -> Result<CommandHandle, DeviceError>;
    /// Applies gates (over buffer bits) to the resident batch.
    fn apply_gates(&self, gates: Vec<Gate>) -> Result<CommandHandle, DeviceError>;
    /// Returns the resident batch to its host buffers; fetch them with
    /// [`CommandHandle::take_output`].
    fn scatter(&self, batch: &BatchDescriptor) -> Result<CommandHandle, DeviceError>;
    /// Blocks until `handle` and every earlier command have completed.
    fn wait(&self, handle: &CommandHandle) -> Result<(), DeviceError>;
    fn stats(&self) -> TransferStats;
    fn config(&self) -> &DeviceConfig;
}

/// Opens a backend by name. Only `"reference"` exists.
pub fn open_backend(name: &str, config: DeviceConfig) -> Result<Box<dyn Device>, DeviceError> {
    match name {
        "reference" => Ok(Box::new(ReferenceDevice::new(config)?)),
        other => Err(DeviceError::UnknownBackend(other.to_string())),
    }
}

enum Command {
    Gather(HostBatch),
    Apply(Vec<Gate>),
    Scatter(BatchDescriptor),
}

/// Settles its completion as failed if dropped unanswered, so waiters never
/// hang on a dead worker.
struct Responder(Option<Arc<Completion>>);

impl Responder {
    fn reply(mut self, state: SlotState) {
        if let Some(c) = self.0.take() {
            c.settle(state);
        }
    }
}

impl Drop for Responder {
    fn drop(&mut self) {
        if let Some(c) = self.0.take() {
            c.settle(SlotState::Failed(DeviceError::Terminated));
        }
    }
}

/// In-process device with enforced memory bounds.
pub struct ReferenceDevice {
    config: DeviceConfig,
    sender: Option<Sender<(Command, Responder)>>,
    worker: Option<JoinHandle<()>>,
    next_seq: AtomicU64,
    stats: Arc<Mutex<TransferStats>>,
    peak_held: Arc<AtomicU64>,
}

impl ReferenceDevice {
    pub fn new(config: DeviceConfig) -> Result<Self, DeviceError> {
        if config.kernel_worker_count == 0 {
            return Err(DeviceError::Config("kernel_worker_count must be >= 1".into()));
        }
        let stats = Arc::new(Mutex::new(TransferStats::default()));
        let peak_held = Arc::new(AtomicU64::new(0));
        let (sender, receiver) = unbounded::<(Command, Responder)>();
        let mut engine = Engine::new(config.clone(), stats.clone(), peak_held.clone())?;
        let worker = std::thread::Builder::new()
            .name("svchunk-device".into())
            .spawn(move || {
                for (cmd, responder) in receiver {
                    let state = match engine.execute(cmd) {
                        Ok(out) => SlotState::Done(out),
                        Err(e) => SlotState::Failed(e),
                    };
                    responder.reply(state);
                }
            })
            .map_err(|e| DeviceError::Config(format!("cannot spawn device worker: {e}")))?;
        Ok(ReferenceDevice {
            config,
            sender: Some(sender),
            worker: Some(worker),
            next_seq: AtomicU64::new(0),
            stats,
            peak_held,
        })
    }

    /// Highest number of device-held bytes observed so far.
    pub fn peak_held_bytes(&self) -> u64 {
        self.peak_held.load(Ordering::Acquire)
    }

    fn submit(&self, cmd: Command) -> Result<CommandHandle, DeviceError> {
        let completion = Arc::new(Completion {
            state: Mutex::new(SlotState::Pending),
            cond: Condvar::new(),
        });
        let handle = CommandHandle {
            seq: self.next_seq.fetch_add(1, Ordering::AcqRel),
            completion: completion.clone(),
        };
        self.sender
            .as_ref()
            .ok_or(DeviceError::Terminated)?
            .send((cmd, Responder(Some(completion))))
            .map_err(|_| DeviceError::Terminated)?;
        Ok(handle)
    }
}

impl Device for ReferenceDevice {
    fn gather(&self, batch: HostBatch) -> Result<CommandHandle, DeviceError> {
        batch.check()?;
        let required = DeviceConfig::required_bytes(batch.data.len(), self.config.strategy);
        if required > self.config.memory_limit_bytes {
            return Err(DeviceError::MemoryLimit {
                required,
                limit: self.config.memory_limit_bytes,
            });
        }
        self.submit(Command::Gather(batch))
    }

    fn apply_gates(&self, gates: Vec<Gate>) -> Result<CommandHandle, DeviceError> {
        self.submit(Command::Apply(gates))
    }

    fn scatter(&self, batch: &BatchDescriptor) -> Result<CommandHandle, DeviceError> {
        self.submit(Command::Scatter(batch.clone()))
    }

    fn wait(&self, handle: &CommandHandle) -> Result<(), DeviceError> {
        handle.block()
    }

    fn stats(&self) -> TransferStats {
        self.stats.lock().unwrap().clone()
    }

    fn config(&self) -> &DeviceConfig {
        &self.config
    }
}

impl Drop for ReferenceDevice {
    fn drop(&mut self) {
        self.sender.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

/// State owned by the device thread.
struct Engine {
    config: DeviceConfig,
    buffer: Vec<Amplitude>,
    staging: Vec<Amplitude>,
    resident: Option<HostBatch>,
    stats: Arc<Mutex<TransferStats>>,
    peak_held: Arc<AtomicU64>,
    mode: ExecMode,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Engine {
    fn new(
        config: DeviceConfig,
        stats: Arc<Mutex<TransferStats>>,
        peak_held: Arc<AtomicU64>,
    ) -> Result<Self, DeviceError> {
        let parallel = config.kernel_worker_count > 1;
        #[cfg(feature = "parallel")]
        let pool = if parallel {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.kernel_worker_count)
                    .thread_name(|i| format!("svchunk-kernel-{i}"))
                    .build()
                    .map_err(|e| DeviceError::Config(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Engine {
            config,
            buffer: Vec::new(),
            staging: Vec::new(),
            resident: None,
            stats,
            peak_held,
            mode: if parallel {
                ExecMode::Parallel
            } else {
                ExecMode::Sequential
            },
            #[cfg(feature = "parallel")]
            pool,
        })
    }

    fn run_kernel<R: Send>(&mut self, f: impl FnOnce(&mut Self) -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        if let Some(pool) = self.pool.take() {
            let out = pool.install(|| f(self));
            self.pool = Some(pool);
            return out;
        }
        f(self)
    }

    /// Charges the modeled per-command submission cost.
    fn issue(&self) {
        if self.config.command_overhead_ns == 0 {
            return;
        }
        let start = Instant::now();
        let cost = Duration::from_nanos(self.config.command_overhead_ns);
        while start.elapsed() < cost {
            std::hint::spin_loop();
        }
    }

    fn held_bytes(&self) -> u64 {
        (self.buffer.len() + self.staging.len()) as u64 * AMPLITUDE_BYTES
    }

    fn allocate(&mut self, len: usize) -> Result<(), DeviceError> {
        let staging_len = if self.config.strategy == TransferStrategy::Buffered {
            len
        } else {
            0
        };
        let required = (len + staging_len) as u64 * AMPLITUDE_BYTES;
        if required > self.config.memory_limit_bytes {
            return Err(DeviceError::MemoryLimit {
                required,
                limit: self.config.memory_limit_bytes,
            });
        }
        let zero = Amplitude::new(0.0, 0.0);
        if self.buffer.len() != len {
            self.buffer = Vec::new();
            self.buffer.resize(len, zero);
        }
        if self.staging.len() != staging_len {
            self.staging = Vec::new();
            self.staging.resize(staging_len, zero);
        }
        let held = self.held_bytes();
        assert!(
            held <= self.config.memory_limit_bytes,
            "device holds {held} bytes over its {} byte limit",
            self.config.memory_limit_bytes
        );
        self.peak_held.fetch_max(held, Ordering::AcqRel);
        Ok(())
    }

    fn execute(&mut self, cmd: Command) -> Result<Option<HostBatch>, DeviceError> {
        match cmd {
            Command::Gather(batch) => self.gather(batch).map(|_| None),
            Command::Apply(gates) => self.apply(&gates).map(|_| None),
            Command::Scatter(desc) => self.scatter(&desc).map(Some),
        }
    }

    fn gather(&mut self, host: HostBatch) -> Result<(), DeviceError> {
        if self.resident.is_some() {
            return Err(DeviceError::BatchResident);
        }
        host.check()?;
        self.allocate(host.data.len())?;
        let desc = &host.descriptor;
        let chunk_len = desc.chunk_len();
        let members = desc.chunk_indices.len();
        let start = Instant::now();
        let ops = match self.config.strategy {
            TransferStrategy::Synchronous => {
                for k in 0..members {
                    self.issue();
                    let dst = desc.buffer_offset(k);
                    self.buffer[dst..dst + chunk_len].copy_from_slice(host.member(k));
                }
                members as u64
            }
            TransferStrategy::PerElement => {
                for k in 0..members {
                    let dst = desc.buffer_offset(k);
                    for (i, &a) in host.member(k).iter().enumerate() {
                        self.issue();
                        self.buffer[dst + i] = a;
                    }
                }
                host.data.len() as u64
            }
            TransferStrategy::Buffered => {
                self.issue();
                self.staging.copy_from_slice(&host.data);
                1
            }
        };
        let h2d = start.elapsed().as_secs_f64();

        let mut permute = 0.0;
        if self.config.strategy == TransferStrategy::Buffered {
            let desc = desc.clone();
            permute = self.run_kernel(|e| {
                let t = Instant::now();
                for k in 0..members {
                    let (src, dst) = (k * chunk_len, desc.buffer_offset(k));
                    kernels::copy_buffer(
                        &mut e.buffer[dst..dst + chunk_len],
                        &e.staging[src..src + chunk_len],
                        e.mode,
                    );
                }
                t.elapsed().as_secs_f64()
            });
        }

        let mut s = self.stats.lock().unwrap();
        s.h2d_seconds += h2d;
        s.h2d_op_count += ops;
        s.bytes_moved += host.bytes();
        if self.config.strategy == TransferStrategy::Buffered {
            s.kernel_seconds += permute;
            s.kernel_launches += 1;
        }
        drop(s);
        self.resident = Some(host);
        Ok(())
    }

    fn apply(&mut self, gates: &[Gate]) -> Result<(), DeviceError> {
        if self.resident.is_none() {
            return Err(DeviceError::NoResidentBatch);
        }
        let (elapsed, result) = self.run_kernel(|e| {
            let t = Instant::now();
            let r = kernels::apply_gates(&mut e.buffer, gates, e.mode);
            (t.elapsed().as_secs_f64(), r)
        });
        let mut s = self.stats.lock().unwrap();
        s.kernel_seconds += elapsed;
        s.kernel_launches += gates.len() as u64;
        drop(s);
        result.map_err(DeviceError::from)
    }

    fn scatter(&mut self, desc: &BatchDescriptor) -> Result<HostBatch, DeviceError> {
        let mut host = self.resident.take().ok_or(DeviceError::NoResidentBatch)?;
        if host.descriptor != *desc {
            let resident = host.descriptor.index;
            self.resident = Some(host);
            return Err(DeviceError::BatchMismatch {
                requested: desc.index,
                resident,
            });
        }
        let chunk_len = desc.chunk_len();
        let members = desc.chunk_indices.len();

        let mut permute = 0.0;
        if self.config.strategy == TransferStrategy::Buffered {
            let desc = desc.clone();
            permute = self.run_kernel(|e| {
                let t = Instant::now();
                for k in 0..members {
                    let (src, dst) = (desc.buffer_offset(k), k * chunk_len);
                    kernels::copy_buffer(
                        &mut e.staging[dst..dst + chunk_len],
                        &e.buffer[src..src + chunk_len],
                        e.mode,
                    );
                }
                t.elapsed().as_secs_f64()
            });
        }

        let start = Instant::now();
        let ops = match self.config.strategy {
            TransferStrategy::Synchronous => {
                for k in 0..members {
                    self.issue();
                    let src = desc.buffer_offset(k);
                    host.member_mut(k)
                        .copy_from_slice(&self.buffer[src..src + chunk_len]);
                }
                members as u64
            }
            TransferStrategy::PerElement => {
                for k in 0..members {
                    let src = desc.buffer_offset(k);
                    for (i, a) in host.member_mut(k).iter_mut().enumerate() {
                        self.issue();
                        *a = self.buffer[src + i];
                    }
                }
                host.data.len() as u64
            }
            TransferStrategy::Buffered => {
                self.issue();
                host.data.copy_from_slice(&self.staging);
                1
            }
        };
        let d2h = start.elapsed().as_secs_f64();

        let mut s = self.stats.lock().unwrap();
        s.d2h_seconds += d2h;
        s.d2h_op_count += ops;
        s.bytes_moved += host.bytes();
        if self.config.strategy == TransferStrategy::Buffered {
            s.kernel_seconds += permute;
            s.kernel_launches += 1;
        }
        Ok(host)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::generators;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn descriptor(chunk_qubits: usize, members: usize) -> BatchDescriptor {
        BatchDescriptor {
            index: 0,
            chunk_qubits,
            chunk_indices: (0..members).collect(),
        }
    }

    fn random_batch(desc: BatchDescriptor, seed: u64) -> HostBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hb = HostBatch::zeroed(desc);
        for a in hb.data.iter_mut() {
            *a = Amplitude::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        hb
    }

    fn device(strategy: TransferStrategy, batch_qubits: u32) -> ReferenceDevice {
        let mut cfg = DeviceConfig::for_batch_qubits(batch_qubits, strategy);
        cfg.command_overhead_ns = 0;
        ReferenceDevice::new(cfg).unwrap()
    }

    fn round_trip(dev: &ReferenceDevice, hb: HostBatch, gates: Vec<Gate>) -> HostBatch {
        let desc = hb.descriptor.clone();
        dev.gather(hb).unwrap();
        if !gates.is_empty() {
            dev.apply_gates(gates).unwrap();
        }
        let h = dev.scatter(&desc).unwrap();
        dev.wait(&h).unwrap();
        h.take_output().unwrap()
    }

    #[test]
    fn gather_scatter_is_identity_for_every_strategy() {
        for strategy in TransferStrategy::ALL {
            let dev = device(strategy, 8);
            let hb = random_batch(descriptor(5, 8), 1);
            let back = round_trip(&dev, hb.clone(), vec![]);
            assert_eq!(back, hb, "{strategy}");
        }
    }

    #[test]
    fn op_counts_and_bytes() {
        let desc = descriptor(4, 16);
        let len = desc.len() as u64;
        let expected = [
            (TransferStrategy::Synchronous, 16, 0),
            (TransferStrategy::PerElement, len, 0),
            (TransferStrategy::Buffered, 1, 2),
        ];
        for (strategy, ops, permutes) in expected {
            let dev = device(strategy, 8);
            round_trip(&dev, random_batch(desc.clone(), 2), vec![]);
            let s = dev.stats();
            assert_eq!(s.h2d_op_count, ops, "{strategy}");
            assert_eq!(s.d2h_op_count, ops, "{strategy}");
            assert_eq!(s.bytes_moved, 2 * len * 16);
            assert_eq!(s.kernel_launches, permutes);
        }
    }

    #[test]
    fn strategies_agree_bit_exactly_with_kernels() {
        let gates = generators::random(8, 40, 3).gates;
        let results: Vec<HostBatch> = TransferStrategy::ALL
            .iter()
            .map(|&s| round_trip(&device(s, 8), random_batch(descriptor(3, 32), 4), gates.clone()))
            .collect();
        assert_eq!(results[0], results[1]);
        assert_eq!(results[0], results[2]);
        let mut expected = random_batch(descriptor(3, 32), 4);
        kernels::apply_gates(&mut expected.data, &gates, ExecMode::Sequential).unwrap();
        assert_eq!(results[0].data, expected.data);
    }

    #[test]
    fn memory_limit_enforced() {
        let dev = device(TransferStrategy::Buffered, 6);
        let err = dev.gather(random_batch(descriptor(4, 8), 0)).unwrap_err();
        assert_eq!(
            err,
            DeviceError::MemoryLimit {
                required: 2 * 128 * 16,
                limit: 2 * 64 * 16
            }
        );
        round_trip(&dev, random_batch(descriptor(4, 4), 0), vec![]);
        assert!(dev.peak_held_bytes() <= dev.config().memory_limit_bytes);
        assert_eq!(dev.peak_held_bytes(), 2 * 64 * 16);
    }

    #[test]
    fn in_order_completion() {
        let dev = device(TransferStrategy::PerElement, 10);
        let desc = descriptor(6, 16);
        let a = dev.gather(random_batch(desc.clone(), 5)).unwrap();
        let b = dev.apply_gates(generators::random(10, 10, 1).gates).unwrap();
        let c = dev.scatter(&desc).unwrap();
        assert!(a.seq() < b.seq() && b.seq() < c.seq());
        dev.wait(&c).unwrap();
        assert_eq!(a.status(), CommandStatus::Done);
        assert_eq!(b.status(), CommandStatus::Done);
        // waiting again on a finished handle returns at once
        dev.wait(&a).unwrap();
    }

    #[test]
    fn failures_surface_through_handles() {
        let dev = device(TransferStrategy::Synchronous, 6);
        let h = dev.apply_gates(vec![Gate::h(0)]).unwrap();
        assert_eq!(dev.wait(&h), Err(DeviceError::NoResidentBatch));
        assert_eq!(h.status(), CommandStatus::Failed);

        let desc = descriptor(2, 4);
        dev.gather(random_batch(desc.clone(), 1)).unwrap();
        let bad = dev.apply_gates(vec![Gate::h(9)]).unwrap();
        assert!(matches!(dev.wait(&bad), Err(DeviceError::Kernel(_))));
        let mut other = desc.clone();
        other.index = 3;
        let h = dev.scatter(&other).unwrap();
        assert!(matches!(dev.wait(&h), Err(DeviceError::BatchMismatch { .. })));
        let h = dev.scatter(&desc).unwrap();
        dev.wait(&h).unwrap();
    }

    #[test]
    fn provider_must_match_layout() {
        let dev = device(TransferStrategy::Synchronous, 6);
        let mut hb = HostBatch::zeroed(descriptor(2, 4));
        hb.data.pop();
        assert!(matches!(dev.gather(hb), Err(DeviceError::Provider(_))));
    }

    #[test]
    fn kernel_workers_do_not_change_results() {
        let gates = generators::random(16, 30, 8).gates;
        let mut cfg = DeviceConfig::for_batch_qubits(16, TransferStrategy::Buffered);
        cfg.command_overhead_ns = 0;
        let single = ReferenceDevice::new(cfg.clone()).unwrap();
        cfg.kernel_worker_count = 3;
        let multi = ReferenceDevice::new(cfg).unwrap();
        let a = round_trip(&single, random_batch(descriptor(12, 16), 9), gates.clone());
        let b = round_trip(&multi, random_batch(descriptor(12, 16), 9), gates);
        assert_eq!(a, b);
    }

    #[test]
    fn backend_selection() {
        let cfg = DeviceConfig::for_batch_qubits(4, TransferStrategy::Synchronous);
        assert!(open_backend("reference", cfg.clone()).is_ok());
        assert!(matches!(open_backend("cuda", cfg), Err(DeviceError::UnknownBackend(_))));
        assert!("per-element".parse::<TransferStrategy>().is_ok());
        assert!("bogus".parse::<TransferStrategy>().is_err());
    }
}
