//! Online execution: stage-by-stage sweeps over the compressed store.
//!
//! For every stage the batch sequence is split in two. The leading
//! `ceil(host_fraction * B)` batches are processed entirely on host workers
//! (decompress, apply, recompress). The rest flow through the device
//! pipeline:
//!
//! ```text
//! decompress workers -> coordinator (gather, apply, scatter) -> completion -> recompress workers
//!        ^                                                                          |
//!        +-------------------- free host batch buffers (depth d) <------------------+
//! ```
//!
//! At most `pipeline_depth` batch buffers exist, which bounds the batches in
//! flight. A stage finishes only when every chunk has been written back;
//! [`BarrierProbe`] checks that no chunk is read for stage `k + 1` before its
//! stage-`k` result is stored.

use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{Circuit, Gate};
use crate::device::{
    open_backend, CommandHandle, Device, DeviceConfig, DeviceError, HostBatch, TransferStats,
    TransferStrategy, DEFAULT_COMMAND_OVERHEAD_NS,
};
use crate::kernels::{self, KernelError};
use crate::oracle::{self, NeumaierSum, OracleError};
use crate::planner::{self, BatchDescriptor, PlanError, Stage};
use crate::store::{ChunkStore, StoreError};
use crate::{Amplitude, ExecMode, AMPLITUDE_BYTES};

const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub chunk_qubits: u32,
    /// Device batch holds `2^batch_qubits` amplitudes; clamped to the register size.
    pub batch_qubits: u32,
    pub error_bound: f64,
    pub strategy: TransferStrategy,
    pub decompress_workers: usize,
    pub recompress_workers: usize,
    pub kernel_workers: usize,
    /// Fraction of each stage's batches executed on host workers.
    pub host_fraction: f64,
    /// Batch buffers in flight.
    pub pipeline_depth: usize,
    pub renormalize: bool,
    pub seed: u64,
    pub command_overhead_ns: u64,
    /// Fidelity is computed against the dense oracle up to this many qubits.
    pub oracle_limit: usize,
    pub backend: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            chunk_qubits: 16,
            batch_qubits: 20,
            error_bound: 1e-5,
            strategy: TransferStrategy::Buffered,
            decompress_workers: 2,
            recompress_workers: 2,
            kernel_workers: 1,
            host_fraction: 0.0,
            pipeline_depth: 2,
            renormalize: false,
            seed: 0,
            command_overhead_ns: DEFAULT_COMMAND_OVERHEAD_NS,
            oracle_limit: oracle::DEFAULT_ORACLE_LIMIT,
            backend: "reference".into(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if self.chunk_qubits == 0 {
            return bad("chunk_qubits must be >= 1".into());
        }
        if self.batch_qubits < self.chunk_qubits {
            return bad(format!(
                "batch_qubits ({}) must be >= chunk_qubits ({})",
                self.batch_qubits, self.chunk_qubits
            ));
        }
        if !self.error_bound.is_finite() || self.error_bound < 0.0 {
            return bad(format!("error_bound must be finite and >= 0, got {}", self.error_bound));
        }
        if !(0.0..=1.0).contains(&self.host_fraction) {
            return bad(format!("host_fraction must be in [0, 1], got {}", self.host_fraction));
        }
        for (name, v) in [
            ("decompress_workers", self.decompress_workers),
            ("recompress_workers", self.recompress_workers),
            ("kernel_workers", self.kernel_workers),
            ("pipeline_depth", self.pipeline_depth),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Failure of one step inside a batch.
#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("barrier violation: {0}")]
    Barrier(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("stage {stage}, batch {batch}: {source}")]
    Batch {
        stage: usize,
        batch: usize,
        #[source]
        source: StepError,
    },
    #[error("stage {stage}: {message}")]
    Stage { stage: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSeconds {
    pub decompress: f64,
    pub h2d: f64,
    pub kernel: f64,
    pub d2h: f64,
    pub host_apply: f64,
    pub recompress: f64,
}

impl PhaseSeconds {
    pub fn total(&self) -> f64 {
        self.decompress + self.h2d + self.kernel + self.d2h + self.host_apply + self.recompress
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageReport {
    pub index: usize,
    pub first_gate: usize,
    pub gate_count: usize,
    pub high_qubits: Vec<usize>,
    pub batch_count: usize,
    pub host_batches: usize,
    pub device_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootprintReport {
    pub current_bytes: u64,
    pub peak_bytes: u64,
    pub dense_bytes: u64,
    pub ratio: f64,
    /// Peak bytes of decompressed batch buffers on the host.
    pub transient_peak_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCounters {
    pub chunk_loads: u64,
    pub chunk_stores: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationReport {
    pub num_qubits: usize,
    pub gate_count: usize,
    pub norm: f64,
    pub fidelity: Option<f64>,
    pub phase_seconds: PhaseSeconds,
    pub wall_seconds: f64,
    /// Kernel seconds over wall seconds.
    pub overlap_efficiency: f64,
    pub footprint: FootprintReport,
    pub stages: Vec<StageReport>,
    pub transfer: TransferStats,
    pub sweeps: SweepCounters,
    pub config: PipelineConfig,
    /// 64-bit FNV-1a over the final payloads in chunk order, as hex.
    pub digest: String,
}

/// Per-chunk sweep epochs. A chunk at epoch `k` has been written by stages
/// `0..k`; it may only be read by stage `k` and written once per stage.
#[derive(Debug)]
pub struct BarrierProbe {
    epochs: Vec<AtomicU32>,
    loads: AtomicU64,
    stores: AtomicU64,
}

impl BarrierProbe {
    pub fn new(chunks: usize) -> Self {
        BarrierProbe {
            epochs: (0..chunks).map(|_| AtomicU32::new(0)).collect(),
            loads: AtomicU64::new(0),
            stores: AtomicU64::new(0),
        }
    }

    pub fn before_load(&self, chunk: usize, sweep: usize) -> Result<(), StepError> {
        self.loads.fetch_add(1, Ordering::Relaxed);
        let epoch = self.epochs[chunk].load(Ordering::Acquire);
        if epoch as usize != sweep {
            return Err(StepError::Barrier(format!(
                "chunk {chunk} read in sweep {sweep} while at epoch {epoch}"
            )));
        }
        Ok(())
    }

    pub fn after_store(&self, chunk: usize, sweep: usize) -> Result<(), StepError> {
        self.stores.fetch_add(1, Ordering::Relaxed);
        self.epochs[chunk]
            .compare_exchange(sweep as u32, sweep as u32 + 1, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| ())
            .map_err(|epoch| {
                StepError::Barrier(format!(
                    "chunk {chunk} written in sweep {sweep} while at epoch {epoch}"
                ))
            })
    }

    /// Every chunk finished `sweep`.
    pub fn sweep_complete(&self, sweep: usize) -> Result<(), String> {
        match self
            .epochs
            .iter()
            .position(|e| e.load(Ordering::Acquire) as usize != sweep + 1)
        {
            None => Ok(()),
            Some(chunk) => Err(format!("chunk {chunk} was not written back")),
        }
    }

    pub fn counters(&self) -> SweepCounters {
        SweepCounters {
            chunk_loads: self.loads.load(Ordering::Relaxed),
            chunk_stores: self.stores.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Default)]
struct PhaseTimers {
    decompress: AtomicU64,
    recompress: AtomicU64,
    host_apply: AtomicU64,
}

fn add_elapsed(counter: &AtomicU64, since: Instant) {
    counter.fetch_add(since.elapsed().as_nanos() as u64, Ordering::Relaxed);
}

fn secs(counter: &AtomicU64) -> f64 {
    counter.load(Ordering::Relaxed) as f64 * 1e-9
}

/// Live/peak accounting of host batch buffers outside the device pool.
#[derive(Debug, Default)]
struct TransientGauge {
    live: AtomicU64,
    peak: AtomicU64,
}

struct TransientLease<'a> {
    gauge: &'a TransientGauge,
    bytes: u64,
}

impl TransientGauge {
    fn lease(&self, bytes: u64) -> TransientLease<'_> {
        let now = self.live.fetch_add(bytes, Ordering::AcqRel) + bytes;
        self.peak.fetch_max(now, Ordering::AcqRel);
        TransientLease { gauge: self, bytes }
    }
}

impl Drop for TransientLease<'_> {
    fn drop(&mut self) {
        self.gauge.live.fetch_sub(self.bytes, Ordering::AcqRel);
    }
}

/// First failure wins; later ones are dropped.
#[derive(Debug, Default)]
struct FailureSlot {
    error: Mutex<Option<PipelineError>>,
    cancelled: AtomicBool,
}

impl FailureSlot {
    fn record(&self, e: PipelineError) {
        let mut slot = self.error.lock().unwrap();
        if slot.is_none() {
            *slot = Some(e);
        }
        self.cancelled.store(true, Ordering::Release);
    }

    fn cancelled(&self) -> bool {
        self.cancelled.load(Ordering::Acquire)
    }

    fn take(&self) -> Option<PipelineError> {
        self.error.lock().unwrap().take()
    }
}

fn batch_error(stage: usize, batch: usize, source: impl Into<StepError>) -> PipelineError {
    PipelineError::Batch {
        stage,
        batch,
        source: source.into(),
    }
}

/// Shared per-run state.
struct RunContext<'a> {
    store: &'a ChunkStore,
    probe: &'a BarrierProbe,
    timers: &'a PhaseTimers,
    gauge: &'a TransientGauge,
}

fn load_batch(ctx: &RunContext<'_>, sweep: usize, host: &mut HostBatch) -> Result<(), StepError> {
    let started = Instant::now();
    let chunks = host.descriptor.chunk_indices.clone();
    for (k, &chunk) in chunks.iter().enumerate() {
        ctx.probe.before_load(chunk, sweep)?;
        ctx.store.load_chunk_into(chunk, host.member_mut(k))?;
    }
    add_elapsed(&ctx.timers.decompress, started);
    Ok(())
}

fn store_batch(ctx: &RunContext<'_>, sweep: usize, host: &HostBatch) -> Result<(), StepError> {
    let started = Instant::now();
    for (k, &chunk) in host.descriptor.chunk_indices.iter().enumerate() {
        ctx.store.store_chunk(chunk, host.member(k))?;
        ctx.probe.after_store(chunk, sweep)?;
    }
    add_elapsed(&ctx.timers.recompress, started);
    Ok(())
}

fn host_batch(
    ctx: &RunContext<'_>,
    sweep: usize,
    gates: &[Gate],
    host: &mut HostBatch,
) -> Result<(), StepError> {
    load_batch(ctx, sweep, host)?;
    let started = Instant::now();
    kernels::apply_gates(&mut host.data, gates, ExecMode::Sequential)?;
    add_elapsed(&ctx.timers.host_apply, started);
    store_batch(ctx, sweep, host)
}

/// Processes one batch of `stage` entirely on the host: gather layout, the
/// stage's gates through the shared kernels, recompression.
pub fn host_apply_batch(
    store: &ChunkStore,
    stage: &Stage,
    batch: &BatchDescriptor,
) -> Result<(), PipelineError> {
    let gates = stage.remapped_gates(store.chunk_qubits() as usize)?;
    let mut host = HostBatch::zeroed(batch.clone());
    let step = |r: Result<(), StoreError>| r.map_err(|e| batch_error(0, batch.index, e));
    for (k, &chunk) in batch.chunk_indices.iter().enumerate() {
        step(store.load_chunk_into(chunk, host.member_mut(k)))?;
    }
    kernels::apply_gates(&mut host.data, &gates, ExecMode::Sequential)
        .map_err(|e| batch_error(0, batch.index, e))?;
    for (k, &chunk) in batch.chunk_indices.iter().enumerate() {
        step(store.store_chunk(chunk, host.member(k)))?;
    }
    Ok(())
}

fn run_host_batches(
    ctx: &RunContext<'_>,
    sweep: usize,
    gates: &[Gate],
    batches: &[BatchDescriptor],
) -> Result<(), PipelineError> {
    if batches.is_empty() {
        return Ok(());
    }
    let bytes = batches[0].len() as u64 * AMPLITUDE_BYTES;
    let one = |buf: &mut HostBatch, b: &BatchDescriptor| {
        buf.retarget(b.clone());
        host_batch(ctx, sweep, gates, buf).map_err(|e| batch_error(sweep, b.index, e))
    };
    #[cfg(feature = "parallel")]
    {
        batches.par_iter().with_max_len(1).try_for_each_init(
            || (ctx.gauge.lease(bytes), HostBatch::zeroed(batches[0].clone())),
            |(_, buf), b| one(buf, b),
        )
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _lease = ctx.gauge.lease(bytes);
        let mut buf = HostBatch::zeroed(batches[0].clone());
        batches.iter().try_for_each(|b| one(&mut buf, b))
    }
}

fn recv_or_cancel<T>(rx: &Receiver<T>, failure: &FailureSlot) -> Option<T> {
    loop {
        match rx.recv_timeout(POLL) {
            Ok(v) => return Some(v),
            Err(RecvTimeoutError::Timeout) if !failure.cancelled() => continue,
            Err(_) => return None,
        }
    }
}

struct DeviceStage<'a> {
    ctx: &'a RunContext<'a>,
    device: &'a dyn Device,
    config: &'a PipelineConfig,
    sweep: usize,
    gates: &'a [Gate],
}

impl DeviceStage<'_> {
    /// Runs `batches` through the device, reusing `pool` buffers.
    fn run(&self, batches: &[BatchDescriptor], pool: &mut Vec<HostBatch>) -> Result<(), PipelineError> {
        if batches.is_empty() {
            return Ok(());
        }
        let failure = FailureSlot::default();
        let (work_tx, work_rx) = unbounded();
        for b in batches {
            work_tx.send(b.clone()).expect("receiver alive");
        }
        drop(work_tx);
        let (free_tx, free_rx) = bounded(pool.len());
        for hb in pool.drain(..) {
            free_tx.send(hb).expect("capacity matches pool");
        }
        let (ready_tx, ready_rx) = unbounded::<HostBatch>();
        let (inflight_tx, inflight_rx) = unbounded::<(usize, [CommandHandle; 3])>();
        let (done_tx, done_rx) = unbounded::<HostBatch>();
        let sweep = self.sweep;
        let ctx = self.ctx;

        std::thread::scope(|s| {
            for _ in 0..self.config.decompress_workers {
                let (work_rx, free_rx, ready_tx) = (work_rx.clone(), free_rx.clone(), ready_tx.clone());
                let failure = &failure;
                s.spawn(move || {
                    for batch in work_rx.iter() {
                        if failure.cancelled() {
                            break;
                        }
                        let Some(mut host) = recv_or_cancel(&free_rx, failure) else {
                            break;
                        };
                        let index = batch.index;
                        host.retarget(batch);
                        if let Err(e) = load_batch(ctx, sweep, &mut host) {
                            failure.record(batch_error(sweep, index, e));
                            break;
                        }
                        if ready_tx.send(host).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(ready_tx);

            {
                let failure = &failure;
                let device = self.device;
                s.spawn(move || {
                    for (index, handles) in inflight_rx.iter() {
                        let mut ok = true;
                        for h in &handles {
                            if let Err(e) = device.wait(h) {
                                if ok {
                                    failure.record(batch_error(sweep, index, e));
                                }
                                ok = false;
                            }
                        }
                        if ok {
                            match handles[2].take_output() {
                                Some(host) => {
                                    let _ = done_tx.send(host);
                                }
                                None => failure.record(batch_error(
                                    sweep,
                                    index,
                                    DeviceError::Provider("scatter delivered no buffers".into()),
                                )),
                            }
                        }
                    }
                });
            }

            for _ in 0..self.config.recompress_workers {
                let (done_rx, free_tx) = (done_rx.clone(), free_tx.clone());
                let failure = &failure;
                s.spawn(move || {
                    for host in done_rx.iter() {
                        if !failure.cancelled() {
                            if let Err(e) = store_batch(ctx, sweep, &host) {
                                failure.record(batch_error(sweep, host.descriptor.index, e));
                            }
                        }
                        let _ = free_tx.send(host);
                    }
                });
            }

            // coordinator
            let mut submitted = 0;
            while submitted < batches.len() {
                let Some(host) = recv_or_cancel(&ready_rx, &failure) else {
                    break;
                };
                let desc = host.descriptor.clone();
                let submit = || -> Result<[CommandHandle; 3], DeviceError> {
                    let g = self.device.gather(host)?;
                    let a = self.device.apply_gates(self.gates.to_vec())?;
                    let sc = self.device.scatter(&desc)?;
                    Ok([g, a, sc])
                };
                match submit() {
                    Ok(handles) => {
                        let _ = inflight_tx.send((desc.index, handles));
                    }
                    Err(e) => {
                        failure.record(batch_error(sweep, desc.index, e));
                        break;
                    }
                }
                submitted += 1;
            }
            drop(inflight_tx);
            drop(ready_rx);
        });

        drop(free_tx);
        pool.extend(free_rx.try_iter());
        if let Some(e) = failure.take() {
            return Err(e);
        }
        if pool.len() != self.config.pipeline_depth {
            return Err(PipelineError::Stage {
                stage: sweep,
                message: format!(
                    "{} of {} batch buffers returned",
                    pool.len(),
                    self.config.pipeline_depth
                ),
            });
        }
        Ok(())
    }
}

/// `sum |a_g|^2`, chunk-wise with compensated summation. Chunks are summed
/// independently and combined in chunk order, so the result does not depend
/// on the thread count.
pub fn norm(store: &ChunkStore) -> Result<f64, StoreError> {
    let partial = |chunk: usize, buf: &mut Vec<Amplitude>| -> Result<NeumaierSum, StoreError> {
        store.load_chunk_into(chunk, buf)?;
        let mut s = NeumaierSum::default();
        for a in buf.iter() {
            s.add(a.norm_sqr());
        }
        Ok(s)
    };
    let zero = || vec![Amplitude::new(0.0, 0.0); store.chunk_len()];
    #[cfg(feature = "parallel")]
    let partials: Vec<NeumaierSum> = (0..store.chunk_count())
        .into_par_iter()
        .map_init(zero, |buf, chunk| partial(chunk, buf))
        .collect::<Result<_, _>>()?;
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<NeumaierSum> = {
        let mut buf = zero();
        (0..store.chunk_count())
            .map(|chunk| partial(chunk, &mut buf))
            .collect::<Result<_, _>>()?
    };
    let mut total = NeumaierSum::default();
    for p in partials {
        total.add(p.value());
    }
    Ok(total.value())
}

fn renormalize(ctx: &RunContext<'_>, sweep: usize) -> Result<(), PipelineError> {
    let norm = norm(ctx.store)?;
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(PipelineError::Stage {
            stage: sweep,
            message: format!("cannot renormalize a state of norm {norm}"),
        });
    }
    let scale = 1.0 / norm.sqrt();
    let chunk_desc = |chunk: usize| BatchDescriptor {
        index: chunk,
        chunk_qubits: ctx.store.chunk_qubits() as usize,
        chunk_indices: vec![chunk],
    };
    let one = |host: &mut HostBatch, chunk: usize| -> Result<(), PipelineError> {
        host.retarget(chunk_desc(chunk));
        load_batch(ctx, sweep, host).map_err(|e| batch_error(sweep, chunk, e))?;
        for a in host.data.iter_mut() {
            *a *= scale;
        }
        store_batch(ctx, sweep, host).map_err(|e| batch_error(sweep, chunk, e))
    };
    #[cfg(feature = "parallel")]
    (0..ctx.store.chunk_count())
        .into_par_iter()
        .try_for_each_init(|| HostBatch::zeroed(chunk_desc(0)), |host, chunk| one(host, chunk))?;
    #[cfg(not(feature = "parallel"))]
    {
        let mut host = HostBatch::zeroed(chunk_desc(0));
        for chunk in 0..ctx.store.chunk_count() {
            one(&mut host, chunk)?;
        }
    }
    ctx.probe
        .sweep_complete(sweep)
        .map_err(|message| PipelineError::Stage { stage: sweep, message })
}

/// Simulates `circuit` from `|0...0>` and returns the final store with its report.
pub fn run(circuit: &Circuit, config: &PipelineConfig) -> Result<(ChunkStore, SimulationReport), PipelineError> {
    config.validate()?;
    let n = circuit.num_qubits;
    let c = config.chunk_qubits as usize;
    let m = (config.batch_qubits as usize).min(n);

    let wall = Instant::now();
    let store = ChunkStore::init_basis_state(n as u32, c as u32, config.error_bound)?;
    let plan = planner::plan(circuit, c, m)?;
    let device = open_backend(
        &config.backend,
        DeviceConfig {
            memory_limit_bytes: DeviceConfig::required_bytes(1 << m, config.strategy),
            kernel_worker_count: config.kernel_workers,
            strategy: config.strategy,
            command_overhead_ns: config.command_overhead_ns,
        },
    )?;

    let probe = BarrierProbe::new(store.chunk_count());
    let timers = PhaseTimers::default();
    let gauge = TransientGauge::default();
    let ctx = RunContext {
        store: &store,
        probe: &probe,
        timers: &timers,
        gauge: &gauge,
    };
    let batch_len = 1usize << m;
    let placeholder = BatchDescriptor {
        index: 0,
        chunk_qubits: c,
        chunk_indices: vec![0; batch_len >> c],
    };
    let mut pool: Vec<HostBatch> = Vec::new();
    let pool_bytes = config.pipeline_depth as u64 * batch_len as u64 * AMPLITUDE_BYTES;

    let mut stage_reports = Vec::with_capacity(plan.stages.len());
    for (sweep, stage) in plan.stages.iter().enumerate() {
        let batches: Vec<BatchDescriptor> = planner::batches(stage, n, c).collect();
        let host_count = ((config.host_fraction * batches.len() as f64).ceil() as usize).min(batches.len());
        let (host_part, device_part) = batches.split_at(host_count);
        if !device_part.is_empty() && pool.is_empty() {
            pool = (0..config.pipeline_depth)
                .map(|_| HostBatch::zeroed(placeholder.clone()))
                .collect();
        }
        let gates = stage.remapped_gates(c)?;
        let device_stage = DeviceStage {
            ctx: &ctx,
            device: device.as_ref(),
            config,
            sweep,
            gates: &gates,
        };
        let (host_result, device_result) = std::thread::scope(|s| {
            let host = (!host_part.is_empty())
                .then(|| s.spawn(|| run_host_batches(&ctx, sweep, &gates, host_part)));
            let dev = device_stage.run(device_part, &mut pool);
            let host = host.map_or(Ok(()), |h| h.join().expect("host worker panicked"));
            (host, dev)
        });
        host_result?;
        device_result?;
        probe
            .sweep_complete(sweep)
            .map_err(|message| PipelineError::Stage { stage: sweep, message })?;
        stage_reports.push(StageReport {
            index: sweep,
            first_gate: stage.first_gate,
            gate_count: stage.gates.len(),
            high_qubits: stage.high_set.clone(),
            batch_count: batches.len(),
            host_batches: host_part.len(),
            device_batches: device_part.len(),
        });
    }
    if config.renormalize {
        renormalize(&ctx, plan.stages.len())?;
    }
    let wall_seconds = wall.elapsed().as_secs_f64();

    let transfer = device.stats();
    let final_norm = norm(&store)?;
    let fidelity = if n <= config.oracle_limit {
        let reference = oracle::simulate_dense_with_limit(circuit, config.oracle_limit)?;
        Some(oracle::fidelity(&reference, &store)?)
    } else {
        None
    };
    let fp = store.footprint();
    let allocated_pool = if pool.is_empty() { 0 } else { pool_bytes };
    let phase_seconds = PhaseSeconds {
        decompress: secs(&timers.decompress),
        h2d: transfer.h2d_seconds,
        kernel: transfer.kernel_seconds,
        d2h: transfer.d2h_seconds,
        host_apply: secs(&timers.host_apply),
        recompress: secs(&timers.recompress),
    };
    let report = SimulationReport {
        num_qubits: n,
        gate_count: circuit.gates.len(),
        norm: final_norm,
        fidelity,
        overlap_efficiency: if wall_seconds > 0.0 {
            transfer.kernel_seconds / wall_seconds
        } else {
            0.0
        },
        phase_seconds,
        wall_seconds,
        footprint: FootprintReport {
            current_bytes: fp.current_bytes,
            peak_bytes: fp.peak_bytes,
            dense_bytes: fp.dense_bytes,
            ratio: fp.ratio,
            transient_peak_bytes: allocated_pool + gauge.peak.load(Ordering::Acquire),
        },
        stages: stage_reports,
        transfer,
        sweeps: probe.counters(),
        config: config.clone(),
        digest: format!("{:016x}", store.digest()),
    };
    Ok((store, report))
}
