//! Host/device transfer timing per strategy, reported as seconds and as
//! ratios to the synchronous baseline.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::device::{
    Device, DeviceConfig, DeviceError, HostBatch, ReferenceDevice, TransferStrategy,
    DEFAULT_COMMAND_OVERHEAD_NS,
};
use crate::planner::BatchDescriptor;
use crate::Amplitude;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferBenchConfig {
    /// Batch sizes as powers of two.
    pub exponents: Vec<u32>,
    pub strategies: Vec<TransferStrategy>,
    pub repetitions: usize,
    /// Chunk size inside each batch; capped at the exponent.
    pub chunk_qubits: u32,
    pub command_overhead_ns: u64,
    /// Device memory limit; `None` sizes the device to the largest batch.
    pub memory_limit_bytes: Option<u64>,
    pub seed: u64,
}

impl Default for TransferBenchConfig {
    fn default() -> Self {
        TransferBenchConfig {
            exponents: vec![20],
            strategies: TransferStrategy::ALL.to_vec(),
            repetitions: 5,
            chunk_qubits: 16,
            command_overhead_ns: DEFAULT_COMMAND_OVERHEAD_NS,
            memory_limit_bytes: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub samples: Vec<f64>,
}

impl Summary {
    pub fn from_samples(mut samples: Vec<f64>) -> Summary {
        assert!(!samples.is_empty());
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        samples.shrink_to_fit();
        Summary {
            median,
            min: sorted[0],
            max: sorted[n - 1],
            samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferBenchRow {
    pub exponent: u32,
    pub amplitudes: usize,
    pub strategy: TransferStrategy,
    pub h2d_seconds: Summary,
    pub d2h_seconds: Summary,
    /// Device-side layout permutation, reported apart from the copies.
    pub permute_seconds: Summary,
    pub h2d_op_count: u64,
    pub d2h_op_count: u64,
    /// Median over the synchronous median at the same size.
    pub h2d_ratio: Option<f64>,
    pub d2h_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub parallel_feature: bool,
    pub version: String,
}

impl MachineInfo {
    pub fn current() -> Self {
        MachineInfo {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            parallel_feature: cfg!(feature = "parallel"),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferBenchReport {
    pub machine: MachineInfo,
    pub config: TransferBenchConfig,
    pub rows: Vec<TransferBenchRow>,
}

impl TransferBenchReport {
    pub fn row(&self, exponent: u32, strategy: TransferStrategy) -> Option<&TransferBenchRow> {
        self.rows
            .iter()
            .find(|r| r.exponent == exponent && r.strategy == strategy)
    }
}

fn random_batch(exponent: u32, chunk_qubits: u32, rng: &mut ChaCha8Rng) -> HostBatch {
    let c = chunk_qubits.min(exponent) as usize;
    let desc = BatchDescriptor {
        index: 0,
        chunk_qubits: c,
        chunk_indices: (0..1usize << (exponent as usize - c)).collect(),
    };
    let mut batch = HostBatch::zeroed(desc);
    for a in &mut batch.data {
        *a = Amplitude::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    batch
}

/// Times gather (H2D) and scatter (D2H) on the reference backend, without kernels.
pub fn transfer_bench(config: &TransferBenchConfig) -> Result<TransferBenchReport, DeviceError> {
    if config.repetitions == 0 {
        return Err(DeviceError::Config("repetitions must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::new();
    for &exponent in &config.exponents {
        let batch = random_batch(exponent, config.chunk_qubits, &mut rng);
        let mut size_rows: Vec<TransferBenchRow> = Vec::new();
        for &strategy in &config.strategies {
            let memory_limit_bytes = config
                .memory_limit_bytes
                .unwrap_or_else(|| DeviceConfig::required_bytes(batch.data.len(), strategy));
            let device = ReferenceDevice::new(DeviceConfig {
                memory_limit_bytes,
                kernel_worker_count: 1,
                strategy,
                command_overhead_ns: config.command_overhead_ns,
            })?;
            let (mut h2d, mut d2h, mut permute) = (Vec::new(), Vec::new(), Vec::new());
            let mut ops = (0, 0);
            let mut host = batch.clone();
            for _ in 0..config.repetitions {
                let before = device.stats();
                let wall = Instant::now();
                let g = device.gather(host)?;
                device.wait(&g)?;
                let mid = device.stats();
                let s = device.scatter(&batch.descriptor)?;
                device.wait(&s)?;
                let elapsed = wall.elapsed();
                let after = device.stats();
                host = s
                    .take_output()
                    .ok_or_else(|| DeviceError::Provider("scatter delivered no buffers".into()))?;
                let up = mid.since(&before);
                let down = after.since(&mid);
                h2d.push(up.h2d_seconds);
                d2h.push(down.d2h_seconds);
                permute.push(up.kernel_seconds + down.kernel_seconds);
                ops = (up.h2d_op_count, down.d2h_op_count);
                debug_assert!(elapsed.as_secs_f64() >= up.h2d_seconds + down.d2h_seconds);
            }
            if host.data != batch.data {
                return Err(DeviceError::Provider(format!(
                    "{strategy} round trip altered the batch"
                )));
            }
            size_rows.push(TransferBenchRow {
                exponent,
                amplitudes: batch.data.len(),
                strategy,
                h2d_seconds: Summary::from_samples(h2d),
                d2h_seconds: Summary::from_samples(d2h),
                permute_seconds: Summary::from_samples(permute),
                h2d_op_count: ops.0,
                d2h_op_count: ops.1,
                h2d_ratio: None,
                d2h_ratio: None,
            });
        }
        let baseline = size_rows
            .iter()
            .find(|r| r.strategy == TransferStrategy::Synchronous)
            .map(|r| (r.h2d_seconds.median, r.d2h_seconds.median));
        if let Some((h, d)) = baseline {
            for r in &mut size_rows {
                r.h2d_ratio = Some(r.h2d_seconds.median / h);
                r.d2h_ratio = Some(r.d2h_seconds.median / d);
            }
        }
        rows.extend(size_rows);
    }
    Ok(TransferBenchReport {
        machine: MachineInfo::current(),
        config: config.clone(),
        rows,
    })
}

/// Plain-text table: one row per size and strategy, H2D/D2H side by side.
pub fn format_table(report: &TransferBenchReport) -> String {
    let mut out = String::from("log2(amps)  strategy      H2D/D2H median s         H2D/D2H vs sync\n");
    for r in &report.rows {
        let ratio = match (r.h2d_ratio, r.d2h_ratio) {
            (Some(h), Some(d)) => format!("{h:.2}x/{d:.2}x"),
            _ => "-".into(),
        };
        out.push_str(&format!(
            "{:<11} {:<13} {:<24} {}\n",
            r.exponent,
            r.strategy.name(),
            format!("{:.6}/{:.6}", r.h2d_seconds.median, r.d2h_seconds.median),
            ratio
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_min_max() {
        let s = Summary::from_samples(vec![3.0, 1.0, 2.0, 5.0, 4.0]);
        assert_eq!((s.median, s.min, s.max), (3.0, 1.0, 5.0));
        assert_eq!(s.samples.len(), 5);
        assert_eq!(Summary::from_samples(vec![1.0, 2.0]).median, 1.5);
    }

    #[test]
    fn small_bench_shapes_and_counts() {
        let cfg = TransferBenchConfig {
            exponents: vec![8, 10],
            repetitions: 3,
            chunk_qubits: 6,
            command_overhead_ns: 0,
            ..TransferBenchConfig::default()
        };
        let report = transfer_bench(&cfg).unwrap();
        assert_eq!(report.rows.len(), 6);
        let per = report.row(10, TransferStrategy::PerElement).unwrap();
        assert_eq!((per.h2d_op_count, per.d2h_op_count), (1024, 1024));
        let buf = report.row(10, TransferStrategy::Buffered).unwrap();
        assert_eq!((buf.h2d_op_count, buf.d2h_op_count), (1, 1));
        let sync = report.row(8, TransferStrategy::Synchronous).unwrap();
        assert_eq!(sync.h2d_op_count, 4);
        assert_eq!(sync.h2d_ratio, Some(1.0));
        assert_eq!(buf.h2d_seconds.samples.len(), 3);
        assert!(format_table(&report).lines().count() == 7);
    }

    #[test]
    fn memory_limit_is_enforced() {
        let cfg = TransferBenchConfig {
            exponents: vec![10],
            repetitions: 1,
            memory_limit_bytes: Some(1024),
            command_overhead_ns: 0,
            ..TransferBenchConfig::default()
        };
        assert!(matches!(transfer_bench(&cfg), Err(DeviceError::MemoryLimit { .. })));
    }
}
