//! `svchunk`: run, verify and benchmark the compressed-chunk simulator.
//!
//! Exit codes: 0 success, 1 runtime or verification failure, 2 usage or
//! input errors.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use svchunk::bench::{self, TransferBenchConfig};
use svchunk::circuit::{generators, parse_qasm, to_qasm, Circuit};
use svchunk::device::{TransferStrategy, DEFAULT_COMMAND_OVERHEAD_NS};
use svchunk::oracle::{self, DEFAULT_ORACLE_LIMIT};
use svchunk::pipeline::{self, PipelineConfig};
use svchunk::planner;

const LOSSLESS_TOLERANCE: f64 = 1e-12;

#[derive(Parser)]
#[command(name = "svchunk", version, about = "Compressed-chunk state-vector simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a QASM circuit and write the JSON report.
    Run {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Print the stage plan to stderr before running.
        #[arg(long, env = "SVCHUNK_EXPLAIN")]
        explain: bool,
        #[arg(long, env = "SVCHUNK_OUT")]
        out: Option<PathBuf>,
    },
    /// Simulate and compare against the dense oracle.
    Verify {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Required fidelity for lossy runs (error bound > 0).
        #[arg(long, default_value_t = 0.999, allow_negative_numbers = true, env = "SVCHUNK_MIN_FIDELITY")]
        min_fidelity: f64,
        #[arg(long, env = "SVCHUNK_OUT")]
        out: Option<PathBuf>,
    },
    /// Time H2D/D2H transfers per strategy.
    BenchTransfer {
        /// Batch sizes as powers of two.
        #[arg(long, value_delimiter = ',', default_value = "20", env = "SVCHUNK_EXPONENTS")]
        exponents: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "sync,per-element,buffered", env = "SVCHUNK_STRATEGIES")]
        strategies: Vec<TransferStrategy>,
        #[arg(long, default_value_t = 5, env = "SVCHUNK_REPETITIONS")]
        repetitions: usize,
        #[arg(long, default_value_t = 16, env = "SVCHUNK_CHUNK_QUBITS")]
        chunk_qubits: u32,
        #[arg(long, default_value_t = DEFAULT_COMMAND_OVERHEAD_NS, env = "SVCHUNK_COMMAND_OVERHEAD_NS")]
        command_overhead_ns: u64,
        /// Device memory limit; defaults to the size of the largest batch.
        #[arg(long, env = "SVCHUNK_MEMORY_LIMIT_BYTES")]
        memory_limit_bytes: Option<u64>,
        #[arg(long, default_value_t = 0, env = "SVCHUNK_SEED")]
        seed: u64,
        /// Also print a text table to stderr.
        #[arg(long, env = "SVCHUNK_TABLE")]
        table: bool,
        #[arg(long, env = "SVCHUNK_OUT")]
        out: Option<PathBuf>,
    },
    /// Write a generated circuit as QASM.
    Gen {
        #[arg(value_enum)]
        family: Family,
        #[arg(long, short = 'n', env = "SVCHUNK_QUBITS")]
        qubits: usize,
        /// Gate count for random circuits.
        #[arg(long, default_value_t = 40, env = "SVCHUNK_GATES")]
        gates: usize,
        #[arg(long, default_value_t = 0, env = "SVCHUNK_SEED")]
        seed: u64,
        #[arg(long, env = "SVCHUNK_OUT")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Ghz,
    Qft,
    Random,
}

#[derive(Args)]
struct InputArgs {
    /// QASM file, or `-` for stdin.
    input: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, default_value_t = 16, env = "SVCHUNK_CHUNK_QUBITS")]
    chunk_qubits: u32,
    #[arg(long, default_value_t = 20, env = "SVCHUNK_BATCH_QUBITS")]
    batch_qubits: u32,
    /// 0 selects the lossless codec.
    #[arg(long, default_value_t = 1e-5, allow_negative_numbers = true, env = "SVCHUNK_ERROR_BOUND")]
    error_bound: f64,
    #[arg(long, default_value = "buffered", env = "SVCHUNK_STRATEGY")]
    strategy: TransferStrategy,
    #[arg(long, default_value_t = 2, env = "SVCHUNK_DECOMPRESS_WORKERS")]
    decompress_workers: usize,
    #[arg(long, default_value_t = 2, env = "SVCHUNK_RECOMPRESS_WORKERS")]
    recompress_workers: usize,
    #[arg(long, default_value_t = 1, env = "SVCHUNK_KERNEL_WORKERS")]
    kernel_workers: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true, env = "SVCHUNK_HOST_FRACTION")]
    host_fraction: f64,
    #[arg(long, default_value_t = 2, env = "SVCHUNK_PIPELINE_DEPTH")]
    pipeline_depth: usize,
    #[arg(long, env = "SVCHUNK_RENORMALIZE")]
    renormalize: bool,
    #[arg(long, default_value_t = 0, env = "SVCHUNK_SEED")]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_COMMAND_OVERHEAD_NS, env = "SVCHUNK_COMMAND_OVERHEAD_NS")]
    command_overhead_ns: u64,
    #[arg(long, default_value_t = DEFAULT_ORACLE_LIMIT, env = "SVCHUNK_ORACLE_LIMIT")]
    oracle_limit: usize,
    #[arg(long, default_value = "reference", env = "SVCHUNK_BACKEND")]
    backend: String,
}

impl ConfigArgs {
    fn to_config(&self) -> PipelineConfig {
        PipelineConfig {
            chunk_qubits: self.chunk_qubits,
            batch_qubits: self.batch_qubits,
            error_bound: self.error_bound,
            strategy: self.strategy,
            decompress_workers: self.decompress_workers,
            recompress_workers: self.recompress_workers,
            kernel_workers: self.kernel_workers,
            host_fraction: self.host_fraction,
            pipeline_depth: self.pipeline_depth,
            renormalize: self.renormalize,
            seed: self.seed,
            command_overhead_ns: self.command_overhead_ns,
            oracle_limit: self.oracle_limit,
            backend: self.backend.clone(),
        }
    }
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn runtime(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            input,
            config,
            explain,
            out,
        } => cmd_run(&input.input, config.to_config(), explain, out.as_deref()),
        Command::Verify {
            input,
            config,
            min_fidelity,
            out,
        } => cmd_verify(&input.input, config.to_config(), min_fidelity, out.as_deref()),
        Command::BenchTransfer {
            exponents,
            strategies,
            repetitions,
            chunk_qubits,
            command_overhead_ns,
            memory_limit_bytes,
            seed,
            table,
            out,
        } => {
            let cfg = TransferBenchConfig {
                exponents,
                strategies,
                repetitions,
                chunk_qubits,
                command_overhead_ns,
                memory_limit_bytes,
                seed,
            };
            cmd_bench_transfer(&cfg, table, out.as_deref())
        }
        Command::Gen {
            family,
            qubits,
            gates,
            seed,
            out,
        } => {
            if qubits == 0 {
                return Err(usage("--qubits must be >= 1"));
            }
            let circuit = match family {
                Family::Ghz => generators::ghz(qubits),
                Family::Qft => generators::qft(qubits),
                Family::Random => generators::random(qubits, gates, seed),
            };
            emit(&to_qasm(&circuit), out.as_deref())
        }
    }
}

fn load_circuit(path: &Path) -> Result<Circuit, Failure> {
    let text = if path == Path::new("-") {
        let mut s = String::new();
        io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| usage(format!("reading stdin: {e}")))?;
        s
    } else {
        fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?
    };
    let program = parse_qasm(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    for w in &program.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(program.circuit)
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| runtime(format!("writing {}: {e}", path.display()))),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| runtime(format!("writing stdout: {e}")))
        }
    }
}

fn to_json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn cmd_run(input: &Path, config: PipelineConfig, explain: bool, out: Option<&Path>) -> Result<(), Failure> {
    config.validate().map_err(|e| usage(e.to_string()))?;
    let circuit = load_circuit(input)?;
    if explain {
        let m = (config.batch_qubits as usize).min(circuit.num_qubits);
        let plan = planner::plan(&circuit, config.chunk_qubits as usize, m)
            .map_err(|e| runtime(e.to_string()))?;
        eprint!("{}", plan.explain());
    }
    let (_, report) = pipeline::run(&circuit, &config).map_err(|e| runtime(e.to_string()))?;
    emit(&to_json(&report), out)
}

fn cmd_verify(input: &Path, config: PipelineConfig, min_fidelity: f64, out: Option<&Path>) -> Result<(), Failure> {
    config.validate().map_err(|e| usage(e.to_string()))?;
    if !(0.0..=1.0).contains(&min_fidelity) {
        return Err(usage(format!("--min-fidelity must be in [0, 1], got {min_fidelity}")));
    }
    let circuit = load_circuit(input)?;
    if circuit.num_qubits > config.oracle_limit {
        return Err(usage(format!(
            "{} qubits exceeds oracle limit of {}",
            circuit.num_qubits, config.oracle_limit
        )));
    }
    let (store, report) = pipeline::run(&circuit, &config).map_err(|e| runtime(e.to_string()))?;
    let reference = oracle::simulate_dense_with_limit(&circuit, config.oracle_limit)
        .map_err(|e| runtime(e.to_string()))?;
    let deviation = oracle::max_deviation(&reference, &store).map_err(|e| runtime(e.to_string()))?;
    let fidelity = oracle::fidelity(&reference, &store).map_err(|e| runtime(e.to_string()))?;
    let lossless = config.error_bound == 0.0;
    let passed = if lossless {
        deviation <= LOSSLESS_TOLERANCE
    } else {
        fidelity >= min_fidelity
    };
    let summary = json!({
        "mode": if lossless { "lossless" } else { "lossy" },
        "passed": passed,
        "max_deviation": deviation,
        "fidelity": fidelity,
        "threshold": if lossless { LOSSLESS_TOLERANCE } else { min_fidelity },
        "num_qubits": circuit.num_qubits,
        "digest": report.digest,
    });
    emit(&to_json(&summary), out)?;
    if passed {
        Ok(())
    } else if lossless {
        Err(runtime(format!(
            "max deviation {deviation:e} exceeds {LOSSLESS_TOLERANCE:e}"
        )))
    } else {
        Err(runtime(format!("fidelity {fidelity} below {min_fidelity}")))
    }
}

fn cmd_bench_transfer(cfg: &TransferBenchConfig, table: bool, out: Option<&Path>) -> Result<(), Failure> {
    if cfg.repetitions == 0 {
        return Err(usage("--repetitions must be >= 1"));
    }
    if cfg.exponents.is_empty() || cfg.strategies.is_empty() {
        return Err(usage("need at least one exponent and one strategy"));
    }
    if let Some(&e) = cfg.exponents.iter().find(|&&e| e > 32) {
        return Err(usage(format!("exponent {e} is larger than 32")));
    }
    let report = bench::transfer_bench(cfg).map_err(|e| runtime(e.to_string()))?;
    if table {
        eprint!("{}", bench::format_table(&report));
    }
    emit(&to_json(&report), out)
}
