use svchunk::circuit::{generators, parse_qasm, to_qasm};
use svchunk::oracle::{fidelity, max_deviation, simulate_dense};
use svchunk::pipeline::{run, PipelineConfig, PipelineError};
use svchunk::{ChunkStore, TransferStrategy};

const BELL_PLUS: &str = "\
OPENQASM 2.0;
include \"qelib1.inc\";
qreg q[6];
creg c[6];
h q[0];
cx q[0],q[5];
rz(-pi/4) q[5];
u3(pi/2, 0, pi) q[3];
swap q[3],q[4];
cz q[1],q[4];
barrier q;
measure q -> c;
";

fn config(c: u32, m: u32, eb: f64) -> PipelineConfig {
    PipelineConfig {
        chunk_qubits: c,
        batch_qubits: m,
        error_bound: eb,
        command_overhead_ns: 0,
        ..PipelineConfig::default()
    }
}

#[test]
fn qasm_file_runs_like_the_oracle() {
    let program = parse_qasm(BELL_PLUS).unwrap();
    assert_eq!(program.warnings.len(), 3);
    let reference = simulate_dense(&program.circuit).unwrap();
    for strategy in TransferStrategy::ALL {
        let cfg = PipelineConfig { strategy, ..config(2, 4, 0.0) };
        let (store, report) = run(&program.circuit, &cfg).unwrap();
        assert!(max_deviation(&reference, &store).unwrap() <= 1e-12);
        assert_eq!(report.fidelity.map(|f| (f - 1.0).abs() < 1e-12), Some(true));
    }
}

#[test]
fn printed_circuits_reparse_to_the_same_state() {
    let circuit = generators::random(7, 50, 11);
    let again = parse_qasm(&to_qasm(&circuit)).unwrap().circuit;
    assert_eq!(again, circuit);
    let (a, _) = run(&circuit, &config(3, 5, 0.0)).unwrap();
    let (b, _) = run(&again, &config(3, 5, 0.0)).unwrap();
    assert_eq!(a.digest(), b.digest());
}

#[test]
fn final_store_survives_a_dump() {
    let circuit = generators::qft(9);
    let (store, _) = run(&circuit, &config(4, 6, 1e-7)).unwrap();
    let mut bytes = Vec::new();
    store.write_to(&mut bytes).unwrap();
    let back = ChunkStore::read_from(bytes.as_slice()).unwrap();
    assert_eq!(back.digest(), store.digest());
    let reference = simulate_dense(&circuit).unwrap();
    assert!(fidelity(&reference, &back).unwrap() > 0.9999);
}

#[test]
fn qft_on_basis_is_uniform() {
    let (store, report) = run(&generators::qft(10), &config(4, 7, 0.0)).unwrap();
    let expected = 1.0 / 32.0;
    for a in store.to_dense().unwrap() {
        assert!((a.norm() - expected).abs() < 1e-12);
    }
    assert!((report.norm - 1.0).abs() < 1e-12);
}

#[test]
fn lossy_error_stays_near_the_per_sweep_bound() {
    // Each sweep adds at most eps per component; the first sweep is exact for
    // the all-zero chunks.
    let eb = 1e-4;
    let circuit = generators::random(10, 40, 3);
    let (store, report) = run(&circuit, &config(4, 6, eb)).unwrap();
    let reference = simulate_dense(&circuit).unwrap();
    let sweeps = report.stages.len() as f64;
    assert!(max_deviation(&reference, &store).unwrap() <= sweeps * eb * 4.0);
}

#[test]
fn errors_carry_context() {
    let circuit = generators::ghz(5);
    let err = run(&circuit, &PipelineConfig { backend: "cuda".into(), ..config(2, 4, 0.0) }).unwrap_err();
    assert!(matches!(err, PipelineError::Device(_)), "{err}");
    // the window cannot hold a two-qubit gate on high qubits
    let err = run(&circuit, &config(2, 3, 0.0)).unwrap_err();
    assert!(err.to_string().contains("window"), "{err}");
}

#[test]
fn lossy_norm_drift_is_reported() {
    let (store, report) = run(&generators::random(16, 100, 12), &config(12, 15, 1e-4)).unwrap();
    assert!((report.norm - 1.0).abs() <= 0.05, "norm {}", report.norm);
    assert_eq!(report.norm, svchunk::pipeline::norm(&store).unwrap());
    let f = report.fidelity.unwrap();
    assert!((0.0..=1.0 + 1e-9).contains(&f));
}
