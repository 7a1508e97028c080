use std::path::Path;
use std::process::Command;

use stresseq::config::{Config, ProblemName};
use stresseq::harness;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stresseq"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn missing_mesh_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", "problem = cook\nmesh = nowhere.msh\nsteps = 1\n");
    let out = bin().arg("run").arg(&cfg).env("STRESSEQ_OUTPUT_DIR", dir.path().join("out")).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[config]"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", "problem = cook\ncolour = red\n");
    let out = bin().arg("verify").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn one_step_run_writes_header_and_row() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_config(dir.path(), "c.cfg", "problem = cook\nsteps = 1\nwrite_meshes = true\n");
    let out = bin().arg("run").arg(&cfg).env("STRESSEQ_OUTPUT_DIR", &out_dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let history = std::fs::read_to_string(out_dir.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
    assert!(history.starts_with("step,N,eta_A,eta_B,eta_C,eta_total,bound,error,effectivity\n"));
    for f in ["report.csv", "diagnostics.csv", "config.txt", "mesh_000.txt"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let echoed = Config::parse(&std::fs::read_to_string(out_dir.join("config.txt")).unwrap()).unwrap();
    assert_eq!(echoed.mu, 1.0);

    let info = bin().arg("mesh-info").arg(out_dir.join("mesh_000.txt")).output().unwrap();
    assert!(info.status.success());
    let text = String::from_utf8_lossy(&info.stdout);
    assert!(text.contains("elements        32"), "{text}");
}

#[test]
fn verify_passes_on_builtin_problems() {
    let dir = tempfile::tempdir().unwrap();
    for (i, p) in ["cook", "manufactured-smooth", "square-lshape"].iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("{i}.cfg"), &format!("problem = {p}\ninv_lambda = 0.01\n"));
        let out = bin().arg("verify").arg(&cfg).env("STRESSEQ_OUTPUT_DIR", dir.path().join(p)).output().unwrap();
        assert!(out.status.success(), "{p}: {}", String::from_utf8_lossy(&out.stdout));
        assert!(dir.path().join(p).join("verify.csv").is_file());
    }
}

fn outputs(config: &Config) -> Vec<Vec<u8>> {
    harness::run(config).unwrap();
    let dir = config.effective_output_dir();
    ["history.csv", "report.csv", "diagnostics.csv"].iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect()
}

#[test]
fn reruns_are_byte_identical_for_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = Config::new(ProblemName::Cook);
    c.steps = 4;
    c.threads = 1;
    c.output_dir = dir.path().join("a");
    let first = outputs(&c);
    c.output_dir = dir.path().join("b");
    assert_eq!(outputs(&c), first);
    c.threads = 4;
    c.output_dir = dir.path().join("c");
    assert_eq!(outputs(&c), first);
}

#[test]
fn mesh_file_replaces_the_builtin_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = stresseq::problems::cook_mesh(2).unwrap();
    stresseq::meshio::write_mesh(&mesh, &dir.path().join("coarse.msh")).unwrap();
    let cfg = write_config(dir.path(), "c.cfg", "problem = cook\nmesh = coarse.msh\nsteps = 1\n");
    let mut c = Config::read(&cfg).unwrap();
    c.output_dir = dir.path().join("out");
    let out = harness::run(&c).unwrap();
    assert_eq!(out.run.history.steps[0].n_elements, 8);
}

fn history_rows(dir: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(dir.join("history.csv")).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn cook_run_has_one_row_per_step_and_growing_n() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = Config::new(ProblemName::Cook);
    c.steps = 14;
    c.output_dir = dir.path().to_path_buf();
    harness::run(&c).unwrap();
    let rows = history_rows(dir.path());
    assert_eq!(rows.len(), 14);
    let n: Vec<usize> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(n.windows(2).all(|w| w[0] < w[1]), "{n:?}");
    // Proxy errors exist for all but the two finest levels.
    assert!(rows[..12].iter().all(|r| !r[7].is_empty()));
    assert!(rows[12..].iter().all(|r| r[7].is_empty() && r[8].is_empty()));
}

#[test]
fn manufactured_uniform_history_shows_second_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", "problem = manufactured-smooth\nrefinement = uniform\nsteps = 4\ninv_lambda = 0.001\n");
    let mut c = Config::read(&cfg).unwrap();
    c.output_dir = dir.path().join("out");
    harness::run(&c).unwrap();
    let rows = history_rows(&c.output_dir);
    let err: Vec<f64> = rows.iter().map(|r| r[7].parse().unwrap()).collect();
    let bound: Vec<f64> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    // Uniform refinement halves h, so the order is log2 of the error ratio.
    let order = (err[2] / err[3]).log2();
    assert!(order >= 1.9, "{err:?}");
    assert!(err.iter().zip(&bound).all(|(e, b)| e < b));
}
