//! End-to-end checks of the binary: exit codes, output files, determinism of
//! the CSV artifacts across reruns and thread counts, and format round trips.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn pvi() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pvi"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pvi-cli-test-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("missing {path:?}: {e}"))
}

#[test]
fn usage_errors_exit_with_2() {
    let out = pvi().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = pvi().arg("nonsense").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = pvi().args(["study", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("usage:"), "no usage text in {stderr}");
}

#[test]
fn quadrature_rule_table() {
    let dir = tmp_dir("quadrature");
    let out = pvi()
        .args(["quadrature", "--q", "2", "--p", "1", "--out-dir"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let table = read(&dir.join("rule_q2.csv"));
    let g = 1.0 / 3.0f64.sqrt();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("node,weight"));
    let first: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|t| t.parse().unwrap())
        .collect();
    assert!((first[0] + g).abs() < 1e-15);
    assert!((first[1] - 1.0).abs() < 1e-15);
    let report = read(&dir.join("quadrature.csv"));
    assert!(report.contains("true"), "p=1 q=2 should be admissible");
    assert!(read(&dir.join("manifest.txt")).contains("subcommand=quadrature"));
}

#[test]
fn verify_abstract_is_deterministic_across_threads() {
    let dir1 = tmp_dir("va1");
    let dir2 = tmp_dir("va2");
    for (dir, threads) in [(&dir1, "1"), (&dir2, "4")] {
        let out = pvi()
            .args([
                "verify-abstract",
                "--trials",
                "40",
                "--seed",
                "123",
                "--threads",
                threads,
            ])
            .arg("--out-dir")
            .arg(dir)
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for name in ["strang.csv", "corollary.csv", "lipschitz.csv"] {
        assert_eq!(
            read(&dir1.join(name)),
            read(&dir2.join(name)),
            "{name} differs across thread counts"
        );
    }
}

#[test]
fn verify_constrained_exits_clean() {
    let dir = tmp_dir("vc");
    let out = pvi()
        .args([
            "verify-constrained",
            "--trials",
            "20",
            "--seed",
            "9",
            "--out-dir",
        ])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = read(&dir.join("constrained.csv"));
    assert!(csv.starts_with("trial,lhs,rhs,margin,holds\n"));
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.lines().skip(1).all(|l| l.ends_with("true")));
}

#[test]
fn study_writes_tables_and_is_reproducible() {
    let dir1 = tmp_dir("study1");
    let dir2 = tmp_dir("study2");
    for dir in [&dir1, &dir2] {
        let out = pvi()
            .args([
                "study",
                "--mode",
                "h-uniform",
                "--p",
                "1",
                "--q-offset",
                "1",
                "--levels",
                "3",
            ])
            .arg("--out-dir")
            .arg(dir)
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let table = read(&dir1.join("h1_j1.csv"));
    assert!(table.starts_with("level,N,h,err_total,err_quad,eoc_total,eoc_quad\n"));
    assert_eq!(table.lines().count(), 4);
    assert_eq!(
        table,
        read(&dir2.join("h1_j1.csv")),
        "study output not reproducible"
    );
    assert_eq!(
        read(&dir1.join("h1_j1_loglog.csv")),
        read(&dir2.join("h1_j1_loglog.csv"))
    );
    let manifest = read(&dir1.join("manifest.txt"));
    assert!(manifest.contains("subcommand=study"));
    assert!(manifest.contains("q-offset=1"));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tmp_dir("config");
    let config_path = dir.join("run.conf");
    fs::write(
        &config_path,
        "# study defaults\nmode=h-uniform\np=1\nlevels=2\nq-offset=11\n",
    )
    .unwrap();
    let out = pvi()
        .args(["study", "--levels", "3", "--config"])
        .arg(&config_path)
        .arg("--out-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // the flag value (3 levels) beats the config value (2)
    let table = read(&dir.join("h1_j11.csv"));
    assert_eq!(table.lines().count(), 4);
    let bad = pvi()
        .args(["study", "--config"])
        .arg(dir.join("missing.conf"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn solve_writes_solution_active_set_and_dumps() {
    let dir = tmp_dir("solve");
    let out = pvi()
        .args([
            "solve",
            "--p",
            "1",
            "--q",
            "3",
            "--levels",
            "2",
            "--dump-matrix",
            "--dump-mesh",
        ])
        .arg("--out-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("solved:"), "{stdout}");
    let solution = read(&dir.join("solution.csv"));
    assert!(solution.starts_with("dof,x,y,u,lambda,active\n"));
    let active = read(&dir.join("active.csv"));
    assert!(active.lines().count() > 1, "expected a nonempty active set");
    // matrix dump has "row col value" triplets
    let matrix = read(&dir.join("matrix.txt"));
    let first: Vec<&str> = matrix.lines().next().unwrap().split(' ').collect();
    assert_eq!(first.len(), 3);
    // mesh dump round-trips its header
    let mesh = read(&dir.join("mesh.txt"));
    let header: Vec<usize> = mesh
        .lines()
        .next()
        .unwrap()
        .split(' ')
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(header[1], 320);
}

#[test]
fn spectrum_flags_indefinite_matrices() {
    let dir = tmp_dir("spectrum");
    let out = pvi()
        .args([
            "spectrum",
            "--p",
            "2",
            "--q",
            "1",
            "--levels",
            "1",
            "--out-dir",
        ])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("NOT positive definite"), "{stdout}");
    let csv = read(&dir.join("spectrum.csv"));
    assert!(csv.lines().nth(1).unwrap().ends_with("false"));
}

#[test]
fn dense_instance_text_format_round_trips() {
    use pvi_cli::formats::{read_dense_instance, write_dense_instance};
    let mut rng = pvi_core::rng::Rng::new(5);
    let instance = pvi_core::abstract_vi::random_dense_instance(&mut rng, 9);
    let text = write_dense_instance(&instance);
    let back = read_dense_instance(&text).unwrap();
    assert_eq!(instance.dim(), back.dim());
    for i in 0..instance.dim() {
        for j in 0..instance.dim() {
            assert_eq!(instance.a[(i, j)], back.a[(i, j)]);
        }
        assert_eq!(instance.ell[i], back.ell[i]);
        assert_eq!(instance.psi[i], back.psi[i]);
        assert_eq!(instance.constrained[i], back.constrained[i]);
    }
    assert!(read_dense_instance("2 3\n1 2 3").is_err());
}
