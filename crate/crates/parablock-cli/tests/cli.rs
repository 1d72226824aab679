//! End-to-end tests of the installed binary: exit codes, file outputs,
//! and the determinism contract, all through `std::process::Command`.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use parablock::trace::{parse_trace, TRACE_HEADER};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_parablock"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_writes_a_parseable_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(config("quadratic_small.toml"))
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let trace = std::fs::read_to_string(dir.path().join("trace_parablock.csv")).unwrap();
    assert!(trace.starts_with(TRACE_HEADER));
    let rows = parse_trace(&trace).unwrap();
    assert_eq!(rows.len(), 24); // one row per configured round
    for (t, row) in rows.iter().enumerate() {
        assert_eq!(row.round, t);
    }
    let summary = std::fs::read_to_string(dir.path().join("summary_parablock.txt")).unwrap();
    assert!(summary.contains("method=parablock"));
    assert!(summary.contains("final_loss="));
    assert!(stdout(&out).contains("total_wall="));
}

#[test]
fn run_is_byte_deterministic_across_invocations() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = bin()
            .args(["run", "--config"])
            .arg(config("logistic_dirichlet.toml"))
            .arg("--out-dir")
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", stderr(&out));
    }
    for file in ["trace_parablock.csv", "summary_parablock.txt"] {
        let left = std::fs::read(a.path().join(file)).unwrap();
        let right = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical runs");
    }
}

#[test]
fn unknown_config_key_exits_2_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[run]\nrounds = 4\nbogus_key = 1\n").unwrap();
    let out = bin().args(["run", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bogus_key"));
}

#[test]
fn missing_config_file_exits_2() {
    let out = bin()
        .args(["run", "--config", "/nonexistent/nope.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn contradictory_block_layouts_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two_layouts.toml");
    std::fs::write(
        &path,
        "[run]\nrounds = 2\nlocal_steps = 1\nserver_lr = 1.0\nstaleness = 1\n\
         [model]\ndimension = 8\nblocks = 2\nlayer_dims = [4, 4]\n\
         [objective]\nfamily = \"quadratic\"\nclients = 2\n\
         [optimizer]\nkind = \"sgd\"\neta_l = 0.01\n",
    )
    .unwrap();
    let out = bin().args(["run", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("exactly one"));
}

#[test]
fn check_passes_on_the_example_config() {
    let out = bin()
        .args(["check", "--config"])
        .arg(config("quadratic_small.toml"))
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    for line in [
        "round battery: pass",
        "replay identity: pass",
        "untouched blocks: pass",
        "post-flush consistency: pass",
        "single-client reduction: pass",
    ] {
        assert!(text.contains(line), "missing {line:?} in:\n{text}");
    }
}

#[test]
fn corrupted_correction_exits_4_naming_round_and_block() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corrupt.toml");
    std::fs::write(
        &path,
        "[run]\nrounds = 8\nlocal_steps = 3\nserver_lr = 1.0\nstaleness = 1\n\
         [model]\ndimension = 12\nblocks = 3\n\
         [objective]\nfamily = \"quadratic\"\nclients = 3\n\
         [optimizer]\nkind = \"sgd\"\neta_l = 0.01\n\
         [debug]\ncorrupt_correction_round = 4\n",
    )
    .unwrap();
    let out = bin().args(["check", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    let err = stderr(&out);
    // The round-4 correction rewrites the block applied that round
    // (round 3's block, id 1 under the sequential schedule).
    assert!(err.contains("round 4"), "stderr: {err}");
    assert!(err.contains("client 0"), "stderr: {err}");
    assert!(err.contains("block 1"), "stderr: {err}");
}

#[test]
fn infeasible_rates_warn_but_still_exit_0() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hot.toml");
    // eta_l far above 1/(22KL); the run must proceed with a warning.
    std::fs::write(
        &path,
        "[run]\nrounds = 4\nlocal_steps = 5\nserver_lr = 1.0\nstaleness = 1\n\
         [model]\ndimension = 8\nblocks = 2\n\
         [objective]\nfamily = \"quadratic\"\nclients = 2\n\
         [optimizer]\nkind = \"sgd\"\neta_l = 0.2\n",
    )
    .unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(&path)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(
        stderr(&out).contains("outside the convergence gate"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn compare_emits_one_row_per_method_and_cell() {
    let out = bin()
        .args(["compare", "--config"])
        .arg(config("quadratic_small.toml"))
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "method,bandwidth,batch,total_wall,compute_share,comm_share,final_loss"
    );
    assert_eq!(lines.len(), 4); // header + three methods on the single cell
    assert!(lines[1].starts_with("parablock,"));
    assert!(lines[2].starts_with("fedbcd,"));
    assert!(lines[3].starts_with("fedcybgd,"));
}

#[test]
fn compare_rejects_unknown_method() {
    let out = bin()
        .args(["compare", "--methods", "gossip", "--config"])
        .arg(config("quadratic_small.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("gossip"));
}

#[test]
fn bound_prints_a_full_report() {
    let out = bin()
        .args(["bound", "--config"])
        .arg(config("quadratic_small.toml"))
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    for key in [
        "smoothness=",
        "sigma_g=",
        "initial_gap=",
        "term_gap=",
        "bound_rhs=",
        "measured_avg=",
        "ratio=",
        "feasible=true",
    ] {
        assert!(text.contains(key), "missing {key:?} in:\n{text}");
    }
}

#[test]
fn gradcheck_passes_on_every_family_config() {
    for name in ["quadratic_small.toml", "logistic_dirichlet.toml"] {
        let out = bin()
            .args(["gradcheck", "--config"])
            .arg(config(name))
            .output()
            .unwrap();
        assert!(out.status.success(), "{name} stderr: {}", stderr(&out));
        assert!(stdout(&out).contains("gradcheck max_rel_error="));
    }
}

#[test]
fn gradcheck_with_impossible_tolerance_exits_3() {
    let out = bin()
        .args(["gradcheck", "--tol", "1e-18", "--config"])
        .arg(config("logistic_dirichlet.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn partition_preview_prints_per_client_class_counts() {
    let out = bin()
        .args(["partition-preview", "--config"])
        .arg(config("logistic_dirichlet.toml"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("client,rows,class_0,class_1"));
    assert!(text.lines().last().unwrap().starts_with("total,400,"));
}

#[test]
fn partition_preview_rejects_analytic_objectives() {
    let out = bin()
        .args(["partition-preview", "--config"])
        .arg(config("quadratic_small.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no dataset"));
}
