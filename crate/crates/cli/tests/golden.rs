//! Byte-exact output of the `tflow` binary. Run with `BLESS=1` to rewrite
//! the expected files after an intended change.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn golden(name: &str, args: &[&str], code: i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_tflow")).args(args).output().expect("binary runs");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        out.status.code(),
        Some(code),
        "exit status of {args:?}; stderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.out"));
    if std::env::var_os("BLESS").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, &stdout).unwrap();
        return;
    }
    let want = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(stdout, want, "stdout of {args:?} differs from {}", path.display());
}

fn stderr_of(args: &[&str]) -> (Option<i32>, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tflow")).args(args).output().expect("binary runs");
    (out.status.code(), String::from_utf8(out.stderr).unwrap())
}

#[test]
fn repair_ex1_inserts_one_protect() {
    golden("repair_ex1", &["repair", "corpus/ex1.bl"], 0);
    golden("repair_ex1_json", &["repair", "--json", "corpus/ex1.bl"], 0);
}

#[test]
fn repair_ex1_slh_protects_both_reads() {
    golden("repair_ex1_slh", &["repair", "--mode=slh", "corpus/ex1.bl"], 0);
}

#[test]
fn transient_check_rejects_ex1_at_the_final_read() {
    golden("check_transient_ex1", &["check", "--transient", "corpus/ex1.bl"], 1);
    golden("check_transient_ex1_json", &["check", "--transient", "--json", "corpus/ex1.bl"], 1);
}

#[test]
fn patched_ex1_passes_both_checks() {
    golden("check_ex1_patched", &["check", "corpus/ex1-patched.bl"], 0);
}

#[test]
fn implicit_flow_is_rejected_at_the_branch() {
    golden("check_implicit_flow", &["check", "--transient", "corpus/implicit-flow.bl"], 1);
}

#[test]
fn skip_has_an_empty_trace() {
    golden("run_seq_skip", &["run-seq", "corpus/skip.bl"], 0);
}

#[test]
fn sequential_ex1_fails_on_the_second_read() {
    golden("run_seq_ex1", &["run-seq", "corpus/ex1.bl"], 0);
    golden("run_seq_ex1_json", &["run-seq", "--json", "corpus/ex1.bl"], 0);
}

#[test]
fn ex1_attack_schedule_reads_the_secret() {
    golden("run_spec_ex1_attack", &["run-spec", "--schedule=ex1-attack", "corpus/ex1.bl"], 0);
}

#[test]
fn in_order_schedule_matches_the_sequential_trace() {
    golden("run_spec_ex1_seq", &["run-spec", "--seq", "corpus/ex1.bl"], 0);
}

#[test]
fn infer_ex1_cuts_z() {
    golden("infer_ex1", &["infer", "corpus/ex1.bl"], 0);
    golden("infer_ex1_slh", &["infer", "--slh-only", "corpus/ex1.bl"], 0);
    golden("infer_ex1_dot", &["infer", "--dot", "corpus/ex1.bl"], 0);
}

#[test]
fn graph_ex1() {
    golden("graph_ex1", &["graph", "--dot", "corpus/ex1.bl"], 0);
}

#[test]
fn pointer_index_has_no_slh_cut() {
    golden("infer_ptr_index_slh", &["infer", "--slh-only", "corpus/ptr-index.bl"], 1);
    let (code, err) = stderr_of(&["repair", "--mode=slh", "corpus/ptr-index.bl"]);
    assert_eq!(code, Some(1));
    assert!(err.contains("--mode=hw"), "{err}");
}

#[test]
fn exhaustive_fuzzing_finds_the_ex1_leak() {
    golden("fuzz_ex1_exhaustive", &["fuzz-sct", "--schedules=exhaustive", "--pairs=1", "corpus/ex1.bl"], 1);
}

#[test]
fn random_fuzzing_passes_patched_ex1() {
    golden(
        "fuzz_ex1_patched",
        &["fuzz-sct", "--schedules=random:50", "--pairs=4", "--seed=9", "corpus/ex1-patched.bl"],
        0,
    );
}

#[test]
fn consistency_on_two_programs() {
    golden("consistency", &["consistency", "--schedules=20", "--seed=1", "corpus/ex1.bl", "corpus/spectre-v1.bl"], 0);
}

#[test]
fn corpus_listing() {
    golden("corpus_list", &["corpus", "list"], 0);
    golden("corpus_validate", &["corpus", "validate"], 0);
}

#[test]
fn usage_errors_exit_with_2() {
    for args in [
        &["frobnicate"][..],
        &["fuzz-sct", "--schedules=random:x", "corpus/ex1.bl"],
        &["run-spec", "--seq", "--random=3", "corpus/ex1.bl"],
        &["check", "no/such/file.bl"],
        &["corpus", "show", "no-such-program"],
    ] {
        let (code, err) = stderr_of(args);
        assert_eq!(code, Some(2), "{args:?}: {err}");
    }
}

#[test]
fn a_stuck_schedule_is_reported() {
    let dir = std::env::temp_dir().join(format!("tflow-golden-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let file = dir.join("bad.sched");
    fs::write(&file, "fetch\nexec 1\nexec 1\n").unwrap();
    let (code, err) = stderr_of(&["run-spec", &format!("--schedule={}", file.display()), "corpus/ex1.bl"]);
    assert_eq!(code, Some(1));
    assert!(err.contains("is stuck"), "{err}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn stored_values_are_sinks_only_under_v1_1() {
    golden("check_array_write_v1", &["check", "--transient", "corpus/array-write.bl"], 0);
    golden("check_array_write_v1_1", &["check", "--transient", "--mode=v1.1", "corpus/array-write.bl"], 1);
    golden("repair_array_write_v1_1", &["repair", "--v11", "corpus/array-write.bl"], 0);
}
