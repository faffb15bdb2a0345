use std::path::{Path, PathBuf};

use rowtag_cli::bundled;
use rowtag_cli::{run, EXIT_COUNTEREXAMPLE, EXIT_MISMATCH, EXIT_OK, EXIT_SECURITY, EXIT_USAGE};

fn workloads() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("workloads")
}

fn scratch(name: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join(name)
}

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = run(std::iter::once("rowtag").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn workload(name: &str) -> String {
    workloads().join(name).to_str().unwrap().to_string()
}

#[test]
fn shipped_workloads_are_current() {
    for b in bundled::all() {
        let on_disk = std::fs::read_to_string(workloads().join(b.file)).unwrap();
        assert_eq!(
            on_disk,
            b.text(),
            "{} is stale; run the regen-workloads example",
            b.file
        );
    }
}

#[test]
fn shipped_workloads_run() {
    for b in bundled::all() {
        let (code, out) = cli(&["run", &workload(b.file)]);
        if b.file == "small_mixed_b.toml" {
            assert_eq!(code, EXIT_SECURITY, "{out}");
            assert!(out.contains("fault: "), "{out}");
        } else {
            assert_eq!(code, EXIT_OK, "{}: {out}", b.file);
            assert!(out.starts_with("total_cycles: "));
            assert!(out.contains("expected: match"), "{out}");
        }
    }
}

#[test]
fn stats_flag_prints_every_counter() {
    let (code, out) = cli(&["run", &workload("small_a_tagged.toml"), "--stats"]);
    assert_eq!(code, EXIT_OK);
    for key in ["total_cycles:", "tag_registers_used:", "per_pe_equivalent_registers:"] {
        assert!(out.contains(key), "{out}");
    }
}

#[test]
fn wrong_expectation_exits_3() {
    let text = std::fs::read_to_string(workloads().join("small_a_tagged.toml")).unwrap();
    // C[0][0] is 20; claim 21 instead.
    let bad = text.replacen("0x0000001700000014", "0x0000001700000015", 1);
    assert_ne!(bad, text, "expected word not found");
    let path = scratch("mismatch.toml");
    std::fs::write(&path, bad).unwrap();
    let (code, out) = cli(&["run", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_MISMATCH, "{out}");
    assert!(out.contains("mismatch at "), "{out}");
}

#[test]
fn bad_input_exits_1() {
    let path = scratch("garbage.toml");
    std::fs::write(&path, "this is = = not toml").unwrap();
    assert_eq!(cli(&["run", path.to_str().unwrap()]).0, EXIT_USAGE);
    assert_eq!(cli(&["run", "/nonexistent/file.toml"]).0, EXIT_USAGE);
    assert_eq!(cli(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(
        cli(&["verify", "--template", "nope", "--seed", "1", "--trials", "1"]).0,
        EXIT_USAGE
    );
    assert_eq!(
        cli(&["verify", "--template", "matmul", "--seed", "1", "--trials", "0"]).0,
        EXIT_USAGE
    );
    let (code, out) = cli(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("verify"));
}

#[test]
fn trace_shows_the_tagged_row_leaving_the_array() {
    let out1 = scratch("trace1.txt");
    let out2 = scratch("trace2.txt");
    let file = workload("small_a_tagged.toml");
    assert_eq!(cli(&["trace", &file, "--out", out1.to_str().unwrap()]).0, EXIT_OK);
    assert_eq!(cli(&["run", &file, "--trace-out", out2.to_str().unwrap()]).0, EXIT_OK);
    let t1 = std::fs::read_to_string(&out1).unwrap();
    assert_eq!(t1, std::fs::read_to_string(&out2).unwrap());
    assert!(t1.lines().any(|l| l.contains("out r1:5")), "{t1}");
    assert!(t1.lines().any(|l| l.contains("out r0:0")), "{t1}");
}

#[test]
fn verify_reports_and_exit_codes() {
    let (code, out) = cli(&[
        "verify",
        "--template",
        "matmul",
        "--seed",
        "42",
        "--trials",
        "20",
        "--jobs",
        "2",
    ]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert_eq!(out.lines().count(), 21);
    assert!(out
        .lines()
        .last()
        .unwrap()
        .ends_with("0 counterexamples, 0 oracle mismatches"));
    let (again, out2) = cli(&["verify", "--template", "matmul", "--seed", "42", "--trials", "20"]);
    assert_eq!((again, out2), (code, out));

    let (code, out) = cli(&[
        "verify",
        "--template",
        "partial-write",
        "--seed",
        "42",
        "--trials",
        "200",
        "--mutant",
        "tag-join-zero",
    ]);
    assert_eq!(code, EXIT_COUNTEREXAMPLE, "{out}");
    assert!(out.contains(": FAIL "));
}

fn out_tags(trace: &str) -> Vec<String> {
    trace
        .lines()
        .filter_map(|l| l.split(" out ").nth(1))
        .map(|o| o.split(':').nth(1).unwrap().to_string())
        .collect()
}

#[test]
fn untagged_trace_queues_only_public_tags() {
    let text = std::fs::read_to_string(workloads().join("small_a_tagged.toml")).unwrap();
    let path = scratch("untagged.toml");
    std::fs::write(&path, text.replace("tag = 5", "tag = 0")).unwrap();
    let out = scratch("untagged.txt");
    let (code, msg) = cli(&["trace", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{msg}");
    let trace = std::fs::read_to_string(out).unwrap();
    for line in trace.lines() {
        let q = line.split("tagq[").nth(1).unwrap().split(']').next().unwrap();
        assert!(q.split(' ').all(|e| e == "." || e == "0"), "{line}");
    }
    assert_eq!(out_tags(&trace), ["0", "0"]);
}

#[test]
fn blinded_weights_tag_every_output_row() {
    let out = scratch("blinded_b.txt");
    assert_eq!(
        cli(&[
            "trace",
            &workload("small_b_tagged.toml"),
            "--out",
            out.to_str().unwrap()
        ])
        .0,
        EXIT_OK
    );
    assert_eq!(out_tags(&std::fs::read_to_string(out).unwrap()), ["4", "4"]);
}
