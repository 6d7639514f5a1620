use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn corpus(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../corpus")
        .join(rel)
        .display()
        .to_string()
}

fn pirv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pirv"))
        .args(args)
        .env_remove("PIRV_STEP_BUDGET")
        .output()
        .expect("pirv runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

/// A scratch directory unique to one test.
fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("pirv-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn check_exit_codes() {
    assert_eq!(code(&pirv(&["check", &corpus("paired_tasks.pir")])), 0);
    assert_eq!(code(&pirv(&["check", &corpus("errors/zoo1_race.pir")])), 2);
    assert_eq!(
        code(&pirv(&["check", &corpus("errors/deadlock_circular.pir")])),
        2
    );
    assert_eq!(code(&pirv(&["check", "/no/such/file.pir"])), 1);

    let bad = scratch("syntax").join("bad.pir");
    std::fs::write(&bad, "int A[1];\nA[0] = ;\n").unwrap();
    let o = pirv(&["check", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(
        String::from_utf8_lossy(&o.stderr).contains('2'),
        "syntax errors carry a line number"
    );

    assert_eq!(code(&pirv(&["frobnicate"])), 64);
    assert_eq!(code(&pirv(&["check"])), 64);
    assert_eq!(
        code(&pirv(&[
            "fuzz",
            &corpus("paired_tasks.pir"),
            "--mode",
            "sideways"
        ])),
        64
    );
}

#[test]
fn check_json_reports_the_race() {
    let o = pirv(&["check", &corpus("errors/zoo1_race.pir"), "--format", "json"]);
    let v = json(&o);
    assert_eq!(v["verdict"], "error");
    assert_eq!(v["error"]["category"], "race");
    let mut lines: Vec<u64> = v["error"]["lines"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l.as_u64().unwrap())
        .collect();
    lines.sort();
    assert_eq!(lines, [5, 7]);
    let again: Value = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
    assert_eq!(v, again);
}

#[test]
fn step_budget_from_the_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_pirv"))
        .args(["check", &corpus("kernels/matmul.pir"), "--format", "json"])
        .env("PIRV_STEP_BUDGET", "100")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert_eq!(json(&o)["error"]["category"], "budget-exceeded");
}

#[test]
fn equiv_verdicts_and_exit_codes() {
    let eq = |a: &str, b: &str, extra: &[&str]| {
        let (a, b) = (corpus(a), corpus(b));
        let mut args = vec!["equiv", a.as_str(), b.as_str()];
        args.extend_from_slice(extra);
        code(&pirv(&args))
    };
    assert_eq!(eq("kernels/matmul.pir", "kernels/matmul_tiled.pir", &[]), 0);
    assert_eq!(eq("kernels/matmul.pir", "kernels/matmul_bug.pir", &[]), 3);
    assert_eq!(
        eq(
            "kernels/elementwise_ab.pir",
            "kernels/elementwise_ba.pir",
            &[]
        ),
        3
    );
    assert_eq!(
        eq(
            "kernels/elementwise_ab.pir",
            "kernels/elementwise_ba.pir",
            &["--ac"]
        ),
        0
    );
    assert_eq!(eq("kernels/matmul.pir", "errors/zoo1_race.pir", &[]), 2);
    assert_eq!(eq("kernels/matmul.pir", "/no/such/file.pir", &[]), 1);

    let rules = scratch("rules").join("bad.rules");
    std::fs::write(&rules, "+($x, $y) =>\n").unwrap();
    let a = corpus("kernels/matmul.pir");
    let o = pirv(&["equiv", &a, &a, "--rules", rules.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

/// JSON output with the wall-clock fields removed.
fn untimed(mut v: Value) -> Value {
    let obj = v.as_object_mut().unwrap();
    obj.retain(|k, _| !k.starts_with("t_"));
    v
}

#[test]
fn equiv_output_is_reproducible() {
    let (a, b) = (corpus("kernels/2mm.pir"), corpus("kernels/2mm_bug.pir"));
    let run = || untimed(json(&pirv(&["equiv", &a, &b, "--format", "json"])));
    let (x, y) = (run(), run());
    assert_eq!(x, y);
    assert_eq!(x["report"]["verdict"], "mismatch");
    assert!(x["report"]["first"]["var"].is_string());
}

fn assert_dot(text: &str) {
    let t = text.trim();
    assert!(t.starts_with("digraph"), "{t}");
    assert!(t.ends_with('}'));
    assert_eq!(t.matches('{').count(), t.matches('}').count());
    assert!(t.contains("->"));
}

#[test]
fn dot_outputs() {
    let dir = scratch("dot");
    let diff = dir.join("diff.dot");
    let o = pirv(&[
        "dot",
        &corpus("kernels/matmul.pir"),
        &corpus("kernels/matmul_bug.pir"),
        "-o",
        diff.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    assert_dot(&std::fs::read_to_string(&diff).unwrap());

    let hb = dir.join("hb.dot");
    let o = pirv(&[
        "check",
        &corpus("paired_tasks.pir"),
        "--hb-dot",
        hb.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_dot(&std::fs::read_to_string(&hb).unwrap());
}

#[test]
fn fuzz_reports_outcomes() {
    let o = pirv(&["fuzz", &corpus("paired_tasks.pir")]);
    assert_eq!(code(&o), 0);
    assert!(
        stdout(&o).starts_with("1 distinct outcome across"),
        "{}",
        stdout(&o)
    );

    let o = pirv(&[
        "fuzz",
        &corpus("concurrency/fork_join.pir"),
        "--mode",
        "random",
        "--seeds",
        "8",
        "--format",
        "json",
    ]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    assert_eq!(v["outcomes"], 1);
    assert_eq!(v["schedules"], 8);
}

#[test]
fn injected_fault_is_shrunk_to_a_small_reproducer() {
    let dir = scratch("shrink");
    let src = dir.join("div.pir");
    std::fs::write(
        &src,
        "int X[1], Y[4];\nsemaphore s[1];\nY[0] = 1;\nY[1] = Y[0] + 1;\nasync { X[0] = 1; set(s[0], 1); }\nY[2] = Y[1] * 3;\nwait(s[0], 1);\nX[0] = 2;\nY[3] = X[0] + Y[2];\n",
    )
    .unwrap();
    let report = dir.join("report.txt");
    assert_eq!(code(&pirv(&["fuzz", src.to_str().unwrap()])), 0);
    let o = pirv(&[
        "fuzz",
        src.to_str().unwrap(),
        "--inject-fault",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    let text = std::fs::read_to_string(&report).unwrap();
    let reduced = text
        .split("reduced program:\n")
        .nth(1)
        .expect("report has a reduced program");
    let program: Vec<&str> = reduced
        .lines()
        .take_while(|l| !l.starts_with("schedule "))
        .collect();
    assert!(!program.is_empty() && program.len() <= 10, "{reduced}");
    assert!(reduced.contains("schedule 1:") && reduced.contains("schedule 2:"));
}

#[test]
fn stats_for_a_sequential_kernel() {
    let o = pirv(&[
        "stats",
        &corpus("kernels/matmul.pir"),
        &corpus("paired_tasks.pir"),
        "--format",
        "json",
    ]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["hb_rat"].as_f64(), Some(0.0));
    assert_eq!(rows[0]["nb_conc"], 0);
    assert!(rows[1]["hb_rat"].as_f64().unwrap() > 0.0);
}

#[test]
fn batch_over_directories() {
    let o = pirv(&["batch", &corpus("concurrency")]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = pirv(&["batch", &corpus("errors")]);
    assert_eq!(code(&o), 2);
    let o = pirv(&["batch", &corpus(""), "--format", "json"]);
    assert_eq!(code(&o), 2);
    let n = corpus_count(Path::new(&corpus("")));
    assert_eq!(json(&o).as_array().map(|a| a.len()), Some(n));
}

fn corpus_count(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            if p.is_dir() {
                corpus_count(&p)
            } else {
                usize::from(p.extension().is_some_and(|x| x == "pir"))
            }
        })
        .sum()
}
