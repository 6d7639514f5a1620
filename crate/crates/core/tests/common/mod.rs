//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use pirv::interp::{self, Config, Execution};
use pirv::lang::{self, CoreProgram, Stmt, StmtKind};
use pirv::memory::{Index, TaskId};
use pirv::symval::{Scalar, SymPool, Value};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn corpus_text(rel: &str) -> String {
    let p = corpus_dir().join(rel);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

pub fn compile(text: &str) -> CoreProgram {
    lang::compile_str(text).unwrap_or_else(|e| panic!("compile error: {e}\n{text}"))
}

/// Sorted `.pir` files under `corpus/<sub>`.
pub fn corpus_files(sub: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(corpus_dir().join(sub))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "pir"))
        .collect();
    v.sort();
    v
}

pub fn run<'p>(prog: &'p CoreProgram, cfg: Config, pool: &mut SymPool) -> Execution<'p> {
    interp::execute(prog, cfg, pool)
}

/// Final value of a root-owned cell.
pub fn cell(ex: &Execution, name: &str, idx: &[u32]) -> Option<Value> {
    let prog = ex.machine.program();
    let v = prog.var_by_name(name)?;
    ex.machine
        .mem
        .var_eval(&TaskId::root(), v, &Index::new(idx))
}

pub fn int_cell(ex: &Execution, name: &str, idx: &[u32]) -> i32 {
    match cell(ex, name, idx) {
        Some(Value::Concrete(Scalar::Int(v))) => v,
        other => panic!("{name}{idx:?} is not a concrete int: {other:?}"),
    }
}

/// Inserts `inits` before the last non-blank line (the kernel call).
pub fn with_inputs(text: &str, inits: &str) -> String {
    let lines: Vec<&str> = text.lines().collect();
    let last = lines.iter().rposition(|l| !l.trim().is_empty()).unwrap();
    let mut out = lines[..last].join("\n");
    out.push('\n');
    out.push_str(inits);
    out.push('\n');
    out.push_str(&lines[last..].join("\n"));
    out.push('\n');
    out
}

/// Surface statements, nested bodies and function bodies included.
pub fn count_statements(p: &lang::Program) -> usize {
    fn walk(s: &[Stmt]) -> usize {
        s.iter()
            .map(|s| {
                1 + match &s.kind {
                    StmtKind::Async(b) | StmtKind::Block(b) => walk(b),
                    StmtKind::While { body, .. } | StmtKind::For { body, .. } => walk(body),
                    StmtKind::If {
                        then_body,
                        else_body,
                        ..
                    } => walk(then_body) + walk(else_body),
                    _ => 0,
                }
            })
            .sum()
    }
    let top: Vec<Stmt> = p.statements().cloned().collect();
    walk(&top) + p.functions().map(|f| walk(&f.body)).sum::<usize>()
}
