//! Schedule exploration: run a program under many interleavings and collect
//! the distinct outcomes. A deterministic semantics yields exactly one.

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};

use crate::hbgraph::SemId;
use crate::interp::{Config, ErrorCategory, Machine};
use crate::lang::{self, CoreProgram, Program, Stmt, StmtKind};
use crate::memory::{Memory, StoreId, TaskId};
use crate::par;
use crate::symval::{SymPool, Value};

pub const DEFAULT_STATE_LIMIT: usize = 10_000;
pub const DEFAULT_SEEDS: u64 = 64;

/// The task chosen at each step of one schedule.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScheduleTrace {
    pub steps: Vec<(u32, TaskId)>,
    pub seed: Option<u64>,
}

impl std::fmt::Display for ScheduleTrace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let Some(s) = self.seed {
            write!(f, "seed {s}: ")?;
        }
        let parts: Vec<String> = self.steps.iter().map(|(_, t)| t.to_string()).collect();
        f.write_str(&parts.join(" "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome {
    /// Fingerprint of the final memory, graph and statistics.
    Final(u64),
    Error(ErrorCategory),
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Final(h) => write!(f, "final state {h:016x}"),
            Outcome::Error(c) => write!(f, "error {}", c.name()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Witness {
    pub trace: ScheduleTrace,
    /// Human-readable description: serialized memory or the error message.
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct Exploration {
    pub outcomes: BTreeMap<Outcome, Witness>,
    /// Complete schedules: interleavings in exhaustive mode, runs in random mode.
    pub schedules: u64,
    /// Distinct states visited (exhaustive mode).
    pub states: usize,
    /// The state limit was hit before the search finished.
    pub truncated: bool,
}

impl Exploration {
    pub fn is_deterministic(&self) -> bool {
        self.outcomes.len() == 1
    }

    fn record(&mut self, o: Outcome, trace: &ScheduleTrace, detail: impl FnOnce() -> String) {
        self.schedules += 1;
        self.outcomes.entry(o).or_insert_with(|| Witness {
            trace: trace.clone(),
            detail: detail(),
        });
    }

    fn merge(&mut self, other: Exploration) {
        self.schedules += other.schedules;
        self.states += other.states;
        self.truncated |= other.truncated;
        for (k, v) in other.outcomes {
            self.outcomes.entry(k).or_insert(v);
        }
    }
}

fn store_key<'a>(mem: &'a Memory, prog: &'a CoreProgram, s: StoreId) -> (&'a TaskId, &'a str) {
    let st = mem.store(s);
    (&st.owner, prog.var(st.var).name.as_str())
}

fn hash_value(v: &Value, pool: &SymPool, h: &mut DefaultHasher) {
    match v {
        Value::Concrete(s) => (0u8, s).hash(h),
        Value::Sym(r) => (1u8, pool.structural_hash(*r)).hash(h),
        Value::Err => 2u8.hash(h),
    }
}

fn hash_memory(m: &Machine, pool: &SymPool, h: &mut DefaultHasher) {
    let prog = m.program();
    for s in m.mem.sorted_stores(prog) {
        store_key(&m.mem, prog, s).hash(h);
        m.mem.store(s).dead.hash(h);
        for (i, v) in m.mem.sorted_cells(s) {
            i.hash(h);
            hash_value(v, pool, h);
        }
    }
}

/// Graph fingerprint independent of node creation order: nodes are named by
/// (task, position in the task chain).
fn hash_graph(m: &Machine, h: &mut DefaultHasher) {
    let g = &m.graph;
    let prog = m.program();
    let name = |n: u32| {
        let node = g.node(n);
        (g.task(node.task).id.clone(), node.seq)
    };
    let mut order: Vec<u32> = (0..g.len() as u32).collect();
    order.sort_by_key(|&n| name(n));
    for n in order {
        let node = g.node(n);
        name(n).hash(h);
        (node.kind, node.line, node.merged, node.status, node.val).hash(h);
        match &node.sem {
            Some(SemId::Num(v)) => (0u8, v).hash(h),
            Some(SemId::Cell(s, i)) => (1u8, store_key(&m.mem, prog, *s), i).hash(h),
            None => 2u8.hash(h),
        }
        let mut preds: Vec<_> = node.preds.iter().map(|&(p, k)| (name(p), k)).collect();
        preds.sort();
        preds.hash(h);
        let mut acc: Vec<_> = node
            .accesses
            .iter()
            .map(|a| (store_key(&m.mem, prog, a.store), &a.index, a.write))
            .collect();
        acc.sort();
        acc.hash(h);
    }
}

fn state_fingerprint(m: &Machine, pool: &SymPool) -> u64 {
    let mut h = DefaultHasher::new();
    m.task_positions().hash(&mut h);
    hash_memory(m, pool, &mut h);
    hash_graph(m, &mut h);
    h.finish()
}

fn final_outcome(m: &Machine, pool: &SymPool) -> Outcome {
    let mut h = DefaultHasher::new();
    hash_memory(m, pool, &mut h);
    hash_graph(m, &mut h);
    let s = m.stats();
    (s.nb_s, s.nb_conc, s.nb_sync, s.nodes, s.edges).hash(&mut h);
    Outcome::Final(h.finish())
}

/// Depth-first enumeration of every interleaving, merging identical states.
/// Stops after `limit` distinct states and marks the result truncated.
/// `schedules` counts complete interleavings (paths through the state DAG).
pub fn explore_exhaustive(prog: &CoreProgram, cfg: &Config, limit: usize) -> Exploration {
    enum Child {
        State(u64),
        Terminal,
    }
    enum Frame<'p> {
        Enter(Box<Machine<'p>>, ScheduleTrace, u64),
        Exit(u64, Vec<Child>),
    }
    let mut pool = SymPool::new();
    let mut out = Exploration::default();
    let mut paths: FxHashMap<u64, u64> = FxHashMap::default();
    let mut visited: FxHashSet<u64> = FxHashSet::default();
    let start = Machine::new(prog, cfg.clone());
    let fp0 = state_fingerprint(&start, &pool);
    let mut stack = vec![Frame::Enter(Box::new(start), ScheduleTrace::default(), fp0)];
    while let Some(frame) = stack.pop() {
        let (m, trace, fp) = match frame {
            Frame::Exit(fp, children) => {
                let n = children.iter().fold(0u64, |acc, c| {
                    acc.saturating_add(match c {
                        Child::Terminal => 1,
                        Child::State(s) => paths.get(s).copied().unwrap_or(0),
                    })
                });
                paths.insert(fp, n);
                continue;
            }
            Frame::Enter(m, trace, fp) => (*m, trace, fp),
        };
        if !visited.insert(fp) {
            continue;
        }
        if visited.len() > limit {
            out.truncated = true;
            break;
        }
        let enabled = m.enabled();
        if enabled.is_empty() {
            let o = if m.is_finished() {
                final_outcome(&m, &pool)
            } else {
                Outcome::Error(ErrorCategory::Deadlock)
            };
            out.outcomes.entry(o).or_insert_with(|| Witness {
                trace: trace.clone(),
                detail: if m.is_finished() {
                    m.mem.serialize(prog, &pool)
                } else {
                    "no task can make progress".into()
                },
            });
            paths.insert(fp, 1);
            continue;
        }
        let mut children = Vec::new();
        let mut next_frames = Vec::new();
        for &t in &enabled {
            let mut next = m.clone();
            let mut tr = trace.clone();
            tr.steps
                .push((tr.steps.len() as u32, next.task_id(t).clone()));
            match next.step(t, &mut pool) {
                Ok(_) => {
                    let cfp = state_fingerprint(&next, &pool);
                    children.push(Child::State(cfp));
                    next_frames.push(Frame::Enter(Box::new(next), tr, cfp));
                }
                Err(e) => {
                    children.push(Child::Terminal);
                    out.outcomes
                        .entry(Outcome::Error(e.category))
                        .or_insert_with(|| Witness {
                            trace: tr,
                            detail: e.to_string(),
                        });
                }
            }
        }
        stack.push(Frame::Exit(fp, children));
        stack.extend(next_frames.into_iter().rev());
    }
    out.states = visited.len();
    out.schedules = paths.get(&fp0).copied().unwrap_or(0);
    out
}

fn run_seed(prog: &CoreProgram, cfg: &Config, seed: u64) -> Exploration {
    let mut pool = SymPool::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Machine::new(prog, cfg.clone());
    let mut trace = ScheduleTrace {
        steps: Vec::new(),
        seed: Some(seed),
    };
    let mut out = Exploration::default();
    loop {
        let enabled = m.enabled();
        if enabled.is_empty() {
            if m.is_finished() {
                out.record(final_outcome(&m, &pool), &trace, || {
                    m.mem.serialize(prog, &pool)
                });
            } else {
                out.record(Outcome::Error(ErrorCategory::Deadlock), &trace, || {
                    "no task can make progress".into()
                });
            }
            return out;
        }
        let t = enabled[rng.gen_range(0..enabled.len())];
        trace
            .steps
            .push((trace.steps.len() as u32, m.task_id(t).clone()));
        if let Err(e) = m.step(t, &mut pool) {
            out.record(Outcome::Error(e.category), &trace, || e.to_string());
            return out;
        }
    }
}

/// Runs `seeds` random schedules (seeds `0..seeds`), in parallel when enabled.
pub fn explore_random(prog: &CoreProgram, cfg: &Config, seeds: u64) -> Exploration {
    let runs = par::map((0..seeds).collect(), |s| run_seed(prog, cfg, s));
    let mut out = Exploration::default();
    for r in runs {
        out.merge(r);
    }
    out
}

pub struct Shrunk {
    pub program: Program,
    pub text: String,
    /// Two schedules reaching different outcomes on the reduced program.
    pub traces: Option<(ScheduleTrace, ScheduleTrace)>,
}

/// All statement positions, addressed by the path of indices from the root.
fn positions(body: &[Stmt], prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    for (k, s) in body.iter().enumerate() {
        prefix.push(k);
        out.push(prefix.clone());
        for sub in children(s) {
            prefix.push(sub.0);
            positions(sub.1, prefix, out);
            prefix.pop();
        }
        prefix.pop();
    }
}

fn children(s: &Stmt) -> Vec<(usize, &Vec<Stmt>)> {
    match &s.kind {
        StmtKind::Async(b)
        | StmtKind::Block(b)
        | StmtKind::While { body: b, .. }
        | StmtKind::For { body: b, .. } => {
            vec![(0, b)]
        }
        StmtKind::If {
            then_body,
            else_body,
            ..
        } => vec![(0, then_body), (1, else_body)],
        _ => vec![],
    }
}

fn children_mut(s: &mut Stmt, which: usize) -> &mut Vec<Stmt> {
    match (&mut s.kind, which) {
        (StmtKind::Async(b) | StmtKind::Block(b), 0) => b,
        (StmtKind::While { body, .. } | StmtKind::For { body, .. }, 0) => body,
        (StmtKind::If { then_body, .. }, 0) => then_body,
        (StmtKind::If { else_body, .. }, 1) => else_body,
        _ => unreachable!("no such child body"),
    }
}

fn remove_at(body: &mut Vec<Stmt>, path: &[usize]) {
    if path.len() == 1 {
        body.remove(path[0]);
        return;
    }
    let s = &mut body[path[0]];
    remove_at(children_mut(s, path[1]), &path[2..]);
}

/// Top-level statements of a program as one body (functions are kept as-is).
fn top_body(p: &Program) -> (Vec<Stmt>, Vec<lang::ast::Item>) {
    let mut stmts = Vec::new();
    let mut funcs = Vec::new();
    for item in &p.items {
        match item {
            lang::ast::Item::Stmt(s) => stmts.push(s.clone()),
            f => funcs.push(f.clone()),
        }
    }
    (stmts, funcs)
}

fn rebuild(stmts: Vec<Stmt>, funcs: &[lang::ast::Item]) -> Program {
    let mut items = funcs.to_vec();
    items.extend(stmts.into_iter().map(lang::ast::Item::Stmt));
    Program { items }
}

/// Exhaustive exploration of the reduced program diverges.
pub fn diverges(p: &Program, cfg: &Config, limit: usize) -> Option<(ScheduleTrace, ScheduleTrace)> {
    let prog = lang::elaborate(p).ok()?;
    let e = explore_exhaustive(&prog, cfg, limit);
    if e.outcomes.len() < 2 {
        return None;
    }
    let mut w = e.outcomes.into_values();
    Some((w.next()?.trace, w.next()?.trace))
}

/// Greedily deletes statements (outermost first, then nested) while
/// `keep(candidate)` still holds. Returns the input unchanged if `keep`
/// fails on it.
pub fn shrink_with(p: &Program, mut keep: impl FnMut(&Program) -> bool) -> Program {
    if !keep(p) {
        return p.clone();
    }
    let (mut stmts, funcs) = top_body(p);
    loop {
        let mut all = Vec::new();
        positions(&stmts, &mut Vec::new(), &mut all);
        let mut progressed = false;
        for path in all {
            let mut cand = stmts.clone();
            remove_at(&mut cand, &path);
            let prog = rebuild(cand.clone(), &funcs);
            if keep(&prog) {
                stmts = cand;
                progressed = true;
                break;
            }
        }
        if !progressed {
            return rebuild(stmts, &funcs);
        }
    }
}

/// Minimizes a program whose schedules diverge, keeping the divergence.
pub fn shrink(p: &Program, cfg: &Config, limit: usize) -> Shrunk {
    let program = shrink_with(p, |c| diverges(c, cfg, limit).is_some());
    let traces = diverges(&program, cfg, limit);
    Shrunk {
        text: lang::pretty::program(&program),
        program,
        traces,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::compile_str;

    #[test]
    fn sequential_program_has_one_schedule() {
        let prog = compile_str("int A[]; A[0] = 1; A[1] = A[0];").unwrap();
        let e = explore_exhaustive(&prog, &Config::default(), DEFAULT_STATE_LIMIT);
        assert!(e.is_deterministic());
        assert_eq!(e.schedules, 1);
    }

    #[test]
    fn racy_program_is_race_in_every_schedule() {
        let prog = compile_str("int A[]; async { A[0] = 1; } async { A[0] = 2; }").unwrap();
        let e = explore_exhaustive(&prog, &Config::default(), DEFAULT_STATE_LIMIT);
        assert_eq!(
            e.outcomes.keys().collect::<Vec<_>>(),
            vec![&Outcome::Error(ErrorCategory::Race)]
        );
        assert!(e.schedules > 1);
    }

    #[test]
    fn random_outcomes_are_a_subset_of_exhaustive() {
        let src = "int A[]; semaphore s[]; async { A[0] = 1; set(s[0], 1); } async { wait(s[0], 1); A[0] = A[0] + 1; }";
        let prog = compile_str(src).unwrap();
        let all = explore_exhaustive(&prog, &Config::default(), DEFAULT_STATE_LIMIT);
        let rnd = explore_random(&prog, &Config::default(), 16);
        assert!(all.is_deterministic());
        assert!(rnd.outcomes.keys().all(|k| all.outcomes.contains_key(k)));
    }

    #[test]
    fn shrink_is_identity_without_divergence() {
        let p = lang::parse_str("int A[]; A[0] = 1;").unwrap();
        let s = shrink(&p, &Config::default(), 100);
        assert_eq!(s.program, p);
        assert!(s.traces.is_none());
    }
}
