//! Hybrid concrete/symbolic interpreter that builds the happens-before graph
//! while it runs and reports the first race or semaphore misuse.

use std::fmt;

use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::hbgraph::{
    graph_valid_full, AcquireOutcome, Conflict, HbGraph, NodeId, NodeKind, SemId, Violation,
    WaitOutcome,
};
use crate::lang::{CExpr, CStmt, CStmtKind, CoreProgram, SemArg, SemOp};
use crate::memory::{Memory, TaskId};
use crate::symval::{ErrCause, Eval, Read, Scalar, SymPool, Value};

pub const DEFAULT_STEP_BUDGET: u64 = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCategory {
    Race,
    Deadlock,
    SymbolicControlFlow,
    SymbolicIndex,
    SymbolicSemArg,
    DoubleSet,
    DoubleAcquireMatch,
    ParallelAcquires,
    OverRelease,
    SemKindConflict,
    UndeclaredWrite,
    ArithError,
    NegativeIndex,
    BudgetExceeded,
}

impl ErrorCategory {
    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::Race => "race",
            ErrorCategory::Deadlock => "deadlock",
            ErrorCategory::SymbolicControlFlow => "symbolic-control-flow",
            ErrorCategory::SymbolicIndex => "symbolic-index",
            ErrorCategory::SymbolicSemArg => "symbolic-sem-arg",
            ErrorCategory::DoubleSet => "double-set",
            ErrorCategory::DoubleAcquireMatch => "double-acquire-match",
            ErrorCategory::ParallelAcquires => "parallel-acquires",
            ErrorCategory::OverRelease => "over-release",
            ErrorCategory::SemKindConflict => "sem-kind-conflict",
            ErrorCategory::UndeclaredWrite => "undeclared-write",
            ErrorCategory::ArithError => "arith-error",
            ErrorCategory::NegativeIndex => "negative-index",
            ErrorCategory::BudgetExceeded => "budget-exceeded",
        }
    }

    /// The graph validity item this category reports, if any.
    pub fn item(self) -> Option<u8> {
        match self {
            ErrorCategory::Race => Some(1),
            ErrorCategory::DoubleSet => Some(2),
            ErrorCategory::DoubleAcquireMatch => Some(3),
            ErrorCategory::ParallelAcquires => Some(4),
            ErrorCategory::OverRelease => Some(5),
            _ => None,
        }
    }

    pub fn from_item(item: u8) -> ErrorCategory {
        match item {
            1 => ErrorCategory::Race,
            2 => ErrorCategory::DoubleSet,
            3 => ErrorCategory::DoubleAcquireMatch,
            4 => ErrorCategory::ParallelAcquires,
            5 => ErrorCategory::OverRelease,
            _ => panic!("no validity item {item}"),
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A verification failure: the program is not well-behaved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("{category} at line {line}: {message}")]
pub struct VerifError {
    pub category: ErrorCategory,
    pub line: u32,
    pub message: String,
    /// All source lines involved, in witness order.
    pub lines: Vec<u32>,
    /// Task paths involved, in witness order.
    pub tasks: Vec<String>,
}

/// Deliberately wrong behaviour, used to exercise the shrinker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// A wait whose set already happened gets no sync edge.
    SkipEdgeOnImmediateWait,
}

#[derive(Clone, Debug)]
pub struct Config {
    pub merge: bool,
    pub budget: u64,
    /// Re-check the whole graph declaratively after every step.
    pub paranoid: bool,
    pub trace_sem: bool,
    pub fault: Option<Fault>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            merge: true,
            budget: DEFAULT_STEP_BUDGET,
            paranoid: false,
            trace_sem: false,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Stats {
    /// Completed statement instances.
    pub nb_s: u64,
    /// Tasks spawned.
    pub nb_conc: u64,
    /// Semaphore operations executed.
    pub nb_sync: u64,
    pub nodes: u64,
    pub edges: u64,
    /// Async and semaphore nodes.
    pub concurrency_nodes: u64,
    /// `concurrency_nodes / nb_s`.
    pub hb_rat: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SemEvent {
    pub task: String,
    pub line: u32,
    pub op: &'static str,
    pub sem: String,
    pub val: i32,
    pub event: String,
}

#[derive(Clone, Copy, Debug)]
struct Frame<'p> {
    body: &'p [CStmt],
    pc: usize,
}

#[derive(Clone, Debug)]
struct TaskState<'p> {
    g: u32,
    frames: Vec<Frame<'p>>,
    /// Pending wait/acquire node.
    blocked: Option<NodeId>,
    done: bool,
    last_line: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Progress,
    Blocked,
    Finished,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SemKind {
    Binary,
    Counting,
}

/// Interpreter state. Cloning forks the execution (used by schedule exploration).
#[derive(Clone)]
pub struct Machine<'p> {
    prog: &'p CoreProgram,
    cfg: Config,
    pub mem: Memory,
    pub graph: HbGraph,
    tasks: Vec<TaskState<'p>>,
    stats: Stats,
    steps: u64,
    sem_kinds: FxHashMap<SemId, SemKind>,
    pub trace: Vec<SemEvent>,
}

/// Task id, (body id, pc) per frame, blocked, done.
pub type TaskPosition = (TaskId, Vec<(u32, usize)>, bool, bool);

/// Result of a complete run.
pub struct Execution<'p> {
    pub machine: Machine<'p>,
    pub error: Option<VerifError>,
}

impl<'p> Execution<'p> {
    pub fn stats(&self) -> Stats {
        self.machine.stats()
    }
}

/// Runs a program under the default scheduler.
pub fn execute<'p>(prog: &'p CoreProgram, cfg: Config, pool: &mut SymPool) -> Execution<'p> {
    let mut machine = Machine::new(prog, cfg);
    let error = machine.run(pool).err();
    Execution { machine, error }
}

fn cause_category(c: ErrCause) -> ErrorCategory {
    match c {
        ErrCause::SymbolicIndex => ErrorCategory::SymbolicIndex,
        ErrCause::NegativeIndex => ErrorCategory::NegativeIndex,
        ErrCause::Arith => ErrorCategory::ArithError,
    }
}

impl<'p> Machine<'p> {
    pub fn new(prog: &'p CoreProgram, cfg: Config) -> Self {
        let mut graph = HbGraph::new(cfg.merge);
        let root = graph.add_task(TaskId::root(), None);
        Machine {
            prog,
            mem: Memory::new(prog.vars.len()),
            graph,
            tasks: vec![TaskState {
                g: root,
                frames: vec![Frame {
                    body: &prog.root,
                    pc: 0,
                }],
                blocked: None,
                done: false,
                last_line: 0,
            }],
            stats: Stats::default(),
            steps: 0,
            sem_kinds: FxHashMap::default(),
            trace: Vec::new(),
            cfg,
        }
    }

    pub fn program(&self) -> &'p CoreProgram {
        self.prog
    }

    pub fn stats(&self) -> Stats {
        let mut s = self.stats.clone();
        s.nodes = self.graph.len() as u64;
        s.edges = self.graph.edge_count() as u64;
        s.concurrency_nodes = self
            .graph
            .nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Async || n.kind.is_sem())
            .count() as u64;
        s.hb_rat = if s.nb_s == 0 {
            0.0
        } else {
            s.concurrency_nodes as f64 / s.nb_s as f64
        };
        s
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_finished(&self) -> bool {
        self.tasks.iter().all(|t| t.done)
    }

    /// Tasks that can execute a statement now.
    pub fn enabled(&self) -> Vec<usize> {
        (0..self.tasks.len())
            .filter(|&t| !self.tasks[t].done && self.tasks[t].blocked.is_none())
            .collect()
    }

    pub fn task_id(&self, t: usize) -> &TaskId {
        &self.graph.task(self.tasks[t].g).id
    }

    /// Where every task stands; used for state fingerprints.
    pub fn task_positions(&self) -> Vec<TaskPosition> {
        self.tasks
            .iter()
            .map(|t| {
                let frames = t
                    .frames
                    .iter()
                    .map(|f| (f.body.first().map_or(u32::MAX, |s| s.id), f.pc))
                    .collect();
                (
                    self.graph.task(t.g).id.clone(),
                    frames,
                    t.blocked.is_some(),
                    t.done,
                )
            })
            .collect()
    }

    /// Runs the default schedule: each task runs until it blocks or ends,
    /// spawned children queue behind it, blocked tasks rejoin the queue once
    /// their wait/acquire has been matched.
    pub fn run(&mut self, pool: &mut SymPool) -> Result<(), VerifError> {
        let mut queue: std::collections::VecDeque<usize> = std::collections::VecDeque::from([0]);
        let mut parked: Vec<usize> = Vec::new();
        loop {
            let Some(t) = queue.pop_front() else {
                if self.is_finished() {
                    return Ok(());
                }
                return Err(self.deadlock_error());
            };
            loop {
                let before = self.tasks.len();
                let r = self.step(t, pool)?;
                queue.extend(before..self.tasks.len());
                if self.tasks.len() > before || matches!(r, Step::Progress) {
                    // matches made by this step may have released parked tasks
                    parked.retain(|&p| {
                        if self.tasks[p].blocked.is_none() {
                            queue.push_back(p);
                            false
                        } else {
                            true
                        }
                    });
                }
                match r {
                    Step::Progress => {}
                    Step::Blocked => {
                        parked.push(t);
                        break;
                    }
                    Step::Finished => break,
                }
            }
        }
    }

    fn deadlock_error(&self) -> VerifError {
        let mut lines = Vec::new();
        let mut tasks = Vec::new();
        let mut parts = Vec::new();
        for t in self.tasks.iter().filter(|t| !t.done) {
            let id = self.graph.task(t.g).id.to_string();
            match t.blocked {
                Some(n) => {
                    let node = self.graph.node(n);
                    parts.push(format!(
                        "task {id} blocked at line {} on {}({}, {})",
                        node.line,
                        node.kind.name(),
                        self.describe_sem(node.sem.as_ref().unwrap()),
                        node.val
                    ));
                    lines.push(node.line);
                }
                None => {
                    parts.push(format!("task {id} not runnable"));
                    lines.push(t.last_line);
                }
            }
            tasks.push(id);
        }
        VerifError {
            category: ErrorCategory::Deadlock,
            line: lines.first().copied().unwrap_or(0),
            message: format!("no task can make progress: {}", parts.join("; ")),
            lines,
            tasks,
        }
    }

    pub fn describe_sem(&self, s: &SemId) -> String {
        match s {
            SemId::Num(v) => format!("{v}"),
            SemId::Cell(store, idx) => {
                let st = self.mem.store(*store);
                format!("{}{idx}", self.prog.var(st.var).source_name)
            }
        }
    }

    fn error(&self, category: ErrorCategory, line: u32, message: String, t: usize) -> VerifError {
        VerifError {
            category,
            line,
            message,
            lines: vec![line],
            tasks: vec![self.task_id(t).to_string()],
        }
    }

    /// Executes one statement of task `t`.
    pub fn step(&mut self, t: usize, pool: &mut SymPool) -> Result<Step, VerifError> {
        let r = self.step_inner(t, pool);
        if self.cfg.paranoid {
            self.paranoid_check(&r);
        }
        r
    }

    fn paranoid_check(&self, r: &Result<Step, VerifError>) {
        let full = graph_valid_full(&self.graph).err().map(|v| v.item);
        let incremental = match r {
            Ok(_) => None,
            Err(e) => e.category.item(),
        };
        let relevant = match r {
            Err(e) => e.category.item().is_some(),
            Ok(_) => true,
        };
        if relevant && full != incremental {
            panic!(
                "paranoid check disagrees: incremental item {:?}, declarative item {:?}",
                incremental, full
            );
        }
    }

    fn step_inner(&mut self, t: usize, pool: &mut SymPool) -> Result<Step, VerifError> {
        if self.tasks[t].done {
            return Ok(Step::Finished);
        }
        if self.tasks[t].blocked.is_some() {
            return Ok(Step::Blocked);
        }
        self.steps += 1;
        if self.steps > self.cfg.budget {
            return Err(self.error(
                ErrorCategory::BudgetExceeded,
                self.tasks[t].last_line,
                format!("step budget of {} exhausted", self.cfg.budget),
                t,
            ));
        }
        let stmt = loop {
            let task = &mut self.tasks[t];
            let Some(frame) = task.frames.last_mut() else {
                self.finish_task(t);
                return Ok(Step::Finished);
            };
            if frame.pc < frame.body.len() {
                break &frame.body[frame.pc];
            }
            task.frames.pop();
        };
        self.tasks[t].last_line = stmt.line;
        self.exec(t, stmt, pool)
    }

    fn finish_task(&mut self, t: usize) {
        let task = &mut self.tasks[t];
        task.done = true;
        let g = task.g;
        let line = task.last_line;
        self.graph.end_task(g, line);
        if t != 0 {
            let id = self.graph.task(g).id.clone();
            self.mem.retire_task(&id);
        }
    }

    fn advance(&mut self, t: usize) {
        self.tasks[t].frames.last_mut().unwrap().pc += 1;
    }

    fn eval(
        &self,
        t: usize,
        line: u32,
        e: &CExpr,
        pool: &mut SymPool,
    ) -> (Value, Vec<Read>, Option<ErrCause>) {
        let id = self.task_id(t);
        let mut ev = Eval::new(self.prog, &self.mem, id, line);
        let v = ev.expr(e, pool);
        (v, ev.reads, ev.cause)
    }

    fn record_reads(
        &mut self,
        t: usize,
        node: NodeId,
        reads: Vec<Read>,
        line: u32,
    ) -> Result<(), VerifError> {
        for r in reads {
            if let Err(c) = self
                .graph
                .record_access(node, r.store, r.index, false, line)
            {
                return Err(self.race_error(c, t));
            }
        }
        Ok(())
    }

    fn race_error(&self, c: Conflict, _t: usize) -> VerifError {
        let st = self.mem.store(c.store);
        let cell = format!("{}{}", self.prog.var(st.var).source_name, c.index);
        let rw = |w: bool| if w { "write" } else { "read" };
        let (a, b) = (c.earlier, c.later);
        let (ta, tb) = (
            self.graph.task_of(a.0).to_string(),
            self.graph.task_of(b.0).to_string(),
        );
        VerifError {
            category: ErrorCategory::Race,
            line: b.1,
            message: format!(
                "data race on {cell}: {} at line {} (task {ta}) and {} at line {} (task {tb}) may happen in parallel",
                rw(a.2),
                a.1,
                rw(b.2),
                b.1
            ),
            lines: vec![a.1, b.1],
            tasks: vec![ta, tb],
        }
    }

    fn violation_error(&self, v: Violation) -> VerifError {
        let category = ErrorCategory::from_item(v.item);
        let lines: Vec<u32> = v.nodes.iter().map(|&n| self.graph.node(n).line).collect();
        let tasks: Vec<String> = v
            .nodes
            .iter()
            .map(|&n| self.graph.task_of(n).to_string())
            .collect();
        let sem = v
            .nodes
            .iter()
            .find_map(|&n| self.graph.node(n).sem.as_ref())
            .map(|s| self.describe_sem(s))
            .unwrap_or_default();
        let what = match v.item {
            2 => "a wait could correspond to more than one set",
            3 => "a release corresponds to more than one acquire",
            4 => "two acquires may happen in parallel",
            5 => "releases corresponding to an acquire exceed its value",
            _ => "invalid graph",
        };
        let wit: Vec<String> = v
            .nodes
            .iter()
            .map(|&n| {
                let node = self.graph.node(n);
                format!(
                    "{}@{} (task {})",
                    node.kind.name(),
                    node.line,
                    self.graph.task_of(n)
                )
            })
            .collect();
        VerifError {
            category,
            line: lines.last().copied().unwrap_or(0),
            message: format!("semaphore {sem}: {what}: {}", wit.join(", ")),
            lines,
            tasks,
        }
    }

    fn condition(
        &mut self,
        t: usize,
        stmt: &CStmt,
        cond: &CExpr,
        pool: &mut SymPool,
    ) -> Result<bool, VerifError> {
        let (v, reads, cause) = self.eval(t, stmt.line, cond, pool);
        let node = self.graph.add_plain(self.tasks[t].g, stmt.line, stmt.id);
        self.record_reads(t, node, reads, stmt.line)?;
        self.stats.nb_s += 1;
        match v {
            Value::Concrete(s) => Ok(!s.is_zero()),
            Value::Sym(r) => Err(self.error(
                ErrorCategory::SymbolicControlFlow,
                stmt.line,
                format!("branch condition is symbolic: {}", pool.render(r, 200)),
                t,
            )),
            Value::Err => {
                let c = cause.map_or(ErrorCategory::ArithError, cause_category);
                Err(self.error(
                    c,
                    stmt.line,
                    "branch condition evaluates to an error".into(),
                    t,
                ))
            }
        }
    }

    fn exec(&mut self, t: usize, stmt: &'p CStmt, pool: &mut SymPool) -> Result<Step, VerifError> {
        let g = self.tasks[t].g;
        match &stmt.kind {
            CStmtKind::Decl { var } => {
                self.graph.add_plain(g, stmt.line, stmt.id);
                let id = self.task_id(t).clone();
                self.mem.mem_decl(&id, *var);
                self.stats.nb_s += 1;
                self.advance(t);
            }
            CStmtKind::Assign { var, idx, value } => {
                let id = self.task_id(t).clone();
                let mut ev = Eval::new(self.prog, &self.mem, &id, stmt.line);
                let index = ev.index(idx, pool);
                let v = ev.expr(value, pool);
                let reads = ev.reads;
                let index = match index {
                    Ok(i) => i,
                    Err(c) => {
                        let name = &self.prog.var(*var).source_name;
                        return Err(self.error(
                            cause_category(c),
                            stmt.line,
                            format!("cannot compute the index of the write to {name}"),
                            t,
                        ));
                    }
                };
                let node = self.graph.add_plain(g, stmt.line, stmt.id);
                self.record_reads(t, node, reads, stmt.line)?;
                let store = match self.mem.mem_update(&id, *var, index.clone(), v) {
                    Ok(s) => s,
                    Err(_) => {
                        let name = &self.prog.var(*var).source_name;
                        return Err(self.error(
                            ErrorCategory::UndeclaredWrite,
                            stmt.line,
                            format!("write to {name}{index}, which is not declared in this scope"),
                            t,
                        ));
                    }
                };
                if let Err(c) = self
                    .graph
                    .record_access(node, store, index, true, stmt.line)
                {
                    return Err(self.race_error(c, t));
                }
                self.stats.nb_s += 1;
                self.advance(t);
            }
            CStmtKind::Async { body, captures } => {
                let node = self.graph.add_node(g, NodeKind::Async, stmt.line, stmt.id);
                let child_id = self.graph.fresh_child(g);
                let parent_id = self.task_id(t).clone();
                let mut reads = Vec::new();
                for &var in captures {
                    let Some(src) = self.mem.get_var(&parent_id, var) else {
                        continue;
                    };
                    let cells = self.mem.store(src).cells.clone();
                    for index in cells.keys() {
                        reads.push(Read {
                            store: src,
                            var,
                            index: index.clone(),
                        });
                    }
                    let dst = self.mem.mem_decl(&child_id, var);
                    self.mem.store_mut(dst).cells = cells;
                }
                self.record_reads(t, node, reads, stmt.line)?;
                let cg = self.graph.add_task(child_id, Some(node));
                self.tasks.push(TaskState {
                    g: cg,
                    frames: vec![Frame { body, pc: 0 }],
                    blocked: None,
                    done: false,
                    last_line: stmt.line,
                });
                self.stats.nb_conc += 1;
                self.stats.nb_s += 1;
                self.advance(t);
            }
            CStmtKind::Sem { op, sem, val } => return self.exec_sem(t, stmt, *op, sem, val, pool),
            CStmtKind::While { cond, body } => {
                if self.condition(t, stmt, cond, pool)? {
                    self.tasks[t].frames.push(Frame { body, pc: 0 });
                } else {
                    self.advance(t);
                }
            }
            CStmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                let taken = self.condition(t, stmt, cond, pool)?;
                self.advance(t);
                let body = if taken { then_body } else { else_body };
                if !body.is_empty() {
                    self.tasks[t].frames.push(Frame { body, pc: 0 });
                }
            }
        }
        Ok(Step::Progress)
    }

    fn sem_operand(
        &self,
        t: usize,
        line: u32,
        sem: &SemArg,
        val: &CExpr,
        pool: &mut SymPool,
    ) -> Result<(SemId, i32, Vec<Read>), VerifError> {
        let id = self.task_id(t).clone();
        let mut ev = Eval::new(self.prog, &self.mem, &id, line);
        let sid = match sem {
            SemArg::Cell { var, idx } => {
                let index = ev.index(idx, pool).map_err(|c| {
                    let cat = match c {
                        ErrCause::SymbolicIndex => ErrorCategory::SymbolicSemArg,
                        other => cause_category(other),
                    };
                    self.error(
                        cat,
                        line,
                        "semaphore index is not a concrete non-negative integer".into(),
                        t,
                    )
                })?;
                let Some(store) = self.mem.get_var(&id, *var) else {
                    let name = &self.prog.var(*var).source_name;
                    return Err(self.error(
                        ErrorCategory::UndeclaredWrite,
                        line,
                        format!("semaphore array {name} is not declared in this scope"),
                        t,
                    ));
                };
                SemId::Cell(store, index)
            }
            SemArg::Num(e) => match ev.expr(e, pool) {
                Value::Concrete(Scalar::Int(v)) => SemId::Num(v),
                Value::Err => {
                    let c = ev.cause.map_or(ErrorCategory::ArithError, cause_category);
                    return Err(self.error(
                        c,
                        line,
                        "semaphore operand evaluates to an error".into(),
                        t,
                    ));
                }
                _ => {
                    return Err(self.error(
                        ErrorCategory::SymbolicSemArg,
                        line,
                        "semaphore operand is symbolic".into(),
                        t,
                    ))
                }
            },
        };
        let v = match ev.expr(val, pool) {
            Value::Concrete(Scalar::Int(v)) => v,
            Value::Err => {
                let c = ev.cause.map_or(ErrorCategory::ArithError, cause_category);
                return Err(self.error(c, line, "semaphore value evaluates to an error".into(), t));
            }
            _ => {
                return Err(self.error(
                    ErrorCategory::SymbolicSemArg,
                    line,
                    "semaphore value is symbolic".into(),
                    t,
                ))
            }
        };
        Ok((sid, v, ev.reads))
    }

    fn exec_sem(
        &mut self,
        t: usize,
        stmt: &CStmt,
        op: SemOp,
        sem: &SemArg,
        val: &CExpr,
        pool: &mut SymPool,
    ) -> Result<Step, VerifError> {
        let line = stmt.line;
        let (sid, v, reads) = self.sem_operand(t, line, sem, val, pool)?;
        if matches!(op, SemOp::Acquire | SemOp::Release) && v < 0 {
            return Err(self.error(
                ErrorCategory::ArithError,
                line,
                format!("{op} with negative value {v}"),
                t,
            ));
        }
        let kind = if op.is_binary() {
            SemKind::Binary
        } else {
            SemKind::Counting
        };
        let prev = *self.sem_kinds.entry(sid.clone()).or_insert(kind);
        if prev != kind {
            return Err(self.error(
                ErrorCategory::SemKindConflict,
                line,
                format!(
                    "semaphore {} used with both set/wait and acquire/release",
                    self.describe_sem(&sid)
                ),
                t,
            ));
        }
        let nk = match op {
            SemOp::Set => NodeKind::Set,
            SemOp::Wait => NodeKind::Wait,
            SemOp::Acquire => NodeKind::Acquire,
            SemOp::Release => NodeKind::Release,
        };
        let g = self.tasks[t].g;
        let node = self
            .graph
            .add_sem_node(g, nk, sid.clone(), v, line, stmt.id);
        self.stats.nb_sync += 1;
        self.advance(t);
        match op {
            SemOp::Set | SemOp::Release => {
                self.record_reads(t, node, reads, line)?;
                let bad = if op == SemOp::Set {
                    self.graph.check_new_set(node)
                } else {
                    self.graph.check_new_release(node)
                };
                if let Some(v) = bad {
                    return Err(self.violation_error(v));
                }
                self.stats.nb_s += 1;
                self.trace_event(t, line, op, &sid, v, "done".into());
                self.wake(&sid)?;
                Ok(Step::Progress)
            }
            SemOp::Wait | SemOp::Acquire => {
                for r in reads {
                    self.graph.defer_access(node, r.store, r.index, line);
                }
                if op == SemOp::Acquire {
                    if let Some(v) = self.graph.check_new_acquire(node) {
                        return Err(self.violation_error(v));
                    }
                }
                self.tasks[t].blocked = Some(node);
                if self.try_match(t, node, true)? {
                    Ok(Step::Progress)
                } else {
                    self.trace_event(t, line, op, &sid, v, "blocked".into());
                    Ok(Step::Blocked)
                }
            }
        }
    }

    fn trace_event(
        &mut self,
        t: usize,
        line: u32,
        op: SemOp,
        sid: &SemId,
        val: i32,
        event: String,
    ) {
        if self.cfg.trace_sem {
            let e = SemEvent {
                task: self.task_id(t).to_string(),
                line,
                op: op.keyword(),
                sem: self.describe_sem(sid),
                val,
                event,
            };
            self.trace.push(e);
        }
    }

    /// Matches the pending node of task `t` if possible. Returns whether it matched.
    fn try_match(&mut self, t: usize, node: NodeId, immediate: bool) -> Result<bool, VerifError> {
        let n = self.graph.node(node);
        let (kind, line, val, sid) = (n.kind, n.line, n.val, n.sem.clone().unwrap());
        let from = match kind {
            NodeKind::Wait => match self.graph.analyze_wait(node) {
                WaitOutcome::Match(m) => vec![m],
                WaitOutcome::Blocked => return Ok(false),
                WaitOutcome::Ambiguous(c) => {
                    let mut nodes = vec![node];
                    nodes.extend(c);
                    return Err(self.violation_error(Violation { item: 2, nodes }));
                }
            },
            NodeKind::Acquire => match self.graph.analyze_acquire(node) {
                AcquireOutcome::Match(rels) => rels,
                AcquireOutcome::Blocked { .. } => return Ok(false),
                AcquireOutcome::Violation { item, witnesses } => {
                    return Err(self.violation_error(Violation {
                        item,
                        nodes: witnesses,
                    }))
                }
            },
            _ => unreachable!("only waits and acquires block"),
        };
        let skip = immediate
            && kind == NodeKind::Wait
            && self.cfg.fault == Some(Fault::SkipEdgeOnImmediateWait);
        self.graph
            .complete_match(node, if skip { &[] } else { &from });
        self.tasks[t].blocked = None;
        self.stats.nb_s += 1;
        let op = if kind == NodeKind::Wait {
            SemOp::Wait
        } else {
            SemOp::Acquire
        };
        let lines: Vec<String> = from
            .iter()
            .map(|&m| self.graph.node(m).line.to_string())
            .collect();
        self.trace_event(
            t,
            line,
            op,
            &sid,
            val,
            format!("matched line {}", lines.join(",")),
        );
        if let Err(c) = self.graph.commit_deferred_accesses(node) {
            return Err(self.race_error(c, t));
        }
        Ok(true)
    }

    /// After a set/release, completes every pending wait/acquire it enables.
    fn wake(&mut self, sid: &SemId) -> Result<(), VerifError> {
        for t in 0..self.tasks.len() {
            let Some(node) = self.tasks[t].blocked else {
                continue;
            };
            if self.graph.node(node).sem.as_ref() == Some(sid) {
                self.try_match(t, node, false)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::compile_str;

    fn run(src: &str) -> (Option<VerifError>, Stats) {
        let prog = compile_str(src).unwrap();
        let mut pool = SymPool::new();
        let ex = execute(
            &prog,
            Config {
                paranoid: true,
                ..Config::default()
            },
            &mut pool,
        );
        let stats = ex.stats();
        (ex.error, stats)
    }

    fn category(src: &str) -> Option<ErrorCategory> {
        run(src).0.map(|e| e.category)
    }

    #[test]
    fn sequential_program_has_no_concurrency_nodes() {
        let (err, s) = run("int A[]; A[0] = 1; A[1] = A[0] + 2;");
        assert!(err.is_none());
        assert_eq!(s.nb_s, 3);
        assert_eq!(s.nodes, 2); // one macro node plus the end node
        assert_eq!(s.hb_rat, 0.0);
    }

    #[test]
    fn unsynchronized_writes_race() {
        let e = run("int A[]; async { A[0] = 1; } A[0] = 2;").0.unwrap();
        assert_eq!(e.category, ErrorCategory::Race);
        assert_eq!(e.lines, vec![1, 1]);
    }

    #[test]
    fn set_wait_orders_accesses() {
        let src =
            "int A[]; semaphore s[];\nasync { A[0] = 1; set(s[0], 1); }\nwait(s[0], 1);\nA[0] = 2;";
        assert_eq!(category(src), None);
    }

    #[test]
    fn wait_without_set_deadlocks() {
        let e = run("semaphore s[];\nwait(s[0], 1);").0.unwrap();
        assert_eq!(e.category, ErrorCategory::Deadlock);
        assert_eq!(e.line, 2);
    }

    #[test]
    fn symbolic_branch_is_rejected() {
        assert_eq!(
            category("int A[]; int x[]; if (x[0]) { A[0] = 1; }"),
            Some(ErrorCategory::SymbolicControlFlow)
        );
        assert_eq!(
            category("int A[]; int x[]; A[x[0]] = 1;"),
            Some(ErrorCategory::SymbolicIndex)
        );
        assert_eq!(
            category("int A[]; A[0 - 1] = 1;"),
            Some(ErrorCategory::NegativeIndex)
        );
    }

    #[test]
    fn counting_semaphore_handoff() {
        let src = "int A[]; semaphore s[];\nasync { A[0] = 1; release(s[0], 2); }\nacquire(s[0], 2);\nA[0] = 3;";
        assert_eq!(category(src), None);
        let over = "semaphore s[]; release(s[0], 1); release(s[0], 2); acquire(s[0], 2);";
        assert_eq!(category(over), Some(ErrorCategory::OverRelease));
    }

    #[test]
    fn kind_conflict() {
        assert_eq!(
            category("semaphore s[]; set(s[0], 1); release(s[0], 1);"),
            Some(ErrorCategory::SemKindConflict)
        );
    }

    #[test]
    fn budget_is_enforced() {
        let prog = compile_str("int i[]; i[0] = 0; while (1) { i[0] = i[0] + 1; }").unwrap();
        let mut pool = SymPool::new();
        let cfg = Config {
            budget: 1000,
            ..Config::default()
        };
        let e = execute(&prog, cfg, &mut pool).error.unwrap();
        assert_eq!(e.category, ErrorCategory::BudgetExceeded);
    }

    #[test]
    fn captured_counter_is_a_snapshot() {
        let src = "int A[]; int i[]; semaphore s[];
i[0] = 0;
while (i[0] < 3) {
  async { A[i[0]] = i[0]; set(s[i[0]], 1); }
  i[0] = i[0] + 1;
}
i[0] = 0;
while (i[0] < 3) { wait(s[i[0]], 1); i[0] = i[0] + 1; }
";
        let prog = compile_str(src).unwrap();
        let mut pool = SymPool::new();
        let ex = execute(&prog, Config::default(), &mut pool);
        assert!(ex.error.is_none(), "{:?}", ex.error);
        let a = prog.var_by_name("A").unwrap();
        let root = TaskId::root();
        for k in 0..3 {
            let got = ex
                .machine
                .mem
                .var_eval(&root, a, &crate::memory::Index::scalar(k));
            assert_eq!(got, Some(Value::int(k as i32)));
        }
        assert_eq!(ex.stats().nb_conc, 3);
    }
}
