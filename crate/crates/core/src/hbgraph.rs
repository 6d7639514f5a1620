//! Happens-before graph over statement instances.
//!
//! Every task's nodes form a chain, so reachability is answered with a sparse
//! per-node "chain clock": for each task, the highest sequence number among
//! the node's ancestors. `hb(a, b)` holds iff `clock(b)[task(a)] >= seq(a)`.
//! Sync edges only ever point into a pending wait/acquire, which has no
//! descendants yet, so clocks never need to be propagated.

use std::fmt::Write as _;

use rustc_hash::FxHashMap;
use smallvec::SmallVec;

use crate::memory::{Index, StoreId, TaskId};

pub type NodeId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Plain,
    Async,
    Set,
    Wait,
    Acquire,
    Release,
    TaskEnd,
}

impl NodeKind {
    pub fn is_sem(self) -> bool {
        matches!(
            self,
            NodeKind::Set | NodeKind::Wait | NodeKind::Acquire | NodeKind::Release
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Plain => "stmt",
            NodeKind::Async => "async",
            NodeKind::Set => "set",
            NodeKind::Wait => "wait",
            NodeKind::Acquire => "acquire",
            NodeKind::Release => "release",
            NodeKind::TaskEnd => "end",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Program,
    Spawn,
    Sync,
}

/// Semaphore identity: a cell of a semaphore array or a plain number.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SemId {
    Num(i32),
    Cell(StoreId, Index),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Access {
    pub store: StoreId,
    pub index: Index,
    pub write: bool,
    pub line: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Status {
    Done,
    /// A wait/acquire that has not found its matching set/releases yet.
    Pending,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub kind: NodeKind,
    pub task: u32,
    /// Position in the task's chain, starting at 1.
    pub seq: u32,
    pub line: u32,
    pub stmt: u32,
    /// Statement instances folded into this node.
    pub merged: u32,
    pub sem: Option<SemId>,
    pub val: i32,
    pub status: Status,
    pub preds: SmallVec<[(NodeId, EdgeKind); 2]>,
    pub succs: SmallVec<[NodeId; 2]>,
    pub accesses: Vec<Access>,
    clock: Vec<(u32, u32)>,
}

#[derive(Clone, Debug)]
pub struct TaskInfo {
    pub id: TaskId,
    /// Most recent node of the task; for a fresh child, the spawning async node.
    pub last: Option<NodeId>,
    pub next_seq: u32,
    /// Number of children spawned so far (fresh id component source).
    pub spawned: u32,
}

/// Two conflicting accesses to the same cell that may happen in parallel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conflict {
    pub store: StoreId,
    pub index: Index,
    pub earlier: (NodeId, u32, bool),
    pub later: (NodeId, u32, bool),
}

#[derive(Clone, Debug, Default)]
struct CellLog {
    last_write: Option<(NodeId, u32)>,
    reads: SmallVec<[(NodeId, u32); 2]>,
}

#[derive(Clone, Debug, Default)]
struct SemLog {
    sets: Vec<NodeId>,
    waits: Vec<NodeId>,
    releases: Vec<NodeId>,
    acquires: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WaitOutcome {
    Match(NodeId),
    Blocked,
    /// Item 2: more than one set could correspond to the wait.
    Ambiguous(Vec<NodeId>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AcquireOutcome {
    Match(Vec<NodeId>),
    Blocked { sum: i64 },
    Violation { item: u8, witnesses: Vec<NodeId> },
}

/// A graph_valid violation: the item number (1..=5) and witness nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub item: u8,
    pub nodes: Vec<NodeId>,
}

#[derive(Clone, Debug, Default)]
pub struct HbGraph {
    nodes: Vec<Node>,
    tasks: Vec<TaskInfo>,
    task_index: FxHashMap<TaskId, u32>,
    cells: FxHashMap<(StoreId, Index), CellLog>,
    sems: FxHashMap<SemId, SemLog>,
    edge_count: usize,
    pub merge_enabled: bool,
}

fn merge_clock(into: &mut Vec<(u32, u32)>, other: &[(u32, u32)]) {
    if other.is_empty() {
        return;
    }
    if into.is_empty() {
        into.extend_from_slice(other);
        return;
    }
    let mut out = Vec::with_capacity(into.len().max(other.len()));
    let (mut i, mut j) = (0, 0);
    while i < into.len() && j < other.len() {
        let (a, b) = (into[i], other[j]);
        match a.0.cmp(&b.0) {
            std::cmp::Ordering::Less => {
                out.push(a);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a.0, a.1.max(b.1)));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&into[i..]);
    out.extend_from_slice(&other[j..]);
    *into = out;
}

fn clock_get(clock: &[(u32, u32)], task: u32) -> u32 {
    match clock.binary_search_by_key(&task, |e| e.0) {
        Ok(k) => clock[k].1,
        Err(_) => 0,
    }
}

impl HbGraph {
    pub fn new(merge_enabled: bool) -> Self {
        HbGraph {
            merge_enabled,
            ..Default::default()
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, n: NodeId) -> &Node {
        &self.nodes[n as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn tasks(&self) -> &[TaskInfo] {
        &self.tasks
    }

    pub fn task(&self, t: u32) -> &TaskInfo {
        &self.tasks[t as usize]
    }

    pub fn task_of(&self, n: NodeId) -> &TaskId {
        &self.tasks[self.nodes[n as usize].task as usize].id
    }

    pub fn task_idx(&self, id: &TaskId) -> Option<u32> {
        self.task_index.get(id).copied()
    }

    /// Registers a task. Children pass the async node that spawned them.
    pub fn add_task(&mut self, id: TaskId, spawned_by: Option<NodeId>) -> u32 {
        let t = self.tasks.len() as u32;
        self.task_index.insert(id.clone(), t);
        self.tasks.push(TaskInfo {
            id,
            last: spawned_by,
            next_seq: 1,
            spawned: 0,
        });
        t
    }

    /// Fresh id component for a child of `t`.
    pub fn fresh_child(&mut self, t: u32) -> TaskId {
        let info = &mut self.tasks[t as usize];
        info.spawned += 1;
        info.id.child(info.spawned)
    }

    /// Happens-before: a path from `a` to `b` exists.
    pub fn hb(&self, a: NodeId, b: NodeId) -> bool {
        if a == b {
            return false;
        }
        let na = &self.nodes[a as usize];
        clock_get(&self.nodes[b as usize].clock, na.task) >= na.seq
    }

    pub fn may_happen_in_parallel(&self, a: NodeId, b: NodeId) -> bool {
        a != b && !self.hb(a, b) && !self.hb(b, a)
    }

    /// True iff every successor of `n` belongs to a different task.
    pub fn task_leaf(&self, n: NodeId) -> bool {
        let t = self.nodes[n as usize].task;
        self.nodes[n as usize]
            .succs
            .iter()
            .all(|&m| self.nodes[m as usize].task != t)
    }

    fn push_edge(&mut self, from: NodeId, to: NodeId, kind: EdgeKind) {
        self.nodes[to as usize].preds.push((from, kind));
        self.nodes[from as usize].succs.push(to);
        self.edge_count += 1;
    }

    /// Appends a node to task `t`, chained after the task's last node.
    pub fn add_node(&mut self, t: u32, kind: NodeKind, line: u32, stmt: u32) -> NodeId {
        let id = self.nodes.len() as NodeId;
        let info = &mut self.tasks[t as usize];
        let seq = info.next_seq;
        info.next_seq += 1;
        let prev = info.last.replace(id);
        let mut clock = Vec::new();
        if let Some(p) = prev {
            clock = self.nodes[p as usize].clock.clone();
        }
        merge_clock(&mut clock, &[(t, seq)]);
        let status = if matches!(kind, NodeKind::Wait | NodeKind::Acquire) {
            Status::Pending
        } else {
            Status::Done
        };
        self.nodes.push(Node {
            kind,
            task: t,
            seq,
            line,
            stmt,
            merged: 1,
            sem: None,
            val: 0,
            status,
            preds: SmallVec::new(),
            succs: SmallVec::new(),
            accesses: Vec::new(),
            clock,
        });
        if let Some(p) = prev {
            let ek = if self.nodes[p as usize].task == t {
                EdgeKind::Program
            } else {
                EdgeKind::Spawn
            };
            self.push_edge(p, id, ek);
        }
        id
    }

    /// A synchronization-free statement: folded into the task's tail node when
    /// that is itself a plain node of the same task.
    pub fn add_plain(&mut self, t: u32, line: u32, stmt: u32) -> NodeId {
        if self.merge_enabled {
            if let Some(last) = self.tasks[t as usize].last {
                let n = &mut self.nodes[last as usize];
                if n.task == t && n.kind == NodeKind::Plain && n.succs.is_empty() {
                    n.merged += 1;
                    return last;
                }
            }
        }
        self.add_node(t, NodeKind::Plain, line, stmt)
    }

    pub fn add_sem_node(
        &mut self,
        t: u32,
        kind: NodeKind,
        sem: SemId,
        val: i32,
        line: u32,
        stmt: u32,
    ) -> NodeId {
        let n = self.add_node(t, kind, line, stmt);
        self.nodes[n as usize].sem = Some(sem.clone());
        self.nodes[n as usize].val = val;
        let log = self.sems.entry(sem).or_default();
        match kind {
            NodeKind::Set => log.sets.push(n),
            NodeKind::Wait => log.waits.push(n),
            NodeKind::Release => log.releases.push(n),
            NodeKind::Acquire => log.acquires.push(n),
            _ => unreachable!("not a semaphore node"),
        }
        n
    }

    /// Adds sync edges into a pending node and marks it done.
    pub fn complete_match(&mut self, n: NodeId, from: &[NodeId]) {
        debug_assert_eq!(self.nodes[n as usize].status, Status::Pending);
        debug_assert!(self.nodes[n as usize].succs.is_empty());
        let mut clock = std::mem::take(&mut self.nodes[n as usize].clock);
        for &f in from {
            merge_clock(&mut clock, &self.nodes[f as usize].clock);
            self.push_edge(f, n, EdgeKind::Sync);
        }
        let node = &mut self.nodes[n as usize];
        node.clock = clock;
        node.status = Status::Done;
    }

    /// Records an access and checks it against the cell's access log.
    pub fn record_access(
        &mut self,
        n: NodeId,
        store: StoreId,
        index: Index,
        write: bool,
        line: u32,
    ) -> Result<(), Conflict> {
        self.nodes[n as usize].accesses.push(Access {
            store,
            index: index.clone(),
            write,
            line,
        });
        self.check_access(n, store, index, write, line)
    }

    /// Registers the accesses of a node that was pending when they were made.
    pub fn commit_deferred_accesses(&mut self, n: NodeId) -> Result<(), Conflict> {
        let accesses = self.nodes[n as usize].accesses.clone();
        for a in accesses {
            self.check_access(n, a.store, a.index, a.write, a.line)?;
        }
        Ok(())
    }

    /// Adds an access to the node without checking (checked at match time).
    pub fn defer_access(&mut self, n: NodeId, store: StoreId, index: Index, line: u32) {
        self.nodes[n as usize].accesses.push(Access {
            store,
            index,
            write: false,
            line,
        });
    }

    fn check_access(
        &mut self,
        n: NodeId,
        store: StoreId,
        index: Index,
        write: bool,
        line: u32,
    ) -> Result<(), Conflict> {
        let key = (store, index);
        let log = self.cells.entry(key.clone()).or_default();
        let conflict = |m: NodeId, mline: u32, mwrite: bool, g: &HbGraph| -> Option<Conflict> {
            (m != n && !g.hb(m, n)).then(|| Conflict {
                store: key.0,
                index: key.1.clone(),
                earlier: (m, mline, mwrite),
                later: (n, line, write),
            })
        };
        let log = log.clone();
        if let Some((w, wl)) = log.last_write {
            if let Some(c) = conflict(w, wl, true, self) {
                return Err(c);
            }
        }
        if write {
            for &(r, rl) in &log.reads {
                if let Some(c) = conflict(r, rl, false, self) {
                    return Err(c);
                }
            }
            let entry = self.cells.get_mut(&key).unwrap();
            entry.last_write = Some((n, line));
            entry.reads.clear();
        } else {
            let entry = self.cells.get_mut(&key).unwrap();
            if !entry.reads.iter().any(|&(r, _)| r == n) {
                entry.reads.push((n, line));
            }
        }
        Ok(())
    }

    /// Appends the terminal node of a task.
    pub fn end_task(&mut self, t: u32, line: u32) -> NodeId {
        self.add_node(t, NodeKind::TaskEnd, line, u32::MAX)
    }

    fn sem_log(&self, sem: &SemId) -> Option<&SemLog> {
        self.sems.get(sem)
    }

    pub fn sem_ids(&self) -> impl Iterator<Item = &SemId> {
        self.sems.keys()
    }

    /// `s` is a set on `w`'s semaphore that happens before or in parallel with `w`.
    fn set_visible(&self, w: NodeId, s: NodeId) -> bool {
        !self.hb(w, s)
    }

    /// Literal correspondence: same semaphore and value, visible, and most recent.
    pub fn corr_set(&self, w: NodeId, s: NodeId) -> bool {
        let (wn, sn) = (&self.nodes[w as usize], &self.nodes[s as usize]);
        if wn.kind != NodeKind::Wait
            || sn.kind != NodeKind::Set
            || wn.sem != sn.sem
            || wn.val != sn.val
        {
            return false;
        }
        if !self.set_visible(w, s) {
            return false;
        }
        let Some(log) = wn.sem.as_ref().and_then(|k| self.sem_log(k)) else {
            return false;
        };
        !log.sets
            .iter()
            .any(|&s2| s2 != s && self.hb(s, s2) && self.set_visible(w, s2))
    }

    /// `r` corresponds to acquire `a`: same semaphore, visible, no acquire in between.
    pub fn corr_rel(&self, a: NodeId, r: NodeId) -> bool {
        let (an, rn) = (&self.nodes[a as usize], &self.nodes[r as usize]);
        if an.kind != NodeKind::Acquire || rn.kind != NodeKind::Release || an.sem != rn.sem {
            return false;
        }
        if self.hb(a, r) {
            return false;
        }
        let Some(log) = an.sem.as_ref().and_then(|k| self.sem_log(k)) else {
            return false;
        };
        !log.acquires
            .iter()
            .any(|&a2| a2 != a && self.hb(r, a2) && self.hb(a2, a))
    }

    /// Sets on `w`'s semaphore ordered before `w` ignoring its own sync edges.
    fn before_base(&self, w: NodeId, s: NodeId) -> bool {
        let wn = &self.nodes[w as usize];
        wn.preds
            .iter()
            .filter(|(_, k)| *k != EdgeKind::Sync)
            .any(|&(p, _)| p == s || self.hb(s, p))
    }

    /// Decides what a wait would do now. Pure; the wait must be pending.
    ///
    /// Beyond the literal unique-correspondence rule, a match is rejected when
    /// another schedule could have matched a different set: a second parallel
    /// set with the same value, or (for a parallel match) an earlier set with
    /// the wait's value that would have matched before the parallel one arrived.
    pub fn analyze_wait(&self, w: NodeId) -> WaitOutcome {
        let wn = &self.nodes[w as usize];
        let Some(log) = wn.sem.as_ref().and_then(|k| self.sem_log(k)) else {
            return WaitOutcome::Blocked;
        };
        let cands: Vec<NodeId> = log
            .sets
            .iter()
            .copied()
            .filter(|&s| self.corr_set(w, s))
            .collect();
        match cands.len() {
            0 => WaitOutcome::Blocked,
            1 => {
                let m = cands[0];
                match self.match_conflicts(w, m, log) {
                    Some(other) => WaitOutcome::Ambiguous(vec![m, other]),
                    None => WaitOutcome::Match(m),
                }
            }
            _ => WaitOutcome::Ambiguous(cands),
        }
    }

    fn match_conflicts(&self, w: NodeId, m: NodeId, log: &SemLog) -> Option<NodeId> {
        let wn = &self.nodes[w as usize];
        let parallel = |s: NodeId| !self.before_base(w, s) && !self.hb(w, s);
        if let Some(&s) = log
            .sets
            .iter()
            .find(|&&s| s != m && parallel(s) && self.nodes[s as usize].val == wn.val)
        {
            return Some(s);
        }
        if parallel(m) {
            let before: Vec<NodeId> = log
                .sets
                .iter()
                .copied()
                .filter(|&s| self.before_base(w, s))
                .collect();
            let maximal = |b: NodeId| !before.iter().any(|&b2| b2 != b && self.hb(b, b2));
            if let Some(&b) = before
                .iter()
                .find(|&&b| b != m && self.nodes[b as usize].val == wn.val && maximal(b))
            {
                return Some(b);
            }
        }
        None
    }

    /// Item-2 check when a new set `s` executes: matched waits that `s` could
    /// also have satisfied, or whose set it supersedes in parallel; and pending
    /// waits that become ambiguous.
    pub fn check_new_set(&self, s: NodeId) -> Option<Violation> {
        let sn = &self.nodes[s as usize];
        let log = self.sem_log(sn.sem.as_ref()?)?;
        for &w in &log.waits {
            let wn = &self.nodes[w as usize];
            match wn.status {
                Status::Done => {
                    if self.hb(w, s) || self.hb(s, w) {
                        continue;
                    }
                    let m = wn
                        .preds
                        .iter()
                        .find(|(_, k)| *k == EdgeKind::Sync)
                        .map(|&(p, _)| p)
                        .expect("matched wait has a sync edge");
                    if sn.val == wn.val || self.hb(m, s) {
                        return Some(Violation {
                            item: 2,
                            nodes: vec![w, m, s],
                        });
                    }
                }
                Status::Pending => {
                    if let WaitOutcome::Ambiguous(c) = self.analyze_wait(w) {
                        let mut nodes = vec![w];
                        nodes.extend(c);
                        return Some(Violation { item: 2, nodes });
                    }
                }
            }
        }
        None
    }

    /// Decides what an acquire would do now. Pure; the acquire must be pending.
    pub fn analyze_acquire(&self, a: NodeId) -> AcquireOutcome {
        let an = &self.nodes[a as usize];
        let Some(log) = an.sem.as_ref().and_then(|k| self.sem_log(k)) else {
            return AcquireOutcome::Blocked { sum: 0 };
        };
        let rels: Vec<NodeId> = log
            .releases
            .iter()
            .copied()
            .filter(|&r| self.corr_rel(a, r))
            .collect();
        for &r in &rels {
            if let Some(&a2) = log
                .acquires
                .iter()
                .find(|&&a2| a2 != a && self.corr_rel(a2, r))
            {
                return AcquireOutcome::Violation {
                    item: 3,
                    witnesses: vec![r, a2, a],
                };
            }
        }
        if let Some(&a2) = log
            .acquires
            .iter()
            .find(|&&a2| self.may_happen_in_parallel(a, a2))
        {
            return AcquireOutcome::Violation {
                item: 4,
                witnesses: vec![a2, a],
            };
        }
        let sum: i64 = rels
            .iter()
            .map(|&r| self.nodes[r as usize].val as i64)
            .sum();
        match sum.cmp(&(an.val as i64)) {
            std::cmp::Ordering::Greater => {
                let mut witnesses = vec![a];
                witnesses.extend(rels);
                AcquireOutcome::Violation { item: 5, witnesses }
            }
            std::cmp::Ordering::Equal => AcquireOutcome::Match(rels),
            std::cmp::Ordering::Less => AcquireOutcome::Blocked { sum },
        }
    }

    /// Items 3 and 5 when a new release `r` executes, plus any pending acquire
    /// that becomes invalid.
    pub fn check_new_release(&self, r: NodeId) -> Option<Violation> {
        let rn = &self.nodes[r as usize];
        let log = self.sem_log(rn.sem.as_ref()?)?;
        let corr: Vec<NodeId> = log
            .acquires
            .iter()
            .copied()
            .filter(|&a| self.corr_rel(a, r))
            .collect();
        if corr.len() >= 2 {
            let mut nodes = vec![r];
            nodes.extend(corr);
            return Some(Violation { item: 3, nodes });
        }
        for &a in &corr {
            match self.nodes[a as usize].status {
                Status::Done => {
                    let sum: i64 = log
                        .releases
                        .iter()
                        .filter(|&&r2| self.corr_rel(a, r2))
                        .map(|&r2| self.nodes[r2 as usize].val as i64)
                        .sum();
                    if sum > self.nodes[a as usize].val as i64 {
                        return Some(Violation {
                            item: 5,
                            nodes: vec![a, r],
                        });
                    }
                }
                Status::Pending => {
                    if let AcquireOutcome::Violation { item, witnesses } = self.analyze_acquire(a) {
                        return Some(Violation {
                            item,
                            nodes: witnesses,
                        });
                    }
                }
            }
        }
        None
    }

    /// Item 4 when a new acquire executes.
    pub fn check_new_acquire(&self, a: NodeId) -> Option<Violation> {
        match self.analyze_acquire(a) {
            AcquireOutcome::Violation { item, witnesses } => Some(Violation {
                item,
                nodes: witnesses,
            }),
            _ => None,
        }
    }

    /// Graphviz rendering; sync edges are blue, spawn edges dashed.
    pub fn to_dot(&self, label: &dyn Fn(&Node) -> String) -> String {
        let mut out = String::from("digraph hb {\n  node [shape=box, fontname=\"monospace\"];\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let color = if n.kind.is_sem() { ", color=blue" } else { "" };
            let _ = writeln!(
                out,
                "  n{i} [label=\"{}\"{color}];",
                label(n).replace('"', "\\\"")
            );
        }
        for (i, n) in self.nodes.iter().enumerate() {
            for &(p, k) in &n.preds {
                let style = match k {
                    EdgeKind::Program => "",
                    EdgeKind::Spawn => " [style=dashed]",
                    EdgeKind::Sync => " [color=blue]",
                };
                let _ = writeln!(out, "  n{p} -> n{i}{style};");
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Reachability computed from scratch by depth-first search.
/// Used as the oracle for [`HbGraph::hb`] and by [`graph_valid_full`].
pub struct DfsReach {
    words: usize,
    bits: Vec<u64>,
}

impl DfsReach {
    pub fn new(g: &HbGraph) -> Self {
        let n = g.len();
        let words = n.div_ceil(64).max(1);
        let mut bits = vec![0u64; n * words];
        let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, node) in g.nodes().iter().enumerate() {
            for &(p, _) in &node.preds {
                succs[p as usize].push(i);
            }
        }
        for start in 0..n {
            let mut stack: Vec<usize> = succs[start].clone();
            let row = start * words;
            while let Some(v) = stack.pop() {
                let (w, b) = (v / 64, v % 64);
                if bits[row + w] & (1 << b) != 0 {
                    continue;
                }
                bits[row + w] |= 1 << b;
                stack.extend(succs[v].iter().copied());
            }
        }
        DfsReach { words, bits }
    }

    pub fn reaches(&self, a: NodeId, b: NodeId) -> bool {
        let (w, bit) = (b as usize / 64, b as usize % 64);
        self.bits[a as usize * self.words + w] & (1 << bit) != 0
    }

    pub fn parallel(&self, a: NodeId, b: NodeId) -> bool {
        a != b && !self.reaches(a, b) && !self.reaches(b, a)
    }
}

/// Declarative check of all five validity items over the whole graph,
/// independent of the incremental bookkeeping. Returns the lowest violated item.
///
/// Accesses of pending waits/acquires are ignored (they take effect at match
/// time), and item 2 uses the same strengthened rule as [`HbGraph::analyze_wait`].
pub fn graph_valid_full(g: &HbGraph) -> Result<(), Violation> {
    let r = DfsReach::new(g);
    let nodes = g.nodes();
    let mut found: Vec<Violation> = Vec::new();

    // item 1
    let mut by_cell: FxHashMap<(StoreId, &Index), Vec<(NodeId, bool)>> = FxHashMap::default();
    for (i, n) in nodes.iter().enumerate() {
        if n.status == Status::Pending {
            continue;
        }
        for a in &n.accesses {
            let accs = by_cell.entry((a.store, &a.index)).or_default();
            // one entry per node is enough: same-node accesses never race
            match accs.last_mut() {
                Some((last, w)) if *last == i as NodeId => *w |= a.write,
                _ => accs.push((i as NodeId, a.write)),
            }
        }
    }
    let mut cells: Vec<_> = by_cell.into_iter().collect();
    cells.sort_by(|a, b| a.0.cmp(&b.0));
    'cells: for (_, accs) in &cells {
        for (x, &(a, wa)) in accs.iter().enumerate() {
            for &(b, wb) in &accs[x + 1..] {
                if (wa || wb) && r.parallel(a, b) {
                    found.push(Violation {
                        item: 1,
                        nodes: vec![a.min(b), a.max(b)],
                    });
                    break 'cells;
                }
            }
        }
    }

    let mut by_sem: FxHashMap<&SemId, Vec<NodeId>> = FxHashMap::default();
    for (i, n) in nodes.iter().enumerate() {
        if let Some(s) = &n.sem {
            by_sem.entry(s).or_default().push(i as NodeId);
        }
    }
    let of = |v: &[NodeId], k: NodeKind| -> Vec<NodeId> {
        v.iter()
            .copied()
            .filter(|&n| nodes[n as usize].kind == k)
            .collect()
    };
    let before_base = |w: NodeId, s: NodeId| {
        nodes[w as usize]
            .preds
            .iter()
            .filter(|(_, k)| *k != EdgeKind::Sync)
            .any(|&(p, _)| p == s || r.reaches(s, p))
    };
    let mut sems: Vec<_> = by_sem.into_iter().collect();
    sems.sort_by(|a, b| a.0.cmp(b.0));
    for (_, sem_nodes) in &sems {
        let sets = of(sem_nodes, NodeKind::Set);
        let waits = of(sem_nodes, NodeKind::Wait);
        let rels = of(sem_nodes, NodeKind::Release);
        let acqs = of(sem_nodes, NodeKind::Acquire);
        let val = |n: NodeId| nodes[n as usize].val;
        let visible = |w: NodeId, s: NodeId| !r.reaches(w, s);
        let corr_set = |w: NodeId, s: NodeId| {
            val(w) == val(s)
                && visible(w, s)
                && !sets
                    .iter()
                    .any(|&s2| s2 != s && r.reaches(s, s2) && visible(w, s2))
        };
        let corr_rel = |a: NodeId, rl: NodeId| {
            !r.reaches(a, rl)
                && !acqs
                    .iter()
                    .any(|&a2| a2 != a && r.reaches(rl, a2) && r.reaches(a2, a))
        };

        // item 2
        for &w in &waits {
            let c: Vec<NodeId> = sets.iter().copied().filter(|&s| corr_set(w, s)).collect();
            if c.len() >= 2 {
                found.push(Violation {
                    item: 2,
                    nodes: vec![w, c[0], c[1]],
                });
                break;
            }
            let m = match nodes[w as usize].status {
                Status::Done => nodes[w as usize]
                    .preds
                    .iter()
                    .find(|(_, k)| *k == EdgeKind::Sync)
                    .map(|&(p, _)| p),
                Status::Pending => c.first().copied(),
            };
            let Some(m) = m else { continue };
            let parallel = |s: NodeId| !before_base(w, s) && !r.reaches(w, s);
            let bad = sets
                .iter()
                .copied()
                .find(|&s| s != m && parallel(s) && (val(s) == val(w) || r.reaches(m, s)));
            let bad = bad.or_else(|| {
                if !parallel(m) {
                    return None;
                }
                let before: Vec<NodeId> = sets
                    .iter()
                    .copied()
                    .filter(|&s| before_base(w, s))
                    .collect();
                before.iter().copied().find(|&b| {
                    b != m
                        && val(b) == val(w)
                        && !before.iter().any(|&b2| b2 != b && r.reaches(b, b2))
                })
            });
            if let Some(s) = bad {
                found.push(Violation {
                    item: 2,
                    nodes: vec![w, m, s],
                });
                break;
            }
        }

        // item 3
        'rel: for &rl in &rels {
            let c: Vec<NodeId> = acqs.iter().copied().filter(|&a| corr_rel(a, rl)).collect();
            if c.len() >= 2 {
                found.push(Violation {
                    item: 3,
                    nodes: vec![rl, c[0], c[1]],
                });
                break 'rel;
            }
        }

        // item 4
        'acq: for (x, &a) in acqs.iter().enumerate() {
            for &b in &acqs[x + 1..] {
                if r.parallel(a, b) {
                    found.push(Violation {
                        item: 4,
                        nodes: vec![a, b],
                    });
                    break 'acq;
                }
            }
        }

        // item 5
        for &a in &acqs {
            let sum: i64 = rels
                .iter()
                .filter(|&&rl| corr_rel(a, rl))
                .map(|&rl| val(rl) as i64)
                .sum();
            if sum > val(a) as i64 {
                found.push(Violation {
                    item: 5,
                    nodes: vec![a],
                });
                break;
            }
        }
    }
    match found.into_iter().min_by_key(|v| v.item) {
        Some(v) => Err(v),
        None => Ok(()),
    }
}
