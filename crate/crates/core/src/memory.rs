//! Task-scoped array memory: `(task, variable) -> (index -> value)`.

use std::fmt;

use rustc_hash::FxHashMap;
use smallvec::SmallVec;

use crate::lang::{CoreProgram, VarId};
use crate::symval::{SymPool, Value};

/// A concrete, non-negative multi-dimensional array index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Index(pub SmallVec<[u32; 3]>);

impl Index {
    pub fn new(parts: &[u32]) -> Self {
        Index(SmallVec::from_slice(parts))
    }

    pub fn scalar(i: u32) -> Self {
        Index::new(&[i])
    }
}

impl fmt::Display for Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.0 {
            write!(f, "[{i}]")?;
        }
        Ok(())
    }
}

/// Task identifier: the root is `[0]`, a child extends its parent by one component.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskId(pub SmallVec<[u32; 6]>);

impl TaskId {
    pub fn root() -> Self {
        TaskId(SmallVec::from_slice(&[0]))
    }

    pub fn child(&self, k: u32) -> Self {
        let mut p = self.0.clone();
        p.push(k);
        TaskId(p)
    }

    pub fn is_prefix_of(&self, other: &TaskId) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        f.write_str(&parts.join("."))
    }
}

pub type StoreId = u32;

#[derive(Clone, Debug)]
pub struct VarStore {
    pub owner: TaskId,
    pub var: VarId,
    pub cells: FxHashMap<Index, Value>,
    /// Set when the owning (non-root) task has finished.
    pub dead: bool,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("write to undeclared variable")]
pub struct Undeclared;

#[derive(Clone, Debug, Default)]
pub struct Memory {
    stores: Vec<VarStore>,
    by_var: Vec<SmallVec<[StoreId; 2]>>,
}

impl Memory {
    pub fn new(nvars: usize) -> Self {
        Memory {
            stores: Vec::new(),
            by_var: vec![SmallVec::new(); nvars],
        }
    }

    /// Declares `v` in task `id`; a no-op if that key already exists.
    pub fn mem_decl(&mut self, id: &TaskId, v: VarId) -> StoreId {
        if let Some(&s) = self.by_var[v as usize]
            .iter()
            .find(|&&s| self.stores[s as usize].owner == *id)
        {
            return s;
        }
        let sid = self.stores.len() as StoreId;
        self.stores.push(VarStore {
            owner: id.clone(),
            var: v,
            cells: FxHashMap::default(),
            dead: false,
        });
        self.by_var[v as usize].push(sid);
        sid
    }

    /// The store declared at the longest prefix of `id`, if any.
    pub fn get_var(&self, id: &TaskId, v: VarId) -> Option<StoreId> {
        self.by_var[v as usize]
            .iter()
            .copied()
            .filter(|&s| self.stores[s as usize].owner.is_prefix_of(id))
            .max_by_key(|&s| self.stores[s as usize].owner.depth())
    }

    pub fn var_eval(&self, id: &TaskId, v: VarId, i: &Index) -> Option<Value> {
        let s = self.get_var(id, v)?;
        self.stores[s as usize].cells.get(i).copied()
    }

    pub fn mem_update(
        &mut self,
        id: &TaskId,
        v: VarId,
        i: Index,
        e: Value,
    ) -> Result<StoreId, Undeclared> {
        let s = self.get_var(id, v).ok_or(Undeclared)?;
        self.stores[s as usize].cells.insert(i, e);
        Ok(s)
    }

    pub fn store(&self, s: StoreId) -> &VarStore {
        &self.stores[s as usize]
    }

    pub fn store_mut(&mut self, s: StoreId) -> &mut VarStore {
        &mut self.stores[s as usize]
    }

    pub fn stores(&self) -> &[VarStore] {
        &self.stores
    }

    /// Number of `(task, variable)` keys.
    pub fn domain_len(&self) -> usize {
        self.stores.len()
    }

    /// Marks the locals of a finished task as dead.
    pub fn retire_task(&mut self, id: &TaskId) {
        for s in self.stores.iter_mut().filter(|s| s.owner == *id) {
            s.dead = true;
        }
    }

    /// Store ids ordered by (task path, variable name).
    pub fn sorted_stores(&self, prog: &CoreProgram) -> Vec<StoreId> {
        let mut ids: Vec<StoreId> = (0..self.stores.len() as StoreId).collect();
        ids.sort_by(|&a, &b| {
            let (sa, sb) = (&self.stores[a as usize], &self.stores[b as usize]);
            sa.owner
                .cmp(&sb.owner)
                .then_with(|| prog.var(sa.var).name.cmp(&prog.var(sb.var).name))
        });
        ids
    }

    /// Cells of one store in index order.
    pub fn sorted_cells(&self, s: StoreId) -> Vec<(&Index, &Value)> {
        let mut cells: Vec<_> = self.stores[s as usize].cells.iter().collect();
        cells.sort_by(|a, b| a.0.cmp(b.0));
        cells
    }

    /// Deterministic text form, one cell per line, sorted by task path, name, index.
    pub fn serialize(&self, prog: &CoreProgram, pool: &SymPool) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for s in self.sorted_stores(prog) {
            let st = &self.stores[s as usize];
            let name = &prog.var(st.var).name;
            let dead = if st.dead { " (dead)" } else { "" };
            if st.cells.is_empty() {
                let _ = writeln!(out, "{} {name}{dead}", st.owner);
            }
            for (i, v) in self.sorted_cells(s) {
                let _ = writeln!(
                    out,
                    "{} {name}{i} = {}{dead}",
                    st.owner,
                    pool.render_value(*v, 4096)
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symval::Scalar;

    fn c(v: i32) -> Value {
        Value::Concrete(Scalar::Int(v))
    }

    #[test]
    fn decl_is_idempotent() {
        let mut m = Memory::new(1);
        let r = TaskId::root();
        let a = m.mem_decl(&r, 0);
        m.mem_update(&r, 0, Index::scalar(0), c(1)).unwrap();
        assert_eq!(m.mem_decl(&r, 0), a);
        assert_eq!(m.var_eval(&r, 0, &Index::scalar(0)), Some(c(1)));
        assert_eq!(m.domain_len(), 1);
    }

    #[test]
    fn innermost_prefix_wins() {
        let mut m = Memory::new(1);
        let root = TaskId::root();
        let mid = root.child(2);
        let leaf = mid.child(5);
        let outer = m.mem_decl(&root, 0);
        assert_eq!(m.get_var(&leaf, 0), Some(outer));
        let inner = m.mem_decl(&mid, 0);
        assert_eq!(m.get_var(&leaf, 0), Some(inner));
        assert_eq!(m.get_var(&root, 0), Some(outer));
        // a sibling does not see the other branch's declaration
        assert_eq!(m.get_var(&root.child(3), 0), Some(outer));
    }

    #[test]
    fn undeclared_is_bottom() {
        let mut m = Memory::new(1);
        let r = TaskId::root();
        assert_eq!(m.get_var(&r, 0), None);
        assert_eq!(m.var_eval(&r, 0, &Index::scalar(0)), None);
        assert_eq!(m.mem_update(&r, 0, Index::scalar(0), c(1)), Err(Undeclared));
    }

    #[test]
    fn child_update_lands_in_parent_store() {
        let mut m = Memory::new(1);
        let r = TaskId::root();
        let s = m.mem_decl(&r, 0);
        let got = m
            .mem_update(&r.child(1), 0, Index::scalar(5), c(9))
            .unwrap();
        assert_eq!(got, s);
        assert_eq!(m.var_eval(&r, 0, &Index::scalar(5)), Some(c(9)));
        assert_eq!(m.var_eval(&r, 0, &Index::scalar(4)), None);
    }
}
