//! Elaborated program form: the statement kinds of the formal grammar plus `If`.
//!
//! Names are resolved to [`VarId`]s; block-scoped and inlined names get a
//! unique spelling containing a `.`, which marks them private (never part of
//! the equivalence comparison set).

use super::ast::{BinOp, ElemKind, SemOp, UnOp};

pub type VarId = u32;

#[derive(Clone, Debug, PartialEq)]
pub struct VarInfo {
    /// Unique spelling; contains `.` for private names.
    pub name: String,
    /// Surface name before renaming.
    pub source_name: String,
    pub kind: ElemKind,
    /// Declared at the top level of the program (or implicitly there).
    pub global: bool,
    /// No declaration of this name is visible where it is used.
    pub unresolved: bool,
    /// Optional documentation dimensions from the declaration.
    pub dims: Vec<Option<u32>>,
}

impl VarInfo {
    pub fn is_private(&self) -> bool {
        self.name.contains('.')
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CExpr {
    Int(i32),
    Float(f64),
    Load { var: VarId, idx: Vec<CExpr> },
    Unary(UnOp, Box<CExpr>),
    Binary(BinOp, Box<CExpr>, Box<CExpr>),
    Ternary(Box<CExpr>, Box<CExpr>, Box<CExpr>),
}

impl CExpr {
    /// Calls `f` on every `Load` in evaluation order (subscripts before the load itself).
    pub fn for_each_load(&self, f: &mut impl FnMut(VarId, &[CExpr])) {
        match self {
            CExpr::Int(_) | CExpr::Float(_) => {}
            CExpr::Load { var, idx } => {
                for e in idx {
                    e.for_each_load(f);
                }
                f(*var, idx);
            }
            CExpr::Unary(_, a) => a.for_each_load(f),
            CExpr::Binary(_, a, b) => {
                a.for_each_load(f);
                b.for_each_load(f);
            }
            CExpr::Ternary(c, a, b) => {
                c.for_each_load(f);
                a.for_each_load(f);
                b.for_each_load(f);
            }
        }
    }
}

/// Semaphore operand: either a cell of a semaphore array (identity is the
/// cell itself) or an integer expression naming the semaphore numerically.
#[derive(Clone, Debug, PartialEq)]
pub enum SemArg {
    Cell { var: VarId, idx: Vec<CExpr> },
    Num(CExpr),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CStmt {
    pub kind: CStmtKind,
    pub line: u32,
    /// Unique within the program, assigned in pre-order.
    pub id: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CStmtKind {
    Decl {
        var: VarId,
    },
    Assign {
        var: VarId,
        idx: Vec<CExpr>,
        value: CExpr,
    },
    Async {
        body: Vec<CStmt>,
        /// Variables the child reads but never writes and the spawning task
        /// writes; the child gets a private snapshot of them at spawn time.
        captures: Vec<VarId>,
    },
    Sem {
        op: SemOp,
        sem: SemArg,
        val: CExpr,
    },
    While {
        cond: CExpr,
        body: Vec<CStmt>,
    },
    If {
        cond: CExpr,
        then_body: Vec<CStmt>,
        else_body: Vec<CStmt>,
    },
}

#[derive(Clone, Debug, Default)]
pub struct CoreProgram {
    pub root: Vec<CStmt>,
    pub vars: Vec<VarInfo>,
    /// Number of statements (one past the largest `CStmt::id`).
    pub stmt_count: u32,
}

impl CoreProgram {
    pub fn var(&self, id: VarId) -> &VarInfo {
        &self.vars[id as usize]
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.vars
            .iter()
            .position(|v| v.name == name)
            .map(|i| i as VarId)
    }

    /// All statements in pre-order.
    pub fn statements(&self) -> Vec<&CStmt> {
        fn walk<'a>(body: &'a [CStmt], out: &mut Vec<&'a CStmt>) {
            for s in body {
                out.push(s);
                match &s.kind {
                    CStmtKind::Async { body, .. } | CStmtKind::While { body, .. } => {
                        walk(body, out)
                    }
                    CStmtKind::If {
                        then_body,
                        else_body,
                        ..
                    } => {
                        walk(then_body, out);
                        walk(else_body, out);
                    }
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// Statement id to source line.
    pub fn line_map(&self) -> Vec<u32> {
        let mut map = vec![0; self.stmt_count as usize];
        for s in self.statements() {
            map[s.id as usize] = s.line;
        }
        map
    }

    /// True if the program never spawns a task.
    pub fn is_sequential(&self) -> bool {
        !self
            .statements()
            .iter()
            .any(|s| matches!(s.kind, CStmtKind::Async { .. }))
    }
}
