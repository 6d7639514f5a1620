//! Concrete/symbolic values, the hash-consed CDAG pool, and expression evaluation.

use std::fmt::{self, Write};
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

use rustc_hash::{FxHashMap, FxHashSet};
use smallvec::SmallVec;

use crate::lang::{BinOp, CExpr, CoreProgram, ElemKind, UnOp, VarId};
use crate::memory::{Index, Memory, StoreId, TaskId};

#[derive(Clone, Copy, Debug)]
pub enum Scalar {
    Int(i32),
    Float(f64),
}

impl Scalar {
    pub fn kind(self) -> ElemKind {
        match self {
            Scalar::Int(_) => ElemKind::Int,
            Scalar::Float(_) => ElemKind::Float,
        }
    }

    pub fn is_zero(self) -> bool {
        match self {
            Scalar::Int(v) => v == 0,
            Scalar::Float(v) => v == 0.0,
        }
    }

    fn bits(self) -> (u8, u64) {
        match self {
            Scalar::Int(v) => (0, v as u32 as u64),
            Scalar::Float(v) => (1, v.to_bits()),
        }
    }
}

// Floats compare by bit pattern so that interning and equality are total.
impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        self.bits() == other.bits()
    }
}

impl Eq for Scalar {}

impl Hash for Scalar {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.bits().hash(state);
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Float(v) => write!(f, "{v:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymRef(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Value {
    Concrete(Scalar),
    Sym(SymRef),
    Err,
}

impl Value {
    pub fn int(v: i32) -> Value {
        Value::Concrete(Scalar::Int(v))
    }

    pub fn float(v: f64) -> Value {
        Value::Concrete(Scalar::Float(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymOp {
    Unary(UnOp),
    Binary(BinOp),
    Ternary,
}

impl SymOp {
    pub fn symbol(self) -> &'static str {
        match self {
            SymOp::Unary(op) => op.symbol(),
            SymOp::Binary(op) => op.symbol(),
            SymOp::Ternary => "?:",
        }
    }

    pub fn from_symbol(s: &str, arity: usize) -> Option<SymOp> {
        if s == "?:" {
            return Some(SymOp::Ternary);
        }
        if arity == 1 {
            for op in [UnOp::Neg, UnOp::Not, UnOp::BitNot] {
                if op.symbol() == s {
                    return Some(SymOp::Unary(op));
                }
            }
        }
        BinOp::from_symbol(s).map(SymOp::Binary)
    }

    pub fn is_ac(self) -> bool {
        matches!(self, SymOp::Binary(op) if op.is_ac())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SymNode {
    /// Live-in read of a cell that was never written; `name` indexes the pool's name table.
    Leaf {
        name: u32,
        index: Index,
        kind: ElemKind,
    },
    Const(Scalar),
    Op {
        op: SymOp,
        args: SmallVec<[SymRef; 3]>,
    },
}

#[derive(Clone, Copy, Debug)]
pub struct NodeMeta {
    /// Source line of the statement that first created the node.
    pub line: u32,
    pub kind: ElemKind,
    hash: u128,
}

/// Interning table for CDAG nodes: structurally equal nodes share one [`SymRef`].
#[derive(Clone, Debug, Default)]
pub struct SymPool {
    nodes: Vec<SymNode>,
    meta: Vec<NodeMeta>,
    table: FxHashMap<SymNode, SymRef>,
    names: Vec<Arc<str>>,
    name_ids: FxHashMap<Arc<str>, u32>,
}

fn salted_hash<T: Hash>(salt: u8, t: &T) -> u64 {
    let mut h = DefaultHasher::new();
    salt.hash(&mut h);
    t.hash(&mut h);
    h.finish()
}

fn wide_hash<T: Hash>(t: &T) -> u128 {
    ((salted_hash(1, t) as u128) << 64) | salted_hash(2, t) as u128
}

impl SymPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn name_id(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.name_ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        let a: Arc<str> = Arc::from(name);
        self.names.push(a.clone());
        self.name_ids.insert(a, id);
        id
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn node(&self, r: SymRef) -> &SymNode {
        &self.nodes[r.0 as usize]
    }

    pub fn meta(&self, r: SymRef) -> NodeMeta {
        self.meta[r.0 as usize]
    }

    pub fn kind(&self, r: SymRef) -> ElemKind {
        self.meta[r.0 as usize].kind
    }

    /// Schedule- and pool-independent structural hash.
    pub fn structural_hash(&self, r: SymRef) -> u128 {
        self.meta[r.0 as usize].hash
    }

    /// Returns the existing reference for a structurally equal node or allocates one.
    /// Children must already be interned.
    pub fn intern(&mut self, node: SymNode, line: u32) -> SymRef {
        if let Some(&r) = self.table.get(&node) {
            return r;
        }
        let (kind, hash) = match &node {
            SymNode::Leaf { name, index, kind } => {
                (*kind, wide_hash(&(0u8, self.name(*name), index, *kind)))
            }
            SymNode::Const(s) => (s.kind(), wide_hash(&(1u8, s))),
            SymNode::Op { op, args } => {
                let kind = match op {
                    SymOp::Unary(UnOp::Not) => ElemKind::Int,
                    SymOp::Binary(b) if b.is_comparison() || b.is_logical() => ElemKind::Int,
                    SymOp::Ternary => self.kind(args[1]),
                    _ => self.kind(args[0]),
                };
                let child: SmallVec<[u128; 3]> =
                    args.iter().map(|a| self.structural_hash(*a)).collect();
                (kind, wide_hash(&(2u8, op, child)))
            }
        };
        let r = SymRef(self.nodes.len() as u32);
        self.nodes.push(node.clone());
        self.meta.push(NodeMeta { line, kind, hash });
        self.table.insert(node, r);
        r
    }

    pub fn leaf(&mut self, name: &str, index: &Index, kind: ElemKind, line: u32) -> SymRef {
        let name = self.name_id(name);
        self.intern(
            SymNode::Leaf {
                name,
                index: index.clone(),
                kind,
            },
            line,
        )
    }

    pub fn constant(&mut self, s: Scalar, line: u32) -> SymRef {
        self.intern(SymNode::Const(s), line)
    }

    pub fn op(&mut self, op: SymOp, args: &[SymRef], line: u32) -> SymRef {
        self.intern(
            SymNode::Op {
                op,
                args: SmallVec::from_slice(args),
            },
            line,
        )
    }

    /// Turns a non-error value into a node (concretes become constant leaves).
    pub fn lift(&mut self, v: Value, line: u32) -> SymRef {
        match v {
            Value::Sym(r) => r,
            Value::Concrete(s) => self.constant(s, line),
            Value::Err => panic!("cannot lift an error value"),
        }
    }

    /// Structural equality of `r` here and `s` in `other`. Pairs already
    /// shown equal are kept in `proven` so shared sub-DAGs are walked once.
    pub fn same_as(
        &self,
        r: SymRef,
        other: &SymPool,
        s: SymRef,
        proven: &mut FxHashSet<(SymRef, SymRef)>,
    ) -> bool {
        let mut added = Vec::new();
        let mut stack = vec![(r, s)];
        let ok = loop {
            let Some((x, y)) = stack.pop() else {
                break true;
            };
            if self.structural_hash(x) != other.structural_hash(y) {
                break false;
            }
            if !proven.insert((x, y)) {
                continue;
            }
            added.push((x, y));
            let same = match (self.node(x), other.node(y)) {
                (
                    SymNode::Leaf { name, index, kind },
                    SymNode::Leaf {
                        name: n2,
                        index: i2,
                        kind: k2,
                    },
                ) => self.name(*name) == other.name(*n2) && index == i2 && kind == k2,
                (SymNode::Const(a), SymNode::Const(b)) => a == b,
                (SymNode::Op { op, args }, SymNode::Op { op: o2, args: a2 })
                    if op == o2 && args.len() == a2.len() =>
                {
                    stack.extend(args.iter().copied().zip(a2.iter().copied()));
                    true
                }
                _ => false,
            };
            if !same {
                break false;
            }
        };
        if !ok {
            // pairs on the failing path were only assumed equal
            for p in added {
                proven.remove(&p);
            }
        }
        ok
    }

    /// Prefix rendering such as `*(+(A[0],1),2)`, truncated with `...` past `limit` bytes.
    pub fn render(&self, r: SymRef, limit: usize) -> String {
        let mut out = String::new();
        self.render_into(r, limit, &mut out);
        if out.len() > limit {
            let mut cut = limit;
            while !out.is_char_boundary(cut) {
                cut -= 1;
            }
            out.truncate(cut);
            out.push_str("...");
        }
        out
    }

    fn render_into(&self, r: SymRef, limit: usize, out: &mut String) {
        if out.len() > limit {
            return;
        }
        match self.node(r) {
            SymNode::Leaf { name, index, .. } => {
                let _ = write!(out, "{}{index}", self.name(*name));
            }
            SymNode::Const(s) => {
                let _ = write!(out, "{s}");
            }
            SymNode::Op { op, args } => {
                out.push_str(op.symbol());
                out.push('(');
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    self.render_into(*a, limit, out);
                    if out.len() > limit {
                        return;
                    }
                }
                out.push(')');
            }
        }
    }

    pub fn render_value(&self, v: Value, limit: usize) -> String {
        match v {
            Value::Concrete(s) => s.to_string(),
            Value::Sym(r) => self.render(r, limit),
            Value::Err => "err".to_string(),
        }
    }

    /// Number of distinct nodes reachable from `r`.
    pub fn dag_size(&self, r: SymRef) -> usize {
        let mut seen = rustc_hash::FxHashSet::default();
        let mut stack = vec![r];
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                if let SymNode::Op { args, .. } = self.node(n) {
                    stack.extend(args.iter().copied());
                }
            }
        }
        seen.len()
    }

    /// Evaluates a CDAG with every leaf replaced by `env(name, index)`.
    /// Used by tests as an independent concretization oracle.
    pub fn concretize(
        &self,
        r: SymRef,
        env: &mut impl FnMut(&str, &Index, ElemKind) -> Scalar,
    ) -> Value {
        let mut memo: FxHashMap<SymRef, Value> = FxHashMap::default();
        self.concretize_memo(r, env, &mut memo)
    }

    /// `concretize` over several roots, sharing work between them.
    pub fn concretize_all(
        &self,
        roots: &[SymRef],
        env: &mut impl FnMut(&str, &Index, ElemKind) -> Scalar,
    ) -> Vec<Value> {
        let mut memo: FxHashMap<SymRef, Value> = FxHashMap::default();
        roots
            .iter()
            .map(|&r| self.concretize_memo(r, env, &mut memo))
            .collect()
    }

    fn concretize_memo(
        &self,
        r: SymRef,
        env: &mut impl FnMut(&str, &Index, ElemKind) -> Scalar,
        memo: &mut FxHashMap<SymRef, Value>,
    ) -> Value {
        if let Some(v) = memo.get(&r) {
            return *v;
        }
        let v = match self.node(r) {
            SymNode::Leaf { name, index, kind } => {
                Value::Concrete(env(self.name(*name), index, *kind))
            }
            SymNode::Const(s) => Value::Concrete(*s),
            SymNode::Op { op, args } => {
                let vals: SmallVec<[Value; 3]> = args
                    .iter()
                    .map(|a| {
                        stacker::maybe_grow(STACK_RED_ZONE, STACK_GROW, || {
                            self.concretize_memo(*a, env, memo)
                        })
                    })
                    .collect();
                match op {
                    SymOp::Unary(u) => concrete_unop(*u, vals[0]),
                    SymOp::Ternary => match vals[0] {
                        Value::Concrete(c) if vals.iter().all(|v| *v != Value::Err) => {
                            if c.is_zero() {
                                vals[2]
                            } else {
                                vals[1]
                            }
                        }
                        _ => Value::Err,
                    },
                    // n-ary nodes (after AC flattening) fold left to right
                    SymOp::Binary(b) => vals[1..]
                        .iter()
                        .fold(vals[0], |acc, v| concrete_binop(*b, acc, *v)),
                }
            }
        };
        memo.insert(r, v);
        v
    }
}

/// Deep CDAG walks grow the stack on demand instead of overflowing.
pub(crate) const STACK_RED_ZONE: usize = 64 * 1024;
pub(crate) const STACK_GROW: usize = 4 * 1024 * 1024;

fn bool_val(b: bool) -> Value {
    Value::int(b as i32)
}

/// Concrete-only binary evaluation; `Err` for undefined C behavior we reject.
pub fn concrete_binop(op: BinOp, a: Value, b: Value) -> Value {
    let (Value::Concrete(x), Value::Concrete(y)) = (a, b) else {
        return Value::Err;
    };
    if op.is_logical() {
        return match op {
            BinOp::LAnd => bool_val(!x.is_zero() && !y.is_zero()),
            _ => bool_val(!x.is_zero() || !y.is_zero()),
        };
    }
    match (x, y) {
        (Scalar::Int(x), Scalar::Int(y)) => int_binop(op, x, y).map_or(Value::Err, Value::int),
        (Scalar::Float(x), Scalar::Float(y)) => float_binop(op, x, y),
        _ => Value::Err,
    }
}

pub fn int_binop(op: BinOp, x: i32, y: i32) -> Option<i32> {
    Some(match op {
        BinOp::Add => x.wrapping_add(y),
        BinOp::Sub => x.wrapping_sub(y),
        BinOp::Mul => x.wrapping_mul(y),
        BinOp::Div => {
            if y == 0 {
                return None;
            }
            x.wrapping_div(y)
        }
        BinOp::Rem => {
            if y == 0 {
                return None;
            }
            x.wrapping_rem(y)
        }
        BinOp::Shl => {
            if !(0..32).contains(&y) {
                return None;
            }
            ((x as u32) << y) as i32
        }
        BinOp::Shr => {
            if !(0..32).contains(&y) {
                return None;
            }
            x >> y
        }
        BinOp::BitAnd => x & y,
        BinOp::BitOr => x | y,
        BinOp::BitXor => x ^ y,
        BinOp::Lt => (x < y) as i32,
        BinOp::Le => (x <= y) as i32,
        BinOp::Gt => (x > y) as i32,
        BinOp::Ge => (x >= y) as i32,
        BinOp::Eq => (x == y) as i32,
        BinOp::Ne => (x != y) as i32,
        BinOp::LAnd => (x != 0 && y != 0) as i32,
        BinOp::LOr => (x != 0 || y != 0) as i32,
        BinOp::Min => x.min(y),
        BinOp::Max => x.max(y),
    })
}

fn float_binop(op: BinOp, x: f64, y: f64) -> Value {
    match op {
        BinOp::Add => Value::float(x + y),
        BinOp::Sub => Value::float(x - y),
        BinOp::Mul => Value::float(x * y),
        BinOp::Div => {
            if y == 0.0 {
                Value::Err
            } else {
                Value::float(x / y)
            }
        }
        BinOp::Lt => bool_val(x < y),
        BinOp::Le => bool_val(x <= y),
        BinOp::Gt => bool_val(x > y),
        BinOp::Ge => bool_val(x >= y),
        BinOp::Eq => bool_val(x == y),
        BinOp::Ne => bool_val(x != y),
        BinOp::Min => Value::float(if y < x { y } else { x }),
        BinOp::Max => Value::float(if y > x { y } else { x }),
        _ => Value::Err,
    }
}

pub fn concrete_unop(op: UnOp, a: Value) -> Value {
    match (op, a) {
        (UnOp::Neg, Value::Concrete(Scalar::Int(x))) => Value::int(x.wrapping_neg()),
        (UnOp::Neg, Value::Concrete(Scalar::Float(x))) => Value::float(-x),
        (UnOp::Not, Value::Concrete(x)) => bool_val(x.is_zero()),
        (UnOp::BitNot, Value::Concrete(Scalar::Int(x))) => Value::int(!x),
        _ => Value::Err,
    }
}

/// Binary operator over values: concrete folding, symbolic promotion, error absorption.
pub fn val_binop(op: BinOp, a: Value, b: Value, pool: &mut SymPool, line: u32) -> Value {
    if a == Value::Err || b == Value::Err {
        return Value::Err;
    }
    if let (Value::Concrete(_), Value::Concrete(_)) = (a, b) {
        return concrete_binop(op, a, b);
    }
    // a concrete deciding operand settles && / || even against a symbol
    let decides = |v: Value| match (op, v) {
        (BinOp::LAnd, Value::Concrete(c)) => c.is_zero(),
        (BinOp::LOr, Value::Concrete(c)) => !c.is_zero(),
        _ => false,
    };
    if decides(a) || decides(b) {
        return bool_val(op == BinOp::LOr);
    }
    let (x, y) = (pool.lift(a, line), pool.lift(b, line));
    Value::Sym(pool.op(SymOp::Binary(op), &[x, y], line))
}

pub fn val_unop(op: UnOp, a: Value, pool: &mut SymPool, line: u32) -> Value {
    match a {
        Value::Err => Value::Err,
        Value::Concrete(_) => concrete_unop(op, a),
        Value::Sym(r) => Value::Sym(pool.op(SymOp::Unary(op), &[r], line)),
    }
}

pub fn val_tern(c: Value, a: Value, b: Value, pool: &mut SymPool, line: u32) -> Value {
    if c == Value::Err || a == Value::Err || b == Value::Err {
        return Value::Err;
    }
    match c {
        Value::Concrete(s) => {
            if s.is_zero() {
                b
            } else {
                a
            }
        }
        Value::Sym(r) => {
            let (x, y) = (pool.lift(a, line), pool.lift(b, line));
            Value::Sym(pool.op(SymOp::Ternary, &[r, x, y], line))
        }
        Value::Err => unreachable!(),
    }
}

/// Why an expression evaluated to `Err`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrCause {
    SymbolicIndex,
    NegativeIndex,
    Arith,
}

/// A read of a resolved memory cell performed while evaluating an expression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Read {
    pub store: StoreId,
    pub var: VarId,
    pub index: Index,
}

/// Evaluation context for one statement instance.
pub struct Eval<'a> {
    pub prog: &'a CoreProgram,
    pub mem: &'a Memory,
    pub task: &'a TaskId,
    pub line: u32,
    pub reads: Vec<Read>,
    /// First cause of an `Err` result, if any.
    pub cause: Option<ErrCause>,
}

impl<'a> Eval<'a> {
    pub fn new(prog: &'a CoreProgram, mem: &'a Memory, task: &'a TaskId, line: u32) -> Self {
        Eval {
            prog,
            mem,
            task,
            line,
            reads: Vec::new(),
            cause: None,
        }
    }

    fn fail(&mut self, c: ErrCause) -> Value {
        self.cause.get_or_insert(c);
        Value::Err
    }

    pub fn expr(&mut self, e: &CExpr, pool: &mut SymPool) -> Value {
        match e {
            CExpr::Int(v) => Value::int(*v),
            CExpr::Float(v) => Value::float(*v),
            CExpr::Load { var, idx } => match self.index(idx, pool) {
                Ok(i) => self.load(*var, i, pool),
                Err(c) => self.fail(c),
            },
            CExpr::Unary(op, a) => {
                let a = self.expr(a, pool);
                let v = val_unop(*op, a, pool, self.line);
                if v == Value::Err && a != Value::Err {
                    return self.fail(ErrCause::Arith);
                }
                v
            }
            CExpr::Binary(op, a, b) => {
                let a = self.expr(a, pool);
                let b = self.expr(b, pool);
                let v = val_binop(*op, a, b, pool, self.line);
                if v == Value::Err && a != Value::Err && b != Value::Err {
                    return self.fail(ErrCause::Arith);
                }
                v
            }
            CExpr::Ternary(c, a, b) => {
                let c = self.expr(c, pool);
                let a = self.expr(a, pool);
                let b = self.expr(b, pool);
                val_tern(c, a, b, pool, self.line)
            }
        }
    }

    /// Evaluates a subscript list to a concrete index.
    pub fn index(&mut self, idx: &[CExpr], pool: &mut SymPool) -> Result<Index, ErrCause> {
        let mut out = Index::default();
        let mut failure = None;
        for e in idx {
            match self.expr(e, pool) {
                Value::Concrete(Scalar::Int(v)) if v >= 0 => out.0.push(v as u32),
                Value::Concrete(Scalar::Int(_)) => {
                    failure.get_or_insert(ErrCause::NegativeIndex);
                }
                Value::Concrete(Scalar::Float(_)) | Value::Sym(_) => {
                    failure.get_or_insert(ErrCause::SymbolicIndex);
                }
                Value::Err => {
                    failure.get_or_insert(self.cause.unwrap_or(ErrCause::Arith));
                }
            }
        }
        match failure {
            Some(c) => {
                self.cause.get_or_insert(c);
                Err(c)
            }
            None => Ok(out),
        }
    }

    fn load(&mut self, var: VarId, index: Index, pool: &mut SymPool) -> Value {
        let info = self.prog.var(var);
        let Some(store) = self.mem.get_var(self.task, var) else {
            return Value::Sym(pool.leaf(&info.name, &index, info.kind, self.line));
        };
        let v = self.mem.store(store).cells.get(&index).copied();
        let v =
            v.unwrap_or_else(|| Value::Sym(pool.leaf(&info.name, &index, info.kind, self.line)));
        self.reads.push(Read { store, var, index });
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intern_is_idempotent_and_structural() {
        let mut p = SymPool::new();
        let x = p.leaf("x", &Index::scalar(0), ElemKind::Int, 1);
        let one = p.constant(Scalar::Int(1), 1);
        let a = p.op(SymOp::Binary(BinOp::Add), &[x, one], 1);
        let b = p.op(SymOp::Binary(BinOp::Add), &[x, one], 2);
        let c = p.op(SymOp::Binary(BinOp::Add), &[one, x], 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
        // metadata keeps the first creating line
        assert_eq!(p.meta(b).line, 1);
    }

    #[test]
    fn basic_value_examples() {
        let mut p = SymPool::new();
        assert_eq!(
            val_binop(BinOp::Add, Value::int(1), Value::int(1), &mut p, 0),
            Value::int(2)
        );
        assert_eq!(
            val_binop(BinOp::Div, Value::int(1), Value::int(0), &mut p, 0),
            Value::Err
        );
        assert_eq!(
            val_binop(BinOp::Mul, Value::Err, Value::int(7), &mut p, 0),
            Value::Err
        );
        assert_eq!(
            val_tern(Value::int(0), Value::int(1), Value::int(2), &mut p, 0),
            Value::int(2)
        );
        let x = Value::Sym(p.leaf("x", &Index::scalar(0), ElemKind::Int, 0));
        assert_eq!(val_tern(Value::int(5), x, Value::int(9), &mut p, 0), x);
        let v = val_binop(BinOp::Add, x, Value::int(1), &mut p, 0);
        let v = val_binop(BinOp::Mul, v, Value::int(2), &mut p, 0);
        let Value::Sym(r) = v else { panic!() };
        assert_eq!(p.render(r, 100), "*(+(x[0],1),2)");
        let c = Value::Sym(p.leaf("c", &Index::scalar(0), ElemKind::Int, 0));
        let t = val_tern(c, x, Value::int(3), &mut p, 0);
        let Value::Sym(r) = t else { panic!() };
        assert_eq!(p.render(r, 100), "?:(c[0],x[0],3)");
    }

    #[test]
    fn short_circuit_decides_concretely() {
        let mut p = SymPool::new();
        let x = Value::Sym(p.leaf("x", &Index::scalar(0), ElemKind::Int, 0));
        assert_eq!(
            val_binop(BinOp::LAnd, Value::int(0), x, &mut p, 0),
            Value::int(0)
        );
        assert_eq!(
            val_binop(BinOp::LOr, x, Value::int(3), &mut p, 0),
            Value::int(1)
        );
        assert!(matches!(
            val_binop(BinOp::LAnd, Value::int(1), x, &mut p, 0),
            Value::Sym(_)
        ));
        assert_eq!(
            val_binop(BinOp::LAnd, Value::int(0), Value::Err, &mut p, 0),
            Value::Err
        );
    }

    #[test]
    fn shifts_out_of_range_are_errors() {
        assert_eq!(int_binop(BinOp::Shl, 1, 31), Some(i32::MIN));
        assert_eq!(int_binop(BinOp::Shl, 1, 32), None);
        assert_eq!(int_binop(BinOp::Shr, -8, 1), Some(-4));
        assert_eq!(int_binop(BinOp::Shr, 1, -1), None);
        assert_eq!(int_binop(BinOp::Div, i32::MIN, -1), Some(i32::MIN));
    }

    #[test]
    fn structural_hash_is_pool_independent() {
        let mut p = SymPool::new();
        let mut q = SymPool::new();
        q.leaf("unrelated", &Index::scalar(9), ElemKind::Int, 0);
        let build = |p: &mut SymPool| {
            let x = p.leaf("x", &Index::new(&[1, 2]), ElemKind::Float, 0);
            let k = p.constant(Scalar::Float(0.5), 0);
            p.op(SymOp::Binary(BinOp::Mul), &[x, k], 0)
        };
        let a = build(&mut p);
        let b = build(&mut q);
        assert_ne!(a, b);
        assert_eq!(p.structural_hash(a), q.structural_hash(b));
        let mut proven = FxHashSet::default();
        assert!(p.same_as(a, &q, b, &mut proven));
        let c = q.op(SymOp::Binary(BinOp::Add), &[b, b], 0);
        assert!(!p.same_as(a, &q, c, &mut proven));
        assert!(p.same_as(a, &q, b, &mut proven));
    }
}
