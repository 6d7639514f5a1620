//! Equivalence of final memories: comparison set, AC normalization,
//! rewrite rules and mismatch diagnostics.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rustc_hash::{FxHashMap, FxHashSet};
use serde::Serialize;
use smallvec::SmallVec;

use crate::lang::CoreProgram;
use crate::memory::{Index, Memory, TaskId};
use crate::symval::{Scalar, SymNode, SymOp, SymPool, SymRef, Value, STACK_GROW, STACK_RED_ZONE};

pub const DEFAULT_REWRITE_BUDGET: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompareSet {
    /// Variables declared in the root task.
    #[default]
    NonLocal,
    /// Every `(task, variable)` key of both memories.
    StrictAll,
}

#[derive(Clone, Debug)]
pub struct EquivOptions {
    pub ac_normalize: bool,
    pub builtin_rules: bool,
    pub user_rules: Vec<Rule>,
    pub compare_set: CompareSet,
    pub rewrite_budget: usize,
}

impl Default for EquivOptions {
    fn default() -> Self {
        EquivOptions {
            ac_normalize: false,
            builtin_rules: false,
            user_rules: Vec::new(),
            compare_set: CompareSet::NonLocal,
            rewrite_budget: DEFAULT_REWRITE_BUDGET,
        }
    }
}

impl EquivOptions {
    fn rules(&self) -> Vec<Rule> {
        let mut rules = self.user_rules.clone();
        if self.builtin_rules {
            rules.extend(builtin_rules());
        }
        rules
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("rule line {line}: {msg}")]
    Syntax { line: u32, msg: String },
    #[error("rule line {line}: {msg}")]
    Restriction { line: u32, msg: String },
    #[error("rewriting did not reach a fixpoint within {0} rule applications")]
    BudgetExceeded(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Pattern {
    Var(String),
    Const(Scalar),
    Leaf(String, Index),
    Op(SymOp, Vec<Pattern>),
}

impl Pattern {
    fn vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Pattern::Var(v) => {
                out.insert(v.clone());
            }
            Pattern::Op(_, args) => args.iter().for_each(|a| a.vars(out)),
            _ => {}
        }
    }

    /// Discriminant used by the AC restriction: children must differ in it.
    fn root_kind(&self) -> String {
        match self {
            Pattern::Var(_) => "$".into(),
            Pattern::Const(_) => "const".into(),
            Pattern::Leaf(..) => "leaf".into(),
            Pattern::Op(op, args) => format!("{}/{}", op.symbol(), args.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub text: String,
    pub lhs: Pattern,
    pub rhs: Pattern,
}

pub fn builtin_rules() -> Vec<Rule> {
    let src = "/($x, $x) => 1\n+($x, 0) => $x\n*($x, 0) => 0\n";
    parse_rules(src).expect("built-in rules parse")
}

/// Parses a rule file: `pattern => replacement` per line, `#` comments.
pub fn parse_rules(text: &str) -> Result<Vec<Rule>, RuleError> {
    let mut rules = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k as u32 + 1;
        let src = raw.split('#').next().unwrap().trim();
        if src.is_empty() {
            continue;
        }
        let Some((l, r)) = src.split_once("=>") else {
            return Err(RuleError::Syntax {
                line,
                msg: "expected `pattern => replacement`".into(),
            });
        };
        let lhs = PatternParser::parse(l, line)?;
        let rhs = PatternParser::parse(r, line)?;
        if matches!(lhs, Pattern::Var(_)) {
            return Err(RuleError::Restriction {
                line,
                msg: "a pattern cannot be a lone variable".into(),
            });
        }
        check_ac_restriction(&lhs, line)?;
        let (mut lv, mut rv) = (BTreeSet::new(), BTreeSet::new());
        lhs.vars(&mut lv);
        rhs.vars(&mut rv);
        if let Some(v) = rv.difference(&lv).next() {
            return Err(RuleError::Syntax {
                line,
                msg: format!("replacement uses unbound variable ${v}"),
            });
        }
        rules.push(Rule {
            text: src.to_string(),
            lhs,
            rhs,
        });
    }
    Ok(rules)
}

fn check_ac_restriction(p: &Pattern, line: u32) -> Result<(), RuleError> {
    if let Pattern::Op(op, args) = p {
        if op.is_ac() {
            let vars = args.iter().filter(|a| matches!(a, Pattern::Var(_))).count();
            if vars > 1 {
                return Err(RuleError::Restriction {
                    line,
                    msg: format!(
                        "at most one variable may appear directly under `{}`",
                        op.symbol()
                    ),
                });
            }
            let mut kinds = BTreeSet::new();
            for a in args.iter().filter(|a| !matches!(a, Pattern::Var(_))) {
                if !kinds.insert(a.root_kind()) {
                    return Err(RuleError::Restriction {
                        line,
                        msg: format!(
                            "children of `{}` must have distinct root kinds",
                            op.symbol()
                        ),
                    });
                }
            }
        }
        for a in args {
            check_ac_restriction(a, line)?;
        }
    }
    Ok(())
}

struct PatternParser<'a> {
    s: &'a [u8],
    pos: usize,
    line: u32,
}

impl<'a> PatternParser<'a> {
    fn parse(text: &'a str, line: u32) -> Result<Pattern, RuleError> {
        let mut p = PatternParser {
            s: text.as_bytes(),
            pos: 0,
            line,
        };
        let pat = p.term()?;
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(p.err("trailing input"));
        }
        Ok(pat)
    }

    fn err(&self, msg: &str) -> RuleError {
        RuleError::Syntax {
            line: self.line,
            msg: format!("{msg} at column {}", self.pos + 1),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && (self.s[self.pos] as char).is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn take_while(&mut self, f: impl Fn(u8) -> bool) -> &'a str {
        let start = self.pos;
        while self.peek().is_some_and(&f) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.s[start..self.pos]).unwrap()
    }

    fn term(&mut self) -> Result<Pattern, RuleError> {
        self.skip_ws();
        let Some(c) = self.peek() else {
            return Err(self.err("unexpected end of pattern"));
        };
        if c == b'$' {
            self.pos += 1;
            let name = self.take_while(|b| b.is_ascii_alphanumeric() || b == b'_');
            if name.is_empty() {
                return Err(self.err("expected variable name after `$`"));
            }
            return Ok(Pattern::Var(name.to_string()));
        }
        let is_num = |b: u8| b.is_ascii_digit() || b == b'.' || b == b'e';
        if c.is_ascii_digit()
            || (c == b'-' && self.s.get(self.pos + 1).is_some_and(|b| b.is_ascii_digit()))
        {
            let start = self.pos;
            self.pos += 1;
            self.take_while(is_num);
            let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
            if text.contains('.') {
                return text
                    .parse::<f64>()
                    .map(|v| Pattern::Const(Scalar::Float(v)))
                    .map_err(|_| self.err("bad float literal"));
            }
            return text
                .parse::<i32>()
                .map(|v| Pattern::Const(Scalar::Int(v)))
                .map_err(|_| self.err("bad integer literal"));
        }
        let sym = if c.is_ascii_alphabetic() || c == b'_' {
            self.take_while(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'.')
        } else {
            self.take_while(|b| b"+-*/%<>=!&|^~?:".contains(&b))
        };
        if sym.is_empty() {
            return Err(self.err("unexpected character"));
        }
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let mut args = Vec::new();
                loop {
                    self.skip_ws();
                    if self.peek() == Some(b')') {
                        self.pos += 1;
                        break;
                    }
                    args.push(self.term()?);
                    self.skip_ws();
                    if self.peek() == Some(b',') {
                        self.pos += 1;
                    }
                }
                let op = SymOp::from_symbol(sym, args.len())
                    .ok_or_else(|| self.err(&format!("unknown operator `{sym}`")))?;
                let ok = match op {
                    SymOp::Unary(_) => args.len() == 1,
                    SymOp::Ternary => args.len() == 3,
                    SymOp::Binary(b) => args.len() == 2 || (b.is_ac() && args.len() >= 2),
                };
                if !ok {
                    return Err(self.err(&format!("wrong number of operands for `{sym}`")));
                }
                Ok(Pattern::Op(op, args))
            }
            Some(b'[') => {
                let name = sym.to_string();
                let mut idx = Vec::new();
                while self.peek() == Some(b'[') {
                    self.pos += 1;
                    let n = self.take_while(|b| b.is_ascii_digit());
                    let v = n.parse::<u32>().map_err(|_| self.err("bad leaf index"))?;
                    idx.push(v);
                    if self.peek() != Some(b']') {
                        return Err(self.err("expected `]`"));
                    }
                    self.pos += 1;
                }
                Ok(Pattern::Leaf(name, Index::new(&idx)))
            }
            _ => Err(self.err(&format!("expected `(` after `{sym}`"))),
        }
    }
}

/// Total order used to sort AC operands: constants, then leaves (by name,
/// index), then operations (by operator, arity, structural hash).
fn ac_order(pool: &SymPool, a: SymRef, b: SymRef) -> Ordering {
    fn rank(n: &SymNode) -> u8 {
        match n {
            SymNode::Const(_) => 0,
            SymNode::Leaf { .. } => 1,
            SymNode::Op { .. } => 2,
        }
    }
    let (na, nb) = (pool.node(a), pool.node(b));
    rank(na).cmp(&rank(nb)).then_with(|| match (na, nb) {
        (SymNode::Const(x), SymNode::Const(y)) => scalar_order(*x, *y),
        (
            SymNode::Leaf {
                name: n1,
                index: i1,
                ..
            },
            SymNode::Leaf {
                name: n2,
                index: i2,
                ..
            },
        ) => pool.name(*n1).cmp(pool.name(*n2)).then_with(|| i1.cmp(i2)),
        (SymNode::Op { op: o1, args: a1 }, SymNode::Op { op: o2, args: a2 }) => o1
            .cmp(o2)
            .then_with(|| a1.len().cmp(&a2.len()))
            .then_with(|| pool.structural_hash(a).cmp(&pool.structural_hash(b))),
        _ => Ordering::Equal,
    })
}

fn scalar_order(x: Scalar, y: Scalar) -> Ordering {
    match (x, y) {
        (Scalar::Int(a), Scalar::Int(b)) => a.cmp(&b),
        (Scalar::Float(a), Scalar::Float(b)) => a.total_cmp(&b),
        (Scalar::Int(_), Scalar::Float(_)) => Ordering::Less,
        (Scalar::Float(_), Scalar::Int(_)) => Ordering::Greater,
    }
}

/// Flattens nested runs of `+`, `*`, `min`, `max` into one n-ary node and
/// sorts its operands. Bottom-up over the DAG, memoized in `memo`.
pub fn normalize_ac(pool: &mut SymPool, r: SymRef, memo: &mut FxHashMap<SymRef, SymRef>) -> SymRef {
    if let Some(&m) = memo.get(&r) {
        return m;
    }
    // iterative post-order to survive deep chains
    let mut stack = vec![(r, false)];
    while let Some((n, expanded)) = stack.pop() {
        if memo.contains_key(&n) {
            continue;
        }
        let SymNode::Op { op, args } = pool.node(n).clone() else {
            memo.insert(n, n);
            continue;
        };
        if !expanded {
            stack.push((n, true));
            for a in args.iter().rev() {
                if !memo.contains_key(a) {
                    stack.push((*a, false));
                }
            }
            continue;
        }
        let line = pool.meta(n).line;
        let mut kids: SmallVec<[SymRef; 3]> = SmallVec::new();
        for a in &args {
            let a = memo[a];
            match pool.node(a) {
                SymNode::Op {
                    op: inner,
                    args: sub,
                } if op.is_ac() && *inner == op => kids.extend(sub.iter().copied()),
                _ => kids.push(a),
            }
        }
        if op.is_ac() {
            kids.sort_by(|x, y| ac_order(pool, *x, *y));
        }
        let out = pool.intern(SymNode::Op { op, args: kids }, line);
        memo.insert(n, out);
        memo.insert(out, out);
    }
    memo[&r]
}

struct Rewriter<'r> {
    rules: &'r [Rule],
    budget: usize,
    used: usize,
    fired: BTreeMap<String, usize>,
    memo: FxHashMap<SymRef, SymRef>,
}

impl Rewriter<'_> {
    fn rewrite(&mut self, pool: &mut SymPool, r: SymRef) -> Result<SymRef, RuleError> {
        if let Some(&m) = self.memo.get(&r) {
            return Ok(m);
        }
        let mut cur = match pool.node(r).clone() {
            SymNode::Op { op, args } => {
                let mut kids = SmallVec::<[SymRef; 3]>::new();
                for a in args {
                    kids.push(stacker::maybe_grow(STACK_RED_ZONE, STACK_GROW, || {
                        self.rewrite(pool, a)
                    })?);
                }
                let line = pool.meta(r).line;
                pool.intern(SymNode::Op { op, args: kids }, line)
            }
            _ => r,
        };
        'fix: loop {
            for rule in self.rules {
                let mut b = FxHashMap::default();
                if match_pattern(pool, &rule.lhs, cur, &mut b) {
                    self.used += 1;
                    if self.used > self.budget {
                        return Err(RuleError::BudgetExceeded(self.budget));
                    }
                    *self.fired.entry(rule.text.clone()).or_default() += 1;
                    let line = pool.meta(cur).line;
                    let next = instantiate(pool, &rule.rhs, &b, line);
                    cur = stacker::maybe_grow(STACK_RED_ZONE, STACK_GROW, || {
                        self.rewrite(pool, next)
                    })?;
                    continue 'fix;
                }
            }
            break;
        }
        self.memo.insert(r, cur);
        Ok(cur)
    }
}

fn match_pattern(
    pool: &mut SymPool,
    p: &Pattern,
    r: SymRef,
    b: &mut FxHashMap<String, SymRef>,
) -> bool {
    match p {
        Pattern::Var(v) => match b.get(v) {
            Some(&prev) => prev == r,
            None => {
                b.insert(v.clone(), r);
                true
            }
        },
        Pattern::Const(c) => matches!(pool.node(r), SymNode::Const(x) if x == c),
        Pattern::Leaf(name, idx) => {
            matches!(pool.node(r), SymNode::Leaf { name: n, index, .. } if pool.name(*n) == name && index == idx)
        }
        Pattern::Op(op, pargs) => {
            let SymNode::Op { op: nop, args } = pool.node(r).clone() else {
                return false;
            };
            if nop != *op {
                return false;
            }
            if !op.is_ac() {
                return args.len() == pargs.len()
                    && pargs
                        .iter()
                        .zip(args.iter())
                        .all(|(p, a)| match_pattern(pool, p, *a, b));
            }
            // AC: fixed children claim distinct operands first-fit; the single
            // variable (if any) takes the rest
            let mut left: Vec<SymRef> = args.to_vec();
            let mut var = None;
            for p in pargs {
                if let Pattern::Var(v) = p {
                    var = Some(v);
                    continue;
                }
                let mut hit = None;
                for (k, &a) in left.iter().enumerate() {
                    let mut trial = b.clone();
                    if match_pattern(pool, p, a, &mut trial) {
                        *b = trial;
                        hit = Some(k);
                        break;
                    }
                }
                match hit {
                    Some(k) => {
                        left.remove(k);
                    }
                    None => return false,
                }
            }
            match (var, left.len()) {
                (None, 0) => true,
                (None, _) | (Some(_), 0) => false,
                (Some(v), 1) => match_pattern(pool, &Pattern::Var(v.clone()), left[0], b),
                (Some(v), _) => {
                    let line = pool.meta(r).line;
                    let rest = pool.op(*op, &left, line);
                    match_pattern(pool, &Pattern::Var(v.clone()), rest, b)
                }
            }
        }
    }
}

fn instantiate(
    pool: &mut SymPool,
    p: &Pattern,
    b: &FxHashMap<String, SymRef>,
    line: u32,
) -> SymRef {
    match p {
        Pattern::Var(v) => b[v],
        Pattern::Const(c) => pool.constant(*c, line),
        Pattern::Leaf(name, idx) => {
            let kind = crate::lang::ElemKind::Int;
            pool.leaf(name, idx, kind, line)
        }
        Pattern::Op(op, args) => {
            let kids: Vec<SymRef> = args.iter().map(|a| instantiate(pool, a, b, line)).collect();
            pool.op(*op, &kids, line)
        }
    }
}

/// Applies `rules` bottom-up to a fixpoint; returns the result and fired-rule counts.
pub fn apply_rules(
    pool: &mut SymPool,
    r: SymRef,
    rules: &[Rule],
    budget: usize,
) -> Result<(SymRef, BTreeMap<String, usize>), RuleError> {
    let mut rw = Rewriter {
        rules,
        budget,
        used: 0,
        fired: BTreeMap::new(),
        memo: FxHashMap::default(),
    };
    let out = rw.rewrite(pool, r)?;
    Ok((out, rw.fired))
}

/// One side of a comparison: a finished program's memory and its pool.
pub struct Side<'a> {
    pub prog: &'a CoreProgram,
    pub mem: &'a Memory,
    pub pool: &'a mut SymPool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Equivalent,
    Mismatch,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mismatch {
    pub task: String,
    pub var: String,
    pub index: String,
    /// Rendered normalized values; `None` when the cell is undefined on that side.
    pub left: Option<String>,
    pub right: Option<String>,
    pub left_line: Option<u32>,
    pub right_line: Option<u32>,
    /// First differing node pair found by walking both CDAGs in lockstep.
    pub node_left: Option<String>,
    pub node_right: Option<String>,
    #[serde(skip)]
    pub left_value: Option<Value>,
    #[serde(skip)]
    pub right_value: Option<Value>,
    #[serde(skip)]
    pub diff_pair: (Option<Value>, Option<Value>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivReport {
    pub verdict: Verdict,
    pub compare_set: CompareSet,
    pub variables: usize,
    pub cells: usize,
    pub mismatched_cells: usize,
    pub first: Option<Mismatch>,
    pub rules_fired: BTreeMap<String, usize>,
}

const RENDER_LIMIT: usize = 400;

struct Normalizer<'o> {
    opts: &'o EquivOptions,
    rules: Vec<Rule>,
    ac_memo: FxHashMap<SymRef, SymRef>,
    post_memo: FxHashMap<SymRef, SymRef>,
    rule_memo: FxHashMap<SymRef, SymRef>,
    fired: BTreeMap<String, usize>,
    used: usize,
}

impl<'o> Normalizer<'o> {
    fn new(opts: &'o EquivOptions) -> Self {
        Normalizer {
            opts,
            rules: opts.rules(),
            ac_memo: FxHashMap::default(),
            post_memo: FxHashMap::default(),
            rule_memo: FxHashMap::default(),
            fired: BTreeMap::new(),
            used: 0,
        }
    }

    fn value(&mut self, pool: &mut SymPool, v: Value) -> Result<Value, RuleError> {
        let Value::Sym(mut r) = v else { return Ok(v) };
        if self.opts.ac_normalize {
            r = normalize_ac(pool, r, &mut self.ac_memo);
        }
        if !self.rules.is_empty() {
            let mut rw = Rewriter {
                rules: &self.rules,
                budget: self.opts.rewrite_budget.saturating_sub(self.used),
                used: 0,
                fired: std::mem::take(&mut self.fired),
                memo: std::mem::take(&mut self.rule_memo),
            };
            let res = rw.rewrite(pool, r);
            self.used += rw.used;
            self.fired = rw.fired;
            self.rule_memo = rw.memo;
            r = res?;
            if self.opts.ac_normalize {
                r = normalize_ac(pool, r, &mut self.post_memo);
            }
        }
        Ok(match pool.node(r) {
            SymNode::Const(s) => Value::Concrete(*s),
            _ => Value::Sym(r),
        })
    }
}

/// Keys of the comparison set: (task path, variable name) → store contents.
fn comparison_keys(
    side: &Side,
    set: CompareSet,
) -> BTreeMap<(TaskId, String), crate::memory::StoreId> {
    let root = TaskId::root();
    let mut out = BTreeMap::new();
    for (k, st) in side.mem.stores().iter().enumerate() {
        let info = side.prog.var(st.var);
        let keep = match set {
            CompareSet::NonLocal => st.owner == root && !info.is_private(),
            CompareSet::StrictAll => true,
        };
        if keep {
            out.insert(
                (st.owner.clone(), info.name.clone()),
                k as crate::memory::StoreId,
            );
        }
    }
    out
}

/// Compares the final memories of two programs.
pub fn check_equiv(a: Side, b: Side, opts: &EquivOptions) -> Result<EquivReport, RuleError> {
    let ka = comparison_keys(&a, opts.compare_set);
    let kb = comparison_keys(&b, opts.compare_set);
    let keys: BTreeSet<&(TaskId, String)> = ka.keys().chain(kb.keys()).collect();
    let mut na = Normalizer::new(opts);
    let mut nb = Normalizer::new(opts);
    let mut proven = FxHashSet::default();
    let mut report = EquivReport {
        verdict: Verdict::Equivalent,
        compare_set: opts.compare_set,
        variables: keys.len(),
        cells: 0,
        mismatched_cells: 0,
        first: None,
        rules_fired: BTreeMap::new(),
    };
    for key in keys {
        let cells_a = ka.get(key).map(|&s| &a.mem.store(s).cells);
        let cells_b = kb.get(key).map(|&s| &b.mem.store(s).cells);
        let mut idx: BTreeSet<&Index> = BTreeSet::new();
        idx.extend(cells_a.into_iter().flat_map(|c| c.keys()));
        idx.extend(cells_b.into_iter().flat_map(|c| c.keys()));
        for i in idx {
            report.cells += 1;
            let va = cells_a.and_then(|c| c.get(i)).copied();
            let vb = cells_b.and_then(|c| c.get(i)).copied();
            let va = va.map(|v| na.value(a.pool, v)).transpose()?;
            let vb = vb.map(|v| nb.value(b.pool, v)).transpose()?;
            let same = match (va, vb) {
                (None, None) => true,
                (Some(Value::Sym(x)), Some(Value::Sym(y))) => {
                    a.pool.same_as(x, b.pool, y, &mut proven)
                }
                (Some(x), Some(y)) => x == y,
                _ => false,
            };
            if same {
                continue;
            }
            report.mismatched_cells += 1;
            if report.first.is_none() {
                report.first = Some(describe(&a, &b, key, i, va, vb));
            }
        }
    }
    if report.mismatched_cells > 0 {
        report.verdict = Verdict::Mismatch;
    }
    for (k, v) in na.fired.into_iter().chain(nb.fired) {
        *report.rules_fired.entry(k).or_default() += v;
    }
    Ok(report)
}

fn value_line(pool: &SymPool, v: Option<Value>) -> Option<u32> {
    match v {
        Some(Value::Sym(r)) => Some(pool.meta(r).line),
        _ => None,
    }
}

fn describe(
    a: &Side,
    b: &Side,
    key: &(TaskId, String),
    i: &Index,
    va: Option<Value>,
    vb: Option<Value>,
) -> Mismatch {
    let (da, db) = first_difference(a.pool, b.pool, va, vb);
    Mismatch {
        task: key.0.to_string(),
        var: key.1.clone(),
        index: i.to_string(),
        left: va.map(|v| a.pool.render_value(v, RENDER_LIMIT)),
        right: vb.map(|v| b.pool.render_value(v, RENDER_LIMIT)),
        left_line: value_line(a.pool, va),
        right_line: value_line(b.pool, vb),
        node_left: da.map(|v| a.pool.render_value(v, RENDER_LIMIT)),
        node_right: db.map(|v| b.pool.render_value(v, RENDER_LIMIT)),
        left_value: va,
        right_value: vb,
        diff_pair: (da, db),
    }
}

fn same_structure(pa: &SymPool, pb: &SymPool, x: Value, y: Value) -> bool {
    match (x, y) {
        (Value::Sym(p), Value::Sym(q)) => pa.structural_hash(p) == pb.structural_hash(q),
        _ => x == y,
    }
}

/// Walks both values in lockstep and returns the topmost pair that differs
/// other than by a single differing child.
fn first_difference(
    pa: &SymPool,
    pb: &SymPool,
    va: Option<Value>,
    vb: Option<Value>,
) -> (Option<Value>, Option<Value>) {
    let (Some(mut x), Some(mut y)) = (va, vb) else {
        return (va, vb);
    };
    loop {
        let (Value::Sym(p), Value::Sym(q)) = (x, y) else {
            return (Some(x), Some(y));
        };
        let (SymNode::Op { op: o1, args: a1 }, SymNode::Op { op: o2, args: a2 }) =
            (pa.node(p), pb.node(q))
        else {
            return (Some(x), Some(y));
        };
        if o1 != o2 || a1.len() != a2.len() {
            return (Some(x), Some(y));
        }
        let diff: Vec<usize> = (0..a1.len())
            .filter(|&k| !same_structure(pa, pb, Value::Sym(a1[k]), Value::Sym(a2[k])))
            .collect();
        if diff.len() != 1 {
            return (Some(x), Some(y));
        }
        x = Value::Sym(a1[diff[0]]);
        y = Value::Sym(a2[diff[0]]);
    }
}

fn dot_cdag(
    out: &mut String,
    prefix: &str,
    title: &str,
    pool: &SymPool,
    v: Option<Value>,
    mark: Option<Value>,
) {
    let _ = writeln!(
        out,
        "  subgraph cluster_{prefix} {{\n    label=\"{title}\";"
    );
    let Some(v) = v else {
        let _ = writeln!(
            out,
            "    {prefix}_undef [label=\"undefined\", style=filled, fillcolor=salmon];\n  }}"
        );
        return;
    };
    let fill = |hit: bool| {
        if hit {
            ", style=filled, fillcolor=salmon"
        } else {
            ""
        }
    };
    match v {
        Value::Sym(root) => {
            let mut seen = rustc_hash::FxHashSet::default();
            let mut stack = vec![root];
            let mut edges = Vec::new();
            while let Some(n) = stack.pop() {
                if !seen.insert(n) {
                    continue;
                }
                let hit = mark == Some(Value::Sym(n));
                let label = match pool.node(n) {
                    SymNode::Leaf { name, index, .. } => format!("{}{index}", pool.name(*name)),
                    SymNode::Const(s) => s.to_string(),
                    SymNode::Op { op, args } => {
                        for (k, a) in args.iter().enumerate() {
                            edges.push((n, *a, k));
                            stack.push(*a);
                        }
                        op.symbol().to_string()
                    }
                };
                let label = format!("{label}\\nline {}", pool.meta(n).line).replace('"', "\\\"");
                let _ = writeln!(out, "    {prefix}{} [label=\"{label}\"{}];", n.0, fill(hit));
            }
            for (from, to, k) in edges {
                let _ = writeln!(
                    out,
                    "    {prefix}{} -> {prefix}{} [label=\"{k}\"];",
                    from.0, to.0
                );
            }
        }
        other => {
            let label = pool.render_value(other, 64).replace('"', "\\\"");
            let _ = writeln!(
                out,
                "    {prefix}_c [label=\"{label}\"{}];",
                fill(mark == Some(other))
            );
        }
    }
    out.push_str("  }\n");
}

/// Dot rendering of both CDAGs of the first mismatched cell, with the first
/// differing node pair filled.
pub fn diff_dot(m: &Mismatch, left: &SymPool, right: &SymPool) -> String {
    let mut out = String::from("digraph diff {\n  node [shape=box, fontname=\"monospace\"];\n");
    let cell = format!("{}{}", m.var, m.index).replace('"', "\\\"");
    dot_cdag(
        &mut out,
        "a",
        &format!("A: {cell}"),
        left,
        m.left_value,
        m.diff_pair.0,
    );
    dot_cdag(
        &mut out,
        "b",
        &format!("B: {cell}"),
        right,
        m.right_value,
        m.diff_pair.1,
    );
    out.push_str("}\n");
    out
}
