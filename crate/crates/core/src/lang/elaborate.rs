//! Lowering from the surface tree to [`CoreProgram`].
//!
//! Steps, in order: `for` desugaring and block flattening, name resolution
//! with renaming of block-scoped names, call inlining, semaphore-array
//! inference, kind checking, async capture analysis and statement numbering.

use rustc_hash::{FxHashMap, FxHashSet};

use super::ast::*;
use super::core_ast::*;
use super::{ElabError, LangError};

pub fn elaborate(p: &Program) -> Result<CoreProgram, LangError> {
    let mut funcs = FxHashMap::default();
    for f in p.functions() {
        if funcs.insert(f.name.as_str(), f).is_some() {
            return Err(err(f.line, ElabError::DuplicateFunction(f.name.clone())));
        }
    }
    check_call_graph(&funcs)?;

    let mut e = Elab {
        funcs,
        vars: Vec::new(),
        globals: FxHashMap::default(),
        declared_anywhere: FxHashSet::default(),
        unresolved: FxHashMap::default(),
        implicit: Vec::new(),
        sem_use: FxHashSet::default(),
        data_use: FxHashMap::default(),
        inline_stack: Vec::new(),
        counter: 0,
    };
    e.collect_declared(p);

    let top: Vec<&Stmt> = p.statements().collect();
    for s in &top {
        if let StmtKind::Decl { name, kind, dims } = &s.kind {
            e.global_decl(name, *kind, dims, s.line)?;
        }
    }

    let mut root = Vec::new();
    let mut scopes = vec![FxHashMap::default()];
    for s in &top {
        match &s.kind {
            StmtKind::Decl { name, .. } => root.push(mk(
                CStmtKind::Decl {
                    var: e.globals[name.as_str()],
                },
                s.line,
            )),
            _ => e.stmt(s, &mut scopes, &mut root, None)?,
        }
    }

    e.infer_semaphores()?;
    fix_sem_args(&mut root, &e.vars);
    for s in &mut root {
        type_stmt(s, &e.vars)?;
    }
    annotate_captures(&mut root);

    let mut prologue: Vec<CStmt> = e
        .implicit
        .iter()
        .map(|&(var, line)| mk(CStmtKind::Decl { var }, line))
        .collect();
    prologue.append(&mut root);
    let mut root = prologue;

    let mut next = 0;
    number(&mut root, &mut next);
    Ok(CoreProgram {
        root,
        vars: e.vars,
        stmt_count: next,
    })
}

fn err(line: u32, kind: ElabError) -> LangError {
    LangError::Elab { line, kind }
}

fn mk(kind: CStmtKind, line: u32) -> CStmt {
    CStmt { kind, line, id: 0 }
}

type Scopes = Vec<FxHashMap<String, VarId>>;

struct FnCtx {
    ret: Option<VarId>,
}

struct Elab<'a> {
    funcs: FxHashMap<&'a str, &'a FuncDef>,
    vars: Vec<VarInfo>,
    globals: FxHashMap<String, VarId>,
    declared_anywhere: FxHashSet<String>,
    unresolved: FxHashMap<String, VarId>,
    /// Implicitly declared globals with the line of their first use.
    implicit: Vec<(VarId, u32)>,
    sem_use: FxHashSet<VarId>,
    /// First line where a variable is used as data.
    data_use: FxHashMap<VarId, u32>,
    inline_stack: Vec<String>,
    counter: u32,
}

impl<'a> Elab<'a> {
    fn collect_declared(&mut self, p: &Program) {
        fn walk(body: &[Stmt], out: &mut FxHashSet<String>) {
            for s in body {
                match &s.kind {
                    StmtKind::Decl { name, .. } => {
                        out.insert(name.clone());
                    }
                    StmtKind::Async(b) | StmtKind::Block(b) | StmtKind::While { body: b, .. } => {
                        walk(b, out)
                    }
                    StmtKind::If {
                        then_body,
                        else_body,
                        ..
                    } => {
                        walk(then_body, out);
                        walk(else_body, out);
                    }
                    StmtKind::For {
                        init, step, body, ..
                    } => {
                        walk(
                            init.as_deref().map(std::slice::from_ref).unwrap_or(&[]),
                            out,
                        );
                        walk(
                            step.as_deref().map(std::slice::from_ref).unwrap_or(&[]),
                            out,
                        );
                        walk(body, out);
                    }
                    _ => {}
                }
            }
        }
        for item in &p.items {
            match item {
                Item::Stmt(s) => walk(std::slice::from_ref(s), &mut self.declared_anywhere),
                Item::Func(f) => walk(&f.body, &mut self.declared_anywhere),
            }
        }
    }

    fn new_var(&mut self, name: String, source_name: &str, kind: ElemKind, global: bool) -> VarId {
        let id = self.vars.len() as VarId;
        self.vars.push(VarInfo {
            name,
            source_name: source_name.to_string(),
            kind,
            global,
            unresolved: false,
            dims: Vec::new(),
        });
        id
    }

    fn fresh_name(&mut self, base: &str) -> String {
        self.counter += 1;
        format!("{base}.{}", self.counter)
    }

    fn global_decl(
        &mut self,
        name: &str,
        kind: ElemKind,
        dims: &[Option<u32>],
        line: u32,
    ) -> Result<(), LangError> {
        if let Some(&id) = self.globals.get(name) {
            if self.vars[id as usize].kind != kind {
                return Err(err(line, ElabError::KindRedeclared(name.to_string())));
            }
            return Ok(());
        }
        let id = self.new_var(name.to_string(), name, kind, true);
        self.vars[id as usize].dims = dims.to_vec();
        self.globals.insert(name.to_string(), id);
        Ok(())
    }

    fn lookup(&mut self, name: &str, scopes: &Scopes, line: u32) -> VarId {
        for frame in scopes.iter().rev() {
            if let Some(&id) = frame.get(name) {
                return id;
            }
        }
        if let Some(&id) = self.globals.get(name) {
            return id;
        }
        if self.declared_anywhere.contains(name) {
            // declared somewhere, just not visible here: writes fail at run time
            if let Some(&id) = self.unresolved.get(name) {
                return id;
            }
            let id = self.new_var(name.to_string(), name, ElemKind::Int, false);
            self.vars[id as usize].unresolved = true;
            self.unresolved.insert(name.to_string(), id);
            return id;
        }
        let id = self.new_var(name.to_string(), name, ElemKind::Int, true);
        self.globals.insert(name.to_string(), id);
        self.implicit.push((id, line));
        id
    }

    fn data_var(&mut self, name: &str, scopes: &Scopes, line: u32) -> VarId {
        let id = self.lookup(name, scopes, line);
        self.data_use.entry(id).or_insert(line);
        id
    }

    fn block(
        &mut self,
        body: &[Stmt],
        scopes: &mut Scopes,
        fctx: Option<&FnCtx>,
    ) -> Result<Vec<CStmt>, LangError> {
        scopes.push(FxHashMap::default());
        let mut out = Vec::new();
        let r = body
            .iter()
            .try_for_each(|s| self.stmt(s, scopes, &mut out, fctx));
        scopes.pop();
        r.map(|_| out)
    }

    fn stmt(
        &mut self,
        s: &Stmt,
        scopes: &mut Scopes,
        out: &mut Vec<CStmt>,
        fctx: Option<&FnCtx>,
    ) -> Result<(), LangError> {
        let line = s.line;
        match &s.kind {
            StmtKind::Decl { name, kind, dims } => {
                let fresh = self.fresh_name(name);
                let id = self.new_var(fresh, name, *kind, false);
                self.vars[id as usize].dims = dims.clone();
                scopes.last_mut().unwrap().insert(name.clone(), id);
                out.push(mk(CStmtKind::Decl { var: id }, line));
            }
            StmtKind::Assign {
                name,
                indices,
                value,
            } => {
                let mut pre = Vec::new();
                let idx = self.exprs(indices, scopes, &mut pre, line)?;
                let value = self.expr(value, scopes, &mut pre, line)?;
                let var = self.data_var(name, scopes, line);
                out.append(&mut pre);
                out.push(mk(CStmtKind::Assign { var, idx, value }, line));
            }
            StmtKind::Async(body) => {
                let body = self.block(body, scopes, fctx)?;
                out.push(mk(
                    CStmtKind::Async {
                        body,
                        captures: Vec::new(),
                    },
                    line,
                ));
            }
            StmtKind::Sem { op, sem, val } => {
                let mut pre = Vec::new();
                let sem = match sem {
                    Expr::Load { name, indices } => {
                        let idx = self.exprs(indices, scopes, &mut pre, line)?;
                        let var = self.lookup(name, scopes, line);
                        self.sem_use.insert(var);
                        SemArg::Cell { var, idx }
                    }
                    other => SemArg::Num(self.expr(other, scopes, &mut pre, line)?),
                };
                let val = self.expr(val, scopes, &mut pre, line)?;
                out.append(&mut pre);
                out.push(mk(CStmtKind::Sem { op: *op, sem, val }, line));
            }
            StmtKind::While { cond, body } => {
                self.while_loop(cond, body, None, scopes, out, fctx, line)?;
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                let mut pre = Vec::new();
                let cond = self.expr(cond, scopes, &mut pre, line)?;
                let then_body = self.block(then_body, scopes, fctx)?;
                let else_body = self.block(else_body, scopes, fctx)?;
                out.append(&mut pre);
                out.push(mk(
                    CStmtKind::If {
                        cond,
                        then_body,
                        else_body,
                    },
                    line,
                ));
            }
            StmtKind::Block(body) => {
                let mut b = self.block(body, scopes, fctx)?;
                out.append(&mut b);
            }
            StmtKind::For {
                init,
                cond,
                step,
                body,
            } => {
                scopes.push(FxHashMap::default());
                let r = (|| {
                    if let Some(init) = init {
                        self.stmt(init, scopes, out, fctx)?;
                    }
                    self.while_loop(cond, body, step.as_deref(), scopes, out, fctx, line)
                })();
                scopes.pop();
                r?;
            }
            StmtKind::Call { name, args } => {
                if !self.funcs.contains_key(name.as_str()) {
                    return Err(err(line, ElabError::UnknownFunction(name.clone())));
                }
                let mut pre = Vec::new();
                self.inline(name, args, scopes, &mut pre, line)?;
                out.append(&mut pre);
            }
            StmtKind::Return(value) => {
                // only reachable as the trailing statement of an inlined body
                let Some(ctx) = fctx else {
                    return Err(err(line, ElabError::MisplacedReturn));
                };
                match (ctx.ret, value) {
                    (Some(ret), Some(v)) => {
                        let mut pre = Vec::new();
                        let value = self.expr(v, scopes, &mut pre, line)?;
                        out.append(&mut pre);
                        out.push(mk(
                            CStmtKind::Assign {
                                var: ret,
                                idx: vec![CExpr::Int(0)],
                                value,
                            },
                            line,
                        ));
                    }
                    (None, None) => {}
                    _ => return Err(err(line, ElabError::MisplacedReturn)),
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn while_loop(
        &mut self,
        cond: &Expr,
        body: &[Stmt],
        step: Option<&Stmt>,
        scopes: &mut Scopes,
        out: &mut Vec<CStmt>,
        fctx: Option<&FnCtx>,
        line: u32,
    ) -> Result<(), LangError> {
        let mut pre = Vec::new();
        let cond = self.expr(cond, scopes, &mut pre, line)?;
        let mut cbody = self.block(body, scopes, fctx)?;
        if let Some(step) = step {
            self.stmt(step, scopes, &mut cbody, fctx)?;
        }
        // calls in the condition are re-evaluated before every test
        cbody.extend(pre.iter().cloned());
        out.append(&mut pre);
        out.push(mk(CStmtKind::While { cond, body: cbody }, line));
        Ok(())
    }

    fn exprs(
        &mut self,
        es: &[Expr],
        scopes: &mut Scopes,
        pre: &mut Vec<CStmt>,
        line: u32,
    ) -> Result<Vec<CExpr>, LangError> {
        es.iter().map(|e| self.expr(e, scopes, pre, line)).collect()
    }

    fn expr(
        &mut self,
        e: &Expr,
        scopes: &mut Scopes,
        pre: &mut Vec<CStmt>,
        line: u32,
    ) -> Result<CExpr, LangError> {
        Ok(match e {
            Expr::Int(v) => CExpr::Int(*v),
            Expr::Float(v) => CExpr::Float(*v),
            Expr::Load { name, indices } => {
                let idx = self.exprs(indices, scopes, pre, line)?;
                let var = self.data_var(name, scopes, line);
                CExpr::Load { var, idx }
            }
            Expr::Var(name) => return Err(err(line, ElabError::BareName(name.clone()))),
            Expr::Unary(op, a) => CExpr::Unary(*op, Box::new(self.expr(a, scopes, pre, line)?)),
            Expr::Binary(op, a, b) => {
                let a = self.expr(a, scopes, pre, line)?;
                let b = self.expr(b, scopes, pre, line)?;
                CExpr::Binary(*op, Box::new(a), Box::new(b))
            }
            Expr::Ternary(c, a, b) => {
                let c = self.expr(c, scopes, pre, line)?;
                let a = self.expr(a, scopes, pre, line)?;
                let b = self.expr(b, scopes, pre, line)?;
                CExpr::Ternary(Box::new(c), Box::new(a), Box::new(b))
            }
            Expr::Call { name, args } => {
                if self.funcs.contains_key(name.as_str()) {
                    match self.inline(name, args, scopes, pre, line)? {
                        Some(ret) => CExpr::Load {
                            var: ret,
                            idx: vec![CExpr::Int(0)],
                        },
                        None => return Err(err(line, ElabError::VoidValue(name.clone()))),
                    }
                } else if name == "min" || name == "max" {
                    if args.len() != 2 {
                        return Err(err(
                            line,
                            ElabError::Arity {
                                name: name.clone(),
                                expected: 2,
                                found: args.len(),
                            },
                        ));
                    }
                    let op = if name == "min" {
                        BinOp::Min
                    } else {
                        BinOp::Max
                    };
                    let a = self.expr(&args[0], scopes, pre, line)?;
                    let b = self.expr(&args[1], scopes, pre, line)?;
                    CExpr::Binary(op, Box::new(a), Box::new(b))
                } else {
                    return Err(err(line, ElabError::UnknownFunction(name.clone())));
                }
            }
        })
    }

    /// Inlines one call into `pre`, returning the variable holding the result.
    fn inline(
        &mut self,
        name: &str,
        args: &[Expr],
        scopes: &mut Scopes,
        pre: &mut Vec<CStmt>,
        line: u32,
    ) -> Result<Option<VarId>, LangError> {
        let f: &FuncDef = self.funcs[name];
        if self.inline_stack.iter().any(|n| n == name) {
            let mut cycle = self.inline_stack.clone();
            cycle.push(name.to_string());
            return Err(err(line, ElabError::Recursion(cycle.join(" -> "))));
        }
        if f.params.len() != args.len() {
            return Err(err(
                line,
                ElabError::Arity {
                    name: name.to_string(),
                    expected: f.params.len(),
                    found: args.len(),
                },
            ));
        }
        self.counter += 1;
        let inst = self.counter;
        let mut frame = FxHashMap::default();
        for (p, a) in f.params.iter().zip(args) {
            let id = match a {
                Expr::Var(arg) => {
                    let id = self.data_var(arg, scopes, line);
                    if self.vars[id as usize].kind != p.kind {
                        return Err(err(
                            line,
                            ElabError::MixedKinds(format!("argument `{arg}` of `{name}`")),
                        ));
                    }
                    id
                }
                value => {
                    let value = self.expr(value, scopes, pre, line)?;
                    let id =
                        self.new_var(format!("{name}.{}.{inst}", p.name), &p.name, p.kind, false);
                    pre.push(mk(CStmtKind::Decl { var: id }, line));
                    pre.push(mk(
                        CStmtKind::Assign {
                            var: id,
                            idx: vec![CExpr::Int(0)],
                            value,
                        },
                        line,
                    ));
                    id
                }
            };
            frame.insert(p.name.clone(), id);
        }
        let ret = match f.ret {
            Some(kind) => {
                let id = self.new_var(format!("{name}.ret.{inst}"), "ret", kind, false);
                pre.push(mk(CStmtKind::Decl { var: id }, line));
                Some(id)
            }
            None => None,
        };
        let (last, init) = match f.body.split_last() {
            Some((last, init)) if matches!(last.kind, StmtKind::Return(_)) => (Some(last), init),
            _ => (None, &f.body[..]),
        };
        if ret.is_some() && last.is_none() {
            return Err(err(f.line, ElabError::MisplacedReturn));
        }
        if let Some(bad) = find_return(init) {
            return Err(err(bad, ElabError::MisplacedReturn));
        }

        self.inline_stack.push(name.to_string());
        let ctx = FnCtx { ret };
        // the callee sees its parameters and globals, not the caller's locals
        let mut fscopes: Scopes = vec![frame, FxHashMap::default()];
        let r = (|| {
            for s in init {
                self.stmt(s, &mut fscopes, pre, Some(&ctx))?;
            }
            if let Some(last) = last {
                self.stmt(last, &mut fscopes, pre, Some(&ctx))?;
            }
            Ok(())
        })();
        self.inline_stack.pop();
        r?;
        Ok(ret)
    }

    fn infer_semaphores(&mut self) -> Result<(), LangError> {
        for &(id, _) in &self.implicit {
            if self.sem_use.contains(&id) && !self.data_use.contains_key(&id) {
                self.vars[id as usize].kind = ElemKind::Semaphore;
            }
        }
        let mut bad: Vec<(u32, VarId)> = self
            .data_use
            .iter()
            .filter(|(id, _)| self.vars[**id as usize].kind == ElemKind::Semaphore)
            .map(|(id, line)| (*line, *id))
            .collect();
        bad.sort();
        if let Some(&(line, id)) = bad.first() {
            return Err(err(
                line,
                ElabError::SemaphoreAsData(self.vars[id as usize].source_name.clone()),
            ));
        }
        Ok(())
    }
}

fn find_return(body: &[Stmt]) -> Option<u32> {
    body.iter().find_map(|s| match &s.kind {
        StmtKind::Return(_) => Some(s.line),
        StmtKind::Async(b)
        | StmtKind::Block(b)
        | StmtKind::While { body: b, .. }
        | StmtKind::For { body: b, .. } => find_return(b),
        StmtKind::If {
            then_body,
            else_body,
            ..
        } => find_return(then_body).or_else(|| find_return(else_body)),
        _ => None,
    })
}

fn check_call_graph(funcs: &FxHashMap<&str, &FuncDef>) -> Result<(), LangError> {
    fn calls_in_expr(e: &Expr, out: &mut Vec<String>) {
        match e {
            Expr::Call { name, args } => {
                out.push(name.clone());
                args.iter().for_each(|a| calls_in_expr(a, out));
            }
            Expr::Load { indices, .. } => indices.iter().for_each(|a| calls_in_expr(a, out)),
            Expr::Unary(_, a) => calls_in_expr(a, out),
            Expr::Binary(_, a, b) => {
                calls_in_expr(a, out);
                calls_in_expr(b, out);
            }
            Expr::Ternary(c, a, b) => {
                calls_in_expr(c, out);
                calls_in_expr(a, out);
                calls_in_expr(b, out);
            }
            Expr::Int(_) | Expr::Float(_) | Expr::Var(_) => {}
        }
    }
    fn calls_in(body: &[Stmt], out: &mut Vec<String>) {
        for s in body {
            match &s.kind {
                StmtKind::Decl { .. } => {}
                StmtKind::Assign { indices, value, .. } => {
                    indices.iter().for_each(|e| calls_in_expr(e, out));
                    calls_in_expr(value, out);
                }
                StmtKind::Async(b) | StmtKind::Block(b) => calls_in(b, out),
                StmtKind::Sem { sem, val, .. } => {
                    calls_in_expr(sem, out);
                    calls_in_expr(val, out);
                }
                StmtKind::While { cond, body } => {
                    calls_in_expr(cond, out);
                    calls_in(body, out);
                }
                StmtKind::If {
                    cond,
                    then_body,
                    else_body,
                } => {
                    calls_in_expr(cond, out);
                    calls_in(then_body, out);
                    calls_in(else_body, out);
                }
                StmtKind::For {
                    init,
                    cond,
                    step,
                    body,
                } => {
                    calls_in(
                        init.as_deref().map(std::slice::from_ref).unwrap_or(&[]),
                        out,
                    );
                    calls_in_expr(cond, out);
                    calls_in(
                        step.as_deref().map(std::slice::from_ref).unwrap_or(&[]),
                        out,
                    );
                    calls_in(body, out);
                }
                StmtKind::Call { name, args } => {
                    out.push(name.clone());
                    args.iter().for_each(|a| calls_in_expr(a, out));
                }
                StmtKind::Return(v) => {
                    if let Some(v) = v {
                        calls_in_expr(v, out);
                    }
                }
            }
        }
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    fn visit<'a>(
        name: &'a str,
        funcs: &FxHashMap<&'a str, &'a FuncDef>,
        marks: &mut FxHashMap<&'a str, Mark>,
        path: &mut Vec<&'a str>,
    ) -> Result<(), LangError> {
        match marks.get(name) {
            Some(Mark::Done) => return Ok(()),
            Some(Mark::Active) => {
                let start = path.iter().position(|n| *n == name).unwrap_or(0);
                let mut cycle: Vec<&str> = path[start..].to_vec();
                cycle.push(name);
                let line = funcs[name].line;
                return Err(err(line, ElabError::Recursion(cycle.join(" -> "))));
            }
            None => {}
        }
        marks.insert(name, Mark::Active);
        path.push(name);
        let f = funcs[name];
        let mut callees = Vec::new();
        calls_in(&f.body, &mut callees);
        for c in callees {
            if let Some((k, _)) = funcs.get_key_value(c.as_str()) {
                visit(k, funcs, marks, path)?;
            }
        }
        path.pop();
        marks.insert(name, Mark::Done);
        Ok(())
    }

    let mut names: Vec<&str> = funcs.keys().copied().collect();
    names.sort();
    let mut marks = FxHashMap::default();
    for n in names {
        visit(n, funcs, &mut marks, &mut Vec::new())?;
    }
    Ok(())
}

/// Semaphore operands that name a non-semaphore array are plain integer reads.
fn fix_sem_args(body: &mut [CStmt], vars: &[VarInfo]) {
    for s in body {
        match &mut s.kind {
            CStmtKind::Sem { sem, .. } => {
                if let SemArg::Cell { var, idx } = sem {
                    if vars[*var as usize].kind != ElemKind::Semaphore {
                        *sem = SemArg::Num(CExpr::Load {
                            var: *var,
                            idx: std::mem::take(idx),
                        });
                    }
                }
            }
            CStmtKind::Async { body, .. } | CStmtKind::While { body, .. } => {
                fix_sem_args(body, vars)
            }
            CStmtKind::If {
                then_body,
                else_body,
                ..
            } => {
                fix_sem_args(then_body, vars);
                fix_sem_args(else_body, vars);
            }
            _ => {}
        }
    }
}

fn kind_err(line: u32, op: &str) -> LangError {
    err(line, ElabError::MixedKinds(op.to_string()))
}

/// Coerces an integer literal operand so both sides share `want`.
fn coerce(e: &mut CExpr, have: ElemKind, want: ElemKind) -> bool {
    if have == want {
        return true;
    }
    match e {
        CExpr::Int(v) if want == ElemKind::Float => {
            *e = CExpr::Float(*v as f64);
            true
        }
        _ => false,
    }
}

fn unify(a: &mut CExpr, ka: ElemKind, b: &mut CExpr, kb: ElemKind) -> Option<ElemKind> {
    if ka == kb {
        Some(ka)
    } else if coerce(a, ka, kb) {
        Some(kb)
    } else if coerce(b, kb, ka) {
        Some(ka)
    } else {
        None
    }
}

fn type_expr(e: &mut CExpr, vars: &[VarInfo], line: u32) -> Result<ElemKind, LangError> {
    Ok(match e {
        CExpr::Int(_) => ElemKind::Int,
        CExpr::Float(_) => ElemKind::Float,
        CExpr::Load { var, idx } => {
            for i in idx.iter_mut() {
                let k = type_expr(i, vars, line)?;
                if k != ElemKind::Int {
                    return Err(kind_err(line, "array subscript"));
                }
            }
            vars[*var as usize].kind
        }
        CExpr::Unary(op, a) => {
            let k = type_expr(a, vars, line)?;
            match op {
                UnOp::Neg => k,
                UnOp::Not => ElemKind::Int,
                UnOp::BitNot => {
                    if k != ElemKind::Int {
                        return Err(err(line, ElabError::IntOnly("~".into())));
                    }
                    k
                }
            }
        }
        CExpr::Binary(op, a, b) => {
            let ka = type_expr(a, vars, line)?;
            let kb = type_expr(b, vars, line)?;
            if op.is_logical() {
                return Ok(ElemKind::Int);
            }
            let k = unify(a, ka, b, kb).ok_or_else(|| kind_err(line, op.symbol()))?;
            if op.int_only() && k != ElemKind::Int {
                return Err(err(line, ElabError::IntOnly(op.symbol().into())));
            }
            if op.is_comparison() {
                ElemKind::Int
            } else {
                k
            }
        }
        CExpr::Ternary(c, a, b) => {
            type_expr(c, vars, line)?;
            let ka = type_expr(a, vars, line)?;
            let kb = type_expr(b, vars, line)?;
            unify(a, ka, b, kb).ok_or_else(|| kind_err(line, "?:"))?
        }
    })
}

fn type_stmt(s: &mut CStmt, vars: &[VarInfo]) -> Result<(), LangError> {
    let line = s.line;
    let expect_int = |e: &mut CExpr, what: &str| -> Result<(), LangError> {
        let k = type_expr(e, vars, line)?;
        if coerce(e, k, ElemKind::Int) {
            Ok(())
        } else {
            Err(kind_err(line, what))
        }
    };
    match &mut s.kind {
        CStmtKind::Decl { .. } => {}
        CStmtKind::Assign { var, idx, value } => {
            for i in idx.iter_mut() {
                expect_int(i, "array subscript")?;
            }
            let want = vars[*var as usize].kind;
            let k = type_expr(value, vars, line)?;
            if !coerce(value, k, want) {
                return Err(kind_err(line, "assignment"));
            }
        }
        CStmtKind::Async { body, .. } => {
            for s in body {
                type_stmt(s, vars)?;
            }
        }
        CStmtKind::While { cond, body } => {
            type_expr(cond, vars, line)?;
            for s in body {
                type_stmt(s, vars)?;
            }
        }
        CStmtKind::If {
            cond,
            then_body,
            else_body,
        } => {
            type_expr(cond, vars, line)?;
            for s in then_body.iter_mut().chain(else_body.iter_mut()) {
                type_stmt(s, vars)?;
            }
        }
        CStmtKind::Sem { sem, val, .. } => {
            match sem {
                SemArg::Cell { idx, .. } => {
                    for i in idx.iter_mut() {
                        expect_int(i, "array subscript")?;
                    }
                }
                SemArg::Num(e) => expect_int(e, "semaphore id")?,
            }
            expect_int(val, "semaphore value")?;
        }
    }
    Ok(())
}

fn expr_reads(e: &CExpr, out: &mut FxHashSet<VarId>) {
    e.for_each_load(&mut |v, _| {
        out.insert(v);
    });
}

/// Variables read anywhere in `body`, including nested tasks.
fn reads_all(body: &[CStmt], out: &mut FxHashSet<VarId>) {
    for s in body {
        match &s.kind {
            CStmtKind::Decl { .. } => {}
            CStmtKind::Assign { idx, value, .. } => {
                idx.iter().for_each(|e| expr_reads(e, out));
                expr_reads(value, out);
            }
            CStmtKind::Async { body, .. } => reads_all(body, out),
            CStmtKind::Sem { sem, val, .. } => {
                match sem {
                    SemArg::Cell { idx, .. } => idx.iter().for_each(|e| expr_reads(e, out)),
                    SemArg::Num(e) => expr_reads(e, out),
                }
                expr_reads(val, out);
            }
            CStmtKind::While { cond, body } => {
                expr_reads(cond, out);
                reads_all(body, out);
            }
            CStmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                expr_reads(cond, out);
                reads_all(then_body, out);
                reads_all(else_body, out);
            }
        }
    }
}

/// Variables assigned in `body`; descends into nested tasks only if `nested`.
fn writes(body: &[CStmt], nested: bool, out: &mut FxHashSet<VarId>) {
    for s in body {
        match &s.kind {
            CStmtKind::Assign { var, .. } => {
                out.insert(*var);
            }
            CStmtKind::Async { body, .. } => {
                if nested {
                    writes(body, nested, out);
                }
            }
            CStmtKind::While { body, .. } => writes(body, nested, out),
            CStmtKind::If {
                then_body,
                else_body,
                ..
            } => {
                writes(then_body, nested, out);
                writes(else_body, nested, out);
            }
            CStmtKind::Decl { .. } | CStmtKind::Sem { .. } => {}
        }
    }
}

fn annotate_captures(task_body: &mut [CStmt]) {
    let mut spawner_writes = FxHashSet::default();
    writes(task_body, false, &mut spawner_writes);
    fn visit(body: &mut [CStmt], spawner_writes: &FxHashSet<VarId>) {
        for s in body {
            match &mut s.kind {
                CStmtKind::Async { body, captures } => {
                    let mut reads = FxHashSet::default();
                    reads_all(body, &mut reads);
                    let mut own = FxHashSet::default();
                    writes(body, true, &mut own);
                    let mut c: Vec<VarId> = reads
                        .into_iter()
                        .filter(|v| spawner_writes.contains(v) && !own.contains(v))
                        .collect();
                    c.sort_unstable();
                    *captures = c;
                    annotate_captures(body);
                }
                CStmtKind::While { body, .. } => visit(body, spawner_writes),
                CStmtKind::If {
                    then_body,
                    else_body,
                    ..
                } => {
                    visit(then_body, spawner_writes);
                    visit(else_body, spawner_writes);
                }
                _ => {}
            }
        }
    }
    visit(task_body, &spawner_writes);
}

fn number(body: &mut [CStmt], next: &mut u32) {
    for s in body {
        s.id = *next;
        *next += 1;
        match &mut s.kind {
            CStmtKind::Async { body, .. } | CStmtKind::While { body, .. } => number(body, next),
            CStmtKind::If {
                then_body,
                else_body,
                ..
            } => {
                number(then_body, next);
                number(else_body, next);
            }
            _ => {}
        }
    }
}
