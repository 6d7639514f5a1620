//! Recursive-descent parser for `.pir` source.

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::LangError;

const KEYWORDS: &[&str] = &[
    "int",
    "float",
    "semaphore",
    "void",
    "async",
    "set",
    "wait",
    "acquire",
    "release",
    "while",
    "for",
    "if",
    "else",
    "return",
];

pub fn parse(src: &SourceProgram) -> Result<Program, LangError> {
    parse_str(&src.text)
}

pub fn parse_str(text: &str) -> Result<Program, LangError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, pos: 0 };
    let mut items = Vec::new();
    while !p.at_eof() {
        p.item(&mut items)?;
    }
    Ok(Program { items })
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, LangError>;

fn elem_kind(word: &str) -> Option<ElemKind> {
    match word {
        "int" => Some(ElemKind::Int),
        "float" => Some(ElemKind::Float),
        "semaphore" => Some(ElemKind::Semaphore),
        _ => None,
    }
}

fn sem_op(word: &str) -> Option<SemOp> {
    match word {
        "set" => Some(SemOp::Set),
        "wait" => Some(SemOp::Wait),
        "acquire" => Some(SemOp::Acquire),
        "release" => Some(SemOp::Release),
        _ => None,
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn line(&self) -> u32 {
        self.toks[self.pos].line
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> LangError {
        let t = &self.toks[self.pos];
        LangError::Parse {
            line: t.line,
            col: t.col,
            expected: expected.to_string(),
            found: t.tok.describe(),
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.error(&format!("`{p}`")))
        }
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == w)
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.error("identifier")),
        }
    }

    fn item(&mut self, items: &mut Vec<Item>) -> PResult<()> {
        // `int f(` / `void f(` start a function definition.
        let is_type =
            matches!(self.peek(), Tok::Ident(s) if s == "int" || s == "float" || s == "void");
        if is_type
            && matches!(self.peek_at(1), Tok::Ident(_))
            && matches!(self.peek_at(2), Tok::Punct("("))
        {
            items.push(Item::Func(self.func_def()?));
            return Ok(());
        }
        let mut v = Vec::new();
        self.stmt_into(&mut v)?;
        items.extend(v.into_iter().map(Item::Stmt));
        Ok(())
    }

    fn func_def(&mut self) -> PResult<FuncDef> {
        let line = self.line();
        let ret = match self.bump() {
            Tok::Ident(s) if s == "void" => None,
            Tok::Ident(s) => elem_kind(&s),
            _ => unreachable!(),
        };
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                let kind = match self.peek().clone() {
                    Tok::Ident(s) if s == "int" || s == "float" => {
                        self.bump();
                        elem_kind(&s).unwrap()
                    }
                    _ => return Err(self.error("parameter type `int` or `float`")),
                };
                let pname = self.ident()?;
                self.expect_punct("[")?;
                self.expect_punct("]")?;
                params.push(Param { name: pname, kind });
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        let body = self.block()?;
        Ok(FuncDef {
            name,
            ret,
            params,
            body,
            line,
        })
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_punct("{")?;
        let mut body = Vec::new();
        while !self.is_punct("}") {
            if self.at_eof() {
                return Err(self.error("`}`"));
            }
            self.stmt_into(&mut body)?;
        }
        self.bump();
        Ok(body)
    }

    /// Either a braced block or a single statement.
    fn body(&mut self) -> PResult<Vec<Stmt>> {
        if self.is_punct("{") {
            self.block()
        } else {
            let mut v = Vec::new();
            self.stmt_into(&mut v)?;
            Ok(v)
        }
    }

    /// Parses one statement, pushing one or more AST statements (a declaration
    /// list `int A[], B[];` expands to several).
    fn stmt_into(&mut self, out: &mut Vec<Stmt>) -> PResult<()> {
        let line = self.line();
        let word = match self.peek() {
            Tok::Ident(s) => Some(s.clone()),
            _ => None,
        };
        if let Some(w) = word.as_deref() {
            if let Some(kind) = elem_kind(w) {
                self.bump();
                loop {
                    let dline = self.line();
                    let name = self.ident()?;
                    let mut dims = Vec::new();
                    if !self.is_punct("[") {
                        return Err(self.error("`[` (all variables are arrays)"));
                    }
                    while self.eat_punct("[") {
                        match self.peek().clone() {
                            Tok::Int(n) if n >= 0 => {
                                self.bump();
                                dims.push(Some(n as u32));
                            }
                            _ => dims.push(None),
                        }
                        self.expect_punct("]")?;
                    }
                    out.push(Stmt {
                        kind: StmtKind::Decl { name, kind, dims },
                        line: dline,
                    });
                    if !self.eat_punct(",") {
                        break;
                    }
                }
                self.expect_punct(";")?;
                return Ok(());
            }
            if let Some(op) = sem_op(w) {
                if matches!(self.peek_at(1), Tok::Punct("(")) {
                    self.bump();
                    self.bump();
                    let sem = self.expr()?;
                    self.expect_punct(",")?;
                    let val = self.expr()?;
                    self.expect_punct(")")?;
                    self.expect_punct(";")?;
                    out.push(Stmt {
                        kind: StmtKind::Sem { op, sem, val },
                        line,
                    });
                    return Ok(());
                }
            }
            match w {
                "async" => {
                    self.bump();
                    let body = self.block()?;
                    out.push(Stmt {
                        kind: StmtKind::Async(body),
                        line,
                    });
                    return Ok(());
                }
                "while" => {
                    self.bump();
                    self.expect_punct("(")?;
                    let cond = self.expr()?;
                    self.expect_punct(")")?;
                    let body = self.body()?;
                    out.push(Stmt {
                        kind: StmtKind::While { cond, body },
                        line,
                    });
                    return Ok(());
                }
                "if" => {
                    self.bump();
                    self.expect_punct("(")?;
                    let cond = self.expr()?;
                    self.expect_punct(")")?;
                    let then_body = self.body()?;
                    let else_body = if self.is_word("else") {
                        self.bump();
                        self.body()?
                    } else {
                        Vec::new()
                    };
                    out.push(Stmt {
                        kind: StmtKind::If {
                            cond,
                            then_body,
                            else_body,
                        },
                        line,
                    });
                    return Ok(());
                }
                "for" => {
                    self.bump();
                    self.expect_punct("(")?;
                    let init = if self.is_punct(";") {
                        None
                    } else {
                        Some(Box::new(self.simple()?))
                    };
                    self.expect_punct(";")?;
                    let cond = self.expr()?;
                    self.expect_punct(";")?;
                    let step = if self.is_punct(")") {
                        None
                    } else {
                        Some(Box::new(self.simple()?))
                    };
                    self.expect_punct(")")?;
                    let body = self.body()?;
                    out.push(Stmt {
                        kind: StmtKind::For {
                            init,
                            cond,
                            step,
                            body,
                        },
                        line,
                    });
                    return Ok(());
                }
                "return" => {
                    self.bump();
                    let value = if self.is_punct(";") {
                        None
                    } else {
                        Some(self.expr()?)
                    };
                    self.expect_punct(";")?;
                    out.push(Stmt {
                        kind: StmtKind::Return(value),
                        line,
                    });
                    return Ok(());
                }
                "else" => return Err(self.error("statement (dangling `else`)")),
                _ => {}
            }
        }
        if self.is_punct("{") {
            let body = self.block()?;
            out.push(Stmt {
                kind: StmtKind::Block(body),
                line,
            });
            return Ok(());
        }
        let s = self.simple()?;
        self.expect_punct(";")?;
        out.push(s);
        Ok(())
    }

    /// Assignment, compound assignment, increment, or call statement (no `;`).
    fn simple(&mut self) -> PResult<Stmt> {
        let line = self.line();
        if self.is_punct("++") || self.is_punct("--") {
            let op = if self.eat_punct("++") {
                BinOp::Add
            } else {
                self.bump();
                BinOp::Sub
            };
            let (name, indices) = self.lvalue()?;
            let value = Expr::Binary(
                op,
                Box::new(Expr::Load {
                    name: name.clone(),
                    indices: indices.clone(),
                }),
                Box::new(Expr::Int(1)),
            );
            return Ok(Stmt {
                kind: StmtKind::Assign {
                    name,
                    indices,
                    value,
                },
                line,
            });
        }
        if matches!(self.peek(), Tok::Ident(_)) && matches!(self.peek_at(1), Tok::Punct("(")) {
            let name = self.ident()?;
            let args = self.call_args()?;
            return Ok(Stmt {
                kind: StmtKind::Call { name, args },
                line,
            });
        }
        let (name, indices) = self.lvalue()?;
        let load = || Expr::Load {
            name: name.clone(),
            indices: indices.clone(),
        };
        let compound = |p: &Parser| -> Option<BinOp> {
            let Tok::Punct(s) = p.peek() else { return None };
            let op = match *s {
                "+=" => BinOp::Add,
                "-=" => BinOp::Sub,
                "*=" => BinOp::Mul,
                "/=" => BinOp::Div,
                "%=" => BinOp::Rem,
                "<<=" => BinOp::Shl,
                ">>=" => BinOp::Shr,
                "&=" => BinOp::BitAnd,
                "|=" => BinOp::BitOr,
                "^=" => BinOp::BitXor,
                _ => return None,
            };
            Some(op)
        };
        let value = if self.eat_punct("=") {
            self.expr()?
        } else if let Some(op) = compound(self) {
            self.bump();
            let rhs = self.expr()?;
            Expr::Binary(op, Box::new(load()), Box::new(rhs))
        } else if self.eat_punct("++") {
            Expr::Binary(BinOp::Add, Box::new(load()), Box::new(Expr::Int(1)))
        } else if self.eat_punct("--") {
            Expr::Binary(BinOp::Sub, Box::new(load()), Box::new(Expr::Int(1)))
        } else {
            return Err(self.error("`=`"));
        };
        Ok(Stmt {
            kind: StmtKind::Assign {
                name,
                indices,
                value,
            },
            line,
        })
    }

    fn lvalue(&mut self) -> PResult<(String, Vec<Expr>)> {
        let name = self.ident()?;
        if !self.is_punct("[") {
            return Err(self.error("`[` (all variables are arrays; write `x[0]`)"));
        }
        let indices = self.subscripts()?;
        Ok((name, indices))
    }

    fn subscripts(&mut self) -> PResult<Vec<Expr>> {
        let mut v = Vec::new();
        while self.eat_punct("[") {
            v.push(self.expr()?);
            self.expect_punct("]")?;
        }
        Ok(v)
    }

    fn call_args(&mut self) -> PResult<Vec<Expr>> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        if !self.is_punct(")") {
            loop {
                // a bare array name is passed by reference
                let bare = matches!(self.peek(), Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()))
                    && matches!(self.peek_at(1), Tok::Punct(",") | Tok::Punct(")"));
                if bare {
                    let name = self.ident()?;
                    args.push(Expr::Var(name));
                } else {
                    args.push(self.expr()?);
                }
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        Ok(args)
    }

    pub fn expr(&mut self) -> PResult<Expr> {
        let cond = self.binary(1)?;
        if self.eat_punct("?") {
            let a = self.expr()?;
            self.expect_punct(":")?;
            let b = self.expr()?;
            return Ok(Expr::Ternary(Box::new(cond), Box::new(a), Box::new(b)));
        }
        Ok(cond)
    }

    fn peek_binop(&self) -> Option<BinOp> {
        let Tok::Punct(s) = self.peek() else {
            return None;
        };
        let op = BinOp::from_symbol(s)?;
        (op != BinOp::Min && op != BinOp::Max).then_some(op)
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek_binop() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let op = match self.peek() {
            Tok::Punct("-") => Some(UnOp::Neg),
            Tok::Punct("!") => Some(UnOp::Not),
            Tok::Punct("~") => Some(UnOp::BitNot),
            Tok::Punct("+") => {
                self.bump();
                return self.unary();
            }
            _ => None,
        };
        if let Some(op) = op {
            let line = self.line();
            let col = self.toks[self.pos].col;
            self.bump();
            let inner = self.unary()?;
            if op == UnOp::Neg {
                // fold negative literals so that printing round-trips
                match inner {
                    Expr::Int(v) => return Ok(Expr::Int(v.wrapping_neg())),
                    Expr::Float(v) => return Ok(Expr::Float(-v)),
                    _ => {}
                }
            }
            let _ = (line, col);
            return Ok(Expr::Unary(op, Box::new(inner)));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                if v > i32::MAX as i64 {
                    // only reachable as the operand of unary minus
                    if self.pos >= 2 && matches!(self.toks[self.pos - 2].tok, Tok::Punct("-")) {
                        return Ok(Expr::Int(i32::MIN));
                    }
                    return Err(LangError::Parse {
                        line: self.toks[self.pos - 1].line,
                        col: self.toks[self.pos - 1].col,
                        expected: "integer literal within 32-bit range".into(),
                        found: format!("integer `{v}`"),
                    });
                }
                Ok(Expr::Int(v as i32))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::Float(v))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(name) if !KEYWORDS.contains(&name.as_str()) => {
                if matches!(self.peek_at(1), Tok::Punct("(")) {
                    self.bump();
                    let args = self.call_args()?;
                    return Ok(Expr::Call { name, args });
                }
                if matches!(self.peek_at(1), Tok::Punct("[")) {
                    self.bump();
                    let indices = self.subscripts()?;
                    return Ok(Expr::Load { name, indices });
                }
                self.bump();
                Err(LangError::Parse {
                    line: self.toks[self.pos - 1].line,
                    col: self.toks[self.pos - 1].col,
                    expected: "`[` (all variables are arrays; write `x[0]`)".into(),
                    found: format!("bare identifier `{name}`"),
                })
            }
            _ => Err(self.error("expression")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stmts(src: &str) -> Vec<Stmt> {
        parse_str(src).unwrap().statements().cloned().collect()
    }

    #[test]
    fn minimal_program() {
        let s = stmts("int A[]; A[0] = 1;");
        assert_eq!(
            s,
            vec![
                Stmt {
                    kind: StmtKind::Decl {
                        name: "A".into(),
                        kind: ElemKind::Int,
                        dims: vec![None]
                    },
                    line: 1
                },
                Stmt {
                    kind: StmtKind::Assign {
                        name: "A".into(),
                        indices: vec![Expr::Int(0)],
                        value: Expr::Int(1)
                    },
                    line: 1
                },
            ]
        );
    }

    #[test]
    fn missing_rhs_is_reported_at_semicolon() {
        let err = parse_str("A[0] = ;").unwrap_err();
        match err {
            LangError::Parse {
                line, col, found, ..
            } => {
                assert_eq!((line, col), (1, 8));
                assert_eq!(found, "`;`");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bare_scalar_rejected() {
        assert!(parse_str("x = 1;").is_err());
        assert!(parse_str("A[0] = x + 1;").is_err());
        // but a bare name is fine as a call argument
        assert!(parse_str("f(A, B[0]);").is_ok());
    }

    #[test]
    fn precedence_and_associativity() {
        let s = stmts("A[0] = 1 + 2 * 3 - 4;");
        let StmtKind::Assign { value, .. } = &s[0].kind else {
            panic!()
        };
        // (1 + (2*3)) - 4
        let Expr::Binary(BinOp::Sub, lhs, rhs) = value else {
            panic!("{value:?}")
        };
        assert_eq!(**rhs, Expr::Int(4));
        assert!(matches!(**lhs, Expr::Binary(BinOp::Add, _, _)));
    }

    #[test]
    fn compound_and_increment_desugar() {
        let s = stmts("i[0]++; A[i[0]] += 2;");
        let StmtKind::Assign { value, .. } = &s[0].kind else {
            panic!()
        };
        assert!(matches!(value, Expr::Binary(BinOp::Add, _, _)));
        let StmtKind::Assign { value, .. } = &s[1].kind else {
            panic!()
        };
        assert!(matches!(value, Expr::Binary(BinOp::Add, l, _) if matches!(**l, Expr::Load{..})));
    }

    #[test]
    fn negative_literals_fold() {
        let s = stmts("A[0] = -5 + -2147483648;");
        let StmtKind::Assign { value, .. } = &s[0].kind else {
            panic!()
        };
        assert_eq!(
            *value,
            Expr::Binary(
                BinOp::Add,
                Box::new(Expr::Int(-5)),
                Box::new(Expr::Int(i32::MIN))
            )
        );
    }

    #[test]
    fn function_definitions() {
        let p = parse_str("int add(int a[], int b[]) { return a[0] + b[0]; } x[0] = add(1, 2);")
            .unwrap();
        let f: Vec<_> = p.functions().collect();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].params.len(), 2);
        assert_eq!(p.statements().count(), 1);
    }
}
