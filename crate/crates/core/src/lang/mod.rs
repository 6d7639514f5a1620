//! The `.pir` surface language: lexer, parser, pretty-printer and the
//! elaborator that lowers it to the core statement forms the interpreter runs.

pub mod ast;
pub mod core_ast;
mod elaborate;
mod lexer;
mod parser;
pub mod pretty;

pub use ast::{BinOp, ElemKind, Expr, Program, SemOp, SourceProgram, Stmt, StmtKind, UnOp};
pub use core_ast::{CExpr, CStmt, CStmtKind, CoreProgram, SemArg, VarId, VarInfo};
pub use elaborate::elaborate;
pub use parser::{parse, parse_str};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LangError {
    #[error("line {line}, column {col}: {msg}")]
    Lex { line: u32, col: u32, msg: String },
    #[error("line {line}, column {col}: expected {expected}, found {found}")]
    Parse {
        line: u32,
        col: u32,
        expected: String,
        found: String,
    },
    #[error("line {line}: {kind}")]
    Elab { line: u32, kind: ElabError },
}

impl LangError {
    pub fn line(&self) -> u32 {
        match self {
            LangError::Lex { line, .. }
            | LangError::Parse { line, .. }
            | LangError::Elab { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ElabError {
    #[error("recursive call cycle: {0}")]
    Recursion(String),
    #[error("call to unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{name}` expects {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("function `{0}` is defined twice")]
    DuplicateFunction(String),
    #[error("`return` must be the last statement of a function body")]
    MisplacedReturn,
    #[error("void function `{0}` used as a value")]
    VoidValue(String),
    #[error("mixed int/float operands in `{0}`")]
    MixedKinds(String),
    #[error("operator `{0}` is only defined on integers")]
    IntOnly(String),
    #[error("semaphore array `{0}` used as data")]
    SemaphoreAsData(String),
    #[error("`{0}` passed by reference but is not an array name in scope")]
    BadReference(String),
    #[error("bare name `{0}` is only allowed as a call argument")]
    BareName(String),
    #[error("`{0}` redeclared with a different element kind")]
    KindRedeclared(String),
}

/// Parses and elaborates in one go.
pub fn compile(src: &SourceProgram) -> Result<CoreProgram, LangError> {
    let ast = parse(src)?;
    elaborate(&ast)
}

pub fn compile_str(text: &str) -> Result<CoreProgram, LangError> {
    let ast = parse_str(text)?;
    elaborate(&ast)
}
