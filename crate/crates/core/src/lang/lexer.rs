use super::LangError;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    /// Punctuation and operators, stored as their source spelling.
    Punct(&'static str),
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(v) => format!("integer `{v}`"),
            Tok::Float(v) => format!("float `{v}`"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
}

// Longest spellings first so that maximal munch works with a linear scan.
const PUNCTS: &[&str] = &[
    "<<=", ">>=", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "++", "--", "+=", "-=", "*=",
    "/=", "%=", "&=", "|=", "^=", "(", ")", "{", "}", "[", "]", ";", ",", "?", ":", "=", "+", "-",
    "*", "/", "%", "&", "|", "^", "~", "!", "<", ">",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, LangError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut line_start = 0usize;

    while i < bytes.len() {
        let c = bytes[i];
        let col = (i - line_start + 1) as u32;
        match c {
            b'\n' => {
                line += 1;
                i += 1;
                line_start = i;
            }
            b' ' | b'\t' | b'\r' => i += 1,
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                let start_line = line;
                i += 2;
                loop {
                    if i + 1 >= bytes.len() {
                        return Err(LangError::Lex {
                            line: start_line,
                            col,
                            msg: "unterminated block comment".into(),
                        });
                    }
                    if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                        i += 2;
                        break;
                    }
                    if bytes[i] == b'\n' {
                        line += 1;
                        line_start = i + 1;
                    }
                    i += 1;
                }
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(src[start..i].to_string()),
                    line,
                    col,
                });
            }
            b'0'..=b'9' | b'.' if c != b'.' || bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                let (tok, len) =
                    lex_number(&src[i..]).map_err(|msg| LangError::Lex { line, col, msg })?;
                i += len;
                out.push(Token { tok, line, col });
            }
            _ => {
                let rest = &src[i..];
                match PUNCTS.iter().find(|p| rest.starts_with(**p)) {
                    Some(p) => {
                        out.push(Token {
                            tok: Tok::Punct(p),
                            line,
                            col,
                        });
                        i += p.len();
                    }
                    None => {
                        let ch = rest.chars().next().unwrap_or('?');
                        return Err(LangError::Lex {
                            line,
                            col,
                            msg: format!("unexpected character `{ch}`"),
                        });
                    }
                }
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col: (i - line_start + 1) as u32,
    });
    Ok(out)
}

fn lex_number(s: &str) -> Result<(Tok, usize), String> {
    let b = s.as_bytes();
    if b.len() > 1 && b[0] == b'0' && (b[1] == b'x' || b[1] == b'X') {
        let mut j = 2;
        while j < b.len() && b[j].is_ascii_hexdigit() {
            j += 1;
        }
        let v = i64::from_str_radix(&s[2..j], 16).map_err(|e| format!("bad hex literal: {e}"))?;
        if v > u32::MAX as i64 {
            return Err("integer literal out of 32-bit range".into());
        }
        // hex literals are bit patterns
        return Ok((Tok::Int(v as u32 as i32 as i64), j));
    }
    let mut j = 0;
    let mut is_float = false;
    while j < b.len() && b[j].is_ascii_digit() {
        j += 1;
    }
    if j < b.len() && b[j] == b'.' {
        is_float = true;
        j += 1;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
    }
    if j < b.len() && (b[j] == b'e' || b[j] == b'E') {
        let mut k = j + 1;
        if k < b.len() && (b[k] == b'+' || b[k] == b'-') {
            k += 1;
        }
        if k < b.len() && b[k].is_ascii_digit() {
            is_float = true;
            j = k;
            while j < b.len() && b[j].is_ascii_digit() {
                j += 1;
            }
        }
    }
    let text = &s[..j];
    let mut len = j;
    if is_float {
        if j < b.len() && (b[j] == b'f' || b[j] == b'F') {
            len += 1;
        }
        let v: f64 = text
            .parse()
            .map_err(|e| format!("bad float literal: {e}"))?;
        Ok((Tok::Float(v), len))
    } else {
        let v: i64 = text
            .parse()
            .map_err(|_| "integer literal out of range".to_string())?;
        // 2147483648 is accepted so that `-2147483648` can be written.
        if v > i32::MAX as i64 + 1 {
            return Err("integer literal out of 32-bit range".into());
        }
        Ok((Tok::Int(v), len))
    }
}
