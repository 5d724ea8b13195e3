//! Tokenizer for the query language. Keywords are case-insensitive,
//! identifiers case-sensitive; `--` starts a line comment.

use super::Span;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Name(String),
    Int(String),
    Str(String),
    Assign,
    LParen,
    RParen,
    Comma,
    Semi,
    Select,
    From,
    Where,
    And,
    Or,
    Not,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Name(n) => format!("identifier `{n}`"),
            Tok::Int(v) => format!("integer `{v}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Assign => "`:=`".to_string(),
            Tok::LParen => "`(`".to_string(),
            Tok::RParen => "`)`".to_string(),
            Tok::Comma => "`,`".to_string(),
            Tok::Semi => "`;`".to_string(),
            Tok::Select => "`SELECT`".to_string(),
            Tok::From => "`FROM`".to_string(),
            Tok::Where => "`WHERE`".to_string(),
            Tok::And => "`AND`".to_string(),
            Tok::Or => "`OR`".to_string(),
            Tok::Not => "`NOT`".to_string(),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Spanned {
    pub tok: Tok,
    pub span: Span,
}

#[derive(Debug)]
pub struct LexError {
    pub span: Span,
    pub message: String,
}

pub fn lex(text: &str) -> Result<Vec<Spanned>, LexError> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut col = 1u32;

    macro_rules! here {
        () => {
            Span { line, col }
        };
    }

    while i < bytes.len() {
        let b = bytes[i];
        let span = here!();
        match b {
            b'\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            b' ' | b'\t' | b'\r' => {
                i += 1;
                col += 1;
            }
            b'-' if i + 1 < bytes.len() && bytes[i + 1] == b'-' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'(' => {
                out.push(Spanned { tok: Tok::LParen, span });
                i += 1;
                col += 1;
            }
            b')' => {
                out.push(Spanned { tok: Tok::RParen, span });
                i += 1;
                col += 1;
            }
            b',' => {
                out.push(Spanned { tok: Tok::Comma, span });
                i += 1;
                col += 1;
            }
            b';' => {
                out.push(Spanned { tok: Tok::Semi, span });
                i += 1;
                col += 1;
            }
            b':' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    out.push(Spanned { tok: Tok::Assign, span });
                    i += 2;
                    col += 2;
                } else {
                    return Err(LexError {
                        span,
                        message: "expected `:=`".to_string(),
                    });
                }
            }
            b'"' => {
                let start = i + 1;
                let mut j = start;
                while j < bytes.len() && bytes[j] != b'"' && bytes[j] != b'\n' {
                    j += 1;
                }
                if j >= bytes.len() || bytes[j] == b'\n' {
                    return Err(LexError {
                        span,
                        message: "unterminated string literal".to_string(),
                    });
                }
                let value = &text[start..j];
                if value.bytes().any(|b| matches!(b, b'\t' | 0x1e | 0x1f)) {
                    return Err(LexError {
                        span,
                        message: "string literal contains a forbidden byte".to_string(),
                    });
                }
                out.push(Spanned {
                    tok: Tok::Str(value.to_string()),
                    span,
                });
                col += (j + 1 - i) as u32;
                i = j + 1;
            }
            b'-' | b'0'..=b'9' => {
                let start = i;
                let mut j = i;
                if bytes[j] == b'-' {
                    j += 1;
                }
                let digit_start = j;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                if j == digit_start {
                    return Err(LexError {
                        span,
                        message: "expected digits after `-`".to_string(),
                    });
                }
                out.push(Spanned {
                    tok: Tok::Int(text[start..j].to_string()),
                    span,
                });
                col += (j - i) as u32;
                i = j;
            }
            b'A'..=b'Z' | b'a'..=b'z' | b'_' => {
                let start = i;
                let mut j = i;
                while j < bytes.len()
                    && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_')
                {
                    j += 1;
                }
                let word = &text[start..j];
                let tok = match word.to_ascii_uppercase().as_str() {
                    "SELECT" => Tok::Select,
                    "FROM" => Tok::From,
                    "WHERE" => Tok::Where,
                    "AND" => Tok::And,
                    "OR" => Tok::Or,
                    "NOT" => Tok::Not,
                    _ => Tok::Name(word.to_string()),
                };
                out.push(Spanned { tok, span });
                col += (j - i) as u32;
                i = j;
            }
            _ => {
                return Err(LexError {
                    span,
                    message: format!("unexpected character `{}`", text[i..].chars().next().unwrap()),
                });
            }
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        span: here!(),
    });
    Ok(out)
}
