//! Hand-rolled lexer for the corpus language.

use super::{IrError, IrResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(u64),
    Str(String),
    // punctuation
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Lt,
    Gt,
    Comma,
    Colon,
    Dot,
    Arrow,
    Assign,
    // operators
    Amp,
    Pipe,
    Caret,
    Tilde,
    Plus,
    Minus,
    Star,
    Shl,
    Shr,
    EqEq,
    NotEq,
    Eof,
}

#[derive(Debug, Clone)]
pub struct Spanned {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
}

pub fn lex(text: &str) -> IrResult<Vec<Spanned>> {
    let mut out = Vec::new();
    let bytes: Vec<char> = text.chars().collect();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut col = 1u32;

    macro_rules! push {
        ($t:expr, $l:expr, $c:expr) => {
            out.push(Spanned { tok: $t, line: $l, col: $c })
        };
    }

    while i < bytes.len() {
        let c = bytes[i];
        let (tl, tc) = (line, col);
        let adv = |i: &mut usize, col: &mut u32| {
            *i += 1;
            *col += 1;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => adv(&mut i, &mut col),
            '#' => {
                while i < bytes.len() && bytes[i] != '\n' {
                    i += 1;
                }
            }
            '{' => {
                adv(&mut i, &mut col);
                push!(Tok::LBrace, tl, tc);
            }
            '}' => {
                adv(&mut i, &mut col);
                push!(Tok::RBrace, tl, tc);
            }
            '(' => {
                adv(&mut i, &mut col);
                push!(Tok::LParen, tl, tc);
            }
            ')' => {
                adv(&mut i, &mut col);
                push!(Tok::RParen, tl, tc);
            }
            '[' => {
                adv(&mut i, &mut col);
                push!(Tok::LBracket, tl, tc);
            }
            ']' => {
                adv(&mut i, &mut col);
                push!(Tok::RBracket, tl, tc);
            }
            ',' => {
                adv(&mut i, &mut col);
                push!(Tok::Comma, tl, tc);
            }
            ':' => {
                adv(&mut i, &mut col);
                push!(Tok::Colon, tl, tc);
            }
            '.' => {
                adv(&mut i, &mut col);
                push!(Tok::Dot, tl, tc);
            }
            '&' => {
                adv(&mut i, &mut col);
                push!(Tok::Amp, tl, tc);
            }
            '|' => {
                adv(&mut i, &mut col);
                push!(Tok::Pipe, tl, tc);
            }
            '^' => {
                adv(&mut i, &mut col);
                push!(Tok::Caret, tl, tc);
            }
            '~' => {
                adv(&mut i, &mut col);
                push!(Tok::Tilde, tl, tc);
            }
            '+' => {
                adv(&mut i, &mut col);
                push!(Tok::Plus, tl, tc);
            }
            '*' => {
                adv(&mut i, &mut col);
                push!(Tok::Star, tl, tc);
            }
            '-' => {
                adv(&mut i, &mut col);
                if i < bytes.len() && bytes[i] == '>' {
                    adv(&mut i, &mut col);
                    push!(Tok::Arrow, tl, tc);
                } else {
                    push!(Tok::Minus, tl, tc);
                }
            }
            '<' => {
                adv(&mut i, &mut col);
                if i < bytes.len() && bytes[i] == '<' {
                    adv(&mut i, &mut col);
                    push!(Tok::Shl, tl, tc);
                } else {
                    push!(Tok::Lt, tl, tc);
                }
            }
            '>' => {
                adv(&mut i, &mut col);
                if i < bytes.len() && bytes[i] == '>' {
                    adv(&mut i, &mut col);
                    push!(Tok::Shr, tl, tc);
                } else {
                    push!(Tok::Gt, tl, tc);
                }
            }
            '=' => {
                adv(&mut i, &mut col);
                if i < bytes.len() && bytes[i] == '=' {
                    adv(&mut i, &mut col);
                    push!(Tok::EqEq, tl, tc);
                } else {
                    push!(Tok::Assign, tl, tc);
                }
            }
            '!' => {
                adv(&mut i, &mut col);
                if i < bytes.len() && bytes[i] == '=' {
                    adv(&mut i, &mut col);
                    push!(Tok::NotEq, tl, tc);
                } else {
                    return Err(IrError::Syntax {
                        line: tl,
                        col: tc,
                        msg: "expected `!=`".to_string(),
                    });
                }
            }
            '"' => {
                adv(&mut i, &mut col);
                let mut s = String::new();
                loop {
                    if i >= bytes.len() || bytes[i] == '\n' {
                        return Err(IrError::Syntax {
                            line: tl,
                            col: tc,
                            msg: "unterminated string".to_string(),
                        });
                    }
                    if bytes[i] == '"' {
                        adv(&mut i, &mut col);
                        break;
                    }
                    s.push(bytes[i]);
                    adv(&mut i, &mut col);
                }
                push!(Tok::Str(s), tl, tc);
            }
            _ if c.is_ascii_digit() => {
                let mut s = String::new();
                let hex = c == '0' && i + 1 < bytes.len() && (bytes[i + 1] == 'x' || bytes[i + 1] == 'X');
                if hex {
                    adv(&mut i, &mut col);
                    adv(&mut i, &mut col);
                    while i < bytes.len() && bytes[i].is_ascii_hexdigit() {
                        s.push(bytes[i]);
                        adv(&mut i, &mut col);
                    }
                    if s.is_empty() {
                        return Err(IrError::Syntax {
                            line: tl,
                            col: tc,
                            msg: "empty hex literal".to_string(),
                        });
                    }
                } else {
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        s.push(bytes[i]);
                        adv(&mut i, &mut col);
                    }
                }
                let radix = if hex { 16 } else { 10 };
                let v = u64::from_str_radix(&s, radix).map_err(|_| IrError::Syntax {
                    line: tl,
                    col: tc,
                    msg: format!("integer literal `{s}` out of range"),
                })?;
                push!(Tok::Int(v), tl, tc);
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                    s.push(bytes[i]);
                    adv(&mut i, &mut col);
                }
                push!(Tok::Ident(s), tl, tc);
            }
            _ => {
                return Err(IrError::Syntax {
                    line: tl,
                    col: tc,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}
