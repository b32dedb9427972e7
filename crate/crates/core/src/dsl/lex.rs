//! Tokenizer for model files.
//!
//! Lexing is line-oriented: `#` starts a comment, blank lines separate
//! nothing, and a declaration continues onto following lines that begin
//! with `+` or `-`. Every token carries its 1-based source position.

use super::ast::{Diagnostic, Span};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(String),
    LParen,
    RParen,
    LBrack,
    RBrack,
    Comma,
    Plus,
    Minus,
    Star,
    Caret,
    Slash,
    At,
    /// `:=`
    Assign,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{}`", s),
            Tok::Int(s) => format!("`{}`", s),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrack => "`[`".into(),
            Tok::RBrack => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Caret => "`^`".into(),
            Tok::Slash => "`/`".into(),
            Tok::At => "`@`".into(),
            Tok::Assign => "`:=`".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexed {
    pub tok: Tok,
    pub span: Span,
}

/// One logical declaration: the keyword line plus its continuations.
#[derive(Debug, Clone)]
pub struct Declaration {
    pub keyword: String,
    pub span: Span,
    pub toks: Vec<Lexed>,
}

pub(crate) fn lex_line(line: &str, line_no: u32, out: &mut Vec<Lexed>) -> Result<(), Diagnostic> {
    let mut chars = line.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        let col = pos as u32 + 1;
        let span = Span::new(line_no, col);
        match c {
            '#' => break,
            c if c.is_whitespace() => {
                chars.next();
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push(Lexed {
                    tok: Tok::Ident(s),
                    span,
                });
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_ascii_digit() {
                        s.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push(Lexed {
                    tok: Tok::Int(s),
                    span,
                });
            }
            ':' => {
                chars.next();
                match chars.peek() {
                    Some(&(_, '=')) => {
                        chars.next();
                        out.push(Lexed {
                            tok: Tok::Assign,
                            span,
                        });
                    }
                    _ => {
                        return Err(Diagnostic::new(span, "expected `:=`"));
                    }
                }
            }
            _ => {
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '[' => Tok::LBrack,
                    ']' => Tok::RBrack,
                    ',' => Tok::Comma,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '^' => Tok::Caret,
                    '/' => Tok::Slash,
                    '@' => Tok::At,
                    other => {
                        return Err(Diagnostic::new(
                            span,
                            format!("unexpected character `{}`", other),
                        ));
                    }
                };
                chars.next();
                out.push(Lexed { tok, span });
            }
        }
    }
    Ok(())
}

fn first_significant(line: &str) -> Option<char> {
    line.chars().find(|c| !c.is_whitespace())
}

/// Splits a source file into logical declarations.
pub fn declarations(src: &str) -> Result<Vec<Declaration>, Diagnostic> {
    let mut decls: Vec<Declaration> = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let line_no = i as u32 + 1;
        let lead = match first_significant(line) {
            None | Some('#') => continue,
            Some(c) => c,
        };
        let continuation = lead == '+' || lead == '-';
        if continuation {
            let Some(last) = decls.last_mut() else {
                return Err(Diagnostic::new(
                    Span::new(line_no, 1),
                    "continuation line without a preceding declaration",
                ));
            };
            lex_line(line, line_no, &mut last.toks)?;
        } else {
            let mut toks = Vec::new();
            lex_line(line, line_no, &mut toks)?;
            let Some(first) = toks.first() else { continue };
            let span = first.span;
            let keyword = match &first.tok {
                Tok::Ident(s) => s.clone(),
                other => {
                    return Err(Diagnostic::new(
                        span,
                        format!("expected a section keyword, found {}", other.describe()),
                    ));
                }
            };
            decls.push(Declaration {
                keyword,
                span,
                toks: toks[1..].to_vec(),
            });
        }
    }
    Ok(decls)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_declarations_and_continuations() {
        let src = "\
# header comment
model demo

constraint phi(i) := d_a pi(a,i)
  + eps(i,j,k) U(j,a) pi(a,k)   # trailing comment
field U coordinate so3
";
        let decls = declarations(src).unwrap();
        assert_eq!(decls.len(), 3);
        assert_eq!(decls[0].keyword, "model");
        assert_eq!(decls[1].keyword, "constraint");
        assert_eq!(decls[2].keyword, "field");
        // The continuation's tokens were appended to the constraint.
        assert!(decls[1].toks.iter().any(|l| l.tok == Tok::Plus));
        assert_eq!(decls[1].span, Span::new(4, 1));
    }

    #[test]
    fn positions_are_one_based() {
        let decls = declarations("kinetic dt U(i) pi(i)").unwrap();
        let toks = &decls[0].toks;
        assert_eq!(toks[0].span, Span::new(1, 9));
        assert_eq!(toks[0].tok, Tok::Ident("dt".into()));
    }

    #[test]
    fn rejects_stray_characters() {
        let err = declarations("model de%mo").unwrap_err();
        assert_eq!(err.span, Span::new(1, 9));
    }

    #[test]
    fn assign_token() {
        let decls = declarations("constraint phi := pi").unwrap();
        assert!(decls[0].toks.iter().any(|l| l.tok == Tok::Assign));
    }
}
