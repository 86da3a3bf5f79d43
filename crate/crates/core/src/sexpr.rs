//! Canonical s-expression syntax for terms.
//!
//! ```text
//! (v x)                     variable
//! (c sym)                   constant
//! (app head arg...)         application; head is a bare symbol or a term,
//!                           each arg is a term or (impl term)
//! (prod x ty body)          dependent product
//! ```

use crate::term::{Arg, Term, TermError, TermId, TermStore};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Open,
    Close,
    Atom(String),
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Vec<Spanned> {
    let mut out = Vec::new();
    let mut line = 1;
    let mut col = 1;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            '(' | ')' => {
                chars.next();
                let tok = if c == '(' { Tok::Open } else { Tok::Close };
                out.push(Spanned { tok, line, col });
                col += 1;
            }
            _ => {
                let (l, c0) = (line, col);
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' {
                        break;
                    }
                    s.push(c);
                    chars.next();
                    col += 1;
                }
                out.push(Spanned {
                    tok: Tok::Atom(s),
                    line: l,
                    col: c0,
                });
            }
        }
    }
    out
}

pub fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    match cs.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    cs.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '\'')
}

fn is_symbol(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| !c.is_whitespace() && c != '(' && c != ')')
}

struct Parser<'a> {
    toks: &'a [Spanned],
    pos: usize,
    end: (usize, usize),
}

impl Parser<'_> {
    fn err(&self, line: usize, col: usize, msg: impl Into<String>) -> TermError {
        TermError::Parse {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Result<Spanned, TermError> {
        let t = self.toks.get(self.pos).cloned().ok_or(TermError::Unbalanced {
            line: self.end.0,
            col: self.end.1,
        })?;
        self.pos += 1;
        Ok(t)
    }

    fn atom(&mut self, what: &str) -> Result<(String, usize, usize), TermError> {
        let t = self.next()?;
        match t.tok {
            Tok::Atom(s) => Ok((s, t.line, t.col)),
            _ => Err(self.err(t.line, t.col, format!("expected {what}"))),
        }
    }

    fn close(&mut self) -> Result<(), TermError> {
        let t = self.next()?;
        match t.tok {
            Tok::Close => Ok(()),
            _ => Err(self.err(t.line, t.col, "expected `)`")),
        }
    }

    fn term(&mut self, store: &mut TermStore) -> Result<TermId, TermError> {
        let open = self.next()?;
        match open.tok {
            Tok::Open => {}
            Tok::Close => {
                return Err(TermError::Unbalanced {
                    line: open.line,
                    col: open.col,
                })
            }
            Tok::Atom(a) => return Err(self.err(open.line, open.col, format!("expected `(`, found `{a}`"))),
        }
        let (kw, line, col) = self.atom("head keyword")?;
        let id = match kw.as_str() {
            "v" => {
                let (x, l, c) = self.atom("identifier")?;
                if !is_ident(&x) {
                    return Err(self.err(l, c, format!("invalid identifier `{x}`")));
                }
                store.var(&x)
            }
            "c" => {
                let (sym, l, c) = self.atom("symbol")?;
                self.symbol(store, &sym, l, c)?
            }
            "app" => {
                let head = match self.peek() {
                    Some(Spanned { tok: Tok::Atom(_), .. }) => {
                        let (sym, l, c) = self.atom("symbol")?;
                        self.symbol(store, &sym, l, c)?
                    }
                    _ => self.term(store)?,
                };
                let mut args = Vec::new();
                loop {
                    match self.peek() {
                        Some(Spanned { tok: Tok::Close, .. }) => break,
                        None => {
                            return Err(TermError::Unbalanced {
                                line: self.end.0,
                                col: self.end.1,
                            })
                        }
                        _ => args.push(self.arg(store)?),
                    }
                }
                if args.is_empty() {
                    return Err(self.err(line, col, "application needs at least one argument"));
                }
                self.intern_at(store, Term::App { head, args }, line, col)?
            }
            "prod" => {
                let (x, l, c) = self.atom("binder")?;
                if !is_ident(&x) {
                    return Err(self.err(l, c, format!("invalid identifier `{x}`")));
                }
                let ty = self.term(store)?;
                let body = self.term(store)?;
                let binder = store.name(&x);
                self.intern_at(store, Term::Prod { binder, ty, body }, line, col)?
            }
            _ => {
                return Err(TermError::UnknownHead {
                    keyword: kw,
                    line,
                    col,
                })
            }
        };
        self.close()?;
        Ok(id)
    }

    fn arg(&mut self, store: &mut TermStore) -> Result<Arg, TermError> {
        if let (Some(Spanned { tok: Tok::Open, .. }), Some(Spanned { tok: Tok::Atom(kw), .. })) =
            (self.toks.get(self.pos), self.toks.get(self.pos + 1))
        {
            if kw == "impl" {
                self.pos += 2;
                let t = self.term(store)?;
                self.close()?;
                return Ok(Arg::implicit(t));
            }
        }
        Ok(Arg::explicit(self.term(store)?))
    }

    fn symbol(&self, store: &mut TermStore, sym: &str, line: usize, col: usize) -> Result<TermId, TermError> {
        if !is_symbol(sym) {
            return Err(self.err(line, col, format!("invalid symbol `{sym}`")));
        }
        let n = store.name(sym);
        if !store.is_declared(n) {
            store.declare(sym, None);
        }
        self.intern_at(store, Term::Const(n), line, col)
    }

    fn intern_at(&self, store: &mut TermStore, t: Term, line: usize, col: usize) -> Result<TermId, TermError> {
        store.intern(t).map_err(|e| match e {
            TermError::ArityMismatch { .. } | TermError::EmptyApp => self.err(line, col, e.to_string()),
            other => other,
        })
    }
}

impl TermStore {
    /// Parses one term. Unknown constant symbols are declared with open arity.
    pub fn parse_sexpr(&mut self, text: &str) -> Result<TermId, TermError> {
        let toks = lex(text);
        let end = text.lines().enumerate().last().map_or((1, 1), |(i, l)| (i + 1, l.chars().count() + 1));
        let mut p = Parser {
            toks: &toks,
            pos: 0,
            end,
        };
        let t = p.term(self)?;
        if let Some(extra) = p.peek() {
            return match extra.tok {
                Tok::Close => Err(TermError::Unbalanced {
                    line: extra.line,
                    col: extra.col,
                }),
                _ => Err(p.err(extra.line, extra.col, "trailing input after term")),
            };
        }
        Ok(t)
    }

    pub fn print_sexpr(&self, t: TermId) -> String {
        let mut out = String::new();
        self.write_sexpr(t, &mut out);
        out
    }

    fn write_sexpr(&self, t: TermId, out: &mut String) {
        match self.get(t) {
            Term::Var(x) => {
                out.push_str("(v ");
                out.push_str(self.name_str(*x));
                out.push(')');
            }
            Term::Const(c) => {
                out.push_str("(c ");
                out.push_str(self.name_str(*c));
                out.push(')');
            }
            Term::App { head, args } => {
                out.push_str("(app ");
                match self.get(*head) {
                    Term::Const(c) => out.push_str(self.name_str(*c)),
                    _ => self.write_sexpr(*head, out),
                }
                for a in args {
                    out.push(' ');
                    if a.implicit {
                        out.push_str("(impl ");
                        self.write_sexpr(a.term, out);
                        out.push(')');
                    } else {
                        self.write_sexpr(a.term, out);
                    }
                }
                out.push(')');
            }
            Term::Prod { binder, ty, body } => {
                out.push_str("(prod ");
                out.push_str(self.name_str(*binder));
                out.push(' ');
                self.write_sexpr(*ty, out);
                out.push(' ');
                self.write_sexpr(*body, out);
                out.push(')');
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_application() {
        let mut s = TermStore::new();
        let t = s.parse_sexpr("(app f (c e) (v b))").unwrap();
        let e = s.constant("e").unwrap();
        let b = s.var("b");
        let f = s.constant("f").unwrap();
        assert_eq!(s.get(t), &Term::App { head: f, args: vec![Arg::explicit(e), Arg::explicit(b)] });
    }

    #[test]
    fn reads_prod_and_implicit() {
        let mut s = TermStore::new();
        let t = s.parse_sexpr("(prod x (c G) (v x))").unwrap();
        assert!(matches!(s.get(t), Term::Prod { .. }));
        let u = s.parse_sexpr("(app eq (impl (c G)) (v x) (v x))").unwrap();
        match s.get(u) {
            Term::App { args, .. } => {
                assert!(args[0].implicit);
                assert!(!args[1].implicit);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn normalizes_whitespace() {
        let mut s = TermStore::new();
        let t = s.parse_sexpr("  (app   f\n (c e)\t(v b) ) ").unwrap();
        assert_eq!(s.print_sexpr(t), "(app f (c e) (v b))");
        let u = s.parse_sexpr("(app (c f) (c e) (v b))").unwrap();
        assert_eq!(t, u);
    }

    #[test]
    fn parse_errors_carry_location() {
        let mut s = TermStore::new();
        assert!(matches!(s.parse_sexpr("(app f (c e)"), Err(TermError::Unbalanced { .. })));
        assert!(matches!(s.parse_sexpr("(v b))"), Err(TermError::Unbalanced { line: 1, col: 6 })));
        assert_eq!(
            s.parse_sexpr("(foo x)"),
            Err(TermError::UnknownHead {
                keyword: "foo".into(),
                line: 1,
                col: 2
            })
        );
        match s.parse_sexpr("(app f\n  (v 9x))") {
            Err(TermError::Parse { line, col, .. }) => assert_eq!((line, col), (2, 6)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(s.parse_sexpr("(app f)"), Err(TermError::Parse { .. })));
        assert!(matches!(s.parse_sexpr(""), Err(TermError::Unbalanced { .. })));
    }

    #[test]
    fn identifiers() {
        assert!(is_ident("x'"));
        assert!(is_ident("_a1"));
        assert!(!is_ident("1a"));
        assert!(!is_ident("a-b"));
    }
}
