//! Line protocol over a single proof session.
//!
//! ```text
//! > THEOREM (prod b (c G) (app eq (app f (v b) (c m)) (v b)))
//! < OK state=1 goal=(app eq (app f (v b) (c m)) (v b))
//! > TACTIC rewrite 1 right
//! < OK state=2 goal=(app eq (v b) (v b)) final=false
//! > TACTIC reflexivity
//! < OK closed=true
//! ```
//!
//! Every request gets exactly one response line. `final=` tells whether the
//! proof is finished; blank request lines are ignored.

use std::io::{self, BufRead, Write};

use crate::proof::{toy_store, Law, Outcome, ProofSession, Tactic};
use crate::term::TermStore;

/// Protocol state: at most one open session.
pub struct Server {
    template: TermStore,
    session: Option<ProofSession>,
    theorems: usize,
}

pub enum Reply {
    Line(String),
    /// Respond and stop serving.
    Quit(String),
}

fn err(code: &str, msg: impl std::fmt::Display) -> String {
    format!("ERR {code} {msg}")
}

impl Default for Server {
    fn default() -> Self {
        Server::new(toy_store())
    }
}

impl Server {
    /// Theorems are parsed into copies of `template`.
    pub fn new(template: TermStore) -> Self {
        Server {
            template,
            session: None,
            theorems: 0,
        }
    }

    pub fn session(&self) -> Option<&ProofSession> {
        self.session.as_ref()
    }

    fn describe_current(s: &ProofSession) -> String {
        match s.current() {
            Some(id) => {
                let st = s.state(id).expect("open goals exist");
                format!("state={id} goal={}", s.store().print_sexpr(st.goal))
            }
            None => "closed=true".to_owned(),
        }
    }

    fn parse_tactic(words: &[&str]) -> Result<Tactic, String> {
        match words {
            ["reflexivity"] => Ok(Tactic::Reflexivity),
            ["rewrite", pos, law] => {
                let pos: usize = pos
                    .parse()
                    .ok()
                    .filter(|p| *p >= 1)
                    .ok_or_else(|| err("BadTactic", format!("position `{pos}` is not a positive integer")))?;
                let law = match *law {
                    "left" => Law::LeftId,
                    "right" => Law::RightId,
                    other => return Err(err("BadTactic", format!("law `{other}` is not left or right"))),
                };
                Ok(Tactic::rewrite(pos, law))
            }
            [] => Err(err("BadTactic", "missing tactic")),
            _ => Err(err("BadTactic", format!("cannot parse `{}`", words.join(" ")))),
        }
    }

    /// Handles one request line.
    pub fn handle(&mut self, line: &str) -> Option<Reply> {
        let line = line.trim();
        if line.is_empty() {
            return None;
        }
        let (cmd, rest) = match line.split_once(char::is_whitespace) {
            Some((c, r)) => (c, r.trim()),
            None => (line, ""),
        };
        let reply = match cmd {
            "THEOREM" => self.theorem(rest),
            "TACTIC" => self.tactic(rest),
            "STATE" => self.state(),
            "UNDO" => self.undo(),
            "QUIT" => return Some(Reply::Quit("OK bye".into())),
            other => err("UnknownCommand", format!("`{other}`")),
        };
        Some(Reply::Line(reply))
    }

    fn theorem(&mut self, text: &str) -> String {
        if text.is_empty() {
            return err("Parse", "missing theorem");
        }
        let mut store = self.template.clone();
        let t = match store.parse_sexpr(text) {
            Ok(t) => t,
            Err(e) => return err("Parse", e),
        };
        self.theorems += 1;
        match ProofSession::start(store, t, &format!("theorem.{}", self.theorems)) {
            Ok(s) => {
                let out = format!("OK {}", Self::describe_current(&s));
                self.session = Some(s);
                out
            }
            Err(e) => err(e.code(), e),
        }
    }

    fn tactic(&mut self, text: &str) -> String {
        let Some(s) = self.session.as_mut() else {
            return err("NoSession", "no theorem loaded");
        };
        let words: Vec<&str> = text.split_whitespace().collect();
        let tactic = match Self::parse_tactic(&words) {
            Ok(t) => t,
            Err(e) => return e,
        };
        match s.apply_current(tactic) {
            Ok(Outcome::Closed) | Ok(Outcome::Children(_)) if s.is_complete() => "OK closed=true".into(),
            Ok(Outcome::Closed) => format!("OK closed=false {}", Self::describe_current(s)),
            Ok(Outcome::Children(_)) => format!("OK {} final=false", Self::describe_current(s)),
            Err(e) => err(e.code(), e),
        }
    }

    fn state(&self) -> String {
        let Some(s) = self.session.as_ref() else {
            return err("NoSession", "no theorem loaded");
        };
        let Some(id) = s.current() else {
            return "OK closed=true".into();
        };
        let st = s.state(id).expect("open goals exist");
        let ctx: Vec<String> = st
            .ctx
            .iter()
            .map(|(n, t)| format!("{}:{}", s.store().name_str(*n), s.store().print_sexpr(*t)))
            .collect();
        format!("OK state={id} ctx=[{}] goal={}", ctx.join(", "), s.store().print_sexpr(st.goal))
    }

    fn undo(&mut self) -> String {
        let Some(s) = self.session.as_mut() else {
            return err("NoSession", "no theorem loaded");
        };
        match s.undo() {
            Ok(_) => format!("OK {}", Self::describe_current(s)),
            Err(e) => err(e.code(), e),
        }
    }
}

/// Serves requests until `QUIT` or end of input. Only I/O failures are
/// errors; malformed requests get `ERR` responses.
pub fn serve_protocol<R: BufRead, W: Write>(input: R, mut output: W) -> io::Result<()> {
    let mut server = Server::default();
    for line in input.lines() {
        let line = line?;
        match server.handle(&line) {
            None => continue,
            Some(Reply::Line(r)) => writeln!(output, "{r}")?,
            Some(Reply::Quit(r)) => {
                writeln!(output, "{r}")?;
                break;
            }
        }
        output.flush()?;
    }
    output.flush()
}
