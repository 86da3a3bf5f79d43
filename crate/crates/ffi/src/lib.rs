//! C ABI over the proof engine, the line protocol and trained tactic models.
//!
//! All objects are opaque handles created by `*_new`/`*_start`/`*_load` and
//! released by the matching `*_free`. Functions return a [`PgStatus`];
//! details of the last failure on the calling thread are available from
//! [`pg_last_error`]. Strings handed out by the library are released with
//! [`pg_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use proofgym::agent::{synthesize_greedy, synthesize_with_fallback, ModelPolicy};
use proofgym::models::Model;
use proofgym::proof::{toy_store, EngineError, Law, ProofSession, Tactic};
use proofgym::protocol::{Reply, Server};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    /// The engine rejected a tactic or a theorem.
    Engine = 4,
    /// The proof has no open goal.
    NoGoal = 5,
    Io = 6,
    Model = 7,
    /// The protocol server received `QUIT`.
    Quit = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgLaw {
    LeftId = 0,
    RightId = 1,
}

/// Line-protocol server.
pub struct PgServer(Server);

/// One proof in the rewrite domain.
pub struct PgSession(ProofSession);

/// Trained tactic model.
pub struct PgModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl ToString) {
    let s = CString::new(msg.to_string().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn fail(status: PgStatus, msg: impl ToString) -> PgStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PgStatus) -> PgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(PgStatus::Panic, "internal panic"),
    }
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, PgStatus> {
    if p.is_null() {
        return Err(fail(PgStatus::NullArgument, "null string"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(PgStatus::InvalidUtf8, "string is not UTF-8"))
}

unsafe fn give_string(out: *mut *mut c_char, s: String) -> PgStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            PgStatus::Ok
        }
        Err(_) => fail(PgStatus::Panic, "interior NUL in output"),
    }
}

fn engine(e: EngineError) -> PgStatus {
    fail(PgStatus::Engine, format!("{} {e}", e.code()))
}

/// Message of the last failure on this thread. Valid until the next call
/// into the library on the same thread; never null.
#[no_mangle]
pub extern "C" fn pg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn pg_server_new() -> *mut PgServer {
    Box::into_raw(Box::new(PgServer(Server::default())))
}

/// # Safety
/// `server` must come from [`pg_server_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pg_server_free(server: *mut PgServer) {
    if !server.is_null() {
        drop(Box::from_raw(server));
    }
}

/// Handles one request line. `*response` receives the response line, or
/// null for a blank request. Protocol-level errors are `ERR` responses with
/// status `Ok`.
///
/// # Safety
/// `server` must be live, `line` a NUL-terminated string and `response`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pg_server_exec(server: *mut PgServer, line: *const c_char, response: *mut *mut c_char) -> PgStatus {
    guard(|| {
        if server.is_null() || response.is_null() {
            return fail(PgStatus::NullArgument, "null handle or output");
        }
        *response = ptr::null_mut();
        let line = match text(line) {
            Ok(l) => l,
            Err(s) => return s,
        };
        match (*server).0.handle(line) {
            None => PgStatus::Ok,
            Some(Reply::Line(r)) => give_string(response, r),
            Some(Reply::Quit(r)) => match give_string(response, r) {
                PgStatus::Ok => PgStatus::Quit,
                s => s,
            },
        }
    })
}

/// Starts a proof of a rewrite-domain theorem given as an s-expression.
///
/// # Safety
/// `theorem` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_session_start(theorem: *const c_char, out: *mut *mut PgSession) -> PgStatus {
    guard(|| {
        if out.is_null() {
            return fail(PgStatus::NullArgument, "null output");
        }
        *out = ptr::null_mut();
        let src = match text(theorem) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let mut store = toy_store();
        let t = match store.parse_sexpr(src) {
            Ok(t) => t,
            Err(e) => return fail(PgStatus::Parse, e),
        };
        match ProofSession::start(store, t, "theorem") {
            Ok(s) => {
                *out = Box::into_raw(Box::new(PgSession(s)));
                PgStatus::Ok
            }
            Err(e) => engine(e),
        }
    })
}

/// # Safety
/// `session` must come from [`pg_session_start`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pg_session_free(session: *mut PgSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

unsafe fn apply(session: *mut PgSession, tactic: Tactic) -> PgStatus {
    guard(|| {
        let Some(s) = session.as_mut() else {
            return fail(PgStatus::NullArgument, "null session");
        };
        if s.0.current().is_none() {
            return fail(PgStatus::NoGoal, "proof is complete");
        }
        match s.0.apply_current(tactic) {
            Ok(_) => PgStatus::Ok,
            Err(e) => engine(e),
        }
    })
}

/// Rewrites the current goal at a 1-based preorder position.
///
/// # Safety
/// `session` must be live.
#[no_mangle]
pub unsafe extern "C" fn pg_session_rewrite(session: *mut PgSession, pos: usize, law: PgLaw) -> PgStatus {
    if pos == 0 {
        return fail(PgStatus::Engine, "positions start at 1");
    }
    let law = match law {
        PgLaw::LeftId => Law::LeftId,
        PgLaw::RightId => Law::RightId,
    };
    apply(session, Tactic::rewrite(pos, law))
}

/// # Safety
/// `session` must be live.
#[no_mangle]
pub unsafe extern "C" fn pg_session_reflexivity(session: *mut PgSession) -> PgStatus {
    apply(session, Tactic::Reflexivity)
}

/// # Safety
/// `session` must be live.
#[no_mangle]
pub unsafe extern "C" fn pg_session_undo(session: *mut PgSession) -> PgStatus {
    guard(|| {
        let Some(s) = session.as_mut() else {
            return fail(PgStatus::NullArgument, "null session");
        };
        match s.0.undo() {
            Ok(_) => PgStatus::Ok,
            Err(e) => engine(e),
        }
    })
}

/// Current goal as an s-expression; `NoGoal` once the proof is complete.
///
/// # Safety
/// `session` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_session_goal(session: *const PgSession, out: *mut *mut c_char) -> PgStatus {
    guard(|| {
        let (Some(s), false) = (session.as_ref(), out.is_null()) else {
            return fail(PgStatus::NullArgument, "null session or output");
        };
        *out = ptr::null_mut();
        let Some(id) = s.0.current() else {
            return fail(PgStatus::NoGoal, "proof is complete");
        };
        match s.0.state(id) {
            Ok(st) => give_string(out, s.0.store().print_sexpr(st.goal)),
            Err(e) => engine(e),
        }
    })
}

/// # Safety
/// `session` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_session_is_complete(session: *const PgSession, out: *mut bool) -> PgStatus {
    guard(|| {
        let (Some(s), false) = (session.as_ref(), out.is_null()) else {
            return fail(PgStatus::NullArgument, "null session or output");
        };
        *out = s.0.is_complete();
        PgStatus::Ok
    })
}

/// Loads a toy tactic checkpoint written by `proofgym train --task tac`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_model_load(path: *const c_char, out: *mut *mut PgModel) -> PgStatus {
    guard(|| {
        if out.is_null() {
            return fail(PgStatus::NullArgument, "null output");
        }
        *out = ptr::null_mut();
        let path = match text(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let body = match std::fs::read_to_string(path) {
            Ok(b) => b,
            Err(e) => return fail(PgStatus::Io, e),
        };
        let m = match Model::load(&body) {
            Ok(m) => m,
            Err(e) => return fail(PgStatus::Model, e),
        };
        if ModelPolicy::new(&m).is_err() {
            return fail(PgStatus::Model, "checkpoint is not a toy tactic model");
        }
        *out = Box::into_raw(Box::new(PgModel(m)));
        PgStatus::Ok
    })
}

/// # Safety
/// `model` must come from [`pg_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pg_model_free(model: *mut PgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Greedy proof synthesis, optionally with fallback to the reference
/// prover. Writes whether the proof completed and how many steps the
/// reference prover supplied.
///
/// # Safety
/// `model` must be live, `theorem` a NUL-terminated string, and the outputs
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pg_model_prove(
    model: *const PgModel,
    theorem: *const c_char,
    fallback: bool,
    completed: *mut bool,
    fallback_uses: *mut usize,
) -> PgStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(PgStatus::NullArgument, "null model");
        };
        if completed.is_null() || fallback_uses.is_null() {
            return fail(PgStatus::NullArgument, "null output");
        }
        let src = match text(theorem) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let mut store = toy_store();
        let t = match store.parse_sexpr(src) {
            Ok(t) => t,
            Err(e) => return fail(PgStatus::Parse, e),
        };
        let mut policy = match ModelPolicy::new(&m.0) {
            Ok(p) => p,
            Err(e) => return fail(PgStatus::Model, e),
        };
        let r = if fallback {
            synthesize_with_fallback(&mut policy, &store, t, "theorem")
        } else {
            synthesize_greedy(&mut policy, &store, t, "theorem")
        };
        match r {
            Ok(r) => {
                *completed = r.completed();
                *fallback_uses = r.fallback_uses;
                PgStatus::Ok
            }
            Err(e) => fail(PgStatus::Engine, e),
        }
    })
}
