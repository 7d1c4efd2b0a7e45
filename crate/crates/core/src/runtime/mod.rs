//! Interpreter for compiled bundles plus the taint runtime library.
//!
//! Graphs are executed in SSA form: each instruction owns one value slot
//! and phis are resolved as a parallel copy on the incoming edge. Tag
//! instructions drive a per-thread taint stack and the shared field-taint
//! map; `PermCheck` consults the grant table.
//!
//! With [`RunOptions::oracle`] set, an uninstrumented bundle runs with a
//! shadow tag on every value, which gives the ground-truth leak events
//! sliced instrumentation is checked against.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use thiserror::Error;

use crate::bundle::Bundle;
use crate::mexfmt::{Grant, MexType, TaintPolicy};

mod interp;
mod natives;
mod prepare;

pub use natives::{DEVICE_ID, LINE1_NUMBER};

/// Exit status of a run whose halt-mode sink fired.
pub const EXIT_HALT: i32 = 42;
pub const EXIT_ERROR: i32 = 1;

pub struct Object {
    pub id: u64,
    pub class: Arc<str>,
    fields: Mutex<Vec<Value>>,
}

impl fmt::Debug for Object {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.class, self.id)
    }
}

#[derive(Debug, Clone, Default)]
pub enum Value {
    #[default]
    Void,
    Int(i64),
    Str(Arc<str>),
    Obj(Option<Arc<Object>>),
}

impl Value {
    pub fn str(s: &str) -> Value {
        Value::Str(Arc::from(s))
    }

    pub fn default_of(ty: &MexType) -> Value {
        match ty {
            MexType::Int => Value::Int(0),
            MexType::Str => Value::str(""),
            MexType::Obj(_) => Value::Obj(None),
            MexType::Void => Value::Void,
        }
    }

    pub fn as_int(&self) -> i64 {
        match self {
            Value::Int(v) => *v,
            _ => 0,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Value::Str(s) => s,
            _ => "",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Void => f.write_str("void"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Str(s) => f.write_str(s),
            Value::Obj(Some(o)) => write!(f, "{}@{}", o.class, o.id),
            Value::Obj(None) => f.write_str("null"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LeakEvent {
    pub sink: String,
    pub tag: u64,
    pub thread: u64,
    /// Number of earlier leaks at the same sink on the same thread.
    pub occurrence: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermEvent {
    pub verdict: Grant,
    pub permission: String,
    pub callee: String,
    pub thread: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Out { thread: u64, text: String },
    Leak(LeakEvent),
    Perm(PermEvent),
    Trace { thread: u64, method: String },
    /// Every invoke, the entry method and each spawned thread's method,
    /// when calls are recorded.
    Call { thread: u64, method: String },
    /// Data handed to an outbound channel (`rt::Log`, `rt::Net`, `rt::Sms`).
    Outbound { thread: u64, text: String },
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Entry method arguments, parsed by declared parameter type.
    pub args: Vec<String>,
    /// Grants that take precedence over the bundle's permission policy.
    pub grants: BTreeMap<String, Grant>,
    /// Runs with shadow tags under this policy; the bundle must not carry
    /// taint instrumentation.
    pub oracle: Option<TaintPolicy>,
    pub record_calls: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    /// Every event in emission order.
    pub events: Vec<Event>,
    pub exit: i32,
    pub return_value: Option<String>,
    pub error: Option<String>,
    pub wall: Duration,
}

impl RunReport {
    pub fn prints(&self) -> Vec<String> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Out { text, .. } => Some(text.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn leaks(&self) -> Vec<LeakEvent> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Leak(l) => Some(l.clone()),
                _ => None,
            })
            .collect()
    }

    /// Leaks as a sorted multiset of (sink, tag).
    pub fn leak_multiset(&self) -> Vec<(String, u64)> {
        let mut v: Vec<_> = self.leaks().into_iter().map(|l| (l.sink, l.tag)).collect();
        v.sort();
        v
    }

    pub fn perms(&self) -> Vec<PermEvent> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Perm(p) => Some(p.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn traces(&self) -> Vec<String> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Trace { method, .. } => Some(method.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn calls(&self) -> Vec<String> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Call { method, .. } => Some(method.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn outbound(&self) -> Vec<String> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Outbound { text, .. } => Some(text.clone()),
                _ => None,
            })
            .collect()
    }

    /// Line protocol: `OUT`, `LEAK`, `PERM` and `TRACE` records in order.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            match e {
                Event::Out { text, .. } => {
                    let _ = writeln!(out, "OUT {text}");
                }
                Event::Leak(l) => {
                    let _ = writeln!(out, "LEAK {} {:#x} {}", l.sink, l.tag, l.thread);
                }
                Event::Perm(p) => {
                    let _ = writeln!(out, "PERM {} {} {}", p.verdict, p.permission, p.callee);
                }
                Event::Trace { method, .. } => {
                    let _ = writeln!(out, "TRACE {method}");
                }
                Event::Call { .. } | Event::Outbound { .. } => {}
            }
        }
        out
    }

    /// Structured report, one `key=value` record per line.
    pub fn to_record_text(&self) -> String {
        let q = |s: &str| serde_json::to_string(s).expect("string serializes");
        let mut out = String::new();
        for e in &self.events {
            let _ = match e {
                Event::Out { thread, text } => writeln!(out, "print thread={thread} text={}", q(text)),
                Event::Leak(l) => writeln!(
                    out,
                    "leak sink={} tag={:#x} thread={} occurrence={}",
                    l.sink, l.tag, l.thread, l.occurrence
                ),
                Event::Perm(p) => writeln!(
                    out,
                    "perm verdict={} permission={} callee={} thread={}",
                    p.verdict, p.permission, p.callee, p.thread
                ),
                Event::Trace { thread, method } => writeln!(out, "trace thread={thread} method={method}"),
                Event::Call { thread, method } => writeln!(out, "call thread={thread} method={method}"),
                Event::Outbound { thread, text } => {
                    writeln!(out, "outbound thread={thread} data={}", q(text))
                }
            };
        }
        if let Some(v) = &self.return_value {
            let _ = writeln!(out, "return value={}", q(v));
        }
        if let Some(e) = &self.error {
            let _ = writeln!(out, "error message={}", q(e));
        }
        let _ = writeln!(out, "exit status={}", self.exit);
        let _ = writeln!(out, "wall micros={}", self.wall.as_micros());
        out
    }
}

/// Problems that prevent a run from starting.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("bundle has no unique entry method")]
    NoEntry,
    #[error("entry method takes {expected} argument(s), {given} given")]
    ArgCount { expected: usize, given: usize },
    #[error("argument {index}: cannot pass '{text}' as {ty}")]
    BadArg { index: usize, text: String, ty: String },
    #[error("unresolved callee {0}")]
    Unresolved(String),
    #[error("the oracle needs an uninstrumented bundle")]
    InstrumentedOracle,
}

/// Executes the bundle's entry method.
pub fn execute(bundle: &Bundle, opts: &RunOptions) -> Result<RunReport, RuntimeError> {
    interp::run(bundle, opts)
}

/// Ground-truth leak events from whole-program shadow tags.
pub fn naive_oracle(
    bundle: &Bundle,
    policy: &TaintPolicy,
    args: &[String],
) -> Result<RunReport, RuntimeError> {
    execute(
        bundle,
        &RunOptions {
            args: args.to_vec(),
            oracle: Some(policy.clone()),
            ..Default::default()
        },
    )
}
