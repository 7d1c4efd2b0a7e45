use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering::Relaxed};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use dashmap::DashMap;
use parking_lot::Mutex;

use crate::bundle::Bundle;
use crate::mexfmt::{CmpOp, Grant, MexType};

use super::prepare::{prepare, Code, Op, Program, Slot, Target, NO_SLOT};
use super::{
    Event, LeakEvent, Object, PermEvent, RunOptions, RunReport, RuntimeError, Value, EXIT_ERROR,
    EXIT_HALT,
};

const THREAD_STACK: usize = 256 << 20;
const MAX_DEPTH: usize = 20_000;

/// Field-taint map key: the precomputed `Class.field` id, paired with the
/// object id for instance fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum FieldKey {
    Static(u32),
    Instance(u64, u32),
}

#[derive(Debug)]
enum Fault {
    Error(String),
    Halt,
    Stopped,
}

type Outcome = Result<(), Fault>;

struct Shared {
    prog: Program,
    statics: Vec<Mutex<Value>>,
    field_taint: DashMap<FieldKey, u64>,
    events: Mutex<Vec<Event>>,
    threads: Mutex<BTreeMap<u64, Option<JoinHandle<Outcome>>>>,
    next_tid: AtomicU64,
    next_obj: AtomicU64,
    halted: AtomicBool,
    stop: AtomicBool,
    grants: BTreeMap<String, Grant>,
    mask: u64,
    oracle: bool,
    /// Tags travel on the thread stack across calls.
    protocol: bool,
    record_calls: bool,
}

struct Thread {
    tid: u64,
    stack: Vec<u64>,
    depth: usize,
    occurrences: HashMap<Arc<str>, u32>,
}

impl Shared {
    fn emit(&self, e: Event) {
        self.events.lock().push(e);
    }

    fn leak(&self, th: &mut Thread, sink: &Arc<str>, tag: u64, halt: bool) -> Outcome {
        let n = th.occurrences.entry(sink.clone()).or_insert(0);
        let occurrence = *n;
        *n += 1;
        self.emit(Event::Leak(LeakEvent {
            sink: sink.to_string(),
            tag,
            thread: th.tid,
            occurrence,
        }));
        if halt {
            self.halted.store(true, Relaxed);
            self.stop.store(true, Relaxed);
            return Err(Fault::Halt);
        }
        Ok(())
    }
}

fn err<T>(code: &Code, pc: Option<u32>, what: &str) -> Result<T, Fault> {
    Err(Fault::Error(match pc {
        Some(pc) => format!("{what} in {} at bytecode index {pc}", code.key),
        None => format!("{what} in {}", code.key),
    }))
}

fn method_name(code: &Code) -> &str {
    code.key.rsplit_once('/').map_or(&code.key, |(name, _)| name)
}

fn object<'v>(v: &'v Value, code: &Code) -> Result<&'v Arc<Object>, Fault> {
    match v {
        Value::Obj(Some(o)) => Ok(o),
        _ => err(code, None, "null dereference"),
    }
}

fn compare(cmp: CmpOp, a: &Value, b: &Value) -> bool {
    let eq = || match (a, b) {
        (Value::Int(x), Value::Int(y)) => x == y,
        (Value::Str(x), Value::Str(y)) => x == y,
        (Value::Obj(Some(x)), Value::Obj(Some(y))) => Arc::ptr_eq(x, y),
        (Value::Obj(None), Value::Obj(None)) => true,
        _ => false,
    };
    match cmp {
        CmpOp::Eq => eq(),
        CmpOp::Ne => !eq(),
        CmpOp::Lt => a.as_int() < b.as_int(),
    }
}

fn invoke(
    sh: &Arc<Shared>,
    th: &mut Thread,
    ci: usize,
    args: Vec<Value>,
    arg_tags: &[u64],
) -> Result<(Value, u64), Fault> {
    let code = &sh.prog.codes[ci];
    if th.depth >= MAX_DEPTH {
        return err(code, None, "call depth limit exceeded");
    }
    th.depth += 1;
    let mut slots: Vec<Value> = vec![Value::Void; code.nslots];
    let mut tags: Vec<u64> = if sh.oracle { vec![0; code.nslots] } else { Vec::new() };
    for (k, v) in args.into_iter().enumerate() {
        let s = code.params[k];
        if s != NO_SLOT {
            slots[s] = v;
            if sh.oracle {
                tags[s] = arg_tags[k];
            }
        }
    }
    let entry_depth = th.stack.len();
    let oracle = sh.oracle;
    let mut b = code.entry;
    let result = 'run: loop {
        let block = &code.blocks[b];
        let mut edge = 0;
        for op in &block.ops {
            match op {
                Op::ConstInt { dst, v } => slots[*dst] = Value::Int(*v),
                Op::ConstStr { dst, v } => slots[*dst] = Value::Str(v.clone()),
                Op::Arith { dst, op, a, b } => {
                    let r = op.eval(slots[*a].as_int(), slots[*b].as_int()).unwrap_or(0);
                    slots[*dst] = Value::Int(r);
                    if oracle {
                        tags[*dst] = tags[*a] | tags[*b];
                    }
                }
                Op::Div { dst, a, b } => {
                    let (x, y) = (slots[*a].as_int(), slots[*b].as_int());
                    slots[*dst] = Value::Int(if y == 0 { 0 } else { x.wrapping_div(y) });
                    if oracle {
                        tags[*dst] = tags[*a] | tags[*b];
                    }
                }
                Op::Concat { dst, a, b } => {
                    let mut s = String::with_capacity(slots[*a].as_str().len() + slots[*b].as_str().len());
                    s.push_str(slots[*a].as_str());
                    s.push_str(slots[*b].as_str());
                    slots[*dst] = Value::Str(Arc::from(s));
                    if oracle {
                        tags[*dst] = tags[*a] | tags[*b];
                    }
                }
                Op::If { cmp, a, b } => {
                    edge = if compare(*cmp, &slots[*a], &slots[*b]) { 0 } else { 1 };
                }
                Op::Goto => edge = 0,
                Op::Return { src } => {
                    check_balance(sh, th, code, entry_depth)?;
                    let t = if oracle { tags[*src] } else { 0 };
                    break 'run Ok((std::mem::take(&mut slots[*src]), t));
                }
                Op::ReturnVoid => {
                    check_balance(sh, th, code, entry_depth)?;
                    break 'run Ok((Value::Void, 0));
                }
                Op::New { dst, class } => {
                    let c = &sh.prog.classes[*class];
                    slots[*dst] = Value::Obj(Some(Arc::new(Object {
                        id: sh.next_obj.fetch_add(1, Relaxed),
                        class: c.name.clone(),
                        fields: Mutex::new(c.defaults.clone()),
                    })));
                }
                Op::IGet { dst, obj, field, key, taint } => {
                    let o = object(&slots[*obj], code)?;
                    let v = o.fields.lock()[*field].clone();
                    if oracle && *taint {
                        tags[*dst] = field_tag(sh, FieldKey::Instance(o.id, *key));
                    }
                    slots[*dst] = v;
                }
                Op::ISet { obj, src, field, key, taint } => {
                    let o = object(&slots[*obj], code)?;
                    o.fields.lock()[*field] = slots[*src].clone();
                    if oracle && *taint {
                        sh.field_taint.insert(FieldKey::Instance(o.id, *key), tags[*src]);
                    }
                }
                Op::SGet { dst, field, key, taint } => {
                    slots[*dst] = sh.statics[*field].lock().clone();
                    if oracle && *taint {
                        tags[*dst] = field_tag(sh, FieldKey::Static(*key));
                    }
                }
                Op::SSet { src, field, key, taint } => {
                    *sh.statics[*field].lock() = slots[*src].clone();
                    if oracle && *taint {
                        sh.field_taint.insert(FieldKey::Static(*key), tags[*src]);
                    }
                }
                Op::Call(c) => {
                    if sh.record_calls {
                        sh.emit(Event::Call {
                            thread: th.tid,
                            method: c.name.to_string(),
                        });
                    }
                    if oracle {
                        for (k, sink) in &c.oracle.sinks {
                            let t = tags[c.args[*k]];
                            if t & sh.mask != 0 {
                                sh.leak(th, sink, t, c.oracle.halt)?;
                            }
                        }
                    }
                    let allowed = c.guard.is_none_or(|g| slots[g].as_int() != 0);
                    let arg_or = |tags: &[u64]| c.args.iter().fold(0, |acc, &a| acc | tags[a]);
                    let (v, t) = if !allowed {
                        if sh.protocol {
                            for _ in 0..c.deny_pops {
                                pop(th, code)?;
                            }
                            if c.deny_push {
                                th.stack.push(0);
                            }
                        }
                        let t = match c.target {
                            Target::Native(_) if oracle => arg_or(&tags),
                            _ => 0,
                        };
                        (c.ret_default.clone(), t)
                    } else {
                        match c.target {
                            Target::User(callee) => {
                                let args = c.args.iter().map(|&a| slots[a].clone()).collect();
                                let at: Vec<u64> = if oracle {
                                    c.args.iter().map(|&a| tags[a]).collect()
                                } else {
                                    Vec::new()
                                };
                                invoke(sh, th, callee, args, &at)?
                            }
                            Target::Native(n) => {
                                let args: Vec<Value> = c.args.iter().map(|&a| slots[a].clone()).collect();
                                if n.is_outbound() {
                                    let parts: Vec<String> = args.iter().map(|v| v.to_string()).collect();
                                    sh.emit(Event::Outbound {
                                        thread: th.tid,
                                        text: format!("{} {}", c.name, parts.join(" ")),
                                    });
                                }
                                let t = if oracle { arg_or(&tags) } else { 0 };
                                (n.call(&args), t)
                            }
                        }
                    };
                    slots[c.dst] = v;
                    if oracle {
                        tags[c.dst] = t | c.oracle.source;
                    }
                }
                Op::Spawn { dst, code: callee, args } => {
                    let vals: Vec<Value> = args.iter().map(|&a| slots[a].clone()).collect();
                    let at: Vec<u64> = if oracle {
                        args.iter().map(|&a| tags[a]).collect()
                    } else {
                        Vec::new()
                    };
                    let moved = if sh.protocol {
                        let k = sh.prog.codes[*callee].tparams;
                        if th.stack.len() < k {
                            return err(code, None, "taint stack underflow at spawn");
                        }
                        th.stack.split_off(th.stack.len() - k)
                    } else {
                        Vec::new()
                    };
                    let tid = spawn(sh, *callee, vals, at, moved).map_err(Fault::Error)?;
                    slots[*dst] = Value::Int(tid as i64);
                }
                Op::Join { src } => join(sh, slots[*src].as_int())?,
                Op::Print { src } => sh.emit(Event::Out {
                    thread: th.tid,
                    text: slots[*src].to_string(),
                }),
                Op::NullCheck { dst, src, pc } => {
                    if matches!(slots[*src], Value::Obj(None)) {
                        return err(code, *pc, "null dereference");
                    }
                    slots[*dst] = slots[*src].clone();
                    if oracle {
                        tags[*dst] = tags[*src];
                    }
                }
                Op::DivZeroCheck { dst, src, pc } => {
                    if slots[*src].as_int() == 0 {
                        return err(code, *pc, "division by zero");
                    }
                    slots[*dst] = slots[*src].clone();
                    if oracle {
                        tags[*dst] = tags[*src];
                    }
                }
                Op::TagSource { dst, bits } => tags_set(&mut slots, *dst, *bits),
                Op::TagCombine { dst, ins } => {
                    let t = ins.iter().fold(0, |acc, &a| acc | tag_of(&slots[a]));
                    tags_set(&mut slots, *dst, t);
                }
                Op::TagCheck { src, sink, halt } => {
                    let t = tag_of(&slots[*src]);
                    if t & sh.mask != 0 {
                        sh.leak(th, sink, t, *halt)?;
                    }
                }
                Op::TagPush { src } => th.stack.push(tag_of(&slots[*src])),
                Op::TagPop { dst } => {
                    let t = pop(th, code)?;
                    tags_set(&mut slots, *dst, t);
                }
                Op::TagFieldSet { obj, src, key } => {
                    let k = match obj {
                        Some(o) => FieldKey::Instance(object(&slots[*o], code)?.id, *key),
                        None => FieldKey::Static(*key),
                    };
                    sh.field_taint.insert(k, tag_of(&slots[*src]));
                }
                Op::TagFieldGet { dst, obj, key } => {
                    let k = match obj {
                        Some(o) => FieldKey::Instance(object(&slots[*o], code)?.id, *key),
                        None => FieldKey::Static(*key),
                    };
                    tags_set(&mut slots, *dst, field_tag(sh, k));
                }
                Op::PermCheck { dst, permission, callee } => {
                    let verdict = sh.grants.get(&**permission).copied().unwrap_or(Grant::Deny);
                    sh.emit(Event::Perm(PermEvent {
                        verdict,
                        permission: permission.to_string(),
                        callee: callee.to_string(),
                        thread: th.tid,
                    }));
                    slots[*dst] = Value::Int(i64::from(verdict == Grant::Allow));
                }
                Op::Trace { name } => sh.emit(Event::Trace {
                    thread: th.tid,
                    method: name.to_string(),
                }),
            }
        }
        let e = &block.edges[edge];
        match e.moves.as_slice() {
            [] => {}
            [(d, s)] => {
                slots[*d] = slots[*s].clone();
                if oracle {
                    tags[*d] = tags[*s];
                }
            }
            moves => {
                let vals: Vec<(Value, u64)> = moves
                    .iter()
                    .map(|&(_, s)| (slots[s].clone(), if oracle { tags[s] } else { 0 }))
                    .collect();
                for (&(d, _), (v, t)) in moves.iter().zip(vals) {
                    slots[d] = v;
                    if oracle {
                        tags[d] = t;
                    }
                }
            }
        }
        b = e.target;
        if sh.stop.load(Relaxed) {
            break Err(if sh.halted.load(Relaxed) { Fault::Halt } else { Fault::Stopped });
        }
    };
    th.depth -= 1;
    result
}

/// Tag values share the slot array, stored as `Int` bit patterns.
fn tags_set(slots: &mut [Value], dst: Slot, t: u64) {
    slots[dst] = Value::Int(t as i64);
}

fn tag_of(v: &Value) -> u64 {
    v.as_int() as u64
}

fn field_tag(sh: &Shared, k: FieldKey) -> u64 {
    sh.field_taint.get(&k).map_or(0, |t| *t)
}

fn pop(th: &mut Thread, code: &Code) -> Result<u64, Fault> {
    match th.stack.pop() {
        Some(t) => Ok(t),
        None => err(code, None, "taint stack underflow"),
    }
}

fn check_balance(sh: &Shared, th: &Thread, code: &Code, entry_depth: usize) -> Outcome {
    if !sh.protocol {
        return Ok(());
    }
    let expected = entry_depth as i64 - code.tparams as i64 + i64::from(code.ret_taintable);
    if th.stack.len() as i64 != expected {
        return err(
            code,
            None,
            &format!("taint stack imbalance (depth {}, expected {expected})", th.stack.len()),
        );
    }
    Ok(())
}

fn spawn(sh: &Arc<Shared>, ci: usize, args: Vec<Value>, arg_tags: Vec<u64>, stack: Vec<u64>) -> Result<u64, String> {
    let mut threads = sh.threads.lock();
    let tid = sh.next_tid.fetch_add(1, Relaxed);
    if sh.record_calls {
        sh.emit(Event::Call {
            thread: tid,
            method: method_name(&sh.prog.codes[ci]).to_string(),
        });
    }
    let sh2 = sh.clone();
    let h = std::thread::Builder::new()
        .name(format!("mex-{tid}"))
        .stack_size(THREAD_STACK)
        .spawn(move || {
            let mut th = Thread {
                tid,
                stack,
                depth: 0,
                occurrences: HashMap::new(),
            };
            invoke(&sh2, &mut th, ci, args, &arg_tags).map(|_| ())
        })
        .map_err(|e| format!("cannot start thread: {e}"))?;
    threads.insert(tid, Some(h));
    Ok(tid)
}

fn join(sh: &Shared, tid: i64) -> Outcome {
    let h = {
        let mut threads = sh.threads.lock();
        match u64::try_from(tid).ok().and_then(|t| threads.get_mut(&t)) {
            None => return Err(Fault::Error(format!("join on invalid thread id {tid}"))),
            Some(slot) => match slot.take() {
                None => return Err(Fault::Error(format!("thread {tid} already joined"))),
                Some(h) => h,
            },
        }
    };
    match h.join() {
        Ok(r) => r,
        Err(_) => Err(Fault::Error(format!("thread {tid} panicked"))),
    }
}

fn parse_arg(index: usize, text: &str, ty: &MexType) -> Result<Value, RuntimeError> {
    let bad = || RuntimeError::BadArg {
        index,
        text: text.to_string(),
        ty: ty.to_string(),
    };
    match ty {
        MexType::Int => text.parse().map(Value::Int).map_err(|_| bad()),
        MexType::Str => Ok(Value::str(text)),
        _ => Err(bad()),
    }
}

pub(super) fn run(bundle: &Bundle, opts: &RunOptions) -> Result<RunReport, RuntimeError> {
    if opts.oracle.is_some() && bundle.is_taint_instrumented() {
        return Err(RuntimeError::InstrumentedOracle);
    }
    let entry = bundle.entry_graph().ok_or(RuntimeError::NoEntry)?.method.key();
    let prog = prepare(bundle, opts.oracle.as_ref())?;
    let ci = bundle
        .graphs
        .iter()
        .position(|g| g.method.key() == entry)
        .ok_or(RuntimeError::NoEntry)?;
    let code = &prog.codes[ci];
    if opts.args.len() != code.param_types.len() {
        return Err(RuntimeError::ArgCount {
            expected: code.param_types.len(),
            given: opts.args.len(),
        });
    }
    let args = opts
        .args
        .iter()
        .zip(&code.param_types)
        .enumerate()
        .map(|(k, (a, t))| parse_arg(k, a, t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut grants = bundle.perm.as_ref().map(|p| p.grants.clone()).unwrap_or_default();
    grants.extend(opts.grants.iter().map(|(k, v)| (k.clone(), *v)));
    let mask = match (&opts.oracle, &bundle.taint) {
        (Some(p), _) | (None, Some(p)) => p.watched_mask,
        (None, None) => u64::MAX,
    };
    let protocol = opts.oracle.is_none() && bundle.passes.iter().any(|p| p == "taint");
    let (tparams, ret_taintable, nargs) = (code.tparams, code.ret_taintable, args.len());
    let sh = Arc::new(Shared {
        statics: prog.static_defaults.iter().cloned().map(Mutex::new).collect(),
        prog,
        field_taint: DashMap::new(),
        events: Mutex::new(Vec::new()),
        threads: Mutex::new(BTreeMap::new()),
        next_tid: AtomicU64::new(1),
        next_obj: AtomicU64::new(1),
        halted: AtomicBool::new(false),
        stop: AtomicBool::new(false),
        grants,
        mask,
        oracle: opts.oracle.is_some(),
        protocol,
        record_calls: opts.record_calls,
    });

    if opts.record_calls {
        sh.emit(Event::Call {
            thread: 0,
            method: method_name(&sh.prog.codes[ci]).to_string(),
        });
    }
    let start = Instant::now();
    let sh2 = sh.clone();
    let main = std::thread::Builder::new()
        .name("mex-0".into())
        .stack_size(THREAD_STACK)
        .spawn(move || {
            let mut th = Thread {
                tid: 0,
                stack: if protocol { vec![0; tparams] } else { Vec::new() },
                depth: 0,
                occurrences: HashMap::new(),
            };
            let r = invoke(&sh2, &mut th, ci, args, &vec![0; nargs]);
            if protocol && ret_taintable && r.is_ok() {
                th.stack.pop();
            }
            r
        })
        .expect("main interpreter thread starts");
    let main_result = main
        .join()
        .unwrap_or_else(|_| Err(Fault::Error("interpreter panicked".into())));
    if main_result.is_err() {
        sh.stop.store(true, Relaxed);
    }
    let mut first_thread_error = None;
    loop {
        let pending: Vec<(u64, JoinHandle<Outcome>)> = sh
            .threads
            .lock()
            .iter_mut()
            .filter_map(|(t, h)| h.take().map(|h| (*t, h)))
            .collect();
        if pending.is_empty() {
            break;
        }
        for (tid, h) in pending {
            let r = h
                .join()
                .unwrap_or_else(|_| Err(Fault::Error(format!("thread {tid} panicked"))));
            if let Err(Fault::Error(e)) = r {
                first_thread_error.get_or_insert(e);
            }
        }
    }
    let wall = start.elapsed();

    let mut report = RunReport {
        events: std::mem::take(&mut *sh.events.lock()),
        wall,
        ..Default::default()
    };
    match main_result {
        Ok((v, _)) => {
            if !matches!(v, Value::Void) {
                report.return_value = Some(v.to_string());
            }
            if let Some(e) = first_thread_error {
                report.error = Some(e);
            }
        }
        Err(Fault::Error(e)) => report.error = Some(e),
        Err(Fault::Halt | Fault::Stopped) => {}
    }
    report.exit = if sh.halted.load(Relaxed) {
        EXIT_HALT
    } else if report.error.is_some() {
        EXIT_ERROR
    } else {
        0
    };
    Ok(report)
}
