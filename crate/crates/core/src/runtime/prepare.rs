use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::bundle::Bundle;
use crate::irgraph::{HGraph, InstrKind};
use crate::mexfmt::{BinOp, CmpOp, FieldRef, MethodKey, MexType, SinkMode, TaintPolicy};
use crate::taintmod::sink_id;

use super::natives::Native;
use super::{RuntimeError, Value};

pub(crate) type Slot = usize;
pub(crate) const NO_SLOT: Slot = usize::MAX;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Target {
    User(usize),
    Native(Native),
}

/// Shadow-tag facts about a call site, used only by oracle runs.
#[derive(Debug, Default)]
pub(crate) struct OracleCall {
    pub sinks: Vec<(usize, Arc<str>)>,
    pub halt: bool,
    pub source: u64,
}

#[derive(Debug)]
pub(crate) struct Call {
    pub dst: Slot,
    pub target: Target,
    pub args: Box<[Slot]>,
    pub guard: Option<Slot>,
    pub name: Arc<str>,
    pub ret_default: Value,
    /// Tags a denied user call pops and whether it pushes a return tag.
    pub deny_pops: usize,
    pub deny_push: bool,
    pub oracle: OracleCall,
}

#[derive(Debug)]
pub(crate) enum Op {
    ConstInt { dst: Slot, v: i64 },
    ConstStr { dst: Slot, v: Arc<str> },
    Arith { dst: Slot, op: BinOp, a: Slot, b: Slot },
    Div { dst: Slot, a: Slot, b: Slot },
    Concat { dst: Slot, a: Slot, b: Slot },
    If { cmp: CmpOp, a: Slot, b: Slot },
    Goto,
    Return { src: Slot },
    ReturnVoid,
    New { dst: Slot, class: usize },
    IGet { dst: Slot, obj: Slot, field: usize, key: u32, taint: bool },
    ISet { obj: Slot, src: Slot, field: usize, key: u32, taint: bool },
    SGet { dst: Slot, field: usize, key: u32, taint: bool },
    SSet { src: Slot, field: usize, key: u32, taint: bool },
    Call(Box<Call>),
    Spawn { dst: Slot, code: usize, args: Box<[Slot]> },
    Join { src: Slot },
    Print { src: Slot },
    NullCheck { dst: Slot, src: Slot, pc: Option<u32> },
    DivZeroCheck { dst: Slot, src: Slot, pc: Option<u32> },
    TagSource { dst: Slot, bits: u64 },
    TagCombine { dst: Slot, ins: Box<[Slot]> },
    TagCheck { src: Slot, sink: Arc<str>, halt: bool },
    TagPush { src: Slot },
    TagPop { dst: Slot },
    TagFieldSet { obj: Option<Slot>, src: Slot, key: u32 },
    TagFieldGet { dst: Slot, obj: Option<Slot>, key: u32 },
    PermCheck { dst: Slot, permission: Arc<str>, callee: Arc<str> },
    Trace { name: Arc<str> },
}

#[derive(Debug)]
pub(crate) struct Edge {
    pub target: usize,
    /// Phi copies `(phi, incoming)` performed in parallel.
    pub moves: Vec<(Slot, Slot)>,
}

#[derive(Debug)]
pub(crate) struct Block {
    pub ops: Vec<Op>,
    pub edges: Vec<Edge>,
}

#[derive(Debug)]
pub(crate) struct Code {
    pub key: String,
    pub nslots: usize,
    pub blocks: Vec<Block>,
    pub entry: usize,
    /// Slot of each parameter, or `NO_SLOT` when unused.
    pub params: Vec<Slot>,
    pub param_types: Vec<MexType>,
    pub tparams: usize,
    pub ret_taintable: bool,
}

#[derive(Debug)]
pub(crate) struct ClassInfo {
    pub name: Arc<str>,
    pub defaults: Vec<Value>,
}

#[derive(Debug)]
pub(crate) struct Program {
    pub codes: Vec<Code>,
    pub classes: Vec<ClassInfo>,
    pub static_defaults: Vec<Value>,
}

struct Layout {
    class_index: HashMap<String, usize>,
    /// Instance fields: position in the object; statics: index into statics.
    fields: HashMap<FieldRef, (usize, bool, MexType)>,
    /// Dense id of each `Class.field` key, used by the field-taint map.
    key_index: HashMap<FieldRef, u32>,
}

pub(crate) fn prepare(bundle: &Bundle, oracle: Option<&TaintPolicy>) -> Result<Program, RuntimeError> {
    let mut classes = Vec::new();
    let mut static_defaults = Vec::new();
    let mut layout = Layout {
        class_index: HashMap::new(),
        fields: HashMap::new(),
        key_index: HashMap::new(),
    };
    for c in &bundle.classes {
        let mut defaults = Vec::new();
        for f in &c.fields {
            let r = FieldRef::new(c.name.clone(), f.name.clone());
            let key = layout.key_index.len() as u32;
            layout.key_index.insert(r.clone(), key);
            let pos = if f.is_static {
                static_defaults.push(Value::default_of(&f.ty));
                static_defaults.len() - 1
            } else {
                defaults.push(Value::default_of(&f.ty));
                defaults.len() - 1
            };
            layout.fields.insert(r, (pos, f.is_static, f.ty.clone()));
        }
        layout.class_index.insert(c.name.clone(), classes.len());
        classes.push(ClassInfo {
            name: Arc::from(c.name.as_str()),
            defaults,
        });
    }
    let index: BTreeMap<MethodKey, usize> = bundle
        .graphs
        .iter()
        .enumerate()
        .map(|(k, g)| (g.method.key(), k))
        .collect();
    let codes = bundle
        .graphs
        .iter()
        .map(|g| lower(g, &index, &layout, oracle))
        .collect::<Result<_, _>>()?;
    Ok(Program {
        codes,
        classes,
        static_defaults,
    })
}

fn taintable_count(params: &[MexType]) -> usize {
    params.iter().filter(|p| p.is_taintable()).count()
}

fn lower(
    g: &HGraph,
    index: &BTreeMap<MethodKey, usize>,
    layout: &Layout,
    oracle: Option<&TaintPolicy>,
) -> Result<Code, RuntimeError> {
    let block_pos: HashMap<_, _> = g.blocks().iter().enumerate().map(|(k, b)| (b.id, k)).collect();
    let s = |id: crate::irgraph::InstrId| id.index();
    let key = g.method.key();
    let field = |f: &FieldRef| {
        let (pos, _, ty) = layout
            .fields
            .get(f)
            .ok_or_else(|| RuntimeError::Unresolved(f.to_string()))?;
        Ok::<_, RuntimeError>((*pos, layout.key_index[f], ty.is_taintable()))
    };
    let mut params = vec![NO_SLOT; g.method.params.len()];
    let mut blocks = Vec::new();
    for b in g.blocks() {
        let mut ops = Vec::new();
        for &id in b.instructions() {
            let i = g.instr(id);
            let ins = i.inputs();
            let dst = s(id);
            let op = match &i.kind {
                InstrKind::Phi => continue,
                InstrKind::Param(k) => {
                    params[*k as usize] = dst;
                    continue;
                }
                InstrKind::ConstInt(v) => Op::ConstInt { dst, v: *v },
                InstrKind::ConstStr(v) => Op::ConstStr {
                    dst,
                    v: Arc::from(v.as_str()),
                },
                InstrKind::Add | InstrKind::Sub | InstrKind::Mul => Op::Arith {
                    dst,
                    op: match i.kind {
                        InstrKind::Add => BinOp::Add,
                        InstrKind::Sub => BinOp::Sub,
                        _ => BinOp::Mul,
                    },
                    a: s(ins[0]),
                    b: s(ins[1]),
                },
                InstrKind::Div => Op::Div {
                    dst,
                    a: s(ins[0]),
                    b: s(ins[1]),
                },
                InstrKind::Concat => Op::Concat {
                    dst,
                    a: s(ins[0]),
                    b: s(ins[1]),
                },
                InstrKind::If(cmp) => Op::If {
                    cmp: *cmp,
                    a: s(ins[0]),
                    b: s(ins[1]),
                },
                InstrKind::Goto => Op::Goto,
                InstrKind::Return => Op::Return { src: s(ins[0]) },
                InstrKind::ReturnVoid => Op::ReturnVoid,
                InstrKind::NewInstance(c) => Op::New {
                    dst,
                    class: *layout
                        .class_index
                        .get(c)
                        .ok_or_else(|| RuntimeError::Unresolved(c.clone()))?,
                },
                InstrKind::InstanceGet(f) => {
                    let (field, key, taint) = field(f)?;
                    Op::IGet {
                        dst,
                        obj: s(ins[0]),
                        field,
                        key,
                        taint,
                    }
                }
                InstrKind::InstanceSet(f) => {
                    let (field, key, taint) = field(f)?;
                    Op::ISet {
                        obj: s(ins[0]),
                        src: s(ins[1]),
                        field,
                        key,
                        taint,
                    }
                }
                InstrKind::StaticGet(f) => {
                    let (field, key, taint) = field(f)?;
                    Op::SGet {
                        dst,
                        field,
                        key,
                        taint,
                    }
                }
                InstrKind::StaticSet(f) => {
                    let (field, key, taint) = field(f)?;
                    Op::SSet {
                        src: s(ins[0]),
                        field,
                        key,
                        taint,
                    }
                }
                InstrKind::Invoke { callee, guarded } => {
                    let m = &callee.method;
                    let target = if m.is_intrinsic() {
                        Target::Native(
                            Native::resolve(m).ok_or_else(|| RuntimeError::Unresolved(m.to_string()))?,
                        )
                    } else {
                        Target::User(
                            *index
                                .get(&callee.key())
                                .ok_or_else(|| RuntimeError::Unresolved(callee.to_string()))?,
                        )
                    };
                    let args: Box<[Slot]> = i.call_args().iter().map(|&a| s(a)).collect();
                    let mut oc = OracleCall::default();
                    if let Some(p) = oracle {
                        if let Some(mode) = p.sink_mode(m) {
                            oc.halt = mode == SinkMode::Halt;
                            for (k, &a) in i.call_args().iter().enumerate() {
                                if g.instr(a).ty.is_taintable() {
                                    oc.sinks.push((k, Arc::from(sink_id(&key, i.pc, &m.to_string(), k))));
                                }
                            }
                        }
                        if i.ty.is_taintable() {
                            oc.source = p.source_tag(m).unwrap_or(0);
                        }
                    }
                    let user = matches!(target, Target::User(_));
                    Op::Call(Box::new(Call {
                        dst,
                        target,
                        args,
                        guard: guarded.then(|| s(*ins.last().expect("guard input"))),
                        name: Arc::from(m.to_string()),
                        ret_default: Value::default_of(&callee.ret),
                        deny_pops: if user { taintable_count(&callee.params) } else { 0 },
                        deny_push: user && callee.ret.is_taintable(),
                        oracle: oc,
                    }))
                }
                InstrKind::Spawn(callee) => Op::Spawn {
                    dst,
                    code: *index
                        .get(&callee.key())
                        .ok_or_else(|| RuntimeError::Unresolved(callee.to_string()))?,
                    args: ins.iter().map(|&a| s(a)).collect(),
                },
                InstrKind::Join => Op::Join { src: s(ins[0]) },
                InstrKind::Print => Op::Print { src: s(ins[0]) },
                InstrKind::NullCheck => Op::NullCheck {
                    dst,
                    src: s(ins[0]),
                    pc: i.pc,
                },
                InstrKind::DivZeroCheck => Op::DivZeroCheck {
                    dst,
                    src: s(ins[0]),
                    pc: i.pc,
                },
                InstrKind::TagSource(bits) => Op::TagSource { dst, bits: *bits },
                InstrKind::TagCombine => Op::TagCombine {
                    dst,
                    ins: ins.iter().map(|&a| s(a)).collect(),
                },
                InstrKind::TagCheck { sink, mode } => Op::TagCheck {
                    src: s(ins[0]),
                    sink: Arc::from(sink.as_str()),
                    halt: *mode == SinkMode::Halt,
                },
                InstrKind::TagPush => Op::TagPush { src: s(ins[0]) },
                InstrKind::TagPop => Op::TagPop { dst },
                InstrKind::TagFieldSet(f) => {
                    let key = field(f)?.1;
                    match ins {
                        [t] => Op::TagFieldSet { obj: None, src: s(*t), key },
                        _ => Op::TagFieldSet {
                            obj: Some(s(ins[0])),
                            src: s(ins[1]),
                            key,
                        },
                    }
                }
                InstrKind::TagFieldGet(f) => Op::TagFieldGet {
                    dst,
                    obj: ins.first().map(|&o| s(o)),
                    key: field(f)?.1,
                },
                InstrKind::PermCheck { permission, callee } => Op::PermCheck {
                    dst,
                    permission: Arc::from(permission.as_str()),
                    callee: Arc::from(callee.method.to_string()),
                },
                InstrKind::Trace(name) => Op::Trace {
                    name: Arc::from(name.as_str()),
                },
                InstrKind::Move => return Err(RuntimeError::Unresolved(format!("{key}: move outside SSA"))),
            };
            ops.push(op);
        }
        let edges = b
            .successors()
            .iter()
            .map(|&t| {
                let tb = g.block(t);
                let p = tb
                    .predecessors()
                    .iter()
                    .position(|&x| x == b.id)
                    .expect("edge lists are symmetric");
                let moves = tb
                    .instructions()
                    .iter()
                    .map(|&id| g.instr(id))
                    .take_while(|i| i.kind.is_phi())
                    .map(|phi| (s(phi.id), s(phi.inputs()[p])))
                    .collect();
                Edge {
                    target: block_pos[&t],
                    moves,
                }
            })
            .collect();
        blocks.push(Block { ops, edges });
    }
    Ok(Code {
        key: key.to_string(),
        nslots: g.next_instruction_id() as usize,
        blocks,
        entry: block_pos[&g.entry_block()],
        params,
        param_types: g.method.params.clone(),
        tparams: taintable_count(&g.method.params),
        ret_taintable: g.method.ret.is_taintable(),
    })
}
