use std::collections::{BTreeSet, HashMap};
use std::fmt;

use super::{dom, BlockId, HGraph, HInstruction, InstrId, InstrKind, IrType, Use};
use crate::mexfmt::CmpOp;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub block: Option<BlockId>,
    pub instr: Option<InstrId>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.block, self.instr) {
            (_, Some(i)) => write!(f, "instr {i}: {}", self.message),
            (Some(b), None) => write!(f, "block {b}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

struct Auditor<'a> {
    g: &'a HGraph,
    out: Vec<Violation>,
}

impl Auditor<'_> {
    fn graph(&mut self, message: impl Into<String>) {
        self.out.push(Violation {
            block: None,
            instr: None,
            message: message.into(),
        });
    }

    fn block(&mut self, b: BlockId, message: impl Into<String>) {
        self.out.push(Violation {
            block: Some(b),
            instr: None,
            message: message.into(),
        });
    }

    fn instr(&mut self, i: &HInstruction, message: impl Into<String>) {
        self.out.push(Violation {
            block: Some(i.block),
            instr: Some(i.id),
            message: message.into(),
        });
    }
}

/// Checks every structural invariant; an empty result means the graph is
/// well formed.
pub fn audit(g: &HGraph) -> Vec<Violation> {
    let mut a = Auditor { g, out: Vec::new() };
    if g.blocks.is_empty() {
        a.graph("graph has no blocks");
        return a.out;
    }
    check_blocks(&mut a);
    check_membership(&mut a);
    if !a.out.is_empty() {
        return a.out;
    }
    check_def_use(&mut a);
    for i in g.instructions() {
        check_types(&mut a, i);
    }
    if g.in_ssa {
        check_ssa(&mut a);
    }
    a.out
}

fn check_blocks(a: &mut Auditor) {
    let g = a.g;
    for (k, b) in g.blocks.iter().enumerate() {
        if b.id.index() != k {
            a.block(b.id, format!("block id does not match position {k}"));
        }
        let mut seen = BTreeSet::new();
        for &s in &b.succs {
            if s.index() >= g.blocks.len() {
                a.block(b.id, format!("successor {s} does not exist"));
                continue;
            }
            if !seen.insert(s) {
                a.block(b.id, format!("duplicate successor {s}"));
            }
            if !g.blocks[s.index()].preds.contains(&b.id) {
                a.block(b.id, format!("successor {s} does not list it as predecessor"));
            }
        }
        let mut seen = BTreeSet::new();
        for &p in &b.preds {
            if p.index() >= g.blocks.len() {
                a.block(b.id, format!("predecessor {p} does not exist"));
                continue;
            }
            if !seen.insert(p) {
                a.block(b.id, format!("duplicate predecessor {p}"));
            }
            if !g.blocks[p.index()].succs.contains(&b.id) {
                a.block(b.id, format!("predecessor {p} does not list it as successor"));
            }
        }
    }
    if !g.blocks[0].preds.is_empty() {
        a.block(BlockId::ENTRY, "entry block has predecessors");
    }
    let reached: BTreeSet<usize> = dom::reverse_post_order(&g.successor_lists(), 0)
        .into_iter()
        .collect();
    for b in &g.blocks {
        if !reached.contains(&b.id.index()) {
            a.block(b.id, "unreachable from entry");
        }
    }
}

fn check_membership(a: &mut Auditor) {
    let g = a.g;
    let mut owner: HashMap<InstrId, BlockId> = HashMap::new();
    for b in &g.blocks {
        if b.instrs.is_empty() {
            a.block(b.id, "block is empty");
            continue;
        }
        let mut in_phis = true;
        for (pos, &id) in b.instrs.iter().enumerate() {
            let Some(i) = g.get(id) else {
                a.block(b.id, format!("lists removed instruction {id}"));
                continue;
            };
            if owner.insert(id, b.id).is_some() {
                a.instr(i, "listed more than once");
            }
            if i.block != b.id {
                a.instr(i, format!("records block {} but is listed in {}", i.block, b.id));
            }
            if i.kind.is_phi() {
                if !in_phis {
                    a.instr(i, "phi after non-phi instruction");
                }
            } else {
                in_phis = false;
            }
            let last = pos + 1 == b.instrs.len();
            if i.kind.is_terminator() != last {
                a.instr(
                    i,
                    if last {
                        "block does not end in a terminator"
                    } else {
                        "terminator in the middle of a block"
                    },
                );
            }
            if last {
                let want = match i.kind {
                    InstrKind::If(_) => 2,
                    InstrKind::Goto => 1,
                    _ => 0,
                };
                if i.kind.is_terminator() && b.succs.len() != want {
                    a.instr(i, format!("{} needs {want} successor(s), block has {}", i.kind.name(), b.succs.len()));
                }
            }
            if matches!(i.kind, InstrKind::Param(_)) && b.id != BlockId::ENTRY {
                a.instr(i, "parameter outside the entry block");
            }
        }
    }
    for (k, slot) in g.instrs.iter().enumerate() {
        if let Some(i) = slot {
            if i.id.index() != k {
                a.instr(i, "id does not match arena slot");
            }
            if i.id.0 >= g.next_id {
                a.instr(i, "id not below the id counter");
            }
            if !owner.contains_key(&i.id) {
                a.instr(i, "not listed in any block");
            }
        }
    }
    if g.instrs.len() as u64 > g.next_id as u64 {
        a.graph("arena larger than the id counter");
    }
}

fn check_def_use(a: &mut Auditor) {
    let g = a.g;
    let mut expected: HashMap<InstrId, BTreeSet<Use>> = HashMap::new();
    for i in g.instructions() {
        for (index, &d) in i.inputs.iter().enumerate() {
            if d == InstrId::UNRESOLVED {
                if g.in_ssa {
                    a.instr(i, format!("input {index} unresolved"));
                }
                continue;
            }
            if !g.contains(d) {
                a.instr(i, format!("input {index} refers to missing instruction {d}"));
                continue;
            }
            expected.entry(d).or_default().insert(Use { user: i.id, index });
        }
    }
    for i in g.instructions() {
        let want = expected.remove(&i.id).unwrap_or_default();
        if want != i.uses {
            a.instr(i, format!("uses {:?} are not the inverse of inputs {:?}", i.uses, want));
        }
    }
}

fn check_types(a: &mut Auditor, i: &HInstruction) {
    let g = a.g;
    let ty = |k: usize| -> Option<&IrType> {
        let d = *i.inputs.get(k)?;
        g.get(d).map(|x| &x.ty)
    };
    let mut errs: Vec<String> = Vec::new();
    let arity = |n: usize, errs: &mut Vec<String>| {
        if i.inputs.len() != n {
            errs.push(format!("{} expects {n} input(s), has {}", i.kind.name(), i.inputs.len()));
            false
        } else {
            true
        }
    };
    let expect = |k: usize, want: &IrType, errs: &mut Vec<String>| {
        if let Some(t) = ty(k) {
            if t != want {
                errs.push(format!("input {k} has type {t}, expected {want}"));
            }
        }
    };
    let result = |want: &IrType, errs: &mut Vec<String>| {
        if &i.ty != want {
            errs.push(format!("result type {} should be {want}", i.ty));
        }
    };
    use InstrKind as K;
    match &i.kind {
        K::ConstInt(_) => {
            arity(0, &mut errs);
            result(&IrType::Int, &mut errs);
        }
        K::ConstStr(_) => {
            arity(0, &mut errs);
            result(&IrType::Str, &mut errs);
        }
        K::Add | K::Sub | K::Mul | K::Div => {
            if arity(2, &mut errs) {
                expect(0, &IrType::Int, &mut errs);
                expect(1, &IrType::Int, &mut errs);
            }
            result(&IrType::Int, &mut errs);
        }
        K::Concat => {
            if arity(2, &mut errs) {
                for k in 0..2 {
                    if let Some(t) = ty(k) {
                        if !t.is_taintable() {
                            errs.push(format!("input {k} has type {t}, expected int or str"));
                        }
                    }
                }
            }
            result(&IrType::Str, &mut errs);
        }
        K::Phi => {
            if i.ty == IrType::Void && g.in_ssa {
                errs.push("phi has no type".into());
            }
            for k in 0..i.inputs.len() {
                expect(k, &i.ty, &mut errs);
            }
        }
        K::If(cmp) => {
            if arity(2, &mut errs) {
                if *cmp == CmpOp::Lt {
                    expect(0, &IrType::Int, &mut errs);
                    expect(1, &IrType::Int, &mut errs);
                } else if let (Some(l), Some(r)) = (ty(0), ty(1)) {
                    if l != r {
                        errs.push(format!("comparison of {l} with {r}"));
                    }
                }
            }
            result(&IrType::Void, &mut errs);
        }
        K::Goto | K::ReturnVoid => {
            arity(0, &mut errs);
            result(&IrType::Void, &mut errs);
            if matches!(i.kind, K::ReturnVoid) && g.method.ret != crate::mexfmt::MexType::Void {
                errs.push("return-void in a method returning a value".into());
            }
        }
        K::Return => {
            if arity(1, &mut errs) {
                expect(0, &(&g.method.ret).into(), &mut errs);
            }
            result(&IrType::Void, &mut errs);
        }
        K::NewInstance(c) => {
            arity(0, &mut errs);
            result(&IrType::Obj(c.clone()), &mut errs);
        }
        K::InstanceGet(f) => {
            if arity(1, &mut errs) {
                expect(0, &IrType::Obj(f.class.clone()), &mut errs);
            }
            if matches!(i.ty, IrType::Void | IrType::Tag) {
                errs.push(format!("field load of type {}", i.ty));
            }
        }
        K::InstanceSet(f) => {
            if arity(2, &mut errs) {
                expect(0, &IrType::Obj(f.class.clone()), &mut errs);
            }
            result(&IrType::Void, &mut errs);
        }
        K::StaticGet(_) => {
            arity(0, &mut errs);
            if matches!(i.ty, IrType::Void | IrType::Tag) {
                errs.push(format!("field load of type {}", i.ty));
            }
        }
        K::StaticSet(_) => {
            arity(1, &mut errs);
            result(&IrType::Void, &mut errs);
        }
        K::Invoke { callee, guarded } => {
            let n = callee.params.len() + usize::from(*guarded);
            if arity(n, &mut errs) {
                for (k, p) in callee.params.iter().enumerate() {
                    expect(k, &p.into(), &mut errs);
                }
                if *guarded {
                    let guard = g.get(i.inputs[n - 1]);
                    if !guard.is_some_and(|x| matches!(x.kind, K::PermCheck { .. })) {
                        errs.push("guard input is not a PermCheck".into());
                    }
                }
            }
            result(&(&callee.ret).into(), &mut errs);
        }
        K::Spawn(callee) => {
            if arity(callee.params.len(), &mut errs) {
                for (k, p) in callee.params.iter().enumerate() {
                    expect(k, &p.into(), &mut errs);
                }
            }
            result(&IrType::Int, &mut errs);
        }
        K::Join => {
            if arity(1, &mut errs) {
                expect(0, &IrType::Int, &mut errs);
            }
            result(&IrType::Void, &mut errs);
        }
        K::Print => {
            if arity(1, &mut errs) {
                if let Some(t) = ty(0) {
                    if matches!(t, IrType::Void | IrType::Tag) {
                        errs.push(format!("print of type {t}"));
                    }
                }
            }
            result(&IrType::Void, &mut errs);
        }
        K::Param(k) => {
            arity(0, &mut errs);
            match g.method.params.get(*k as usize) {
                Some(p) => result(&p.into(), &mut errs),
                None => errs.push(format!("parameter index {k} out of range")),
            }
        }
        K::NullCheck => {
            if arity(1, &mut errs) {
                if let Some(t) = ty(0) {
                    if !matches!(t, IrType::Obj(_)) {
                        errs.push(format!("null check of type {t}"));
                    } else {
                        result(&t.clone(), &mut errs);
                    }
                }
            }
        }
        K::DivZeroCheck => {
            if arity(1, &mut errs) {
                expect(0, &IrType::Int, &mut errs);
            }
            result(&IrType::Int, &mut errs);
        }
        K::TagSource(t) => {
            arity(0, &mut errs);
            if *t == 0 {
                errs.push("tag source with zero tag".into());
            }
            result(&IrType::Tag, &mut errs);
        }
        K::TagCombine => {
            for k in 0..i.inputs.len() {
                expect(k, &IrType::Tag, &mut errs);
            }
            result(&IrType::Tag, &mut errs);
        }
        K::TagCheck { .. } | K::TagPush => {
            if arity(1, &mut errs) {
                expect(0, &IrType::Tag, &mut errs);
            }
            result(&IrType::Void, &mut errs);
        }
        K::TagPop => {
            arity(0, &mut errs);
            result(&IrType::Tag, &mut errs);
        }
        K::TagFieldSet(f) => {
            match i.inputs.len() {
                1 => expect(0, &IrType::Tag, &mut errs),
                2 => {
                    expect(0, &IrType::Obj(f.class.clone()), &mut errs);
                    expect(1, &IrType::Tag, &mut errs);
                }
                n => errs.push(format!("TagFieldSet expects 1 or 2 inputs, has {n}")),
            }
            result(&IrType::Void, &mut errs);
        }
        K::TagFieldGet(f) => {
            match i.inputs.len() {
                0 => {}
                1 => expect(0, &IrType::Obj(f.class.clone()), &mut errs),
                n => errs.push(format!("TagFieldGet expects 0 or 1 inputs, has {n}")),
            }
            result(&IrType::Tag, &mut errs);
        }
        K::PermCheck { .. } => {
            arity(0, &mut errs);
            result(&IrType::Int, &mut errs);
        }
        K::Trace(_) => {
            arity(0, &mut errs);
            result(&IrType::Void, &mut errs);
        }
        K::Move => {
            if g.in_ssa {
                errs.push("move survives SSA conversion".into());
            }
            arity(1, &mut errs);
        }
    }
    for e in errs {
        a.instr(i, e);
    }
}

fn check_ssa(a: &mut Auditor) {
    let g = a.g;
    let succs = g.successor_lists();
    let idom = dom::immediate_dominators(&succs, 0);
    let mut pos: HashMap<InstrId, usize> = HashMap::new();
    for b in &g.blocks {
        for (k, &id) in b.instrs.iter().enumerate() {
            pos.insert(id, k);
        }
    }
    for i in g.instructions() {
        let ub = i.block.index();
        if i.kind.is_phi() {
            let preds = &g.blocks[ub].preds;
            if i.inputs.len() != preds.len() {
                a.instr(i, format!("phi has {} inputs for {} predecessors", i.inputs.len(), preds.len()));
                continue;
            }
            if let Some(first) = i.inputs.first() {
                if i.inputs.iter().all(|x| x == first) {
                    a.instr(i, "phi inputs are all the same instruction");
                }
            }
            for (k, &d) in i.inputs.iter().enumerate() {
                let Some(def) = g.get(d) else { continue };
                let db = def.block.index();
                if !dom::dominates(&idom, 0, db, preds[k].index()) {
                    a.instr(i, format!("input {k} ({d}) does not dominate predecessor {}", preds[k]));
                }
            }
            continue;
        }
        for (k, &d) in i.inputs.iter().enumerate() {
            let Some(def) = g.get(d) else { continue };
            let db = def.block.index();
            let ok = if db == ub {
                pos[&d] < pos[&i.id]
            } else {
                dom::dominates(&idom, 0, db, ub)
            };
            if !ok {
                a.instr(i, format!("input {k} ({d}) does not dominate its use"));
            }
        }
    }
}
