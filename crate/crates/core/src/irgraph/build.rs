use std::collections::BTreeMap;

use super::{BlockId, HGraph, InstrId, InstrKind, IrType, NewInstr, RegForm};
use crate::mexfmt::verify::{reg_states, RegState};
use crate::mexfmt::{BinOp, MethodSig, MexInstr, MexMethod, MexProgram, Reg};

const U: InstrId = InstrId::UNRESOLVED;

/// Translates a verified method into a pre-SSA control-flow graph.
///
/// Register operands are left unresolved (see [`ssa_convert`]). Unreachable
/// bytecode is not translated.
///
/// [`ssa_convert`]: super::ssa_convert
pub fn build_graph(p: &MexProgram, sig: &MethodSig, m: &MexMethod) -> HGraph {
    let mut g = HGraph::empty(sig.clone(), m.registers);
    let states = reg_states(p, m);
    let n = m.body.len();

    let targets: Vec<Option<usize>> = m
        .body
        .iter()
        .map(|l| l.instr.branch_target().and_then(|t| m.label_index(t)))
        .collect();

    let mut leader = vec![false; n + 1];
    if n > 0 {
        leader[0] = true;
    }
    for (i, line) in m.body.iter().enumerate() {
        if line.label.is_some() {
            leader[i] = true;
        }
        if line.instr.ends_flow() || matches!(line.instr, MexInstr::If { .. }) {
            leader[i + 1] = true;
        }
    }

    let entry = g.add_block();
    let needs_preheader = targets.iter().any(|t| *t == Some(0));
    let mut block_of: BTreeMap<usize, BlockId> = BTreeMap::new();
    for i in 0..n {
        if leader[i] && states[i].is_some() {
            let b = if i == 0 && !needs_preheader {
                entry
            } else {
                g.add_block()
            };
            block_of.insert(i, b);
        }
    }

    for (i, t) in m.params.iter().enumerate() {
        let id = g.push(entry, NewInstr::new(InstrKind::Param(i as u16), t.into(), vec![]));
        g.set_reg_form(
            id,
            RegForm {
                dst: Some(Reg(i as u16)),
                srcs: vec![],
            },
        );
    }
    if needs_preheader || n == 0 {
        g.push(entry, NewInstr::new(InstrKind::Goto, IrType::Void, vec![]));
        if let Some(&first) = block_of.get(&0) {
            g.add_edge(entry, first);
        }
    }

    let leaders: Vec<(usize, BlockId)> = block_of.iter().map(|(&i, &b)| (i, b)).collect();
    for &(start, b) in &leaders {
        let mut i = start;
        loop {
            let regs = states[i].as_ref().expect("reachable");
            let line = &m.body[i];
            if matches!(line.instr, MexInstr::If { .. }) && targets[i] == Some(i + 1) {
                let goto = NewInstr::new(InstrKind::Goto, IrType::Void, vec![]).at(Some(i as u32));
                g.push(b, goto);
            } else {
                emit(&mut g, p, b, i, &line.instr, regs);
            }
            let next = i + 1;
            let ends = line.instr.ends_flow();
            match &line.instr {
                MexInstr::If { .. } => {
                    let taken = targets[i].expect("resolved label");
                    if taken == next {
                        g.add_edge(b, block_of[&next]);
                    } else {
                        g.add_edge(b, block_of[&taken]);
                        g.add_edge(b, block_of[&next]);
                    }
                    break;
                }
                MexInstr::Goto { .. } => {
                    g.add_edge(b, block_of[&targets[i].expect("resolved label")]);
                    break;
                }
                _ if ends => break,
                _ => {}
            }
            if leader[next] {
                g.push(b, NewInstr::new(InstrKind::Goto, IrType::Void, vec![]));
                g.add_edge(b, block_of[&next]);
                break;
            }
            i = next;
        }
    }
    g
}

fn reg_type(regs: &[RegState], r: Reg) -> IrType {
    match &regs[r.0 as usize] {
        RegState::Ty(t) => t.into(),
        _ => IrType::Void,
    }
}

fn emit(g: &mut HGraph, p: &MexProgram, b: BlockId, pc: usize, instr: &MexInstr, regs: &[RegState]) {
    use MexInstr as M;
    let at = Some(pc as u32);
    let put = |g: &mut HGraph, kind: InstrKind, ty: IrType, inputs: Vec<InstrId>, dst: Option<Reg>, srcs: Vec<(usize, Reg)>| {
        let id = g.push(b, NewInstr { kind, ty, inputs, pc: at });
        if dst.is_some() || !srcs.is_empty() {
            g.set_reg_form(id, RegForm { dst, srcs });
        }
        id
    };
    match instr {
        M::ConstInt { dst, value } => {
            put(g, InstrKind::ConstInt(*value), IrType::Int, vec![], Some(*dst), vec![]);
        }
        M::ConstStr { dst, value } => {
            put(g, InstrKind::ConstStr(value.clone()), IrType::Str, vec![], Some(*dst), vec![]);
        }
        M::Move { dst, src } => {
            put(g, InstrKind::Move, reg_type(regs, *src), vec![U], Some(*dst), vec![(0, *src)]);
        }
        M::Binary { op, dst, lhs, rhs } => {
            let kind = match op {
                BinOp::Add => InstrKind::Add,
                BinOp::Sub => InstrKind::Sub,
                BinOp::Mul => InstrKind::Mul,
                BinOp::Div => {
                    let check = put(g, InstrKind::DivZeroCheck, IrType::Int, vec![U], None, vec![(0, *rhs)]);
                    put(g, InstrKind::Div, IrType::Int, vec![U, check], Some(*dst), vec![(0, *lhs)]);
                    return;
                }
            };
            put(g, kind, IrType::Int, vec![U, U], Some(*dst), vec![(0, *lhs), (1, *rhs)]);
        }
        M::Concat { dst, lhs, rhs } => {
            put(g, InstrKind::Concat, IrType::Str, vec![U, U], Some(*dst), vec![(0, *lhs), (1, *rhs)]);
        }
        M::If { cmp, lhs, rhs, .. } => {
            put(g, InstrKind::If(*cmp), IrType::Void, vec![U, U], None, vec![(0, *lhs), (1, *rhs)]);
        }
        M::Goto { .. } => {
            put(g, InstrKind::Goto, IrType::Void, vec![], None, vec![]);
        }
        M::New { dst, class } => {
            put(g, InstrKind::NewInstance(class.clone()), IrType::Obj(class.clone()), vec![], Some(*dst), vec![]);
        }
        M::IGet { dst, obj, field } => {
            let ty: IrType = p.field(field).map(|f| (&f.ty).into()).unwrap_or(IrType::Void);
            let check = put(g, InstrKind::NullCheck, reg_type(regs, *obj), vec![U], None, vec![(0, *obj)]);
            put(g, InstrKind::InstanceGet(field.clone()), ty, vec![check], Some(*dst), vec![]);
        }
        M::IPut { src, obj, field } => {
            let check = put(g, InstrKind::NullCheck, reg_type(regs, *obj), vec![U], None, vec![(0, *obj)]);
            put(g, InstrKind::InstanceSet(field.clone()), IrType::Void, vec![check, U], None, vec![(1, *src)]);
        }
        M::SGet { dst, field } => {
            let ty: IrType = p.field(field).map(|f| (&f.ty).into()).unwrap_or(IrType::Void);
            put(g, InstrKind::StaticGet(field.clone()), ty, vec![], Some(*dst), vec![]);
        }
        M::SPut { src, field } => {
            put(g, InstrKind::StaticSet(field.clone()), IrType::Void, vec![U], None, vec![(0, *src)]);
        }
        M::Invoke { dst, method, args } => {
            let callee = p.signature(method, args.len()).expect("verified callee");
            let ty: IrType = (&callee.ret).into();
            let srcs = args.iter().copied().enumerate().collect();
            put(
                g,
                InstrKind::Invoke { callee, guarded: false },
                ty,
                vec![U; args.len()],
                *dst,
                srcs,
            );
        }
        M::Spawn { dst, method, args } => {
            let callee = p.signature(method, args.len()).expect("verified callee");
            let srcs = args.iter().copied().enumerate().collect();
            put(g, InstrKind::Spawn(callee), IrType::Int, vec![U; args.len()], Some(*dst), srcs);
        }
        M::Join { tid } => {
            put(g, InstrKind::Join, IrType::Void, vec![U], None, vec![(0, *tid)]);
        }
        M::Return { src } => {
            put(g, InstrKind::Return, IrType::Void, vec![U], None, vec![(0, *src)]);
        }
        M::ReturnVoid => {
            put(g, InstrKind::ReturnVoid, IrType::Void, vec![], None, vec![]);
        }
        M::Print { src } => {
            put(g, InstrKind::Print, IrType::Void, vec![U], None, vec![(0, *src)]);
        }
    }
}
