use crate::irgraph::{HGraph, InstrId, InstrKind, NewInstr};
use crate::mexfmt::BinOp;

fn int_const(g: &HGraph, id: InstrId) -> Option<i64> {
    let i = g.instr(id);
    match i.kind {
        InstrKind::ConstInt(v) => Some(v),
        InstrKind::DivZeroCheck => int_const(g, i.inputs()[0]),
        _ => None,
    }
}

fn str_const(g: &HGraph, id: InstrId) -> Option<String> {
    match &g.instr(id).kind {
        InstrKind::ConstStr(s) => Some(s.clone()),
        InstrKind::ConstInt(v) => Some(v.to_string()),
        _ => None,
    }
}

fn folded(g: &HGraph, id: InstrId) -> Option<InstrKind> {
    let i = g.instr(id);
    let op = match i.kind {
        InstrKind::Add => BinOp::Add,
        InstrKind::Sub => BinOp::Sub,
        InstrKind::Mul => BinOp::Mul,
        InstrKind::Div => BinOp::Div,
        InstrKind::Concat => {
            let a = str_const(g, i.inputs()[0])?;
            let b = str_const(g, i.inputs()[1])?;
            return Some(InstrKind::ConstStr(a + &b));
        }
        _ => return None,
    };
    let a = int_const(g, i.inputs()[0])?;
    let b = int_const(g, i.inputs()[1])?;
    op.eval(a, b).map(InstrKind::ConstInt)
}

/// Replaces arithmetic and concatenation over constants with a constant.
/// Division by a constant zero is left alone. Returns the number of folds.
pub fn const_fold(g: &mut HGraph) -> usize {
    let mut total = 0;
    loop {
        let order: Vec<InstrId> = g
            .reverse_post_order()
            .into_iter()
            .flat_map(|b| g.block(b).instructions().to_vec())
            .collect();
        let mut changed = false;
        for id in order {
            if !g.contains(id) {
                continue;
            }
            let Some(kind) = folded(g, id) else { continue };
            let (ty, pc) = (g.instr(id).ty.clone(), g.instr(id).pc);
            let c = g
                .insert_before(id, NewInstr::new(kind, ty, vec![]).at(pc))
                .expect("constant insertion");
            g.replace_all_uses(id, c).expect("live ids");
            g.remove(id).expect("no remaining uses");
            total += 1;
            changed = true;
        }
        if !changed {
            return total;
        }
    }
}
