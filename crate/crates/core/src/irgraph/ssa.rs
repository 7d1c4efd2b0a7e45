use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use super::{dom, BlockId, HGraph, InstrId, InstrKind, IrType, Use};
use crate::mexfmt::Reg;

const U: InstrId = InstrId::UNRESOLVED;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SsaError {
    #[error("graph is already in SSA form")]
    AlreadySsa,
    #[error("register {reg} has no reaching definition at bytecode index {}", pc_text(.pc))]
    UndefinedRegister { reg: Reg, pc: Option<u32> },
    #[error("register {reg} merges incompatible types in block {block}")]
    TypeConflict { reg: Reg, block: BlockId },
}

fn pc_text(pc: &Option<u32>) -> String {
    pc.map_or_else(|| "?".to_string(), |p| p.to_string())
}

/// Resolves register operands to definitions, placing phis at iterated
/// dominance frontiers and pruning dead and trivial ones.
pub fn ssa_convert(mut g: HGraph) -> Result<HGraph, SsaError> {
    if g.in_ssa {
        return Err(SsaError::AlreadySsa);
    }
    let succs = g.successor_lists();
    let idom = dom::immediate_dominators(&succs, 0);
    let df = dom::dominance_frontiers(&succs, &idom, 0);

    let mut def_blocks: BTreeMap<Reg, BTreeSet<usize>> = BTreeMap::new();
    for (id, form) in &g.reg_form {
        if let Some(d) = form.dst {
            def_blocks
                .entry(d)
                .or_default()
                .insert(g.instr(*id).block.index());
        }
    }
    let mut phi_reg: HashMap<InstrId, Reg> = HashMap::new();
    for (&reg, blocks) in &def_blocks {
        for y in dom::iterated_frontier(&df, blocks) {
            let n = g.blocks[y].preds.len();
            let id = g.push_phi(BlockId(y as u32), IrType::Void, vec![U; n]);
            phi_reg.insert(id, reg);
        }
    }

    let mut children = vec![Vec::new(); g.blocks.len()];
    for (b, d) in idom.iter().enumerate() {
        if let Some(d) = *d {
            if d != b {
                children[d].push(b);
            }
        }
    }
    let mut r = Renamer {
        g: &mut g,
        phi_reg: &phi_reg,
        children,
        stacks: HashMap::new(),
        moves: Vec::new(),
    };
    r.rename(0)?;
    let moves = std::mem::take(&mut r.moves);
    for m in moves {
        g.delete_raw(m);
    }
    g.rebuild_uses();

    remove_dead_phis(&mut g);
    collapse_trivial_phis(&mut g);

    let phis: Vec<InstrId> = g
        .instructions()
        .filter(|i| i.kind.is_phi())
        .map(|i| i.id)
        .collect();
    for &p in &phis {
        let i = g.instr(p);
        if i.inputs.contains(&U) {
            let pc = i
                .uses
                .iter()
                .filter_map(|u| g.instr(u.user).pc)
                .min();
            return Err(SsaError::UndefinedRegister { reg: phi_reg[&p], pc });
        }
    }
    type_phis(&mut g, &phis, &phi_reg)?;
    g.finish_ssa();
    Ok(g)
}

struct Renamer<'a> {
    g: &'a mut HGraph,
    phi_reg: &'a HashMap<InstrId, Reg>,
    children: Vec<Vec<usize>>,
    stacks: HashMap<Reg, Vec<InstrId>>,
    moves: Vec<InstrId>,
}

impl Renamer<'_> {
    fn top(&self, r: Reg) -> Option<InstrId> {
        self.stacks.get(&r).and_then(|s| s.last().copied())
    }

    fn rename(&mut self, b: usize) -> Result<(), SsaError> {
        let mut pushed: Vec<Reg> = Vec::new();
        let instrs = self.g.blocks[b].instrs.clone();
        for id in instrs {
            if let Some(&r) = self.phi_reg.get(&id) {
                self.stacks.entry(r).or_default().push(id);
                pushed.push(r);
                continue;
            }
            let Some(form) = self.g.reg_form.get(&id).cloned() else {
                continue;
            };
            for &(slot, reg) in &form.srcs {
                let v = self.top(reg).ok_or(SsaError::UndefinedRegister {
                    reg,
                    pc: self.g.instr(id).pc,
                })?;
                self.g.set_input_raw(id, slot, v);
            }
            if let Some(d) = form.dst {
                let val = if self.g.instr(id).kind == InstrKind::Move {
                    self.moves.push(id);
                    self.g.instr(id).inputs[0]
                } else {
                    id
                };
                self.stacks.entry(d).or_default().push(val);
                pushed.push(d);
            }
        }
        let succs = self.g.blocks[b].succs.clone();
        for s in succs {
            let k = self.g.blocks[s.index()]
                .preds
                .iter()
                .position(|&p| p.index() == b)
                .expect("edge is symmetric");
            let phis: Vec<InstrId> = self.g.blocks[s.index()]
                .instrs
                .iter()
                .copied()
                .filter(|i| self.phi_reg.contains_key(i))
                .collect();
            for phi in phis {
                let v = self.top(self.phi_reg[&phi]).unwrap_or(U);
                self.g.set_input_raw(phi, k, v);
            }
        }
        for c in self.children[b].clone() {
            self.rename(c)?;
        }
        for r in pushed.into_iter().rev() {
            self.stacks.get_mut(&r).unwrap().pop();
        }
        Ok(())
    }
}

/// Keeps only phis transitively feeding a non-phi instruction.
fn remove_dead_phis(g: &mut HGraph) {
    let phis: Vec<InstrId> = g.instructions().filter(|i| i.kind.is_phi()).map(|i| i.id).collect();
    let mut live: BTreeSet<InstrId> = BTreeSet::new();
    let mut work: Vec<InstrId> = phis
        .iter()
        .copied()
        .filter(|&p| g.instr(p).uses.iter().any(|u| !g.instr(u.user).kind.is_phi()))
        .collect();
    while let Some(p) = work.pop() {
        if !live.insert(p) {
            continue;
        }
        for &i in &g.instr(p).inputs {
            if i != U && g.instr(i).kind.is_phi() && !live.contains(&i) {
                work.push(i);
            }
        }
    }
    for p in phis {
        if !live.contains(&p) {
            g.delete_raw(p);
        }
    }
}

fn collapse_trivial_phis(g: &mut HGraph) {
    let mut work: Vec<InstrId> = g.instructions().filter(|i| i.kind.is_phi()).map(|i| i.id).collect();
    while let Some(p) = work.pop() {
        let Some(phi) = g.get(p) else { continue };
        let distinct: BTreeSet<InstrId> = phi.inputs.iter().copied().filter(|&i| i != p).collect();
        if distinct.len() != 1 {
            continue;
        }
        let v = *distinct.iter().next().unwrap();
        if v == U {
            continue;
        }
        let uses: Vec<Use> = phi.uses.iter().copied().filter(|u| u.user != p).collect();
        for u in &uses {
            g.instr_mut(u.user).inputs[u.index] = v;
            g.instr_mut(v).uses.insert(*u);
            if g.instr(u.user).kind.is_phi() {
                work.push(u.user);
            }
        }
        g.instr_mut(p).uses.clear();
        g.delete_raw(p);
    }
}

fn type_phis(g: &mut HGraph, phis: &[InstrId], phi_reg: &HashMap<InstrId, Reg>) -> Result<(), SsaError> {
    let mut changed = true;
    while changed {
        changed = false;
        for &p in phis {
            if g.instr(p).ty != IrType::Void {
                continue;
            }
            let ty = g
                .instr(p)
                .inputs
                .iter()
                .map(|&i| g.instr(i).ty.clone())
                .find(|t| *t != IrType::Void);
            if let Some(t) = ty {
                g.instr_mut(p).ty = t;
                changed = true;
            }
        }
    }
    for &p in phis {
        let i = g.instr(p);
        if i.ty == IrType::Void || i.inputs.iter().any(|&x| g.instr(x).ty != i.ty) {
            return Err(SsaError::TypeConflict {
                reg: phi_reg[&p],
                block: i.block,
            });
        }
    }
    Ok(())
}
