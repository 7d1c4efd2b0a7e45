//! Per-method SSA control-flow graph IR.
//!
//! An [`HGraph`] owns its instructions in an arena indexed by [`InstrId`];
//! ids are handed out from a monotone counter and never reused. Each
//! [`HInstruction`] keeps its inputs (operands) and uses (reverse edges);
//! every mutation goes through the methods on [`HGraph`] so the two stay
//! inverse of each other. [`audit`] checks all structural invariants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::mexfmt::{CmpOp, FieldRef, MethodSig, MexMethod, MexProgram, MexType, Reg, SinkMode};

mod audit;
mod build;
pub mod dom;
mod dump;
mod ssa;
mod visit;

pub use audit::{audit, Violation};
pub use build::build_graph;
pub use dump::{dump, parse_dump, DumpParseError};
pub use ssa::{ssa_convert, SsaError};
pub use visit::{visit, HGraphVisitor};

/// Builds one method's graph and converts it to SSA form.
pub fn compile_method(p: &MexProgram, sig: &MethodSig, m: &MexMethod) -> Result<HGraph, SsaError> {
    ssa_convert(build_graph(p, sig, m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstrId(pub u32);

impl InstrId {
    /// Placeholder input for a register operand not yet resolved by SSA
    /// construction.
    pub const UNRESOLVED: InstrId = InstrId(u32::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for InstrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

impl BlockId {
    pub const ENTRY: BlockId = BlockId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Value type of an instruction. `Tag` is the type of taint-tag values.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum IrType {
    Int,
    Str,
    Obj(String),
    Void,
    Tag,
}

impl IrType {
    pub fn is_taintable(&self) -> bool {
        matches!(self, IrType::Int | IrType::Str)
    }

    pub fn parse(word: &str) -> Option<IrType> {
        match word {
            "tag" => Some(IrType::Tag),
            w => MexType::parse(w).map(IrType::from),
        }
    }
}

impl From<MexType> for IrType {
    fn from(t: MexType) -> Self {
        match t {
            MexType::Int => IrType::Int,
            MexType::Str => IrType::Str,
            MexType::Obj(c) => IrType::Obj(c),
            MexType::Void => IrType::Void,
        }
    }
}

impl From<&MexType> for IrType {
    fn from(t: &MexType) -> Self {
        t.clone().into()
    }
}

impl fmt::Display for IrType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IrType::Int => f.write_str("int"),
            IrType::Str => f.write_str("str"),
            IrType::Obj(c) => f.write_str(c),
            IrType::Void => f.write_str("void"),
            IrType::Tag => f.write_str("tag"),
        }
    }
}

/// Instruction kind plus its kind-specific payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstrKind {
    ConstInt(i64),
    ConstStr(String),
    Add,
    Sub,
    Mul,
    /// Inputs: dividend, then the `DivZeroCheck` of the divisor.
    Div,
    Concat,
    Phi,
    /// Successor 0 is taken when the comparison holds, successor 1 otherwise.
    If(CmpOp),
    Goto,
    Return,
    ReturnVoid,
    NewInstance(String),
    /// Inputs: object.
    InstanceGet(FieldRef),
    /// Inputs: object, value.
    InstanceSet(FieldRef),
    StaticGet(FieldRef),
    /// Inputs: value.
    StaticSet(FieldRef),
    /// Inputs: arguments, then the `PermCheck` verdict when guarded.
    Invoke { callee: MethodSig, guarded: bool },
    Spawn(MethodSig),
    Join,
    Print,
    Param(u16),
    NullCheck,
    DivZeroCheck,
    TagSource(u64),
    /// Bitwise union of all input tags; with no inputs it is the zero tag.
    TagCombine,
    TagCheck { sink: String, mode: SinkMode },
    TagPush,
    TagPop,
    /// Inputs: `[tag]` for static fields, `[object, tag]` for instance fields.
    TagFieldSet(FieldRef),
    /// Inputs: `[]` for static fields, `[object]` for instance fields.
    TagFieldGet(FieldRef),
    PermCheck { permission: String, callee: MethodSig },
    Trace(String),
    /// Register copy; only exists before SSA conversion.
    Move,
}

impl InstrKind {
    pub fn name(&self) -> &'static str {
        use InstrKind::*;
        match self {
            ConstInt(_) => "ConstInt",
            ConstStr(_) => "ConstStr",
            Add => "Add",
            Sub => "Sub",
            Mul => "Mul",
            Div => "Div",
            Concat => "Concat",
            Phi => "Phi",
            If(_) => "If",
            Goto => "Goto",
            Return => "Return",
            ReturnVoid => "ReturnVoid",
            NewInstance(_) => "NewInstance",
            InstanceGet(_) => "InstanceGet",
            InstanceSet(_) => "InstanceSet",
            StaticGet(_) => "StaticGet",
            StaticSet(_) => "StaticSet",
            Invoke { .. } => "Invoke",
            Spawn(_) => "Spawn",
            Join => "Join",
            Print => "Print",
            Param(_) => "Param",
            NullCheck => "NullCheck",
            DivZeroCheck => "DivZeroCheck",
            TagSource(_) => "TagSource",
            TagCombine => "TagCombine",
            TagCheck { .. } => "TagCheck",
            TagPush => "TagPush",
            TagPop => "TagPop",
            TagFieldSet(_) => "TagFieldSet",
            TagFieldGet(_) => "TagFieldGet",
            PermCheck { .. } => "PermCheck",
            Trace(_) => "Trace",
            Move => "Move",
        }
    }

    pub fn is_terminator(&self) -> bool {
        matches!(
            self,
            InstrKind::If(_) | InstrKind::Goto | InstrKind::Return | InstrKind::ReturnVoid
        )
    }

    pub fn is_phi(&self) -> bool {
        matches!(self, InstrKind::Phi)
    }

    pub fn is_const(&self) -> bool {
        matches!(self, InstrKind::ConstInt(_) | InstrKind::ConstStr(_))
    }

    pub fn is_tag_op(&self) -> bool {
        use InstrKind::*;
        matches!(
            self,
            TagSource(_) | TagCombine | TagCheck { .. } | TagPush | TagPop | TagFieldSet(_) | TagFieldGet(_)
        )
    }

    /// Kinds that optimizations must never delete even when unused.
    pub fn has_side_effects(&self) -> bool {
        use InstrKind::*;
        self.is_terminator()
            || self.is_tag_op()
            || matches!(
                self,
                Invoke { .. }
                    | Spawn(_)
                    | Join
                    | Print
                    | InstanceSet(_)
                    | StaticSet(_)
                    | NullCheck
                    | DivZeroCheck
                    | PermCheck { .. }
                    | Trace(_)
                    | Param(_)
            )
    }
}

/// A use of a definition: input slot `index` of instruction `user`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Use {
    pub user: InstrId,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HInstruction {
    pub id: InstrId,
    pub kind: InstrKind,
    pub ty: IrType,
    inputs: Vec<InstrId>,
    uses: BTreeSet<Use>,
    block: BlockId,
    /// Index of the originating MEX instruction, if any.
    pub pc: Option<u32>,
}

impl HInstruction {
    pub fn inputs(&self) -> &[InstrId] {
        &self.inputs
    }

    pub fn uses(&self) -> &BTreeSet<Use> {
        &self.uses
    }

    pub fn block(&self) -> BlockId {
        self.block
    }

    /// Call arguments of an `Invoke`/`Spawn`, excluding a permission guard.
    pub fn call_args(&self) -> &[InstrId] {
        match &self.kind {
            InstrKind::Invoke { guarded: true, .. } => &self.inputs[..self.inputs.len() - 1],
            _ => &self.inputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HBasicBlock {
    pub id: BlockId,
    preds: Vec<BlockId>,
    succs: Vec<BlockId>,
    instrs: Vec<InstrId>,
}

impl HBasicBlock {
    pub fn predecessors(&self) -> &[BlockId] {
        &self.preds
    }

    pub fn successors(&self) -> &[BlockId] {
        &self.succs
    }

    pub fn instructions(&self) -> &[InstrId] {
        &self.instrs
    }

    pub fn terminator(&self) -> Option<InstrId> {
        self.instrs.last().copied()
    }
}

/// Register operands of a pre-SSA instruction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub(crate) struct RegForm {
    pub dst: Option<Reg>,
    /// (input slot, register) pairs whose slot holds [`InstrId::UNRESOLVED`].
    pub srcs: Vec<(usize, Reg)>,
}

/// Counts of edits applied through the mutation API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditStats {
    pub inserted: usize,
    pub removed: usize,
    pub replaced: usize,
}

impl EditStats {
    pub fn total(&self) -> usize {
        self.inserted + self.removed + self.replaced
    }

    pub fn since(&self, earlier: EditStats) -> EditStats {
        EditStats {
            inserted: self.inserted - earlier.inserted,
            removed: self.removed - earlier.removed,
            replaced: self.replaced - earlier.replaced,
        }
    }
}

/// A new node to be placed by an insertion edit.
#[derive(Debug, Clone, PartialEq)]
pub struct NewInstr {
    pub kind: InstrKind,
    pub ty: IrType,
    pub inputs: Vec<InstrId>,
    pub pc: Option<u32>,
}

impl NewInstr {
    pub fn new(kind: InstrKind, ty: IrType, inputs: Vec<InstrId>) -> Self {
        NewInstr {
            kind,
            ty,
            inputs,
            pc: None,
        }
    }

    pub fn at(mut self, pc: Option<u32>) -> Self {
        self.pc = pc;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Edit {
    InsertBefore { anchor: InstrId, instr: NewInstr },
    InsertAfter { anchor: InstrId, instr: NewInstr },
    ReplaceInput { instr: InstrId, index: usize, def: InstrId },
    Remove(InstrId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MutateError {
    #[error("instruction {0} does not exist")]
    UnknownInstr(InstrId),
    #[error("instruction {id} still has uses: {uses:?}")]
    HasUses { id: InstrId, uses: Vec<Use> },
    #[error("insertion at {anchor} would break phi ordering")]
    PhiOrder { anchor: InstrId },
    #[error("cannot insert after terminator {0}")]
    AfterTerminator(InstrId),
    #[error("instruction {instr} has no input {index}")]
    BadInputIndex { instr: InstrId, index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HGraph {
    pub method: MethodSig,
    pub registers: u16,
    blocks: Vec<HBasicBlock>,
    instrs: Vec<Option<HInstruction>>,
    next_id: u32,
    in_ssa: bool,
    reg_form: BTreeMap<InstrId, RegForm>,
    stats: EditStats,
}

impl HGraph {
    pub(crate) fn empty(method: MethodSig, registers: u16) -> HGraph {
        HGraph {
            method,
            registers,
            blocks: Vec::new(),
            instrs: Vec::new(),
            next_id: 0,
            in_ssa: false,
            reg_form: BTreeMap::new(),
            stats: EditStats::default(),
        }
    }

    pub fn in_ssa(&self) -> bool {
        self.in_ssa
    }

    pub fn next_instruction_id(&self) -> u32 {
        self.next_id
    }

    pub fn entry_block(&self) -> BlockId {
        BlockId::ENTRY
    }

    pub fn blocks(&self) -> &[HBasicBlock] {
        &self.blocks
    }

    pub fn block(&self, b: BlockId) -> &HBasicBlock {
        &self.blocks[b.index()]
    }

    pub fn get(&self, id: InstrId) -> Option<&HInstruction> {
        self.instrs.get(id.index()).and_then(Option::as_ref)
    }

    /// Panics if `id` was never created or has been removed.
    pub fn instr(&self, id: InstrId) -> &HInstruction {
        self.get(id)
            .unwrap_or_else(|| panic!("instruction {id} does not exist"))
    }

    pub fn contains(&self, id: InstrId) -> bool {
        self.get(id).is_some()
    }

    /// Live instructions in block order.
    pub fn instructions(&self) -> impl Iterator<Item = &HInstruction> {
        self.blocks
            .iter()
            .flat_map(|b| b.instrs.iter().map(|&i| self.instr(i)))
    }

    pub fn instruction_count(&self) -> usize {
        self.instrs.iter().filter(|i| i.is_some()).count()
    }

    pub fn edit_stats(&self) -> EditStats {
        self.stats
    }

    pub fn params(&self) -> impl Iterator<Item = &HInstruction> {
        self.block(BlockId::ENTRY)
            .instrs
            .iter()
            .map(|&i| self.instr(i))
            .filter(|i| matches!(i.kind, InstrKind::Param(_)))
    }

    /// Position of `id` within its block.
    pub fn position(&self, id: InstrId) -> Option<usize> {
        let b = self.get(id)?.block;
        self.blocks[b.index()].instrs.iter().position(|&x| x == id)
    }

    fn phi_count(&self, b: BlockId) -> usize {
        self.blocks[b.index()]
            .instrs
            .iter()
            .take_while(|&&i| self.instr(i).kind.is_phi())
            .count()
    }

    /// Blocks in reverse post-order from the entry.
    pub fn reverse_post_order(&self) -> Vec<BlockId> {
        let succs: Vec<Vec<usize>> = self
            .blocks
            .iter()
            .map(|b| b.succs.iter().map(|s| s.index()).collect())
            .collect();
        dom::reverse_post_order(&succs, 0)
            .into_iter()
            .map(|b| BlockId(b as u32))
            .collect()
    }

    /// Immediate dominator of every block; the entry maps to itself.
    pub fn dominators(&self) -> BTreeMap<BlockId, BlockId> {
        let idom = dom::immediate_dominators(&self.successor_lists(), 0);
        idom.into_iter()
            .enumerate()
            .filter_map(|(b, d)| d.map(|d| (BlockId(b as u32), BlockId(d as u32))))
            .collect()
    }

    pub fn dominance_frontier(&self) -> BTreeMap<BlockId, BTreeSet<BlockId>> {
        let succs = self.successor_lists();
        let idom = dom::immediate_dominators(&succs, 0);
        dom::dominance_frontiers(&succs, &idom, 0)
            .into_iter()
            .enumerate()
            .map(|(b, df)| {
                (
                    BlockId(b as u32),
                    df.into_iter().map(|x| BlockId(x as u32)).collect(),
                )
            })
            .collect()
    }

    pub(crate) fn successor_lists(&self) -> Vec<Vec<usize>> {
        self.blocks
            .iter()
            .map(|b| b.succs.iter().map(|s| s.index()).collect())
            .collect()
    }

    // ----- construction helpers (no edit accounting) -----

    pub(crate) fn add_block(&mut self) -> BlockId {
        let id = BlockId(self.blocks.len() as u32);
        self.blocks.push(HBasicBlock {
            id,
            preds: Vec::new(),
            succs: Vec::new(),
            instrs: Vec::new(),
        });
        id
    }

    pub(crate) fn add_edge(&mut self, from: BlockId, to: BlockId) {
        self.blocks[from.index()].succs.push(to);
        self.blocks[to.index()].preds.push(from);
    }

    fn alloc(&mut self, block: BlockId, new: NewInstr) -> InstrId {
        let id = InstrId(self.next_id);
        self.next_id += 1;
        for (index, &input) in new.inputs.iter().enumerate() {
            if input != InstrId::UNRESOLVED {
                self.instrs[input.index()]
                    .as_mut()
                    .expect("input exists")
                    .uses
                    .insert(Use { user: id, index });
            }
        }
        self.instrs.push(Some(HInstruction {
            id,
            kind: new.kind,
            ty: new.ty,
            inputs: new.inputs,
            uses: BTreeSet::new(),
            block,
            pc: new.pc,
        }));
        id
    }

    /// Appends to the end of `block`.
    pub(crate) fn push(&mut self, block: BlockId, new: NewInstr) -> InstrId {
        let id = self.alloc(block, new);
        self.blocks[block.index()].instrs.push(id);
        id
    }

    /// Places a phi at the end of the block's phi prefix.
    pub(crate) fn push_phi(&mut self, block: BlockId, ty: IrType, inputs: Vec<InstrId>) -> InstrId {
        let at = self.phi_count(block);
        let id = self.alloc(block, NewInstr::new(InstrKind::Phi, ty, inputs));
        self.blocks[block.index()].instrs.insert(at, id);
        id
    }

    pub(crate) fn set_reg_form(&mut self, id: InstrId, form: RegForm) {
        self.reg_form.insert(id, form);
    }


    pub(crate) fn instr_mut(&mut self, id: InstrId) -> &mut HInstruction {
        self.instrs[id.index()].as_mut().expect("instruction exists")
    }

    /// Sets an input slot without touching the old definition's uses; used
    /// while resolving placeholders during SSA construction.
    pub(crate) fn set_input_raw(&mut self, user: InstrId, index: usize, def: InstrId) {
        self.instr_mut(user).inputs[index] = def;
    }

    pub(crate) fn rebuild_uses(&mut self) {
        for i in self.instrs.iter_mut().flatten() {
            i.uses.clear();
        }
        let mut edges = Vec::new();
        for i in self.instrs.iter().flatten() {
            for (index, &d) in i.inputs.iter().enumerate() {
                if d != InstrId::UNRESOLVED {
                    edges.push((d, Use { user: i.id, index }));
                }
            }
        }
        for (d, u) in edges {
            if let Some(Some(def)) = self.instrs.get_mut(d.index()) {
                def.uses.insert(u);
            }
        }
    }

    /// Deletes an instruction regardless of uses; its inputs are detached.
    pub(crate) fn delete_raw(&mut self, id: InstrId) {
        let instr = self.instrs[id.index()].take().expect("instruction exists");
        for (index, &d) in instr.inputs.iter().enumerate() {
            if let Some(Some(def)) = self.instrs.get_mut(d.index()) {
                def.uses.remove(&Use { user: id, index });
            }
        }
        self.blocks[instr.block.index()].instrs.retain(|&x| x != id);
        self.reg_form.remove(&id);
    }

    pub(crate) fn finish_ssa(&mut self) {
        self.in_ssa = true;
        self.reg_form.clear();
    }

    pub(crate) fn restore(
        method: MethodSig,
        registers: u16,
        blocks: Vec<HBasicBlock>,
        instrs: Vec<Option<HInstruction>>,
        next_id: u32,
        in_ssa: bool,
        reg_form: BTreeMap<InstrId, RegForm>,
    ) -> HGraph {
        let mut g = HGraph {
            method,
            registers,
            blocks,
            instrs,
            next_id,
            in_ssa,
            reg_form,
            stats: EditStats::default(),
        };
        g.rebuild_uses();
        g
    }

    // ----- mutation API -----

    fn check_insert(&self, block: BlockId, at: usize, new: &NewInstr) -> Result<(), MutateError> {
        for &i in &new.inputs {
            if !self.contains(i) {
                return Err(MutateError::UnknownInstr(i));
            }
        }
        let phis = self.phi_count(block);
        let anchor = self.blocks[block.index()]
            .instrs
            .get(at.min(self.blocks[block.index()].instrs.len().saturating_sub(1)))
            .copied()
            .unwrap_or(InstrId::UNRESOLVED);
        if new.kind.is_phi() && at > phis || !new.kind.is_phi() && at < phis {
            return Err(MutateError::PhiOrder { anchor });
        }
        Ok(())
    }

    fn insert_at(&mut self, block: BlockId, at: usize, new: NewInstr) -> InstrId {
        let id = self.alloc(block, new);
        self.blocks[block.index()].instrs.insert(at, id);
        self.stats.inserted += 1;
        id
    }

    /// Inserts a new instruction immediately before `anchor`.
    pub fn insert_before(&mut self, anchor: InstrId, new: NewInstr) -> Result<InstrId, MutateError> {
        let block = self.get(anchor).ok_or(MutateError::UnknownInstr(anchor))?.block;
        let at = self.position(anchor).unwrap();
        self.check_insert(block, at, &new)?;
        Ok(self.insert_at(block, at, new))
    }

    /// Inserts a new instruction immediately after `anchor`.
    pub fn insert_after(&mut self, anchor: InstrId, new: NewInstr) -> Result<InstrId, MutateError> {
        let a = self.get(anchor).ok_or(MutateError::UnknownInstr(anchor))?;
        if a.kind.is_terminator() {
            return Err(MutateError::AfterTerminator(anchor));
        }
        let block = a.block;
        let at = self.position(anchor).unwrap() + 1;
        self.check_insert(block, at, &new)?;
        Ok(self.insert_at(block, at, new))
    }

    /// Points input `index` of `instr` at `def`, updating both use sets.
    pub fn replace_input(&mut self, instr: InstrId, index: usize, def: InstrId) -> Result<(), MutateError> {
        if !self.contains(def) {
            return Err(MutateError::UnknownInstr(def));
        }
        let old = {
            let i = self
                .instrs
                .get_mut(instr.index())
                .and_then(Option::as_mut)
                .ok_or(MutateError::UnknownInstr(instr))?;
            let slot = i
                .inputs
                .get_mut(index)
                .ok_or(MutateError::BadInputIndex { instr, index })?;
            std::mem::replace(slot, def)
        };
        let u = Use { user: instr, index };
        if let Some(Some(o)) = self.instrs.get_mut(old.index()) {
            o.uses.remove(&u);
        }
        self.instr_mut(def).uses.insert(u);
        if let Some(form) = self.reg_form.get_mut(&instr) {
            form.srcs.retain(|&(slot, _)| slot != index);
        }
        self.stats.replaced += 1;
        Ok(())
    }

    /// Redirects every use of `old` to `new`; returns the number of uses moved.
    pub fn replace_all_uses(&mut self, old: InstrId, new: InstrId) -> Result<usize, MutateError> {
        let uses: Vec<Use> = self
            .get(old)
            .ok_or(MutateError::UnknownInstr(old))?
            .uses
            .iter()
            .copied()
            .collect();
        for u in &uses {
            self.replace_input(u.user, u.index, new)?;
        }
        Ok(uses.len())
    }

    /// Removes an instruction that has no remaining uses.
    pub fn remove(&mut self, id: InstrId) -> Result<(), MutateError> {
        let i = self.get(id).ok_or(MutateError::UnknownInstr(id))?;
        if !i.uses.is_empty() {
            return Err(MutateError::HasUses {
                id,
                uses: i.uses.iter().copied().collect(),
            });
        }
        self.delete_raw(id);
        self.stats.removed += 1;
        Ok(())
    }

    /// Applies one edit; insertions return the new id.
    pub fn apply(&mut self, edit: Edit) -> Result<Option<InstrId>, MutateError> {
        match edit {
            Edit::InsertBefore { anchor, instr } => self.insert_before(anchor, instr).map(Some),
            Edit::InsertAfter { anchor, instr } => self.insert_after(anchor, instr).map(Some),
            Edit::ReplaceInput { instr, index, def } => self.replace_input(instr, index, def).map(|_| None),
            Edit::Remove(id) => self.remove(id).map(|_| None),
        }
    }

    /// Removes a set of mutually-dead instructions in one step. Every use of
    /// a member must come from another member.
    pub fn remove_all(&mut self, ids: &BTreeSet<InstrId>) -> Result<(), MutateError> {
        for &id in ids {
            let i = self.get(id).ok_or(MutateError::UnknownInstr(id))?;
            let outside: Vec<Use> = i.uses.iter().filter(|u| !ids.contains(&u.user)).copied().collect();
            if !outside.is_empty() {
                return Err(MutateError::HasUses { id, uses: outside });
            }
        }
        for &id in ids {
            self.delete_raw(id);
            self.stats.removed += 1;
        }
        Ok(())
    }
}
