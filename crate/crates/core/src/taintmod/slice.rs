use std::collections::BTreeSet;

use crate::irgraph::{HGraph, HInstruction, InstrId, InstrKind};

use super::{source_index, SinkDescriptor, SourceDescriptor};

/// Backward slice of one sink: every taintable value its tracked input
/// may derive from, stopping at sources.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice {
    pub method: crate::mexfmt::MethodKey,
    pub sink: SinkDescriptor,
    pub sources: BTreeSet<SourceDescriptor>,
    pub members: BTreeSet<InstrId>,
}

impl Slice {
    /// True when no source reaches the sink.
    pub fn is_trivially_untainted(&self) -> bool {
        self.sources.is_empty()
    }
}

/// Inputs whose taint flows into the value defined by `i`.
pub fn data_inputs(i: &HInstruction) -> Vec<InstrId> {
    match &i.kind {
        InstrKind::Add
        | InstrKind::Sub
        | InstrKind::Mul
        | InstrKind::Div
        | InstrKind::Concat
        | InstrKind::Phi => i.inputs().to_vec(),
        InstrKind::DivZeroCheck => vec![i.inputs()[0]],
        InstrKind::Invoke { .. } => i.call_args().to_vec(),
        _ => Vec::new(),
    }
}

pub fn backward_slice(g: &HGraph, sink: &SinkDescriptor, sources: &[SourceDescriptor]) -> Slice {
    let by_instr = source_index(sources);
    let mut found = BTreeSet::new();
    let mut members = BTreeSet::new();
    let mut seen = BTreeSet::new();
    let mut work = vec![g.instr(sink.instr).inputs()[sink.input]];
    while let Some(n) = work.pop() {
        if !seen.insert(n) {
            continue;
        }
        if let Some(s) = by_instr.get(&n) {
            found.extend(s.iter().cloned());
            continue;
        }
        let i = g.instr(n);
        if !i.ty.is_taintable() {
            continue;
        }
        members.insert(n);
        work.extend(data_inputs(i));
    }
    Slice {
        method: g.method.key(),
        sink: sink.clone(),
        sources: found,
        members,
    }
}
