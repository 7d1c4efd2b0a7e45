use std::collections::BTreeSet;

use crate::irgraph::{HGraph, InstrId};

/// Removes every instruction that no side-effecting instruction depends
/// on, including dead phi cycles. Returns the number removed.
pub fn dce(g: &mut HGraph) -> usize {
    let mut live = BTreeSet::new();
    let mut work: Vec<InstrId> = g
        .instructions()
        .filter(|i| i.kind.has_side_effects())
        .map(|i| i.id)
        .collect();
    while let Some(id) = work.pop() {
        if live.insert(id) {
            work.extend_from_slice(g.instr(id).inputs());
        }
    }
    let dead: BTreeSet<InstrId> = g
        .instructions()
        .map(|i| i.id)
        .filter(|id| !live.contains(id))
        .collect();
    g.remove_all(&dead).expect("dead set is closed under uses");
    dead.len()
}
