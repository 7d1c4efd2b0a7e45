use crate::irgraph::{BlockId, HGraph, InstrKind, IrType, NewInstr};

/// Inserts an `HTrace` naming the method as the first non-parameter
/// instruction of the entry block.
pub fn tracer(g: &mut HGraph) -> usize {
    let anchor = g
        .block(BlockId::ENTRY)
        .instructions()
        .iter()
        .copied()
        .find(|&i| !matches!(g.instr(i).kind, InstrKind::Param(_)))
        .expect("entry block ends in a terminator");
    let name = g.method.method.to_string();
    g.insert_before(anchor, NewInstr::new(InstrKind::Trace(name), IrType::Void, vec![]))
        .expect("trace insertion");
    1
}
