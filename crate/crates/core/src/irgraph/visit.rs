use super::{Edit, HGraph, HInstruction, MutateError};

/// Callback driven by [`visit`]. Structural changes are requested by
/// pushing [`Edit`]s, which are applied in order once traversal finishes.
pub trait HGraphVisitor {
    fn visit_instruction(&mut self, g: &HGraph, instr: &HInstruction, edits: &mut Vec<Edit>);
}

impl<F> HGraphVisitor for F
where
    F: FnMut(&HGraph, &HInstruction, &mut Vec<Edit>),
{
    fn visit_instruction(&mut self, g: &HGraph, instr: &HInstruction, edits: &mut Vec<Edit>) {
        self(g, instr, edits)
    }
}

/// Calls the visitor once per instruction, blocks in reverse post-order,
/// then applies the queued edits. The visitor keeps its state.
pub fn visit<V: HGraphVisitor + ?Sized>(g: &mut HGraph, visitor: &mut V) -> Result<(), MutateError> {
    let mut edits = Vec::new();
    for b in g.reverse_post_order() {
        for &id in g.block(b).instructions() {
            visitor.visit_instruction(g, g.instr(id), &mut edits);
        }
    }
    for e in edits {
        g.apply(e)?;
    }
    Ok(())
}
