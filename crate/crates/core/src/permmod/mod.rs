//! Permission-enforcement module (inline reference monitor).
//!
//! Every call to a protected method is preceded by a `PermCheck` whose
//! verdict guards the call. On deny the runtime skips the call and the
//! result takes the default value of the return type.

use crate::irgraph::{HGraph, InstrId, InstrKind, MutateError, NewInstr};
use crate::mexfmt::{MethodKey, MethodSig, PermissionPolicy};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtectedCallSite {
    pub method: MethodKey,
    pub instr: InstrId,
    pub callee: MethodSig,
    pub permission: String,
}

/// Unguarded invokes of methods the policy protects, in instruction order.
pub fn find_protected_calls(g: &HGraph, policy: &PermissionPolicy) -> Vec<ProtectedCallSite> {
    g.instructions()
        .filter_map(|i| match &i.kind {
            InstrKind::Invoke {
                callee,
                guarded: false,
            } => policy
                .permission_for(&callee.method)
                .map(|perm| ProtectedCallSite {
                    method: g.method.key(),
                    instr: i.id,
                    callee: callee.clone(),
                    permission: perm.to_string(),
                }),
            _ => None,
        })
        .collect()
}

/// Guards each site; returns the number of sites rewritten.
pub fn inject_checks(g: &mut HGraph, sites: &[ProtectedCallSite]) -> Result<usize, MutateError> {
    for s in sites {
        let old = g.get(s.instr).ok_or(MutateError::UnknownInstr(s.instr))?;
        let (pc, ty) = (old.pc, old.ty.clone());
        let mut inputs = old.inputs().to_vec();
        let check = g.insert_before(
            s.instr,
            NewInstr::new(
                InstrKind::PermCheck {
                    permission: s.permission.clone(),
                    callee: s.callee.clone(),
                },
                crate::irgraph::IrType::Int,
                vec![],
            )
            .at(pc),
        )?;
        inputs.push(check);
        let call = g.insert_before(
            s.instr,
            NewInstr::new(
                InstrKind::Invoke {
                    callee: s.callee.clone(),
                    guarded: true,
                },
                ty,
                inputs,
            )
            .at(pc),
        )?;
        g.replace_all_uses(s.instr, call)?;
        g.remove(s.instr)?;
    }
    Ok(sites.len())
}
