use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::irgraph::{HGraph, InstrId, InstrKind, IrType, NewInstr};

use super::{data_inputs, SinkDescriptor, SinkKind, Slice, SourceDescriptor, SourceKind, TaintError};

/// Builds the tag network for the union of `slices` and the tag-stack
/// protocol ops of the method.
///
/// Parameter pops and the pops after user-method invokes that return a
/// taintable value are inserted whether or not a slice needs them, so
/// every method keeps the stack balanced against its callers.
pub fn instrument(g: &mut HGraph, slices: &[Slice]) -> Result<(), TaintError> {
    let key = g.method.key();
    for s in slices {
        let ok = s.method == key
            && g
                .get(s.sink.instr)
                .is_some_and(|i| s.sink.input < i.inputs().len());
        if !ok {
            return Err(TaintError::ForeignSlice {
                slice: s.method.to_string(),
                graph: key.to_string(),
            });
        }
    }
    let mut net = Net {
        sources: BTreeMap::new(),
        tags: HashMap::new(),
        tail: HashMap::new(),
        pops: HashMap::new(),
        zero: None,
        tag_phis: Vec::new(),
        last_param: g.params().last().map(|p| p.id),
        g,
    };
    for s in slices {
        for src in &s.sources {
            net.sources.entry(src.instr).or_default().insert(src.clone());
        }
    }
    net.protocol_pops()?;

    let mut sinks: Vec<&SinkDescriptor> = Vec::new();
    for s in slices {
        if !sinks.iter().any(|x| **x == s.sink) {
            sinks.push(&s.sink);
        }
    }
    sinks.sort_by_key(|s| (s.instr, rank(&s.kind), s.input));
    for s in sinks {
        net.sink(s)?;
    }
    net.finish()
}

fn rank(k: &SinkKind) -> u8 {
    match k {
        SinkKind::GlobalSink { .. } => 0,
        _ => 1,
    }
}

struct Net<'g> {
    g: &'g mut HGraph,
    sources: BTreeMap<InstrId, BTreeSet<SourceDescriptor>>,
    /// Tag value of each data value already covered.
    tags: HashMap<InstrId, InstrId>,
    /// Last instruction inserted after each definition, so later
    /// insertions keep their creation order.
    tail: HashMap<InstrId, InstrId>,
    /// Pops for parameters and for user-invoke results.
    pops: HashMap<InstrId, InstrId>,
    zero: Option<InstrId>,
    tag_phis: Vec<InstrId>,
    last_param: Option<InstrId>,
}

fn tag(kind: InstrKind, inputs: Vec<InstrId>) -> NewInstr {
    NewInstr::new(kind, IrType::Tag, inputs)
}

fn effect(kind: InstrKind, inputs: Vec<InstrId>) -> NewInstr {
    NewInstr::new(kind, IrType::Void, inputs)
}

impl Net<'_> {
    fn protocol_pops(&mut self) -> Result<(), TaintError> {
        let params: Vec<InstrId> = self
            .g
            .params()
            .filter(|p| p.ty.is_taintable())
            .map(|p| p.id)
            .collect();
        if let Some(mut anchor) = self.last_param {
            for &p in params.iter().rev() {
                let pc = self.g.instr(p).pc;
                anchor = self.g.insert_after(anchor, tag(InstrKind::TagPop, vec![]).at(pc))?;
                self.pops.insert(p, anchor);
            }
            self.last_param = Some(anchor);
        }
        let calls: Vec<InstrId> = self
            .g
            .instructions()
            .filter(|i| match &i.kind {
                InstrKind::Invoke { callee, .. } => {
                    !callee.method.is_intrinsic() && i.ty.is_taintable()
                }
                _ => false,
            })
            .map(|i| i.id)
            .collect();
        for c in calls {
            let pop = self.after(c, tag(InstrKind::TagPop, vec![]))?;
            self.pops.insert(c, pop);
        }
        Ok(())
    }

    fn after(&mut self, v: InstrId, new: NewInstr) -> Result<InstrId, TaintError> {
        let anchor = self.tail.get(&v).copied().unwrap_or(v);
        let pc = self.g.instr(v).pc;
        let id = self.g.insert_after(anchor, new.at(pc))?;
        self.tail.insert(v, id);
        Ok(id)
    }

    fn zero(&mut self) -> Result<InstrId, TaintError> {
        if let Some(z) = self.zero {
            return Ok(z);
        }
        let new = tag(InstrKind::TagCombine, vec![]);
        let z = match self.last_param {
            Some(p) => self.g.insert_after(p, new)?,
            None => {
                let first = self.g.block(self.g.entry_block()).instructions()[0];
                self.g.insert_before(first, new)?
            }
        };
        self.zero = Some(z);
        Ok(z)
    }

    fn combine(&mut self, v: InstrId, parts: Vec<InstrId>) -> Result<InstrId, TaintError> {
        let zero = self.zero;
        let mut uniq: Vec<InstrId> = Vec::new();
        for p in parts {
            if Some(p) != zero && !uniq.contains(&p) {
                uniq.push(p);
            }
        }
        let Some((&first, rest)) = uniq.split_first() else {
            return self.zero();
        };
        let mut acc = first;
        for &t in rest {
            acc = self.after(v, tag(InstrKind::TagCombine, vec![acc, t]))?;
        }
        Ok(acc)
    }

    fn tag_of(&mut self, v: InstrId) -> Result<InstrId, TaintError> {
        if let Some(&t) = self.tags.get(&v) {
            return Ok(t);
        }
        let t = if let Some(srcs) = self.sources.get(&v).cloned() {
            self.source_tag(v, &srcs)?
        } else {
            let i = self.g.instr(v);
            if !i.ty.is_taintable() || i.kind.is_const() {
                self.zero()?
            } else if i.kind.is_phi() {
                return self.tag_phi(v);
            } else if matches!(i.kind, InstrKind::DivZeroCheck) {
                let d = i.inputs()[0];
                self.tag_of(d)?
            } else {
                let ins = data_inputs(i);
                let mut parts = Vec::with_capacity(ins.len());
                for d in ins {
                    parts.push(self.tag_of(d)?);
                }
                self.combine(v, parts)?
            }
        };
        self.tags.insert(v, t);
        Ok(t)
    }

    fn source_tag(&mut self, v: InstrId, srcs: &BTreeSet<SourceDescriptor>) -> Result<InstrId, TaintError> {
        let mut parts = Vec::new();
        for s in srcs {
            let t = match &s.kind {
                SourceKind::Lso1 { .. } | SourceKind::Lso2 { .. } => match self.pops.get(&v) {
                    Some(&p) => p,
                    None => self.zero()?,
                },
                SourceKind::Lso3 { field } => {
                    let i = self.g.instr(v);
                    let obj = match i.kind {
                        InstrKind::InstanceGet(_) => vec![i.inputs()[0]],
                        _ => vec![],
                    };
                    self.after(v, tag(InstrKind::TagFieldGet(field.clone()), obj))?
                }
                SourceKind::GlobalSource { tag: 0, .. } => self.zero()?,
                SourceKind::GlobalSource { tag: bits, .. } => {
                    self.after(v, tag(InstrKind::TagSource(*bits), vec![]))?
                }
            };
            parts.push(t);
        }
        self.combine(v, parts)
    }

    fn tag_phi(&mut self, v: InstrId) -> Result<InstrId, TaintError> {
        let z = self.zero()?;
        let i = self.g.instr(v);
        let (n, pc, block) = (i.inputs().len(), i.pc, i.block());
        let first = self.g.block(block).instructions()[0];
        let phi = self
            .g
            .insert_before(first, tag(InstrKind::Phi, vec![z; n]).at(pc))?;
        self.tags.insert(v, phi);
        self.tag_phis.push(phi);
        for k in 0..n {
            let d = self.g.instr(v).inputs()[k];
            let t = self.tag_of(d)?;
            if t != z {
                self.g.replace_input(phi, k, t)?;
            }
        }
        Ok(phi)
    }

    fn sink(&mut self, s: &SinkDescriptor) -> Result<(), TaintError> {
        let i = self.g.instr(s.instr);
        let value = i.inputs()[s.input];
        let obj = i.inputs()[0];
        let t = self.tag_of(value)?;
        let new = match &s.kind {
            SinkKind::GlobalSink { mode, .. } => effect(
                InstrKind::TagCheck {
                    sink: s.id(self.g),
                    mode: *mode,
                },
                vec![t],
            ),
            SinkKind::Lsi1 { .. } | SinkKind::Lsi2 => effect(InstrKind::TagPush, vec![t]),
            SinkKind::Lsi3 { field, is_static: false } => {
                effect(InstrKind::TagFieldSet(field.clone()), vec![obj, t])
            }
            SinkKind::Lsi3 { field, is_static: true } => {
                effect(InstrKind::TagFieldSet(field.clone()), vec![t])
            }
        };
        let pc = self.g.instr(s.instr).pc;
        self.g.insert_before(s.instr, new.at(pc))?;
        Ok(())
    }

    /// Collapses tag phis whose inputs agree and drops an unused zero tag.
    fn finish(self) -> Result<(), TaintError> {
        let g = self.g;
        let mut changed = true;
        while changed {
            changed = false;
            for &phi in &self.tag_phis {
                let Some(i) = g.get(phi) else { continue };
                let mut distinct = i.inputs().iter().copied().filter(|&x| x != phi);
                let Some(first) = distinct.next() else { continue };
                if distinct.all(|x| x == first) {
                    g.replace_all_uses(phi, first)?;
                    g.remove(phi)?;
                    changed = true;
                }
            }
        }
        if let Some(z) = self.zero {
            if g.instr(z).uses().is_empty() {
                g.remove(z)?;
            }
        }
        Ok(())
    }
}
