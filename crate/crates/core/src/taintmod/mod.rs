//! Taint-tracking module.
//!
//! Analysis collects global (policy) and local sinks and sources per method
//! and computes a backward slice for every sink. Instrumentation then
//! builds a parallel network of `tag`-typed SSA values over the union of
//! the slices, so taint follows the same phis as the data it labels.
//!
//! Calls use a per-thread tag stack: the caller pushes one tag per
//! taintable argument left to right, the callee pops them in reverse at
//! entry, pushes its return tag before returning, and the caller pops it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::irgraph::{HGraph, InstrId, InstrKind, MutateError};
use crate::mexfmt::{FieldRef, MethodKey, MethodRef, SinkMode, TaintPolicy};

mod instrument;
mod slice;

pub use instrument::instrument;
pub use slice::{backward_slice, data_inputs, Slice};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SinkKind {
    GlobalSink { callee: MethodRef, mode: SinkMode },
    /// Argument of a user-method invoke or spawn.
    Lsi1 { callee: MethodRef },
    /// Returned value.
    Lsi2,
    /// Stored field value.
    Lsi3 { field: FieldRef, is_static: bool },
}

impl SinkKind {
    pub fn label(&self) -> &'static str {
        match self {
            SinkKind::GlobalSink { .. } => "GlobalSink",
            SinkKind::Lsi1 { .. } => "LSI1",
            SinkKind::Lsi2 => "LSI2",
            SinkKind::Lsi3 { .. } => "LSI3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SinkDescriptor {
    pub instr: InstrId,
    /// Input slot of `instr` carrying the tracked value.
    pub input: usize,
    pub kind: SinkKind,
}

impl SinkDescriptor {
    /// Stable identifier used in leak reports and slice summaries.
    pub fn id(&self, g: &HGraph) -> String {
        let pc = g.instr(self.instr).pc;
        let key = g.method.key();
        match &self.kind {
            SinkKind::GlobalSink { callee, .. } | SinkKind::Lsi1 { callee } => {
                sink_id(&key, pc, &callee.to_string(), self.input)
            }
            SinkKind::Lsi2 => sink_id(&key, pc, "return", self.input),
            SinkKind::Lsi3 { field, .. } => sink_id(&key, pc, &field.to_string(), self.input),
        }
    }
}

/// `Class.m/arity@pc:target#input`.
pub fn sink_id(method: &MethodKey, pc: Option<u32>, target: &str, input: usize) -> String {
    let pc = pc.map_or_else(|| "?".to_string(), |p| p.to_string());
    format!("{method}@{pc}:{target}#{input}")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceKind {
    GlobalSource { callee: MethodRef, tag: u64 },
    /// Parameter value.
    Lso1 { param: u16 },
    /// Result of a user-method invoke.
    Lso2 { callee: MethodRef },
    /// Field load.
    Lso3 { field: FieldRef },
}

impl SourceKind {
    pub fn label(&self) -> &'static str {
        match self {
            SourceKind::GlobalSource { .. } => "GlobalSource",
            SourceKind::Lso1 { .. } => "LSO1",
            SourceKind::Lso2 { .. } => "LSO2",
            SourceKind::Lso3 { .. } => "LSO3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SourceDescriptor {
    pub instr: InstrId,
    pub kind: SourceKind,
}

impl fmt::Display for SourceDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.label(), self.instr)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaintError {
    #[error("slice for {slice} does not belong to graph {graph}")]
    ForeignSlice { slice: String, graph: String },
    #[error("graph already contains taint instrumentation")]
    AlreadyInstrumented,
    #[error(transparent)]
    Mutate(#[from] MutateError),
}

/// Finds every sink and source of a graph in SSA form, in instruction
/// order.
pub fn collect_sinks_sources(
    g: &HGraph,
    policy: &TaintPolicy,
) -> (Vec<SinkDescriptor>, Vec<SourceDescriptor>) {
    let mut sinks = Vec::new();
    let mut sources = Vec::new();
    let taintable = |id: InstrId| g.instr(id).ty.is_taintable();
    for i in g.instructions() {
        match &i.kind {
            InstrKind::Param(k) if i.ty.is_taintable() => sources.push(SourceDescriptor {
                instr: i.id,
                kind: SourceKind::Lso1 { param: *k },
            }),
            InstrKind::Invoke { callee, .. } => {
                let m = &callee.method;
                for (k, &a) in i.call_args().iter().enumerate() {
                    if !taintable(a) {
                        continue;
                    }
                    if let Some(mode) = policy.sink_mode(m) {
                        sinks.push(SinkDescriptor {
                            instr: i.id,
                            input: k,
                            kind: SinkKind::GlobalSink {
                                callee: m.clone(),
                                mode,
                            },
                        });
                    }
                    if !m.is_intrinsic() {
                        sinks.push(SinkDescriptor {
                            instr: i.id,
                            input: k,
                            kind: SinkKind::Lsi1 { callee: m.clone() },
                        });
                    }
                }
                if i.ty.is_taintable() {
                    if let Some(tag) = policy.source_tag(m) {
                        sources.push(SourceDescriptor {
                            instr: i.id,
                            kind: SourceKind::GlobalSource {
                                callee: m.clone(),
                                tag,
                            },
                        });
                    }
                    if !m.is_intrinsic() {
                        sources.push(SourceDescriptor {
                            instr: i.id,
                            kind: SourceKind::Lso2 { callee: m.clone() },
                        });
                    }
                }
            }
            InstrKind::Spawn(callee) => {
                for (k, &a) in i.inputs().iter().enumerate() {
                    if taintable(a) {
                        sinks.push(SinkDescriptor {
                            instr: i.id,
                            input: k,
                            kind: SinkKind::Lsi1 {
                                callee: callee.method.clone(),
                            },
                        });
                    }
                }
            }
            InstrKind::Return if taintable(i.inputs()[0]) => sinks.push(SinkDescriptor {
                instr: i.id,
                input: 0,
                kind: SinkKind::Lsi2,
            }),
            InstrKind::InstanceSet(f) if taintable(i.inputs()[1]) => sinks.push(SinkDescriptor {
                instr: i.id,
                input: 1,
                kind: SinkKind::Lsi3 {
                    field: f.clone(),
                    is_static: false,
                },
            }),
            InstrKind::StaticSet(f) if taintable(i.inputs()[0]) => sinks.push(SinkDescriptor {
                instr: i.id,
                input: 0,
                kind: SinkKind::Lsi3 {
                    field: f.clone(),
                    is_static: true,
                },
            }),
            InstrKind::InstanceGet(f) | InstrKind::StaticGet(f) if i.ty.is_taintable() => {
                sources.push(SourceDescriptor {
                    instr: i.id,
                    kind: SourceKind::Lso3 { field: f.clone() },
                })
            }
            _ => {}
        }
    }
    (sinks, sources)
}

/// Analysis and instrumentation results for one method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaintSummary {
    pub sinks: Vec<SinkDescriptor>,
    pub sources: Vec<SourceDescriptor>,
    pub slices: Vec<Slice>,
    /// Sink ids in the same order as `sinks`.
    pub sink_ids: Vec<String>,
}

impl TaintSummary {
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for s in &self.sinks {
            *out.entry(s.kind.label().to_string()).or_default() += 1;
        }
        for s in &self.sources {
            *out.entry(s.kind.label().to_string()).or_default() += 1;
        }
        out.insert("slices".into(), self.slices.len());
        out.insert(
            "tainted-slices".into(),
            self.slices.iter().filter(|s| !s.sources.is_empty()).count(),
        );
        out
    }

    pub fn slice_lines(&self) -> Vec<String> {
        self.slices
            .iter()
            .zip(&self.sink_ids)
            .map(|(s, id)| {
                let srcs: Vec<String> = s.sources.iter().map(|x| x.to_string()).collect();
                format!(
                    "slice {id} kind={} sources=[{}] members={}",
                    s.sink.kind.label(),
                    srcs.join(","),
                    s.members.len()
                )
            })
            .collect()
    }
}

/// Collects, slices and instruments one method.
pub fn taint_pass(g: &mut HGraph, policy: &TaintPolicy) -> Result<TaintSummary, TaintError> {
    if g.instructions().any(|i| i.kind.is_tag_op()) {
        return Err(TaintError::AlreadyInstrumented);
    }
    let (sinks, sources) = collect_sinks_sources(g, policy);
    let slices: Vec<Slice> = sinks
        .iter()
        .map(|s| backward_slice(g, s, &sources))
        .collect();
    let sink_ids = sinks.iter().map(|s| s.id(g)).collect();
    instrument(g, &slices)?;
    Ok(TaintSummary {
        sinks,
        sources,
        slices,
        sink_ids,
    })
}

pub(crate) fn source_index(sources: &[SourceDescriptor]) -> BTreeMap<InstrId, BTreeSet<SourceDescriptor>> {
    let mut m: BTreeMap<InstrId, BTreeSet<SourceDescriptor>> = BTreeMap::new();
    for s in sources {
        m.entry(s.instr).or_default().insert(s.clone());
    }
    m
}
