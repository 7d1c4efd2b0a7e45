//! Ordered pass pipeline over per-method graphs.
//!
//! Each method is built, converted to SSA and then handed to every pass in
//! pipeline order; the graph is audited after each step. Methods are
//! independent and processed in parallel, and results are collected in
//! method order so output never depends on scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::bundle::Bundle;
use crate::irgraph::{audit, compile_method, EditStats, HGraph, SsaError, Violation};
use crate::mexfmt::{MexProgram, PermissionPolicy, TaintPolicy};
use crate::{permmod, taintmod};

mod const_fold;
mod dce;
mod tracer;

pub use const_fold::const_fold;
pub use dce::dce;
pub use tracer::tracer;

#[derive(Debug, Clone, PartialEq)]
pub enum Pass {
    ConstFold,
    Dce,
    Tracer,
    Taint(Arc<TaintPolicy>),
    Perm(Arc<PermissionPolicy>),
}

impl Pass {
    pub fn name(&self) -> &'static str {
        match self {
            Pass::ConstFold => "const-fold",
            Pass::Dce => "dce",
            Pass::Tracer => "tracer",
            Pass::Taint(_) => "taint",
            Pass::Perm(_) => "perm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PassPipeline {
    pub passes: Vec<Pass>,
}

impl PassPipeline {
    pub fn new(passes: Vec<Pass>) -> Self {
        PassPipeline { passes }
    }

    /// Resolves pass names (`const-fold`/`cf`, `dce`, `tracer`, `taint`,
    /// `perm`); the module passes take the given policies.
    pub fn from_names<S: AsRef<str>>(
        names: &[S],
        taint: Option<&TaintPolicy>,
        perm: Option<&PermissionPolicy>,
    ) -> Result<Self, PipelineError> {
        let taint = taint.map(|t| Arc::new(t.clone()));
        let perm = perm.map(|p| Arc::new(p.clone()));
        let passes = names
            .iter()
            .map(|n| match n.as_ref() {
                "const-fold" | "cf" => Ok(Pass::ConstFold),
                "dce" => Ok(Pass::Dce),
                "tracer" => Ok(Pass::Tracer),
                "taint" => taint
                    .clone()
                    .map(Pass::Taint)
                    .ok_or(PipelineError::MissingPolicy("taint")),
                "perm" => perm
                    .clone()
                    .map(Pass::Perm)
                    .ok_or(PipelineError::MissingPolicy("perm")),
                other => Err(PipelineError::UnknownPass(other.to_string())),
            })
            .collect::<Result<_, _>>()?;
        Ok(PassPipeline { passes })
    }

    /// `[const-fold, dce]` followed by the module passes whose policy is given.
    pub fn standard(taint: Option<&TaintPolicy>, perm: Option<&PermissionPolicy>) -> Self {
        let mut passes = vec![Pass::ConstFold, Pass::Dce];
        if let Some(t) = taint {
            passes.push(Pass::Taint(Arc::new(t.clone())));
        }
        if let Some(p) = perm {
            passes.push(Pass::Perm(Arc::new(p.clone())));
        }
        PassPipeline { passes }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.passes.iter().map(Pass::name).collect()
    }

    fn taint_policy(&self) -> Option<&TaintPolicy> {
        self.passes.iter().rev().find_map(|p| match p {
            Pass::Taint(t) => Some(t.as_ref()),
            _ => None,
        })
    }

    fn perm_policy(&self) -> Option<&PermissionPolicy> {
        self.passes.iter().rev().find_map(|p| match p {
            Pass::Perm(t) => Some(t.as_ref()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("unknown pass '{0}'")]
    UnknownPass(String),
    #[error("pass '{0}' needs a policy file")]
    MissingPolicy(&'static str),
    #[error("{method}: {source}")]
    Ssa { method: String, source: SsaError },
    #[error("{method}: after {pass}: {}", join_violations(.violations))]
    Audit {
        method: String,
        pass: String,
        violations: Vec<Violation>,
    },
    #[error("{method}: {pass}: {message}")]
    Pass {
        method: String,
        pass: String,
        message: String,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PassRecord {
    pub pass: String,
    pub edits: EditStats,
    /// Targets found by the pass, by category.
    pub targets: BTreeMap<String, usize>,
    /// Free-form per-target lines (slice summaries for the taint pass).
    pub details: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodReport {
    pub method: String,
    pub passes: Vec<PassRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InstrumentationReport {
    pub methods: Vec<MethodReport>,
}

impl InstrumentationReport {
    /// Per-pass sums over all methods, in pipeline order.
    pub fn totals(&self) -> Vec<PassRecord> {
        let mut out: Vec<PassRecord> = Vec::new();
        for m in &self.methods {
            for (k, r) in m.passes.iter().enumerate() {
                if out.len() <= k {
                    out.push(PassRecord {
                        pass: r.pass.clone(),
                        ..Default::default()
                    });
                }
                let t = &mut out[k];
                t.edits.inserted += r.edits.inserted;
                t.edits.removed += r.edits.removed;
                t.edits.replaced += r.edits.replaced;
                for (cat, n) in &r.targets {
                    *t.targets.entry(cat.clone()).or_default() += n;
                }
            }
        }
        out
    }

    pub fn to_text(&self, details: bool) -> String {
        fn line(out: &mut String, indent: &str, r: &PassRecord) {
            let _ = write!(
                out,
                "{indent}{} inserted={} removed={} replaced={}",
                r.pass, r.edits.inserted, r.edits.removed, r.edits.replaced
            );
            for (cat, n) in &r.targets {
                let _ = write!(out, " {cat}={n}");
            }
            out.push('\n');
        }
        let mut out = String::new();
        for m in &self.methods {
            let _ = writeln!(out, "method {}", m.method);
            for r in &m.passes {
                line(&mut out, "  ", r);
                if details {
                    for d in &r.details {
                        let _ = writeln!(out, "    {d}");
                    }
                }
            }
        }
        out.push_str("total\n");
        for r in self.totals() {
            line(&mut out, "  ", &r);
        }
        out
    }
}

fn run_pass(g: &mut HGraph, pass: &Pass) -> Result<PassRecord, String> {
    let before = g.edit_stats();
    let mut record = PassRecord {
        pass: pass.name().to_string(),
        ..Default::default()
    };
    match pass {
        Pass::ConstFold => {
            record.targets.insert("folded".into(), const_fold(g));
        }
        Pass::Dce => {
            record.targets.insert("removed".into(), dce(g));
        }
        Pass::Tracer => {
            record.targets.insert("traced".into(), tracer(g));
        }
        Pass::Taint(policy) => {
            let summary = taintmod::taint_pass(g, policy).map_err(|e| e.to_string())?;
            record.targets = summary.counts();
            record.details = summary.slice_lines();
        }
        Pass::Perm(policy) => {
            let sites = permmod::find_protected_calls(g, policy);
            permmod::inject_checks(g, &sites).map_err(|e| e.to_string())?;
            record.targets.insert("sites".into(), sites.len());
        }
    }
    record.edits = g.edit_stats().since(before);
    Ok(record)
}

/// Builds, converts and transforms a single method.
pub fn run_method(
    p: &MexProgram,
    sig: &crate::mexfmt::MethodSig,
    m: &crate::mexfmt::MexMethod,
    pipeline: &PassPipeline,
) -> Result<(HGraph, MethodReport), PipelineError> {
    let method = sig.key().to_string();
    let mut g = compile_method(p, sig, m).map_err(|source| PipelineError::Ssa {
        method: method.clone(),
        source,
    })?;
    let check = |g: &HGraph, pass: &str| {
        let violations = audit(g);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Audit {
                method: method.clone(),
                pass: pass.to_string(),
                violations,
            })
        }
    };
    check(&g, "ssa")?;
    let mut passes = Vec::new();
    for pass in &pipeline.passes {
        let r = run_pass(&mut g, pass).map_err(|message| PipelineError::Pass {
            method: method.clone(),
            pass: pass.name().to_string(),
            message,
        })?;
        check(&g, pass.name())?;
        passes.push(r);
    }
    Ok((g, MethodReport { method, passes }))
}

/// Compiles every method of a verified program through the pipeline.
pub fn run_pipeline(
    p: &MexProgram,
    pipeline: &PassPipeline,
) -> Result<(Bundle, InstrumentationReport), PipelineError> {
    let methods: Vec<_> = p.methods().collect();
    let results: Vec<(HGraph, MethodReport)> = methods
        .par_iter()
        .map(|(sig, m)| run_method(p, sig, m, pipeline))
        .collect::<Result<_, _>>()?;
    let mut results = results;
    results.sort_by(|a, b| a.1.method.cmp(&b.1.method));
    let (graphs, methods): (Vec<HGraph>, Vec<MethodReport>) = results.into_iter().unzip();
    let bundle = Bundle::new(
        p,
        graphs,
        pipeline.names().into_iter().map(String::from).collect(),
        pipeline.taint_policy().cloned(),
        pipeline.perm_policy().cloned(),
    );
    Ok((bundle, InstrumentationReport { methods }))
}
