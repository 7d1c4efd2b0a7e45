//! Compiled output of the pipeline: the method graphs plus everything the
//! runtime needs to execute them, serialized as plain text.
//!
//! ```text
//! artiskit-bundle 1
//! passes const-fold dce taint
//! entry Example.leak
//! class Example
//! field Example.count static int
//! policy taint 2
//! source rt::Tel.getDeviceId 0x1
//! sink rt::Log.d report
//! method Example.leak()->void regs=1 next=9 ssa
//! ...
//! end
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

use crate::irgraph::{audit, dump, parse_dump, HGraph};
use crate::mexfmt::{
    parse_perm_policy, parse_taint_policy, FieldRef, MethodKey, MethodRef, MexField, MexProgram,
    MexType, PermissionPolicy, TaintPolicy,
};

const MAGIC: &str = "artiskit-bundle 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassLayout {
    pub name: String,
    pub fields: Vec<MexField>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub passes: Vec<String>,
    pub entry: Option<MethodRef>,
    pub classes: Vec<ClassLayout>,
    pub taint: Option<TaintPolicy>,
    pub perm: Option<PermissionPolicy>,
    /// Sorted by method key.
    pub graphs: Vec<HGraph>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bundle line {line}: {message}")]
pub struct BundleError {
    pub line: usize,
    pub message: String,
}

fn berr(line: usize, message: impl Into<String>) -> BundleError {
    BundleError {
        line,
        message: message.into(),
    }
}

impl Bundle {
    pub fn new(
        p: &MexProgram,
        mut graphs: Vec<HGraph>,
        passes: Vec<String>,
        taint: Option<TaintPolicy>,
        perm: Option<PermissionPolicy>,
    ) -> Bundle {
        graphs.sort_by_key(|g| g.method.key());
        Bundle {
            passes,
            entry: p.entry.clone(),
            classes: p
                .classes
                .iter()
                .map(|c| ClassLayout {
                    name: c.name.clone(),
                    fields: c.fields.clone(),
                })
                .collect(),
            taint,
            perm,
            graphs,
        }
    }

    pub fn graph(&self, key: &MethodKey) -> Option<&HGraph> {
        self.graphs
            .binary_search_by(|g| g.method.key().cmp(key))
            .ok()
            .map(|i| &self.graphs[i])
    }

    /// The graph of the entry method; its name must be unique in its class.
    pub fn entry_graph(&self) -> Option<&HGraph> {
        let entry = self.entry.as_ref()?;
        let mut it = self.graphs.iter().filter(|g| &g.method.method == entry);
        let first = it.next()?;
        it.next().is_none().then_some(first)
    }

    pub fn field(&self, f: &FieldRef) -> Option<&MexField> {
        self.classes
            .iter()
            .find(|c| c.name == f.class)?
            .fields
            .iter()
            .find(|x| x.name == f.name)
    }

    /// True when any graph carries taint instrumentation.
    pub fn is_taint_instrumented(&self) -> bool {
        self.graphs
            .iter()
            .any(|g| g.instructions().any(|i| i.kind.is_tag_op()))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\npasses");
        for p in &self.passes {
            out.push(' ');
            out.push_str(p);
        }
        out.push('\n');
        if let Some(e) = &self.entry {
            out.push_str(&format!("entry {e}\n"));
        }
        for c in &self.classes {
            out.push_str(&format!("class {}\n", c.name));
            for f in &c.fields {
                let kind = if f.is_static { "static" } else { "instance" };
                out.push_str(&format!("field {}.{} {kind} {}\n", c.name, f.name, f.ty));
            }
        }
        let mut policy = |name: &str, text: String| {
            out.push_str(&format!("policy {name} {}\n", text.lines().count()));
            out.push_str(&text);
        };
        if let Some(t) = &self.taint {
            policy("taint", t.to_text());
        }
        if let Some(p) = &self.perm {
            policy("perm", p.to_text());
        }
        for g in &self.graphs {
            out.push_str(&dump(g));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Bundle, BundleError> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.first().map(|l| l.trim()) != Some(MAGIC) {
            return Err(berr(1, format!("expected '{MAGIC}' header")));
        }
        let mut b = Bundle {
            passes: Vec::new(),
            entry: None,
            classes: Vec::new(),
            taint: None,
            perm: None,
            graphs: Vec::new(),
        };
        let mut k = 1;
        while k < lines.len() {
            let line = k + 1;
            let words: Vec<&str> = lines[k].split_whitespace().collect();
            match words.first().copied() {
                None => {}
                Some("passes") => b.passes = words[1..].iter().map(|s| s.to_string()).collect(),
                Some("entry") if words.len() == 2 => {
                    b.entry = Some(
                        MethodRef::parse(words[1])
                            .ok_or_else(|| berr(line, "invalid entry reference"))?,
                    );
                }
                Some("class") if words.len() == 2 => b.classes.push(ClassLayout {
                    name: words[1].to_string(),
                    fields: Vec::new(),
                }),
                Some("field") if words.len() == 4 => {
                    let f = FieldRef::parse(words[1]).ok_or_else(|| berr(line, "invalid field"))?;
                    let is_static = match words[2] {
                        "static" => true,
                        "instance" => false,
                        _ => return Err(berr(line, "expected static or instance")),
                    };
                    let ty = MexType::parse(words[3]).ok_or_else(|| berr(line, "invalid type"))?;
                    let class = b
                        .classes
                        .iter_mut()
                        .find(|c| c.name == f.class)
                        .ok_or_else(|| berr(line, "field before its class"))?;
                    class.fields.push(MexField {
                        name: f.name,
                        is_static,
                        ty,
                    });
                }
                Some("policy") if words.len() == 3 => {
                    let n: usize = words[2].parse().map_err(|_| berr(line, "invalid line count"))?;
                    if k + 1 + n > lines.len() {
                        return Err(berr(line, "truncated policy"));
                    }
                    let body = lines[k + 1..k + 1 + n].join("\n");
                    let perr = |e: crate::mexfmt::PolicyError| berr(line + e.line, e.message);
                    match words[1] {
                        "taint" => b.taint = Some(parse_taint_policy(&body).map_err(perr)?),
                        "perm" => b.perm = Some(parse_perm_policy(&body).map_err(perr)?),
                        other => return Err(berr(line, format!("unknown policy '{other}'"))),
                    }
                    k += n;
                }
                Some("method") => {
                    let rest = lines[k..].join("\n");
                    b.graphs = parse_dump(&rest).map_err(|e| berr(k + e.line, e.message))?;
                    break;
                }
                Some(other) => return Err(berr(line, format!("unexpected '{other}'"))),
            }
            k += 1;
        }
        b.graphs.sort_by_key(|g| g.method.key());
        for g in &b.graphs {
            if let Some(v) = audit(g).first() {
                return Err(berr(0, format!("{}: {v}", g.method)));
            }
        }
        Ok(b)
    }

    /// Static fields with their declared types.
    pub fn statics(&self) -> BTreeMap<FieldRef, MexType> {
        self.classes
            .iter()
            .flat_map(|c| {
                c.fields
                    .iter()
                    .filter(|f| f.is_static)
                    .map(|f| (FieldRef::new(c.name.clone(), f.name.clone()), f.ty.clone()))
            })
            .collect()
    }
}
