//! Stable text form of an [`HGraph`].
//!
//! ```text
//! method Example.prefixID(str)->str regs=2 next=5 ssa
//! block 0 preds=[] succs=[]
//!   0: Param str [] index=0
//!   1: ConstStr str [] value="+49" pc=0
//!   2: Concat str [1,0] pc=1
//!   3: Return void [2] pc=2
//! end
//! ```
//!
//! Before SSA conversion unresolved operands print as registers (`v3`) and
//! register definitions as `def=vN`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use super::{BlockId, HBasicBlock, HGraph, HInstruction, InstrId, InstrKind, IrType, RegForm};
use crate::mexfmt::{CmpOp, FieldRef, MethodSig, Reg, SinkMode};

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn list<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    let parts: Vec<String> = items.into_iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(","))
}

fn aux(kind: &InstrKind) -> Vec<String> {
    use InstrKind as K;
    match kind {
        K::ConstInt(v) => vec![format!("value={v}")],
        K::ConstStr(s) => vec![format!("value={}", quote(s))],
        K::If(c) => vec![format!("cmp={}", c.mnemonic())],
        K::NewInstance(c) => vec![format!("class={c}")],
        K::InstanceGet(f)
        | K::InstanceSet(f)
        | K::StaticGet(f)
        | K::StaticSet(f)
        | K::TagFieldSet(f)
        | K::TagFieldGet(f) => vec![format!("field={f}")],
        K::Invoke { callee, guarded } => {
            let mut v = vec![format!("callee={callee}")];
            if *guarded {
                v.push("guarded".into());
            }
            v
        }
        K::Spawn(callee) => vec![format!("callee={callee}")],
        K::Param(k) => vec![format!("index={k}")],
        K::TagSource(t) => vec![format!("tag={t:#x}")],
        K::TagCheck { sink, mode } => vec![format!("sink={}", quote(sink)), format!("mode={mode}")],
        K::PermCheck { permission, callee } => {
            vec![format!("permission={permission}"), format!("callee={callee}")]
        }
        K::Trace(m) => vec![format!("method={}", quote(m))],
        _ => vec![],
    }
}

fn instr_line(g: &HGraph, i: &HInstruction) -> String {
    let form = g.reg_form.get(&i.id);
    let inputs = i.inputs.iter().enumerate().map(|(k, &d)| {
        if d == InstrId::UNRESOLVED {
            form.and_then(|f| f.srcs.iter().find(|(s, _)| *s == k))
                .map_or_else(|| "?".to_string(), |(_, r)| r.to_string())
        } else {
            d.to_string()
        }
    });
    let mut line = format!("{}: {} {} {}", i.id, i.kind.name(), i.ty, list(inputs));
    for a in aux(&i.kind) {
        line.push(' ');
        line.push_str(&a);
    }
    if let Some(d) = form.and_then(|f| f.dst) {
        let _ = write!(line, " def={d}");
    }
    if let Some(pc) = i.pc {
        let _ = write!(line, " pc={pc}");
    }
    line
}

/// Deterministic text dump; equal graphs give byte-identical output.
pub fn dump(g: &HGraph) -> String {
    let mut out = format!(
        "method {} regs={} next={} {}\n",
        g.method,
        g.registers,
        g.next_id,
        if g.in_ssa { "ssa" } else { "pre-ssa" }
    );
    for b in &g.blocks {
        let _ = writeln!(out, "block {} preds={} succs={}", b.id, list(&b.preds), list(&b.succs));
        for &id in &b.instrs {
            let _ = writeln!(out, "  {}", instr_line(g, g.instr(id)));
        }
    }
    out.push_str("end\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("IR dump line {line}: {message}")]
pub struct DumpParseError {
    pub line: usize,
    pub message: String,
}

/// Splits on whitespace, keeping JSON string literals intact.
fn tokens(line: &str) -> Result<Vec<&str>, String> {
    let mut out = Vec::new();
    let mut start = None;
    let mut in_str = false;
    let mut escaped = false;
    for (k, c) in line.char_indices() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(&line[s..k]);
            }
        } else {
            if start.is_none() {
                start = Some(k);
            }
            if c == '"' {
                in_str = true;
            }
        }
    }
    if in_str {
        return Err("unterminated string".into());
    }
    if let Some(s) = start {
        out.push(&line[s..]);
    }
    Ok(out)
}

fn parse_list(tok: &str) -> Result<Vec<&str>, String> {
    let inner = tok
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| format!("expected a [list], found '{tok}'"))?;
    Ok(if inner.is_empty() {
        Vec::new()
    } else {
        inner.split(',').collect()
    })
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("invalid number '{s}'"))
}

fn reg(s: &str) -> Option<Reg> {
    s.strip_prefix('v')?.parse().ok().map(Reg)
}

struct Aux<'a> {
    pairs: BTreeMap<&'a str, &'a str>,
    flags: BTreeSet<&'a str>,
}

impl<'a> Aux<'a> {
    fn get(&self, key: &str) -> Result<&'a str, String> {
        self.pairs
            .get(key)
            .copied()
            .ok_or_else(|| format!("missing {key}="))
    }

    fn string(&self, key: &str) -> Result<String, String> {
        serde_json::from_str(self.get(key)?).map_err(|e| format!("bad string for {key}: {e}"))
    }

    fn field(&self) -> Result<FieldRef, String> {
        let f = self.get("field")?;
        FieldRef::parse(f).ok_or_else(|| format!("bad field '{f}'"))
    }

    fn callee(&self) -> Result<MethodSig, String> {
        let c = self.get("callee")?;
        MethodSig::parse(c).ok_or_else(|| format!("bad signature '{c}'"))
    }
}

fn parse_kind(name: &str, a: &Aux) -> Result<InstrKind, String> {
    use InstrKind as K;
    Ok(match name {
        "ConstInt" => K::ConstInt(num(a.get("value")?)?),
        "ConstStr" => K::ConstStr(a.string("value")?),
        "Add" => K::Add,
        "Sub" => K::Sub,
        "Mul" => K::Mul,
        "Div" => K::Div,
        "Concat" => K::Concat,
        "Phi" => K::Phi,
        "If" => {
            let c = a.get("cmp")?;
            K::If(CmpOp::parse(c).ok_or_else(|| format!("bad cmp '{c}'"))?)
        }
        "Goto" => K::Goto,
        "Return" => K::Return,
        "ReturnVoid" => K::ReturnVoid,
        "NewInstance" => K::NewInstance(a.get("class")?.to_string()),
        "InstanceGet" => K::InstanceGet(a.field()?),
        "InstanceSet" => K::InstanceSet(a.field()?),
        "StaticGet" => K::StaticGet(a.field()?),
        "StaticSet" => K::StaticSet(a.field()?),
        "Invoke" => K::Invoke {
            callee: a.callee()?,
            guarded: a.flags.contains("guarded"),
        },
        "Spawn" => K::Spawn(a.callee()?),
        "Join" => K::Join,
        "Print" => K::Print,
        "Param" => K::Param(num(a.get("index")?)?),
        "NullCheck" => K::NullCheck,
        "DivZeroCheck" => K::DivZeroCheck,
        "TagSource" => {
            let t = a.get("tag")?;
            let hex = t.strip_prefix("0x").ok_or_else(|| format!("bad tag '{t}'"))?;
            K::TagSource(u64::from_str_radix(hex, 16).map_err(|_| format!("bad tag '{t}'"))?)
        }
        "TagCombine" => K::TagCombine,
        "TagCheck" => K::TagCheck {
            sink: a.string("sink")?,
            mode: SinkMode::parse(a.get("mode")?).ok_or("bad sink mode")?,
        },
        "TagPush" => K::TagPush,
        "TagPop" => K::TagPop,
        "TagFieldSet" => K::TagFieldSet(a.field()?),
        "TagFieldGet" => K::TagFieldGet(a.field()?),
        "PermCheck" => K::PermCheck {
            permission: a.get("permission")?.to_string(),
            callee: a.callee()?,
        },
        "Trace" => K::Trace(a.string("method")?),
        "Move" => K::Move,
        other => return Err(format!("unknown instruction kind '{other}'")),
    })
}

struct Pending {
    method: MethodSig,
    registers: u16,
    next: u32,
    ssa: bool,
    blocks: Vec<HBasicBlock>,
    instrs: Vec<Option<HInstruction>>,
    forms: BTreeMap<InstrId, RegForm>,
}

impl Pending {
    fn finish(self) -> Result<HGraph, String> {
        if self.instrs.len() > self.next as usize {
            return Err("instruction id at or above next=".into());
        }
        Ok(HGraph::restore(
            self.method,
            self.registers,
            self.blocks,
            self.instrs,
            self.next,
            self.ssa,
            self.forms,
        ))
    }
}

/// Parses one or more concatenated dumps.
pub fn parse_dump(text: &str) -> Result<Vec<HGraph>, DumpParseError> {
    let mut graphs = Vec::new();
    let mut cur: Option<Pending> = None;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let err = |message: String| DumpParseError { line, message };
        let toks = tokens(raw).map_err(err)?;
        let Some(&head) = toks.first() else { continue };
        match head {
            "method" => {
                if cur.is_some() {
                    return Err(err("'method' before 'end'".into()));
                }
                if toks.len() != 5 {
                    return Err(err("malformed method header".into()));
                }
                let method = MethodSig::parse(toks[1]).ok_or_else(|| err(format!("bad signature '{}'", toks[1])))?;
                let registers = toks[2].strip_prefix("regs=").ok_or_else(|| err("missing regs=".into()))?;
                let next = toks[3].strip_prefix("next=").ok_or_else(|| err("missing next=".into()))?;
                let ssa = match toks[4] {
                    "ssa" => true,
                    "pre-ssa" => false,
                    other => return Err(err(format!("expected ssa or pre-ssa, found '{other}'"))),
                };
                cur = Some(Pending {
                    method,
                    registers: num(registers).map_err(err)?,
                    next: num(next).map_err(err)?,
                    ssa,
                    blocks: Vec::new(),
                    instrs: Vec::new(),
                    forms: BTreeMap::new(),
                });
            }
            "end" => {
                let p = cur.take().ok_or_else(|| err("'end' outside a method".into()))?;
                graphs.push(p.finish().map_err(err)?);
            }
            "block" => {
                let p = cur.as_mut().ok_or_else(|| err("'block' outside a method".into()))?;
                if toks.len() != 4 {
                    return Err(err("malformed block header".into()));
                }
                let id: u32 = num(toks[1]).map_err(err)?;
                if id as usize != p.blocks.len() {
                    return Err(err(format!("block {id} out of order")));
                }
                let ids = |t: &str, key: &str| -> Result<Vec<BlockId>, String> {
                    let l = t.strip_prefix(key).ok_or_else(|| format!("missing {key}"))?;
                    parse_list(l)?.into_iter().map(|x| num(x).map(BlockId)).collect()
                };
                p.blocks.push(HBasicBlock {
                    id: BlockId(id),
                    preds: ids(toks[2], "preds=").map_err(err)?,
                    succs: ids(toks[3], "succs=").map_err(err)?,
                    instrs: Vec::new(),
                });
            }
            _ => {
                let p = cur.as_mut().ok_or_else(|| err("instruction outside a method".into()))?;
                let block = p.blocks.last_mut().ok_or_else(|| err("instruction before any block".into()))?;
                let instr = parse_instr(&toks, block.id, &mut p.forms).map_err(err)?;
                let slot = instr.id.index();
                if p.instrs.len() <= slot {
                    p.instrs.resize(slot + 1, None);
                }
                if p.instrs[slot].is_some() {
                    return Err(err(format!("duplicate instruction id {}", instr.id)));
                }
                block.instrs.push(instr.id);
                p.instrs[slot] = Some(instr);
            }
        }
    }
    if cur.is_some() {
        return Err(DumpParseError {
            line: text.lines().count(),
            message: "missing 'end'".into(),
        });
    }
    Ok(graphs)
}

fn parse_instr(toks: &[&str], block: BlockId, forms: &mut BTreeMap<InstrId, RegForm>) -> Result<HInstruction, String> {
    if toks.len() < 4 {
        return Err("malformed instruction line".into());
    }
    let id = InstrId(num(toks[0].strip_suffix(':').ok_or("expected 'id:'")?)?);
    let ty = IrType::parse(toks[2]).ok_or_else(|| format!("bad type '{}'", toks[2]))?;
    let mut form = RegForm::default();
    let mut inputs = Vec::new();
    for (k, t) in parse_list(toks[3])?.into_iter().enumerate() {
        if let Some(r) = reg(t) {
            form.srcs.push((k, r));
            inputs.push(InstrId::UNRESOLVED);
        } else {
            inputs.push(InstrId(num(t)?));
        }
    }
    let mut pairs = BTreeMap::new();
    let mut flags = BTreeSet::new();
    let mut pc = None;
    for t in &toks[4..] {
        match t.split_once('=') {
            Some(("pc", v)) => pc = Some(num(v)?),
            Some(("def", v)) => form.dst = Some(reg(v).ok_or_else(|| format!("bad register '{v}'"))?),
            Some((key, v)) => {
                if pairs.insert(key, v).is_some() {
                    return Err(format!("duplicate {key}="));
                }
            }
            None => {
                flags.insert(*t);
            }
        }
    }
    let kind = parse_kind(toks[1], &Aux { pairs, flags })?;
    if form.dst.is_some() || !form.srcs.is_empty() {
        forms.insert(id, form);
    }
    Ok(HInstruction {
        id,
        kind,
        ty,
        inputs,
        uses: BTreeSet::new(),
        block,
        pc,
    })
}
