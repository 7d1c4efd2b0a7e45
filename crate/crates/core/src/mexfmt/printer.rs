use std::fmt::Write;

use super::{MexInstr, MexProgram};

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn instr_text(instr: &MexInstr) -> String {
    use MexInstr::*;
    let call = |op: &str, dst: String, m: &dyn std::fmt::Display, args: &[super::Reg]| {
        let mut s = format!("{op} {dst}, {m}");
        for a in args {
            let _ = write!(s, ", {a}");
        }
        s
    };
    match instr {
        ConstInt { dst, value } => format!("const-int {dst}, {value}"),
        ConstStr { dst, value } => format!("const-str {dst}, {}", quote(value)),
        Move { dst, src } => format!("move {dst}, {src}"),
        Binary { op, dst, lhs, rhs } => format!("{} {dst}, {lhs}, {rhs}", op.mnemonic()),
        Concat { dst, lhs, rhs } => format!("concat {dst}, {lhs}, {rhs}"),
        If {
            cmp,
            lhs,
            rhs,
            target,
        } => format!("if-{} {lhs}, {rhs}, {target}", cmp.mnemonic()),
        Goto { target } => format!("goto {target}"),
        New { dst, class } => format!("new {dst}, {class}"),
        IGet { dst, obj, field } => format!("iget {dst}, {obj}, {field}"),
        IPut { src, obj, field } => format!("iput {src}, {obj}, {field}"),
        SGet { dst, field } => format!("sget {dst}, {field}"),
        SPut { src, field } => format!("sput {src}, {field}"),
        Invoke { dst, method, args } => call(
            "invoke",
            dst.map_or_else(|| "_".to_string(), |d| d.to_string()),
            method,
            args,
        ),
        Spawn { dst, method, args } => call("spawn", dst.to_string(), method, args),
        Join { tid } => format!("join {tid}"),
        Return { src } => format!("return {src}"),
        ReturnVoid => "return-void".to_string(),
        Print { src } => format!("print {src}"),
    }
}

/// Canonical `.mex` text. Re-parsing the output yields an identical program.
pub fn print_program(p: &MexProgram) -> String {
    let mut out = String::new();
    if let Some(entry) = &p.entry {
        let _ = writeln!(out, "entry {entry}");
    }
    for class in &p.classes {
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "class {}", class.name);
        for f in &class.fields {
            let stat = if f.is_static { "static " } else { "" };
            let _ = writeln!(out, "  field {stat}{}: {}", f.name, f.ty);
        }
        for m in &class.methods {
            let params: Vec<String> = m.params.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(
                out,
                "  method {}({}) -> {} regs={}",
                m.name,
                params.join(", "),
                m.return_type,
                m.registers
            );
            for line in &m.body {
                if let Some(l) = &line.label {
                    let _ = writeln!(out, "  {l}:");
                }
                let _ = writeln!(out, "    {}", instr_text(&line.instr));
            }
        }
    }
    out
}
