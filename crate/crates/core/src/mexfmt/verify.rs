//! Structural and type verification of MEX programs.
//!
//! Register types are inferred with a forward dataflow over each method
//! body; the same inference feeds IR construction, so a verified method
//! always has a well-typed graph.

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{CmpOp, FieldRef, MexInstr, MexMethod, MexProgram, MexType, Reg};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// `Class.method` the diagnostic belongs to, if any.
    pub method: Option<String>,
    /// Instruction index within the method body.
    pub index: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.method, self.index) {
            (Some(m), Some(i)) => write!(f, "{m}@{i}: {}", self.message),
            (Some(m), None) => write!(f, "{m}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum RegState {
    Undef,
    Ty(MexType),
    Conflict,
    /// Result of an unresolved reference; accepted silently to avoid cascades.
    Poison,
}

impl RegState {
    fn join(&self, other: &RegState) -> RegState {
        use RegState::*;
        match (self, other) {
            (Undef, _) | (_, Undef) => Undef,
            (Poison, _) | (_, Poison) => Poison,
            (Ty(a), Ty(b)) if a == b => Ty(a.clone()),
            _ => Conflict,
        }
    }
}

pub(crate) type RegFile = Vec<RegState>;

/// Control-flow successors of instruction `i` (an index equal to the body
/// length means "falls off the end").
pub(crate) fn successors(m: &MexMethod, i: usize) -> Vec<usize> {
    let instr = &m.body[i].instr;
    match instr {
        MexInstr::Goto { target } => m.label_index(target).into_iter().collect(),
        MexInstr::Return { .. } | MexInstr::ReturnVoid => vec![],
        MexInstr::If { target, .. } => {
            let mut s = vec![i + 1];
            if let Some(t) = m.label_index(target) {
                if t != i + 1 {
                    s.push(t);
                }
            }
            s
        }
        _ => vec![i + 1],
    }
}

fn field_type(p: &MexProgram, f: &FieldRef, want_static: bool) -> Option<MexType> {
    p.field(f)
        .filter(|fd| fd.is_static == want_static)
        .map(|fd| fd.ty.clone())
}

/// Type written to the destination register, or `None` if the instruction
/// defines nothing.
pub(crate) fn result_state(p: &MexProgram, instr: &MexInstr, regs: &RegFile) -> Option<RegState> {
    use MexInstr::*;
    let st = |t: Option<MexType>| t.map_or(RegState::Poison, RegState::Ty);
    Some(match instr {
        ConstInt { .. } | Binary { .. } | Spawn { .. } => RegState::Ty(MexType::Int),
        ConstStr { .. } | Concat { .. } => RegState::Ty(MexType::Str),
        Move { src, .. } => regs[src.0 as usize].clone(),
        New { class, .. } => st(p.class(class).map(|_| MexType::Obj(class.clone()))),
        IGet { field, .. } => st(field_type(p, field, false)),
        SGet { field, .. } => st(field_type(p, field, true)),
        Invoke {
            dst: Some(_),
            method,
            args,
        } => st(p.signature(method, args.len()).map(|s| s.ret)),
        _ => return None,
    })
}

/// Register file before each instruction; `None` for unreachable ones.
pub(crate) fn reg_states(p: &MexProgram, m: &MexMethod) -> Vec<Option<RegFile>> {
    let n = m.body.len();
    let mut states: Vec<Option<RegFile>> = vec![None; n];
    if n == 0 {
        return states;
    }
    let mut init = vec![RegState::Undef; m.registers as usize];
    for (i, t) in m.params.iter().enumerate() {
        init[i] = RegState::Ty(t.clone());
    }
    states[0] = Some(init);
    let mut work = vec![0usize];
    let mut queued: HashSet<usize> = HashSet::from([0]);
    while let Some(i) = work.pop() {
        queued.remove(&i);
        let mut out = states[i].clone().unwrap();
        let instr = &m.body[i].instr;
        if let (Some(d), Some(s)) = (instr.def(), result_state(p, instr, &out)) {
            out[d.0 as usize] = s;
        }
        for s in successors(m, i) {
            if s >= n {
                continue;
            }
            let next = match &states[s] {
                None => out.clone(),
                Some(old) => old.iter().zip(&out).map(|(a, b)| a.join(b)).collect(),
            };
            if states[s].as_ref() != Some(&next) {
                states[s] = Some(next);
                if queued.insert(s) {
                    work.push(s);
                }
            }
        }
    }
    states
}

struct MethodCheck<'a> {
    p: &'a MexProgram,
    m: &'a MexMethod,
    name: String,
    out: &'a mut Vec<Diagnostic>,
}

impl MethodCheck<'_> {
    fn diag(&mut self, index: Option<usize>, message: impl Into<String>) {
        self.out.push(Diagnostic {
            method: Some(self.name.clone()),
            index,
            message: message.into(),
        });
    }

    /// Returns the register's type if it is usable.
    fn read(&mut self, i: usize, regs: &RegFile, r: Reg) -> Option<MexType> {
        match regs.get(r.0 as usize) {
            None => {
                self.diag(Some(i), format!("register {r} out of range"));
                None
            }
            Some(RegState::Undef) => {
                self.diag(Some(i), format!("use of undefined register {r}"));
                None
            }
            Some(RegState::Conflict) => {
                self.diag(Some(i), format!("register {r} has conflicting types"));
                None
            }
            Some(RegState::Poison) => None,
            Some(RegState::Ty(t)) => Some(t.clone()),
        }
    }

    fn expect(&mut self, i: usize, regs: &RegFile, r: Reg, want: &MexType, what: &str) {
        if let Some(t) = self.read(i, regs, r) {
            if &t != want {
                self.diag(Some(i), format!("{what}: expected {want}, found {t} in {r}"));
            }
        }
    }

    fn class_exists(&self, t: &MexType) -> bool {
        match t {
            MexType::Obj(c) => self.p.class(c).is_some(),
            _ => true,
        }
    }

    fn field(&mut self, i: usize, f: &FieldRef, want_static: bool) -> Option<MexType> {
        match self.p.field(f) {
            None => {
                self.diag(Some(i), format!("unresolved field {f}"));
                None
            }
            Some(fd) if fd.is_static != want_static => {
                let kind = if fd.is_static { "static" } else { "an instance field" };
                self.diag(Some(i), format!("field {f} is {kind}"));
                None
            }
            Some(fd) => Some(fd.ty.clone()),
        }
    }

    fn call(&mut self, i: usize, regs: &RegFile, method: &super::MethodRef, args: &[Reg]) -> Option<MexType> {
        let Some(sig) = self.p.signature(method, args.len()) else {
            for a in args {
                self.read(i, regs, *a);
            }
            self.diag(
                Some(i),
                format!("unresolved method {method} with {} argument(s)", args.len()),
            );
            return None;
        };
        for (k, (a, t)) in args.iter().zip(&sig.params).enumerate() {
            self.expect(i, regs, *a, t, &format!("argument {k} of {method}"));
        }
        Some(sig.ret)
    }

    fn instr(&mut self, i: usize, regs: &RegFile) {
        use MexInstr::*;
        let int = MexType::Int;
        match &self.m.body[i].instr {
            ConstInt { .. } | ConstStr { .. } | Goto { .. } => {}
            Move { src, .. } => {
                self.read(i, regs, *src);
            }
            Binary { lhs, rhs, op, .. } => {
                let what = format!("{} operand", op.mnemonic());
                self.expect(i, regs, *lhs, &int, &what);
                self.expect(i, regs, *rhs, &int, &what);
            }
            Concat { lhs, rhs, .. } => {
                for r in [lhs, rhs] {
                    if let Some(t) = self.read(i, regs, *r) {
                        if !t.is_taintable() {
                            self.diag(Some(i), format!("concat operand {r} must be int or str, found {t}"));
                        }
                    }
                }
            }
            If { cmp, lhs, rhs, .. } => {
                let a = self.read(i, regs, *lhs);
                let b = self.read(i, regs, *rhs);
                if let (Some(a), Some(b)) = (a, b) {
                    if *cmp == CmpOp::Lt && (a != int || b != int) {
                        self.diag(Some(i), "if-lt operands must be int");
                    } else if a != b {
                        self.diag(Some(i), format!("comparison of {a} with {b}"));
                    }
                }
            }
            New { class, .. } => {
                if self.p.class(class).is_none() {
                    self.diag(Some(i), format!("unresolved class {class}"));
                }
            }
            IGet { obj, field, .. } => {
                if self.field(i, field, false).is_some() {
                    self.expect(i, regs, *obj, &MexType::Obj(field.class.clone()), "object operand");
                } else {
                    self.read(i, regs, *obj);
                }
            }
            IPut { src, obj, field } => {
                if let Some(t) = self.field(i, field, false) {
                    self.expect(i, regs, *src, &t, &format!("value stored to {field}"));
                    self.expect(i, regs, *obj, &MexType::Obj(field.class.clone()), "object operand");
                } else {
                    self.read(i, regs, *src);
                    self.read(i, regs, *obj);
                }
            }
            SGet { field, .. } => {
                self.field(i, field, true);
            }
            SPut { src, field } => {
                if let Some(t) = self.field(i, field, true) {
                    self.expect(i, regs, *src, &t, &format!("value stored to {field}"));
                } else {
                    self.read(i, regs, *src);
                }
            }
            Invoke { dst, method, args } => {
                let ret = self.call(i, regs, method, args);
                if dst.is_some() && ret == Some(MexType::Void) {
                    self.diag(Some(i), format!("{method} returns void but a result register is given"));
                }
            }
            Spawn { method, args, .. } => {
                self.call(i, regs, method, args);
            }
            Join { tid } => self.expect(i, regs, *tid, &int, "join operand"),
            Return { src } => {
                if self.m.return_type == MexType::Void {
                    self.diag(Some(i), "return with a value in a void method");
                    self.read(i, regs, *src);
                } else {
                    let rt = self.m.return_type.clone();
                    self.expect(i, regs, *src, &rt, "return value");
                }
            }
            ReturnVoid => {
                if self.m.return_type != MexType::Void {
                    self.diag(Some(i), "return-void in a method returning a value");
                }
            }
            Print { src } => {
                self.read(i, regs, *src);
            }
        }
    }

    fn run(&mut self) {
        let m = self.m;
        if usize::from(m.registers) < m.params.len() {
            self.diag(None, "register count is smaller than the parameter count");
            return;
        }
        for t in m.params.iter().chain(std::iter::once(&m.return_type)) {
            if !self.class_exists(t) {
                self.diag(None, format!("unresolved class in signature: {t}"));
            }
        }
        if m.params.contains(&MexType::Void) {
            self.diag(None, "void is only valid as a return type");
        }

        // Labels and register bounds; parsed programs already satisfy these.
        let mut seen = HashMap::new();
        let mut structural = false;
        for (i, line) in m.body.iter().enumerate() {
            if let Some(l) = &line.label {
                if seen.insert(l.clone(), i).is_some() {
                    self.diag(Some(i), format!("duplicate label '{l}'"));
                    structural = true;
                }
            }
        }
        for (i, line) in m.body.iter().enumerate() {
            if let Some(t) = line.instr.branch_target() {
                if !seen.contains_key(t) {
                    self.diag(Some(i), format!("undefined label '{t}'"));
                    structural = true;
                }
            }
            let regs = line.instr.uses().into_iter().chain(line.instr.def());
            for r in regs {
                if r.0 >= m.registers {
                    self.diag(Some(i), format!("register {r} out of range"));
                    structural = true;
                }
            }
        }
        if structural {
            return;
        }
        if m.body.is_empty() {
            self.diag(None, "missing return");
            return;
        }

        let states = reg_states(self.p, m);
        for (i, st) in states.iter().enumerate() {
            let Some(regs) = st else { continue };
            self.instr(i, regs);
            if successors(m, i).contains(&m.body.len()) {
                self.diag(Some(i), "missing return");
            }
        }
    }
}

/// Returns every violated program invariant; empty means the program is
/// accepted by all downstream stages.
pub fn verify_program(p: &MexProgram) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let global = |out: &mut Vec<Diagnostic>, message: String| {
        out.push(Diagnostic {
            method: None,
            index: None,
            message,
        })
    };

    let mut classes = HashSet::new();
    for c in &p.classes {
        if !classes.insert(c.name.as_str()) {
            global(&mut out, format!("duplicate class {}", c.name));
        }
        let mut fields = HashSet::new();
        for f in &c.fields {
            if !fields.insert(f.name.as_str()) {
                global(&mut out, format!("duplicate field {}.{}", c.name, f.name));
            }
            if let MexType::Obj(t) = &f.ty {
                if p.class(t).is_none() {
                    global(&mut out, format!("field {}.{} has unresolved type {t}", c.name, f.name));
                }
            }
            if f.ty == MexType::Void {
                global(&mut out, format!("field {}.{} has type void", c.name, f.name));
            }
        }
        let mut methods = HashSet::new();
        for m in &c.methods {
            if !methods.insert((m.name.as_str(), m.params.len())) {
                global(
                    &mut out,
                    format!("duplicate method {}.{} with {} parameter(s)", c.name, m.name, m.params.len()),
                );
            }
        }
    }

    if let Some(entry) = &p.entry {
        match p.class(&entry.class) {
            None => global(&mut out, format!("entry point {entry} does not resolve")),
            Some(c) => {
                let n = c.methods.iter().filter(|m| m.name == entry.name).count();
                if n == 0 {
                    global(&mut out, format!("entry point {entry} does not resolve"));
                } else if n > 1 {
                    global(&mut out, format!("entry point {entry} is ambiguous"));
                }
                if c.methods.iter().filter(|m| m.name == "main").count() > 1 {
                    global(&mut out, format!("entry class {} declares more than one main", c.name));
                }
            }
        }
    }

    for c in &p.classes {
        for m in &c.methods {
            MethodCheck {
                p,
                m,
                name: format!("{}.{}", c.name, m.name),
                out: &mut out,
            }
            .run();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mexfmt::parse_program;

    fn diags(src: &str) -> Vec<String> {
        verify_program(&parse_program(src).unwrap())
            .into_iter()
            .map(|d| d.to_string())
            .collect()
    }

    #[test]
    fn missing_return() {
        let d = diags("class M\n  method m() -> void regs=1\n    const-int v0, 1\n");
        assert_eq!(d, ["M.m@0: missing return"]);
    }

    #[test]
    fn unresolved_method() {
        let d = diags("class M\n  method m() -> void regs=1\n    invoke _, Foo.bar\n    return-void\n");
        assert_eq!(d.len(), 1);
        assert!(d[0].contains("unresolved method Foo.bar"), "{d:?}");
    }

    #[test]
    fn undefined_on_one_path() {
        let d = diags(
            "class M\n  method m(int) -> int regs=2\n    if-eq v0, v0, skip\n    const-int v1, 1\n  skip:\n    return v1\n",
        );
        assert_eq!(d, ["M.m@2: use of undefined register v1"]);
    }

    #[test]
    fn type_errors() {
        let d = diags(
            "class M\n  method m() -> int regs=2\n    const-str v0, \"a\"\n    const-int v1, 2\n    div v1, v1, v0\n    return v0\n",
        );
        assert_eq!(d.len(), 2, "{d:?}");
        assert!(d[0].contains("div operand"));
        assert!(d[1].contains("return value"));
    }

    #[test]
    fn conflicting_register_only_reported_when_read() {
        let ok = diags(
            "class M\n  method m(int) -> void regs=2\n    const-int v1, 1\n    if-eq v0, v0, skip\n    const-str v1, \"x\"\n  skip:\n    return-void\n",
        );
        assert!(ok.is_empty(), "{ok:?}");
        let bad = diags(
            "class M\n  method m(int) -> void regs=2\n    const-int v1, 1\n    if-eq v0, v0, skip\n    const-str v1, \"x\"\n  skip:\n    print v1\n    return-void\n",
        );
        assert_eq!(bad, ["M.m@3: register v1 has conflicting types"]);
    }

    #[test]
    fn fields_and_entry() {
        let d = diags(
            "entry M.nope\nclass M\n  field static s: int\n  field s: str\n  method m() -> void regs=1\n    iget v0, v0, M.s\n    return-void\n",
        );
        assert!(d.iter().any(|x| x.contains("entry point M.nope does not resolve")));
        assert!(d.iter().any(|x| x.contains("duplicate field M.s")));
    }

    #[test]
    fn unreachable_code_is_not_checked_for_return() {
        let d = diags("class M\n  method m() -> void regs=1\n    return-void\n    const-int v0, 1\n");
        assert!(d.is_empty(), "{d:?}");
    }
}
