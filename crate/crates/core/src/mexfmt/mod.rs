//! The MEX bytecode language: program model, text format, verifier,
//! policy files and pre-compilation merging.
//!
//! A MEX program is a list of classes. Each class declares fields and
//! methods; each method is a flat list of register-machine instructions
//! with optional labels. Calls into the runtime go through intrinsics in
//! the reserved `rt::` namespace (see [`intrinsics`]).

use std::fmt;

pub mod intrinsics;
mod merge;
mod parser;
mod policy;
mod printer;
pub(crate) mod verify;

pub use merge::{merge_programs, MergeError};
pub use parser::{parse_program, ParseError};
pub use policy::{
    parse_perm_policy, parse_taint_policy, Grant, PermissionPolicy, PolicyError, SinkMode,
    TaintPolicy,
};
pub use printer::print_program;
pub use verify::{verify_program, Diagnostic};

/// Prefix of the reserved namespace implemented natively by the runtime.
pub const INTRINSIC_PREFIX: &str = "rt::";

/// Virtual register index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(pub u16);

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MexType {
    Int,
    Str,
    Obj(String),
    Void,
}

impl MexType {
    /// Scalars carry taint tags; objects are tainted only through their fields.
    pub fn is_taintable(&self) -> bool {
        matches!(self, MexType::Int | MexType::Str)
    }

    pub fn parse(word: &str) -> Option<MexType> {
        match word {
            "int" => Some(MexType::Int),
            "str" => Some(MexType::Str),
            "void" => Some(MexType::Void),
            w if is_class_name(w) => Some(MexType::Obj(w.to_string())),
            _ => None,
        }
    }
}

impl fmt::Display for MexType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MexType::Int => f.write_str("int"),
            MexType::Str => f.write_str("str"),
            MexType::Obj(c) => f.write_str(c),
            MexType::Void => f.write_str("void"),
        }
    }
}

/// Words that cannot be used as user class names.
pub(crate) fn is_reserved(word: &str) -> bool {
    matches!(word, "int" | "str" | "void" | "tag" | "rt")
}

pub(crate) fn is_ident(word: &str) -> bool {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub(crate) fn is_class_name(word: &str) -> bool {
    is_ident(word) && !is_reserved(word)
}

/// A method reference as written at call sites and in policy files:
/// `Class.method` or `rt::Class.method`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MethodRef {
    pub class: String,
    pub name: String,
}

impl MethodRef {
    pub fn new(class: impl Into<String>, name: impl Into<String>) -> Self {
        MethodRef {
            class: class.into(),
            name: name.into(),
        }
    }

    pub fn is_intrinsic(&self) -> bool {
        self.class.starts_with(INTRINSIC_PREFIX)
    }

    /// Parses `Class.method` / `rt::Class.method`.
    pub fn parse(text: &str) -> Option<MethodRef> {
        let (class, name) = text.rsplit_once('.')?;
        let bare = class.strip_prefix(INTRINSIC_PREFIX).unwrap_or(class);
        if !is_ident(bare) || !is_ident(name) {
            return None;
        }
        if !class.starts_with(INTRINSIC_PREFIX) && is_reserved(bare) {
            return None;
        }
        Some(MethodRef::new(class, name))
    }
}

impl fmt::Display for MethodRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.class, self.name)
    }
}

/// Methods are unique per (class, name, arity).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MethodKey {
    pub method: MethodRef,
    pub arity: usize,
}

impl fmt::Display for MethodKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.method, self.arity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldRef {
    pub class: String,
    pub name: String,
}

impl FieldRef {
    pub fn new(class: impl Into<String>, name: impl Into<String>) -> Self {
        FieldRef {
            class: class.into(),
            name: name.into(),
        }
    }

    pub fn parse(text: &str) -> Option<FieldRef> {
        let (class, name) = text.rsplit_once('.')?;
        if !is_class_name(class) || !is_ident(name) {
            return None;
        }
        Some(FieldRef::new(class, name))
    }
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.class, self.name)
    }
}

/// Callee signature: the reference plus its declared parameter and return types.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MethodSig {
    pub method: MethodRef,
    pub params: Vec<MexType>,
    pub ret: MexType,
}

impl MethodSig {
    pub fn key(&self) -> MethodKey {
        MethodKey {
            method: self.method.clone(),
            arity: self.params.len(),
        }
    }

    /// Parses the compact `Class.m(int,str)->str` form used in IR dumps.
    pub fn parse(text: &str) -> Option<MethodSig> {
        let (head, ret) = text.rsplit_once(")->")?;
        let (name, params) = head.split_once('(')?;
        let method = MethodRef::parse(name)?;
        let params = if params.is_empty() {
            Vec::new()
        } else {
            params
                .split(',')
                .map(MexType::parse)
                .collect::<Option<Vec<_>>>()?
        };
        Some(MethodSig {
            method,
            params,
            ret: MexType::parse(ret)?,
        })
    }
}

impl fmt::Display for MethodSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.method)?;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, ")->{}", self.ret)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    /// Two's-complement wrapping semantics shared by the interpreter and
    /// constant folding. `None` on division by zero.
    pub fn eval(self, a: i64, b: i64) -> Option<i64> {
        match self {
            BinOp::Add => Some(a.wrapping_add(b)),
            BinOp::Sub => Some(a.wrapping_sub(b)),
            BinOp::Mul => Some(a.wrapping_mul(b)),
            BinOp::Div => (b != 0).then(|| a.wrapping_div(b)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
}

impl CmpOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
            CmpOp::Lt => "lt",
        }
    }

    pub fn parse(word: &str) -> Option<CmpOp> {
        match word {
            "eq" => Some(CmpOp::Eq),
            "ne" => Some(CmpOp::Ne),
            "lt" => Some(CmpOp::Lt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MexInstr {
    ConstInt { dst: Reg, value: i64 },
    ConstStr { dst: Reg, value: String },
    Move { dst: Reg, src: Reg },
    Binary { op: BinOp, dst: Reg, lhs: Reg, rhs: Reg },
    Concat { dst: Reg, lhs: Reg, rhs: Reg },
    If { cmp: CmpOp, lhs: Reg, rhs: Reg, target: String },
    Goto { target: String },
    New { dst: Reg, class: String },
    IGet { dst: Reg, obj: Reg, field: FieldRef },
    IPut { src: Reg, obj: Reg, field: FieldRef },
    SGet { dst: Reg, field: FieldRef },
    SPut { src: Reg, field: FieldRef },
    Invoke { dst: Option<Reg>, method: MethodRef, args: Vec<Reg> },
    Spawn { dst: Reg, method: MethodRef, args: Vec<Reg> },
    Join { tid: Reg },
    Return { src: Reg },
    ReturnVoid,
    Print { src: Reg },
}

impl MexInstr {
    /// Register written by this instruction, if any.
    pub fn def(&self) -> Option<Reg> {
        use MexInstr::*;
        match self {
            ConstInt { dst, .. }
            | ConstStr { dst, .. }
            | Move { dst, .. }
            | Binary { dst, .. }
            | Concat { dst, .. }
            | New { dst, .. }
            | IGet { dst, .. }
            | SGet { dst, .. }
            | Spawn { dst, .. } => Some(*dst),
            Invoke { dst, .. } => *dst,
            _ => None,
        }
    }

    /// Registers read by this instruction, in operand order.
    pub fn uses(&self) -> Vec<Reg> {
        use MexInstr::*;
        match self {
            ConstInt { .. } | ConstStr { .. } | Goto { .. } | New { .. } | SGet { .. } => vec![],
            ReturnVoid => vec![],
            Move { src, .. } | SPut { src, .. } | Return { src } | Print { src } => vec![*src],
            Binary { lhs, rhs, .. } | Concat { lhs, rhs, .. } | If { lhs, rhs, .. } => {
                vec![*lhs, *rhs]
            }
            IGet { obj, .. } => vec![*obj],
            IPut { src, obj, .. } => vec![*src, *obj],
            Invoke { args, .. } | Spawn { args, .. } => args.clone(),
            Join { tid } => vec![*tid],
        }
    }

    pub fn branch_target(&self) -> Option<&str> {
        match self {
            MexInstr::If { target, .. } | MexInstr::Goto { target } => Some(target),
            _ => None,
        }
    }

    /// True when control never falls through to the next instruction.
    pub fn ends_flow(&self) -> bool {
        matches!(
            self,
            MexInstr::Goto { .. } | MexInstr::Return { .. } | MexInstr::ReturnVoid
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodyLine {
    pub label: Option<String>,
    pub instr: MexInstr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MexMethod {
    pub name: String,
    pub params: Vec<MexType>,
    pub return_type: MexType,
    pub registers: u16,
    pub body: Vec<BodyLine>,
}

impl MexMethod {
    /// Index of the instruction carrying `label`.
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.body
            .iter()
            .position(|l| l.label.as_deref() == Some(label))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MexField {
    pub name: String,
    pub is_static: bool,
    pub ty: MexType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MexClass {
    pub name: String,
    pub fields: Vec<MexField>,
    pub methods: Vec<MexMethod>,
}

impl MexClass {
    pub fn field(&self, name: &str) -> Option<&MexField> {
        self.fields.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MexProgram {
    pub classes: Vec<MexClass>,
    /// Entry point; libraries merged in as companions may omit it.
    pub entry: Option<MethodRef>,
}

impl MexProgram {
    pub fn class(&self, name: &str) -> Option<&MexClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn field(&self, field: &FieldRef) -> Option<&MexField> {
        self.class(&field.class)?.field(&field.name)
    }

    /// Resolves a user method by reference and arity.
    pub fn method(&self, method: &MethodRef, arity: usize) -> Option<&MexMethod> {
        self.class(&method.class)?
            .methods
            .iter()
            .find(|m| m.name == method.name && m.params.len() == arity)
    }

    /// Signature of a callee, user-declared or intrinsic.
    pub fn signature(&self, method: &MethodRef, arity: usize) -> Option<MethodSig> {
        if method.is_intrinsic() {
            let intr = intrinsics::lookup(method)?;
            return (intr.params.len() == arity).then(|| intr.signature());
        }
        let m = self.method(method, arity)?;
        Some(MethodSig {
            method: method.clone(),
            params: m.params.clone(),
            ret: m.return_type.clone(),
        })
    }

    /// The entry method, when it resolves to exactly one declaration.
    pub fn entry_method(&self) -> Option<(&MexClass, &MexMethod)> {
        let entry = self.entry.as_ref()?;
        let class = self.class(&entry.class)?;
        let mut found = class.methods.iter().filter(|m| m.name == entry.name);
        let first = found.next()?;
        found.next().is_none().then_some((class, first))
    }

    /// Every method with its fully-qualified signature, in declaration order.
    pub fn methods(&self) -> impl Iterator<Item = (MethodSig, &MexMethod)> {
        self.classes.iter().flat_map(|c| {
            c.methods.iter().map(move |m| {
                (
                    MethodSig {
                        method: MethodRef::new(c.name.clone(), m.name.clone()),
                        params: m.params.clone(),
                        ret: m.return_type.clone(),
                    },
                    m,
                )
            })
        })
    }
}
