use std::collections::HashMap;

use thiserror::Error;

use super::{
    is_class_name, is_ident, BinOp, BodyLine, CmpOp, FieldRef, MethodRef, MexClass, MexField,
    MexInstr, MexMethod, MexProgram, MexType, Reg,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Word(String),
    Str(String),
    Punct(char),
    Arrow,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

fn err(line: usize, col: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        col,
        message: message.into(),
    }
}

fn lex_line(text: &str, line: usize) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            c if c.is_whitespace() => i += 1,
            '#' => break,
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(err(line, col, "unterminated string literal")),
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            let esc = match chars.get(i + 1) {
                                Some('n') => '\n',
                                Some('t') => '\t',
                                Some('r') => '\r',
                                Some('"') => '"',
                                Some('\\') => '\\',
                                _ => return Err(err(line, i + 1, "invalid escape sequence")),
                            };
                            s.push(esc);
                            i += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                out.push(Token {
                    tok: Tok::Str(s),
                    col,
                });
            }
            ',' | '(' | ')' | '=' => {
                out.push(Token {
                    tok: Tok::Punct(c),
                    col,
                });
                i += 1;
            }
            ':' if chars.get(i + 1) != Some(&':') => {
                out.push(Token {
                    tok: Tok::Punct(':'),
                    col,
                });
                i += 1;
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                out.push(Token {
                    tok: Tok::Arrow,
                    col,
                });
                i += 2;
            }
            _ => {
                let start = i;
                while i < chars.len() {
                    let ch = chars[i];
                    if ch.is_ascii_alphanumeric() || ch == '_' || ch == '.' {
                        i += 1;
                    } else if ch == '-' && chars.get(i + 1) != Some(&'>') {
                        i += 1;
                    } else if ch == ':' && chars.get(i + 1) == Some(&':') {
                        i += 2;
                    } else {
                        break;
                    }
                }
                if i == start {
                    return Err(err(line, col, format!("unexpected character '{c}'")));
                }
                out.push(Token {
                    tok: Tok::Word(chars[start..i].iter().collect()),
                    col,
                });
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    line: usize,
    line_len: usize,
}

impl<'a> Cursor<'a> {
    fn col(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|t| t.col)
            .unwrap_or(self.line_len + 1)
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        err(self.line, self.col(), message)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn word(&mut self, what: &str) -> Result<(String, usize), ParseError> {
        match self.toks.get(self.pos) {
            Some(Token {
                tok: Tok::Word(w),
                col,
            }) => {
                self.pos += 1;
                Ok((w.clone(), *col))
            }
            _ => Err(self.error(format!("expected {what}"))),
        }
    }

    fn punct(&mut self, p: char) -> Result<(), ParseError> {
        match self.toks.get(self.pos) {
            Some(Token {
                tok: Tok::Punct(c), ..
            }) if *c == p => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error(format!("expected '{p}'"))),
        }
    }

    fn peek_punct(&self, p: char) -> bool {
        matches!(self.toks.get(self.pos), Some(Token { tok: Tok::Punct(c), .. }) if *c == p)
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.error("unexpected trailing tokens"))
        }
    }

    fn ty(&mut self) -> Result<MexType, ParseError> {
        let col = self.col();
        let (w, _) = self.word("type")?;
        MexType::parse(&w).ok_or_else(|| err(self.line, col, format!("invalid type '{w}'")))
    }
}

/// Method under construction, with label bookkeeping for the undefined-label check.
struct OpenMethod {
    method: MexMethod,
    labels: HashMap<String, usize>,
    pending_label: Option<(String, usize, usize)>,
    branches: Vec<(String, usize, usize)>,
}

impl OpenMethod {
    fn finish(self) -> Result<MexMethod, ParseError> {
        if let Some((label, line, col)) = self.pending_label {
            return Err(err(
                line,
                col,
                format!("label '{label}' is not followed by an instruction"),
            ));
        }
        for (target, line, col) in &self.branches {
            if !self.labels.contains_key(target) {
                return Err(err(*line, *col, format!("undefined label '{target}'")));
            }
        }
        Ok(self.method)
    }
}

/// Parses the `.mex` text format. Errors carry 1-based line and column.
pub fn parse_program(text: &str) -> Result<MexProgram, ParseError> {
    let mut program = MexProgram::default();
    let mut open: Option<OpenMethod> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks = lex_line(raw, line)?;
        if toks.is_empty() {
            continue;
        }
        let mut cur = Cursor {
            toks: &toks,
            pos: 0,
            line,
            line_len: raw.chars().count(),
        };
        let head = match &toks[0].tok {
            Tok::Word(w) => w.clone(),
            _ => return Err(cur.error("expected a directive, label or instruction")),
        };

        match head.as_str() {
            "entry" => {
                cur.pos += 1;
                if !program.classes.is_empty() {
                    return Err(err(line, 1, "entry directive must precede all classes"));
                }
                if program.entry.is_some() {
                    return Err(err(line, 1, "duplicate entry directive"));
                }
                let col = cur.col();
                let (w, _) = cur.word("method reference")?;
                let m = MethodRef::parse(&w)
                    .filter(|m| !m.is_intrinsic())
                    .ok_or_else(|| err(line, col, format!("invalid entry reference '{w}'")))?;
                cur.expect_end()?;
                program.entry = Some(m);
            }
            "class" => {
                cur.pos += 1;
                if let Some(m) = open.take() {
                    let done = m.finish()?;
                    program.classes.last_mut().unwrap().methods.push(done);
                }
                let col = cur.col();
                let (name, _) = cur.word("class name")?;
                if !is_class_name(&name) {
                    return Err(err(line, col, format!("invalid class name '{name}'")));
                }
                cur.expect_end()?;
                program.classes.push(MexClass {
                    name,
                    fields: Vec::new(),
                    methods: Vec::new(),
                });
            }
            "field" => {
                cur.pos += 1;
                if let Some(m) = open.take() {
                    let done = m.finish()?;
                    program.classes.last_mut().unwrap().methods.push(done);
                }
                let class = program
                    .classes
                    .last_mut()
                    .ok_or_else(|| err(line, 1, "field outside of a class"))?;
                let (mut name, mut col) = cur.word("field name")?;
                let mut is_static = false;
                if name == "static" && !cur.peek_punct(':') {
                    is_static = true;
                    (name, col) = cur.word("field name")?;
                }
                if !is_ident(&name) {
                    return Err(err(line, col, format!("invalid field name '{name}'")));
                }
                cur.punct(':')?;
                let ty_col = cur.col();
                let ty = cur.ty()?;
                if ty == MexType::Void {
                    return Err(err(line, ty_col, "field cannot have type void"));
                }
                cur.expect_end()?;
                class.fields.push(MexField {
                    name,
                    is_static,
                    ty,
                });
            }
            "method" => {
                cur.pos += 1;
                if let Some(m) = open.take() {
                    let done = m.finish()?;
                    program.classes.last_mut().unwrap().methods.push(done);
                }
                if program.classes.is_empty() {
                    return Err(err(line, 1, "method outside of a class"));
                }
                let method = parse_method_header(&mut cur)?;
                open = Some(OpenMethod {
                    method,
                    labels: HashMap::new(),
                    pending_label: None,
                    branches: Vec::new(),
                });
            }
            _ => {
                let m = open
                    .as_mut()
                    .ok_or_else(|| err(line, 1, "instruction outside of a method"))?;
                if toks.len() == 2 && toks[1].tok == Tok::Punct(':') {
                    if !is_ident(&head) {
                        return Err(err(line, 1, format!("invalid label '{head}'")));
                    }
                    if m.labels.contains_key(&head)
                        || m.pending_label.as_ref().is_some_and(|p| p.0 == head)
                    {
                        return Err(err(line, 1, format!("duplicate label '{head}'")));
                    }
                    if m.pending_label.is_some() {
                        return Err(err(line, 1, "an instruction may carry only one label"));
                    }
                    m.pending_label = Some((head, line, 1));
                    continue;
                }
                cur.pos += 1;
                let instr = parse_instr(&head, &mut cur, m.method.registers)?;
                if let Some(target) = instr.branch_target() {
                    let col = toks.last().map(|t| t.col).unwrap_or(1);
                    m.branches.push((target.to_string(), line, col));
                }
                let index = m.method.body.len();
                let label = m.pending_label.take().map(|(l, _, _)| {
                    m.labels.insert(l.clone(), index);
                    l
                });
                m.method.body.push(BodyLine { label, instr });
            }
        }
    }
    if let Some(m) = open.take() {
        let done = m.finish()?;
        program.classes.last_mut().unwrap().methods.push(done);
    }
    Ok(program)
}

fn parse_method_header(cur: &mut Cursor<'_>) -> Result<MexMethod, ParseError> {
    let col = cur.col();
    let (name, _) = cur.word("method name")?;
    if !is_ident(&name) {
        return Err(err(cur.line, col, format!("invalid method name '{name}'")));
    }
    cur.punct('(')?;
    let mut params = Vec::new();
    if !cur.peek_punct(')') {
        loop {
            let col = cur.col();
            let ty = cur.ty()?;
            if ty == MexType::Void {
                return Err(err(cur.line, col, "void is only valid as a return type"));
            }
            params.push(ty);
            if cur.peek_punct(',') {
                cur.pos += 1;
            } else {
                break;
            }
        }
    }
    cur.punct(')')?;
    match cur.toks.get(cur.pos) {
        Some(Token { tok: Tok::Arrow, .. }) => cur.pos += 1,
        _ => return Err(cur.error("expected '->'")),
    }
    let return_type = cur.ty()?;
    let (kw, col) = cur.word("regs=<n>")?;
    if kw != "regs" {
        return Err(err(cur.line, col, "expected regs=<n>"));
    }
    cur.punct('=')?;
    let (n, col) = cur.word("register count")?;
    let registers: u16 = n
        .parse()
        .map_err(|_| err(cur.line, col, format!("invalid register count '{n}'")))?;
    cur.expect_end()?;
    if usize::from(registers) < params.len() {
        return Err(err(
            cur.line,
            col,
            "register count is smaller than the parameter count",
        ));
    }
    Ok(MexMethod {
        name,
        params,
        return_type,
        registers,
        body: Vec::new(),
    })
}

#[derive(Debug)]
enum Operand {
    Word(String, usize),
    Str(String, usize),
}

fn operands(cur: &mut Cursor<'_>) -> Result<Vec<Operand>, ParseError> {
    let mut out = Vec::new();
    if cur.at_end() {
        return Ok(out);
    }
    loop {
        match cur.toks.get(cur.pos) {
            Some(Token {
                tok: Tok::Word(w),
                col,
            }) => out.push(Operand::Word(w.clone(), *col)),
            Some(Token {
                tok: Tok::Str(s),
                col,
            }) => out.push(Operand::Str(s.clone(), *col)),
            _ => return Err(cur.error("expected an operand")),
        }
        cur.pos += 1;
        if cur.at_end() {
            return Ok(out);
        }
        cur.punct(',')?;
    }
}

struct Ops<'a> {
    ops: Vec<Operand>,
    line: usize,
    registers: u16,
    opcode: &'a str,
}

impl Ops<'_> {
    fn arity(&self, n: usize) -> Result<(), ParseError> {
        if self.ops.len() != n {
            return Err(err(
                self.line,
                1,
                format!(
                    "'{}' expects {n} operand(s), found {}",
                    self.opcode,
                    self.ops.len()
                ),
            ));
        }
        Ok(())
    }

    fn word(&self, i: usize) -> Result<(&str, usize), ParseError> {
        match &self.ops[i] {
            Operand::Word(w, c) => Ok((w, *c)),
            Operand::Str(_, c) => Err(err(self.line, *c, "unexpected string literal")),
        }
    }

    fn reg(&self, i: usize) -> Result<Reg, ParseError> {
        let (w, col) = self.word(i)?;
        let n: u16 = w
            .strip_prefix('v')
            .and_then(|d| {
                (!d.is_empty() && d.chars().all(|c| c.is_ascii_digit()))
                    .then(|| d.parse().ok())
                    .flatten()
            })
            .ok_or_else(|| err(self.line, col, format!("expected a register, found '{w}'")))?;
        if n >= self.registers {
            return Err(err(
                self.line,
                col,
                format!(
                    "register v{n} out of range (method declares regs={})",
                    self.registers
                ),
            ));
        }
        Ok(Reg(n))
    }

    fn label(&self, i: usize) -> Result<String, ParseError> {
        let (w, col) = self.word(i)?;
        if !is_ident(w) {
            return Err(err(self.line, col, format!("invalid label '{w}'")));
        }
        Ok(w.to_string())
    }

    fn method(&self, i: usize) -> Result<MethodRef, ParseError> {
        let (w, col) = self.word(i)?;
        MethodRef::parse(w)
            .ok_or_else(|| err(self.line, col, format!("invalid method reference '{w}'")))
    }

    fn field(&self, i: usize) -> Result<FieldRef, ParseError> {
        let (w, col) = self.word(i)?;
        FieldRef::parse(w)
            .ok_or_else(|| err(self.line, col, format!("invalid field reference '{w}'")))
    }
}

fn parse_instr(opcode: &str, cur: &mut Cursor<'_>, registers: u16) -> Result<MexInstr, ParseError> {
    let line = cur.line;
    let ops = Ops {
        ops: operands(cur)?,
        line,
        registers,
        opcode,
    };
    let binop = |op| -> Result<MexInstr, ParseError> {
        ops.arity(3)?;
        Ok(MexInstr::Binary {
            op,
            dst: ops.reg(0)?,
            lhs: ops.reg(1)?,
            rhs: ops.reg(2)?,
        })
    };
    let branch = |cmp| -> Result<MexInstr, ParseError> {
        ops.arity(3)?;
        Ok(MexInstr::If {
            cmp,
            lhs: ops.reg(0)?,
            rhs: ops.reg(1)?,
            target: ops.label(2)?,
        })
    };
    let instr = match opcode {
        "const-int" => {
            ops.arity(2)?;
            let (w, col) = ops.word(1)?;
            let value = w
                .parse()
                .map_err(|_| err(line, col, format!("invalid integer literal '{w}'")))?;
            MexInstr::ConstInt {
                dst: ops.reg(0)?,
                value,
            }
        }
        "const-str" => {
            ops.arity(2)?;
            let value = match &ops.ops[1] {
                Operand::Str(s, _) => s.clone(),
                Operand::Word(_, col) => return Err(err(line, *col, "expected a string literal")),
            };
            MexInstr::ConstStr {
                dst: ops.reg(0)?,
                value,
            }
        }
        "move" => {
            ops.arity(2)?;
            MexInstr::Move {
                dst: ops.reg(0)?,
                src: ops.reg(1)?,
            }
        }
        "add" => binop(BinOp::Add)?,
        "sub" => binop(BinOp::Sub)?,
        "mul" => binop(BinOp::Mul)?,
        "div" => binop(BinOp::Div)?,
        "concat" => {
            ops.arity(3)?;
            MexInstr::Concat {
                dst: ops.reg(0)?,
                lhs: ops.reg(1)?,
                rhs: ops.reg(2)?,
            }
        }
        "if-eq" => branch(CmpOp::Eq)?,
        "if-ne" => branch(CmpOp::Ne)?,
        "if-lt" => branch(CmpOp::Lt)?,
        "goto" => {
            ops.arity(1)?;
            MexInstr::Goto {
                target: ops.label(0)?,
            }
        }
        "new" => {
            ops.arity(2)?;
            let (w, col) = ops.word(1)?;
            if !is_class_name(w) {
                return Err(err(line, col, format!("invalid class name '{w}'")));
            }
            MexInstr::New {
                dst: ops.reg(0)?,
                class: w.to_string(),
            }
        }
        "iget" => {
            ops.arity(3)?;
            MexInstr::IGet {
                dst: ops.reg(0)?,
                obj: ops.reg(1)?,
                field: ops.field(2)?,
            }
        }
        "iput" => {
            ops.arity(3)?;
            MexInstr::IPut {
                src: ops.reg(0)?,
                obj: ops.reg(1)?,
                field: ops.field(2)?,
            }
        }
        "sget" => {
            ops.arity(2)?;
            MexInstr::SGet {
                dst: ops.reg(0)?,
                field: ops.field(1)?,
            }
        }
        "sput" => {
            ops.arity(2)?;
            MexInstr::SPut {
                src: ops.reg(0)?,
                field: ops.field(1)?,
            }
        }
        "invoke" | "spawn" => {
            if ops.ops.len() < 2 {
                return Err(err(
                    line,
                    1,
                    format!("'{opcode}' expects a destination and a method reference"),
                ));
            }
            let method = ops.method(1)?;
            let args = (2..ops.ops.len())
                .map(|i| ops.reg(i))
                .collect::<Result<Vec<_>, _>>()?;
            if opcode == "spawn" {
                MexInstr::Spawn {
                    dst: ops.reg(0)?,
                    method,
                    args,
                }
            } else {
                let dst = match ops.word(0)? {
                    ("_", _) => None,
                    _ => Some(ops.reg(0)?),
                };
                MexInstr::Invoke { dst, method, args }
            }
        }
        "join" => {
            ops.arity(1)?;
            MexInstr::Join { tid: ops.reg(0)? }
        }
        "return" => {
            ops.arity(1)?;
            MexInstr::Return { src: ops.reg(0)? }
        }
        "return-void" => {
            ops.arity(0)?;
            MexInstr::ReturnVoid
        }
        "print" => {
            ops.arity(1)?;
            MexInstr::Print { src: ops.reg(0)? }
        }
        other => return Err(err(line, 1, format!("unknown opcode '{other}'"))),
    };
    Ok(instr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = parse_program(
            "entry Main.main\nclass Main\n  method main() -> void regs=1\n    const-int v0, 0\n    return-void\n",
        )
        .unwrap();
        assert_eq!(p.classes.len(), 1);
        assert_eq!(p.classes[0].methods.len(), 1);
        assert_eq!(p.classes[0].methods[0].body.len(), 2);
        assert_eq!(p.entry, Some(MethodRef::new("Main", "main")));
    }

    #[test]
    fn undefined_label_names_label_and_line() {
        let e = parse_program(
            "class Main\n  method main() -> void regs=1\n    goto missing_label\n    return-void\n",
        )
        .unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("missing_label"), "{e}");
    }

    #[test]
    fn duplicate_label() {
        let e = parse_program(
            "class M\n  method m() -> void regs=1\n  a:\n    const-int v0, 1\n  a:\n    return-void\n",
        )
        .unwrap_err();
        assert_eq!(e.line, 5);
        assert!(e.message.contains("duplicate label"));
    }

    #[test]
    fn unknown_opcode() {
        let e = parse_program("class M\n  method m() -> void regs=1\n    frob v0\n").unwrap_err();
        assert!(e.message.contains("unknown opcode 'frob'"));
    }

    #[test]
    fn register_out_of_range() {
        let e = parse_program("class M\n  method m() -> void regs=1\n    const-int v1, 3\n")
            .unwrap_err();
        assert_eq!((e.line, e.col), (3, 15));
        assert!(e.message.contains("out of range"));
    }

    #[test]
    fn strings_with_escapes_and_comments() {
        let p = parse_program(
            "class M # trailing\n  method m() -> void regs=1\n    const-str v0, \"a # b \\\"q\\\"\\n\"\n    return-void\n",
        )
        .unwrap();
        match &p.classes[0].methods[0].body[0].instr {
            MexInstr::ConstStr { value, .. } => assert_eq!(value, "a # b \"q\"\n"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invoke_forms() {
        let p = parse_program(
            "class M\n  method m(str) -> void regs=2\n    invoke _, rt::Log.d, v0\n    invoke v1, rt::Telephony.getDeviceId\n    spawn v1, M.m, v0\n    return-void\n",
        )
        .unwrap();
        let body = &p.classes[0].methods[0].body;
        assert_eq!(
            body[0].instr,
            MexInstr::Invoke {
                dst: None,
                method: MethodRef::new("rt::Log", "d"),
                args: vec![Reg(0)]
            }
        );
        assert!(matches!(&body[2].instr, MexInstr::Spawn { args, .. } if args.len() == 1));
    }

    #[test]
    fn fields_and_negative_literals() {
        let p = parse_program(
            "class Box\n  field static count: int\n  field next: Box\n  method m() -> int regs=1\n    const-int v0, -12\n    return v0\n",
        )
        .unwrap();
        let c = &p.classes[0];
        assert!(c.fields[0].is_static);
        assert_eq!(c.fields[1].ty, MexType::Obj("Box".into()));
        assert_eq!(
            c.methods[0].body[0].instr,
            MexInstr::ConstInt {
                dst: Reg(0),
                value: -12
            }
        );
    }

    #[test]
    fn arity_mismatch_is_syntax_error() {
        let e = parse_program("class M\n  method m() -> void regs=2\n    add v0, v1\n").unwrap_err();
        assert!(e.message.contains("expects 3 operand"));
    }
}
