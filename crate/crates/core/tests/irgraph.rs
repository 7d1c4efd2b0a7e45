use std::collections::{BTreeMap, BTreeSet};

use artiskit::irgraph::{
    audit, build_graph, compile_method, dom, dump, parse_dump, ssa_convert, visit, BlockId, Edit, HGraph,
    HInstruction, InstrId, InstrKind, IrType, MutateError, NewInstr, SsaError,
};
use artiskit::mexfmt::{parse_program, verify_program, MexInstr, MexProgram, Reg};
use proptest::prelude::*;

const FIG2: &str = include_str!("data/fig2.mex");

fn program(src: &str) -> MexProgram {
    let p = parse_program(src).unwrap();
    let diags = verify_program(&p);
    assert!(diags.is_empty(), "{diags:?}");
    p
}

fn graph_of(p: &MexProgram, name: &str) -> HGraph {
    let (sig, m) = p.methods().find(|(s, _)| s.method.name == name).unwrap();
    let g = compile_method(p, &sig, m).unwrap();
    assert_eq!(audit(&g), vec![]);
    g
}

fn graph(src: &str, name: &str) -> HGraph {
    graph_of(&program(src), name)
}

fn count(g: &HGraph, pred: impl Fn(&InstrKind) -> bool) -> usize {
    g.instructions().filter(|i| pred(&i.kind)).count()
}

fn phis(g: &HGraph) -> Vec<&HInstruction> {
    g.instructions().filter(|i| i.kind.is_phi()).collect()
}

#[test]
fn straight_line_is_one_block_without_phis() {
    let g = graph(
        "class A\n  method m(int) -> int regs=2\n    const-int v1, 2\n    add v0, v0, v1\n    return v0\n",
        "m",
    );
    assert_eq!(g.blocks().len(), 1);
    assert_eq!(g.instruction_count(), 4);
    assert!(phis(&g).is_empty());
}

#[test]
fn checks_precede_division_and_field_access() {
    let g = graph(
        "class A\n  field f: int\n  method m(A, int) -> int regs=3\n    iget v2, v0, A.f\n    div v2, v2, v1\n    iput v2, v0, A.f\n    return v2\n",
        "m",
    );
    assert_eq!(g.blocks().len(), 1);
    assert_eq!(count(&g, |k| *k == InstrKind::NullCheck), 2);
    assert_eq!(count(&g, |k| *k == InstrKind::DivZeroCheck), 1);
    for i in g.instructions() {
        match &i.kind {
            InstrKind::InstanceGet(_) | InstrKind::InstanceSet(_) => {
                assert_eq!(g.instr(i.inputs()[0]).kind, InstrKind::NullCheck)
            }
            InstrKind::Div => assert_eq!(g.instr(i.inputs()[1]).kind, InstrKind::DivZeroCheck),
            _ => {}
        }
    }
}

const DIAMOND: &str = "class A
  method m(int) -> int regs=2
    const-int v1, 0
    if-eq v0, v1, other
    const-int v1, 10
    goto join
  other:
    const-int v1, 20
  join:
    return v1
";

#[test]
fn diamond_has_four_blocks_and_one_merge_phi() {
    let g = graph(DIAMOND, "m");
    assert_eq!(g.blocks().len(), 4);
    let ps = phis(&g);
    assert_eq!(ps.len(), 1);
    let phi = ps[0];
    assert_eq!(phi.block(), BlockId(3));
    assert_eq!(phi.inputs().len(), 2);
    assert_eq!(phi.ty, IrType::Int);
    let mut values: Vec<InstrKind> = phi.inputs().iter().map(|&i| g.instr(i).kind.clone()).collect();
    values.sort_by_key(|k| format!("{k:?}"));
    assert_eq!(values, [InstrKind::ConstInt(10), InstrKind::ConstInt(20)]);
    let idom = g.dominators();
    assert_eq!(idom[&BlockId(3)], BlockId(0));
    let df = g.dominance_frontier();
    assert_eq!(df[&BlockId(1)], BTreeSet::from([BlockId(3)]));
    assert_eq!(df[&BlockId(2)], BTreeSet::from([BlockId(3)]));
}

#[test]
fn fig2_get_id_has_entry_body_exit() {
    let g = graph(FIG2, "getID");
    assert_eq!(g.blocks().len(), 3);
    let b = g.blocks();
    assert_eq!(b[0].successors(), &[BlockId(2), BlockId(1)]);
    assert_eq!(b[1].successors(), &[BlockId(2)]);
    assert!(b[2].successors().is_empty());
    let ps = phis(&g);
    assert_eq!(ps.len(), 1);
    assert_eq!(ps[0].ty, IrType::Str);
    assert_eq!(ps[0].block(), BlockId(2));
}

#[test]
fn loop_counter_gets_header_phi_with_init_and_back_edge() {
    let g = graph(
        "class A
  method m(int) -> int regs=3
    const-int v1, 0
    const-int v2, 1
  head:
    if-lt v0, v1, out
    add v1, v1, v2
    goto head
  out:
    return v1
",
        "m",
    );
    let ps = phis(&g);
    assert_eq!(ps.len(), 1);
    let phi = ps[0];
    let header = g.block(phi.block());
    assert_eq!(header.predecessors().len(), 2);
    let init = g.instr(phi.inputs()[0]);
    let back = g.instr(phi.inputs()[1]);
    assert_eq!(init.kind, InstrKind::ConstInt(0));
    assert_eq!(back.kind, InstrKind::Add);
    assert_eq!(back.inputs()[0], phi.id);
}

#[test]
fn branch_to_first_instruction_gets_a_preheader() {
    let g = graph(
        "class A
  method m(int) -> void regs=2
  top:
    const-int v1, 1
    sub v0, v0, v1
    if-lt v1, v0, top
    return-void
",
        "m",
    );
    assert!(g.block(BlockId(0)).predecessors().is_empty());
    assert_eq!(g.block(BlockId(0)).successors(), &[BlockId(1)]);
    assert_eq!(phis(&g).len(), 1);
}

#[test]
fn unreachable_code_is_dropped() {
    let g = graph(
        "class A\n  method m() -> void regs=1\n    return-void\n  dead:\n    const-int v0, 1\n    goto dead\n",
        "m",
    );
    assert_eq!(g.blocks().len(), 1);
    assert_eq!(g.instruction_count(), 1);
}

#[test]
fn moves_are_resolved_away() {
    let g = graph(
        "class A\n  method m(str) -> str regs=3\n    move v1, v0\n    move v2, v1\n    return v2\n",
        "m",
    );
    assert_eq!(count(&g, |k| *k == InstrKind::Move), 0);
    let ret = g.instructions().find(|i| i.kind == InstrKind::Return).unwrap();
    assert!(matches!(g.instr(ret.inputs()[0]).kind, InstrKind::Param(0)));
}

#[test]
fn use_without_reaching_definition_names_register_and_pc() {
    let text = "method A.m()->void regs=1 next=2 pre-ssa
block 0 preds=[] succs=[]
  0: Print void [v0] pc=0
  1: ReturnVoid void [] pc=1
end
";
    let g = parse_dump(text).unwrap().remove(0);
    let e = ssa_convert(g).unwrap_err();
    assert_eq!(e, SsaError::UndefinedRegister { reg: Reg(0), pc: Some(0) });
    assert!(e.to_string().contains("v0") && e.to_string().contains("index 0"));
}

#[test]
fn counting_visitor_on_empty_body() {
    let mut g = graph("class A\n  method m(int, str) -> void regs=2\n    return-void\n", "m");
    let mut n = 0usize;
    visit(&mut g, &mut |_: &HGraph, _: &HInstruction, _: &mut Vec<Edit>| n += 1).unwrap();
    assert_eq!(n, 3);
}

#[test]
fn invoke_collector_on_fig2() {
    let p = program(FIG2);
    let mut found = BTreeSet::new();
    for (sig, m) in p.methods() {
        let mut g = compile_method(&p, &sig, m).unwrap();
        visit(&mut g, &mut |_: &HGraph, i: &HInstruction, _: &mut Vec<Edit>| {
            if let InstrKind::Invoke { callee, .. } = &i.kind {
                found.insert(callee.method.to_string());
            }
        })
        .unwrap();
    }
    let want: BTreeSet<String> = ["rt::Telephony.getDeviceId", "Example.prefixID", "Example.getID", "rt::Log.d"]
        .map(String::from)
        .into();
    assert_eq!(found, want);
}

#[test]
fn queued_insertions_apply_after_traversal() {
    let mut g = graph(
        "class A\n  method m(int, int) -> int regs=3\n    div v2, v0, v1\n    div v2, v2, v1\n    return v2\n",
        "m",
    );
    let before = g.instruction_count();
    let mut seen = 0;
    visit(&mut g, &mut |_: &HGraph, i: &HInstruction, edits: &mut Vec<Edit>| {
        seen += 1;
        if i.kind == InstrKind::Div {
            edits.push(Edit::InsertBefore {
                anchor: i.id,
                instr: NewInstr::new(InstrKind::Trace("div".into()), IrType::Void, vec![]),
            });
        }
    })
    .unwrap();
    assert_eq!(seen, before);
    assert_eq!(g.instruction_count(), before + 2);
    assert_eq!(audit(&g), vec![]);
    assert_eq!(g.edit_stats().inserted, 2);
}

#[test]
fn mutation_api_keeps_def_use_consistent() {
    let mut g = graph(
        "class A\n  method m(int) -> int regs=2\n    const-int v1, 1\n    add v1, v0, v1\n    return v0\n",
        "m",
    );
    let first = g.next_instruction_id();
    let param = g.params().next().unwrap().id;
    let t = g
        .insert_after(param, NewInstr::new(InstrKind::Trace("A.m".into()), IrType::Void, vec![]))
        .unwrap();
    assert_eq!(t, InstrId(first));
    assert_eq!(audit(&g), vec![]);

    let add = g.instructions().find(|i| i.kind == InstrKind::Add).unwrap().id;
    let c1 = g.instr(add).inputs()[1];
    g.remove(add).unwrap();
    assert!(!g.contains(add));
    assert_eq!(audit(&g), vec![]);
    assert!(g.instr(c1).uses().is_empty());

    let ret = g.instructions().find(|i| i.kind == InstrKind::Return).unwrap().id;
    let pop = g
        .insert_before(ret, NewInstr::new(InstrKind::TagPop, IrType::Tag, vec![]))
        .unwrap();
    let nv = g
        .insert_after(pop, NewInstr::new(InstrKind::ConstInt(7), IrType::Int, vec![]))
        .unwrap();
    assert!(nv.0 > pop.0);
    g.replace_input(ret, 0, nv).unwrap();
    assert!(g.instr(param).uses().is_empty());
    assert_eq!(g.instr(nv).uses().len(), 1);
    assert_eq!(audit(&g), vec![]);

    let err = g.remove(nv).unwrap_err();
    assert!(matches!(err, MutateError::HasUses { id, ref uses } if id == nv && uses.len() == 1 && uses[0].user == ret));
    assert!(matches!(g.insert_after(ret, NewInstr::new(InstrKind::Goto, IrType::Void, vec![])), Err(MutateError::AfterTerminator(_))));
}

#[test]
fn phi_ordering_is_enforced() {
    let mut g = graph(DIAMOND, "m");
    let phi = phis(&g)[0].id;
    let r = g.insert_before(phi, NewInstr::new(InstrKind::TagPop, IrType::Tag, vec![]));
    assert!(matches!(r, Err(MutateError::PhiOrder { .. })));
    assert_eq!(audit(&g), vec![]);
}

#[test]
fn audit_reports_broken_graphs() {
    let typed = "method A.m(int)->int regs=1 next=3 ssa
block 0 preds=[] succs=[]
  0: Param int [] index=0
  1: Add str [0,0]
  2: Return void [0]
end
";
    let v = audit(&parse_dump(typed).unwrap()[0]);
    assert_eq!(v.len(), 1, "{v:?}");
    assert!(v[0].message.contains("result type"));
    let shape = "method A.m(int)->int regs=1 next=3 ssa
block 0 preds=[] succs=[]
  0: Param int [] index=0
  1: Return void [2]
  2: Add int [0,0]
end
";
    let v = audit(&parse_dump(shape).unwrap()[0]);
    assert!(v.iter().any(|x| x.message.contains("terminator in the middle")), "{v:?}");
    assert!(v.iter().any(|x| x.message.contains("does not end in a terminator")), "{v:?}");
}

#[test]
fn dump_is_deterministic_and_parses_back() {
    let p = program(FIG2);
    for (sig, m) in p.methods() {
        let pre = build_graph(&p, &sig, m);
        let text = dump(&pre);
        let back = parse_dump(&text).unwrap().remove(0);
        assert_eq!(dump(&back), text);
        assert_eq!(audit(&back), vec![]);

        let g = ssa_convert(pre).unwrap();
        let text = dump(&g);
        assert_eq!(text, dump(&compile_method(&p, &sig, m).unwrap()));
        let back = parse_dump(&text).unwrap().remove(0);
        assert_eq!(dump(&back), text);
        assert_eq!(back, g);
    }
}

#[test]
fn dump_escapes_strings() {
    let g = graph(
        "class A\n  method m() -> str regs=1\n    const-str v0, \"a \\\"b\\\" c\\n\"\n    return v0\n",
        "m",
    );
    let text = dump(&g);
    assert!(text.contains(r#"value="a \"b\" c\n""#), "{text}");
    assert_eq!(parse_dump(&text).unwrap()[0], g);
}

// ----- brute-force oracles -----

fn reachable_without(succs: &[Vec<usize>], removed: Option<usize>) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    if removed == Some(0) {
        return seen;
    }
    let mut work = vec![0];
    seen.insert(0);
    while let Some(b) = work.pop() {
        for &s in &succs[b] {
            if Some(s) != removed && seen.insert(s) {
                work.push(s);
            }
        }
    }
    seen
}

/// dom(b) by deletion: d dominates b iff removing d disconnects b.
fn brute_dominators(succs: &[Vec<usize>]) -> Vec<BTreeSet<usize>> {
    let reach = reachable_without(succs, None);
    (0..succs.len())
        .map(|b| {
            if !reach.contains(&b) {
                return BTreeSet::new();
            }
            reach
                .iter()
                .copied()
                .filter(|&d| d == b || !reachable_without(succs, Some(d)).contains(&b))
                .collect()
        })
        .collect()
}

fn brute_idom(doms: &[BTreeSet<usize>]) -> Vec<Option<usize>> {
    (0..doms.len())
        .map(|b| {
            if doms[b].is_empty() {
                return None;
            }
            if b == 0 {
                return Some(0);
            }
            doms[b]
                .iter()
                .copied()
                .filter(|&d| d != b)
                .find(|&d| doms[b].iter().all(|&e| e == b || doms[d].contains(&e)))
        })
        .collect()
}

fn brute_frontier(succs: &[Vec<usize>], doms: &[BTreeSet<usize>]) -> Vec<BTreeSet<usize>> {
    let n = succs.len();
    (0..n)
        .map(|x| {
            if doms[x].is_empty() {
                return BTreeSet::new();
            }
            (0..n)
                .filter(|&y| {
                    let sdom = y != x && doms[y].contains(&x);
                    !sdom
                        && (0..n).any(|p| !doms[p].is_empty() && succs[p].contains(&y) && doms[p].contains(&x))
                })
                .collect()
        })
        .collect()
}

fn cfg() -> impl Strategy<Value = Vec<Vec<usize>>> {
    (1usize..=8).prop_flat_map(|n| {
        prop::collection::vec(prop::collection::btree_set(0..n, 0..=2), n)
            .prop_map(|v| v.into_iter().map(|s| s.into_iter().collect()).collect())
    })
}

proptest! {
    #[test]
    fn dominators_match_brute_force(succs in cfg()) {
        let doms = brute_dominators(&succs);
        let idom = dom::immediate_dominators(&succs, 0);
        prop_assert_eq!(&idom, &brute_idom(&doms));
        let df = dom::dominance_frontiers(&succs, &idom, 0);
        prop_assert_eq!(df, brute_frontier(&succs, &doms));
    }
}

#[derive(Debug, Clone)]
enum Op {
    Const(u16, i64),
    Add(u16, u16, u16),
    Print(u16),
    Move(u16, u16),
}

#[derive(Debug, Clone)]
enum Term {
    Fall,
    Goto(usize),
    IfLt(u16, u16, usize),
    Return,
}

const REGS: u16 = 3;

fn op() -> impl Strategy<Value = Op> {
    let r = 0..REGS;
    prop_oneof![
        (r.clone(), -3i64..3).prop_map(|(d, v)| Op::Const(d, v)),
        (r.clone(), r.clone(), r.clone()).prop_map(|(d, a, b)| Op::Add(d, a, b)),
        r.clone().prop_map(Op::Print),
        (r.clone(), r).prop_map(|(d, s)| Op::Move(d, s)),
    ]
}

fn method_shape() -> impl Strategy<Value = Vec<(Vec<Op>, Term)>> {
    (1usize..=6).prop_flat_map(|n| {
        let term = prop_oneof![
            Just(Term::Fall),
            (0..n).prop_map(Term::Goto),
            (0..REGS, 0..REGS, 0..n).prop_map(|(a, b, t)| Term::IfLt(a, b, t)),
            Just(Term::Return),
        ];
        prop::collection::vec((prop::collection::vec(op(), 0..4), term), n)
    })
}

fn render(shape: &[(Vec<Op>, Term)]) -> String {
    let mut s = format!("class T\n  method m() -> void regs={REGS}\n");
    for r in 0..REGS {
        s += &format!("    const-int v{r}, {r}\n");
    }
    for (k, (ops, term)) in shape.iter().enumerate() {
        s += &format!("  b{k}:\n");
        for o in ops {
            s += &match o {
                Op::Const(d, v) => format!("    const-int v{d}, {v}\n"),
                Op::Add(d, a, b) => format!("    add v{d}, v{a}, v{b}\n"),
                Op::Print(a) => format!("    print v{a}\n"),
                Op::Move(d, a) => format!("    move v{d}, v{a}\n"),
            };
        }
        let last = k + 1 == shape.len();
        s += &match term {
            Term::Fall if last => "    return-void\n".to_string(),
            Term::Fall if ops.is_empty() => "    print v0\n".to_string(),
            Term::Fall => String::new(),
            Term::Goto(t) => format!("    goto b{t}\n"),
            Term::IfLt(a, b, t) if last => format!("    if-lt v{a}, v{b}, b{t}\n    return-void\n"),
            Term::IfLt(a, b, t) => format!("    if-lt v{a}, v{b}, b{t}\n"),
            Term::Return => "    return-void\n".to_string(),
        };
    }
    s
}

/// Classic iterative reaching definitions over the bytecode. Moves are
/// transparent: a move propagates the definitions reaching its source.
fn reaching_defs(p: &MexProgram) -> Vec<Option<Vec<BTreeSet<usize>>>> {
    let m = &p.classes[0].methods[0];
    let n = m.body.len();
    let succ = |i: usize| -> Vec<usize> {
        let ins = &m.body[i].instr;
        let tgt = ins.branch_target().map(|t| m.label_index(t).unwrap());
        match ins {
            MexInstr::Goto { .. } => vec![tgt.unwrap()],
            MexInstr::If { .. } => vec![i + 1, tgt.unwrap()],
            MexInstr::ReturnVoid | MexInstr::Return { .. } => vec![],
            _ => vec![i + 1],
        }
    };
    let mut state: Vec<Option<Vec<BTreeSet<usize>>>> = vec![None; n];
    state[0] = Some(vec![BTreeSet::new(); REGS as usize]);
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            let Some(mut out) = state[i].clone() else { continue };
            match &m.body[i].instr {
                MexInstr::Move { dst, src } => out[dst.0 as usize] = out[src.0 as usize].clone(),
                ins => {
                    if let Some(d) = ins.def() {
                        out[d.0 as usize] = BTreeSet::from([i]);
                    }
                }
            }
            for s in succ(i) {
                let merged = match &state[s] {
                    None => out.clone(),
                    Some(old) => old.iter().zip(&out).map(|(a, b)| a | b).collect(),
                };
                if state[s].as_ref() != Some(&merged) {
                    state[s] = Some(merged);
                    changed = true;
                }
            }
        }
    }
    state
}

fn expand(g: &HGraph, id: InstrId, seen: &mut BTreeSet<InstrId>, out: &mut BTreeSet<usize>) {
    if !seen.insert(id) {
        return;
    }
    let i = g.instr(id);
    if i.kind.is_phi() {
        for &x in i.inputs() {
            expand(g, x, seen, out);
        }
    } else {
        out.insert(i.pc.unwrap() as usize);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]
    #[test]
    fn ssa_operands_match_reaching_definitions(shape in method_shape()) {
        let src = render(&shape);
        let p = program(&src);
        let g = graph_of(&p, "m");
        let rd = reaching_defs(&p);
        let m = &p.classes[0].methods[0];
        for i in g.instructions() {
            if i.kind.is_phi() || i.inputs().is_empty() {
                continue;
            }
            let pc = i.pc.unwrap() as usize;
            let regs = m.body[pc].instr.uses();
            prop_assert_eq!(regs.len(), i.inputs().len(), "{}", src);
            let state = rd[pc].as_ref().unwrap();
            for (k, r) in regs.iter().enumerate() {
                let mut got = BTreeSet::new();
                expand(&g, i.inputs()[k], &mut BTreeSet::new(), &mut got);
                prop_assert_eq!(&got, &state[r.0 as usize], "pc {} input {}\n{}", pc, k, src);
            }
        }
        for ph in phis(&g) {
            let distinct: BTreeSet<_> = ph.inputs().iter().filter(|&&x| x != ph.id).collect();
            prop_assert!(distinct.len() >= 2);
        }
        let text = dump(&g);
        prop_assert_eq!(dump(&parse_dump(&text).unwrap()[0]), text);
    }
}

#[test]
fn every_fig2_method_builds_and_audits() {
    let p = program(FIG2);
    let graphs: BTreeMap<String, HGraph> = p
        .methods()
        .map(|(s, m)| (s.method.name.clone(), compile_method(&p, &s, m).unwrap()))
        .collect();
    assert_eq!(graphs.len(), 3);
    for g in graphs.values() {
        assert_eq!(audit(g), vec![]);
    }
}
