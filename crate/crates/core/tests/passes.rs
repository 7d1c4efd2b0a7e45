use artiskit::irgraph::{audit, compile_method, HGraph, InstrKind};
use artiskit::mexfmt::{parse_program, parse_taint_policy, verify_program, MexProgram};
use artiskit::passes::{const_fold, dce, run_pipeline, tracer, PassPipeline, PipelineError};
use artiskit::runtime::{execute, RunOptions, RunReport};
use proptest::prelude::*;

const FIG2: &str = include_str!("data/fig2.mex");

fn program(src: &str) -> MexProgram {
    let p = parse_program(src).unwrap();
    let diags = verify_program(&p);
    assert!(diags.is_empty(), "{diags:?}\n{src}");
    p
}

fn graph(src: &str, name: &str) -> HGraph {
    let p = program(src);
    let (sig, m) = p.methods().find(|(s, _)| s.method.name == name).unwrap();
    compile_method(&p, &sig, m).unwrap()
}

fn count(g: &HGraph, pred: impl Fn(&InstrKind) -> bool) -> usize {
    g.instructions().filter(|i| pred(&i.kind)).count()
}

fn run(p: &MexProgram, names: &[&str]) -> RunReport {
    let t = parse_taint_policy("source rt::Telephony.getDeviceId 0x1\nsink rt::Log.d report\n").unwrap();
    let pipeline = PassPipeline::from_names(names, Some(&t), None).unwrap();
    let (bundle, _) = run_pipeline(p, &pipeline).unwrap();
    for g in &bundle.graphs {
        assert_eq!(audit(g), vec![]);
    }
    execute(&bundle, &RunOptions::default()).unwrap()
}

fn method(body: &str) -> String {
    format!("entry A.main\nclass A\n  method main() -> void regs=4\n{body}    return-void\n")
}

#[test]
fn folds_constant_arithmetic() {
    let mut g = graph(
        &method("    const-int v0, 1\n    const-int v1, 2\n    add v2, v0, v1\n    print v2\n"),
        "main",
    );
    assert_eq!(const_fold(&mut g), 1);
    assert_eq!(count(&g, |k| *k == InstrKind::ConstInt(3)), 1);
    assert_eq!(count(&g, |k| *k == InstrKind::Add), 0);
    assert_eq!(audit(&g), vec![]);
}

#[test]
fn no_algebraic_identities() {
    let src = "entry A.f\nclass A\n  method f(int) -> int regs=2\n    const-int v1, 0\n    add v0, v0, v1\n    return v0\n";
    let mut g = graph(src, "f");
    assert_eq!(const_fold(&mut g), 0);
    assert_eq!(count(&g, |k| *k == InstrKind::Add), 1);
}

#[test]
fn division_by_constant_zero_is_not_folded() {
    let body = "    const-int v0, 7\n    const-int v1, 0\n    div v2, v0, v1\n    print v2\n";
    let mut g = graph(&method(body), "main");
    assert_eq!(const_fold(&mut g), 0);
    let body = "    const-int v0, 7\n    const-int v1, 2\n    div v2, v0, v1\n    print v2\n";
    let mut g = graph(&method(body), "main");
    assert_eq!(const_fold(&mut g), 1);
    assert_eq!(count(&g, |k| *k == InstrKind::ConstInt(3)), 1);
}

#[test]
fn folds_concat_chains_to_a_fixpoint() {
    let body = "    const-str v0, \"a\"\n    const-str v1, \"b\"\n    concat v2, v0, v1\n    concat v3, v2, v2\n    print v3\n";
    let mut g = graph(&method(body), "main");
    assert_eq!(const_fold(&mut g), 2);
    assert_eq!(count(&g, |k| *k == InstrKind::ConstStr("abab".into())), 1);
}

#[test]
fn cf_then_dce_removes_dead_arithmetic_entirely() {
    let body = "    const-int v0, 2\n    const-int v1, 3\n    add v2, v0, v1\n";
    let p = program(&method(body));
    let (bundle, _) = run_pipeline(&p, &PassPipeline::from_names(&["cf", "dce"], None, None).unwrap()).unwrap();
    let g = &bundle.graphs[0];
    assert_eq!(count(g, |k| *k == InstrKind::Add), 0);
    assert_eq!(count(g, |k| *k == InstrKind::ConstInt(5)), 0);
    assert_eq!(g.instruction_count(), 1);
}

#[test]
fn dce_keeps_calls_with_unused_results() {
    let body = "    invoke v0, rt::Wifi.isEnabled\n    const-int v1, 4\n";
    let mut g = graph(&method(body), "main");
    assert_eq!(dce(&mut g), 1);
    assert_eq!(count(&g, |k| matches!(k, InstrKind::Invoke { .. })), 1);
}

#[test]
fn dce_removes_dead_phi_cycles() {
    let src = "entry A.main\nclass A\n  method main() -> void regs=4\n    const-int v0, 0\n    const-int v1, 3\n    const-int v2, 1\n    const-int v3, 9\n  head:\n    if-lt v1, v0, done\n    add v0, v0, v2\n    add v3, v3, v2\n    goto head\n  done:\n    return-void\n";
    let mut g = graph(src, "main");
    let before = g.instruction_count();
    let removed = dce(&mut g);
    assert_eq!(removed, 3);
    assert_eq!(count(&g, |k| k.is_phi()), 1);
    assert_eq!(g.instruction_count(), before - removed);
    assert_eq!(audit(&g), vec![]);
}

#[test]
fn tracer_marks_each_method_once() {
    let p = program(FIG2);
    let (bundle, report) = run_pipeline(&p, &PassPipeline::from_names(&["tracer"], None, None).unwrap()).unwrap();
    for g in &bundle.graphs {
        assert_eq!(count(g, |k| matches!(k, InstrKind::Trace(_))), 1);
        let first = g.block(g.entry_block()).instructions()[g.params().count()];
        assert!(matches!(g.instr(first).kind, InstrKind::Trace(_)));
    }
    assert_eq!(report.totals()[0].targets["traced"], 3);
    let r = execute(&bundle, &RunOptions::default()).unwrap();
    assert_eq!(r.traces(), ["Example.leak", "Example.getID", "Example.prefixID"]);
}

#[test]
fn tracer_goes_after_parameters() {
    let mut g = graph(&FIG2.to_string(), "prefixID");
    tracer(&mut g);
    let entry = g.block(g.entry_block()).instructions();
    assert!(matches!(g.instr(entry[0]).kind, InstrKind::Param(0)));
    assert!(matches!(g.instr(entry[1]).kind, InstrKind::Trace(_)));
}

#[test]
fn report_counts_equal_graph_deltas() {
    let p = program(FIG2);
    let t = parse_taint_policy("source rt::Telephony.getDeviceId 0x1\nsink rt::Log.d report\n").unwrap();
    let pipeline = PassPipeline::from_names(&["cf", "dce", "taint", "tracer"], Some(&t), None).unwrap();
    let (bundle, report) = run_pipeline(&p, &pipeline).unwrap();
    for (g, m) in bundle.graphs.iter().zip(&report.methods) {
        assert_eq!(g.method.key().to_string(), m.method);
        let (sig, mm) = p.methods().find(|(s, _)| s.key() == g.method.key()).unwrap();
        let base = compile_method(&p, &sig, mm).unwrap().instruction_count();
        let inserted: usize = m.passes.iter().map(|r| r.edits.inserted).sum();
        let removed: usize = m.passes.iter().map(|r| r.edits.removed).sum();
        assert_eq!(base + inserted - removed, g.instruction_count(), "{}", m.method);
    }
    let text = report.to_text(true);
    assert!(text.contains("GlobalSource=1"));
    assert!(text.contains("slice Example.leak/0@1:rt::Log.d#0 kind=GlobalSink"));
}

#[test]
fn pipeline_names_and_errors() {
    assert_eq!(
        PassPipeline::from_names(&["zap"], None, None),
        Err(PipelineError::UnknownPass("zap".into()))
    );
    assert_eq!(
        PassPipeline::from_names(&["taint"], None, None),
        Err(PipelineError::MissingPolicy("taint"))
    );
    let p = PassPipeline::standard(None, None);
    assert_eq!(p.names(), ["const-fold", "dce"]);
}

#[test]
fn pipeline_output_is_deterministic() {
    let p = program(FIG2);
    let t = parse_taint_policy("source rt::Telephony.getDeviceId 0x1\nsink rt::Log.d report\n").unwrap();
    let pipeline = PassPipeline::standard(Some(&t), None);
    let a = run_pipeline(&p, &pipeline).unwrap();
    let b = run_pipeline(&p, &pipeline).unwrap();
    assert_eq!(a.0.to_text(), b.0.to_text());
    assert_eq!(a.1, b.1);
}

#[test]
fn bundle_text_round_trips() {
    let p = program(FIG2);
    let t = parse_taint_policy("source rt::Telephony.getDeviceId 0x1\nsink rt::Log.d halt\n").unwrap();
    let (bundle, _) = run_pipeline(&p, &PassPipeline::standard(Some(&t), None)).unwrap();
    let text = bundle.to_text();
    let back = artiskit::bundle::Bundle::parse(&text).unwrap();
    assert_eq!(back.to_text(), text);
    assert_eq!(back.taint, Some(t));
    assert_eq!(execute(&back, &RunOptions::default()).unwrap().exit, 42);
}

/// One generated instruction: opcode selector plus operands.
type Gen = (u8, u8, u8, u8, i8);

/// Straight-line and forward-branching arithmetic over 4 registers.
fn render(ops: &[Gen]) -> String {
    let mut body = String::new();
    for r in 0..4 {
        body += &format!("    const-int v{r}, {}\n", r + 1);
    }
    let mut pending: Vec<(usize, String)> = Vec::new();
    for (k, &(op, a, b, c, imm)) in ops.iter().enumerate() {
        while let Some(pos) = pending.iter().position(|(at, _)| *at == k) {
            body += &format!("  {}:\n", pending.remove(pos).1);
        }
        let (a, b, c) = (a % 4, b % 4, c % 4);
        body += &match op % 8 {
            0 => format!("    const-int v{a}, {imm}\n"),
            1 => format!("    add v{a}, v{b}, v{c}\n"),
            2 => format!("    sub v{a}, v{b}, v{c}\n"),
            3 => format!("    mul v{a}, v{b}, v{c}\n"),
            4 => format!("    div v{a}, v{b}, v{c}\n"),
            5 => format!("    print v{a}\n"),
            _ => {
                let at = k + 2 + (imm.unsigned_abs() as usize % 3);
                let label = match pending.iter().find(|(t, _)| *t == at) {
                    Some((_, l)) => l.clone(),
                    None => {
                        pending.push((at, format!("l{k}")));
                        format!("l{k}")
                    }
                };
                let cmp = if op % 8 == 6 { "lt" } else { "ne" };
                format!("    if-{cmp} v{b}, v{c}, {label}\n")
            }
        };
    }
    pending.sort();
    for (k, (_, label)) in pending.iter().enumerate() {
        body += &format!("  {label}:\n    print v{}\n", k % 4);
    }
    for r in 0..4 {
        body += &format!("    print v{r}\n");
    }
    method(&body)
}

fn observable(r: &RunReport) -> (Vec<String>, i32) {
    (r.prints(), r.exit)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn optimizations_preserve_output_and_are_idempotent(ops in prop::collection::vec(any::<Gen>(), 1..24)) {
        let src = render(&ops);
        let p = program(&src);
        let base = run(&p, &[]);
        for names in [&["cf"][..], &["dce"], &["cf", "dce"], &["taint", "cf", "dce"], &["tracer"]] {
            prop_assert_eq!(observable(&run(&p, names)), observable(&base), "{:?}\n{}", names, src);
        }
        let (sig, m) = p.methods().next().unwrap();
        let mut g = compile_method(&p, &sig, m).unwrap();
        const_fold(&mut g);
        dce(&mut g);
        let once = g.edit_stats();
        prop_assert_eq!(const_fold(&mut g), 0);
        prop_assert_eq!(dce(&mut g), 0);
        prop_assert_eq!(g.edit_stats(), once);
    }
}
