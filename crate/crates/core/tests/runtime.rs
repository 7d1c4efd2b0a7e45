use std::collections::BTreeMap;

use artiskit::bundle::Bundle;
use artiskit::irgraph::{audit, compile_method, InstrKind};
use artiskit::mexfmt::{
    parse_perm_policy, parse_program, parse_taint_policy, verify_program, Grant, MexProgram,
};
use artiskit::passes::{run_pipeline, PassPipeline};
use artiskit::permmod::{find_protected_calls, inject_checks};
use artiskit::runtime::{execute, naive_oracle, RunOptions, RunReport, RuntimeError};

fn program(src: &str) -> MexProgram {
    let p = parse_program(src).unwrap();
    let diags = verify_program(&p);
    assert!(diags.is_empty(), "{diags:?}");
    p
}

fn bundle(src: &str, names: &[&str], taint: &str, perm: &str) -> Bundle {
    let p = program(src);
    let t = parse_taint_policy(taint).unwrap();
    let q = parse_perm_policy(perm).unwrap();
    let pipeline = PassPipeline::from_names(names, Some(&t), Some(&q)).unwrap();
    run_pipeline(&p, &pipeline).unwrap().0
}

fn run(b: &Bundle) -> RunReport {
    execute(b, &RunOptions::default()).unwrap()
}

fn run_args(b: &Bundle, args: &[&str]) -> RunReport {
    let opts = RunOptions {
        args: args.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    execute(b, &opts).unwrap()
}

const WIFI: &str = r#"
entry W.main
class W
  method main() -> void regs=2
    invoke v0, rt::Wifi.isEnabled
    print v0
    invoke v1, rt::Wifi.getConfiguredNetworks
    print v1
    invoke v0, rt::Wifi.isEnabled
    print v0
    return-void
"#;

const WIFI_PERM: &str = "permission rt::Wifi.isEnabled WIFI\npermission rt::Wifi.getConfiguredNetworks WIFI_LIST\ngrant WIFI allow\n";

#[test]
fn perm_sites_are_found_and_guarded() {
    let p = program(WIFI);
    let q = parse_perm_policy(WIFI_PERM).unwrap();
    let (sig, m) = p.methods().next().unwrap();
    let mut g = compile_method(&p, &sig, m).unwrap();
    let sites = find_protected_calls(&g, &q);
    assert_eq!(sites.len(), 3);
    assert_eq!(sites[1].permission, "WIFI_LIST");
    assert_eq!(inject_checks(&mut g, &sites).unwrap(), 3);
    assert_eq!(audit(&g), vec![]);
    let guarded = g
        .instructions()
        .filter(|i| matches!(i.kind, InstrKind::Invoke { guarded: true, .. }))
        .count();
    assert_eq!(guarded, 3);
    assert!(find_protected_calls(&g, &q).is_empty());
}

#[test]
fn deny_skips_the_call_and_substitutes_defaults() {
    let base = run(&bundle(WIFI, &[], "", ""));
    assert_eq!(base.prints(), ["1", "home,office", "1"]);

    let b = bundle(WIFI, &["perm"], "", WIFI_PERM);
    let r = run(&b);
    assert_eq!(r.prints(), ["1", "", "1"]);
    let perms = r.perms();
    assert_eq!(perms.len(), 3);
    assert_eq!(perms[1].verdict, Grant::Deny);
    assert_eq!(perms[1].callee, "rt::Wifi.getConfiguredNetworks");
    assert_eq!(
        r.to_lines().lines().nth(2),
        Some("PERM deny WIFI_LIST rt::Wifi.getConfiguredNetworks")
    );
}

#[test]
fn grant_overrides_change_the_outcome_without_recompiling() {
    let b = bundle(WIFI, &["perm"], "", WIFI_PERM);
    let base = run(&bundle(WIFI, &[], "", ""));
    let opts = RunOptions {
        grants: BTreeMap::from([
            ("WIFI_LIST".to_string(), Grant::Allow),
            ("WIFI".to_string(), Grant::Allow),
        ]),
        ..Default::default()
    };
    let r = execute(&b, &opts).unwrap();
    assert_eq!(r.prints(), base.prints());
    assert!(r.perms().iter().all(|p| p.verdict == Grant::Allow));

    let opts = RunOptions {
        grants: BTreeMap::from([("WIFI".to_string(), Grant::Deny)]),
        ..Default::default()
    };
    assert_eq!(execute(&b, &opts).unwrap().prints(), ["0", "", "0"]);
}

const DENIED_USER_CALL: &str = r#"
entry U.main
class U
  method secret(str) -> str regs=2
    invoke v1, rt::Telephony.getDeviceId
    concat v0, v0, v1
    return v0
  method main() -> void regs=2
    const-str v0, "id:"
    invoke v1, U.secret, v0
    invoke _, rt::Log.d, v1
    return-void
"#;

#[test]
fn denied_user_method_keeps_the_tag_stack_balanced() {
    let taint = "source rt::Telephony.getDeviceId 0x1\nsink rt::Log.d report\n";
    let perm = "permission U.secret SECRET\n";
    for names in [&["taint", "perm"][..], &["perm", "taint"]] {
        let r = run(&bundle(DENIED_USER_CALL, names, taint, perm));
        assert_eq!(r.error, None, "{names:?}");
        assert!(r.leaks().is_empty());
        assert_eq!(r.outbound(), ["rt::Log.d "]);
    }
    let allowed = format!("{perm}grant SECRET allow\n");
    let r = run(&bundle(DENIED_USER_CALL, &["taint", "perm"], taint, &allowed));
    assert_eq!(r.leaks().len(), 1);
}

const OBJECTS: &str = r#"
entry O.main
class Box
  field v: str
  field n: int
class O
  method main() -> void regs=5
    new v0, Box
    move v1, v0
    invoke v2, rt::Contacts.read
    iput v2, v1, Box.v
    const-str v3, "plain"
    new v4, Box
    iput v3, v4, Box.v
    iget v3, v4, Box.v
    invoke _, rt::Net.send, v3
    iget v3, v0, Box.v
    invoke _, rt::Net.send, v3
    return-void
"#;

#[test]
fn field_taint_follows_objects_through_aliases() {
    let taint = "source rt::Contacts.read 0x8\nsink rt::Net.send report\n";
    let b = bundle(OBJECTS, &["taint"], taint, "");
    let r = run(&b);
    assert_eq!(r.error, None);
    assert_eq!(r.leak_multiset(), [("O.main/0@10:rt::Net.send#0".to_string(), 8)]);
    let plain = bundle(OBJECTS, &[], "", "");
    let o = naive_oracle(&plain, &parse_taint_policy(taint).unwrap(), &[]).unwrap();
    assert_eq!(o.leak_multiset(), r.leak_multiset());
    assert_eq!(o.outbound(), r.outbound());
}

const THREADS: &str = r#"
entry T.main
class T
  field static shared: str
  method worker(str) -> void regs=1
    sput v0, T.shared
    return-void
  method main() -> void regs=3
    invoke v0, rt::Telephony.getLine1Number
    spawn v1, T.worker, v0
    join v1
    sget v2, T.shared
    invoke _, rt::Sms.send, v2, v2
    return-void
"#;

#[test]
fn taint_crosses_threads_through_the_shared_field_map() {
    let taint = "source rt::Telephony.getLine1Number 0x2\nsink rt::Sms.send report\n";
    let r = run(&bundle(THREADS, &["taint"], taint, ""));
    assert_eq!(r.error, None);
    assert_eq!(
        r.leak_multiset(),
        [
            ("T.main/0@4:rt::Sms.send#0".to_string(), 2),
            ("T.main/0@4:rt::Sms.send#1".to_string(), 2)
        ]
    );
    let o = naive_oracle(&bundle(THREADS, &[], "", ""), &parse_taint_policy(taint).unwrap(), &[]).unwrap();
    assert_eq!(o.leak_multiset(), r.leak_multiset());
}

#[test]
fn join_errors() {
    let src = "entry J.main\nclass J\n  method w() -> void regs=1\n    return-void\n  method main() -> void regs=2\n    spawn v0, J.w\n    join v0\n    join v0\n    return-void\n";
    let r = run(&bundle(src, &[], "", ""));
    assert_eq!(r.exit, 1);
    assert_eq!(r.error.as_deref(), Some("thread 1 already joined"));

    let src = "entry J.main\nclass J\n  method main() -> void regs=1\n    const-int v0, 7\n    join v0\n    return-void\n";
    let r = run(&bundle(src, &[], "", ""));
    assert_eq!(r.error.as_deref(), Some("join on invalid thread id 7"));
}

#[test]
fn unjoined_threads_finish_before_the_report() {
    let src = "entry J.main\nclass J\n  method w(int) -> void regs=1\n    print v0\n    return-void\n  method main() -> void regs=1\n    const-int v0, 5\n    spawn v0, J.w, v0\n    return-void\n";
    let r = run(&bundle(src, &["taint"], "", ""));
    assert_eq!(r.error, None);
    assert_eq!(r.prints(), ["5"]);
}

#[test]
fn runtime_errors_name_method_and_bytecode_index() {
    let src = "entry E.main\nclass E\n  field n: int\n  method main() -> void regs=2\n    const-int v0, 0\n    const-int v1, 4\n    div v1, v1, v0\n    return-void\n";
    let r = run(&bundle(src, &[], "", ""));
    assert_eq!(r.exit, 1);
    assert_eq!(r.error.as_deref(), Some("division by zero in E.main/0 at bytecode index 2"));

    let src = "entry E.main\nclass E\n  field o: E\n  field n: int\n  method main() -> void regs=2\n    new v0, E\n    iget v0, v0, E.o\n    iget v1, v0, E.n\n    return-void\n";
    let r = run(&bundle(src, &[], "", ""));
    assert_eq!(r.error.as_deref(), Some("null dereference in E.main/0 at bytecode index 2"));
}

#[test]
fn entry_arguments_are_parsed_by_type() {
    let src = "entry A.main\nclass A\n  method main(int, str) -> int regs=2\n    print v1\n    return v0\n";
    let b = bundle(src, &["taint"], "", "");
    let r = run_args(&b, &["41", "hi"]);
    assert_eq!(r.prints(), ["hi"]);
    assert_eq!(r.return_value.as_deref(), Some("41"));
    assert_eq!(
        execute(&b, &RunOptions::default()).unwrap_err(),
        RuntimeError::ArgCount { expected: 2, given: 0 }
    );
    let bad = RunOptions {
        args: vec!["x".into(), "y".into()],
        ..Default::default()
    };
    assert!(matches!(execute(&b, &bad), Err(RuntimeError::BadArg { index: 0, .. })));
}

#[test]
fn oracle_refuses_instrumented_bundles() {
    let b = bundle(THREADS, &["taint"], "", "");
    let t = parse_taint_policy("").unwrap();
    assert_eq!(naive_oracle(&b, &t, &[]).unwrap_err(), RuntimeError::InstrumentedOracle);
}

#[test]
fn oracle_without_policy_flags_nothing() {
    let b = bundle(THREADS, &[], "", "");
    let r = naive_oracle(&b, &parse_taint_policy("").unwrap(), &[]).unwrap();
    assert!(r.leaks().is_empty());
}

#[test]
fn deep_recursion_runs_on_the_large_interpreter_stack() {
    let src = "entry R.main\nclass R\n  method down(int) -> int regs=2\n    const-int v1, 0\n    if-eq v0, v1, done\n    const-int v1, 1\n    sub v0, v0, v1\n    invoke v0, R.down, v0\n  done:\n    return v0\n  method main() -> void regs=1\n    const-int v0, 5000\n    invoke v0, R.down, v0\n    print v0\n    return-void\n";
    let r = run(&bundle(src, &["taint"], "", ""));
    assert_eq!(r.error, None);
    assert_eq!(r.prints(), ["0"]);
}

#[test]
fn report_records_are_self_describing() {
    let taint = "source rt::Telephony.getLine1Number 0x2\nsink rt::Sms.send report\n";
    let r = run(&bundle(THREADS, &["taint"], taint, ""));
    let text = r.to_record_text();
    assert!(text.contains("leak sink=T.main/0@4:rt::Sms.send#0 tag=0x2 thread=0 occurrence=0\n"));
    assert!(text.contains("exit status=0\n"));
    assert!(r.to_lines().starts_with("LEAK T.main/0@4:rt::Sms.send#0 0x2 0\n"));
}
