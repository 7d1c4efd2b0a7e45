use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use artiskit_cli::corpus::{Expect, CATEGORIES};

const FIG2: &str = include_str!("../../core/tests/data/fig2.mex");
const POLICY: &str = "source rt::Telephony.getDeviceId 0x1\nsink rt::Log.d report\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_artiskit"))
}

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn instrument(dir: &Path, extra: &[&str]) -> Output {
    let mex = write(dir, "fig2.mex", FIG2);
    let pol = write(dir, "fig2.taint", POLICY);
    let mut c = bin();
    c.arg("instrument").arg("--in").arg(&mex).arg("--taint-policy").arg(&pol);
    c.args(extra);
    c.output().unwrap()
}

fn error_code(o: &Output) -> String {
    let err = text(&o.stderr);
    let first = err.lines().next().unwrap_or_default().to_string();
    assert!(first.starts_with("ERROR "), "{err}");
    first.split_whitespace().nth(1).unwrap().to_string()
}

#[test]
fn fig2_report_lists_global_and_local_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.bundle");
    let o = instrument(dir.path(), &["--pass", "taint", "--dump-slices", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let report = text(&o.stdout);
    let total = report.split("total\n").nth(1).unwrap();
    assert!(total.contains("GlobalSource=1"));
    assert!(total.contains("GlobalSink=1"));
    let local = |k: &str| -> usize {
        total
            .split_whitespace()
            .find_map(|w| w.strip_prefix(&format!("{k}=")))
            .map_or(0, |n| n.parse().unwrap())
    };
    assert!(local("LSI1") + local("LSI2") + local("LSI3") >= 2);
    assert!(local("LSO1") + local("LSO2") + local("LSO3") >= 2);
    assert!(report.contains("slice Example.leak/0@1:rt::Log.d#0 kind=GlobalSink"));

    let r = bin().args(["run", "--events", "--bundle"]).arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(0));
    assert_eq!(text(&r.stdout), "LEAK Example.leak/0@1:rt::Log.d#0 0x1 0\n");
}

#[test]
fn instrument_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |p: &Path| vec!["--pass".into(), "cf".into(), "--pass".into(), "taint".into(), "--out".into(), p.display().to_string()];
    let oa = instrument(dir.path(), &args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    let ob = instrument(dir.path(), &args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(oa.stdout, ob.stdout);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn identity_pipeline_round_trips_and_dumps_ir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("id.bundle");
    let o = instrument(dir.path(), &["--dump-ir", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(text(&o.stdout).contains("method Example.getID"));
    let r = bin().args(["run", "--bundle"]).arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(0));
    assert!(r.stdout.is_empty());
}

#[test]
fn halt_mode_exits_42() {
    let dir = tempfile::tempdir().unwrap();
    let mex = write(dir.path(), "p.mex", FIG2);
    let pol = write(dir.path(), "p.taint", &POLICY.replace("report", "halt"));
    let out = dir.path().join("h.bundle");
    let o = bin()
        .args(["instrument", "--pass", "taint", "--in"])
        .arg(&mex)
        .arg("--taint-policy")
        .arg(&pol)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success());
    let report = dir.path().join("run.report");
    let r = bin().args(["run", "--bundle"]).arg(&out).arg("--report").arg(&report).output().unwrap();
    assert_eq!(r.status.code(), Some(42));
    let rec = std::fs::read_to_string(&report).unwrap();
    assert!(rec.contains("leak sink=Example.leak/0@1:rt::Log.d#0 tag=0x1"));
    assert!(rec.contains("exit status=42"));
}

const WIFI: &str = "entry W.main\nclass W\n  method main() -> void regs=1\n    invoke v0, rt::Wifi.isEnabled\n    print v0\n    return-void\n";

#[test]
fn grant_flag_overrides_policy_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let mex = write(dir.path(), "w.mex", WIFI);
    let perm = write(dir.path(), "w.perm", "permission rt::Wifi.isEnabled WIFI\n");
    let out = dir.path().join("w.bundle");
    let o = bin()
        .args(["instrument", "--pass", "perm", "--in"])
        .arg(&mex)
        .arg("--perm-policy")
        .arg(&perm)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o.stderr));
    let run = |extra: &[&str]| {
        let o = bin().args(["run", "--events", "--bundle"]).arg(&out).args(extra).output().unwrap();
        text(&o.stdout)
    };
    assert_eq!(run(&[]), "PERM deny WIFI rt::Wifi.isEnabled\nOUT 0\n");
    assert_eq!(run(&["--grant", "WIFI=allow"]), "PERM allow WIFI rt::Wifi.isEnabled\nOUT 1\n");
}

#[test]
fn merge_brings_in_a_companion_library() {
    let dir = tempfile::tempdir().unwrap();
    let app = write(
        dir.path(),
        "app.mex",
        "entry A.main\nclass A\n  method main() -> void regs=1\n    invoke v0, Lib.answer\n    print v0\n    return-void\n",
    );
    let lib = write(dir.path(), "lib.mex", "class Lib\n  method answer() -> int regs=1\n    const-int v0, 42\n    return v0\n");
    let out = dir.path().join("m.bundle");
    let o = bin().arg("instrument").arg("--in").arg(&app).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), "verify");
    let o = bin()
        .arg("instrument")
        .arg("--in")
        .arg(&app)
        .arg("--merge")
        .arg(&lib)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o.stderr));
    let r = bin().args(["run", "--bundle"]).arg(&out).output().unwrap();
    assert_eq!(text(&r.stdout), "42\n");
}

#[test]
fn entry_arguments_follow_the_separator() {
    let dir = tempfile::tempdir().unwrap();
    let mex = write(
        dir.path(),
        "a.mex",
        "entry A.main\nclass A\n  method main(int, str) -> void regs=2\n    print v1\n    print v0\n    return-void\n",
    );
    let out = dir.path().join("a.bundle");
    assert!(bin().arg("instrument").arg("--in").arg(&mex).arg("--out").arg(&out).output().unwrap().status.success());
    let r = bin().args(["run", "--bundle"]).arg(&out).args(["--", "7", "hi"]).output().unwrap();
    assert_eq!(text(&r.stdout), "hi\n7\n");
    let r = bin().args(["run", "--bundle"]).arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(2));
    assert_eq!(error_code(&r), "runtime");
}

#[test]
fn input_errors_exit_2_with_a_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.taint", "sink rt::Log.d sometimes\n");
    let mex = write(dir.path(), "p.mex", FIG2);
    let o = bin()
        .args(["instrument", "--pass", "taint", "--in"])
        .arg(&mex)
        .arg("--taint-policy")
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), "policy");
    assert_eq!(text(&o.stderr).lines().count(), 1);

    let o = bin().args(["run", "--bundle"]).arg(dir.path().join("missing")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), "io");

    let junk = write(dir.path(), "junk.bundle", "not a bundle\n");
    let o = bin().args(["run", "--bundle"]).arg(&junk).output().unwrap();
    assert_eq!(error_code(&o), "bundle");

    let o = bin().args(["instrument", "--pass", "taint", "--in"]).arg(&mex).arg("--out").arg("x").output().unwrap();
    assert_eq!(error_code(&o), "pipeline");

    let o = bin().args(["run", "--grant", "X=maybe", "--bundle", "b"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), "usage");

    let o = bin().arg("launch").output().unwrap();
    assert_eq!(error_code(&o), "usage");
}

#[test]
fn runtime_failures_report_an_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let mex = write(
        dir.path(),
        "d.mex",
        "entry D.main\nclass D\n  method main() -> void regs=2\n    const-int v0, 0\n    div v1, v0, v0\n    return-void\n",
    );
    let out = dir.path().join("d.bundle");
    assert!(bin().arg("instrument").arg("--in").arg(&mex).arg("--out").arg(&out).output().unwrap().status.success());
    let r = bin().args(["run", "--bundle"]).arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(text(&r.stderr), "ERROR runtime division by zero in D.main/0 at bytecode index 1\n");
}

#[test]
fn corpus_passes_and_reports_expected_failures_apart() {
    let o = bin().arg("corpus").arg("--dir").arg(corpus_dir()).output().unwrap();
    let out = text(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{out}");
    assert!(out.contains("total (supported)"));
    let xfail = out.lines().filter(|l| l.starts_with("XFAIL")).count();
    assert_eq!(xfail, 2);
    assert!(!out.lines().any(|l| l.starts_with("FAIL")));
    let tail = out.split("total (supported)").nth(1).unwrap();
    assert!(tail.contains("expected-fail-implicit"));
}

#[test]
fn corpus_filter_selects_one_category() {
    let o = bin()
        .arg("corpus")
        .arg("--dir")
        .arg(corpus_dir())
        .args(["--filter", "threads"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let out = text(&o.stdout);
    let cases: Vec<&str> = out.lines().filter(|l| l.starts_with("PASS")).collect();
    assert_eq!(cases.len(), 4);
    assert!(cases.iter().all(|l| l.contains("threads")));
}

#[test]
fn corpus_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().arg("corpus").arg("--dir").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), "corpus");

    let case = dir.path().join("wrong");
    std::fs::create_dir(&case).unwrap();
    write(&case, "case.mex", FIG2);
    write(&case, "case.taint", POLICY);
    write(&case, "case.expect", "category general\nexit 0\n");
    let o = bin().arg("corpus").arg("--dir").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stdout).starts_with("FAIL"));
    assert_eq!(error_code(&o), "corpus");
}

#[test]
fn expect_files_parse() {
    let e = Expect::parse("category threads\nargs 1 x\nout a b\nout \nleak S#0 0x10\nleak A#0 0x1\nperm deny P rt::Camera.open\nexit 42\n").unwrap();
    assert_eq!(e.category, "threads");
    assert_eq!(e.args, ["1", "x"]);
    assert_eq!(e.outs, ["a b", ""]);
    assert_eq!(e.leaks, [("A#0".to_string(), 1), ("S#0".to_string(), 16)]);
    assert_eq!(e.perms.len(), 1);
    assert_eq!(e.exit, 42);
    assert!(Expect::parse("category nope\nexit 0\n").is_err());
    assert!(Expect::parse("category general\n").is_err());
    assert!(Expect::parse("category general\nleak X 12\nexit 0\n").is_err());
    assert_eq!(CATEGORIES.len(), 7);
}

#[test]
fn bench_prints_ratios_and_absolute_times() {
    let o = bin()
        .args(["bench", "--suite", "micro", "--runs", "20", "--trip", "50"])
        .env("ARTISKIT_SEED", "7")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    for suite in ["cpu-loop", "call-heavy", "field-heavy", "perm-cold"] {
        assert!(out.lines().any(|l| l.starts_with(suite)), "{out}");
    }
    assert!(out.contains("Baseline (us)") && out.contains("Ratio"));

    let o = bin().args(["bench", "--suite", "macro"]).output().unwrap();
    assert_eq!(error_code(&o), "usage");
    let o = bin().args(["bench", "--runs", "5"]).env("ARTISKIT_SEED", "x").output().unwrap();
    assert_eq!(error_code(&o), "usage");
}
