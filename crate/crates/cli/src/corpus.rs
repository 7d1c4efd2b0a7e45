//! Leak corpus: authored programs with exact expected reports.
//!
//! A case is a directory holding `case.mex`, `case.taint`, an optional
//! `case.perm` and `case.expect`. The expectation file is line based:
//!
//! ```text
//! category field-object
//! args 4 hello
//! out 52
//! leak F.main/0@10:rt::Net.sendInt#0 0x4
//! perm deny CAMERA rt::Camera.open
//! exit 0
//! ```
//!
//! `out` and `perm` lines are ordered; `leak` lines form a multiset.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use artiskit::bundle::Bundle;
use artiskit::mexfmt::{Grant, MexProgram, PermissionPolicy, TaintPolicy};
use artiskit::passes::{run_pipeline, InstrumentationReport, PassPipeline};
use artiskit::runtime::{execute, naive_oracle, RunOptions, RunReport};

use crate::error::{read_file, CliError};
use crate::load;

pub const CATEGORIES: [&str; 7] = [
    "general",
    "aliasing",
    "field-object",
    "interprocedural",
    "threads",
    "control-flow",
    "expected-fail-implicit",
];

pub const EXPECTED_FAIL: &str = "expected-fail-implicit";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Expect {
    pub category: String,
    pub args: Vec<String>,
    pub outs: Vec<String>,
    /// Sorted `(sink id, tag)` pairs.
    pub leaks: Vec<(String, u64)>,
    pub perms: Vec<(Grant, String, String)>,
    pub exit: i32,
}

impl Expect {
    pub fn parse(text: &str) -> Result<Expect, String> {
        let mut e = Expect::default();
        let mut exit = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let (key, rest) = raw.split_once(' ').unwrap_or((raw, ""));
            let words: Vec<&str> = rest.split_whitespace().collect();
            match key {
                "category" => {
                    if !CATEGORIES.contains(&rest.trim()) {
                        return Err(format!("line {line}: unknown category '{}'", rest.trim()));
                    }
                    e.category = rest.trim().to_string();
                }
                "args" => e.args = words.iter().map(|w| w.to_string()).collect(),
                "out" => e.outs.push(rest.to_string()),
                "leak" => {
                    let [sink, tag] = words[..] else {
                        return Err(format!("line {line}: expected 'leak <sink> <0xTAG>'"));
                    };
                    let tag = tag
                        .strip_prefix("0x")
                        .and_then(|h| u64::from_str_radix(h, 16).ok())
                        .ok_or_else(|| format!("line {line}: bad tag '{tag}'"))?;
                    e.leaks.push((sink.to_string(), tag));
                }
                "perm" => {
                    let [verdict, permission, callee] = words[..] else {
                        return Err(format!("line {line}: expected 'perm <verdict> <permission> <callee>'"));
                    };
                    let verdict =
                        Grant::parse(verdict).ok_or_else(|| format!("line {line}: bad verdict '{verdict}'"))?;
                    e.perms.push((verdict, permission.to_string(), callee.to_string()));
                }
                "exit" => {
                    exit = Some(
                        rest.trim()
                            .parse()
                            .map_err(|_| format!("line {line}: bad exit status '{rest}'"))?,
                    )
                }
                other => return Err(format!("line {line}: unknown key '{other}'")),
            }
        }
        if e.category.is_empty() {
            return Err("missing 'category' line".into());
        }
        e.exit = exit.ok_or("missing 'exit' line")?;
        e.leaks.sort();
        Ok(e)
    }
}

#[derive(Debug, Clone)]
pub struct CorpusCase {
    pub name: String,
    pub dir: PathBuf,
    pub program: MexProgram,
    pub taint: TaintPolicy,
    pub perm: Option<PermissionPolicy>,
    pub expect: Expect,
}

impl CorpusCase {
    pub fn load(dir: &Path) -> Result<CorpusCase, CliError> {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let program = load::verified_program(&dir.join("case.mex"), None)?;
        let taint = load::taint_policy(&dir.join("case.taint"))?;
        let perm_path = dir.join("case.perm");
        let perm = if perm_path.exists() {
            Some(load::perm_policy(&perm_path)?)
        } else {
            None
        };
        let expect_path = dir.join("case.expect");
        let expect = Expect::parse(&read_file(&expect_path)?)
            .map_err(|e| CliError::input("expect", format!("{}: {e}", expect_path.display())))?;
        Ok(CorpusCase {
            name,
            dir: dir.to_path_buf(),
            program,
            taint,
            perm,
            expect,
        })
    }

    pub fn is_expected_fail(&self) -> bool {
        self.expect.category == EXPECTED_FAIL
    }

    /// The case's own pipeline: taint, then perm when the case has a
    /// permission policy.
    pub fn default_passes(&self) -> Vec<&'static str> {
        let mut names = vec!["taint"];
        if self.perm.is_some() {
            names.push("perm");
        }
        names
    }

    pub fn build(&self, names: &[&str]) -> Result<(Bundle, InstrumentationReport), CliError> {
        self.build_with(names, &self.taint, self.perm.as_ref())
    }

    pub fn build_with(
        &self,
        names: &[&str],
        taint: &TaintPolicy,
        perm: Option<&PermissionPolicy>,
    ) -> Result<(Bundle, InstrumentationReport), CliError> {
        let pipeline = PassPipeline::from_names(names, Some(taint), perm)
            .map_err(|e| CliError::input("pipeline", format!("{}: {e}", self.name)))?;
        run_pipeline(&self.program, &pipeline).map_err(|e| CliError::failure("pipeline", format!("{}: {e}", self.name)))
    }

    pub fn run(&self, bundle: &Bundle, opts: RunOptions) -> Result<RunReport, CliError> {
        let opts = RunOptions {
            args: self.expect.args.clone(),
            ..opts
        };
        execute(bundle, &opts).map_err(|e| CliError::input("runtime", format!("{}: {e}", self.name)))
    }

    /// Ground truth from the whole-program shadow-tag oracle; permission
    /// checks still apply so that both runs take the same paths.
    pub fn oracle(&self) -> Result<RunReport, CliError> {
        let names: &[&str] = if self.perm.is_some() { &["perm"] } else { &[] };
        let (bundle, _) = self.build(names)?;
        naive_oracle(&bundle, &self.taint, &self.expect.args)
            .map_err(|e| CliError::input("runtime", format!("{}: {e}", self.name)))
    }
}

/// Loads every case directory under `dir`, sorted by name.
pub fn load_dir(dir: &Path, filter: Option<&str>) -> Result<Vec<CorpusCase>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::input("io", format!("{}: {e}", dir.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("case.mex").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::input("corpus", format!("{}: no cases found", dir.display())));
    }
    let mut cases = Vec::new();
    for d in dirs {
        let case = CorpusCase::load(&d)?;
        if filter.is_none_or(|f| case.expect.category == f) {
            cases.push(case);
        }
    }
    if cases.is_empty() {
        return Err(CliError::input(
            "corpus",
            format!("no cases in category '{}'", filter.unwrap_or_default()),
        ));
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseResult {
    pub name: String,
    pub category: String,
    pub expected_fail: bool,
    pub expected_leaks: usize,
    pub detected: usize,
    pub false_positives: usize,
    pub oracle_match: bool,
    pub mismatches: Vec<String>,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    /// A supported case that mismatches, or an expected-fail case that
    /// reports a false positive.
    pub fn is_failure(&self) -> bool {
        if self.expected_fail {
            self.false_positives > 0 || !self.oracle_match
        } else {
            !self.passed()
        }
    }

    pub fn status(&self) -> &'static str {
        match (self.expected_fail, self.passed()) {
            (false, true) => "PASS",
            (false, false) => "FAIL",
            (true, false) if !self.is_failure() => "XFAIL",
            (true, false) => "FAIL",
            (true, true) => "XPASS",
        }
    }
}

/// Multiset intersection size of two sorted lists.
fn common<T: Ord>(a: &[T], b: &[T]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

pub fn perm_triples(r: &RunReport) -> Vec<(Grant, String, String)> {
    r.perms()
        .into_iter()
        .map(|p| (p.verdict, p.permission, p.callee))
        .collect()
}

/// Compares a run of the case's own pipeline against the expectation and
/// the oracle.
pub fn evaluate(case: &CorpusCase) -> Result<CaseResult, CliError> {
    let (bundle, _) = case.build(&case.default_passes())?;
    let report = case.run(&bundle, RunOptions::default())?;
    let oracle = case.oracle()?;
    let e = &case.expect;
    let leaks = report.leak_multiset();
    let detected = common(&e.leaks, &leaks);
    let mut mismatches = Vec::new();
    if leaks != e.leaks {
        mismatches.push(format!("leaks {leaks:?}, expected {:?}", e.leaks));
    }
    let outs = report.prints();
    if outs != e.outs {
        mismatches.push(format!("prints {outs:?}, expected {:?}", e.outs));
    }
    let perms = perm_triples(&report);
    if perms != e.perms {
        mismatches.push(format!("permission events {perms:?}, expected {:?}", e.perms));
    }
    if report.exit != e.exit {
        mismatches.push(format!(
            "exit {} ({}), expected {}",
            report.exit,
            report.error.as_deref().unwrap_or("no error"),
            e.exit
        ));
    }
    let oracle_match = oracle.leak_multiset() == leaks;
    if !oracle_match {
        mismatches.push(format!("oracle leaks {:?}", oracle.leak_multiset()));
    }
    Ok(CaseResult {
        name: case.name.clone(),
        category: e.category.clone(),
        expected_fail: case.is_expected_fail(),
        expected_leaks: e.leaks.len(),
        detected,
        false_positives: leaks.len() - detected,
        oracle_match,
        mismatches,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoryRow {
    pub cases: usize,
    pub passed: usize,
    pub expected_leaks: usize,
    pub detected: usize,
    pub false_positives: usize,
    pub oracle_matches: usize,
}

pub fn by_category(results: &[CaseResult]) -> BTreeMap<&str, CategoryRow> {
    let mut rows: BTreeMap<&str, CategoryRow> = BTreeMap::new();
    for r in results {
        let row = rows.entry(r.category.as_str()).or_default();
        row.cases += 1;
        row.passed += usize::from(r.passed());
        row.expected_leaks += r.expected_leaks;
        row.detected += r.detected;
        row.false_positives += r.false_positives;
        row.oracle_matches += usize::from(r.oracle_match);
    }
    rows
}

fn pct(n: usize, d: usize) -> String {
    if d == 0 {
        "-".into()
    } else {
        format!("{:.1}%", 100.0 * n as f64 / d as f64)
    }
}

/// Per-category detection table; expected-fail cases get their own block.
pub fn table(results: &[CaseResult]) -> String {
    let rows = by_category(results);
    let mut out = String::new();
    let header = |out: &mut String| {
        let _ = writeln!(
            out,
            "{:<24} {:>5} {:>8} {:>9} {:>8} {:>7}",
            "Category", "Cases", "Leaks", "False+", "Oracle", "Rate"
        );
    };
    let line = |out: &mut String, name: &str, r: &CategoryRow| {
        let _ = writeln!(
            out,
            "{:<24} {:>5} {:>8} {:>9} {:>8} {:>7}",
            name,
            r.cases,
            format!("{}/{}", r.detected, r.expected_leaks),
            r.false_positives,
            format!("{}/{}", r.oracle_matches, r.cases),
            pct(r.passed, r.cases)
        );
    };
    header(&mut out);
    let mut total = CategoryRow::default();
    for cat in CATEGORIES.iter().filter(|c| **c != EXPECTED_FAIL) {
        if let Some(r) = rows.get(cat) {
            line(&mut out, cat, r);
            total.cases += r.cases;
            total.passed += r.passed;
            total.expected_leaks += r.expected_leaks;
            total.detected += r.detected;
            total.false_positives += r.false_positives;
            total.oracle_matches += r.oracle_matches;
        }
    }
    line(&mut out, "total (supported)", &total);
    if let Some(r) = rows.get(EXPECTED_FAIL) {
        out.push('\n');
        header(&mut out);
        line(&mut out, EXPECTED_FAIL, r);
    }
    out
}
