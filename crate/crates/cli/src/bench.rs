//! Paired baseline/instrumented microbenchmarks.

use std::fmt::Write as _;
use std::time::Duration;

use artiskit::bundle::Bundle;
use artiskit::mexfmt::{parse_perm_policy, parse_program, parse_taint_policy};
use artiskit::passes::{run_pipeline, PassPipeline};
use artiskit::runtime::{execute, RunOptions};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::CliError;

const TAINT: &str = "source rt::Location.getLatitude 0x4\nsink rt::Net.sendInt report\n";
const PERM: &str = "permission rt::Camera.open CAMERA\ngrant CAMERA allow\n";

const CPU_LOOP: &str = r#"
entry B.main
class B
  method main(int) -> void regs=5
    invoke v1, rt::Location.getLatitude
    const-int v2, 0
    const-int v3, 1
  head:
    if-eq v2, v0, done
    add v1, v1, v2
    mul v4, v2, v3
    add v1, v1, v4
    add v2, v2, v3
    goto head
  done:
    invoke _, rt::Net.sendInt, v1
    return-void
"#;

const CALL_HEAVY: &str = r#"
entry B.main
class B
  method step(int, int) -> int regs=2
    add v0, v0, v1
    return v0
  method main(int) -> void regs=4
    invoke v1, rt::Location.getLatitude
    const-int v2, 0
    const-int v3, 1
  head:
    if-eq v2, v0, done
    invoke v1, B.step, v1, v2
    add v2, v2, v3
    goto head
  done:
    invoke _, rt::Net.sendInt, v1
    return-void
"#;

const FIELD_HEAVY: &str = r#"
entry B.main
class Acc
  field total: int
class B
  method main(int) -> void regs=5
    new v4, Acc
    invoke v1, rt::Location.getLatitude
    iput v1, v4, Acc.total
    const-int v2, 0
    const-int v3, 1
  head:
    if-eq v2, v0, done
    iget v1, v4, Acc.total
    add v1, v1, v2
    iput v1, v4, Acc.total
    add v2, v2, v3
    goto head
  done:
    iget v1, v4, Acc.total
    invoke _, rt::Net.sendInt, v1
    return-void
"#;

const PERM_COLD: &str = r#"
entry B.main
class B
  method main(int) -> void regs=5
    const-int v1, 0
    const-int v2, 0
    const-int v3, 1
    const-int v4, -1
  head:
    if-eq v2, v0, done
    if-eq v2, v4, cold
  back:
    add v1, v1, v2
    add v2, v2, v3
    goto head
  cold:
    invoke _, rt::Camera.open
    goto back
  done:
    print v1
    return-void
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Suite {
    pub name: &'static str,
    pub module: &'static str,
    source: &'static str,
}

pub const MICRO: [Suite; 4] = [
    Suite { name: "cpu-loop", module: "taint", source: CPU_LOOP },
    Suite { name: "call-heavy", module: "taint", source: CALL_HEAVY },
    Suite { name: "field-heavy", module: "taint", source: FIELD_HEAVY },
    Suite { name: "perm-cold", module: "perm", source: PERM_COLD },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    /// Paired runs per suite.
    pub runs: usize,
    /// Loop trip count inside each benchmark program.
    pub trip: u32,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            runs: 1000,
            trip: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub suite: &'static str,
    pub module: &'static str,
    pub runs: usize,
    pub baseline: Duration,
    pub instrumented: Duration,
}

impl BenchRow {
    pub fn ratio(&self) -> f64 {
        self.instrumented.as_secs_f64() / self.baseline.as_secs_f64()
    }
}

fn build(source: &str, module: Option<&str>) -> Result<Bundle, CliError> {
    let p = parse_program(source).map_err(|e| CliError::failure("bench", e.to_string()))?;
    let taint = parse_taint_policy(TAINT).expect("benchmark taint policy parses");
    let perm = parse_perm_policy(PERM).expect("benchmark perm policy parses");
    let names: Vec<&str> = module.into_iter().collect();
    let pipeline = PassPipeline::from_names(&names, Some(&taint), Some(&perm))
        .map_err(|e| CliError::failure("bench", e.to_string()))?;
    Ok(run_pipeline(&p, &pipeline)
        .map_err(|e| CliError::failure("bench", e.to_string()))?
        .0)
}

/// Mean with the lowest and highest tenth dropped.
fn trimmed_mean(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    let cut = xs.len() / 10;
    let kept = &xs[cut..xs.len() - cut];
    kept.iter().sum::<Duration>() / kept.len() as u32
}

/// Times baseline and instrumented builds in randomly ordered pairs.
pub fn run_suite(suite: &Suite, cfg: &BenchConfig) -> Result<BenchRow, CliError> {
    if cfg.runs == 0 {
        return Err(CliError::input("bench", "at least one run is required"));
    }
    let base = build(suite.source, None)?;
    let inst = build(suite.source, Some(suite.module))?;
    let opts = RunOptions {
        args: vec![cfg.trip.to_string()],
        ..Default::default()
    };
    let once = |b: &Bundle| -> Result<Duration, CliError> {
        let r = execute(b, &opts).map_err(|e| CliError::failure("bench", e.to_string()))?;
        match r.error {
            Some(e) => Err(CliError::failure("bench", format!("{}: {e}", suite.name))),
            None => Ok(r.wall),
        }
    };
    for _ in 0..3 {
        once(&base)?;
        once(&inst)?;
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut tb = Vec::with_capacity(cfg.runs);
    let mut ti = Vec::with_capacity(cfg.runs);
    for _ in 0..cfg.runs {
        if rng.gen::<bool>() {
            tb.push(once(&base)?);
            ti.push(once(&inst)?);
        } else {
            ti.push(once(&inst)?);
            tb.push(once(&base)?);
        }
    }
    Ok(BenchRow {
        suite: suite.name,
        module: suite.module,
        runs: cfg.runs,
        baseline: trimmed_mean(tb),
        instrumented: trimmed_mean(ti),
    })
}

pub fn run_micro(cfg: &BenchConfig) -> Result<Vec<BenchRow>, CliError> {
    MICRO.iter().map(|s| run_suite(s, cfg)).collect()
}

pub fn table(rows: &[BenchRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<6} {:>6} {:>14} {:>18} {:>7} {:>9}",
        "Suite", "Module", "Runs", "Baseline (us)", "Instrumented (us)", "Ratio", "Overhead"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<12} {:<6} {:>6} {:>14.1} {:>18.1} {:>7.3} {:>8.1}%",
            r.suite,
            r.module,
            r.runs,
            r.baseline.as_secs_f64() * 1e6,
            r.instrumented.as_secs_f64() * 1e6,
            r.ratio(),
            (r.ratio() - 1.0) * 100.0
        );
    }
    out
}
