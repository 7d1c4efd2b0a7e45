//! `.taint` and `.perm` policy files.
//!
//! Both formats are line based with `#` comments:
//!
//! ```text
//! source rt::Telephony.getDeviceId 0x1
//! sink rt::Log.d report
//! watch 0xff
//! ```
//!
//! ```text
//! permission rt::Wifi.isEnabled ACCESS_WIFI_STATE
//! grant ACCESS_WIFI_STATE allow
//! ```

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::MethodRef;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct PolicyError {
    pub line: usize,
    pub message: String,
}

fn perr(line: usize, message: impl Into<String>) -> PolicyError {
    PolicyError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SinkMode {
    Report,
    Halt,
}

impl SinkMode {
    pub fn parse(word: &str) -> Option<SinkMode> {
        match word {
            "report" => Some(SinkMode::Report),
            "halt" => Some(SinkMode::Halt),
            _ => None,
        }
    }
}

impl fmt::Display for SinkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SinkMode::Report => "report",
            SinkMode::Halt => "halt",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaintPolicy {
    pub sources: BTreeMap<MethodRef, u64>,
    pub sinks: BTreeMap<MethodRef, SinkMode>,
    pub watched_mask: u64,
}

impl Default for TaintPolicy {
    fn default() -> Self {
        TaintPolicy {
            sources: BTreeMap::new(),
            sinks: BTreeMap::new(),
            watched_mask: u64::MAX,
        }
    }
}

impl TaintPolicy {
    pub fn source_tag(&self, m: &MethodRef) -> Option<u64> {
        self.sources.get(m).copied()
    }

    pub fn sink_mode(&self, m: &MethodRef) -> Option<SinkMode> {
        self.sinks.get(m).copied()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (m, tag) in &self.sources {
            out.push_str(&format!("source {m} {tag:#x}\n"));
        }
        for (m, mode) in &self.sinks {
            out.push_str(&format!("sink {m} {mode}\n"));
        }
        if self.watched_mask != u64::MAX {
            out.push_str(&format!("watch {:#x}\n", self.watched_mask));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Grant {
    Allow,
    Deny,
}

impl Grant {
    pub fn parse(word: &str) -> Option<Grant> {
        match word {
            "allow" => Some(Grant::Allow),
            "deny" => Some(Grant::Deny),
            _ => None,
        }
    }
}

impl fmt::Display for Grant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grant::Allow => "allow",
            Grant::Deny => "deny",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PermissionPolicy {
    pub protected: BTreeMap<MethodRef, String>,
    pub grants: BTreeMap<String, Grant>,
}

impl PermissionPolicy {
    pub fn permission_for(&self, m: &MethodRef) -> Option<&str> {
        self.protected.get(m).map(String::as_str)
    }

    /// Missing grant entries deny.
    pub fn grant(&self, permission: &str) -> Grant {
        self.grants.get(permission).copied().unwrap_or(Grant::Deny)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (m, p) in &self.protected {
            out.push_str(&format!("permission {m} {p}\n"));
        }
        for (p, g) in &self.grants {
            out.push_str(&format!("grant {p} {g}\n"));
        }
        out
    }
}

fn lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let body = raw.split('#').next().unwrap_or("");
        let words: Vec<&str> = body.split_whitespace().collect();
        (!words.is_empty()).then_some((i + 1, words))
    })
}

fn method_ref(line: usize, word: &str) -> Result<MethodRef, PolicyError> {
    MethodRef::parse(word).ok_or_else(|| perr(line, format!("invalid method reference '{word}'")))
}

fn hex(line: usize, word: &str) -> Result<u64, PolicyError> {
    word.strip_prefix("0x")
        .or_else(|| word.strip_prefix("0X"))
        .filter(|d| !d.is_empty())
        .and_then(|d| u64::from_str_radix(d, 16).ok())
        .ok_or_else(|| perr(line, format!("malformed hex tag '{word}'")))
}

fn arity(line: usize, words: &[&str], n: usize) -> Result<(), PolicyError> {
    if words.len() != n {
        return Err(perr(
            line,
            format!("'{}' expects {} argument(s)", words[0], n - 1),
        ));
    }
    Ok(())
}

pub fn parse_taint_policy(text: &str) -> Result<TaintPolicy, PolicyError> {
    let mut policy = TaintPolicy::default();
    let mut watch_seen = false;
    for (line, words) in lines(text) {
        match words[0] {
            "source" => {
                arity(line, &words, 3)?;
                let m = method_ref(line, words[1])?;
                let tag = hex(line, words[2])?;
                if tag == 0 {
                    return Err(perr(line, "source tag must be nonzero"));
                }
                if policy.sinks.contains_key(&m) {
                    return Err(perr(line, format!("{m} is both a source and a sink")));
                }
                if policy.sources.insert(m.clone(), tag).is_some() {
                    return Err(perr(line, format!("duplicate source entry for {m}")));
                }
            }
            "sink" => {
                arity(line, &words, 3)?;
                let m = method_ref(line, words[1])?;
                let mode = SinkMode::parse(words[2]).ok_or_else(|| {
                    perr(line, format!("sink mode must be report or halt, found '{}'", words[2]))
                })?;
                if policy.sources.contains_key(&m) {
                    return Err(perr(line, format!("{m} is both a source and a sink")));
                }
                if policy.sinks.insert(m.clone(), mode).is_some() {
                    return Err(perr(line, format!("duplicate sink entry for {m}")));
                }
            }
            "watch" => {
                arity(line, &words, 2)?;
                if watch_seen {
                    return Err(perr(line, "duplicate watch directive"));
                }
                watch_seen = true;
                policy.watched_mask = hex(line, words[1])?;
            }
            other => return Err(perr(line, format!("unknown directive '{other}'"))),
        }
    }
    Ok(policy)
}

pub fn parse_perm_policy(text: &str) -> Result<PermissionPolicy, PolicyError> {
    let mut policy = PermissionPolicy::default();
    for (line, words) in lines(text) {
        match words[0] {
            "permission" => {
                arity(line, &words, 3)?;
                let m = method_ref(line, words[1])?;
                if !super::is_ident(words[2]) {
                    return Err(perr(line, format!("invalid permission name '{}'", words[2])));
                }
                if policy.protected.insert(m.clone(), words[2].to_string()).is_some() {
                    return Err(perr(line, format!("duplicate permission entry for {m}")));
                }
            }
            "grant" => {
                arity(line, &words, 3)?;
                let g = Grant::parse(words[2]).ok_or_else(|| {
                    perr(line, format!("grant must be allow or deny, found '{}'", words[2]))
                })?;
                if policy.grants.insert(words[1].to_string(), g).is_some() {
                    return Err(perr(line, format!("duplicate grant for {}", words[1])));
                }
            }
            other => return Err(perr(line, format!("unknown directive '{other}'"))),
        }
    }
    Ok(policy)
}
