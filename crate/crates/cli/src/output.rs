//! CSV rendering and the output bundle with its manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cascade_core::simulator::TrajectorySample;
use cascade_core::{CascadeState, ErlangSumKernel, EventLog};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:?}")
    }
}

/// Files of one run, kept in memory until [`Bundle::write`].
#[derive(Debug, Default)]
pub struct Bundle {
    files: BTreeMap<String, Vec<u8>>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    config_sha256: String,
    seed: u64,
    replications: usize,
    files: BTreeMap<&'a str, String>,
}

impl Bundle {
    pub fn new() -> Self {
        Bundle::default()
    }

    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.insert(name.into(), contents.into());
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    /// Moves every file of `other` under `prefix/`.
    pub fn nest(&mut self, prefix: &str, other: Bundle) {
        for (name, bytes) in other.files {
            self.files.insert(format!("{prefix}/{name}"), bytes);
        }
    }

    /// Renders `manifest.json` for the current file set.
    pub fn manifest(&self, subcommand: &str, canonical_config: &str, seed: u64, replications: usize) -> String {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            config_sha256: sha256_hex(canonical_config.as_bytes()),
            seed,
            replications,
            files: self.files.iter().map(|(k, v)| (k.as_str(), sha256_hex(v))).collect(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let io = |path: PathBuf| move |source| CliError::Io { path, source };
        std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(io(parent.to_path_buf()))?;
            }
            std::fs::write(&path, bytes).map_err(io(path.clone()))?;
        }
        Ok(())
    }
}

pub fn events_csv(log: &EventLog, components: usize) -> String {
    let mut s = String::from("event_index,time");
    for i in 1..=components {
        let _ = write!(s, ",height_{i}");
    }
    s.push('\n');
    for (j, (t, c)) in log.times.iter().zip(&log.heights).enumerate() {
        let _ = write!(s, "{j},{}", num(*t));
        for v in c {
            let _ = write!(s, ",{}", num(*v));
        }
        s.push('\n');
    }
    s
}

/// `x_i_k` column names (term `i` counted from 1, coordinate `k` from 0).
pub fn state_columns(kernel: &ErlangSumKernel, block: Option<usize>) -> Vec<String> {
    let mut out = Vec::new();
    for (i, term) in kernel.terms().iter().enumerate() {
        if block.is_some_and(|b| b != i) {
            continue;
        }
        for k in 0..=term.order {
            out.push(format!("x_{}_{}", i + 1, k));
        }
    }
    out
}

fn state_row(s: &mut String, t: f64, coords: &[f64]) {
    s.push_str(&num(t));
    for v in coords {
        let _ = write!(s, ",{}", num(*v));
    }
    s.push('\n');
}

/// Grid rows merged with two rows per event, the left limit followed by the
/// post-jump state at the same time. With `block` set only that term's
/// coordinates are written.
pub fn trajectory_csv(kernel: &ErlangSumKernel, log: &EventLog, sample: &TrajectorySample, block: Option<usize>) -> String {
    let range = match block {
        Some(b) => kernel.block(b),
        None => 0..kernel.dimension(),
    };
    let slice = |x: &CascadeState| x.coords()[range.clone()].to_vec();
    let mut s = String::from("time");
    for c in state_columns(kernel, block) {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    let mut next = 0;
    for (&t, x) in sample.grid.iter().zip(&sample.states) {
        while next < log.len() && log.times[next] <= t {
            state_row(&mut s, log.times[next], &slice(&sample.left_limits[next]));
            state_row(&mut s, log.times[next], &slice(&sample.post_jump[next]));
            next += 1;
        }
        state_row(&mut s, t, &slice(x));
    }
    while next < log.len() {
        state_row(&mut s, log.times[next], &slice(&sample.left_limits[next]));
        state_row(&mut s, log.times[next], &slice(&sample.post_jump[next]));
        next += 1;
    }
    s
}

/// `key=value` lines.
pub fn report(pairs: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

pub fn list(values: &[f64]) -> String {
    values.iter().map(|v| num(*v)).collect::<Vec<_>>().join(";")
}
