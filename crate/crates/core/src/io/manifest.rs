//! Run manifests: what was run, on which exact inputs, and what it logged.
//!
//! ```text
//! lmprune-manifest 1
//! command prune
//! arg --checkpoint
//! arg tagger.ckpt
//! config seed = 1
//! input <sha256> <path>
//! output <sha256> <path>
//! metric dev_f1 0.9123
//! ```
//!
//! Metric values are written with Rust's shortest round-trip float format,
//! so string equality means bit equality.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::vocab::hex;
use crate::error::{Error, Result};

const MAGIC: &str = "lmprune-manifest 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: String,
    pub inputs: Vec<(PathBuf, String)>,
    pub outputs: Vec<(PathBuf, String)>,
    pub metrics: Vec<(String, String)>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &str, args: &[String], config: &str) -> Self {
        Manifest {
            command: command.to_string(),
            args: args.to_vec(),
            config: config.to_string(),
            ..Manifest::default()
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let d = file_digest(path)?;
        self.inputs.push((path.to_path_buf(), d));
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let d = file_digest(path)?;
        self.outputs.push((path.to_path_buf(), d));
        Ok(())
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.push((name.to_string(), format!("{value:?}")));
    }

    pub fn metric_text(&mut self, name: &str, value: impl ToString) {
        self.metrics.push((name.to_string(), value.to_string()));
    }

    pub fn get_metric(&self, name: &str) -> Option<&str> {
        self.metrics.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MAGIC}\ncommand {}\n", self.command);
        for a in &self.args {
            let _ = writeln!(s, "arg {a}");
        }
        for l in self.config.lines() {
            let _ = writeln!(s, "config {l}");
        }
        for (p, d) in &self.inputs {
            let _ = writeln!(s, "input {d} {}", p.display());
        }
        for (p, d) in &self.outputs {
            let _ = writeln!(s, "output {d} {}", p.display());
        }
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "metric {k} {v}");
        }
        s
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            path: source.display().to_string(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(err(1, "not a manifest")),
        }
        let mut m = Manifest::default();
        let mut config = Vec::new();
        for (i, line) in lines {
            let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
            match tag {
                "command" => m.command = rest.to_string(),
                "arg" => m.args.push(rest.to_string()),
                "config" => config.push(rest),
                "input" | "output" => {
                    let (d, p) = rest.split_once(' ').ok_or_else(|| err(i + 1, "expected digest and path"))?;
                    let entry = (PathBuf::from(p), d.to_string());
                    if tag == "input" {
                        m.inputs.push(entry);
                    } else {
                        m.outputs.push(entry);
                    }
                }
                "metric" => {
                    let (k, v) = rest.split_once(' ').ok_or_else(|| err(i + 1, "expected name and value"))?;
                    m.metrics.push((k.to_string(), v.to_string()));
                }
                "" => {}
                _ => return Err(err(i + 1, &format!("unknown tag {tag:?}"))),
            }
        }
        m.config = config.iter().map(|l| format!("{l}\n")).collect();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Inputs whose current content differs from the recorded digest.
    pub fn changed_inputs(&self) -> Vec<PathBuf> {
        self.inputs
            .iter()
            .filter(|(p, d)| file_digest(p).ok().as_deref() != Some(d.as_str()))
            .map(|(p, _)| p.clone())
            .collect()
    }

    /// Metrics that differ from `other`, as `(name, ours, theirs)`.
    pub fn metric_diff(&self, other: &Manifest) -> Vec<(String, String, String)> {
        let mut out = Vec::new();
        for (k, v) in &self.metrics {
            let theirs = other.get_metric(k).unwrap_or("<missing>");
            if theirs != v {
                out.push((k.clone(), v.clone(), theirs.to_string()));
            }
        }
        out
    }
}
