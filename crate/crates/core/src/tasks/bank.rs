//! Frozen teacher outputs.
//!
//! On disk a bank is a directory with, for each teacher `k`:
//!
//! ```text
//! teacher_k.json          {"index", "task", "encoder", "probe", "dists", "val_acc", "test_acc"}
//! teacher_k_encoder.json  encoder checkpoint
//! teacher_k_probe.json    probe head checkpoint
//! teacher_k_dists.tsv     n rows of C tab-separated probabilities
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{linear_probe, pretrain_teacher, TaskKind};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gnn::{encode, predict, Checkpoint, EncoderParams, HeadParams};
use crate::graph::{Graph, NormalizedAdjacency};
use crate::numerics::{Tensor, PROB_FLOOR};
use crate::rng;

/// Tolerance on row sums when reading distributions from text.
const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherRecord {
    pub task: TaskKind,
    pub encoder: EncoderParams,
    pub head: HeadParams,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Per-teacher manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherEntry {
    pub index: usize,
    pub task: TaskKind,
    pub encoder: String,
    pub probe: String,
    pub dists: String,
    pub val_acc: f64,
    pub test_acc: f64,
}

impl TeacherEntry {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("teacher entry", e))
    }
}

/// `K x n x C` class distributions, one slab per teacher. Immutable once
/// built.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherBank {
    records: Vec<TeacherRecord>,
    dists: Tensor,
}

fn check_distribution_rows(t: &Tensor, tolerance: f64, context: &str) -> Result<()> {
    for r in 0..t.rows() {
        let row = t.row(r);
        if row.iter().any(|&p| !(0.0..=1.0 + tolerance).contains(&p)) {
            return Err(Error::invalid(format!("{context}: row {r} has an entry outside [0, 1]")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(Error::invalid(format!("{context}: row {r} sums to {sum}")));
        }
    }
    Ok(())
}

impl TeacherBank {
    pub fn new(records: Vec<TeacherRecord>, per_teacher: Vec<Tensor>) -> Result<Self> {
        if records.is_empty() || records.len() != per_teacher.len() {
            return Err(Error::invalid(format!(
                "teacher bank needs at least one teacher and one distribution matrix each (got {} and {})",
                records.len(),
                per_teacher.len()
            )));
        }
        let (n, c) = (per_teacher[0].rows(), per_teacher[0].cols());
        for (k, d) in per_teacher.iter().enumerate() {
            if d.shape() != [n, c] {
                return Err(Error::Shape { op: "teacher bank", left: vec![n, c], right: d.shape().to_vec() });
            }
            check_distribution_rows(d, ROW_SUM_TOLERANCE, &format!("teacher {k}"))?;
        }
        let k = per_teacher.len();
        let data = per_teacher.into_iter().flat_map(Tensor::into_data).collect();
        Ok(TeacherBank { records, dists: Tensor::new(vec![k, n, c], data)? })
    }

    pub fn k(&self) -> usize {
        self.dists.shape()[0]
    }

    pub fn n(&self) -> usize {
        self.dists.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.dists.shape()[2]
    }

    pub fn dists(&self) -> &Tensor {
        &self.dists
    }

    /// Distribution matrix of teacher `k`, `n x C`.
    pub fn teacher(&self, k: usize) -> Tensor {
        self.dists.slab(k)
    }

    pub fn records(&self) -> &[TeacherRecord] {
        &self.records
    }

    pub fn tasks(&self) -> Vec<TaskKind> {
        self.records.iter().map(|r| r.task).collect()
    }

    /// Teacher rows re-tempered as `softmax(ln P / tau)`.
    pub fn tempered(&self, tau: f64) -> Tensor {
        let mut out = self.dists.map(|p| p.max(PROB_FLOOR).ln());
        let (k, n, c) = (self.k(), self.n(), self.classes());
        let flat = out.clone().reshape(&[k * n, c]).softmax_rows(tau);
        out = flat.reshape(&[k, n, c]);
        out
    }

    /// SHA-256 over the task list and distribution bytes, hex-encoded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for r in &self.records {
            hasher.update(serde_json::to_vec(&r.task).expect("task serializes"));
        }
        hasher.update(self.dists.to_le_bytes());
        hasher.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, rec) in self.records.iter().enumerate() {
            let entry = TeacherEntry {
                index: k,
                task: rec.task,
                encoder: format!("teacher_{k}_encoder.json"),
                probe: format!("teacher_{k}_probe.json"),
                dists: format!("teacher_{k}_dists.tsv"),
                val_acc: rec.val_acc,
                test_acc: rec.test_acc,
            };
            let config = serde_json::json!({ "task": rec.task });
            rec.encoder.to_checkpoint(config.clone()).save(dir.join(&entry.encoder))?;
            rec.head.to_checkpoint(config).save(dir.join(&entry.probe))?;
            let path = dir.join(&entry.dists);
            fs::write(&path, render_dists(&self.teacher(k))).map_err(|e| Error::io(path, e))?;
            let path = dir.join(format!("teacher_{k}.json"));
            let json = serde_json::to_string_pretty(&entry).expect("entry serializes") + "\n";
            fs::write(&path, json).map_err(|e| Error::io(path, e))?;
        }
        // Entries left over from a larger bank would be picked up by `load`.
        let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for item in listing {
            let item = item.map_err(|e| Error::io(dir, e))?;
            if entry_index(&item.file_name().to_string_lossy()).is_some_and(|k| k >= self.k()) {
                fs::remove_file(item.path()).map_err(|e| Error::io(item.path(), e))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for item in listing {
            let item = item.map_err(|e| Error::io(dir, e))?;
            if entry_index(&item.file_name().to_string_lossy()).is_none() {
                continue;
            }
            let text = fs::read_to_string(item.path()).map_err(|e| Error::io(item.path(), e))?;
            entries.push(TeacherEntry::parse(&text)?);
        }
        if entries.is_empty() {
            return Err(Error::invalid(format!("{}: no teacher_<k>.json entries", dir.display())));
        }
        entries.sort_by_key(|e| e.index);
        let mut records = Vec::with_capacity(entries.len());
        let mut per_teacher = Vec::with_capacity(entries.len());
        for (k, entry) in entries.iter().enumerate() {
            if entry.index != k {
                return Err(Error::invalid(format!("{}: teacher indices are not 0..K", dir.display())));
            }
            let encoder = EncoderParams::from_checkpoint(&Checkpoint::load(dir.join(&entry.encoder))?)?;
            let head = HeadParams::from_checkpoint(&Checkpoint::load(dir.join(&entry.probe))?)?;
            let path = dir.join(&entry.dists);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            per_teacher.push(parse_dists(&text)?);
            records.push(TeacherRecord {
                task: entry.task,
                encoder,
                head,
                val_acc: entry.val_acc,
                test_acc: entry.test_acc,
            });
        }
        TeacherBank::new(records, per_teacher)
    }
}

/// `k` for a manifest file named `teacher_<k>.json`.
fn entry_index(file_name: &str) -> Option<usize> {
    file_name.strip_prefix("teacher_")?.strip_suffix(".json")?.parse().ok()
}

pub fn render_dists(t: &Tensor) -> String {
    let mut out = String::new();
    for r in 0..t.rows() {
        for (j, p) in t.row(r).iter().enumerate() {
            if j > 0 {
                out.push('\t');
            }
            let _ = write!(out, "{p:?}");
        }
        out.push('\n');
    }
    out
}

/// Parses an `n x C` distribution matrix. Every row must be a probability
/// distribution.
pub fn parse_dists(text: &str) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let start = data.len();
        for field in line.split('\t') {
            let p: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse("dists", i + 1, format!("expected a float, found {field:?}")))?;
            if !p.is_finite() {
                return Err(Error::parse("dists", i + 1, "non-finite probability"));
            }
            data.push(p);
        }
        let width = data.len() - start;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::parse("dists", i + 1, format!("expected {c} columns, found {width}")));
            }
            _ => {}
        }
        rows += 1;
    }
    let Some(cols) = cols else {
        return Err(Error::parse("dists", 0, "no rows"));
    };
    let t = Tensor::new(vec![rows, cols], data)?;
    check_distribution_rows(&t, ROW_SUM_TOLERANCE, "dists")?;
    Ok(t)
}

fn build_one(
    g: &Graph,
    adj: &NormalizedAdjacency,
    task: &TaskKind,
    cfg: &RunConfig,
    k: usize,
) -> Result<(TeacherRecord, Tensor)> {
    let seed = rng::derive_seed(cfg.seed, "teacher", k as u64);
    let pre = pretrain_teacher(g, adj, task, cfg, seed)?;
    let probe = linear_probe(&pre.encoder, g, adj, cfg, seed)?;
    let h = encode(adj, g.features(), &pre.encoder)?;
    let dists = predict(&h, &probe.head, 1.0)?;
    Ok((
        TeacherRecord {
            task: *task,
            encoder: pre.encoder,
            head: probe.head,
            val_acc: probe.val_acc,
            test_acc: probe.test_acc,
        },
        dists,
    ))
}

/// Pre-trains and probes one teacher per task, on up to `jobs` threads.
///
/// Teacher `k` draws all of its randomness from `(cfg.seed, k)`, so the
/// result does not depend on `jobs`.
pub fn build_teacher_bank(
    g: &Graph,
    adj: &NormalizedAdjacency,
    tasks: &[TaskKind],
    cfg: &RunConfig,
    jobs: usize,
) -> Result<TeacherBank> {
    if tasks.is_empty() {
        return Err(Error::invalid("teacher bank needs at least one task"));
    }
    let jobs = jobs.clamp(1, tasks.len());
    let mut results: Vec<Option<Result<(TeacherRecord, Tensor)>>> = (0..tasks.len()).map(|_| None).collect();
    if jobs == 1 {
        for (k, task) in tasks.iter().enumerate() {
            results[k] = Some(build_one(g, adj, task, cfg, k));
        }
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = (0..jobs)
                .map(|worker| {
                    s.spawn(move || {
                        (worker..tasks.len())
                            .step_by(jobs)
                            .map(|k| (k, build_one(g, adj, &tasks[k], cfg, k)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (k, r) in h.join().expect("teacher worker panicked") {
                    results[k] = Some(r);
                }
            }
        });
    }
    let mut records = Vec::with_capacity(tasks.len());
    let mut per_teacher = Vec::with_capacity(tasks.len());
    for r in results {
        let (rec, d) = r.expect("every teacher ran")?;
        records.push(rec);
        per_teacher.push(d);
    }
    TeacherBank::new(records, per_teacher)
}
