//! Logged `(t, s, a, r, s')` tuples stored one JSON object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Trajectory;
use crate::tables::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// Tuples with no trajectory structure; order carries no information.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TupleDataset {
    pub records: Vec<Transition>,
}

impl TupleDataset {
    pub fn new(records: Vec<Transition>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend_from_trajectory(&mut self, trajectory: &Trajectory) {
        self.records.extend(trajectory.steps.iter().map(|step| Transition {
            t: step.t,
            s: step.state,
            a: step.action,
            r: step.reward,
            s_next: step.next_state,
        }));
    }

    /// Checks every record against `dims`; the error names the 1-based record number.
    pub fn validate(&self, dims: Dims) -> Result<()> {
        for (i, rec) in self.records.iter().enumerate() {
            check_record(rec, dims).map_err(|detail| Error::Dataset { line: i + 1, detail })?;
        }
        Ok(())
    }

    /// Visit counts per (t, s, a), laid out like an `ActionTable`.
    pub fn visit_counts(&self, dims: Dims) -> Result<Vec<u64>> {
        self.validate(dims)?;
        let mut counts = vec![0u64; dims.action_cells()];
        for rec in &self.records {
            counts[(rec.t * dims.num_states + rec.s) * dims.num_actions + rec.a] += 1;
        }
        Ok(counts)
    }

    pub fn read_jsonl<R: Read>(reader: R, dims: Dims) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::Dataset {
                line: line_no,
                detail: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Transition = serde_json::from_str(&line).map_err(|e| Error::Dataset {
                line: line_no,
                detail: e.to_string(),
            })?;
            check_record(&rec, dims).map_err(|detail| Error::Dataset { line: line_no, detail })?;
            records.push(rec);
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path, dims: Dims) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(file, dims)
    }

    pub fn write_jsonl<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(file).map_err(|e| Error::io(path, e))
    }
}

fn check_record(rec: &Transition, dims: Dims) -> std::result::Result<(), String> {
    if rec.t >= dims.horizon {
        return Err(format!("t={} outside horizon {}", rec.t, dims.horizon));
    }
    if rec.s >= dims.num_states || rec.s_next >= dims.num_states {
        return Err(format!(
            "state {} or {} outside 0..{}",
            rec.s, rec.s_next, dims.num_states
        ));
    }
    if rec.a >= dims.num_actions {
        return Err(format!("action {} outside 0..{}", rec.a, dims.num_actions));
    }
    if !rec.r.is_finite() {
        return Err(format!("reward {} is not finite", rec.r));
    }
    Ok(())
}
