//! Run-directory files: trajectory JSONL, summary CSV, resolved config.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use duallaws::analysis::DIVERGENCE_TOLERANCE;
use duallaws::scalar::sup_distance;
use duallaws::simulator::to_jsonl;
use duallaws::state::RecordEvent;
use duallaws::{EquationPairList, ScenarioConfig, TrajectoryRecord};

pub const TRAJECTORY: &str = "trajectory.jsonl";
pub const SUMMARY: &str = "summary.csv";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";

/// Short stable digest of a pair list's text form.
pub fn pair_digest(pairs: &EquationPairList) -> String {
    let hash = Sha256::digest(pairs.to_string().as_bytes());
    hash[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_resolved_config(dir: &Path, config: &ScenarioConfig) -> io::Result<()> {
    fs::write(dir.join(RESOLVED_CONFIG), config.to_json_pretty() + "\n")
}

pub fn write_trajectory(dir: &Path, records: &[TrajectoryRecord]) -> io::Result<()> {
    fs::write(dir.join(TRAJECTORY), to_jsonl(records))?;
    let mut csv = csv::Writer::from_path(dir.join(SUMMARY))?;
    csv.write_record(["t", "T", "loss", "pair_digest"])?;
    for r in records {
        csv.write_record([
            r.t.to_string(),
            r.macro_t.to_string(),
            format!("{:e}", r.loss),
            pair_digest(&r.active_pairs),
        ])?;
    }
    csv.flush()
}

pub fn read_trajectory(dir: &Path) -> Result<Vec<TrajectoryRecord>, String> {
    let path = dir.join(TRAJECTORY);
    let file = fs::File::open(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(k, line)| {
            let line = line.map_err(|e| format!("{}: {e}", path.display()))?;
            serde_json::from_str(&line)
                .map_err(|e| format!("{} line {}: {e}", path.display(), k + 1))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub compared_records: usize,
    /// `t` of the first shared record whose slots differ.
    pub first_divergence: Option<u64>,
    pub max_deviation: f64,
    pub final_deviation: f64,
}

fn event_rank(e: Option<RecordEvent>) -> u8 {
    match e {
        Some(RecordEvent::PostMacro) => 0,
        None | Some(RecordEvent::PreMacro) => 1,
    }
}

/// Aligns two trajectories on `(t, event)` and finds where their slots part.
pub fn compare_trajectories(a: &[TrajectoryRecord], b: &[TrajectoryRecord]) -> CompareReport {
    let index = |rs: &[TrajectoryRecord]| -> BTreeMap<(u64, u8), Vec<Vec<f64>>> {
        rs.iter()
            .map(|r| ((r.t, event_rank(r.event)), r.x.clone()))
            .collect()
    };
    let (ia, ib) = (index(a), index(b));
    let mut report = CompareReport {
        compared_records: 0,
        first_divergence: None,
        max_deviation: 0.0,
        final_deviation: 0.0,
    };
    for (key, xa) in &ia {
        let Some(xb) = ib.get(key) else { continue };
        let gap = if xa.len() == xb.len() && xa.iter().zip(xb).all(|(p, q)| p.len() == q.len()) {
            xa.iter()
                .zip(xb)
                .fold(0.0f64, |acc, (p, q)| acc.max(sup_distance(p, q)))
        } else {
            f64::INFINITY
        };
        report.compared_records += 1;
        report.max_deviation = report.max_deviation.max(gap);
        report.final_deviation = gap;
        if gap > DIVERGENCE_TOLERANCE && report.first_divergence.is_none() {
            report.first_divergence = Some(key.0);
        }
    }
    report
}
