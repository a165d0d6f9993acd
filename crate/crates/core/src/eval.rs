//! Navigation metrics and the cross-difficulty split of 4-landmark routes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::EpisodeSpec;
use crate::engine::{EpisodeSummary, TrajectoryLog};
use crate::error::{NavError, Result};
use crate::instruction::InstructionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    /// Ground-truth shortest length `l`, meters.
    pub shortest_length: f64,
    /// Traveled length `p`, meters.
    pub traveled: f64,
    pub final_error: f64,
    pub steps: usize,
}

impl EpisodeResult {
    pub fn from_summary(s: &EpisodeSummary) -> Self {
        EpisodeResult {
            success: s.success,
            shortest_length: s.route_length,
            traveled: s.traveled,
            final_error: s.final_distance_to_goal,
            steps: s.steps,
        }
    }

    /// This episode's term of the SPL average, in `[0, 1]`.
    pub fn spl_term(&self) -> f64 {
        if !self.success {
            return 0.0;
        }
        let l = self.shortest_length;
        let denom = self.traveled.max(l);
        if denom > 0.0 {
            l / denom
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Percent.
    pub spl: f64,
    /// Mean final distance to the goal, meters.
    pub nav_error: f64,
    /// Mean steps over all episodes, failures included.
    pub total_steps: f64,
    /// Percent of successful episodes.
    pub success_rate: f64,
    pub n: usize,
}

/// Success weighted by path length, as a percentage.
pub fn spl(results: &[EpisodeResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(NavError::EmptyResults);
    }
    Ok(100.0 * results.iter().map(EpisodeResult::spl_term).sum::<f64>() / results.len() as f64)
}

pub fn summarize(results: &[EpisodeResult]) -> Result<MetricsReport> {
    let spl = spl(results)?;
    let n = results.len() as f64;
    Ok(MetricsReport {
        spl,
        nav_error: results.iter().map(|r| r.final_error).sum::<f64>() / n,
        total_steps: results.iter().map(|r| r.steps as f64).sum::<f64>() / n,
        success_rate: 100.0 * results.iter().filter(|r| r.success).count() as f64 / n,
        n: results.len(),
    })
}

/// Every contiguous window of `level` sub-routes of a 4-landmark route:
/// four windows at level 1, three at 2, two at 3, and the route itself at 4.
/// Each window starts at the preceding landmark (or the source) and carries
/// the matching segment pairs.
pub fn subsample_difficulty(parent: &EpisodeSpec, level: usize) -> Result<Vec<EpisodeSpec>> {
    let pairs = parent.instruction.instruction.len();
    let targets = parent.route.targets();
    if pairs != 4 || targets.len() != 4 {
        return Err(NavError::InvalidInstruction(format!(
            "cross-difficulty split needs 4 landmarks and 4 pairs, got {} and {pairs}",
            targets.len()
        )));
    }
    if !(1..=4).contains(&level) {
        return Err(NavError::InvalidConfig(format!("level {level} outside 1..=4")));
    }
    let positions = parent.route.landmark_positions();
    let landmarks = parent.route.landmark_ids();
    (0..=4 - level)
        .map(|s| {
            let route = parent.route.slice(
                positions[s],
                positions[s + level],
                landmarks[s..=s + level].to_vec(),
            )?;
            let instruction = InstructionRecord {
                instruction: parent.instruction.instruction.window(s..s + level)?,
                landmark_node_ids: targets[s..s + level].to_vec(),
            };
            Ok(EpisodeSpec { route, instruction })
        })
        .collect()
}

/// All `*.jsonl` trajectory logs in `dir`, sorted by file name.
pub fn load_logs(dir: impl AsRef<Path>) -> Result<Vec<TrajectoryLog>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| NavError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(TrajectoryLog::load).collect()
}
