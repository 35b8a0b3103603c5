//! Monte Carlo batches and their summaries.

use std::io::Write;

use rayon::prelude::*;
use rovdock_core::mission::AbortReason;
use rovdock_core::scenario::{Approach, ScenarioConfig, TrialResult};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::log::run_logged;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachSummary {
    pub approach: Approach,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Docking durations of the successful trials, in seed order, s.
    pub durations: Vec<f64>,
    pub mean_duration: Option<f64>,
    pub std_duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub approaches: Vec<ApproachSummary>,
    pub trials: usize,
    pub successes: usize,
    pub mean_duration: Option<f64>,
    pub std_duration: Option<f64>,
    /// Mean and standard deviation of the per-trial docking-filter NEES.
    pub nees_mean: Option<f64>,
    pub nees_std: Option<f64>,
}

impl BatchSummary {
    pub fn approach(&self, a: Approach) -> Option<&ApproachSummary> {
        self.approaches.iter().find(|s| s.approach == a)
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Results ordered by approach, then seed.
    pub results: Vec<TrialResult>,
    /// Encoded log of each trial, same order as `results`. Empty for a
    /// trial that crashed.
    pub logs: Vec<Vec<u8>>,
    pub summary: BatchSummary,
}

/// Sample mean and standard deviation (n − 1).
fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 {
        Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    } else {
        None
    };
    (Some(m), s)
}

pub fn summarize(results: &[TrialResult]) -> BatchSummary {
    let mut approaches = Vec::new();
    for a in Approach::ALL {
        let rs: Vec<&TrialResult> = results.iter().filter(|r| r.approach == a).collect();
        if rs.is_empty() {
            continue;
        }
        let durations: Vec<f64> = rs
            .iter()
            .filter(|r| r.success)
            .filter_map(|r| r.docking_duration)
            .collect();
        let successes = rs.iter().filter(|r| r.success).count();
        let (mean_duration, std_duration) = mean_std(&durations);
        approaches.push(ApproachSummary {
            approach: a,
            trials: rs.len(),
            successes,
            success_rate: successes as f64 / rs.len() as f64,
            durations,
            mean_duration,
            std_duration,
        });
    }
    let all: Vec<f64> = approaches
        .iter()
        .flat_map(|a| a.durations.iter().copied())
        .collect();
    let (mean_duration, std_duration) = mean_std(&all);
    let nees: Vec<f64> = results.iter().filter_map(|r| r.nees_mean).collect();
    let (nees_mean, nees_std) = mean_std(&nees);
    BatchSummary {
        trials: results.len(),
        successes: results.iter().filter(|r| r.success).count(),
        approaches,
        mean_duration,
        std_duration,
        nees_mean,
        nees_std,
    }
}

/// Result recorded for a trial that stopped with an error.
pub fn crashed(cfg: &ScenarioConfig, seed: u64) -> TrialResult {
    TrialResult {
        seed,
        approach: cfg.approach,
        mode: cfg.mode,
        success: false,
        docking_duration: None,
        abort_reason: Some(AbortReason::Runtime),
        phase_timeline: Vec::new(),
        final_pose_error: f64::NAN,
        waypoints_reached: 0,
        reattempts: 0,
        redocks: 0,
        inspection_durations: Vec::new(),
        faces_observed: Vec::new(),
        descent_exit: None,
        descent_envelope: None,
        nees_mean: None,
        max_detections: 0,
        sim_time: 0.0,
    }
}

/// Runs `seeds` trials per approach with seeds `base_seed..base_seed + seeds`
/// in parallel. Output order and content do not depend on scheduling.
pub fn run_batch(
    cfg: &ScenarioConfig,
    approaches: &[Approach],
    base_seed: u64,
    seeds: usize,
) -> Result<BatchOutput> {
    cfg.validate().map_err(crate::error::HarnessError::Config)?;
    let jobs: Vec<(Approach, u64)> = approaches
        .iter()
        .flat_map(|&a| (0..seeds as u64).map(move |k| (a, base_seed + k)))
        .collect();
    let done: Vec<(TrialResult, Vec<u8>)> = jobs
        .par_iter()
        .map(|&(a, seed)| {
            let c = cfg.clone().with_approach(a);
            match run_logged(&c, seed) {
                Ok(out) => out,
                Err(_) => (crashed(&c, seed), Vec::new()),
            }
        })
        .collect();
    let (results, logs): (Vec<_>, Vec<_>) = done.into_iter().unzip();
    let summary = summarize(&results);
    Ok(BatchOutput {
        results,
        logs,
        summary,
    })
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    approach: &'a str,
    seed: u64,
    success: bool,
    duration_s: Option<f64>,
    abort_reason: Option<AbortReason>,
}

/// One row per trial: approach, seed, success, duration_s, abort_reason.
pub fn write_csv<W: Write>(results: &[TrialResult], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in results {
        wr.serialize(CsvRow {
            approach: r.approach.name(),
            seed: r.seed,
            success: r.success,
            duration_s: r.docking_duration,
            abort_reason: r.abort_reason,
        })?;
    }
    wr.flush()
        .map_err(|e| crate::error::HarnessError::io("csv output", e))?;
    Ok(())
}
