//! Re-running a logged trial from its header and checking the new run
//! against the log.

use rovdock_core::mission::{run_mission_logged, LogRecord, StepRecord};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    /// Step records of the re-run.
    pub trajectory: Vec<StepRecord>,
    pub steps_compared: usize,
    /// Largest absolute difference over truth, estimate and command values.
    pub max_divergence: f64,
    /// Every record of the re-run equals the logged one.
    pub identical: bool,
}

fn step_divergence(a: &StepRecord, b: &StepRecord) -> f64 {
    let mut d: f64 = (a.t - b.t).abs();
    for i in 0..4 {
        d = d.max((a.truth[i] - b.truth[i]).abs());
        d = d.max((a.command[i] - b.command[i]).abs());
    }
    match (&a.nav, &b.nav) {
        (Some(x), Some(y)) => {
            for i in 0..4 {
                d = d.max((x.truth[i] - y.truth[i]).abs());
                d = d.max((x.estimate[i] - y.estimate[i]).abs());
            }
        }
        (None, None) => {}
        _ => return f64::INFINITY,
    }
    if a.phase != b.phase || a.detections != b.detections {
        return f64::INFINITY;
    }
    d
}

pub fn replay(records: &[LogRecord]) -> Result<ReplayReport> {
    let Some(LogRecord::Header { seed, config, .. }) = records.first() else {
        return Err(HarnessError::Log {
            line: 1,
            message: "log does not start with a header".into(),
        });
    };
    let mut rerun = Vec::with_capacity(records.len());
    run_mission_logged(config, *seed, &mut |r| rerun.push(r))?;

    let logged: Vec<&StepRecord> = records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            _ => None,
        })
        .collect();
    let trajectory: Vec<StepRecord> = rerun
        .iter()
        .filter_map(|r| match r {
            LogRecord::Step(s) => Some(s.clone()),
            _ => None,
        })
        .collect();
    let mut max_divergence = if logged.len() == trajectory.len() {
        0.0
    } else {
        f64::INFINITY
    };
    for (a, b) in logged.iter().zip(&trajectory) {
        max_divergence = max_divergence.max(step_divergence(a, b));
    }
    Ok(ReplayReport {
        steps_compared: logged.len().min(trajectory.len()),
        max_divergence,
        identical: rerun.as_slice() == records,
        trajectory,
    })
}
