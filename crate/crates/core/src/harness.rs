//! Monte-Carlo experiment runner.
//!
//! Frame `i` of a point draws everything from `derive_seed(master_seed, i)`:
//! sub-stream 1 for the reference frame, 2 for the channel, 3 for the
//! protocol. Results therefore do not depend on the worker count, and
//! different error rates or schedules see the same source frames and
//! channel draws (common random numbers).

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitframe::{derive_seed, sim_rng, Frame};
use crate::channel::{transmit, BscModel};
use crate::error::{config, Result};
use crate::metrics::{Accumulator, RunReport};
use crate::protocol::{ReconcileOutcome, Scheduling, Session, Transcript};
use crate::schedules::{build_schedule, BlockSchedule, ScheduleRequest, Variant};

/// Reference frame, noisy copy and protocol seed of frame `frame_index`.
pub fn frame_pair(n: usize, q: f64, master_seed: u64, frame_index: u64) -> Result<(Frame, Frame, u64)> {
    let seed = derive_seed(master_seed, frame_index);
    let x = Frame::random(n, &mut sim_rng(derive_seed(seed, 1)))?;
    let y = transmit(&x, &BscModel::new(q, derive_seed(seed, 2))?)?;
    Ok((x, y, derive_seed(seed, 3)))
}

/// One simulated frame pair, reconciled.
pub fn simulate_frame(
    schedule: &BlockSchedule,
    scheduling: Scheduling,
    q: f64,
    master_seed: u64,
    frame_index: u64,
) -> Result<ReconcileOutcome> {
    let (x, y, seed) = frame_pair(schedule.n, q, master_seed, frame_index)?;
    let mut session = Session::new(&x, &y, schedule, seed)?.with_scheduling(scheduling).with_clean_pass_elision(true);
    session.run_all()?;
    Ok(session.outcome())
}

/// Same frame as [`simulate_frame`], with the full transcript kept.
pub fn trace_frame(
    schedule: &BlockSchedule,
    scheduling: Scheduling,
    q: f64,
    master_seed: u64,
    frame_index: u64,
) -> Result<(ReconcileOutcome, Transcript)> {
    let (x, y, seed) = frame_pair(schedule.n, q, master_seed, frame_index)?;
    let mut session = Session::new(&x, &y, schedule, seed)?.with_scheduling(scheduling).with_transcript();
    session.run_all()?;
    let transcript = session.transcript().expect("transcript enabled");
    Ok((session.outcome(), transcript))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| config(format!("cannot start worker pool: {e}")))
}

/// Simulate `frames` frame pairs at error rate `q` and aggregate them.
pub fn run_point(
    schedule: &BlockSchedule,
    scheduling: Scheduling,
    q: f64,
    frames: u64,
    master_seed: u64,
    workers: usize,
) -> Result<Accumulator> {
    if frames == 0 {
        return Err(config("frames per point must be at least 1"));
    }
    pool(workers)?.install(|| {
        (0..frames)
            .into_par_iter()
            .try_fold(Accumulator::default, |mut acc, i| {
                acc.push(&simulate_frame(schedule, scheduling, q, master_seed, i)?);
                Ok(acc)
            })
            .try_reduce(Accumulator::default, |a, b| Ok(a.merge(b)))
    })
}

/// A sweep over true error rates, as read from a JSON config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub variant: Variant,
    /// Explicit schedule, required for `custom` and used as-is otherwise.
    #[serde(default)]
    pub schedule: Option<BlockSchedule>,
    pub n: usize,
    pub q_grid: Vec<f64>,
    /// Fixed estimate for building the schedule. When absent each point
    /// uses its own q.
    #[serde(default)]
    pub p_init: Option<f64>,
    pub frames_per_point: u64,
    #[serde(default)]
    pub master_seed: u64,
    /// Override the number of Cascade passes.
    #[serde(default)]
    pub passes: Option<usize>,
    #[serde(default)]
    pub scheduling: Option<Scheduling>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

impl Experiment {
    pub fn new(variant: Variant, n: usize, q_grid: Vec<f64>, frames_per_point: u64, master_seed: u64) -> Experiment {
        Experiment {
            variant,
            schedule: None,
            n,
            q_grid,
            p_init: None,
            frames_per_point,
            master_seed,
            passes: None,
            scheduling: None,
            workers: default_workers(),
        }
    }

    pub fn from_json(text: &str) -> Result<Experiment> {
        let exp: Experiment = serde_json::from_str(text)?;
        exp.validate()?;
        Ok(exp)
    }

    pub fn load(path: &Path) -> Result<Experiment> {
        Experiment::from_json(&std::fs::read_to_string(path)?)
    }

    /// Check the whole configuration, including every schedule, before any
    /// frame is simulated.
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_point == 0 {
            return Err(config("frames_per_point must be at least 1"));
        }
        if self.q_grid.is_empty() {
            return Err(config("q grid is empty"));
        }
        if let Some(&q) = self.q_grid.iter().find(|q| !(0.0..=0.5).contains(*q)) {
            return Err(config(format!("error rate {q} outside [0, 0.5]")));
        }
        for &q in &self.q_grid {
            self.schedule_for(q)?;
        }
        Ok(())
    }

    /// Schedule used at true error rate `q`.
    pub fn schedule_for(&self, q: f64) -> Result<BlockSchedule> {
        let mut schedule = match &self.schedule {
            Some(s) => {
                if s.n != self.n {
                    return Err(config(format!("schedule is for n={} but experiment has n={}", s.n, self.n)));
                }
                s.clone()
            }
            None if self.variant == Variant::Custom => {
                return Err(config("variant `custom` needs an explicit schedule"))
            }
            None => build_schedule(&ScheduleRequest {
                variant: self.variant,
                p_estimate: self.p_init.unwrap_or(q),
                n: self.n,
            })?,
        };
        if let Some(passes) = self.passes {
            schedule = schedule.with_passes(passes);
        }
        schedule.validate()?;
        Ok(schedule)
    }
}

/// Run every grid point. One report per q, in grid order.
pub fn run_experiment(exp: &Experiment) -> Result<Vec<RunReport>> {
    exp.validate()?;
    let scheduling = exp.scheduling.unwrap_or_default();
    let mut reports = Vec::with_capacity(exp.q_grid.len());
    for &q in &exp.q_grid {
        let schedule = exp.schedule_for(q)?;
        let acc = run_point(&schedule, scheduling, q, exp.frames_per_point, exp.master_seed, exp.workers)?;
        reports.push(acc.report(exp.variant.name(), exp.n, q, exp.p_init.unwrap_or(q))?);
    }
    Ok(reports)
}

/// Fixed initial estimate `p_init`, true error rate swept over `q_grid`.
pub fn rateless_sweep(
    variant: Variant,
    p_init: f64,
    q_grid: &[f64],
    n: usize,
    frames_per_point: u64,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<RunReport>> {
    let mut exp = Experiment::new(variant, n, q_grid.to_vec(), frames_per_point, master_seed);
    exp.p_init = Some(p_init);
    exp.workers = workers;
    run_experiment(&exp)
}

/// Parse `start:stop:step` (inclusive stop) or a comma list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || config(format!("bad grid {text:?}; use start:stop:step or a,b,c"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [a, b, s] = parts[..] else { return Err(bad()) };
        let (start, stop, step) = (num(a)?, num(b)?, num(s)?);
        if step <= 0.0 || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        // Rounded to 12 decimals so 0.1% steps print as 0.026, not 0.026000000000000002.
        Ok((0..=count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect())
    } else {
        text.split(',').map(num).collect()
    }
}
