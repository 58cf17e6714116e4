//! Derivative-free search over block sizes.
//!
//! [`compass_search`] probes `k_j ± δ` along every coordinate, moves to the
//! best strict improvement and otherwise shrinks `δ` by a fifth.
//! [`power_of_two_sweep`] evaluates a full grid of power-of-two sizes.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config, Result};
use crate::harness::run_point;
use crate::metrics::{binary_entropy, csv_err, format_value, RunReport};
use crate::protocol::Scheduling;
use crate::schedules::BlockSchedule;

/// Score of one candidate. Lower `eta` is better.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub k: Vec<usize>,
    pub eta: f64,
    pub stderr: f64,
    pub frames: u64,
    /// Full ensemble figures when the objective is a simulation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<RunReport>,
}

/// Something to minimize over vectors of block sizes. Must be deterministic.
pub trait Objective: Sync {
    fn evaluate(&self, k: &[usize]) -> Result<Evaluation>;
}

/// Wraps a plain function; the value is reported with zero standard error.
pub struct FnObjective<F>(pub F);

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    fn evaluate(&self, k: &[usize]) -> Result<Evaluation> {
        Ok(Evaluation { k: k.to_vec(), eta: (self.0)(k), stderr: 0.0, frames: 0, report: None })
    }
}

/// Monte-Carlo estimate of the reconciliation efficiency for the leading
/// block sizes `k`, with every later pass at `ceil(n/2)`, subblock reuse on
/// and `passes` passes in total. All candidates share `master_seed`, so they
/// are compared on the same frames.
#[derive(Clone, Debug)]
pub struct MonteCarloObjective {
    pub n: usize,
    pub q: f64,
    pub frames: u64,
    pub passes: usize,
    pub master_seed: u64,
    pub workers: usize,
}

impl MonteCarloObjective {
    pub fn new(n: usize, q: f64, frames: u64, master_seed: u64) -> MonteCarloObjective {
        MonteCarloObjective {
            n,
            q,
            frames,
            passes: 14,
            master_seed,
            workers: std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1),
        }
    }

    pub fn schedule(&self, k: &[usize]) -> Result<BlockSchedule> {
        if k.len() > self.passes {
            return Err(config(format!("{} block sizes for {} passes", k.len(), self.passes)));
        }
        let mut ks = k.to_vec();
        ks.resize(self.passes, self.n.div_ceil(2));
        Ok(BlockSchedule::custom(self.n, ks)?.with_reuse(true))
    }
}

impl Objective for MonteCarloObjective {
    fn evaluate(&self, k: &[usize]) -> Result<Evaluation> {
        let schedule = self.schedule(k)?;
        let acc = run_point(&schedule, Scheduling::PassOrdered, self.q, self.frames, self.master_seed, self.workers)?;
        let report = acc.report("custom", self.n, self.q, self.q)?;
        let h = binary_entropy(self.q)?;
        // Delta method on the disclosed-bits term; FER noise is ignored.
        let stderr = (1.0 - report.fer) * report.se_m / (self.n as f64 * h);
        Ok(Evaluation { k: k.to_vec(), eta: report.eta_ec, stderr, frames: self.frames, report: Some(report) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompassParams {
    pub delta0: f64,
    /// Maximum number of distinct candidates evaluated.
    pub budget: usize,
    /// Stop once `δ` drops below this.
    pub min_delta: f64,
    /// Probes with a coordinate outside `[1, upper]` are skipped.
    pub upper: usize,
}

#[derive(Clone, Debug)]
pub struct CompassResult {
    pub best: Evaluation,
    /// `δ` at the start of every iteration.
    pub deltas: Vec<f64>,
    /// Best value after every iteration; never increases.
    pub trajectory: Vec<f64>,
    /// Every distinct evaluation, in the order it was requested.
    pub history: Vec<Evaluation>,
}

struct Cache<'a, O: ?Sized> {
    objective: &'a O,
    seen: HashMap<Vec<usize>, Evaluation>,
    history: Vec<Evaluation>,
}

impl<O: Objective + ?Sized> Cache<'_, O> {
    /// Evaluate the uncached candidates concurrently, record them, and
    /// return the evaluations of all `points` in order.
    fn eval_all(&mut self, points: &[Vec<usize>]) -> Result<Vec<Evaluation>> {
        let mut fresh: Vec<&Vec<usize>> = points.iter().filter(|p| !self.seen.contains_key(*p)).collect();
        fresh.dedup();
        let objective = self.objective;
        let results: Vec<Evaluation> = fresh.par_iter().map(|p| objective.evaluate(p)).collect::<Result<_>>()?;
        for e in results {
            self.seen.insert(e.k.clone(), e.clone());
            self.history.push(e);
        }
        Ok(points.iter().map(|p| self.seen[p].clone()).collect())
    }

    fn uncached(&self, p: &[usize]) -> bool {
        !self.seen.contains_key(p)
    }
}

/// Compass search from `init`.
///
/// Probe order is `k_1 + δ, k_1 - δ, k_2 + δ, k_2 - δ, ...`, and ties keep the
/// earlier probe. The step applied is `round(δ)`, at least 1.
pub fn compass_search<O: Objective + ?Sized>(
    objective: &O,
    init: &[usize],
    params: &CompassParams,
) -> Result<CompassResult> {
    if init.is_empty() {
        return Err(config("compass search needs at least one coordinate"));
    }
    if params.delta0.is_nan() || params.delta0 <= 0.0 || params.min_delta.is_nan() || params.min_delta <= 0.0 {
        return Err(config("step sizes must be positive"));
    }
    if params.budget == 0 {
        return Err(config("evaluation budget must be at least 1"));
    }
    if init.iter().any(|&k| k == 0 || k > params.upper) {
        return Err(config(format!("initial point {init:?} outside [1, {}]", params.upper)));
    }

    let mut cache = Cache { objective, seen: HashMap::new(), history: Vec::new() };
    let mut best = cache.eval_all(&[init.to_vec()])?.remove(0);
    let mut delta = params.delta0;
    let mut deltas = Vec::new();
    let mut trajectory = Vec::new();

    while delta >= params.min_delta && cache.history.len() < params.budget {
        deltas.push(delta);
        let step = (delta.round() as usize).max(1);
        let mut probes = Vec::with_capacity(2 * init.len());
        for j in 0..init.len() {
            for up in [true, false] {
                let mut p = best.k.clone();
                p[j] = if up { p[j] + step } else { p[j].saturating_sub(step) };
                if p[j] >= 1 && p[j] <= params.upper && p != best.k {
                    probes.push(p);
                }
            }
        }
        // Respect the budget: drop uncached probes past the limit.
        let mut room = params.budget - cache.history.len();
        probes.retain(|p| {
            if !cache.uncached(p) {
                return true;
            }
            if room == 0 {
                return false;
            }
            room -= 1;
            true
        });
        let evals = cache.eval_all(&probes)?;
        let winner = evals
            .into_iter()
            .fold(None::<Evaluation>, |acc, e| match acc {
                Some(a) if a.eta <= e.eta => Some(a),
                _ => Some(e),
            })
            .filter(|e| e.eta < best.eta);
        match winner {
            Some(e) => best = e,
            None => delta = delta * 4.0 / 5.0,
        }
        trajectory.push(best.eta);
    }

    Ok(CompassResult { best, deltas, trajectory, history: cache.history })
}

/// Evaluate every combination `(2^e_1, 2^e_2, ...)` with `e_j` drawn from
/// `exponents[j]`, sorted by increasing `eta` (ties by block sizes).
pub fn power_of_two_sweep<O: Objective + ?Sized>(objective: &O, exponents: &[Vec<u32>]) -> Result<Vec<Evaluation>> {
    if exponents.is_empty() || exponents.iter().any(Vec::is_empty) {
        return Err(config("every coordinate needs at least one exponent"));
    }
    if exponents.iter().flatten().any(|&e| e >= usize::BITS - 1) {
        return Err(config("exponent too large"));
    }
    let mut grid: Vec<Vec<usize>> = vec![Vec::new()];
    for exps in exponents {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                exps.iter().map(move |&e| {
                    let mut p = prefix.clone();
                    p.push(1usize << e);
                    p
                })
            })
            .collect();
    }
    let mut cache = Cache { objective, seen: HashMap::new(), history: Vec::new() };
    let mut ranked = cache.eval_all(&grid)?;
    ranked.sort_by(|a, b| a.eta.total_cmp(&b.eta).then_with(|| a.k.cmp(&b.k)));
    Ok(ranked)
}

/// Evaluation log as CSV: candidate, eta, stderr, frames.
pub fn write_history<W: Write>(evals: &[Evaluation], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["candidate", "eta_ec", "stderr", "frames"]).map_err(csv_err)?;
    for e in evals {
        let k: Vec<String> = e.k.iter().map(usize::to_string).collect();
        w.write_record([k.join("/"), format_value(e.eta), format_value(e.stderr), e.frames.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
