//! Benchmark fixtures shared by the criterion targets.

use cascade_core::{
    build_schedule, derive_seed, sim_rng, transmit, BlockSchedule, BscModel, Frame, ScheduleRequest, Variant,
};

/// Frame pair with crossover rate `q` plus the schedule of `variant` sized for it.
pub fn fixture(variant: Variant, n: usize, q: f64, seed: u64) -> (Frame, Frame, BlockSchedule) {
    let x = Frame::random(n, &mut sim_rng(seed)).expect("n > 0");
    let y = transmit(&x, &BscModel::new(q, derive_seed(seed, 1)).expect("valid q")).expect("same length");
    let schedule = build_schedule(&ScheduleRequest { variant, p_estimate: q, n }).expect("valid schedule");
    (x, y, schedule)
}
