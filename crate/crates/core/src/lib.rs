pub mod bitframe;
pub mod channel;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod optimizer;
pub mod protocol;
pub mod schedules;

pub use bitframe::{derive_seed, hamming_distance, make_permutation, sim_rng, Frame, Permutation, SimRng};
pub use channel::{transmit, BscModel};
pub use error::{Error, Result};
pub use harness::{parse_grid, rateless_sweep, run_experiment, run_point, simulate_frame, trace_frame, Experiment};
pub use metrics::{Accumulator, RunReport};
pub use optimizer::{compass_search, power_of_two_sweep, CompassParams, Evaluation, MonteCarloObjective, Objective};
pub use protocol::{reconcile, BlockRef, LeakageLedger, PassTag, ReconcileOutcome, Scheduling, Session};
pub use schedules::{build_schedule, BlockSchedule, ScheduleRequest, ShuffleMode, Variant};
