//! Binary symmetric channel.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::bitframe::{sim_rng, Frame};
use crate::error::{usage, Result};

/// BSC with crossover probability `q` (the QBER).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BscModel {
    pub q: f64,
    pub seed: u64,
}

impl BscModel {
    pub fn new(q: f64, seed: u64) -> Result<BscModel> {
        let model = BscModel { q, seed };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.q) {
            return Err(usage(format!("crossover probability {} outside [0, 0.5]", self.q)));
        }
        Ok(())
    }

    /// Flip threshold on a uniform `u64`: a bit flips when the draw is below it.
    fn threshold(&self) -> u64 {
        // 2^64 * q, exact for q = 0.5 and saturating just below 1.
        (self.q * 18_446_744_073_709_551_616.0) as u64
    }
}

/// Pass `x` through the channel: every bit flips independently with
/// probability `q`. One generator draw per bit, in position order, so frames
/// sharing a seed see nested error patterns as `q` grows.
pub fn transmit(x: &Frame, model: &BscModel) -> Result<Frame> {
    model.validate()?;
    let mut y = x.clone();
    if model.q == 0.0 {
        return Ok(y);
    }
    let threshold = model.threshold();
    let mut rng = sim_rng(model.seed);
    for i in 0..x.len() {
        if rng.next_u64() < threshold {
            y.flip(i);
        }
    }
    Ok(y)
}
