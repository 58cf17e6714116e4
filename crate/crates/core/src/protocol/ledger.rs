use serde::{Deserialize, Serialize};

/// Counters for one protocol phase (a Cascade pass, or all BICONF iterations).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseLedger {
    pub label: String,
    /// Reference-frame parities actually transmitted.
    pub disclosed: u64,
    /// Parities both sides derived without transmission.
    pub inferred: u64,
    pub rounds: u64,
    /// Binary searches that ended in a correction.
    pub searches: u64,
}

/// Leakage and interactivity accounting for one session.
///
/// `parity_bits_disclosed` only counts parities of the reference frame that
/// went over the channel; inferred parities never enter it. `rounds` counts
/// simultaneous bidirectional exchanges.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageLedger {
    pub parity_bits_disclosed: u64,
    pub rounds: u64,
    pub phases: Vec<PhaseLedger>,
}

impl LeakageLedger {
    pub(crate) fn open_phase(&mut self, label: String) -> usize {
        self.phases.push(PhaseLedger { label, ..PhaseLedger::default() });
        self.phases.len() - 1
    }

    pub(crate) fn disclose(&mut self, phase: usize) {
        self.parity_bits_disclosed += 1;
        self.phases[phase].disclosed += 1;
    }

    pub(crate) fn infer(&mut self, phase: usize) {
        self.phases[phase].inferred += 1;
    }

    pub(crate) fn round(&mut self, phase: usize) {
        self.rounds += 1;
        self.phases[phase].rounds += 1;
    }

    pub(crate) fn search_done(&mut self, phase: usize) {
        self.phases[phase].searches += 1;
    }

    /// Disclosed parities per Cascade pass (BICONF excluded).
    pub fn per_pass_disclosed(&self) -> Vec<u64> {
        self.cascade_phases().map(|p| p.disclosed).collect()
    }

    /// Completed binary searches per Cascade pass.
    pub fn per_pass_binary_searches(&self) -> Vec<u64> {
        self.cascade_phases().map(|p| p.searches).collect()
    }

    pub fn per_pass_rounds(&self) -> Vec<u64> {
        self.cascade_phases().map(|p| p.rounds).collect()
    }

    fn cascade_phases(&self) -> impl Iterator<Item = &PhaseLedger> {
        self.phases.iter().filter(|p| p.label.starts_with("pass"))
    }
}
