//! Two-party Cascade engine.
//!
//! Both parties are simulated in one [`Session`]: the reference frame (Alice)
//! and the working frame (Bob, corrected in place). Every pass builds a
//! layout, i.e. the pass ordering of the active positions cut into blocks,
//! and keeps gathered copies of both frames in that order so any contiguous
//! block parity is a word-wise popcount.
//!
//! Parity messages are batched: all searches that can advance do so in the
//! same round. Each bisection level of the concurrently running searches is
//! one round.

mod ledger;
mod registry;
mod shuffle;
mod transcript;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bitframe::{derive_seed, hamming_distance, make_permutation, sim_rng, Frame};
use crate::error::{config, usage, Error, Result};
use crate::schedules::{BlockSchedule, ShuffleMode};
use registry::{Node, Registry, NONE};

pub use ledger::{LeakageLedger, PhaseLedger};
pub use registry::Origin;
pub use transcript::{replay, ParityRecord, ReplaySummary, RoundRecord, Transcript, TRANSCRIPT_MAGIC};

/// Mixed into the session seed for BICONF subset draws.
const BICONF_STREAM: u64 = 0xB1C0_4F5E_ED00_0001;

/// Which pass or BICONF iteration a block belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PassTag {
    Cascade(usize),
    Biconf(usize),
}

impl PassTag {
    /// `pass=3` or `biconf=2`, as used in transcripts and ledger phases.
    pub fn phase_label(&self) -> String {
        match self {
            PassTag::Cascade(i) => format!("pass={i}"),
            PassTag::Biconf(j) => format!("biconf={j}"),
        }
    }
}

impl fmt::Display for PassTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PassTag::Cascade(i) => write!(f, "p{i}"),
            PassTag::Biconf(j) => write!(f, "b{j}"),
        }
    }
}

impl FromStr for PassTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<PassTag> {
        let bad = || usage(format!("bad pass tag {s:?}, expected p<i> or b<j>"));
        let (kind, num) = s.split_at_checked(1).ok_or_else(bad)?;
        let idx: usize = num.parse().map_err(|_| bad())?;
        match kind {
            "p" => Ok(PassTag::Cascade(idx)),
            "b" => Ok(PassTag::Biconf(idx)),
            _ => Err(bad()),
        }
    }
}

/// A contiguous slot range `start..end` in the ordering of one pass.
/// [`Session::resolve`] maps it back to frame positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockRef {
    pub tag: PassTag,
    pub start: usize,
    pub end: usize,
}

impl BlockRef {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl fmt::Display for BlockRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}-{}", self.tag, self.start, self.end)
    }
}

impl FromStr for BlockRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<BlockRef> {
        let bad = || usage(format!("bad block reference {s:?}, expected e.g. p2:10-20"));
        let (tag, range) = s.split_once(':').ok_or_else(bad)?;
        let (a, b) = range.split_once('-').ok_or_else(bad)?;
        let block =
            BlockRef { tag: tag.parse()?, start: a.parse().map_err(|_| bad())?, end: b.parse().map_err(|_| bad())? };
        if block.is_empty() {
            return Err(bad());
        }
        Ok(block)
    }
}

/// How odd blocks are turned into searches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheduling {
    /// Every odd block starts a search as soon as it is seen, whatever pass
    /// it belongs to.
    Parallel,
    /// Odd blocks are served in waves: all odd blocks of the lowest pass are
    /// searched together, and the next wave starts once that one is done.
    PassOrdered,
}

impl Default for Scheduling {
    /// Pass-ordered waves, with or without sub-block reuse. This is the
    /// policy whose channel-use counts line up with published figures.
    fn default() -> Scheduling {
        Scheduling::PassOrdered
    }
}

/// Result of one reconciliation.
#[derive(Clone, Debug)]
pub struct ReconcileOutcome {
    pub corrected_frame: Frame,
    /// Parity bits disclosed by the reference side.
    pub m: u64,
    pub rounds: u64,
    pub residual_errors: usize,
    pub success: bool,
    /// Errors left after each completed Cascade pass.
    pub pass_residuals: Vec<usize>,
    pub ledger: LeakageLedger,
}

/// One registry entry as seen from outside.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisteredBlock {
    pub block: BlockRef,
    pub origin: Origin,
    pub reference_parity: bool,
    pub working_parity: bool,
}

impl RegisteredBlock {
    pub fn is_odd(&self) -> bool {
        self.reference_parity != self.working_parity
    }
}

#[derive(Clone, Copy, Debug)]
enum Geometry {
    /// Blocks of `k` slots, the last one possibly shorter.
    Uniform(u32),
    /// Two blocks, `0..at` and `at..len`.
    Split(u32),
}

#[derive(Debug)]
struct Layout {
    tag: PassTag,
    /// slot -> frame position
    slots: Vec<u32>,
    /// frame position -> slot, `NONE` if not part of this layout
    inv: Vec<u32>,
    geometry: Geometry,
    reference: Frame,
    working: Frame,
    /// Top-level registry entry per block (`NONE` when unregistered).
    roots: Vec<u32>,
    live: bool,
}

impl Layout {
    fn len(&self) -> u32 {
        self.slots.len() as u32
    }

    fn block_count(&self) -> usize {
        match self.geometry {
            Geometry::Uniform(k) => self.len().div_ceil(k) as usize,
            Geometry::Split(_) => 2,
        }
    }

    fn block_of(&self, slot: u32) -> usize {
        match self.geometry {
            Geometry::Uniform(k) => (slot / k) as usize,
            Geometry::Split(at) => (slot >= at) as usize,
        }
    }

    fn block_range(&self, b: usize) -> (u32, u32) {
        match self.geometry {
            Geometry::Uniform(k) => {
                let s = b as u32 * k;
                (s, (s + k).min(self.len()))
            }
            Geometry::Split(at) if b == 0 => (0, at),
            Geometry::Split(at) => (at, self.len()),
        }
    }

    fn odd(&self, start: u32, end: u32) -> bool {
        let (s, e) = (start as usize, end as usize);
        self.reference.range_parity(s, e) != self.working.range_parity(s, e)
    }
}

#[derive(Clone, Copy, Debug)]
struct Search {
    layout: u32,
    /// Deepest registered block containing the range. Equal to the range
    /// when sub-blocks are registered, otherwise the top-level block.
    node: u32,
    start: u32,
    end: u32,
    origin_len: u32,
    seq: u32,
}

/// The protocol state of one reconciliation.
#[derive(Debug)]
pub struct Session {
    reference: Frame,
    working: Frame,
    schedule: BlockSchedule,
    seed: u64,
    scheduling: Scheduling,
    layouts: Vec<Layout>,
    registry: Registry,
    ledger: LeakageLedger,
    transcript: Option<Transcript>,
    active: Vec<u32>,
    known: Vec<bool>,
    passes_done: usize,
    biconf_iters: usize,
    phase: Option<usize>,
    in_biconf: bool,
    tag: PassTag,
    pass_residuals: Vec<usize>,
    searches: Vec<Search>,
    corrections: u64,
    last_correction: Option<usize>,
    seq: u32,
    elide_clean: bool,
}

impl Session {
    pub fn new(x: &Frame, y: &Frame, schedule: &BlockSchedule, seed: u64) -> Result<Session> {
        if x.len() != y.len() {
            return Err(usage(format!("frame lengths differ ({} vs {})", x.len(), y.len())));
        }
        schedule.validate()?;
        if schedule.n != x.len() {
            return Err(config(format!("schedule built for n={} but frames have length {}", schedule.n, x.len())));
        }
        let n = x.len();
        Ok(Session {
            reference: x.clone(),
            working: y.clone(),
            schedule: schedule.clone(),
            seed,
            scheduling: Scheduling::default(),
            layouts: Vec::new(),
            registry: Registry::default(),
            ledger: LeakageLedger::default(),
            transcript: None,
            active: (0..n as u32).collect(),
            known: vec![false; n],
            passes_done: 0,
            biconf_iters: 0,
            phase: None,
            in_biconf: false,
            tag: PassTag::Cascade(0),
            pass_residuals: Vec::new(),
            searches: Vec::new(),
            corrections: 0,
            last_correction: None,
            seq: 0,
            elide_clean: false,
        })
    }

    /// Record every round in a [`Transcript`].
    pub fn with_transcript(mut self) -> Self {
        self.transcript = Some(Transcript {
            n: self.reference.len(),
            seed: self.seed,
            schedule: self.schedule.describe(),
            ..Transcript::default()
        });
        self
    }

    pub fn with_scheduling(mut self, scheduling: Scheduling) -> Self {
        self.scheduling = scheduling;
        self
    }

    /// Once the frames agree, account later passes and BICONF iterations
    /// without building their layouts. Every total in the outcome is
    /// unchanged (no parity can mismatch any more), but skipped layouts are
    /// neither registered nor transcribed, so this is ignored when a
    /// transcript is kept or singletons are discarded.
    pub fn with_clean_pass_elision(mut self, on: bool) -> Self {
        self.elide_clean = on;
        self
    }

    fn can_elide(&self) -> bool {
        self.elide_clean
            && self.transcript.is_none()
            && !self.schedule.discard_singletons
            && self.working == self.reference
    }

    pub fn scheduling(&self) -> Scheduling {
        self.scheduling
    }

    pub fn schedule(&self) -> &BlockSchedule {
        &self.schedule
    }

    pub fn reference(&self) -> &Frame {
        &self.reference
    }

    pub fn working(&self) -> &Frame {
        &self.working
    }

    pub fn ledger(&self) -> &LeakageLedger {
        &self.ledger
    }

    pub fn passes_done(&self) -> usize {
        self.passes_done
    }

    pub fn pass_residuals(&self) -> &[usize] {
        &self.pass_residuals
    }

    /// Errors still present (simulation-only view of both frames).
    pub fn residual_errors(&self) -> usize {
        hamming_distance(&self.reference, &self.working).unwrap_or(usize::MAX)
    }

    /// Number of positions still taking part in new passes.
    pub fn effective_len(&self) -> usize {
        self.active.len()
    }

    /// Positions whose value is pinned down by the parities exchanged so far
    /// (size-1 blocks and bisection halves).
    pub fn known_positions(&self) -> Vec<usize> {
        (0..self.known.len()).filter(|&p| self.known[p]).collect()
    }

    /// Transcript so far, with totals filled in from the ledger.
    pub fn transcript(&self) -> Option<Transcript> {
        self.transcript.as_ref().map(|t| {
            let mut t = t.clone();
            t.m = self.ledger.parity_bits_disclosed;
            t.total_rounds = self.ledger.rounds;
            t.residual = Some(self.residual_errors());
            t
        })
    }

    /// Run every pass of the schedule, then BICONF if configured.
    pub fn run_all(&mut self) -> Result<()> {
        for i in self.passes_done + 1..=self.schedule.k.len() {
            self.run_pass(i)?;
        }
        if self.schedule.biconf.is_some() {
            self.run_biconf()?;
        }
        Ok(())
    }

    /// Exchange the top-level parities of pass `i` and correct until no
    /// registered block is odd.
    pub fn run_pass(&mut self, i: usize) -> Result<()> {
        if i != self.passes_done + 1 {
            return Err(usage(format!("pass {i} requested but next pass is {}", self.passes_done + 1)));
        }
        if i > self.schedule.k.len() {
            return Err(usage(format!("schedule has only {} passes", self.schedule.k.len())));
        }
        let tag = PassTag::Cascade(i);
        self.phase = Some(self.ledger.open_phase(tag.phase_label()));
        self.in_biconf = false;
        self.tag = tag;
        if self.can_elide() {
            let k = self.schedule.k[i - 1].clamp(1, self.active.len());
            let nb = self.active.len().div_ceil(k);
            let phase = self.phase();
            let sent = if i >= 2 { nb - 1 } else { nb };
            if sent > 0 {
                self.ledger.round(phase);
            }
            for _ in 0..sent {
                self.ledger.disclose(phase);
            }
            if i >= 2 {
                self.ledger.infer(phase);
            }
        } else if !self.active.is_empty() {
            let k = self.schedule.k[i - 1].clamp(1, self.active.len());
            let slots = self.pass_order(i, k);
            let li = self.add_layout(tag, slots, Geometry::Uniform(k as u32));
            let nb = self.layouts[li].block_count();
            // Total parity is known once pass 1 is done, so the last block
            // of every later pass follows from the others.
            let blocks: Vec<(usize, bool)> = (0..nb).map(|b| (b, !(i >= 2 && b + 1 == nb))).collect();
            self.exchange(li, &blocks, Origin::TopLevel);
            self.drain_from(0);
        }
        self.passes_done = i;
        let residual = self.residual_errors();
        self.pass_residuals.push(residual);
        if self.schedule.discard_singletons {
            self.discard_singletons();
        }
        Ok(())
    }

    /// Drop positions with known value from later passes. Returns how many
    /// were removed.
    pub fn discard_singletons(&mut self) -> usize {
        let before = self.active.len();
        let known = &self.known;
        self.active.retain(|&p| !known[p as usize]);
        before - self.active.len()
    }

    /// Run BICONF iterations until `s` in a row find nothing.
    pub fn run_biconf(&mut self) -> Result<()> {
        let s = self.schedule.biconf.map(|b| b.s).ok_or_else(|| usage("schedule has no BICONF stage"))?;
        let mut clean = 0;
        while clean < s {
            if self.biconf_round()? {
                clean = 0;
            } else {
                clean += 1;
            }
        }
        Ok(())
    }

    /// One BICONF iteration. Returns whether an error was corrected.
    ///
    /// Only the subset parity is sent; the complement parity follows from the
    /// total parity when at least one pass has run. Corrections here do not
    /// trigger searches in the pass blocks.
    pub fn biconf_round(&mut self) -> Result<bool> {
        if self.active.is_empty() {
            return Ok(false);
        }
        self.biconf_iters += 1;
        let j = self.biconf_iters;
        let tag = PassTag::Biconf(j);
        if !self.in_biconf {
            self.phase = Some(self.ledger.open_phase("biconf".into()));
            self.in_biconf = true;
        }
        self.tag = tag;
        if self.can_elide() {
            let phase = self.phase();
            self.ledger.round(phase);
            self.ledger.disclose(phase);
            if self.passes_done >= 1 {
                self.ledger.infer(phase);
            }
            return Ok(false);
        }
        let mut rng = sim_rng(derive_seed(self.seed ^ BICONF_STREAM, j as u64));
        let mut subset = Vec::with_capacity(self.active.len());
        let mut rest = Vec::new();
        for &p in &self.active {
            if rng.random::<bool>() {
                subset.push(p);
            } else {
                rest.push(p);
            }
        }
        let at = subset.len();
        let len = self.active.len();
        subset.extend(rest);
        let li = self.add_layout(tag, subset, Geometry::Split(at as u32));
        let mut blocks = Vec::new();
        if at > 0 {
            blocks.push((0, true));
        }
        if at < len && self.passes_done >= 1 {
            blocks.push((1, at == 0));
        }
        self.exchange(li, &blocks, Origin::BiconfSubset);
        let before = self.corrections;
        self.drain_from(li as u32);
        let l = &mut self.layouts[li];
        l.live = false;
        l.inv = Vec::new();
        Ok(self.corrections > before)
    }

    /// Correct until no registered block is odd.
    pub fn drain(&mut self) {
        self.ensure_phase();
        self.drain_from(0);
    }

    /// Bisect one registered odd block down to a single position and flip
    /// it. Other blocks made odd by the flip are left for [`Session::drain`].
    pub fn binary_search_block(&mut self, block: &BlockRef) -> Result<usize> {
        let id = self.find_node(block).ok_or_else(|| usage(format!("block {block} is not registered")))?;
        if !self.registry.nodes[id as usize].is_odd() {
            return Err(usage(format!("block {block} has even parity")));
        }
        self.ensure_phase();
        let leaf = self.registry.odd_leaf(id);
        let node = &self.registry.nodes[leaf as usize];
        if node.len() == 1 {
            let pos = self.layouts[node.layout as usize].slots[node.start as usize] as usize;
            self.correct(pos);
            return Ok(pos);
        }
        let saved = std::mem::take(&mut self.searches);
        self.start_search(leaf);
        self.last_correction = None;
        while !self.searches.is_empty() {
            self.step_level();
        }
        self.searches = saved;
        self.last_correction.ok_or_else(|| usage(format!("search on {block} ended without a correction")))
    }

    /// Flip a working-frame bit outside the protocol (test hook).
    pub fn inject_flip(&mut self, pos: usize) -> Result<()> {
        if pos >= self.working.len() {
            return Err(usage(format!("position {pos} out of range")));
        }
        self.apply_flip(pos);
        Ok(())
    }

    /// Frame positions covered by a block.
    pub fn resolve(&self, block: &BlockRef) -> Result<Vec<usize>> {
        let l = self
            .layouts
            .iter()
            .find(|l| l.tag == block.tag && l.live)
            .ok_or_else(|| usage(format!("no live layout for {}", block.tag)))?;
        if block.is_empty() || block.end > l.slots.len() {
            return Err(usage(format!("block {block} out of range")));
        }
        Ok(l.slots[block.start..block.end].iter().map(|&p| p as usize).collect())
    }

    pub fn registered_blocks(&self) -> Vec<RegisteredBlock> {
        self.registry
            .nodes
            .iter()
            .filter(|nd| self.layouts[nd.layout as usize].live)
            .map(|nd| RegisteredBlock {
                block: BlockRef {
                    tag: self.layouts[nd.layout as usize].tag,
                    start: nd.start as usize,
                    end: nd.end as usize,
                },
                origin: nd.origin,
                reference_parity: nd.ref_parity,
                working_parity: nd.work_parity,
            })
            .collect()
    }

    pub fn odd_blocks(&self) -> Vec<BlockRef> {
        self.registered_blocks().into_iter().filter(RegisteredBlock::is_odd).map(|b| b.block).collect()
    }

    /// Recompute every stored parity from the frames. Returns a description
    /// of each mismatch; empty means coherent.
    pub fn check_registry(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for l in self.layouts.iter().filter(|l| l.live) {
            if self.reference.gather(&l.slots) != l.reference {
                problems.push(format!("{}: reference copy out of sync", l.tag));
            }
            if self.working.gather(&l.slots) != l.working {
                problems.push(format!("{}: working copy out of sync", l.tag));
            }
        }
        for nd in &self.registry.nodes {
            let l = &self.layouts[nd.layout as usize];
            if !l.live {
                continue;
            }
            let positions = &l.slots[nd.start as usize..nd.end as usize];
            let parity = |f: &Frame| positions.iter().fold(false, |acc, &p| acc ^ f.get(p as usize));
            if parity(&self.reference) != nd.ref_parity || parity(&self.working) != nd.work_parity {
                problems.push(format!("{}:{}-{} stored parities disagree with frames", l.tag, nd.start, nd.end));
            }
        }
        problems
    }

    pub fn outcome(self) -> ReconcileOutcome {
        let residual = self.residual_errors();
        ReconcileOutcome {
            m: self.ledger.parity_bits_disclosed,
            rounds: self.ledger.rounds,
            residual_errors: residual,
            success: residual == 0,
            pass_residuals: self.pass_residuals,
            ledger: self.ledger,
            corrected_frame: self.working,
        }
    }

    fn ensure_phase(&mut self) {
        if self.phase.is_none() {
            self.phase = Some(self.ledger.open_phase("drain".into()));
        }
    }

    fn phase(&self) -> usize {
        self.phase.unwrap_or(0)
    }

    fn pass_order(&self, i: usize, k: usize) -> Vec<u32> {
        if i == 1 {
            return self.active.clone();
        }
        let seed = derive_seed(self.seed, i as u64);
        if self.schedule.shuffle_mode == ShuffleMode::ConstrainedRandom {
            if let Some(prev) = self.layouts.iter().rev().find(|l| l.tag == PassTag::Cascade(i - 1)) {
                let inv_active = {
                    let mut a = vec![false; self.reference.len()];
                    for &p in &self.active {
                        a[p as usize] = true;
                    }
                    a
                };
                let groups: Vec<Vec<u32>> = (0..prev.block_count())
                    .map(|b| {
                        let (s, e) = prev.block_range(b);
                        prev.slots[s as usize..e as usize].iter().copied().filter(|&p| inv_active[p as usize]).collect()
                    })
                    .collect();
                let mut rng = sim_rng(seed);
                if let Some(order) = shuffle::constrained_order(&groups, k, &mut rng) {
                    return order;
                }
            }
        }
        match make_permutation(seed, self.active.len()) {
            Ok(perm) => perm.mapping().iter().map(|&m| self.active[m as usize]).collect(),
            Err(_) => self.active.clone(),
        }
    }

    fn add_layout(&mut self, tag: PassTag, slots: Vec<u32>, geometry: Geometry) -> usize {
        let mut inv = vec![NONE; self.reference.len()];
        for (s, &p) in slots.iter().enumerate() {
            inv[p as usize] = s as u32;
        }
        let reference = self.reference.gather(&slots);
        let mut working = reference.clone();
        for p in self.reference.diff_positions(&self.working).unwrap_or_default() {
            let s = inv[p];
            if s != NONE {
                working.flip(s as usize);
            }
        }
        let mut layout = Layout { tag, slots, inv, geometry, reference, working, roots: Vec::new(), live: true };
        layout.roots = vec![NONE; layout.block_count()];
        self.layouts.push(layout);
        self.layouts.len() - 1
    }

    /// Register the listed blocks `(index, sent)` of a fresh layout in one
    /// round. Unsent blocks are inferred by both sides.
    fn exchange(&mut self, li: usize, blocks: &[(usize, bool)], origin: Origin) {
        let phase = self.phase();
        let any_sent = blocks.iter().any(|&(_, sent)| sent);
        if any_sent {
            self.ledger.round(phase);
            if let Some(t) = &mut self.transcript {
                t.open_round(self.tag);
            }
        }
        for &(b, sent) in blocks {
            let l = &self.layouts[li];
            let (s, e) = l.block_range(b);
            let ref_parity = l.reference.range_parity(s as usize, e as usize);
            let work_parity = l.working.range_parity(s as usize, e as usize);
            if sent {
                self.ledger.disclose(phase);
            } else {
                self.ledger.infer(phase);
            }
            if any_sent {
                if let Some(t) = &mut self.transcript {
                    t.record(ParityRecord {
                        block: BlockRef { tag: l.tag, start: s as usize, end: e as usize },
                        alice: ref_parity,
                        bob: work_parity,
                        sent,
                    });
                }
            }
            if e - s == 1 {
                self.known[l.slots[s as usize] as usize] = true;
            }
            let id = self.registry.add(Node {
                layout: li as u32,
                start: s,
                end: e,
                children: NONE,
                ref_parity,
                work_parity,
                searching: false,
                origin,
            });
            self.layouts[li].roots[b] = id;
        }
    }

    /// Flip a working bit and update every copy and registered parity.
    fn apply_flip(&mut self, pos: usize) {
        self.working.flip(pos);
        for l in self.layouts.iter_mut().filter(|l| l.live) {
            let s = l.inv[pos];
            if s == NONE {
                continue;
            }
            l.working.flip(s as usize);
            let root = l.roots[l.block_of(s)];
            if root != NONE {
                self.registry.toggle_path(root, s);
            }
        }
    }

    fn correct(&mut self, pos: usize) {
        self.apply_flip(pos);
        self.corrections += 1;
        self.last_correction = Some(pos);
        if let Some(t) = &mut self.transcript {
            t.flip(pos);
        }
    }

    fn drain_from(&mut self, min_layout: u32) {
        loop {
            self.start_searches(min_layout);
            if self.searches.is_empty() {
                break;
            }
            self.step_level();
        }
        self.registry.pending.clear();
    }

    fn start_search(&mut self, leaf: u32) {
        let node = &mut self.registry.nodes[leaf as usize];
        node.searching = true;
        self.searches.push(Search {
            layout: node.layout,
            node: leaf,
            start: node.start,
            end: node.end,
            origin_len: node.len(),
            seq: self.seq,
        });
        self.seq += 1;
    }

    /// Turn pending odd blocks into searches. Odd registered blocks of size
    /// one are corrected on the spot, which may queue further blocks.
    fn start_searches(&mut self, min_layout: u32) {
        loop {
            if self.scheduling == Scheduling::PassOrdered && !self.searches.is_empty() {
                return;
            }
            let mut pending = std::mem::take(&mut self.registry.pending);
            pending.sort_unstable();
            pending.dedup();
            pending.retain(|&id| {
                let nd = &self.registry.nodes[id as usize];
                nd.layout >= min_layout && self.layouts[nd.layout as usize].live && nd.is_odd()
            });
            let wave = match self.scheduling {
                Scheduling::PassOrdered => pending.iter().map(|&id| self.registry.nodes[id as usize].layout).min(),
                Scheduling::Parallel => None,
            };
            let mut immediate = Vec::new();
            for id in pending {
                if wave.is_some_and(|w| self.registry.nodes[id as usize].layout != w) {
                    self.registry.pending.push(id);
                    continue;
                }
                let leaf = self.registry.odd_leaf(id);
                let node = &self.registry.nodes[leaf as usize];
                if node.searching {
                    continue;
                }
                if node.len() == 1 {
                    immediate.push(leaf);
                } else {
                    self.start_search(leaf);
                }
            }
            if immediate.is_empty() {
                return;
            }
            for leaf in immediate {
                let nd = &self.registry.nodes[leaf as usize];
                if nd.is_odd() {
                    let pos = self.layouts[nd.layout as usize].slots[nd.start as usize];
                    self.correct(pos as usize);
                }
            }
        }
    }

    fn exact(&self, s: &Search) -> bool {
        let nd = &self.registry.nodes[s.node as usize];
        nd.start == s.start && nd.end == s.end
    }

    /// One round: every active search goes down one level, searches that
    /// reach a single position correct it, and searches whose range turned
    /// even are dropped.
    fn step_level(&mut self) {
        let phase = self.phase();
        self.ledger.round(phase);
        if let Some(t) = &mut self.transcript {
            t.open_round(self.tag);
        }
        let reuse = self.schedule.reuse_subblocks;
        let mut finished = Vec::new();
        for si in 0..self.searches.len() {
            let mut s = self.searches[si];
            let exact = self.exact(&s);
            let mid = s.start + (s.end - s.start).div_ceil(2);
            let children = self.registry.nodes[s.node as usize].children;
            let go_left = if exact && children != NONE {
                self.registry.nodes[children as usize].is_odd()
            } else {
                let l = &self.layouts[s.layout as usize];
                let (st, md, en) = (s.start as usize, mid as usize, s.end as usize);
                let (ra, wa) = (l.reference.range_parity(st, md), l.working.range_parity(st, md));
                let (rb, wb) = (l.reference.range_parity(md, en), l.working.range_parity(md, en));
                self.ledger.disclose(phase);
                self.ledger.infer(phase);
                if let Some(t) = &mut self.transcript {
                    t.split();
                    t.record(ParityRecord {
                        block: BlockRef { tag: l.tag, start: st, end: md },
                        alice: ra,
                        bob: wa,
                        sent: true,
                    });
                    t.record(ParityRecord {
                        block: BlockRef { tag: l.tag, start: md, end: en },
                        alice: rb,
                        bob: wb,
                        sent: false,
                    });
                }
                if md - st == 1 {
                    self.known[l.slots[st] as usize] = true;
                }
                if en - md == 1 {
                    self.known[l.slots[md] as usize] = true;
                }
                if reuse && exact {
                    let half = |start, end, ref_parity, work_parity| Node {
                        layout: s.layout,
                        start,
                        end,
                        children: NONE,
                        ref_parity,
                        work_parity,
                        searching: false,
                        origin: Origin::Dichotomic,
                    };
                    self.registry.add_children(s.node, half(s.start, mid, ra, wa), half(mid, s.end, rb, wb));
                }
                ra != wa
            };
            if go_left {
                s.end = mid;
            } else {
                s.start = mid;
            }
            if exact {
                let left = self.registry.nodes[s.node as usize].children;
                if left != NONE {
                    self.registry.nodes[s.node as usize].searching = false;
                    s.node = if go_left { left } else { left + 1 };
                    self.registry.nodes[s.node as usize].searching = true;
                }
            }
            self.searches[si] = s;
            if s.end - s.start == 1 {
                finished.push(si);
            }
        }
        if finished.is_empty() {
            return;
        }
        // When several searches land in the same level, the one that
        // started from the smallest block corrects first.
        finished.sort_by_key(|&si| (self.searches[si].origin_len, self.searches[si].seq));
        let mut done = vec![false; self.searches.len()];
        for si in finished {
            done[si] = true;
            let s = self.searches[si];
            let l = &self.layouts[s.layout as usize];
            let slot = s.start as usize;
            let still_wrong = l.reference.get(slot) != l.working.get(slot);
            let pos = l.slots[slot] as usize;
            if still_wrong {
                self.correct(pos);
                self.ledger.search_done(phase);
            }
            self.release(s.node);
        }
        let mut kept = Vec::with_capacity(self.searches.len());
        for (si, s) in std::mem::take(&mut self.searches).into_iter().enumerate() {
            if done[si] {
                continue;
            }
            let odd = if self.exact(&s) {
                self.registry.nodes[s.node as usize].is_odd()
            } else {
                self.layouts[s.layout as usize].odd(s.start, s.end)
            };
            if odd {
                kept.push(s);
            } else {
                self.release(s.node);
            }
        }
        self.searches = kept;
    }

    fn release(&mut self, id: u32) {
        let nd = &mut self.registry.nodes[id as usize];
        nd.searching = false;
        if nd.is_odd() {
            self.registry.pending.push(id);
        }
    }

    fn find_node(&self, block: &BlockRef) -> Option<u32> {
        let l = self.layouts.iter().position(|l| l.tag == block.tag && l.live)?;
        let layout = &self.layouts[l];
        if block.is_empty() || block.end > layout.slots.len() {
            return None;
        }
        let (start, end) = (block.start as u32, block.end as u32);
        let mut id = layout.roots[layout.block_of(start)];
        while id != NONE {
            let nd = &self.registry.nodes[id as usize];
            if nd.start == start && nd.end == end {
                return Some(id);
            }
            if !(nd.start <= start && end <= nd.end) || nd.children == NONE {
                return None;
            }
            let left = nd.children;
            id = if start < self.registry.nodes[left as usize].end { left } else { left + 1 };
        }
        None
    }
}

/// Reconcile `y` towards `x` with the given schedule.
pub fn reconcile(x: &Frame, y: &Frame, schedule: &BlockSchedule, seed: u64) -> Result<ReconcileOutcome> {
    let mut session = Session::new(x, y, schedule, seed)?.with_clean_pass_elision(true);
    session.run_all()?;
    Ok(session.outcome())
}
