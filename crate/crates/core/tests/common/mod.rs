//! Naive reference simulator shared by the oracle and acceptance tests.
//!
//! It keeps both bit strings as plain `Vec<bool>`, stores each
//! block as an explicit list of positions and recomputes every parity by a
//! loop. It follows the same protocol rules as the engine: the last block of
//! every pass after the first is inferred, one bisection level of all
//! running searches per round, odd blocks of the lowest pass are searched
//! first, and searches reaching a single bit flip it in order of their
//! starting block size.

#![allow(dead_code)]

use cascade_core::{derive_seed, make_permutation, reconcile, BlockSchedule, Frame, Session};

struct Block {
    pass: usize,
    positions: Vec<usize>,
    children: Option<(usize, usize)>,
}

struct Search {
    node: usize,
    positions: Vec<usize>,
    origin_len: usize,
    seq: usize,
}

pub struct Reference {
    alice: Vec<bool>,
    pub bob: Vec<bool>,
    reuse: bool,
    blocks: Vec<Block>,
    searches: Vec<Search>,
    pub m: u64,
    pub rounds: u64,
    seq: usize,
}

impl Reference {
    fn odd(&self, positions: &[usize]) -> bool {
        positions.iter().filter(|&&p| self.alice[p] != self.bob[p]).count() % 2 == 1
    }

    fn odd_leaf(&self, mut id: usize) -> usize {
        while let Some((l, r)) = self.blocks[id].children {
            id = if self.odd(&self.blocks[l].positions) { l } else { r };
        }
        id
    }

    pub fn run(x: &[bool], y: &[bool], schedule: &BlockSchedule, seed: u64) -> Reference {
        let n = x.len();
        let mut r = Reference {
            alice: x.to_vec(),
            bob: y.to_vec(),
            reuse: schedule.reuse_subblocks,
            blocks: Vec::new(),
            searches: Vec::new(),
            m: 0,
            rounds: 0,
            seq: 0,
        };
        for (i, &k) in schedule.k.iter().enumerate() {
            let pass = i + 1;
            let order: Vec<usize> = if pass == 1 {
                (0..n).collect()
            } else {
                let perm = make_permutation(derive_seed(seed, pass as u64), n).unwrap();
                perm.mapping().iter().map(|&p| p as usize).collect()
            };
            let k = k.clamp(1, n);
            let chunks: Vec<&[usize]> = order.chunks(k).collect();
            let sent = chunks.len() - usize::from(pass >= 2);
            if sent > 0 {
                r.rounds += 1;
            }
            r.m += sent as u64;
            for c in chunks {
                r.blocks.push(Block { pass, positions: c.to_vec(), children: None });
            }
            r.drain();
        }
        r
    }

    fn drain(&mut self) {
        loop {
            if self.searches.is_empty() {
                self.start_searches();
            }
            if self.searches.is_empty() {
                return;
            }
            self.step();
        }
    }

    fn start_searches(&mut self) {
        loop {
            let odd: Vec<usize> = (0..self.blocks.len()).filter(|&id| self.odd(&self.blocks[id].positions)).collect();
            let Some(wave) = odd.iter().map(|&id| self.blocks[id].pass).min() else { return };
            let mut chosen: Vec<usize> = Vec::new();
            let mut immediate = Vec::new();
            for id in odd.into_iter().filter(|&id| self.blocks[id].pass == wave) {
                let leaf = self.odd_leaf(id);
                if chosen.contains(&leaf) {
                    continue;
                }
                chosen.push(leaf);
                let positions = self.blocks[leaf].positions.clone();
                if positions.len() == 1 {
                    immediate.push(leaf);
                } else {
                    self.searches.push(Search { node: leaf, origin_len: positions.len(), positions, seq: self.seq });
                    self.seq += 1;
                }
            }
            if immediate.is_empty() {
                return;
            }
            for leaf in immediate {
                let p = self.blocks[leaf].positions[0];
                if self.alice[p] != self.bob[p] {
                    self.bob[p] = !self.bob[p];
                }
            }
            if !self.searches.is_empty() {
                return;
            }
        }
    }

    fn step(&mut self) {
        self.rounds += 1;
        let mut searches = std::mem::take(&mut self.searches);
        for s in searches.iter_mut() {
            let exact = self.blocks[s.node].positions == s.positions;
            let mid = s.positions.len().div_ceil(2);
            let (left, right) = (s.positions[..mid].to_vec(), s.positions[mid..].to_vec());
            if !(exact && self.blocks[s.node].children.is_some()) {
                self.m += 1;
                if self.reuse && exact {
                    let pass = self.blocks[s.node].pass;
                    let l = self.blocks.len();
                    self.blocks.push(Block { pass, positions: left.clone(), children: None });
                    self.blocks.push(Block { pass, positions: right.clone(), children: None });
                    self.blocks[s.node].children = Some((l, l + 1));
                }
            }
            let go_left = self.odd(&left);
            s.positions = if go_left { left } else { right };
            if exact {
                if let Some((l, r)) = self.blocks[s.node].children {
                    s.node = if go_left { l } else { r };
                }
            }
        }
        let (mut finished, running): (Vec<Search>, Vec<Search>) =
            searches.into_iter().partition(|s| s.positions.len() == 1);
        finished.sort_by_key(|s| (s.origin_len, s.seq));
        for s in finished {
            let p = s.positions[0];
            if self.alice[p] != self.bob[p] {
                self.bob[p] = !self.bob[p];
            }
        }
        self.searches = running.into_iter().filter(|s| self.odd(&s.positions)).collect();
    }
}

pub fn bits(f: &Frame) -> Vec<bool> {
    f.iter().collect()
}

/// Compare engine (full and fast path) with the reference on one frame pair.
pub fn check(x: &Frame, y: &Frame, schedule: &BlockSchedule, seed: u64) -> Result<(), String> {
    let reference = Reference::run(&bits(x), &bits(y), schedule, seed);
    let mut session = Session::new(x, y, schedule, seed).map_err(|e| e.to_string())?;
    session.run_all().map_err(|e| e.to_string())?;
    let out = session.outcome();
    if bits(&out.corrected_frame) != reference.bob {
        return Err("final frame differs".into());
    }
    if (out.m, out.rounds) != (reference.m, reference.rounds) {
        return Err(format!(
            "engine m={} rounds={}, reference m={} rounds={}",
            out.m, out.rounds, reference.m, reference.rounds
        ));
    }
    let fast = reconcile(x, y, schedule, seed).map_err(|e| e.to_string())?;
    if (fast.m, fast.rounds, &fast.corrected_frame) != (out.m, out.rounds, &out.corrected_frame) {
        return Err("fast path differs from full engine".into());
    }
    Ok(())
}

/// Whether errors at `a` and `b` share a block in every pass.
pub fn always_together(schedule: &BlockSchedule, seed: u64, a: usize, b: usize) -> bool {
    let n = schedule.n;
    schedule.k.iter().enumerate().all(|(i, &k)| {
        let slot = |p: usize| {
            if i == 0 {
                p
            } else {
                let perm = make_permutation(derive_seed(seed, i as u64 + 1), n).unwrap();
                perm.mapping().iter().position(|&m| m as usize == p).unwrap()
            }
        };
        slot(a) / k.min(n) == slot(b) / k.min(n)
    })
}
