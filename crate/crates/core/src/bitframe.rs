//! Packed bit frames, block parities and seeded permutations.
//!
//! Both parties hold a [`Frame`] of the same length. Blocks are compared
//! through their parity, and passes after the first look at the frame through
//! a [`Permutation`] that both sides derive from a shared seed.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_pcg::Pcg64Mcg;

use crate::error::{usage, Error, Result};

/// Generator behind every random draw in a simulation.
///
/// PCG64 with a multiplicative congruential state transition (`Pcg64Mcg`,
/// O'Neill 2014). Reports embed [`GENERATOR_ID`] so runs can be reproduced.
pub type SimRng = Pcg64Mcg;

pub const GENERATOR_ID: &str = "pcg64-mcg (rand_pcg 0.9) / splitmix64 seed mixing";

/// Seed a fresh [`SimRng`].
pub fn sim_rng(seed: u64) -> SimRng {
    Pcg64Mcg::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and an index.
///
/// `splitmix64(parent ^ splitmix64(index))`: independent of evaluation order,
/// so serial and parallel runs see the same per-frame streams.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index))
}

/// Fixed-length bit string packed into 64-bit words (bit `i` lives in word
/// `i / 64`, position `i % 64`). Bits past `len` are kept at zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    words: Vec<u64>,
    len: usize,
}

impl Frame {
    pub fn zeros(len: usize) -> Result<Frame> {
        if len == 0 {
            return Err(usage("frame length must be at least 1"));
        }
        Ok(Frame::zeros_unchecked(len))
    }

    pub(crate) fn zeros_unchecked(len: usize) -> Frame {
        Frame { words: vec![0; len.div_ceil(64)], len }
    }

    /// `out[s] = self[positions[s]]`. Positions must be in range.
    pub(crate) fn gather(&self, positions: &[u32]) -> Frame {
        let mut words = Vec::with_capacity(positions.len().div_ceil(64));
        for chunk in positions.chunks(64) {
            let mut w = 0u64;
            for (j, &p) in chunk.iter().enumerate() {
                let p = p as usize;
                w |= ((self.words[p >> 6] >> (p & 63)) & 1) << j;
            }
            words.push(w);
        }
        Frame { words, len: positions.len() }
    }

    /// Uniformly random frame.
    pub fn random<R: RngCore>(len: usize, rng: &mut R) -> Result<Frame> {
        let mut frame = Frame::zeros(len)?;
        for w in frame.words.iter_mut() {
            *w = rng.next_u64();
        }
        frame.clear_tail();
        Ok(frame)
    }

    pub fn from_bits(bits: &[bool]) -> Result<Frame> {
        let mut frame = Frame::zeros(bits.len())?;
        for (i, &b) in bits.iter().enumerate() {
            if b {
                frame.set(i, true);
            }
        }
        Ok(frame)
    }

    fn clear_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i & 63);
        if bit {
            self.words[i >> 6] |= mask;
        } else {
            self.words[i >> 6] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i >> 6] ^= 1u64 << (i & 63);
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Parity of the contiguous range `start..end`, word at a time.
    pub fn range_parity(&self, start: usize, end: usize) -> bool {
        debug_assert!(start <= end && end <= self.len);
        if start >= end {
            return false;
        }
        let (sw, sb) = (start >> 6, start & 63);
        let (ew, eb) = ((end - 1) >> 6, (end - 1) & 63);
        let high_mask = |b: usize| if b == 63 { u64::MAX } else { (1u64 << (b + 1)) - 1 };
        if sw == ew {
            let mask = high_mask(eb) & (u64::MAX << sb);
            return (self.words[sw] & mask).count_ones() & 1 == 1;
        }
        let mut ones = (self.words[sw] & (u64::MAX << sb)).count_ones();
        for w in &self.words[sw + 1..ew] {
            ones += w.count_ones();
        }
        ones += (self.words[ew] & high_mask(eb)).count_ones();
        ones & 1 == 1
    }

    /// Parity (XOR) of the bits at `positions`.
    pub fn parity<I>(&self, positions: I) -> Result<bool>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut acc = false;
        for p in positions {
            if p >= self.len {
                return Err(usage(format!("position {p} out of range for frame of length {}", self.len)));
            }
            acc ^= self.get(p);
        }
        Ok(acc)
    }

    /// Positions where `self` and `other` differ, ascending.
    pub fn diff_positions(&self, other: &Frame) -> Result<Vec<usize>> {
        check_same_len(self, other)?;
        let mut out = Vec::new();
        for (wi, (a, b)) in self.words.iter().zip(&other.words).enumerate() {
            let mut x = a ^ b;
            while x != 0 {
                let tz = x.trailing_zeros() as usize;
                out.push(wi * 64 + tz);
                x &= x - 1;
            }
        }
        Ok(out)
    }
}

fn check_same_len(a: &Frame, b: &Frame) -> Result<()> {
    if a.len != b.len {
        return Err(usage(format!("frame length mismatch: {} vs {}", a.len, b.len)));
    }
    Ok(())
}

/// Number of positions at which the two frames differ.
pub fn hamming_distance(a: &Frame, b: &Frame) -> Result<usize> {
    check_same_len(a, b)?;
    Ok(a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones() as usize).sum())
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "Frame({self})")
        } else {
            write!(f, "Frame(len={}, ones={})", self.len, self.count_ones())
        }
    }
}

impl FromStr for Frame {
    type Err = Error;

    fn from_str(s: &str) -> Result<Frame> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(usage(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Frame::from_bits(&bits)
    }
}

/// Bijection on `0..n`. Slot `s` of the permuted view holds element
/// `mapping[s]` of the original.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    mapping: Vec<u32>,
    seed: u64,
}

impl Permutation {
    pub fn identity(n: usize) -> Permutation {
        Permutation { mapping: (0..n as u32).collect(), seed: 0 }
    }

    pub fn from_mapping(mapping: Vec<u32>, seed: u64) -> Result<Permutation> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            let m = m as usize;
            if m >= n || seen[m] {
                return Err(usage("mapping is not a bijection"));
            }
            seen[m] = true;
        }
        Ok(Permutation { mapping, seed })
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mapping(&self) -> &[u32] {
        &self.mapping
    }

    #[inline]
    pub fn source(&self, slot: usize) -> usize {
        self.mapping[slot] as usize
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0u32; self.mapping.len()];
        for (s, &m) in self.mapping.iter().enumerate() {
            inv[m as usize] = s as u32;
        }
        Permutation { mapping: inv, seed: self.seed }
    }

    /// Permuted copy of `frame`: `out[s] = frame[mapping[s]]`.
    pub fn apply(&self, frame: &Frame) -> Result<Frame> {
        if frame.len() != self.mapping.len() {
            return Err(usage("permutation and frame lengths differ"));
        }
        let mut out = Frame::zeros_unchecked(frame.len());
        for (s, &m) in self.mapping.iter().enumerate() {
            if frame.get(m as usize) {
                out.set(s, true);
            }
        }
        Ok(out)
    }
}

/// Uniform random permutation of `0..n` (Fisher-Yates driven by
/// [`SimRng`] seeded with `seed`).
pub fn make_permutation(seed: u64, n: usize) -> Result<Permutation> {
    if n == 0 {
        return Err(usage("permutation length must be at least 1"));
    }
    let mut mapping: Vec<u32> = (0..n as u32).collect();
    mapping.shuffle(&mut sim_rng(seed));
    Ok(Permutation { mapping, seed })
}

#[cfg(test)]
mod tests {
    use super::{derive_seed, hamming_distance, make_permutation, sim_rng, Frame, Permutation};
    use proptest::prelude::*;
    use rand::RngCore;

    fn naive_parity(bits: &[bool], positions: &[usize]) -> bool {
        positions.iter().filter(|&&p| bits[p]).count() % 2 == 1
    }

    #[test]
    fn parity_small_examples() {
        let f: Frame = "0110".parse().unwrap();
        assert!(!f.parity([0, 1, 2, 3]).unwrap());
        assert!(f.parity([1]).unwrap());
        assert!(f.parity([4]).is_err());
    }

    #[test]
    fn parity_matches_naive_loop_on_random_frames() {
        let mut rng = sim_rng(11);
        for _ in 0..200 {
            let f = Frame::random(16, &mut rng).unwrap();
            let bits: Vec<bool> = f.iter().collect();
            let mask = rng.next_u32() & 0xFFFF;
            let block: Vec<usize> = (0..16).filter(|i| mask >> i & 1 == 1).collect();
            assert_eq!(f.parity(block.iter().copied()).unwrap(), naive_parity(&bits, &block));
        }
    }

    #[test]
    fn range_parity_agrees_with_positional_parity() {
        let mut rng = sim_rng(5);
        let f = Frame::random(300, &mut rng).unwrap();
        for start in [0usize, 1, 63, 64, 65, 127, 200] {
            for end in [start, start + 1, 64, 128, 129, 299, 300] {
                if end < start || end > 300 {
                    continue;
                }
                assert_eq!(f.range_parity(start, end), f.parity(start..end).unwrap(), "{start}..{end}");
            }
        }
    }

    #[test]
    fn hamming_examples() {
        let a: Frame = "0000".parse().unwrap();
        let b: Frame = "1111".parse().unwrap();
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
        assert_eq!(hamming_distance(&a, &b).unwrap(), 4);
        let c: Frame = "000".parse().unwrap();
        assert!(hamming_distance(&a, &c).is_err());
    }

    #[test]
    fn hamming_matches_naive_comparison() {
        let mut rng = sim_rng(3);
        for len in [1usize, 7, 64, 65, 1000] {
            let a = Frame::random(len, &mut rng).unwrap();
            let b = Frame::random(len, &mut rng).unwrap();
            let naive = a.iter().zip(b.iter()).filter(|(x, y)| x != y).count();
            assert_eq!(hamming_distance(&a, &b).unwrap(), naive);
            assert_eq!(a.diff_positions(&b).unwrap().len(), naive);
        }
    }

    #[test]
    fn zero_length_rejected() {
        assert!(Frame::zeros(0).is_err());
        assert!(make_permutation(1, 0).is_err());
    }

    #[test]
    fn single_element_permutation_is_identity() {
        for seed in 0..20 {
            assert_eq!(make_permutation(seed, 1).unwrap().mapping(), &[0]);
        }
    }

    #[test]
    fn first_image_is_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let n = 10;
        let trials = 10_000u64;
        let mut counts = vec![0f64; n];
        for seed in 0..trials {
            let p = make_permutation(derive_seed(99, seed), n).unwrap();
            counts[p.source(0)] += 1.0;
        }
        let expected = trials as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let critical = ChiSquared::new((n - 1) as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    proptest! {
        #[test]
        fn permutation_round_trip_and_bijection(seed in any::<u64>(), n in 1usize..500) {
            let p = make_permutation(seed, n).unwrap();
            prop_assert!(Permutation::from_mapping(p.mapping().to_vec(), seed).is_ok());
            prop_assert_eq!(&p, &make_permutation(seed, n).unwrap());
            let mut rng = sim_rng(seed ^ 1);
            let f = Frame::random(n, &mut rng).unwrap();
            let g = p.apply(&f).unwrap();
            prop_assert_eq!(g.count_ones(), f.count_ones());
            prop_assert_eq!(p.inverse().apply(&g).unwrap(), f);
        }

        #[test]
        fn parity_is_additive_over_disjoint_blocks(seed in any::<u64>(), split in any::<u64>()) {
            let mut rng = sim_rng(seed);
            let f = Frame::random(64, &mut rng).unwrap();
            let (b1, b2): (Vec<usize>, Vec<usize>) = (0..64).partition(|i| split >> i & 1 == 1);
            let whole = f.parity(0..64).unwrap();
            let parts = f.parity(b1).unwrap() ^ f.parity(b2).unwrap();
            prop_assert_eq!(whole, parts);
        }
    }
}
