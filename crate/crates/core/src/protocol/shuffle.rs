//! Constrained inter-pass shuffling.
//!
//! Bits that shared a top-level block in the previous pass are spread over
//! distinct blocks of the next pass. Blocks are filled greedily: each group
//! takes the blocks with the most free capacity, ties broken at random. For
//! 0-1 assignments with fixed margins this greedy rule finds a solution
//! whenever one exists (Gale-Ryser), so a `None` really means "infeasible".

use rand::seq::SliceRandom;
use rand::Rng;

use crate::bitframe::SimRng;

/// Slot order (slot -> original position) for a pass with block size `k`
/// over `groups`, which must partition the active positions.
pub(crate) fn constrained_order(groups: &[Vec<u32>], k: usize, rng: &mut SimRng) -> Option<Vec<u32>> {
    let n: usize = groups.iter().map(Vec::len).sum();
    if n == 0 || k == 0 {
        return None;
    }
    let k = k.min(n);
    let blocks = n.div_ceil(k);
    if groups.iter().any(|g| g.len() > blocks) {
        return None;
    }
    let last_cap = n - (blocks - 1) * k;

    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); k + 1];
    for b in 0..blocks - 1 {
        buckets[k].push(b as u32);
    }
    buckets[last_cap].push((blocks - 1) as u32);
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); blocks];

    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(rng);
    let mut top = k;
    let mut picked: Vec<(u32, usize)> = Vec::new();
    for gi in order {
        let group = &groups[gi];
        if group.is_empty() {
            continue;
        }
        picked.clear();
        let mut cap = top;
        while picked.len() < group.len() {
            if cap == 0 {
                return None;
            }
            let bucket = &mut buckets[cap];
            if bucket.is_empty() {
                cap -= 1;
                continue;
            }
            let i = rng.random_range(0..bucket.len());
            picked.push((bucket.swap_remove(i), cap));
        }
        let mut elems = group.clone();
        elems.shuffle(rng);
        for (&pos, &(b, c)) in elems.iter().zip(&picked) {
            members[b as usize].push(pos);
            buckets[c - 1].push(b);
        }
        while top > 0 && buckets[top].is_empty() {
            top -= 1;
        }
    }

    let mut slots = Vec::with_capacity(n);
    for mut m in members {
        m.shuffle(rng);
        slots.extend(m);
    }
    Some(slots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitframe::sim_rng;

    fn groups_of(n: u32, size: u32) -> Vec<Vec<u32>> {
        (0..n).collect::<Vec<_>>().chunks(size as usize).map(|c| c.to_vec()).collect()
    }

    fn violations(order: &[u32], groups: &[Vec<u32>], k: usize) -> usize {
        let mut block_of = vec![0usize; order.len()];
        for (s, &p) in order.iter().enumerate() {
            block_of[p as usize] = s / k;
        }
        groups
            .iter()
            .map(|g| {
                let mut seen: Vec<usize> = g.iter().map(|&p| block_of[p as usize]).collect();
                seen.sort_unstable();
                let before = seen.len();
                seen.dedup();
                before - seen.len()
            })
            .sum()
    }

    #[test]
    fn two_halves_split_every_pair() {
        let n = 64;
        let groups = groups_of(n, 2);
        let mut rng = sim_rng(1);
        let order = constrained_order(&groups, 32, &mut rng).unwrap();
        assert_eq!(violations(&order, &groups, 32), 0);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn no_violations_when_feasible() {
        let mut rng = sim_rng(2);
        for trial in 0..1000 {
            let (n, prev, k) = match trial % 3 {
                0 => (1000u32, 10u32, 100usize),
                1 => (999, 7, 74),
                _ => (500, 10, 50),
            };
            let groups = groups_of(n, prev);
            let order = constrained_order(&groups, k, &mut rng).expect("feasible geometry");
            assert_eq!(violations(&order, &groups, k), 0, "trial {trial}");
        }
    }

    #[test]
    fn infeasible_geometry_is_reported() {
        let groups = groups_of(100, 10);
        let mut rng = sim_rng(3);
        // 2 blocks cannot separate groups of 10.
        assert!(constrained_order(&groups, 50, &mut rng).is_none());
    }
}
