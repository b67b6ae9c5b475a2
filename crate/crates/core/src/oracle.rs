//! Exhaustive search over all set partitions of the atomic strata.
//!
//! Partitions are enumerated as restricted growth strings: label `a_i` of
//! element `i` is at most one more than the largest label before it. Every
//! partition has exactly one such string, so the stream is duplicate-free
//! and needs O(K) memory.

use rayon::prelude::*;

use crate::allocation::{Allocation, AllocationSettings, CostModel};
use crate::error::{Error, Result};
use crate::evolve::{Chromosome, Evaluator};
use crate::strata::AtomicStrataSet;

/// Largest K enumerated without an explicit override.
pub const MAX_ENUMERABLE: usize = 15;

const BATCH: usize = 4096;

/// Bell numbers via the Bell triangle. Exact up to `k = 25` in `u128`.
pub fn bell_number(k: usize) -> u128 {
    let mut row = vec![1u128];
    for _ in 0..k {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().expect("non-empty"));
        for v in &row {
            let prev = *next.last().expect("non-empty");
            next.push(prev.saturating_add(*v));
        }
        row = next;
    }
    row[0]
}

/// Streams every partition of `{1..K}` in lexicographic restricted-growth order.
#[derive(Debug, Clone)]
pub struct PartitionIterator {
    labels: Vec<u32>,
    /// `prefix_max[i]`: largest label among `labels[..=i]`.
    prefix_max: Vec<u32>,
    done: bool,
}

impl PartitionIterator {
    fn new(k: usize) -> Self {
        PartitionIterator {
            labels: vec![1; k],
            prefix_max: vec![1; k],
            done: k == 0,
        }
    }

    fn advance(&mut self) {
        let k = self.labels.len();
        // Rightmost position that can still grow.
        for i in (1..k).rev() {
            if self.labels[i] <= self.prefix_max[i - 1] {
                self.labels[i] += 1;
                self.prefix_max[i] = self.prefix_max[i - 1].max(self.labels[i]);
                for j in i + 1..k {
                    self.labels[j] = 1;
                    self.prefix_max[j] = self.prefix_max[i];
                }
                return;
            }
        }
        self.done = true;
    }
}

impl Iterator for PartitionIterator {
    type Item = Chromosome;

    fn next(&mut self) -> Option<Chromosome> {
        if self.done {
            return None;
        }
        let out = Chromosome::new(self.labels.clone());
        self.advance();
        Some(out)
    }
}

/// All partitions of `k` atomic strata, refusing `k > MAX_ENUMERABLE` unless
/// `allow_large` is set.
pub fn enumerate_partitions(k: usize, allow_large: bool) -> Result<PartitionIterator> {
    if k == 0 {
        return Err(Error::InvalidArgs("cannot enumerate partitions of an empty set".into()));
    }
    if k > MAX_ENUMERABLE && !allow_large {
        let bell = if k <= 25 { bell_number(k).to_string() } else { "> 4.6e18".to_owned() };
        return Err(Error::TooLarge { k, bell });
    }
    Ok(PartitionIterator::new(k))
}

/// Evaluates every partition with the same fitness as the genetic search and
/// returns the cheapest, breaking ties by fewer strata then enumeration order.
pub fn brute_force_optimum(
    set: &AtomicStrataSet,
    cv_limits: &[f64],
    cost: &CostModel,
    settings: &AllocationSettings,
    allow_large: bool,
) -> Result<(Chromosome, Allocation)> {
    let evaluator = Evaluator::new(set, cv_limits, cost, *settings)?;
    let mut partitions = enumerate_partitions(set.len(), allow_large)?;
    let mut best: Option<(f64, usize, Chromosome)> = None;
    loop {
        let batch: Vec<Chromosome> = partitions.by_ref().take(BATCH).collect();
        if batch.is_empty() {
            break;
        }
        let scored = batch
            .into_par_iter()
            .map(|c| {
                let f = evaluator.fitness(&c.labels)?;
                Ok((f, c.num_groups(), c))
            })
            .collect::<Result<Vec<_>>>()?;
        // Sequential reduction keeps the tie-break deterministic.
        for (f, h, c) in scored {
            let better = match &best {
                None => true,
                Some((bf, bh, _)) => f.total_cmp(bf).then(h.cmp(bh)).is_lt(),
            };
            if better {
                best = Some((f, h, c));
            }
        }
    }
    let (f, _, mut chrom) = best.expect("at least one partition");
    chrom.fitness = Some(f);
    let (_, alloc) = evaluator.allocate(&chrom.labels)?;
    Ok((chrom, alloc))
}
