//! Chromosome representation and the genetic operators of both engines.

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};

/// A partition of K atomic strata written as one group label per stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct Chromosome {
    pub labels: Vec<u32>,
    /// Cached allocation cost of the decoded stratification.
    pub fitness: Option<f64>,
}

impl Chromosome {
    pub fn new(labels: Vec<u32>) -> Self {
        Chromosome { labels, fitness: None }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Number of distinct labels, i.e. strata H.
    pub fn num_groups(&self) -> usize {
        let mut seen = vec![false; self.max_label() as usize + 1];
        let mut count = 0;
        for &l in &self.labels {
            if !std::mem::replace(&mut seen[l as usize], true) {
                count += 1;
            }
        }
        count
    }

    /// The partition as a sorted list of member sets; equal for equivalent
    /// labellings.
    pub fn canonical_groups(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> =
            GroupView::from_labels(&self.labels).groups.into_iter().map(|g| g.members).collect();
        groups.sort();
        groups
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub label: u32,
    /// Atomic strata indices (0-based), ascending.
    pub members: Vec<usize>,
}

/// A chromosome seen as an ordered list of groups. Groups are ordered by
/// label value, which for a renumbered chromosome is first-appearance order;
/// inversion rewrites labels so that the reversed order persists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupView {
    pub groups: Vec<Group>,
}

impl GroupView {
    pub fn from_labels(labels: &[u32]) -> Self {
        let max = labels.iter().copied().max().unwrap_or(0) as usize;
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); max + 1];
        for (i, &l) in labels.iter().enumerate() {
            buckets[l as usize].push(i);
        }
        let groups = buckets
            .into_iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(label, members)| Group { label: label as u32, members })
            .collect();
        GroupView { groups }
    }

    /// Builds a view directly from member lists, labelling by position.
    pub fn from_groups(groups: Vec<Vec<usize>>) -> Self {
        GroupView {
            groups: groups
                .into_iter()
                .enumerate()
                .map(|(i, members)| Group { label: i as u32 + 1, members })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        self.groups.iter().map(|g| g.members.clone()).collect()
    }

    /// Labels `1..=H` by group position.
    pub fn to_labels(&self, k: usize) -> Vec<u32> {
        let mut labels = vec![0; k];
        for (pos, g) in self.groups.iter().enumerate() {
            for &m in &g.members {
                labels[m] = pos as u32 + 1;
            }
        }
        labels
    }
}

/// `p` chromosomes with labels drawn uniformly from `[1, k]`.
pub fn init_population<R: Rng + ?Sized>(k: usize, p: usize, rng: &mut R) -> Vec<Chromosome> {
    (0..p)
        .map(|_| Chromosome::new((0..k).map(|_| rng.gen_range(1..=k as u32)).collect()))
        .collect()
}

fn same_length(p1: &Chromosome, p2: &Chromosome) -> Result<()> {
    if p1.len() != p2.len() {
        return Err(Error::LengthMismatch { expected: p1.len(), found: p2.len() });
    }
    Ok(())
}

/// One-point crossover: the first `cut` genes of `p1`, then the rest of `p2`.
pub fn ga_crossover_at(p1: &Chromosome, p2: &Chromosome, cut: usize) -> Result<Chromosome> {
    same_length(p1, p2)?;
    let cut = cut.min(p1.len());
    let labels = p1.labels[..cut].iter().chain(&p2.labels[cut..]).copied().collect();
    Ok(Chromosome::new(labels))
}

/// One-point crossover at a uniform cut in `[1, K-1]`.
pub fn ga_crossover<R: Rng + ?Sized>(p1: &Chromosome, p2: &Chromosome, rng: &mut R) -> Result<Chromosome> {
    same_length(p1, p2)?;
    let k = p1.len();
    if k < 2 {
        return Ok(Chromosome::new(p1.labels.clone()));
    }
    ga_crossover_at(p1, p2, rng.gen_range(1..k))
}

/// Injects `donor.groups[section]` into `host` just before host group `at`,
/// strips the injected members from the host's own groups and drops groups
/// left empty.
pub fn inject_section(donor: &GroupView, section: Range<usize>, host: &GroupView, at: usize) -> GroupView {
    let injected = &donor.groups[section];
    let k = donor
        .groups
        .iter()
        .chain(&host.groups)
        .flat_map(|g| g.members.iter().copied())
        .max()
        .map_or(0, |m| m + 1);
    let mut taken = vec![false; k];
    for g in injected {
        for &m in &g.members {
            taken[m] = true;
        }
    }
    let strip = |g: &Group| -> Vec<usize> { g.members.iter().copied().filter(|&m| !taken[m]).collect() };
    let at = at.min(host.len());
    let groups: Vec<Vec<usize>> = host.groups[..at]
        .iter()
        .map(strip)
        .chain(injected.iter().map(|g| g.members.clone()))
        .chain(host.groups[at..].iter().map(strip))
        .filter(|m| !m.is_empty())
        .collect();
    GroupView::from_groups(groups)
}

/// Grouping crossover: a random contiguous run of `p1`'s groups is injected
/// into `p2` at the start of a random section of `p2`. The child is
/// renumbered.
pub fn gga_crossover<R: Rng + ?Sized>(p1: &Chromosome, p2: &Chromosome, rng: &mut R) -> Result<Chromosome> {
    same_length(p1, p2)?;
    let donor = GroupView::from_labels(&p1.labels);
    let host = GroupView::from_labels(&p2.labels);
    if donor.is_empty() {
        return Ok(Chromosome::new(p2.labels.clone()));
    }
    let start = rng.gen_range(0..donor.len());
    let end = rng.gen_range(start + 1..=donor.len());
    let at = rng.gen_range(0..host.len());
    let child = inject_section(&donor, start..end, &host, at);
    Ok(renumber(&Chromosome::new(child.to_labels(p1.len()))))
}

/// Each gene is, with probability `prob`, redrawn uniformly from
/// `[1, max label]`.
pub fn mutate<R: Rng + ?Sized>(chrom: &Chromosome, prob: f64, rng: &mut R) -> Chromosome {
    let g_max = chrom.max_label().max(1);
    let mut out = chrom.clone();
    let mut changed = false;
    for l in out.labels.iter_mut() {
        if rng.gen::<f64>() < prob {
            let new = rng.gen_range(1..=g_max);
            changed |= new != *l;
            *l = new;
        }
    }
    if changed {
        out.fitness = None;
    }
    out
}

/// Reverses `chrom`'s groups in `section` (positions in the group view) and
/// relabels by the new group order. The partition is unchanged.
pub fn invert_section(chrom: &Chromosome, section: Range<usize>) -> Chromosome {
    let mut view = GroupView::from_labels(&chrom.labels);
    view.groups[section].reverse();
    Chromosome { labels: view.to_labels(chrom.len()), fitness: chrom.fitness }
}

/// With probability `prob`, reverses a random section of at least two groups.
pub fn invert<R: Rng + ?Sized>(chrom: &Chromosome, prob: f64, rng: &mut R) -> Chromosome {
    if rng.gen::<f64>() >= prob {
        return chrom.clone();
    }
    let h = chrom.num_groups();
    if h < 2 {
        return chrom.clone();
    }
    let start = rng.gen_range(0..h - 1);
    let end = rng.gen_range(start + 2..=h);
    invert_section(chrom, start..end)
}

/// Maps labels to `1..=H` in order of first appearance.
pub fn renumber(chrom: &Chromosome) -> Chromosome {
    let max = chrom.max_label() as usize;
    let mut map = vec![0u32; max + 1];
    let mut next = 0u32;
    let labels = chrom
        .labels
        .iter()
        .map(|&l| {
            let slot = &mut map[l as usize];
            if *slot == 0 {
                next += 1;
                *slot = next;
            }
            *slot
        })
        .collect();
    Chromosome { labels, fitness: chrom.fitness }
}
