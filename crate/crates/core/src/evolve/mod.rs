//! Elitist generational search over partitions of atomic strata.
//!
//! Two engines share the loop: the classical engine recombines label vectors
//! with one-point crossover, the grouping engine injects whole groups and
//! adds an inversion step. Each generation keeps the `E = floor(e * p)` best
//! chromosomes unchanged and breeds the other `p - E` from parents drawn
//! uniformly from the previous generation.

mod operators;

pub use operators::{
    ga_crossover, ga_crossover_at, gga_crossover, init_population, inject_section, invert,
    invert_section, mutate, renumber, Chromosome, Group, GroupView,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{
    bethel_allocate, variance_bounds_from_totals, Allocation, AllocationSettings, CostModel,
};
use crate::error::{Error, Result};
use crate::strata::{decode_partition, AtomicStrataSet, Stratification};

/// Population evaluation runs on the rayon pool from this many atomic strata up.
const PARALLEL_MIN_STRATA: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// One-point crossover and point mutation on label vectors.
    Classical,
    /// Group injection, renumbering, mutation and inversion.
    Grouping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub pop_size: usize,
    pub iterations: usize,
    pub elitism_rate: f64,
    pub mutation_prob: f64,
    /// Grouping engine only.
    pub inversion_prob: f64,
    pub engine: Engine,
    pub seed: u64,
    /// Stop as soon as the best fitness is at or below this value.
    pub stop_at: Option<f64>,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            pop_size: 20,
            iterations: 400,
            elitism_rate: 0.2,
            mutation_prob: 0.05,
            inversion_prob: 0.05,
            engine: Engine::Grouping,
            seed: 0,
            stop_at: None,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.pop_size < 2 {
            return Err(Error::Config("population size must be at least 2".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.elitism_rate) {
            return Err(Error::Config("elitism rate must lie in [0, 1)".into()));
        }
        if !prob(self.mutation_prob) || !prob(self.inversion_prob) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// `E = floor(e * p)`.
    pub fn elites(&self) -> usize {
        // Nudge before flooring so that e.g. 0.2 * 10 is not taken as 1.999...
        ((self.elitism_rate * self.pop_size as f64) + 1e-9).floor() as usize
    }
}

/// Chromosomes created by a generational run:
/// `N_P + (N_P - E) * (N_iters - 1)`.
pub fn chromosomes_generated(pop_size: usize, elites: usize, iterations: usize) -> Result<u64> {
    if elites >= pop_size || iterations == 0 {
        return Err(Error::InvalidArgs(format!(
            "need pop_size > elites >= 0 and iterations >= 1 (got {pop_size}, {elites}, {iterations})"
        )));
    }
    Ok(pop_size as u64 + (pop_size - elites) as u64 * (iterations as u64 - 1))
}

/// Scores chromosomes of one domain. The variance bounds depend only on the
/// domain totals, so they are computed once.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    set: &'a AtomicStrataSet,
    /// `Err(target)` when that target's total is zero: no CV is defined.
    bounds: std::result::Result<Vec<f64>, usize>,
    cost: &'a CostModel,
    settings: AllocationSettings,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        set: &'a AtomicStrataSet,
        cv_limits: &[f64],
        cost: &'a CostModel,
        settings: AllocationSettings,
    ) -> Result<Self> {
        let bounds = match variance_bounds_from_totals(&set.totals(), cv_limits) {
            Ok(b) => Ok(b),
            Err(Error::ZeroTotal { target }) => Err(target),
            Err(e) => return Err(e),
        };
        Ok(Evaluator { set, bounds, cost, settings })
    }

    pub fn set(&self) -> &AtomicStrataSet {
        self.set
    }

    /// Decodes and allocates. Fails with `ZeroTotal` when CVs are undefined.
    pub fn allocate(&self, labels: &[u32]) -> Result<(Stratification, Allocation)> {
        let strat = decode_partition(labels, self.set)?;
        let bounds = self.bounds.as_ref().map_err(|&target| Error::ZeroTotal { target })?;
        let costs = self.cost.resolve(&strat, &self.set.strata)?;
        let alloc = bethel_allocate(&strat, bounds, &costs, &self.settings)?;
        Ok((strat, alloc))
    }

    /// Allocation cost, or `+inf` when some target total is zero.
    pub fn fitness(&self, labels: &[u32]) -> Result<f64> {
        if self.bounds.is_err() {
            return Ok(f64::INFINITY);
        }
        Ok(self.allocate(labels)?.1.cost)
    }
}

/// Computes and caches the fitness of `chrom`.
pub fn evaluate(chrom: &mut Chromosome, evaluator: &Evaluator<'_>) -> Result<f64> {
    if let Some(f) = chrom.fitness {
        return Ok(f);
    }
    let f = evaluator.fitness(&chrom.labels)?;
    chrom.fitness = Some(f);
    Ok(f)
}

fn evaluate_all(pop: &mut [Chromosome], evaluator: &Evaluator<'_>) -> Result<()> {
    if evaluator.set().len() >= PARALLEL_MIN_STRATA {
        pop.par_iter_mut().try_for_each(|c| evaluate(c, evaluator).map(drop))
    } else {
        pop.iter_mut().try_for_each(|c| evaluate(c, evaluator).map(drop))
    }
}

/// Ascending by (fitness, number of strata, position).
fn rank(pop: &mut [Chromosome]) {
    let mut keyed: Vec<(f64, usize, usize)> = pop
        .iter()
        .enumerate()
        .map(|(i, c)| (c.fitness.unwrap_or(f64::INFINITY), c.num_groups(), i))
        .collect();
    keyed.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });
    let sorted: Vec<Chromosome> = keyed.iter().map(|k| pop[k.2].clone()).collect();
    pop.clone_from_slice(&sorted);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenerationStats {
    pub iteration: usize,
    pub best: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub best: Chromosome,
    pub best_stratification: Stratification,
    pub best_allocation: Allocation,
    pub convergence: Vec<GenerationStats>,
    pub chromosomes_generated: u64,
    pub iterations_run: usize,
}

fn stats(iteration: usize, pop: &[Chromosome]) -> GenerationStats {
    let f: Vec<f64> = pop.iter().map(|c| c.fitness.unwrap_or(f64::INFINITY)).collect();
    GenerationStats {
        iteration,
        best: f.iter().copied().fold(f64::INFINITY, f64::min),
        mean: f.iter().sum::<f64>() / f.len() as f64,
    }
}

fn breed<R: Rng + ?Sized>(p1: &Chromosome, p2: &Chromosome, cfg: &GaConfig, rng: &mut R) -> Result<Chromosome> {
    Ok(match cfg.engine {
        Engine::Classical => {
            let child = ga_crossover(p1, p2, rng)?;
            mutate(&child, cfg.mutation_prob, rng)
        }
        Engine::Grouping => {
            let child = gga_crossover(p1, p2, rng)?;
            let child = mutate(&child, cfg.mutation_prob, rng);
            invert(&child, cfg.inversion_prob, rng)
        }
    })
}

/// Runs the configured engine on one domain.
pub fn evolve_domain(
    set: &AtomicStrataSet,
    cv_limits: &[f64],
    cost: &CostModel,
    settings: &AllocationSettings,
    cfg: &GaConfig,
) -> Result<RunResult> {
    cfg.validate()?;
    let evaluator = Evaluator::new(set, cv_limits, cost, *settings)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = cfg.pop_size;
    let elites = cfg.elites();
    let reached = |pop: &[Chromosome]| {
        cfg.stop_at.is_some_and(|target| pop[0].fitness.is_some_and(|f| f <= target))
    };

    let mut pop = init_population(set.len(), p, &mut rng);
    evaluate_all(&mut pop, &evaluator)?;
    rank(&mut pop);
    let mut convergence = vec![stats(1, &pop)];
    let mut generated = p as u64;
    let mut iteration = 1;

    while iteration < cfg.iterations && !reached(&pop) {
        let mut next: Vec<Chromosome> = pop[..elites].to_vec();
        for _ in elites..p {
            let a = rng.gen_range(0..p);
            let b = rng.gen_range(0..p);
            next.push(breed(&pop[a], &pop[b], cfg, &mut rng)?);
        }
        evaluate_all(&mut next[elites..], &evaluator)?;
        rank(&mut next);
        pop = next;
        iteration += 1;
        generated += (p - elites) as u64;
        convergence.push(stats(iteration, &pop));
    }

    let best = pop.swap_remove(0);
    let (best_stratification, best_allocation) = evaluator.allocate(&best.labels)?;
    Ok(RunResult {
        best,
        best_stratification,
        best_allocation,
        convergence,
        chromosomes_generated: generated,
        iterations_run: iteration,
    })
}
