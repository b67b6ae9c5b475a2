//! Empirical check of a design: draw repeated stratified samples from the
//! frame and measure the spread of the estimated totals.

use std::io;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::allocation::Allocation;
use crate::error::{Error, Result};
use crate::frame::DomainFrame;
use crate::strata::{AtomicStrataSet, Stratification};

pub const DEFAULT_REPETITIONS: usize = 50;

/// A sampled frame row and its design weight `N_h / n_h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledRow {
    pub row: usize,
    pub stratum: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignEvaluation {
    pub repetitions: usize,
    pub mean_cv: Vec<f64>,
    /// `per_rep_estimates[r][g]`: estimated total of target `g` in repetition `r`.
    pub per_rep_estimates: Vec<Vec<f64>>,
}

fn check(set: &AtomicStrataSet, strat: &Stratification, alloc: &Allocation) -> Result<()> {
    if alloc.n.len() != strat.len() {
        return Err(Error::AllocationMismatch(format!(
            "{} sample sizes for {} strata",
            alloc.n.len(),
            strat.len()
        )));
    }
    if strat.labels.len() != set.len() {
        return Err(Error::AllocationMismatch(format!(
            "stratification covers {} atomic strata, domain has {}",
            strat.labels.len(),
            set.len()
        )));
    }
    for (h, (s, &n)) in strat.strata.iter().zip(&alloc.n).enumerate() {
        if n == 0 || n > s.n {
            return Err(Error::AllocationMismatch(format!("stratum {} has n = {n} with N = {}", h + 1, s.n)));
        }
    }
    Ok(())
}

fn stratum_rows(set: &AtomicStrataSet, strat: &Stratification) -> Vec<Vec<usize>> {
    strat
        .strata
        .iter()
        .map(|s| s.members.iter().flat_map(|&k| set.strata[k].rows.iter().copied()).collect())
        .collect()
}

fn draw<R: Rng + ?Sized>(rows: &[Vec<usize>], alloc: &Allocation, rng: &mut R) -> Vec<SampledRow> {
    let mut out = Vec::with_capacity(alloc.total_n);
    for (h, (pool, &n)) in rows.iter().zip(&alloc.n).enumerate() {
        let weight = pool.len() as f64 / n as f64;
        let mut picked: Vec<usize> = index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
        // Sorted so that a census sums in the same order every time.
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|row| SampledRow { row, stratum: h, weight }));
    }
    out
}

/// Draws `n_h` rows without replacement from every stratum.
pub fn draw_stratified_sample<R: Rng + ?Sized>(
    df: &DomainFrame<'_>,
    set: &AtomicStrataSet,
    strat: &Stratification,
    alloc: &Allocation,
    rng: &mut R,
) -> Result<Vec<SampledRow>> {
    check(set, strat, alloc)?;
    if set.total_n != df.len() {
        return Err(Error::AllocationMismatch(format!(
            "atomic strata cover {} rows, domain has {}",
            set.total_n,
            df.len()
        )));
    }
    Ok(draw(&stratum_rows(set, strat), alloc, rng))
}

/// Horvitz-Thompson estimate of every target total.
pub fn estimate_totals(df: &DomainFrame<'_>, sample: &[SampledRow]) -> Vec<f64> {
    let g = df.frame.num_targets();
    let mut total = vec![0.0; g];
    for s in sample {
        for (acc, y) in total.iter_mut().zip(df.frame.targets(s.row)) {
            *acc += s.weight * y;
        }
    }
    total
}

/// Repeats the sampling `reps` times and reports, per target, the standard
/// deviation of the estimated totals over their mean.
pub fn expected_cv<R: Rng + ?Sized>(
    df: &DomainFrame<'_>,
    set: &AtomicStrataSet,
    strat: &Stratification,
    alloc: &Allocation,
    reps: usize,
    rng: &mut R,
) -> Result<DesignEvaluation> {
    if reps == 0 {
        return Err(Error::InvalidArgs("repetitions must be at least 1".into()));
    }
    check(set, strat, alloc)?;
    let rows = stratum_rows(set, strat);
    let base: u64 = rng.gen();
    let estimates: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut sub = ChaCha8Rng::seed_from_u64(base);
            sub.set_stream(r as u64);
            estimate_totals(df, &draw(&rows, alloc, &mut sub))
        })
        .collect();
    let g = df.frame.num_targets();
    let mean_cv = (0..g)
        .map(|j| {
            let xs: Vec<f64> = estimates.iter().map(|e| e[j]).collect();
            cv_of(&xs)
        })
        .collect();
    Ok(DesignEvaluation { repetitions: reps, mean_cv, per_rep_estimates: estimates })
}

/// Sample SD over mean. Deviations are taken from the first value, so
/// identical estimates give exactly zero.
fn cv_of(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let shift = xs[0];
    let (s1, s2) = xs.iter().fold((0.0, 0.0), |(a, b), x| {
        let d = x - shift;
        (a + d, b + d * d)
    });
    let var = ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0);
    if var == 0.0 {
        return 0.0;
    }
    let mean = shift + s1 / n;
    var.sqrt() / mean.abs()
}

/// Writes `DOMAIN, REPS, CV1..CVG`, one row per domain.
pub fn write_evaluation<W: io::Write>(rows: &[(String, DesignEvaluation)], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let g = rows.first().map_or(0, |r| r.1.mean_cv.len());
    let mut header = vec!["DOMAIN".to_owned(), "REPS".to_owned()];
    header.extend((1..=g).map(|j| format!("CV{j}")));
    w.write_record(&header)?;
    for (domain, eval) in rows {
        let mut rec = vec![domain.clone(), eval.repetitions.to_string()];
        rec.extend(eval.mean_cv.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
