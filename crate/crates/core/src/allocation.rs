//! Minimum-cost sample allocation under per-target CV limits.
//!
//! The continuous problem
//!
//! ```text
//! min  sum_h c_h n_h
//! s.t. sum_h N_h^2 (1 - n_h/N_h) S_hg^2 / n_h <= V_g   for every target g
//!      0 < n_h <= N_h
//! ```
//!
//! is solved with the Bethel-Chromy multiplier fixed point. Strata whose
//! stationary size exceeds `N_h` are fixed at census (take-all) and the
//! remaining strata re-solved. The continuous solution is then rounded up,
//! clamped to `[min(min_units, N_h), N_h]`, and repaired greedily if the
//! integer allocation still violates a constraint.

use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strata::{AtomicStratum, Stratification};

/// Relative slack kept below each variance bound, so that the bound still
/// holds after the CV is recomputed as `sqrt(var) / T`.
const FEASIBILITY_MARGIN: f64 = 1e-12;

/// Floor on the normalized multipliers; keeps every constraint reachable by
/// the multiplicative update.
const ALPHA_FLOOR: f64 = 1e-200;

/// Upper CV limits, one row per domain and one column per target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionConstraints {
    pub domains: Vec<String>,
    pub cv: Vec<Vec<f64>>,
}

impl PrecisionConstraints {
    /// The same limit for every domain and target.
    pub fn uniform(domains: &[String], targets: usize, limit: f64) -> Result<Self> {
        Self::from_row(domains, &vec![limit; targets])
    }

    /// One row of limits applied to every domain.
    pub fn from_row(domains: &[String], row: &[f64]) -> Result<Self> {
        let c = PrecisionConstraints {
            domains: domains.to_vec(),
            cv: vec![row.to_vec(); domains.len()],
        };
        c.validate(row.len())?;
        Ok(c)
    }

    /// Reads `DOMAIN, CV1..CVG` rows. Limits for domains absent from the file
    /// are an error at lookup time.
    pub fn read_csv<R: io::Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
        let mut domains = Vec::new();
        let mut cv = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let mut fields = record.iter();
            let domain = fields
                .next()
                .ok_or_else(|| Error::Config(format!("constraints row {} is empty", i + 1)))?;
            let row = fields
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| Error::Parse {
                        row: i + 1,
                        column: "CV".into(),
                        value: f.to_owned(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            domains.push(domain.trim().to_owned());
            cv.push(row);
        }
        let g = cv.first().map_or(0, Vec::len);
        let c = PrecisionConstraints { domains, cv };
        c.validate(g)?;
        Ok(c)
    }

    pub fn validate(&self, targets: usize) -> Result<()> {
        if targets == 0 {
            return Err(Error::Config("constraint rows must have at least one target".into()));
        }
        for (d, row) in self.domains.iter().zip(&self.cv) {
            if row.len() != targets {
                return Err(Error::Config(format!(
                    "domain `{d}` has {} CV limits, expected {targets}",
                    row.len()
                )));
            }
            if row.iter().any(|u| !(u.is_finite() && *u >= 0.0)) {
                return Err(Error::Config(format!("domain `{d}` has a negative or non-finite CV limit")));
            }
        }
        Ok(())
    }

    pub fn row(&self, domain: &str) -> Result<&[f64]> {
        self.domains
            .iter()
            .position(|d| d == domain)
            .map(|i| self.cv[i].as_slice())
            .ok_or_else(|| Error::Config(format!("no precision constraints for domain `{domain}`")))
    }
}

/// Per-unit interviewing cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UnitCost {
    Uniform(f64),
    /// One rate per atomic stratum; a merged stratum pays the
    /// population-weighted mean of its members' rates.
    PerAtomic(Vec<f64>),
}

/// Linear cost `C0 + sum_h C_h n_h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub fixed: f64,
    pub unit: UnitCost,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { fixed: 0.0, unit: UnitCost::Uniform(1.0) }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fixed.is_finite() && self.fixed >= 0.0) {
            return Err(Error::Config("fixed cost must be finite and >= 0".into()));
        }
        let ok = |c: &f64| c.is_finite() && *c > 0.0;
        match &self.unit {
            UnitCost::Uniform(c) if ok(c) => Ok(()),
            UnitCost::PerAtomic(v) if v.iter().all(ok) => Ok(()),
            _ => Err(Error::Config("unit costs must be finite and > 0".into())),
        }
    }

    /// Resolves stratum-level rates for a stratification of `atomic`.
    pub fn resolve(&self, strat: &Stratification, atomic: &[AtomicStratum]) -> Result<StratumCosts> {
        let rates = match &self.unit {
            UnitCost::Uniform(c) => vec![*c; strat.len()],
            UnitCost::PerAtomic(v) => {
                if v.len() != atomic.len() {
                    return Err(Error::LengthMismatch { expected: atomic.len(), found: v.len() });
                }
                strat
                    .strata
                    .iter()
                    .map(|s| {
                        let weighted: f64 = s.members.iter().map(|&k| atomic[k].n as f64 * v[k]).sum();
                        weighted / s.n as f64
                    })
                    .collect()
            }
        };
        Ok(StratumCosts { fixed: self.fixed, rates })
    }
}

/// Cost rates resolved to the strata of one stratification.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumCosts {
    pub fixed: f64,
    pub rates: Vec<f64>,
}

impl StratumCosts {
    pub fn unit(h: usize) -> Self {
        StratumCosts { fixed: 0.0, rates: vec![1.0; h] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationSettings {
    /// Minimum sample per stratum (strata smaller than this are censused).
    pub min_units: usize,
    /// Cap on multiplier fixed-point iterations.
    pub max_iter: usize,
    /// Convergence threshold on the largest multiplier change.
    pub tol: f64,
}

impl Default for AllocationSettings {
    fn default() -> Self {
        AllocationSettings { min_units: 2, max_iter: 200, tol: 1e-10 }
    }
}

impl AllocationSettings {
    pub fn validate(&self) -> Result<()> {
        if self.min_units == 0 || self.max_iter == 0 || self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config("min_units and max_iter must be >= 1 and tol > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub n: Vec<usize>,
    pub total_n: usize,
    pub realized_cv: Vec<f64>,
    pub cost: f64,
    /// Continuous solution before rounding.
    pub continuous: Vec<f64>,
    /// `false` when the multiplier iteration hit `max_iter`; the allocation is
    /// still feasible.
    pub converged: bool,
    /// Unit increments made by the greedy repair after rounding.
    pub repairs: usize,
}

/// Continuous allocation, before rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousAllocation {
    pub n: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl ContinuousAllocation {
    pub fn cost(&self, costs: &StratumCosts) -> f64 {
        costs.fixed + self.n.iter().zip(&costs.rates).map(|(n, c)| n * c).sum::<f64>()
    }
}

fn check_totals(totals: &[f64]) -> Result<()> {
    match totals.iter().position(|t| *t == 0.0 || !t.is_finite()) {
        Some(target) => Err(Error::ZeroTotal { target }),
        None => Ok(()),
    }
}

/// `V_g = (U_g T_g)^2` with `T_g = sum_h N_h M_hg`.
pub fn variance_bounds(strat: &Stratification, cv_limits: &[f64]) -> Result<Vec<f64>> {
    variance_bounds_from_totals(&strat.totals(), cv_limits)
}

pub fn variance_bounds_from_totals(totals: &[f64], cv_limits: &[f64]) -> Result<Vec<f64>> {
    if totals.len() != cv_limits.len() {
        return Err(Error::LengthMismatch { expected: totals.len(), found: cv_limits.len() });
    }
    check_totals(totals)?;
    Ok(totals.iter().zip(cv_limits).map(|(t, u)| (u * t) * (u * t)).collect())
}

/// Variance of each estimated total under SRSWOR in every stratum.
pub fn estimator_variance(strat: &Stratification, n: &[usize]) -> Vec<f64> {
    let mut var = vec![0.0; strat.num_targets()];
    for (s, &nh) in strat.strata.iter().zip(n) {
        if nh >= s.n {
            continue;
        }
        let big = s.n as f64;
        let factor = big * (big - nh as f64) / nh as f64;
        for (v, sd) in var.iter_mut().zip(&s.sd) {
            *v += factor * sd * sd;
        }
    }
    var
}

/// `CV_g = sqrt(VAR_g) / T_g` at integer sizes `n`.
pub fn realized_cv(strat: &Stratification, n: &[usize]) -> Result<Vec<f64>> {
    if n.len() != strat.len() {
        return Err(Error::LengthMismatch { expected: strat.len(), found: n.len() });
    }
    if let Some(h) = n.iter().zip(&strat.strata).position(|(nh, s)| *nh == 0 || *nh > s.n) {
        return Err(Error::AllocationMismatch(format!(
            "n[{h}] = {} outside [1, {}]",
            n[h], strat.strata[h].n
        )));
    }
    let totals = strat.totals();
    check_totals(&totals)?;
    let var = estimator_variance(strat, n);
    Ok(var.iter().zip(&totals).map(|(v, t)| v.max(0.0).sqrt() / t.abs()).collect())
}

pub fn total_cost(n: &[usize], costs: &StratumCosts) -> f64 {
    costs.fixed + n.iter().zip(&costs.rates).map(|(n, c)| *n as f64 * c).sum::<f64>()
}

/// Solves the continuous allocation problem over `0 < n_h <= N_h`.
pub fn continuous_allocation(
    strat: &Stratification,
    bounds: &[f64],
    costs: &StratumCosts,
    settings: &AllocationSettings,
) -> Result<ContinuousAllocation> {
    let h_count = strat.len();
    let g_count = strat.num_targets();
    if bounds.len() != g_count {
        return Err(Error::LengthMismatch { expected: g_count, found: bounds.len() });
    }
    if costs.rates.len() != h_count {
        return Err(Error::LengthMismatch { expected: h_count, found: costs.rates.len() });
    }
    let pop: Vec<f64> = strat.strata.iter().map(|s| s.n as f64).collect();
    if bounds.iter().any(|v| *v <= 0.0) {
        return Ok(ContinuousAllocation { n: pop, converged: true, iterations: 0 });
    }
    // s2[h * G + g]
    let s2: Vec<f64> = strat.strata.iter().flat_map(|s| s.sd.iter().map(|v| v * v)).collect();

    let mut fixed = vec![false; h_count];
    let mut a = vec![0.0; h_count * g_count];
    let mut alpha = vec![0.0; g_count];
    let mut next = vec![0.0; g_count];
    let mut ratio = vec![0.0; g_count];
    let mut n = vec![0.0; h_count];
    let mut desired = vec![0.0; h_count];
    let mut converged = true;
    let mut iterations = 0;

    for _round in 0..(2 * h_count + 4) {
        // Standardize: sum_free a_hg / n_h <= 1.
        for g in 0..g_count {
            let rhs = bounds[g]
                + (0..h_count).filter(|&h| !fixed[h]).map(|h| pop[h] * s2[h * g_count + g]).sum::<f64>();
            for h in 0..h_count {
                a[h * g_count + g] =
                    if fixed[h] { 0.0 } else { pop[h] * pop[h] * s2[h * g_count + g] / rhs };
            }
        }
        let active: Vec<bool> =
            (0..g_count).map(|g| (0..h_count).any(|h| a[h * g_count + g] > 0.0)).collect();
        let n_active = active.iter().filter(|x| **x).count();
        if n_active == 0 {
            for h in 0..h_count {
                n[h] = if fixed[h] { pop[h] } else { 0.0 };
            }
            break;
        }
        let warm = (0..g_count).any(|g| active[g] && alpha[g] > 0.0);
        for g in 0..g_count {
            if !active[g] {
                alpha[g] = 0.0;
            } else if !warm {
                alpha[g] = 1.0 / n_active as f64;
            } else {
                alpha[g] = alpha[g].max(ALPHA_FLOOR);
            }
        }
        normalize(&mut alpha);

        // Free strata with some variance, packed for the inner loop.
        let free: Vec<usize> =
            (0..h_count).filter(|&h| !fixed[h] && (0..g_count).any(|g| a[h * g_count + g] > 0.0)).collect();
        let packed: Vec<f64> = free.iter().flat_map(|&h| a[h * g_count..(h + 1) * g_count].iter().copied()).collect();
        let rates: Vec<f64> = free.iter().map(|&h| costs.rates[h]).collect();
        let mut round_converged = false;
        for _ in 0..settings.max_iter {
            iterations += 1;
            packed_ratios(&packed, &rates, &alpha, &mut ratio);
            for g in 0..g_count {
                next[g] = if active[g] { (alpha[g] * ratio[g] * ratio[g]).max(ALPHA_FLOOR) } else { 0.0 };
            }
            normalize(&mut next);
            let delta = alpha.iter().zip(&next).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            alpha.copy_from_slice(&next);
            if delta < settings.tol {
                round_converged = true;
                break;
            }
        }
        converged &= round_converged;

        let scale = stationary(&a, &alpha, &costs.rates, &fixed, g_count, &mut n);
        // Scale up so every standardized constraint holds exactly or better.
        constraint_ratios(&a, &n, &fixed, g_count, &mut ratio);
        let worst = ratio.iter().copied().fold(0.0, f64::max);
        let stretch = worst.max(1.0);
        for h in 0..h_count {
            if !fixed[h] {
                n[h] *= stretch;
            }
        }

        let mut changed = false;
        for h in 0..h_count {
            if !fixed[h] && n[h] > pop[h] {
                fixed[h] = true;
                changed = true;
            }
        }
        if !changed {
            // Release take-all strata whose stationary size fell below N_h.
            for h in 0..h_count {
                if fixed[h] {
                    let big_a: f64 = (0..g_count)
                        .map(|g| alpha[g] * pop[h] * pop[h] * s2[h * g_count + g] / rhs_for(bounds, &pop, &s2, &fixed, g, g_count))
                        .sum();
                    desired[h] = (big_a / costs.rates[h]).sqrt() * scale * stretch;
                    if desired[h] < pop[h] * (1.0 - 1e-12) {
                        fixed[h] = false;
                        changed = true;
                    }
                }
            }
        }
        for h in 0..h_count {
            if fixed[h] {
                n[h] = pop[h];
            }
        }
        if !changed {
            break;
        }
    }
    Ok(ContinuousAllocation { n, converged, iterations })
}

fn rhs_for(bounds: &[f64], pop: &[f64], s2: &[f64], fixed: &[bool], g: usize, g_count: usize) -> f64 {
    bounds[g]
        + (0..pop.len()).filter(|&h| !fixed[h]).map(|h| pop[h] * s2[h * g_count + g]).sum::<f64>()
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

/// Stationary sizes for multipliers `alpha`, scaled so the aggregated
/// constraint `sum_g alpha_g sum_h a_hg / n_h` equals one. Returns the scale.
fn stationary(a: &[f64], alpha: &[f64], rates: &[f64], fixed: &[bool], g_count: usize, n: &mut [f64]) -> f64 {
    let mut scale = 0.0;
    for h in 0..n.len() {
        if fixed[h] {
            continue;
        }
        let big_a: f64 = (0..g_count).map(|g| alpha[g] * a[h * g_count + g]).sum();
        n[h] = big_a;
        scale += (rates[h] * big_a).sqrt();
    }
    for h in 0..n.len() {
        if !fixed[h] {
            n[h] = (n[h] / rates[h]).sqrt() * scale;
        }
    }
    scale
}

/// `sum_h a_hg / n_h` at the stationary sizes for `alpha`, over packed rows
/// of strata that all carry some variance.
fn packed_ratios(packed: &[f64], rates: &[f64], alpha: &[f64], out: &mut [f64]) {
    let g_count = alpha.len();
    out.iter_mut().for_each(|r| *r = 0.0);
    let mut scale = 0.0;
    for (row, &c) in packed.chunks_exact(g_count).zip(rates) {
        let big_a: f64 = row.iter().zip(alpha).map(|(a, w)| a * w).sum();
        let root = (c * big_a).sqrt();
        scale += root;
        // n_h = root / c * scale, so a_hg / n_h = a_hg * (c / root) / scale.
        let inv = c / root;
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * inv;
        }
    }
    out.iter_mut().for_each(|r| *r /= scale);
}

fn constraint_ratios(a: &[f64], n: &[f64], fixed: &[bool], g_count: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|r| *r = 0.0);
    for h in 0..n.len() {
        if fixed[h] {
            continue;
        }
        for g in 0..g_count {
            let ahg = a[h * g_count + g];
            if ahg > 0.0 {
                out[g] += if n[h] > 0.0 { ahg / n[h] } else { f64::INFINITY };
            }
        }
    }
}

fn violated(var: &[f64], bounds: &[f64]) -> Option<usize> {
    let mut worst = None;
    let mut worst_ratio = 1.0;
    for (g, (v, b)) in var.iter().zip(bounds).enumerate() {
        let limit = b * (1.0 - FEASIBILITY_MARGIN);
        if *v > limit {
            let r = if limit > 0.0 { v / limit } else { f64::INFINITY };
            if worst.is_none() || r > worst_ratio {
                worst = Some(g);
                worst_ratio = r;
            }
        }
    }
    worst
}

/// Integer minimum-cost allocation meeting every variance bound.
pub fn bethel_allocate(
    strat: &Stratification,
    bounds: &[f64],
    costs: &StratumCosts,
    settings: &AllocationSettings,
) -> Result<Allocation> {
    let totals = strat.totals();
    check_totals(&totals)?;
    let cont = continuous_allocation(strat, bounds, costs, settings)?;

    let mut n: Vec<usize> = strat
        .strata
        .iter()
        .zip(&cont.n)
        .map(|(s, &x)| {
            let up = (x - 1e-9 * x.max(1.0)).ceil().max(0.0) as usize;
            up.clamp(settings.min_units.min(s.n), s.n)
        })
        .collect();

    let g_count = strat.num_targets();
    let mut repairs = 0;
    loop {
        let var = estimator_variance(strat, &n);
        let Some(g) = violated(&var, bounds) else { break };
        let mut best: Option<(usize, f64)> = None;
        for (h, s) in strat.strata.iter().enumerate() {
            if n[h] >= s.n {
                continue;
            }
            let sd = s.sd[g];
            let big = s.n as f64;
            let nh = n[h] as f64;
            let gain = big * big * sd * sd * (1.0 / nh - 1.0 / (nh + 1.0)) / costs.rates[h];
            if gain > 0.0 && best.is_none_or(|(_, b)| gain > b) {
                best = Some((h, gain));
            }
        }
        match best {
            Some((h, _)) => {
                n[h] += 1;
                repairs += 1;
            }
            // Every stratum with variance in target g is censused already.
            None => break,
        }
        debug_assert!(g < g_count);
    }

    let realized = {
        let var = estimator_variance(strat, &n);
        var.iter().zip(&totals).map(|(v, t)| v.max(0.0).sqrt() / t.abs()).collect()
    };
    let cost = total_cost(&n, costs);
    Ok(Allocation {
        total_n: n.iter().sum(),
        n,
        realized_cv: realized,
        cost,
        continuous: cont.n,
        converged: cont.converged,
        repairs,
    })
}

/// Writes `STRATUM_ID, N_h, n_h` rows followed by a `# realized_cv` line.
pub fn write_allocation<W: io::Write>(strat: &Stratification, alloc: &Allocation, sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(sink);
    w.write_record(["STRATUM_ID", "N_h", "n_h"])?;
    for (h, (s, n)) in strat.strata.iter().zip(&alloc.n).enumerate() {
        w.write_record([(h + 1).to_string(), s.n.to_string(), n.to_string()])?;
    }
    let mut summary = vec!["# realized_cv".to_owned()];
    summary.extend(alloc.realized_cv.iter().map(|v| v.to_string()));
    w.write_record(&summary)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::strata::StratumStats;

    pub(crate) fn strat_of(rows: &[(usize, &[f64], &[f64])]) -> Stratification {
        Stratification {
            strata: rows
                .iter()
                .enumerate()
                .map(|(i, (n, m, s))| StratumStats {
                    n: *n,
                    mean: m.to_vec(),
                    sd: s.to_vec(),
                    members: vec![i],
                })
                .collect(),
            labels: (1..=rows.len() as u32).collect(),
        }
    }

    /// Smallest n in 1..=N with CV <= U, by direct search.
    fn brute_single(n_pop: usize, mean: f64, sd: f64, u: f64) -> usize {
        let t = n_pop as f64 * mean;
        (1..=n_pop)
            .find(|&n| {
                let big = n_pop as f64;
                let var = big * big * (1.0 - n as f64 / big) * sd * sd / n as f64;
                var.sqrt() / t <= u
            })
            .unwrap()
    }

    #[test]
    fn variance_bound_arithmetic() {
        let s = strat_of(&[(100, &[10.0], &[2.0])]);
        assert_eq!(variance_bounds(&s, &[0.05]).unwrap(), [2500.0]);
        assert_eq!(variance_bounds(&s, &[0.0]).unwrap(), [0.0]);
        let zero = strat_of(&[(100, &[0.0], &[2.0])]);
        assert!(matches!(variance_bounds(&zero, &[0.05]), Err(Error::ZeroTotal { target: 0 })));
    }

    #[test]
    fn single_stratum_example() {
        let s = strat_of(&[(100, &[10.0], &[2.0])]);
        let v = variance_bounds(&s, &[0.05]).unwrap();
        let a = bethel_allocate(&s, &v, &StratumCosts::unit(1), &AllocationSettings::default()).unwrap();
        assert_eq!(brute_single(100, 10.0, 2.0, 0.05), 14);
        assert_eq!(a.n, [14]);
        assert_eq!(a.cost, 14.0);
        assert!((a.realized_cv[0] - 0.04957).abs() < 5e-6);
        assert!(a.converged);
    }

    #[test]
    fn realized_cv_examples() {
        let s = strat_of(&[(100, &[10.0], &[2.0]), (50, &[3.0], &[1.0])]);
        assert_eq!(realized_cv(&s, &[100, 50]).unwrap(), [0.0]);
        let one = strat_of(&[(100, &[10.0], &[2.0])]);
        let cv = realized_cv(&one, &[14]).unwrap()[0];
        let direct = (100.0f64 * 100.0 * (1.0 - 0.14) * 4.0 / 14.0).sqrt() / 1000.0;
        assert!((cv - direct).abs() < 1e-15);
        assert!((cv - 0.04957).abs() < 5e-6);
        let flat = strat_of(&[(10, &[1.0, 2.0], &[0.0, 0.0]), (20, &[3.0, 1.0], &[0.0, 0.0])]);
        assert_eq!(realized_cv(&flat, &[1, 3]).unwrap(), [0.0, 0.0]);
        assert!(realized_cv(&one, &[0]).is_err());
        assert!(realized_cv(&one, &[101]).is_err());
    }

    #[test]
    fn zero_variance_strata_take_the_floor() {
        let s = strat_of(&[(40, &[1.0, 2.0], &[0.0, 0.0]), (30, &[5.0, 1.0], &[0.0, 0.0])]);
        let v = variance_bounds(&s, &[0.05, 0.05]).unwrap();
        let a = bethel_allocate(&s, &v, &StratumCosts::unit(2), &AllocationSettings::default()).unwrap();
        assert_eq!(a.n, [2, 2]);
        let tiny = strat_of(&[(1, &[4.5], &[0.0])]);
        let v = variance_bounds(&tiny, &[0.05]).unwrap();
        let a = bethel_allocate(&tiny, &v, &StratumCosts::unit(1), &AllocationSettings::default()).unwrap();
        assert_eq!(a.n, [1]);
    }

    #[test]
    fn census_when_bound_is_zero() {
        let s = strat_of(&[(40, &[1.0, 2.0], &[0.5, 0.0]), (30, &[5.0, 1.0], &[1.0, 0.2]), (3, &[1.0, 1.0], &[0.0, 0.0])]);
        let v = variance_bounds(&s, &[0.0, 0.1]).unwrap();
        let a = bethel_allocate(&s, &v, &StratumCosts::unit(3), &AllocationSettings::default()).unwrap();
        assert_eq!(a.n, [40, 30, 3]);
        assert_eq!(a.realized_cv, [0.0, 0.0]);
    }

    #[test]
    fn cost_model() {
        assert_eq!(total_cost(&[5, 6], &StratumCosts::unit(2)), 11.0);
        assert_eq!(total_cost(&[5, 6], &StratumCosts { fixed: 100.0, rates: vec![2.0, 2.0] }), 122.0);

        // Two atomic strata (N = 30 at rate 1, N = 10 at rate 5) merged:
        // (30 * 1 + 10 * 5) / 40 = 2.
        let atomic = vec![
            AtomicStratum { key: "a".into(), codes: vec![0], n: 30, mean: vec![1.0], sd: vec![0.1], domain: "d".into(), rows: vec![] },
            AtomicStratum { key: "b".into(), codes: vec![1], n: 10, mean: vec![2.0], sd: vec![0.1], domain: "d".into(), rows: vec![] },
        ];
        let strat = Stratification {
            strata: vec![crate::strata::merge_group(&atomic, vec![0, 1]).unwrap()],
            labels: vec![1, 1],
        };
        let model = CostModel { fixed: 0.0, unit: UnitCost::PerAtomic(vec![1.0, 5.0]) };
        let costs = model.resolve(&strat, &atomic).unwrap();
        assert_eq!(costs.rates, [2.0]);
        assert_eq!(total_cost(&[3], &costs), 6.0);
    }

    #[test]
    fn neyman_closed_form_for_one_target() {
        let s = strat_of(&[(200, &[10.0], &[3.0]), (150, &[20.0], &[8.0]), (400, &[5.0], &[1.0])]);
        let v = variance_bounds(&s, &[0.02]).unwrap();
        let costs = StratumCosts { fixed: 0.0, rates: vec![1.0, 4.0, 2.0] };
        let cont = continuous_allocation(&s, &v, &costs, &AllocationSettings::default()).unwrap();
        let num: f64 = s.strata.iter().zip(&costs.rates).map(|(st, c)| st.n as f64 * st.sd[0] * c.sqrt()).sum();
        let den: f64 = v[0] + s.strata.iter().map(|st| st.n as f64 * st.sd[0] * st.sd[0]).sum::<f64>();
        for (h, st) in s.strata.iter().enumerate() {
            let expect = st.n as f64 * st.sd[0] / costs.rates[h].sqrt() * num / den;
            assert!(expect < st.n as f64);
            assert!((cont.n[h] - expect).abs() <= 1e-9 * expect, "{} vs {expect}", cont.n[h]);
        }
    }

    #[test]
    fn take_all_strata_are_censused() {
        // One huge-variance small stratum forces take-all.
        let s = strat_of(&[(5, &[100.0], &[80.0]), (500, &[10.0], &[1.0])]);
        let v = variance_bounds(&s, &[0.01]).unwrap();
        let cont = continuous_allocation(&s, &v, &StratumCosts::unit(2), &AllocationSettings::default()).unwrap();
        assert_eq!(cont.n[0], 5.0);
        assert!(cont.n[1] < 500.0);
        let a = bethel_allocate(&s, &v, &StratumCosts::unit(2), &AllocationSettings::default()).unwrap();
        assert_eq!(a.n[0], 5);
        assert!(a.realized_cv[0] <= 0.01);
    }

    #[test]
    fn non_convergence_still_feasible() {
        let s = strat_of(&[
            (300, &[10.0, 1.0, 7.0], &[3.0, 0.9, 0.1]),
            (150, &[20.0, 3.0, 2.0], &[8.0, 0.1, 1.5]),
            (400, &[5.0, 2.0, 9.0], &[1.0, 1.5, 3.0]),
        ]);
        let v = variance_bounds(&s, &[0.02, 0.03, 0.01]).unwrap();
        let settings = AllocationSettings { max_iter: 1, ..Default::default() };
        let a = bethel_allocate(&s, &v, &StratumCosts::unit(3), &settings).unwrap();
        assert!(!a.converged);
        assert!(a.realized_cv.iter().zip([0.02, 0.03, 0.01]).all(|(c, u)| *c <= u));
    }

    #[test]
    fn allocation_export() {
        let s = strat_of(&[(100, &[10.0], &[2.0])]);
        let v = variance_bounds(&s, &[0.05]).unwrap();
        let a = bethel_allocate(&s, &v, &StratumCosts::unit(1), &AllocationSettings::default()).unwrap();
        let mut buf = Vec::new();
        write_allocation(&s, &a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "STRATUM_ID,N_h,n_h");
        assert_eq!(lines[1], "1,100,14");
        assert!(lines[2].starts_with("# realized_cv,0.0495"));
    }

    #[test]
    fn constraints_csv() {
        let c = PrecisionConstraints::read_csv("DOMAIN,CV1,CV2\n1,0.05,0.05\n2,0.1,0.02\n".as_bytes()).unwrap();
        assert_eq!(c.row("2").unwrap(), [0.1, 0.02]);
        assert!(c.row("3").is_err());
        assert!(PrecisionConstraints::read_csv("DOMAIN,CV1\n1,-0.1\n".as_bytes()).is_err());
    }
}
