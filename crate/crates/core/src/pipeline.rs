//! End-to-end runs: load, split into domains, optimize each domain on its own,
//! and write the per-domain and summary files.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::allocation::{
    bethel_allocate, variance_bounds_from_totals, write_allocation, AllocationSettings, CostModel,
    PrecisionConstraints,
};
use crate::error::{Error, Result};
use crate::evaluate::{expected_cv, write_evaluation, DesignEvaluation};
use crate::evolve::{chromosomes_generated, evolve_domain, Engine, GaConfig, GenerationStats, RunResult};
use crate::frame::{load_frame, split_domains, DomainFrame, Frame, FrameSchema, LoadOptions};
use crate::oracle::{bell_number, brute_force_optimum};
use crate::strata::{build_atomic_strata, decode_partition, AtomicStrataSet, Stratification};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ga,
    Gga,
    Bruteforce,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ga" => Ok(Algorithm::Ga),
            "gga" => Ok(Algorithm::Gga),
            "bruteforce" => Ok(Algorithm::Bruteforce),
            other => Err(Error::Config(format!("unknown algorithm `{other}` (ga, gga, bruteforce)"))),
        }
    }
}

/// Where the CV limits come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraints {
    /// One limit per target, shared by every domain. A single value is
    /// broadcast to all targets.
    Row(Vec<f64>),
    Table(PrecisionConstraints),
}

impl Constraints {
    pub fn for_domain(&self, domain: &str, targets: usize) -> Result<Vec<f64>> {
        let row = match self {
            Constraints::Row(r) if r.len() == 1 => vec![r[0]; targets],
            Constraints::Row(r) => r.clone(),
            Constraints::Table(t) => t.row(domain)?.to_vec(),
        };
        if row.len() != targets {
            return Err(Error::LengthMismatch { expected: targets, found: row.len() });
        }
        if let Some(u) = row.iter().find(|u| !(u.is_finite() && **u >= 0.0)) {
            return Err(Error::Config(format!("CV limit {u} must be finite and >= 0")));
        }
        Ok(row)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub frame: PathBuf,
    pub schema: FrameSchema,
    pub load: LoadOptions,
    /// Numeric auxiliaries to replace by k-means classes before use.
    pub discretize: Vec<(String, usize)>,
    pub constraints: Constraints,
    pub algorithm: Algorithm,
    /// `seed` is the root seed; each domain derives its own.
    pub ga: GaConfig,
    pub allocation: AllocationSettings,
    pub cost: CostModel,
    pub out: Option<PathBuf>,
    /// Domains optimized concurrently; 0 lets the thread pool decide.
    pub jobs: usize,
    /// Repetitions for the empirical CV check; `None` skips it.
    pub eval_reps: Option<usize>,
    /// Lifts the partition-count guard of the exhaustive search.
    pub allow_large: bool,
}

impl RunConfig {
    pub fn new(frame: PathBuf, schema: FrameSchema, constraints: Constraints) -> Self {
        RunConfig {
            frame,
            schema,
            load: LoadOptions::default(),
            discretize: Vec::new(),
            constraints,
            algorithm: Algorithm::Gga,
            ga: GaConfig::default(),
            allocation: AllocationSettings::default(),
            cost: CostModel::default(),
            out: None,
            jobs: 0,
            eval_reps: None,
            allow_large: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.ga.validate()?;
        self.allocation.validate()?;
        self.cost.validate()?;
        if self.eval_reps == Some(0) {
            return Err(Error::Config("eval-reps must be at least 1".into()));
        }
        if let Constraints::Table(t) = &self.constraints {
            t.validate(self.schema.targets.len())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainSummary {
    pub domain: String,
    pub atomic_strata: usize,
    pub population: usize,
    pub strata: usize,
    pub total_n: usize,
    pub cost: f64,
    pub realized_cv: Vec<f64>,
    pub cv_limits: Vec<f64>,
    pub chromosomes_generated: u64,
    pub iterations: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_cv: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub frame: String,
    pub targets: Vec<String>,
    pub aux: Vec<String>,
    pub domain: Option<String>,
    pub algorithm: Algorithm,
    pub ga: GaConfig,
    pub allocation: AllocationSettings,
    pub cost: CostModel,
}

/// Wall-clock figures. Kept out of the summary files so those stay
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub total_ms: f64,
    /// `(domain, milliseconds)`.
    pub domains: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub domains: Vec<DomainSummary>,
    pub total_n: usize,
    pub total_cost: f64,
    pub config: ConfigEcho,
    #[serde(skip)]
    pub timing: Timing,
}

/// Per-domain result with everything needed to write its files.
#[derive(Debug, Clone)]
pub struct DomainOutcome {
    pub set: AtomicStrataSet,
    pub result: RunResult,
    pub cv_limits: Vec<f64>,
    pub seed: u64,
    pub evaluation: Option<DesignEvaluation>,
    pub wall_ms: f64,
}

/// Seed for domain `index`, independent of scheduling order.
pub fn domain_seed(root: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(index as u64);
    rng.gen()
}

pub fn load(cfg: &RunConfig) -> Result<Frame> {
    let file = fs::File::open(&cfg.frame)
        .map_err(|e| Error::Config(format!("cannot open frame `{}`: {e}", cfg.frame.display())))?;
    let mut frame = load_frame(io::BufReader::new(file), &cfg.schema, cfg.load)?;
    for (column, k) in &cfg.discretize {
        frame.discretize_aux(column, *k)?;
    }
    Ok(frame)
}

/// Runs the configured search on one domain.
pub fn optimize_domain(
    df: &DomainFrame<'_>,
    index: usize,
    cfg: &RunConfig,
) -> Result<DomainOutcome> {
    let start = Instant::now();
    let set = build_atomic_strata(df)?;
    let cv_limits = cfg.constraints.for_domain(&df.label, df.frame.num_targets())?;
    let seed = domain_seed(cfg.ga.seed, index);
    let result = match cfg.algorithm {
        Algorithm::Bruteforce => {
            let (best, best_allocation) =
                brute_force_optimum(&set, &cv_limits, &cfg.cost, &cfg.allocation, cfg.allow_large)?;
            let best_stratification = decode_partition(&best.labels, &set)?;
            let evaluated = bell_number(set.len()).min(u64::MAX as u128) as u64;
            RunResult {
                best,
                best_stratification,
                best_allocation,
                convergence: Vec::new(),
                chromosomes_generated: evaluated,
                iterations_run: 0,
            }
        }
        Algorithm::Ga | Algorithm::Gga => {
            let engine = if cfg.algorithm == Algorithm::Ga { Engine::Classical } else { Engine::Grouping };
            let ga = GaConfig { engine, seed, ..cfg.ga.clone() };
            evolve_domain(&set, &cv_limits, &cfg.cost, &cfg.allocation, &ga)?
        }
    };
    let evaluation = match cfg.eval_reps {
        Some(reps) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1);
            Some(expected_cv(df, &set, &result.best_stratification, &result.best_allocation, reps, &mut rng)?)
        }
        None => None,
    };
    Ok(DomainOutcome {
        set,
        result,
        cv_limits,
        seed,
        evaluation,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Loads the frame, optimizes every domain and writes the outputs when an
/// output directory is configured.
pub fn run(cfg: &RunConfig) -> Result<(RunSummary, Vec<DomainOutcome>)> {
    cfg.validate()?;
    let start = Instant::now();
    let frame = load(cfg)?;
    let domains = split_domains(&frame);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes = pool.install(|| {
        domains
            .par_iter()
            .enumerate()
            .map(|(i, df)| optimize_domain(df, i, cfg).map_err(|e| e.in_domain(&df.label)))
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = summarize(cfg, &outcomes, start.elapsed().as_secs_f64() * 1e3);
    if let Some(out) = &cfg.out {
        write_outputs(out, &summary, &outcomes)?;
    }
    Ok((summary, outcomes))
}

fn summarize(cfg: &RunConfig, outcomes: &[DomainOutcome], total_ms: f64) -> RunSummary {
    let domains: Vec<DomainSummary> = outcomes
        .iter()
        .map(|o| {
            let a = &o.result.best_allocation;
            DomainSummary {
                domain: o.set.domain.clone(),
                atomic_strata: o.set.len(),
                population: o.set.total_n,
                strata: o.result.best_stratification.len(),
                total_n: a.total_n,
                cost: a.cost,
                realized_cv: a.realized_cv.clone(),
                cv_limits: o.cv_limits.clone(),
                chromosomes_generated: o.result.chromosomes_generated,
                iterations: o.result.iterations_run,
                seed: o.seed,
                expected_cv: o.evaluation.as_ref().map(|e| e.mean_cv.clone()),
            }
        })
        .collect();
    RunSummary {
        total_n: domains.iter().map(|d| d.total_n).sum(),
        total_cost: domains.iter().map(|d| d.cost).sum(),
        timing: Timing {
            total_ms,
            domains: outcomes.iter().map(|o| (o.set.domain.clone(), o.wall_ms)).collect(),
        },
        domains,
        config: ConfigEcho {
            frame: cfg.frame.display().to_string(),
            targets: cfg.schema.targets.clone(),
            aux: cfg.schema.aux.clone(),
            domain: cfg.schema.domain.clone(),
            algorithm: cfg.algorithm,
            ga: cfg.ga.clone(),
            allocation: cfg.allocation,
            cost: cfg.cost.clone(),
        },
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Directory name for a domain label: anything outside `[A-Za-z0-9._-]`
/// becomes `_`.
pub fn domain_dir(label: &str) -> String {
    let clean: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    format!("domain_{clean}")
}

/// `ATOMIC_KEY, N, STRATUM_ID` with stratum ids matching ALLOC.csv.
pub fn write_strata<W: Write>(set: &AtomicStrataSet, strat: &Stratification, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["ATOMIC_KEY", "N", "STRATUM_ID"])?;
    let assignment = strat.assignment(set.len());
    for (a, h) in set.strata.iter().zip(assignment) {
        w.write_record([a.key.clone(), a.n.to_string(), (h + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `iteration, best, mean`, one row per generation.
pub fn emit_convergence<W: Write>(convergence: &[GenerationStats], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["iteration", "best", "mean"])?;
    for s in convergence {
        w.write_record([s.iteration.to_string(), s.best.to_string(), s.mean.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_table(summary: &RunSummary) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{:<12} {:>8} {:>8} {:>8} {:>10} {:>14}",
        "domain", "atomic", "strata", "n", "cost", "chromosomes"
    );
    for d in &summary.domains {
        let _ = writeln!(
            t,
            "{:<12} {:>8} {:>8} {:>8} {:>10} {:>14}",
            d.domain, d.atomic_strata, d.strata, d.total_n, d.cost, d.chromosomes_generated
        );
    }
    let _ = writeln!(t, "{:<12} {:>8} {:>8} {:>8} {:>10}", "total", "", "", summary.total_n, summary.total_cost);
    t
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn write_outputs(out: &Path, summary: &RunSummary, outcomes: &[DomainOutcome]) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut evaluations = Vec::new();
    for o in outcomes {
        let dir = out.join(domain_dir(&o.set.domain));
        fs::create_dir_all(&dir)?;
        let strat = &o.result.best_stratification;
        write_atomic(&dir.join("STRATA.csv"), &to_bytes(|b| write_strata(&o.set, strat, b))?)?;
        write_atomic(
            &dir.join("ALLOC.csv"),
            &to_bytes(|b| write_allocation(strat, &o.result.best_allocation, b))?,
        )?;
        write_atomic(
            &dir.join("CONVERGENCE.csv"),
            &to_bytes(|b| emit_convergence(&o.result.convergence, b))?,
        )?;
        if let Some(e) = &o.evaluation {
            evaluations.push((o.set.domain.clone(), e.clone()));
        }
    }
    if !evaluations.is_empty() {
        write_atomic(&out.join("EVALUATION.csv"), &to_bytes(|b| write_evaluation(&evaluations, b))?)?;
    }
    let mut json = serde_json::to_vec_pretty(summary)?;
    json.push(b'\n');
    write_atomic(&out.join("SUMMARY.json"), &json)?;
    write_atomic(&out.join("SUMMARY.txt"), summary_table(summary).as_bytes())?;
    let mut timing = serde_json::to_vec_pretty(&summary.timing)?;
    timing.push(b'\n');
    write_atomic(&out.join("TIMING.json"), &timing)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchStats {
    pub reps: usize,
    pub median_us: f64,
    pub min_us: f64,
    pub max_us: f64,
}

/// Times `reps` full allocations (cost resolution included) of `strat`.
pub fn bench_allocation(
    set: &AtomicStrataSet,
    strat: &Stratification,
    cv_limits: &[f64],
    cost: &CostModel,
    settings: &AllocationSettings,
    reps: usize,
) -> Result<BenchStats> {
    if reps == 0 {
        return Err(Error::InvalidArgs("reps must be at least 1".into()));
    }
    let bounds = variance_bounds_from_totals(&set.totals(), cv_limits)?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let costs = cost.resolve(strat, &set.strata)?;
        let alloc = bethel_allocate(strat, &bounds, &costs, settings)?;
        times.push(start.elapsed().as_secs_f64() * 1e6);
        std::hint::black_box(alloc);
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median_us = if times.len() % 2 == 1 { times[mid] } else { 0.5 * (times[mid - 1] + times[mid]) };
    Ok(BenchStats { reps, median_us, min_us: times[0], max_us: times[times.len() - 1] })
}

/// Number of chromosomes a full run of `cfg` would evaluate per domain.
pub fn planned_chromosomes(cfg: &GaConfig) -> Result<u64> {
    chromosomes_generated(cfg.pop_size, cfg.elites(), cfg.iterations)
}
