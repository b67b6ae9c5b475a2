use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use stratagem::allocation::{AllocationSettings, CostModel, PrecisionConstraints, UnitCost};
use stratagem::config::ConfigFile;
use stratagem::frame::{split_domains, FrameSchema, LoadOptions, MissingPolicy};
use stratagem::pipeline::{self, Algorithm, Constraints, RunConfig};
use stratagem::strata::{build_atomic_strata, decode_partition, write_atomic_strata};
use stratagem::synthetic::{self, REFERENCE_SEED};
use stratagem::{Error, Result};

/// Optimal stratification with grouping genetic algorithms.
#[derive(Debug, Parser)]
#[command(name = "stratagem", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize every domain and write strata, allocations and summaries.
    Run(RunArgs),
    /// Time the allocation kernel on each domain's atomic partition.
    Bench(BenchArgs),
    /// Write the synthetic municipality frame as CSV.
    Synth(SynthArgs),
    /// Print the atomic strata of every domain.
    Atomic(AtomicArgs),
}

#[derive(Debug, Args)]
struct FrameArgs {
    /// Flat `key = value` file; keys are flag names, flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    frame: Option<PathBuf>,
    /// Comma-separated target columns.
    #[arg(long)]
    targets: Option<String>,
    /// Comma-separated auxiliary columns.
    #[arg(long)]
    aux: Option<String>,
    #[arg(long = "domain-col")]
    domain_col: Option<String>,
    #[arg(long = "id-col")]
    id_col: Option<String>,
    /// Single-byte field delimiter.
    #[arg(long)]
    delimiter: Option<char>,
    /// Tab-delimited input.
    #[arg(long)]
    tab: bool,
    /// Skip rows with missing values instead of failing.
    #[arg(long = "drop-missing")]
    drop_missing: bool,
    /// Replace numeric auxiliary COL by K k-means classes (`COL:K`, repeatable).
    #[arg(long, value_name = "COL:K")]
    discretize: Vec<String>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    /// Constraint table with columns DOMAIN, CV1..CVG.
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// CV limit per target (repeatable); one value applies to all targets.
    #[arg(long)]
    cv: Vec<f64>,
    #[arg(long = "min-units")]
    min_units: Option<usize>,
    #[arg(long = "fixed-cost")]
    fixed_cost: Option<f64>,
    #[arg(long = "unit-cost")]
    unit_cost: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    frame: FrameArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// ga, gga or bruteforce.
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    pop: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    elitism: Option<f64>,
    #[arg(long)]
    mutation: Option<f64>,
    #[arg(long)]
    inversion: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Domains optimized concurrently (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Stop a domain once its best fitness is at or below this value.
    #[arg(long = "stop-at")]
    stop_at: Option<f64>,
    /// Repetitions of the empirical expected-CV check.
    #[arg(long = "eval-reps")]
    eval_reps: Option<usize>,
    /// Allow exhaustive search beyond 15 atomic strata.
    #[arg(long = "allow-large")]
    allow_large: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    frame: FrameArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value_t = 100)]
    reps: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = REFERENCE_SEED)]
    seed: u64,
    /// Output path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AtomicArgs {
    #[command(flatten)]
    frame: FrameArgs,
}

const KEYS: &[&str] = &[
    "frame", "targets", "aux", "domain-col", "id-col", "delimiter", "tab", "drop-missing", "discretize",
    "constraints", "cv", "min-units", "fixed-cost", "unit-cost", "algorithm", "pop", "iters", "elitism",
    "mutation", "inversion", "seed", "jobs", "stop-at", "eval-reps", "allow-large", "out",
];

fn pick<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str) -> Result<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

fn pick_list(flag: Option<&str>, file: &ConfigFile, key: &str) -> Vec<String> {
    match flag {
        Some(v) => v.split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect(),
        None => file.get_list(key),
    }
}

fn required<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing required setting `--{key}`")))
}

struct FrameSetup {
    path: PathBuf,
    schema: FrameSchema,
    load: LoadOptions,
    discretize: Vec<(String, usize)>,
}

fn read_config(args: &FrameArgs) -> Result<ConfigFile> {
    let file = match &args.config {
        Some(p) => ConfigFile::read(p)?,
        None => ConfigFile::default(),
    };
    file.check_keys(KEYS)?;
    Ok(file)
}

fn frame_setup(args: &FrameArgs, file: &ConfigFile) -> Result<FrameSetup> {
    let path = required(pick(args.frame.clone(), file, "frame")?, "frame")?;
    let targets = pick_list(args.targets.as_deref(), file, "targets");
    let aux = pick_list(args.aux.as_deref(), file, "aux");
    let domain: Option<String> = pick(args.domain_col.clone(), file, "domain-col")?;
    let id: Option<String> = pick(args.id_col.clone(), file, "id-col")?;
    let mut schema = FrameSchema::new(targets, aux, domain.as_deref());
    if let Some(id) = id {
        schema = schema.with_id(&id);
    }
    let tab = args.tab || file.get_flag("tab")?;
    let delimiter = match (tab, pick(args.delimiter, file, "delimiter")?) {
        (true, _) => b'\t',
        (false, Some(c)) if c.is_ascii() => c as u8,
        (false, Some(c)) => return Err(Error::Config(format!("delimiter `{c}` is not a single byte"))),
        (false, None) => b',',
    };
    let missing = if args.drop_missing || file.get_flag("drop-missing")? {
        MissingPolicy::DropRow
    } else {
        MissingPolicy::Strict
    };
    let specs = if args.discretize.is_empty() { file.get_list("discretize") } else { args.discretize.clone() };
    let discretize = specs
        .iter()
        .map(|s| {
            let (col, k) = s
                .rsplit_once(':')
                .ok_or_else(|| Error::Config(format!("`{s}`: expected COL:K")))?;
            let k = k.parse().map_err(|_| Error::Config(format!("`{s}`: K must be a positive integer")))?;
            Ok((col.to_owned(), k))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameSetup { path, schema, load: LoadOptions { delimiter, missing }, discretize })
}

struct SearchSetup {
    constraints: Constraints,
    allocation: AllocationSettings,
    cost: CostModel,
}

fn search_setup(args: &SearchArgs, file: &ConfigFile) -> Result<SearchSetup> {
    let path: Option<PathBuf> = pick(args.constraints.clone(), file, "constraints")?;
    let cv: Vec<f64> = if args.cv.is_empty() {
        file.get_list("cv")
            .iter()
            .map(|v| v.parse().map_err(|_| Error::Config(format!("invalid CV `{v}`"))))
            .collect::<Result<_>>()?
    } else {
        args.cv.clone()
    };
    let constraints = match (path, cv.is_empty()) {
        (Some(_), false) => return Err(Error::Config("give either --constraints or --cv, not both".into())),
        (Some(p), true) => Constraints::Table(PrecisionConstraints::read_csv(std::fs::File::open(&p)?)?),
        (None, false) => Constraints::Row(cv),
        (None, true) => return Err(Error::Config("missing precision constraints (--cv or --constraints)".into())),
    };
    let mut allocation = AllocationSettings::default();
    if let Some(m) = pick(args.min_units, file, "min-units")? {
        allocation.min_units = m;
    }
    let mut cost = CostModel::default();
    if let Some(c) = pick(args.fixed_cost, file, "fixed-cost")? {
        cost.fixed = c;
    }
    if let Some(c) = pick(args.unit_cost, file, "unit-cost")? {
        cost.unit = UnitCost::Uniform(c);
    }
    Ok(SearchSetup { constraints, allocation, cost })
}

fn run_command(args: &RunArgs) -> Result<()> {
    let file = read_config(&args.frame)?;
    let frame = frame_setup(&args.frame, &file)?;
    let search = search_setup(&args.search, &file)?;
    let mut cfg = RunConfig::new(frame.path, frame.schema, search.constraints);
    cfg.load = frame.load;
    cfg.discretize = frame.discretize;
    cfg.allocation = search.allocation;
    cfg.cost = search.cost;
    if let Some(a) = pick::<String>(args.algorithm.clone(), &file, "algorithm")? {
        cfg.algorithm = a.parse::<Algorithm>()?;
    }
    let ga = &mut cfg.ga;
    ga.pop_size = pick(args.pop, &file, "pop")?.unwrap_or(ga.pop_size);
    ga.iterations = pick(args.iters, &file, "iters")?.unwrap_or(ga.iterations);
    ga.elitism_rate = pick(args.elitism, &file, "elitism")?.unwrap_or(ga.elitism_rate);
    ga.mutation_prob = pick(args.mutation, &file, "mutation")?.unwrap_or(ga.mutation_prob);
    ga.inversion_prob = pick(args.inversion, &file, "inversion")?.unwrap_or(ga.inversion_prob);
    ga.seed = pick(args.seed, &file, "seed")?.unwrap_or(ga.seed);
    ga.stop_at = pick(args.stop_at, &file, "stop-at")?;
    cfg.jobs = pick(args.jobs, &file, "jobs")?.unwrap_or(0);
    cfg.eval_reps = pick(args.eval_reps, &file, "eval-reps")?;
    cfg.allow_large = args.allow_large || file.get_flag("allow-large")?;
    cfg.out = pick(args.out.clone(), &file, "out")?;

    let (summary, _) = pipeline::run(&cfg)?;
    print!("{}", pipeline::summary_table(&summary));
    if let Some(out) = &cfg.out {
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn load_setup(setup: &FrameSetup) -> Result<stratagem::frame::Frame> {
    let mut cfg = RunConfig::new(setup.path.clone(), setup.schema.clone(), Constraints::Row(vec![0.0]));
    cfg.load = setup.load;
    cfg.discretize = setup.discretize.clone();
    setup.schema.validate()?;
    pipeline::load(&cfg)
}

fn bench_command(args: &BenchArgs) -> Result<()> {
    let file = read_config(&args.frame)?;
    let setup = frame_setup(&args.frame, &file)?;
    let search = search_setup(&args.search, &file)?;
    let frame = load_setup(&setup)?;
    println!("{:<12} {:>8} {:>12} {:>12} {:>12}", "domain", "atomic", "median_us", "min_us", "max_us");
    for df in split_domains(&frame) {
        let set = build_atomic_strata(&df)?;
        let labels: Vec<u32> = (1..=set.len() as u32).collect();
        let strat = decode_partition(&labels, &set)?;
        let cv = search.constraints.for_domain(&df.label, frame.num_targets())?;
        let s = pipeline::bench_allocation(&set, &strat, &cv, &search.cost, &search.allocation, args.reps)
            .map_err(|e| e.in_domain(&df.label))?;
        println!(
            "{:<12} {:>8} {:>12.2} {:>12.2} {:>12.2}",
            df.label,
            set.len(),
            s.median_us,
            s.min_us,
            s.max_us
        );
    }
    Ok(())
}

fn synth_command(args: &SynthArgs) -> Result<()> {
    let data = synthetic::generate(args.seed);
    match &args.out {
        Some(p) => {
            let mut buf = Vec::new();
            data.write_csv(&mut buf)?;
            pipeline::write_atomic(p, &buf)
        }
        None => data.write_csv(io::stdout().lock()),
    }
}

fn atomic_command(args: &AtomicArgs) -> Result<()> {
    let file = read_config(&args.frame)?;
    let setup = frame_setup(&args.frame, &file)?;
    let frame = load_setup(&setup)?;
    let mut stdout = io::stdout().lock();
    for (i, df) in split_domains(&frame).iter().enumerate() {
        let set = build_atomic_strata(df)?;
        let mut buf = Vec::new();
        write_atomic_strata(&set, &mut buf)?;
        // One header for the whole table.
        let body = if i == 0 { &buf[..] } else { &buf[buf.iter().position(|&b| b == b'\n').map_or(0, |p| p + 1)..] };
        stdout.write_all(body)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run_command(a),
        Command::Bench(a) => bench_command(a),
        Command::Synth(a) => synth_command(a),
        Command::Atomic(a) => atomic_command(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
