mod config;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memflow::dynamics::{write_trajectory_csv, IntegratorConfig, NoiseConfig, Scheme, Verdict};
use memflow::harness::{
    self, scaling_verdict, BenchResult, BenchSpec, FormulaSource, RunConfig, DEFAULT_MIN_SOLVE_RATE, DEFAULT_SLOPE_MAX,
};
use memflow::instrument::event_log_jsonl;
use memflow::topology::{check_family, field_group};

use config::ConfigFile;

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 2;
const EXIT_SOLVED: u8 = 10;
const EXIT_TIMED_OUT: u8 = 20;
const EXIT_CHECK_FAILED: u8 = 30;

#[derive(Debug)]
pub struct CliError(pub String);

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "memflow", version, about = "Memcomputing SAT solver and topology checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a DIMACS CNF file.
    Solve(SolveArgs),
    /// Run a seeded scaling study over planted instances.
    Bench(BenchArgs),
    /// Check index sums on the built-in analytic fields.
    TopoCheck(TopoArgs),
}

#[derive(Args)]
struct Common {
    /// File of key=value lines mirroring the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    /// Noise intensity; a positive value selects Euler-Maruyama.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    restarts: Option<u32>,
    #[arg(long = "record-stride")]
    record_stride: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    path: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Print a JSON report instead of text.
    #[arg(long)]
    json: bool,
    /// Write the recorded trajectory as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write crossing and critical-point events as JSON lines.
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated problem sizes.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    ratio: Option<f64>,
    /// Instances per size.
    #[arg(long)]
    instances: Option<usize>,
    /// JSONL file results are appended to.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fit median crossings against n and gate on slope and solve rate.
    #[arg(long)]
    fit: bool,
    #[arg(long = "slope-max")]
    slope_max: Option<f64>,
    /// Worker threads (default: MEMFLOW_JOBS, else available cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct TopoArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// sphere, torus, circle, doublewell or all.
    #[arg(long)]
    field: Option<String>,
    /// Deformation parameters per family.
    #[arg(long)]
    sweep: Option<usize>,
}

struct Resolved {
    cfg: ConfigFile,
    seed: u64,
    integrator: IntegratorConfig,
    noise: NoiseConfig,
    restarts: u32,
}

impl Common {
    fn resolve(&self) -> Result<Resolved, CliError> {
        let cfg = ConfigFile::load(self.config.as_deref())?;
        let defaults = IntegratorConfig::default();
        let theta = cfg.pick(self.theta, "theta", 0.0)?;
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(CliError(format!("theta must be a finite nonnegative number, got {theta}")));
        }
        let integrator = IntegratorConfig {
            dt: cfg.pick(self.dt, "dt", defaults.dt)?,
            t_max: cfg.pick(self.t_max, "t_max", defaults.t_max)?,
            record_stride: cfg.pick(self.record_stride, "record_stride", defaults.record_stride)?,
            persistence_window: defaults.persistence_window,
            scheme: if theta > 0.0 { Scheme::EulerMaruyama } else { Scheme::Rk4 },
        };
        integrator.validate()?;
        let restarts = cfg.pick(self.restarts, "restarts", 1)?;
        if restarts == 0 {
            return Err(CliError("restarts must be at least 1".into()));
        }
        Ok(Resolved {
            seed: cfg.pick(self.seed, "seed", 0)?,
            integrator,
            noise: NoiseConfig::voltages(theta),
            restarts,
            cfg,
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError(format!("{}: {e}", path.display())))
}

fn solve(args: &SolveArgs) -> Result<u8, CliError> {
    let r = args.common.resolve()?;
    let mut config = RunConfig::new(FormulaSource::File { path: args.path.clone() }, r.seed);
    config.param_overrides = r.cfg.circuit_overrides()?;
    config.integrator = r.integrator;
    config.noise = r.noise;
    config.restarts = r.restarts;
    config.analysis.critical = args.events.is_some();

    let report = harness::run(&config)?;
    let record = BenchResult::from_report(args.path.display().to_string(), &config, &report);
    let outcome = &report.outcome;

    if let Some(path) = &args.trace {
        let mut out = create(path)?;
        write_trajectory_csv(&outcome.samples, &mut out).and_then(|_| out.flush())?;
    }
    if let Some(path) = &args.events {
        let mut out = create(path)?;
        out.write_all(event_log_jsonl(&outcome.crossings, report.trace.as_ref()).as_bytes())
            .and_then(|_| out.flush())?;
    }

    let v_line = outcome.assignment.as_ref().map(|a| a.to_v_line());
    if args.json {
        let mut value = serde_json::to_value(&record)?;
        value["assignment"] = v_line.clone().into();
        value["crossings"] = outcome.crossings.len().into();
        println!("{value}");
    } else {
        println!("c verdict {:?}", outcome.verdict);
        match outcome.t_solved {
            Some(t) => println!("c t_solved {t}"),
            None => println!("c t_solved none"),
        }
        println!("c crossings {}", record.crossings_total);
        println!("c steps {}", record.steps);
        match &v_line {
            Some(line) => println!("s SATISFIABLE\n{line}"),
            None => println!("s UNKNOWN"),
        }
    }
    Ok(match outcome.verdict {
        Verdict::Solved => EXIT_SOLVED,
        Verdict::TimedOut => EXIT_TIMED_OUT,
    })
}

fn default_jobs() -> usize {
    std::env::var("MEMFLOW_JOBS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&j| j > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn bench(args: &BenchArgs) -> Result<u8, CliError> {
    let r = args.common.resolve()?;
    let sizes = match &args.sizes {
        Some(s) => s.clone(),
        None => match r.cfg.get::<String>("sizes")? {
            Some(text) => text
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| CliError(format!("bad size '{s}'"))))
                .collect::<Result<_, _>>()?,
            None => vec![20, 40, 80, 160],
        },
    };
    let fit = r.cfg.flag(args.fit, "fit")?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(CliError("sizes must be positive".into()));
    }
    if fit && sizes.len() < 3 {
        return Err(CliError(format!("--fit needs at least 3 sizes, got {}", sizes.len())));
    }
    let out = match &args.out {
        Some(p) => p.clone(),
        None => r.cfg.get::<PathBuf>("out")?.ok_or_else(|| CliError("--out is required".into()))?,
    };
    let jobs = r.cfg.pick(args.jobs, "jobs", default_jobs())?;
    let slope_max = r.cfg.pick(args.slope_max, "slope_max", DEFAULT_SLOPE_MAX)?;

    let mut spec = BenchSpec::new(sizes, r.cfg.pick(args.instances, "instances", 25)?, r.seed);
    spec.ratio = r.cfg.pick(args.ratio, "ratio", 4.25)?;
    spec.integrator = r.integrator;
    spec.noise = r.noise;
    spec.restarts = r.restarts;
    spec.param_overrides = r.cfg.circuit_overrides()?;

    let results = harness::run_bench(&spec, jobs, |record| {
        harness::write_results(std::slice::from_ref(record), &out)?;
        eprintln!(
            "{} {:?} t={} crossings={} wall={:.3}s",
            record.instance_id,
            record.verdict,
            record.t_solved.map_or("-".to_string(), |t| t.to_string()),
            record.crossings_total,
            record.wall_time_seconds
        );
        Ok(())
    })?;

    if !fit {
        return Ok(EXIT_OK);
    }
    let verdict = scaling_verdict(&results, slope_max, DEFAULT_MIN_SOLVE_RATE)?;
    println!("{:>6} {:>6} {:>8} {:>12}", "n", "runs", "solved", "median");
    for s in &verdict.summary {
        let median = s.median_crossings.map_or("-".to_string(), |m| format!("{m}"));
        println!("{:>6} {:>6} {:>8} {:>12}", s.n, s.runs, s.solved, median);
    }
    println!(
        "slope {:.4}  r^2 {:.4}  slope_max {}  min_solve_rate {}  {}",
        verdict.fit.slope,
        verdict.fit.r_squared,
        verdict.slope_max,
        verdict.min_solve_rate,
        if verdict.pass { "PASS" } else { "FAIL" }
    );
    Ok(if verdict.pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn topo_check(args: &TopoArgs) -> Result<u8, CliError> {
    let cfg = ConfigFile::load(args.config.as_deref())?;
    let group = match &args.field {
        Some(f) => f.clone(),
        None => cfg.get::<String>("field")?.unwrap_or_else(|| "all".into()),
    };
    let sweep = cfg.pick(args.sweep, "sweep", 20)?;
    let families = field_group(&group)?;
    let mut all_pass = true;
    println!("{:<16} {:>10} {:>6} {:>8} {:>9}  result", "field", "parameter", "zeros", "sum", "expected");
    for family in families {
        for row in check_family(family, sweep) {
            all_pass &= row.pass;
            let sum = row.signed_sum.map_or("degen".to_string(), |s| s.to_string());
            println!(
                "{:<16} {:>10.4} {:>6} {:>8} {:>9}  {}",
                row.field,
                row.parameter,
                row.zero_count,
                sum,
                row.expected,
                if row.pass { "PASS" } else { "FAIL" }
            );
        }
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Bench(a) => bench(a),
        Command::TopoCheck(a) => topo_check(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("memflow: error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
