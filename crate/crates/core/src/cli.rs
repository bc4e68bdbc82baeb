//! Command-line front end: argument definitions and subcommand drivers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ctmc::{Ctmc, WeightVector, DEFAULT_TRANSIENT_EPS};
use crate::error::{Error, Result};
use crate::evidence::{ImpreciseEvidence, ObservationFormula, PreciseEvidence};
use crate::imdp::build;
use crate::oracle::sample_envelope;
use crate::refine::{analyze, AnalysisConfig, RefinementMode};
use crate::solver::Opt;
use crate::unfolding::{conditional_weight, evidence_likelihood};

/// Where the weight vector comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    /// Probability of reaching states satisfying the formula within the horizon.
    Property { target: ObservationFormula, horizon: f64 },
    File(PathBuf),
}

impl FromStr for WeightSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(rest) = s.strip_prefix("prop:") {
            let (formula, horizon) = rest
                .rsplit_once('@')
                .ok_or_else(|| format!("expected prop:<formula>@<horizon>, got {s:?}"))?;
            let formula = formula.trim().trim_matches(|c| c == '\'' || c == '"');
            let target: ObservationFormula = formula.parse()?;
            let horizon: f64 = horizon
                .trim()
                .parse()
                .map_err(|_| format!("bad horizon {horizon:?}"))?;
            if !(horizon >= 0.0) || !horizon.is_finite() {
                return Err(format!("horizon must be finite and nonnegative, got {horizon}"));
            }
            Ok(WeightSpec::Property { target, horizon })
        } else if let Some(path) = s.strip_prefix("file:") {
            Ok(WeightSpec::File(PathBuf::from(path)))
        } else {
            Err(format!("weight spec must start with prop: or file:, got {s:?}"))
        }
    }
}

impl WeightSpec {
    pub fn resolve(&self, ctmc: &Ctmc, eps: f64) -> Result<WeightVector> {
        match self {
            WeightSpec::Property { target, horizon } => {
                target.check_against(ctmc)?;
                Ok(ctmc.weight_from_property(&target.mask(ctmc), *horizon, eps))
            }
            WeightSpec::File(path) => {
                let text = read(path)?;
                parse_weights(ctmc, &text).map_err(|e| e.with_file(&path.display().to_string()))
            }
        }
    }
}

/// One `<state> <weight>` pair per line; `#` starts a comment.
pub fn parse_weights(ctmc: &Ctmc, text: &str) -> Result<WeightVector> {
    let mut weights = vec![None; ctmc.num_states()];
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(name), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(k + 1, "expected `<state> <weight>`"));
        };
        let s = ctmc
            .state_index(name)
            .ok_or_else(|| Error::parse(k + 1, format!("unknown state {name}")))?;
        let v: f64 = value
            .parse()
            .map_err(|_| Error::parse(k + 1, format!("bad weight {value:?}")))?;
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::parse(k + 1, "weights must be finite and nonnegative"));
        }
        if weights[s].replace(v).is_some() {
            return Err(Error::parse(k + 1, format!("duplicate weight for {name}")));
        }
    }
    let missing: Vec<&str> = (0..weights.len())
        .filter(|&s| weights[s].is_none())
        .map(|s| ctmc.name(s))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Semantic(format!("no weight given for {}", missing.join(", "))));
    }
    WeightVector::new(weights.into_iter().map(Option::unwrap).collect())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<Ctmc> {
    Ctmc::parse(&read(path)?).map_err(|e| e.with_file(&path.display().to_string()))
}

pub fn load_evidence(path: &Path) -> Result<ImpreciseEvidence> {
    ImpreciseEvidence::parse(&read(path)?).map_err(|e| e.with_file(&path.display().to_string()))
}

pub fn load_precise(path: &Path) -> Result<PreciseEvidence> {
    PreciseEvidence::parse(&read(path)?).map_err(|e| e.with_file(&path.display().to_string()))
}

/// `x` with 12 significant digits.
pub fn sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..12).contains(&mag) {
        format!("{:.*}", (11 - mag) as usize, x)
    } else {
        format!("{x:.11e}")
    }
}

#[derive(Debug, Parser)]
#[command(name = "ctmc-evidence", version, about = "Bounds on conditional reachability in CTMCs under imprecisely timed evidence")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Refine bounds for imprecise evidence until a stop condition holds.
    Analyze(AnalyzeArgs),
    /// Exact conditional weight for precisely timed evidence.
    Precise(PreciseArgs),
    /// Probability that the model generates precisely timed evidence.
    Likelihood(LikelihoodArgs),
    /// Exact values of randomly drawn precise instances.
    Sample(SampleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Guided,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Max,
    Min,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub model: PathBuf,
    pub evidence: PathBuf,
    #[arg(long)]
    pub weights: WeightSpec,
    /// Wall-clock budget in seconds.
    #[arg(long, default_value_t = 600.0)]
    pub time_limit: f64,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub width_target: Option<f64>,
    #[arg(long, default_value_t = 1e-9)]
    pub vi_tol: f64,
    #[arg(long, default_value_t = DEFAULT_TRANSIENT_EPS)]
    pub transient_tol: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Guided)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = DirectionArg::Max)]
    pub direction: DirectionArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trace CSV destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the final abstraction as text.
    #[arg(long)]
    pub dump_imdp: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreciseArgs {
    pub model: PathBuf,
    pub evidence: PathBuf,
    #[arg(long)]
    pub weights: WeightSpec,
    #[arg(long, default_value_t = DEFAULT_TRANSIENT_EPS)]
    pub transient_tol: f64,
}

#[derive(Debug, Args)]
pub struct LikelihoodArgs {
    pub model: PathBuf,
    pub evidence: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TRANSIENT_EPS)]
    pub transient_tol: f64,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub model: PathBuf,
    pub evidence: PathBuf,
    #[arg(long)]
    pub weights: WeightSpec,
    #[arg(short = 'n', long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRANSIENT_EPS)]
    pub transient_tol: f64,
    /// Envelope CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn io(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

impl AnalyzeArgs {
    pub fn config(&self) -> AnalysisConfig {
        AnalysisConfig {
            time_limit: self.time_limit,
            max_iters: self.max_iters,
            width_target: self.width_target,
            transient_eps: self.transient_tol,
            vi_tol: self.vi_tol,
            mode: match self.mode {
                ModeArg::Guided => RefinementMode::Guided,
                ModeArg::Full => RefinementMode::Full,
            },
            direction: match self.direction {
                DirectionArg::Max => Opt::Max,
                DirectionArg::Min => Opt::Min,
            },
            seed: self.seed,
        }
    }
}

pub fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let ctmc = load_model(&args.model)?;
    let omega = load_evidence(&args.evidence)?;
    let config = args.config();
    config.validate()?;
    omega.check_against(&ctmc)?;
    let w = args.weights.resolve(&ctmc, config.transient_eps)?;
    let trace = analyze(&ctmc, &omega, &w, &config)?;
    if let Some(path) = &args.out {
        write_file(path, &trace.to_csv())?;
    }
    if let Some(path) = &args.dump_imdp {
        let imdp = build(&ctmc, &omega, &trace.final_partition, config.transient_eps, None, true)?;
        write_file(path, &imdp.dump())?;
    }
    let (lo, hi) = trace.bounds();
    writeln!(
        out,
        "lower={lo} upper={hi} iters={} total_s={:.3}",
        trace.records.len(),
        trace.total_s()
    )
    .map_err(io)
}

pub fn cmd_precise(args: &PreciseArgs, out: &mut dyn Write) -> Result<()> {
    let ctmc = load_model(&args.model)?;
    let rho = load_precise(&args.evidence)?;
    rho.check_against(&ctmc)?;
    let w = args.weights.resolve(&ctmc, args.transient_tol)?;
    let r = conditional_weight(&ctmc, &rho, &w, args.transient_tol);
    if r.zero_likelihood {
        eprintln!("warning: evidence has zero likelihood; reporting 0");
    }
    writeln!(out, "{}", sig12(r.value)).map_err(io)
}

pub fn cmd_likelihood(args: &LikelihoodArgs, out: &mut dyn Write) -> Result<()> {
    let ctmc = load_model(&args.model)?;
    let rho = load_precise(&args.evidence)?;
    rho.check_against(&ctmc)?;
    writeln!(out, "{}", sig12(evidence_likelihood(&ctmc, &rho, args.transient_tol))).map_err(io)
}

pub fn cmd_sample(args: &SampleArgs, out: &mut dyn Write) -> Result<()> {
    if args.samples == 0 {
        return Err(Error::Semantic("at least one sample is required".into()));
    }
    let ctmc = load_model(&args.model)?;
    let omega = load_evidence(&args.evidence)?;
    omega.check_against(&ctmc)?;
    let w = args.weights.resolve(&ctmc, args.transient_tol)?;
    let env = sample_envelope(&ctmc, &omega, &w, args.samples, args.seed, args.transient_tol);
    let csv = env.to_csv();
    match &args.out {
        Some(path) => {
            write_file(path, &csv)?;
            writeln!(out, "min={} max={} samples={}", env.min, env.max, env.samples.len()).map_err(io)
        }
        None => out.write_all(csv.as_bytes()).map_err(io),
    }
}

/// Runs a parsed command line, honouring `--threads`.
pub fn run(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Semantic("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Io(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Analyze(a) => cmd_analyze(a, out),
        Command::Precise(a) => cmd_precise(a, out),
        Command::Likelihood(a) => cmd_likelihood(a, out),
        Command::Sample(a) => cmd_sample(a, out),
    })
}
