//! `safetune`: generate scenarios, solve both fine-tuning cases, run sweeps,
//! verify bounds and extract trade-off frontiers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use safetune::bounds::{
    bound_t1, bound_t2, bound_t3, bound_t4, estimate_lipschitz_s, estimate_smoothness_f,
    BoundReport, SamplingConfig,
};
use safetune::experiments::{
    self, emit_plot, frontier, read_csv, rows_to_csv, run_sweep, Case, FrontierPoint,
    ScenarioSource, SweepConfig, SweepRow, DEFAULT_LAMBDA_GRID,
};
use safetune::trainer::{
    gap_capability, gap_safety, solve_case1, solve_case2, CaseIConfig, CaseIIConfig, CaseIIMode,
};
use safetune::verify::{run_verify, VerifyConfig};
use safetune::{Alphabet, Scenario, ScenarioConfig};

/// Invariant violated (bound slack, solver/oracle disagreement).
const EXIT_VIOLATION: u8 = 1;
/// Malformed flags, files or configurations.
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(
    name = "safetune",
    version,
    about = "Safety-aware fine-tuning laboratory on finite alphabets"
)]
struct Cli {
    /// Seed for scenario generation and sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CaseArg {
    #[value(name = "I", alias = "1")]
    One,
    #[value(name = "II", alias = "2")]
    Two,
}

impl From<CaseArg> for Case {
    fn from(c: CaseArg) -> Case {
        match c {
            CaseArg::One => Case::I,
            CaseArg::Two => Case::II,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Constrained,
    Penalized,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a (safety, proxy, task) scenario as JSON.
    Gen(GenArgs),
    /// Solve one Case I or Case II instance and report gaps and bounds.
    Solve(SolveArgs),
    /// Sweep λ (Case I) or ε₂ (Case II) over seeds; writes CSV.
    Sweep(SweepArgs),
    /// Run the oracle-equivalence and bound-slack checks over seeded batches.
    Verify(VerifyArgs),
    /// Extract the (g_s, g_f) Pareto frontier from a sweep CSV.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct GeneratorArgs {
    #[arg(long, default_value_t = 8)]
    contexts: usize,
    #[arg(long, default_value_t = 4)]
    outputs: usize,
    /// Fraction of task contexts shared with the proxy.
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    /// Proxy-to-safety similarity in [0, 1]; 1 copies the safety pair.
    #[arg(long, default_value_t = 1.0)]
    similarity: f64,
    /// Probability floor of every target table.
    #[arg(long, default_value_t = safetune::scenario::DEFAULT_FLOOR)]
    floor: f64,
}

impl GeneratorArgs {
    fn config(&self) -> anyhow::Result<ScenarioConfig> {
        Ok(ScenarioConfig {
            alphabet: Alphabet::new(self.contexts, self.outputs)?,
            overlap_frac: self.overlap,
            similarity: self.similarity,
            floor: self.floor,
        })
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    generator: GeneratorArgs,
}

#[derive(Args)]
struct SolveArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum)]
    case: CaseArg,
    /// Penalty strength (Case I, or Case II in penalized mode).
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Ball radius for Case II.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Optional Case I constraint level checked after solving.
    #[arg(long)]
    epsilon_1: Option<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Constrained)]
    mode: ModeArg,
    /// Logit box half-width as a multiple of the scenario's realizing bound.
    #[arg(long, default_value_t = 2.0)]
    box_scale: f64,
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, default_value_t = 1.5)]
    safety_factor: f64,
    /// Also write the trained model JSON here.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    case: CaseArg,
    /// Comma-separated knob grid (λ or ε₂). Defaults to 0.1,0.3,…,0.9
    /// for Case I and 0,0.25,…,2 for Case II.
    #[arg(long, value_delimiter = ',')]
    knobs: Vec<f64>,
    /// Comma-separated seeds; defaults to `--seed`.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Use this scenario for every seed instead of generating one per seed.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[command(flatten)]
    generator: GeneratorArgs,
    #[arg(long, default_value_t = 2.0)]
    box_scale: f64,
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, default_value_t = 1.5)]
    safety_factor: f64,
    /// Also render an SVG chart here.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 20)]
    count: u64,
    #[arg(long, default_value_t = 8)]
    contexts: usize,
    #[arg(long, default_value_t = 4)]
    outputs: usize,
    #[arg(long, default_value_t = 256)]
    samples: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep CSV produced by `sweep`.
    #[arg(long)]
    input: PathBuf,
    /// Also render the frontier rows as an SVG chart here.
    #[arg(long)]
    svg: Option<PathBuf>,
}

/// Error that maps to the invariant-violation exit code.
#[derive(Debug)]
struct Violation(String);

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Violation {}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json_line<T: Serialize + ?Sized>(value: &T) -> anyhow::Result<String> {
    let mut s = safetune::json::to_string(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct SolveOutput {
    case: Case,
    knob: f64,
    g_s: f64,
    g_f: f64,
    iterations: usize,
    converged: bool,
    final_grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    constraint_satisfied: Option<bool>,
    bounds: Vec<BoundReport>,
}

fn solve(cli: &Cli, args: &SolveArgs) -> anyhow::Result<()> {
    let s = Scenario::load(&args.scenario)?;
    let theta_s = s.aligned_model(experiments::sweep_box_bound(&s, args.box_scale))?;
    let sampling = SamplingConfig {
        seed: cli.seed,
        samples: args.samples,
        safety_factor: args.safety_factor,
    };
    let case = Case::from(args.case);
    let (result, knob, bounds) = match case {
        Case::I => {
            let cfg = CaseIConfig {
                epsilon_1: args.epsilon_1,
                ..CaseIConfig::with_lambda(args.lambda)
            };
            let result = solve_case1(&s, &theta_s, &cfg)?;
            let bounds = vec![
                bound_t1(&s, args.lambda, theta_s.penalty_constant()?)?
                    .with_measured(gap_safety(&result.model, &s)?),
                bound_t2(&s, args.lambda)?.with_measured(gap_capability(&result.model, &s)?),
            ];
            (result, args.lambda, bounds)
        }
        Case::II => {
            let cfg = match args.mode {
                ModeArg::Constrained => CaseIIConfig::constrained(args.epsilon),
                ModeArg::Penalized => CaseIIConfig::penalized(args.lambda),
            };
            let result = solve_case2(&s, &theta_s, &cfg)?;
            let mut bounds = Vec::new();
            if cfg.mode == CaseIIMode::Constrained {
                let l_s = estimate_lipschitz_s(&theta_s, &s, args.epsilon, &sampling)?;
                let l_f = estimate_smoothness_f(&theta_s, &s, args.epsilon, &sampling)?;
                bounds.push(
                    bound_t3(&theta_s, &s, args.epsilon, &l_s)?
                        .with_measured(gap_safety(&result.model, &s)?),
                );
                bounds.push(
                    bound_t4(&theta_s, &s, args.epsilon, &l_f)?
                        .with_measured(gap_capability(&result.model, &s)?),
                );
            }
            let knob = match args.mode {
                ModeArg::Constrained => args.epsilon,
                ModeArg::Penalized => args.lambda,
            };
            (result, knob, bounds)
        }
    };
    if let Some(path) = &args.model_out {
        safetune::json::write_file(path, &result.model)?;
    }
    let g_s = gap_safety(&result.model, &s)?;
    let g_f = gap_capability(&result.model, &s)?;
    let text = match cli.format {
        Format::Json => json_line(&SolveOutput {
            case,
            knob,
            g_s,
            g_f,
            iterations: result.iterations,
            converged: result.converged,
            final_grad_norm: result.final_grad_norm,
            constraint_satisfied: result.constraint_satisfied,
            bounds,
        })?,
        Format::Csv => {
            let bound = |i: usize| bounds.get(i).map_or(f64::NAN, |b| b.bound_value);
            rows_to_csv(&[SweepRow {
                seed: cli.seed,
                case,
                knob,
                g_s,
                g_f,
                safety_bound: bound(0),
                capability_bound: bound(1),
                safety_slack: bound(0) - g_s,
                capability_slack: bound(1) - g_f,
                iterations: result.iterations,
                converged: result.converged,
            }])?
        }
    };
    emit(cli.out.as_deref(), &text)
}

fn sweep(cli: &Cli, args: &SweepArgs) -> anyhow::Result<()> {
    let case = Case::from(args.case);
    let knobs = if !args.knobs.is_empty() {
        args.knobs.clone()
    } else {
        match case {
            Case::I => DEFAULT_LAMBDA_GRID.to_vec(),
            Case::II => (0..=8).map(|i| 0.25 * i as f64).collect(),
        }
    };
    let seeds = if args.seeds.is_empty() {
        vec![cli.seed]
    } else {
        args.seeds.clone()
    };
    let source = match &args.scenario {
        Some(path) => ScenarioSource::Fixed(Box::new(Scenario::load(path)?)),
        None => ScenarioSource::Generated(args.generator.config()?),
    };
    let mut cfg = SweepConfig::new(source, case, knobs, seeds);
    cfg.box_scale = args.box_scale;
    cfg.sampling.samples = args.samples;
    cfg.sampling.safety_factor = args.safety_factor;
    let rows = run_sweep(&cfg)?;
    if let Some(svg) = &args.svg {
        emit_plot(&rows, svg)?;
    }
    let text = match cli.format {
        Format::Csv => rows_to_csv(&rows)?,
        Format::Json => json_line(&rows)?,
    };
    emit(cli.out.as_deref(), &text)?;
    let unconverged = rows.iter().filter(|r| !r.converged).count();
    if unconverged > 0 {
        eprintln!("warning: {unconverged} sweep point(s) hit the iteration cap");
    }
    Ok(())
}

fn verify(cli: &Cli, args: &VerifyArgs) -> anyhow::Result<()> {
    if args.count == 0 {
        bail!(safetune::Error::InvalidInput("--count must be ≥ 1".into()));
    }
    let cfg = VerifyConfig {
        seeds: (cli.seed..cli.seed + args.count).collect(),
        alphabet: Alphabet::new(args.contexts, args.outputs)?,
        samples: args.samples,
        ..Default::default()
    };
    let report = run_verify(&cfg)?;
    let text = match cli.format {
        Format::Json => json_line(&report)?,
        Format::Csv => {
            let mut s =
                String::from("check,trials,failures,pass_rate,required_rate,worst,passed\n");
            for c in &report.checks {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    c.name,
                    c.trials,
                    c.failures,
                    c.pass_rate(),
                    c.required_rate,
                    c.worst,
                    c.passed()
                ));
            }
            s
        }
    };
    emit(cli.out.as_deref(), &text)?;
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| c.name.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(Violation(format!("checks failed: {}", failed.join(", "))).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct FrontierGroup {
    case: Case,
    seed: u64,
    points: Vec<FrontierPoint>,
}

fn report(cli: &Cli, args: &ReportArgs) -> anyhow::Result<()> {
    let rows = read_csv(&args.input)?;
    let mut groups: BTreeMap<(Case, u64), Vec<SweepRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.case, r.seed)).or_default().push(r);
    }
    let fronts: Vec<FrontierGroup> = groups
        .iter()
        .map(|(&(case, seed), rows)| FrontierGroup {
            case,
            seed,
            points: frontier(rows),
        })
        .collect();
    if let Some(svg) = &args.svg {
        let on_front: Vec<SweepRow> = groups
            .values()
            .zip(&fronts)
            .flat_map(|(rows, f)| {
                rows.iter()
                    .filter(|r| f.points.iter().any(|p| p.knob == r.knob))
                    .cloned()
                    .collect::<Vec<_>>()
            })
            .collect();
        emit_plot(&on_front, svg)?;
    }
    let text = match cli.format {
        Format::Json => json_line(&fronts)?,
        Format::Csv => {
            let mut s = String::from("case,seed,knob,g_s,g_f\n");
            for f in &fronts {
                for p in &f.points {
                    s.push_str(&format!(
                        "{},{},{},{},{}\n",
                        f.case, f.seed, p.knob, p.g_s, p.g_f
                    ));
                }
            }
            s
        }
    };
    emit(cli.out.as_deref(), &text)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Gen(args) => {
            let s = Scenario::generate(cli.seed, &args.generator.config()?)?;
            if cli.format == Format::Csv {
                bail!(safetune::Error::InvalidInput(
                    "scenarios are JSON only".into()
                ));
            }
            let mut text = s.to_json()?;
            text.push('\n');
            emit(cli.out.as_deref(), &text)
        }
        Command::Solve(args) => solve(cli, args),
        Command::Sweep(args) => sweep(cli, args),
        Command::Verify(args) => verify(cli, args),
        Command::Report(args) => report(cli, args),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Violation>().is_some() {
        return EXIT_VIOLATION;
    }
    match err.downcast_ref::<safetune::Error>() {
        Some(e) if !e.is_input_error() => EXIT_VIOLATION,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
