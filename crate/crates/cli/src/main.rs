use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use switchgame::evaluator::{evaluate_exact, evaluate_mc, evaluate_worst_on_grid, EvalError, EvalReport};
use switchgame::lattice::{build_lattice, node_index, Lattice, LatticeError};
use switchgame::oracle::{game_dp, OracleError};
use switchgame::output;
use switchgame::problem_model::{load_spec, validate, NodeEvalError, ProblemSpec};
use switchgame::solver::{solve_direct, solve_picard, SolutionField, SolveError};
use switchgame::strategy::{extract_policy, random_control, random_policy, worst_control, DEFAULT_SWITCH_TOL};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_USAGE: u8 = 64;

/// Robust optimal switching on a binomial lattice.
#[derive(Parser)]
#[command(name = "switchgame", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a problem file and print the findings.
    Validate(Common),
    /// Solve and write the value field.
    Solve(Common),
    /// Write the optimal switching policy and the worst-case drift.
    Policy(Common),
    /// Evaluate the optimal pair exactly and by Monte Carlo, with saddle checks.
    Simulate(Common),
    /// Compare the solver with the brute-force game recursion.
    Oracle(Common),
    /// Root value over a list of lattice sizes.
    Sweep(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Direct,
    Picard,
}

#[derive(Args)]
struct Common {
    /// Problem file.
    spec: PathBuf,
    /// Number of time steps; a comma-separated list for `sweep`.
    #[arg(long, default_value = "200")]
    steps: String,
    #[arg(long, value_enum, default_value = "direct")]
    method: Method,
    /// Picard stopping tolerance.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Points of the drift grid used by `oracle` and by random controls.
    #[arg(long, default_value_t = 3)]
    u_grid_size: usize,
    /// Output file; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

struct Failure {
    exit: u8,
    code: String,
    message: String,
}

impl Failure {
    fn new(exit: u8, code: impl Into<String>, message: impl Into<String>) -> Self {
        Failure {
            exit,
            code: code.into(),
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure::new(EXIT_USAGE, "UsageError", message)
    }
}

impl From<SolveError> for Failure {
    fn from(e: SolveError) -> Self {
        let exit = match e {
            SolveError::Invalid(_) => EXIT_VALIDATION,
            _ => EXIT_NUMERIC,
        };
        Failure::new(exit, e.code(), e.to_string().replace('\n', "; "))
    }
}

impl From<LatticeError> for Failure {
    fn from(e: LatticeError) -> Self {
        let code = match e {
            LatticeError::StepTooCoarse { .. } => "StepTooCoarse",
            _ => "LatticeError",
        };
        Failure::new(EXIT_NUMERIC, code, e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::new(EXIT_NUMERIC, e.code(), e.to_string())
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        Failure::new(EXIT_NUMERIC, e.code(), e.to_string())
    }
}

impl From<NodeEvalError> for Failure {
    fn from(e: NodeEvalError) -> Self {
        Failure::new(EXIT_NUMERIC, "EvalError", e.to_string())
    }
}

/// Table output plus a summary line. The summary goes to standard output
/// when the table is written to a file and to standard error otherwise.
struct Report {
    tables: Vec<(Option<&'static str>, String)>,
    summary: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let exit = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(exit);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ERROR {}: {}", f.code, f.message);
            ExitCode::from(f.exit)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    let (opts, sweep) = match &command {
        Command::Sweep(o) => (o, true),
        Command::Validate(o) | Command::Solve(o) | Command::Policy(o) | Command::Simulate(o) | Command::Oracle(o) => {
            (o, false)
        }
    };
    let steps = parse_steps(&opts.steps, sweep)?;
    check_flags(opts)?;
    let spec = read_spec(&opts.spec)?;
    let report = match &command {
        Command::Validate(_) => return cmd_validate(&spec, steps[0], opts),
        Command::Solve(_) => cmd_solve(&spec, steps[0], opts)?,
        Command::Policy(_) => cmd_policy(&spec, steps[0], opts)?,
        Command::Simulate(_) => cmd_simulate(&spec, steps[0], opts)?,
        Command::Oracle(_) => cmd_oracle(&spec, steps[0], opts)?,
        Command::Sweep(_) => cmd_sweep(&spec, &steps, opts)?,
    };
    emit(report, opts.output.as_deref())
}

fn parse_steps(text: &str, list: bool) -> Result<Vec<usize>, Failure> {
    let steps = text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::usage(format!("--steps expects positive integers, got `{text}`")))?;
    if steps.contains(&0) {
        return Err(Failure::usage("--steps must be positive"));
    }
    if !list && steps.len() != 1 {
        return Err(Failure::usage("--steps takes a list only for `sweep`"));
    }
    Ok(steps)
}

fn check_flags(o: &Common) -> Result<(), Failure> {
    if !(o.tol.is_finite() && o.tol > 0.0) {
        return Err(Failure::usage("--tol must be positive"));
    }
    if o.max_iter == 0 || o.paths == 0 {
        return Err(Failure::usage("--max-iter and --paths must be positive"));
    }
    if o.u_grid_size < 2 {
        return Err(Failure::usage("--u-grid-size must be at least 2"));
    }
    Ok(())
}

fn read_spec(path: &Path) -> Result<ProblemSpec, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_USAGE, "IoError", format!("{}: {e}", path.display())))?;
    load_spec(&text).map_err(|e| Failure::new(EXIT_VALIDATION, e.code(), e.to_string()))
}

fn lattice(spec: &ProblemSpec, steps: usize) -> Result<Lattice, Failure> {
    Ok(build_lattice(spec.factor(), spec.horizon(), steps)?)
}

fn solve(spec: &ProblemSpec, lat: &Lattice, opts: &Common) -> Result<SolutionField, Failure> {
    Ok(match opts.method {
        Method::Direct => solve_direct(spec, lat)?,
        Method::Picard => solve_picard(spec, lat, opts.tol, opts.max_iter)?.field,
    })
}

fn emit(report: Report, output: Option<&Path>) -> Result<(), Failure> {
    let write = |path: &Path, body: &str| {
        std::fs::write(path, body).map_err(|e| Failure::new(EXIT_USAGE, "IoError", format!("{}: {e}", path.display())))
    };
    match output {
        Some(path) => {
            for (suffix, body) in &report.tables {
                match suffix {
                    None => write(path, body)?,
                    Some(s) => write(&sibling(path, s), body)?,
                }
            }
            if let Some(line) = report.summary {
                println!("{line}");
            }
        }
        None => {
            let bodies: Vec<&str> = report.tables.iter().map(|(_, b)| b.as_str()).collect();
            print!("{}", bodies.join("\n"));
            if let Some(line) = report.summary {
                eprintln!("{line}");
            }
        }
    }
    Ok(())
}

/// `out.csv` with suffix `control` becomes `out.control.csv`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{suffix}"),
    };
    path.with_file_name(name)
}

fn cmd_validate(spec: &ProblemSpec, steps: usize, opts: &Common) -> Result<(), Failure> {
    let lat = lattice(spec, steps)?;
    let rep = validate(spec, &lat);
    let mut text = rep.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match &opts.output {
        Some(path) => std::fs::write(path, &text)
            .map_err(|e| Failure::new(EXIT_USAGE, "IoError", format!("{}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    let first = rep.errors().next().map(|f| f.code.as_str());
    match first {
        None => Ok(()),
        Some(code) => Err(Failure::new(
            EXIT_VALIDATION,
            "ValidationFailed",
            format!("{} error(s), first {code}", rep.errors().count()),
        )),
    }
}

fn cmd_solve(spec: &ProblemSpec, steps: usize, opts: &Common) -> Result<Report, Failure> {
    let lat = lattice(spec, steps)?;
    let sol = solve(spec, &lat, opts)?;
    Ok(Report {
        tables: vec![(None, output::solution_csv(&lat, &sol))],
        summary: Some(format!("Y0={}", sol.value(spec.start_mode()))),
    })
}

fn cmd_policy(spec: &ProblemSpec, steps: usize, opts: &Common) -> Result<Report, Failure> {
    let lat = lattice(spec, steps)?;
    let sol = solve(spec, &lat, opts)?;
    let pol = extract_policy(spec, &lat, &sol, DEFAULT_SWITCH_TOL)?;
    let ctl = worst_control(spec, &lat, &sol);
    Ok(Report {
        tables: vec![
            (None, output::policy_csv(&pol)),
            (Some("control"), output::control_csv(&ctl)),
        ],
        summary: Some(format!("Y0={}", sol.value(spec.start_mode()))),
    })
}

fn cmd_simulate(spec: &ProblemSpec, steps: usize, opts: &Common) -> Result<Report, Failure> {
    let lat = lattice(spec, steps)?;
    let sol = solve(spec, &lat, opts)?;
    let y0 = sol.value(spec.start_mode());
    let pol = extract_policy(spec, &lat, &sol, DEFAULT_SWITCH_TOL)?;
    let ctl = worst_control(spec, &lat, &sol);
    let mut rows: Vec<(String, EvalReport)> = vec![
        ("optimal".into(), evaluate_exact(spec, &lat, &pol, &ctl)?),
        (
            "optimal".into(),
            evaluate_mc(spec, &lat, &pol, &ctl, opts.paths, opts.seed)?,
        ),
    ];
    let grid = spec.ambiguity().control_grid(opts.u_grid_size);
    for i in 0..20u64 {
        let u = random_control(spec, &lat, &grid, opts.seed.wrapping_add(i));
        rows.push((
            format!("random_control_{}", i + 1),
            evaluate_exact(spec, &lat, &pol, &u)?,
        ));
    }
    for i in 0..20u64 {
        let d = random_policy(spec, &lat, opts.seed.wrapping_add(i));
        rows.push((
            format!("random_policy_{}", i + 1),
            evaluate_worst_on_grid(spec, &lat, &d, &grid)?,
        ));
    }
    let mc = &rows[1].1;
    Ok(Report {
        tables: vec![(None, output::simulate_csv(&rows))],
        summary: Some(format!(
            "Y0={y0} mc={} stderr={} z={}",
            mc.estimate,
            mc.stderr,
            if mc.stderr > 0.0 {
                (mc.estimate - y0) / mc.stderr
            } else {
                0.0
            }
        )),
    })
}

fn cmd_oracle(spec: &ProblemSpec, steps: usize, opts: &Common) -> Result<Report, Failure> {
    let lat = lattice(spec, steps)?;
    let sol = solve(spec, &lat, opts)?;
    let dp = game_dp(spec, &lat, &spec.ambiguity().control_grid(opts.u_grid_size))?;
    let field = dp.field.as_ref().expect("game recursion keeps the field");
    let m = spec.mode_count();
    let mut worst = 0.0f64;
    for n in 0..=steps {
        for k in 0..=n {
            for j in 0..m {
                worst = worst.max((sol.y(j, n, k) - field[node_index(n, k) * m + j]).abs());
            }
        }
    }
    let roots: Vec<f64> = (0..m).map(|j| sol.value(j)).collect();
    Ok(Report {
        tables: vec![(None, output::oracle_csv(&roots, &dp.values))],
        summary: Some(format!("max_abs_diff={worst:e}")),
    })
}

fn cmd_sweep(spec: &ProblemSpec, steps: &[usize], opts: &Common) -> Result<Report, Failure> {
    let rows = steps
        .iter()
        .map(|&n| {
            let lat = lattice(spec, n)?;
            Ok((n, solve(spec, &lat, opts)?.value(spec.start_mode())))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    Ok(Report {
        tables: vec![(None, output::sweep_csv(&rows))],
        summary: rows.last().map(|(n, y)| format!("N={n} Y0={y}")),
    })
}
