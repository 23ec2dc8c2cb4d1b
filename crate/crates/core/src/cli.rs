//! Command-line interface.
//!
//! Subcommands: `graph validate`, `barrier verify`, `barrier search`,
//! `dirichlet solve`, `radial solve`, `experiment exhaustion`,
//! `experiment phase-sweep`. Exit codes: 0 on success, 1 when a
//! verification or run fails, 2 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::barriers::{
    self, BarrierSpec, Domain, SearchParam, DEFAULT_ITERATIONS, DEFAULT_TOLERANCE, DEFAULT_WINDOW,
};
use crate::dirichlet::{solve_problem, DirichletProblem};
use crate::experiments::{exhaustion_run, tree_phase_sweep, ExhaustionConfig, PhaseSweepConfig};
use crate::graph::{Branching, GraphBall, GraphSpec, LatticeSpec, DEFAULT_VERTEX_CAP};
use crate::operators::{Field, Metric, Potential};
use crate::radial::{radial_dirichlet_solve, RadialProfile};

#[derive(Parser)]
#[command(name = "plgraph", version, about = "Discrete Schrodinger operators on truncated infinite graphs: barrier checks, Dirichlet solves, exhaustion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Graph construction and validation
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
    /// Barrier verification and parameter search
    Barrier {
        #[command(subcommand)]
        command: BarrierCommand,
    },
    /// Dirichlet problems on graph balls
    Dirichlet {
        #[command(subcommand)]
        command: DirichletCommand,
    },
    /// Radial solves on spherically symmetric trees
    Radial {
        #[command(subcommand)]
        command: RadialCommand,
    },
    /// Exhaustion experiments
    Experiment {
        #[command(subcommand)]
        command: ExperimentCommand,
    },
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Build a ball from a family spec and report invariant violations
    Validate {
        /// Graph family spec: a JSON file path or an inline JSON object
        #[arg(long)]
        graph: String,
        /// Vertex cap override
        #[arg(long)]
        cap: Option<usize>,
    },
}

#[derive(Args, Default)]
struct BarrierFlags {
    /// JSON config file; explicit flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Barrier family (tree_power, tree_log, growth_gauge, lattice_power,
    /// lattice_log, lattice_inverse, tree_inverse)
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "K")]
    k: Option<f64>,
    #[arg(long = "M")]
    m: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Verification radius: tree families scan layers 0..=radius through the
    /// radial reduction, lattice families build the Euclidean ball
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Constant tree branching b0
    #[arg(long)]
    b0: Option<u64>,
    /// Power tree branching exponent p
    #[arg(long)]
    p: Option<u32>,
    /// Lattice dimension
    #[arg(long)]
    n: Option<usize>,
    /// Accept parameters outside each family's validity window
    #[arg(long, default_value_t = false)]
    no_strict: bool,
    /// Output directory for the JSON report
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BarrierCommand {
    /// Check the barrier inequality pointwise
    Verify(BarrierFlags),
    /// Bisect for the largest passing M/K (sub) or smallest sigma (super)
    Search {
        #[command(flatten)]
        flags: BarrierFlags,
        /// Parameter to search (M, K or sigma); inferred from the family
        #[arg(long)]
        which: Option<String>,
        #[arg(long)]
        window_lo: Option<f64>,
        #[arg(long)]
        window_hi: Option<f64>,
        #[arg(long)]
        iterations: Option<u32>,
    },
}

#[derive(Subcommand)]
enum DirichletCommand {
    /// Assemble and solve the Dirichlet problem
    Solve {
        /// Graph family spec: JSON file path or inline JSON
        #[arg(long)]
        graph: String,
        /// Potential spec: JSON file path or inline JSON
        #[arg(long)]
        potential: String,
        /// Halo data: a constant or a CSV file (vertex_id,value)
        #[arg(long, default_value = "0")]
        boundary: String,
        /// Interior right-hand side: a constant or a CSV file
        #[arg(long, default_value = "0")]
        f: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cap: Option<usize>,
    },
}

#[derive(Subcommand)]
enum RadialCommand {
    /// Solve the radial Dirichlet problem on a tree
    Solve {
        /// Branching: "3", "constant:3" or "power:2"
        #[arg(long)]
        branching: String,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        c0: f64,
        #[arg(long, default_value_t = 1.0)]
        boundary: f64,
        #[arg(long)]
        radius: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Nested-ball exhaustion run
    Exhaustion {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `out`)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tree uniqueness/nonuniqueness phase sweep
    PhaseSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliFailure {
    /// Wrong invocation or unreadable inputs: exit 2.
    Usage(String),
    /// The computation ran and failed, or reported a failure: exit 1.
    Run(String),
}

type CliResult = Result<i32, CliFailure>;

fn usage<E: std::fmt::Display>(e: E) -> CliFailure {
    CliFailure::Usage(e.to_string())
}

fn run_err<E: std::fmt::Display>(e: E) -> CliFailure {
    CliFailure::Run(e.to_string())
}

/// Entry point taking full argv (including the program name); returns the
/// process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(CliFailure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliFailure::Run(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Graph { command: GraphCommand::Validate { graph, cap } } => {
            graph_validate(&graph, cap)
        }
        Command::Barrier { command } => match command {
            BarrierCommand::Verify(flags) => barrier_cmd(flags, None),
            BarrierCommand::Search { flags, which, window_lo, window_hi, iterations } => {
                barrier_cmd(flags, Some((which, window_lo, window_hi, iterations)))
            }
        },
        Command::Dirichlet {
            command: DirichletCommand::Solve { graph, potential, boundary, f, out, cap },
        } => dirichlet_solve(&graph, &potential, &boundary, &f, out, cap),
        Command::Radial {
            command: RadialCommand::Solve { branching, alpha, c0, boundary, radius, out },
        } => radial_solve(&branching, alpha, c0, boundary, radius, out),
        Command::Experiment { command } => match command {
            ExperimentCommand::Exhaustion { config, out } => experiment_exhaustion(&config, out),
            ExperimentCommand::PhaseSweep { config, out } => experiment_phase_sweep(&config, out),
        },
    }
}

/// Reads a JSON value from a path, or parses it inline when the argument
/// itself looks like a JSON object.
fn json_arg(arg: &str) -> Result<String, CliFailure> {
    if arg.trim_start().starts_with('{') {
        Ok(arg.to_string())
    } else {
        fs::read_to_string(arg).map_err(|e| usage(format!("cannot read `{arg}`: {e}")))
    }
}

fn write_out(dir: &Option<PathBuf>, name: &str, content: &str) -> Result<(), CliFailure> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(usage)?;
        fs::write(dir.join(name), content).map_err(usage)?;
    }
    Ok(())
}

fn graph_validate(graph: &str, cap: Option<usize>) -> CliResult {
    let spec = GraphSpec::from_json(&json_arg(graph)?).map_err(usage)?;
    let ball = spec.build_with_cap(cap.unwrap_or(DEFAULT_VERTEX_CAP)).map_err(run_err)?;
    let violations: Vec<String> = ball.validate().iter().map(|v| v.to_string()).collect();
    let valid = violations.is_empty();
    let report = serde_json::json!({
        "valid": valid,
        "vertices": ball.vertex_count(),
        "interior": ball.interior().len(),
        "halo": ball.halo().len(),
        "violations": violations,
    });
    println!("{}", serde_json::to_string_pretty(&report).map_err(run_err)?);
    Ok(if valid { 0 } else { 1 })
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BarrierFileConfig {
    family: Option<String>,
    alpha: Option<f64>,
    c0: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    #[serde(rename = "K")]
    k: Option<f64>,
    #[serde(rename = "M")]
    m: Option<f64>,
    sigma: Option<f64>,
    radius: Option<f64>,
    tolerance: Option<f64>,
    b0: Option<u64>,
    p: Option<u32>,
    n: Option<usize>,
    strict: Option<bool>,
    which: Option<String>,
    window_lo: Option<f64>,
    window_hi: Option<f64>,
    iterations: Option<u32>,
}

struct BarrierSetup {
    spec: BarrierSpec,
    potential: Potential,
    tolerance: f64,
    branching: Option<Branching>,
    lattice_n: Option<usize>,
    radius: f64,
    which: Option<String>,
    window: (f64, f64),
    iterations: u32,
}

fn barrier_setup(flags: &BarrierFlags) -> Result<BarrierSetup, CliFailure> {
    let file: BarrierFileConfig = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read `{}`: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(usage)?
        }
        None => BarrierFileConfig::default(),
    };

    let family_name = flags
        .family
        .clone()
        .or(file.family)
        .ok_or_else(|| usage("--family is required"))?;
    let family = family_name.parse().map_err(usage)?;

    let mut spec = BarrierSpec::new(family);
    spec.m = flags.m.or(file.m);
    spec.k = flags.k.or(file.k);
    spec.beta = flags.beta.or(file.beta);
    spec.gamma = flags.gamma.or(file.gamma);
    spec.sigma = flags.sigma.or(file.sigma);
    spec.alpha = flags.alpha.or(file.alpha);
    spec.strict = if flags.no_strict { false } else { file.strict.unwrap_or(true) };

    let branching = match (flags.b0.or(file.b0), flags.p.or(file.p)) {
        (Some(_), Some(_)) => return Err(usage("give either --b0 or --p, not both")),
        (Some(b0), None) => Some(Branching::Constant { b0 }),
        (None, Some(p)) => Some(Branching::Power { p }),
        (None, None) => None,
    };
    let lattice_n = flags.n.or(file.n);
    let radius = flags.radius.or(file.radius).unwrap_or(30.0);
    let alpha = spec.alpha.unwrap_or(1.0);
    let c0 = flags.c0.or(file.c0).unwrap_or(1.0);

    // tree-metric families verify against the combinatorial potential on the
    // radial reduction; lattice families against the Euclidean potential on a
    // built ball
    let tree_domain = branching.is_some() && lattice_n.is_none();
    let potential = if tree_domain {
        Potential::power(c0, alpha, Metric::Combinatorial)
    } else {
        Potential::power(c0, alpha, Metric::Euclidean)
    };

    Ok(BarrierSetup {
        spec,
        potential,
        tolerance: flags.tolerance.or(file.tolerance).unwrap_or(DEFAULT_TOLERANCE),
        branching,
        lattice_n,
        radius,
        which: file.which,
        window: (
            file.window_lo.unwrap_or(DEFAULT_WINDOW.0),
            file.window_hi.unwrap_or(DEFAULT_WINDOW.1),
        ),
        iterations: file.iterations.unwrap_or(DEFAULT_ITERATIONS),
    })
}

fn barrier_cmd(
    flags: BarrierFlags,
    search: Option<(Option<String>, Option<f64>, Option<f64>, Option<u32>)>,
) -> CliResult {
    let setup = barrier_setup(&flags)?;
    let which_cfg = setup.which.clone();
    let (window_cfg, iterations_cfg) = (setup.window, setup.iterations);

    // hold the ball (when one is needed) for the lifetime of the domain
    let ball: Option<GraphBall>;
    let domain = match (&setup.branching, setup.lattice_n) {
        (Some(_), Some(_)) => return Err(usage("give a tree (--b0/--p) or a lattice (--n), not both")),
        (Some(branching), None) => {
            if setup.radius < 0.0 || setup.radius.fract() != 0.0 {
                return Err(usage("tree radius must be a nonnegative integer"));
            }
            Domain::TreeRadial { branching, radius: setup.radius as u32 }
        }
        (None, Some(n)) => {
            let built = crate::graph::build_lattice_ball(&LatticeSpec {
                n,
                radius: setup.radius,
            })
            .map_err(run_err)?;
            ball = Some(built);
            Domain::Ball(ball.as_ref().unwrap())
        }
        (None, None) => {
            return Err(usage(
                "specify the graph: --b0/--p for a tree family or --n for a lattice family",
            ))
        }
    };

    match search {
        None => {
            let report = barriers::verify_on(&setup.spec, &domain, &setup.potential, setup.tolerance)
                .map_err(run_err)?;
            let json = serde_json::to_string_pretty(&report).map_err(run_err)?;
            println!("{json}");
            write_out(&flags.out, "barrier_verify.json", &json)?;
            Ok(if report.pass { 0 } else { 1 })
        }
        Some((which_flag, lo, hi, iters)) => {
            let which = match which_flag.or(which_cfg) {
                Some(s) => s.parse().map_err(usage)?,
                None => SearchParam::infer(setup.spec.family).map_err(run_err)?,
            };
            let window = (lo.unwrap_or(window_cfg.0), hi.unwrap_or(window_cfg.1));
            let iterations = iters.unwrap_or(iterations_cfg);
            let outcome = barriers::search_parameter(
                &setup.spec,
                &domain,
                &setup.potential,
                which,
                window,
                iterations,
                setup.tolerance,
            )
            .map_err(run_err)?;
            let json = serde_json::to_string_pretty(&outcome).map_err(run_err)?;
            println!("{json}");
            write_out(&flags.out, "barrier_search.json", &json)?;
            Ok(0)
        }
    }
}

/// Parses a constant, or a CSV file of `vertex_id,value` rows, into a field.
fn field_arg(
    ball: &GraphBall,
    arg: &str,
    cover: &[u32],
    what: &str,
) -> Result<Field, CliFailure> {
    if let Ok(c) = arg.parse::<f64>() {
        return Ok(Field::constant(ball, c));
    }
    let text =
        fs::read_to_string(arg).map_err(|e| usage(format!("cannot read {what} `{arg}`: {e}")))?;
    let mut field = Field::zeros(ball);
    let mut seen = vec![false; ball.vertex_count()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("vertex_id")) {
            continue;
        }
        let (id, value) = line
            .rsplit_once(',')
            .ok_or_else(|| usage(format!("{what} line {} is not `vertex_id,value`", lineno + 1)))?;
        let v = ball.vertex_by_id(id).map_err(usage)?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|e| usage(format!("{what} line {}: {e}", lineno + 1)))?;
        field.set(v, value);
        seen[v as usize] = true;
    }
    if let Some(&missing) = cover.iter().find(|&&v| !seen[v as usize]) {
        return Err(usage(format!(
            "{what} does not cover vertex `{}`",
            ball.vertex_id(missing)
        )));
    }
    Ok(field)
}

fn dirichlet_solve(
    graph: &str,
    potential: &str,
    boundary: &str,
    f: &str,
    out: Option<PathBuf>,
    cap: Option<usize>,
) -> CliResult {
    let spec = GraphSpec::from_json(&json_arg(graph)?).map_err(usage)?;
    let ball = spec.build_with_cap(cap.unwrap_or(DEFAULT_VERTEX_CAP)).map_err(run_err)?;
    let potential = Potential::from_json(&json_arg(potential)?).map_err(usage)?;
    let g = field_arg(&ball, boundary, ball.halo(), "boundary data")?;
    let f = field_arg(&ball, f, &[], "right-hand side")?;

    let problem = DirichletProblem::new(&ball, potential, f, g).map_err(run_err)?;
    let report = solve_problem(&problem).map_err(run_err)?;

    let json = serde_json::to_string_pretty(&report).map_err(run_err)?;
    println!("{json}");

    let dir = out.unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(usage)?;
    let mut csv = Vec::new();
    writeln!(&mut csv, "vertex_id,u").map_err(run_err)?;
    for v in 0..ball.vertex_count() as u32 {
        writeln!(&mut csv, "{},{}", ball.vertex_id(v), report.u.value(v)).map_err(run_err)?;
    }
    fs::write(dir.join("solution.csv"), csv).map_err(run_err)?;
    fs::write(dir.join("report.json"), json).map_err(run_err)?;
    Ok(0)
}

fn radial_solve(
    branching: &str,
    alpha: f64,
    c0: f64,
    boundary: f64,
    radius: u32,
    out: Option<PathBuf>,
) -> CliResult {
    let branching = Branching::parse_flag(branching).map_err(usage)?;
    let potential = Potential::power(c0, alpha, Metric::Combinatorial);
    potential.check().map_err(usage)?;
    let geometry = RadialProfile::from_tree(&branching, radius, vec![0.0; radius as usize + 2])
        .map_err(run_err)?;
    let v: Vec<f64> = (0..=radius).map(|r| potential.value_at_dist(r as f64)).collect();
    let f = vec![0.0; radius as usize + 1];
    let solved = radial_dirichlet_solve(&geometry, &v, &f, boundary).map_err(run_err)?;

    let mut csv = String::from("r,u,Dplus,Dminus,V\n");
    for r in 0..=radius + 1 {
        let (dplus, dminus, vr) = if r <= radius {
            (
                solved.dplus(r).to_string(),
                if r == 0 { String::new() } else { solved.dminus(r).to_string() },
                v[r as usize].to_string(),
            )
        } else {
            (String::new(), String::new(), String::new())
        };
        csv.push_str(&format!("{},{},{},{},{}\n", r, solved.value(r), dplus, dminus, vr));
    }
    print!("{csv}");
    if let Some(dir) = &out {
        fs::create_dir_all(dir).map_err(usage)?;
        fs::write(dir.join("radial.csv"), &csv).map_err(run_err)?;
    }
    Ok(0)
}

fn experiment_exhaustion(config: &Path, out: Option<PathBuf>) -> CliResult {
    let text = fs::read_to_string(config)
        .map_err(|e| usage(format!("cannot read `{}`: {e}", config.display())))?;
    let mut cfg = ExhaustionConfig::from_json(&text).map_err(usage)?;
    if let Some(dir) = out {
        cfg.out = Some(dir);
    }
    let table = exhaustion_run(&cfg).map_err(run_err)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv).map_err(run_err)?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(usage)?;
    fs::write(dir.join("exhaustion.csv"), &csv).map_err(run_err)?;
    print!("{}", String::from_utf8_lossy(&csv));
    for (probe, limit) in &table.limits {
        match limit {
            Some(l) => eprintln!("probe {probe}: converged to {l}"),
            None => eprintln!("probe {probe}: not converged on this schedule"),
        }
    }
    Ok(0)
}

fn experiment_phase_sweep(config: &Path, out: Option<PathBuf>) -> CliResult {
    let text = fs::read_to_string(config)
        .map_err(|e| usage(format!("cannot read `{}`: {e}", config.display())))?;
    let mut cfg = PhaseSweepConfig::from_json(&text).map_err(usage)?;
    if let Some(dir) = out {
        cfg.out = Some(dir);
    }
    let table = tree_phase_sweep(&cfg).map_err(run_err)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv).map_err(run_err)?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(usage)?;
    fs::write(dir.join("phase_sweep.csv"), &csv).map_err(run_err)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> i32 {
        let mut argv = vec!["plgraph"];
        argv.extend_from_slice(args);
        cli_main(argv)
    }

    #[test]
    fn no_arguments_is_a_usage_error() {
        assert_eq!(run(&[]), 2);
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(run(&["graph", "validate", "--bogus"]), 2);
    }

    #[test]
    fn validate_inline_graph_spec() {
        let code = run(&[
            "graph",
            "validate",
            "--graph",
            r#"{"family":"tree","branching":{"kind":"constant","b0":2},"radius":3}"#,
        ]);
        assert_eq!(code, 0);
    }

    #[test]
    fn barrier_verify_strict_domain_violation_exits_one() {
        let code = run(&[
            "barrier", "verify", "--family", "lattice_power", "--alpha", "1", "--beta", "0.9",
            "--K", "0.1", "--n", "3", "--radius", "5",
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn barrier_verify_tree_power_passes() {
        let code = run(&[
            "barrier", "verify", "--family", "tree_power", "--alpha", "0", "--M", "0.5",
            "--b0", "2", "--radius", "100",
        ]);
        assert_eq!(code, 0);
    }

    #[test]
    fn missing_family_is_usage_error() {
        assert_eq!(run(&["barrier", "verify", "--b0", "2", "--radius", "10"]), 2);
    }
}
