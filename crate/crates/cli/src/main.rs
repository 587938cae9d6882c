use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dlk_core::catalog::{self, CatalogEntry};
use dlk_core::coeffexpr::{self, Expr};
use dlk_core::geometry::{ScalarField, StatePoint};
use dlk_core::integrator::{integrate, IntegratorError, TDependentField, Trajectory};
use dlk_core::invariants::{self, InvariantError, NAMED_INVARIANTS};
use dlk_core::skdv::{self, Grid2D, Mobius, ProfileKind, SkdvWave};
use dlk_core::superpose::{self, Scenario, SuperposeError};

const EXIT_TOLERANCE: u8 = 2;
const EXIT_GUARD: u8 = 3;
const EXIT_USAGE: u8 = 64;

/// Systems accepted by `verify`, `integrate` and `invariants` in addition to the catalog.
const EXTRA_SYSTEMS: [&str; 2] = ["ks3_pair", "mixed"];

const AFTER_HELP: &str = "\
Coefficient expressions: numbers, t, pi, + - * / ^, unary minus and the functions
sin cos tan exp log sqrt abs tanh. Unary minus binds looser than ^.

Files:
  trajectory CSV   t,<coordinates>             one row per grid time
  invariant CSV    t,value                     then '# max_abs_drift=..., max_rel_drift=...'
  superpose CSV    t,target_*,rec_*,err        then '# rule=... max_err=... lambda=... lambda_drift=...'
  grid CSV         t\\x,<x values>              rows t,u(t,x_1),...
A trajectory cut short by the chart guard ends with '# guard_exit t=... reason=...'.

Exit codes: 0 success, 2 tolerance exceeded, 3 guard exit or overflow, 64 usage error.
DLK_TOL replaces the default tolerance of verify, invariants, superpose and skdv.";

#[derive(Parser, Debug)]
#[command(name = "dlk", version, about = "Lie systems with presymplectic structure: verification, integration, invariants, superposition, SKdV", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List catalog entries.
    Catalog {
        /// Emit the full metadata as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Check structure constants, closedness, Hamiltonian pairs and Poisson tables at sampled points.
    Verify {
        system: String,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate a system with RK4 and write the trajectory.
    Integrate {
        system: String,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure the drift of constants of motion along a trajectory.
    Invariants {
        system: String,
        /// Comma-separated invariant names (I, F2, F3, U2, U3, F1mixed, F2mixed, F3mixed, or a catalog function such as C).
        #[arg(long, value_delimiter = ',', required = true)]
        names: Vec<String>,
        /// Read the trajectory from this CSV instead of integrating.
        #[arg(long, conflicts_with = "x0")]
        trajectory: Option<PathBuf>,
        #[command(flatten)]
        run: OptionalRunArgs,
        #[arg(long)]
        tol: Option<f64>,
        /// Directory receiving one `<name>.csv` per invariant.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Reconstruct an integrated target from particular solutions and report the error.
    Superpose {
        /// riccati, schwarzian or mixed.
        rule: String,
        /// Coefficient expressions shared by every system involved.
        #[arg(long = "coeff", allow_hyphen_values = true)]
        coeffs: Vec<String>,
        /// Initial data of the particular solutions: states separated by ';', coordinates by ','.
        #[arg(long, allow_hyphen_values = true)]
        inputs: String,
        /// Initial state of the target.
        #[arg(long, allow_hyphen_values = true)]
        target: String,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        t0: f64,
        #[arg(long, allow_hyphen_values = true)]
        t1: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a traveling wave of SKdV on a grid and report residuals.
    Skdv {
        #[arg(long, allow_hyphen_values = true)]
        v0: f64,
        /// tanh (v0 > 0) or rational (v0 = 0).
        #[arg(long, default_value = "tanh")]
        kind: String,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        f0: f64,
        /// Möbius coefficients alpha,beta,gamma,delta applied to the profile.
        #[arg(long, allow_hyphen_values = true)]
        mobius: Option<String>,
        /// t range as a,b.
        #[arg(long, default_value = "0,1", allow_hyphen_values = true)]
        t_range: String,
        #[arg(long, default_value_t = 201)]
        nt: usize,
        /// x range as a,b.
        #[arg(long, default_value = "-5,5", allow_hyphen_values = true)]
        x_range: String,
        #[arg(long, default_value_t = 201)]
        nx: usize,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Coefficient expression for each basis field, in order. Defaults to the entry's coefficients.
    #[arg(long = "coeff", allow_hyphen_values = true)]
    coeffs: Vec<String>,
    /// Initial state, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    x0: String,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    t0: f64,
    #[arg(long, allow_hyphen_values = true)]
    t1: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
}

#[derive(Args, Debug)]
struct OptionalRunArgs {
    #[arg(long = "coeff", allow_hyphen_values = true)]
    coeffs: Vec<String>,
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    t0: f64,
    #[arg(long, allow_hyphen_values = true)]
    t1: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
}

/// Marks errors caused by the invocation rather than the computation.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<E: std::fmt::Display>(e: E) -> anyhow::Error {
    anyhow!(Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Catalog { json } => cmd_catalog(json),
        Command::Verify { system, points, seed, tol, out } => cmd_verify(&system, points, seed, tol, out.as_deref()),
        Command::Integrate { system, run, out } => cmd_integrate(&system, &run, out.as_deref()),
        Command::Invariants { system, names, trajectory, run, tol, out_dir } => {
            cmd_invariants(&system, &names, trajectory.as_deref(), &run, tol, out_dir.as_deref())
        }
        Command::Superpose { rule, coeffs, inputs, target, t0, t1, dt, tol, out } => {
            cmd_superpose(&rule, &coeffs, &inputs, &target, (t0, t1, dt), tol, out.as_deref())
        }
        Command::Skdv { v0, kind, f0, mobius, t_range, nt, x_range, nx, tol, out } => {
            let grid = GridSpec { t: parse_pair(&t_range)?, nt, x: parse_pair(&x_range)?, nx };
            cmd_skdv(v0, &kind, f0, mobius.as_deref(), grid, tol, out.as_deref())
        }
    }
}

/// `--tol` if given, else `DLK_TOL`, else `default`.
fn tolerance(flag: Option<f64>, default: f64) -> Result<f64> {
    let tol = match flag {
        Some(t) => t,
        None => match std::env::var("DLK_TOL") {
            Ok(s) => s.trim().parse::<f64>().map_err(|e| usage(format!("DLK_TOL='{s}': {e}")))?,
            Err(_) => default,
        },
    };
    if tol.is_nan() || tol < 0.0 {
        return Err(usage(format!("tolerance must be non-negative, got {tol}")));
    }
    Ok(tol)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn parse_reals(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| usage(format!("{what}: '{v}': {e}"))))
        .collect()
}

fn parse_pair(s: &str) -> Result<(f64, f64)> {
    match parse_reals(s, "range")?.as_slice() {
        [a, b] if a < b => Ok((*a, *b)),
        _ => Err(usage(format!("range '{s}' must be a,b with a < b"))),
    }
}

fn resolve_system(id: &str) -> Result<CatalogEntry> {
    let e = match id {
        "ks3_pair" => catalog::ks3_prolonged(0.0, 2),
        "mixed" => catalog::mixed_joint(),
        other => catalog::entry(other),
    };
    e.map_err(|_| {
        usage(format!("unknown system '{id}'; known: {}, {}", catalog::IDS.join(", "), EXTRA_SYSTEMS.join(", ")))
    })
}

fn parse_coeffs(srcs: &[String], entry: &CatalogEntry) -> Result<Vec<Expr>> {
    if srcs.is_empty() {
        return Ok(entry.default_coeffs.clone());
    }
    srcs.iter().map(|s| coeffexpr::parse(s).map_err(|e| usage(format!("coefficient '{s}': {e}")))).collect()
}

fn build_system(entry: &CatalogEntry, srcs: &[String]) -> Result<TDependentField> {
    catalog::build_field(entry, &parse_coeffs(srcs, entry)?).map_err(usage)
}

fn check_window(t0: f64, t1: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0 && t1 > t0 && dt.is_finite() && t0.is_finite() && t1.is_finite()) {
        return Err(usage(format!("need dt > 0 and t1 > t0, got t0={t0} t1={t1} dt={dt}")));
    }
    Ok(())
}

fn state(s: &str, dim: usize, what: &str) -> Result<StatePoint> {
    let v = parse_reals(s, what)?;
    if v.len() != dim {
        return Err(usage(format!("{what} has {} coordinates, expected {dim}", v.len())));
    }
    Ok(StatePoint::new(v))
}

fn guard_trailer(e: &IntegratorError) -> String {
    match e {
        IntegratorError::GuardExit { t, .. } => format!("# guard_exit t={t:.16e} reason=singular_set"),
        IntegratorError::NonFinite { t, .. } => format!("# guard_exit t={t:.16e} reason=non_finite"),
        other => format!("# guard_exit reason={other}"),
    }
}

fn cmd_catalog(json: bool) -> Result<u8> {
    let mut out = io::stdout().lock();
    if json {
        writeln!(out, "{}", catalog::catalog_json())?;
        return Ok(0);
    }
    writeln!(out, "{:<18} {:>3} {:>7}  {:<28} symmetries", "id", "dim", "algebra", "forms")?;
    for id in catalog::IDS {
        let e = catalog::entry(id)?;
        let forms: Vec<&str> = e.forms.iter().map(|f| f.name.as_str()).collect();
        let syms: Vec<&str> = e.symmetries.iter().map(|(n, _)| n.as_str()).collect();
        writeln!(
            out,
            "{:<18} {:>3} {:>7}  {:<28} {}",
            e.id,
            e.dimension(),
            e.algebra_dimension(),
            if forms.is_empty() { "-".to_string() } else { forms.join(",") },
            if syms.is_empty() { "-".to_string() } else { syms.join(",") }
        )?;
    }
    Ok(0)
}

fn cmd_verify(system: &str, points: usize, seed: u64, tol: Option<f64>, out: Option<&Path>) -> Result<u8> {
    let tol = tolerance(tol, 1e-6)?;
    let entry = resolve_system(system)?;
    if points == 0 {
        return Err(usage("--points must be positive"));
    }
    let samples = entry.sample(points, seed)?;
    let report = catalog::verify_entry(&entry, &samples)?;
    let mut w = open_output(out)?;
    write!(w, "seed={seed}\n{}", report.render(tol))?;
    w.flush()?;
    Ok(if report.passes(tol) { 0 } else { EXIT_TOLERANCE })
}

fn cmd_integrate(system: &str, run: &RunArgs, out: Option<&Path>) -> Result<u8> {
    let entry = resolve_system(system)?;
    let field = build_system(&entry, &run.coeffs)?;
    check_window(run.t0, run.t1, run.dt)?;
    let x0 = state(&run.x0, entry.dimension(), "x0")?;
    let mut w = open_output(out)?;
    let code = match integrate(&field, &x0, run.t0, run.t1, run.dt) {
        Ok(traj) => {
            traj.write_csv(&mut w)?;
            0
        }
        Err(e) => match e.partial() {
            Some(p) => {
                p.write_csv(&mut w)?;
                writeln!(w, "{}", guard_trailer(&e))?;
                eprintln!("error: {e}");
                EXIT_GUARD
            }
            None => return Err(usage(e)),
        },
    };
    w.flush()?;
    Ok(code)
}

fn invariant_function(entry: &CatalogEntry, name: &str) -> Result<ScalarField> {
    if let Some(f) = entry.function(name) {
        return Ok(f.clone());
    }
    if !NAMED_INVARIANTS.contains(&name) {
        return Err(usage(format!("system '{}' has no invariant '{name}'", entry.id)));
    }
    let f = invariants::named_invariant(name)?;
    if !f.chart().is_compatible(&entry.chart) {
        return Err(usage(format!("invariant '{name}' does not live on system '{}'", entry.id)));
    }
    Ok(f)
}

fn cmd_invariants(
    system: &str,
    names: &[String],
    trajectory: Option<&Path>,
    run: &OptionalRunArgs,
    tol: Option<f64>,
    out_dir: Option<&Path>,
) -> Result<u8> {
    let tol = tolerance(tol, 1e-6)?;
    let entry = resolve_system(system)?;
    let fs = names.iter().map(|n| invariant_function(&entry, n)).collect::<Result<Vec<_>>>()?;
    let traj = match (trajectory, &run.x0) {
        (Some(p), _) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Trajectory::read_csv(f, &entry.chart, &entry.id).map_err(usage)?
        }
        (None, Some(x0)) => {
            let t1 = run.t1.ok_or_else(|| usage("--t1 is required when integrating"))?;
            check_window(run.t0, t1, run.dt)?;
            let field = build_system(&entry, &run.coeffs)?;
            let x0 = state(x0, entry.dimension(), "x0")?;
            match integrate(&field, &x0, run.t0, t1, run.dt) {
                Ok(t) => t,
                Err(e) if e.partial().is_some() => {
                    eprintln!("error: {e}");
                    println!("{}", guard_trailer(&e));
                    return Ok(EXIT_GUARD);
                }
                Err(e) => return Err(usage(e)),
            }
        }
        (None, None) => bail!(Usage("either --trajectory or --x0/--t1 is required".into())),
    };
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let mut code = 0;
    let mut stdout = io::stdout().lock();
    for (name, f) in names.iter().zip(&fs) {
        let rep = match invariants::drift_report(name, f, &traj) {
            Ok(r) => r,
            Err(e @ InvariantError::GuardExit { .. }) => {
                writeln!(stdout, "{name} {e}")?;
                code = EXIT_GUARD;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let ok = rep.max_rel_drift <= tol;
        writeln!(
            stdout,
            "{name} initial={:.12e} max_abs_drift={:.6e} max_rel_drift={:.6e} {}",
            rep.values[0],
            rep.max_abs_drift,
            rep.max_rel_drift,
            if ok { "ok" } else { "FAIL" }
        )?;
        if !ok && code == 0 {
            code = EXIT_TOLERANCE;
        }
        if let Some(d) = out_dir {
            let mut w = BufWriter::new(File::create(d.join(format!("{name}.csv")))?);
            rep.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    Ok(code)
}

fn cmd_superpose(
    rule_id: &str,
    coeffs: &[String],
    inputs: &str,
    target: &str,
    (t0, t1, dt): (f64, f64, f64),
    tol: Option<f64>,
    out: Option<&Path>,
) -> Result<u8> {
    let rule = superpose::rule_by_id(rule_id).map_err(usage)?;
    let (input_id, target_id, default_tol) = match rule_id {
        "riccati" => ("riccati", "riccati", 1e-5),
        "schwarzian" => ("ks3", "ks3", 1e-5),
        _ => ("linear2d", "ks3", 1e-4),
    };
    let tol = tolerance(tol, default_tol)?;
    check_window(t0, t1, dt)?;
    let input_entry = resolve_system(input_id)?;
    let target_entry = resolve_system(target_id)?;
    let input_system = build_system(&input_entry, coeffs)?;
    let target_system = build_system(&target_entry, coeffs)?;
    let starts = inputs
        .split(';')
        .map(|s| state(s, rule.input_dimension(), "input"))
        .collect::<Result<Vec<_>>>()?;
    let target = state(target, rule.output_dimension(), "target")?;
    let scenario = Scenario { rule, input_system, target_system, inputs: starts, target, t0, t1, dt, extract_index: 0 };
    let report = match superpose::validate_rule(&scenario) {
        Ok(r) => r,
        Err(SuperposeError::Integrator(e)) if e.partial().is_some() => {
            eprintln!("error: {e}");
            println!("{}", guard_trailer(&e));
            return Ok(EXIT_GUARD);
        }
        Err(SuperposeError::Integrator(e)) => return Err(usage(e)),
        Err(e @ (SuperposeError::Shape { .. } | SuperposeError::Scenario(_))) => return Err(usage(e)),
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_GUARD);
        }
    };
    if let Some(p) = out {
        let mut w = open_output(Some(p))?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.12e}")).collect::<Vec<_>>().join(";");
    println!(
        "rule={} max_err={:.6e} lambda={} max_lambda_drift={:.6e}",
        report.rule,
        report.max_err,
        fmt(&report.lambda),
        report.max_lambda_drift()
    );
    Ok(if report.max_err <= tol { 0 } else { EXIT_TOLERANCE })
}

struct GridSpec {
    t: (f64, f64),
    nt: usize,
    x: (f64, f64),
    nx: usize,
}

fn cmd_skdv(v0: f64, kind: &str, f0: f64, mobius: Option<&str>, g: GridSpec, tol: Option<f64>, out: Option<&Path>) -> Result<u8> {
    let tol = tolerance(tol, 1e-4)?;
    let kind: ProfileKind = kind.parse().map_err(usage)?;
    let mut profile = skdv::traveling_profile(v0, kind).map_err(usage)?;
    if let Some(m) = mobius {
        let c = parse_reals(m, "mobius")?;
        let [a, b, gm, d] = c.as_slice() else {
            return Err(usage("--mobius needs four numbers alpha,beta,gamma,delta"));
        };
        profile = skdv::mobius_orbit(profile, Mobius::new(*a, *b, *gm, *d).map_err(usage)?)?;
    }
    if g.nt < 5 || g.nx < 5 {
        return Err(usage("grids need at least 5 points per axis"));
    }
    let ts = skdv::linspace(g.t.0, g.t.1, g.nt);
    let xs = skdv::linspace(g.x.0, g.x.1, g.nx);
    let wave = SkdvWave::new(v0, f0, profile.clone());
    let sampled = (|| -> std::result::Result<_, skdv::SkdvError> {
        let phi = wave.sample(&ts, &xs)?;
        let skdv_res = wave.skdv_residual(&ts, &xs)?;
        let s = Grid2D::from_fn(&ts, &xs, |t, x| wave.schwarzian_x(t, x))?;
        let kdv_res = skdv::kdv_residual(&s)?;
        let mut trav: f64 = 0.0;
        for &t in &ts {
            for &x in &xs {
                let z = wave.phase(t, x);
                trav = trav.max(skdv::traveling_residual(profile.derivatives(z)?, v0, z)?.abs());
            }
        }
        Ok((phi, skdv_res, kdv_res, trav))
    })();
    let (phi, skdv_res, kdv_res, trav) = match sampled {
        Ok(v) => v,
        Err(e @ skdv::SkdvError::PoleOnGrid(_)) => {
            eprintln!("error: {e}");
            return Ok(EXIT_GUARD);
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(p) = out {
        let mut w = open_output(Some(p))?;
        phi.write_csv(&mut w)?;
        w.flush()?;
    }
    println!("skdv_residual={skdv_res:.6e} traveling_residual={trav:.6e} kdv_residual_of_schwarzian={kdv_res:.6e}");
    Ok(if skdv_res <= tol { 0 } else { EXIT_TOLERANCE })
}
