use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use hjb_illiquid::montecarlo::{compare_policies, FractionPolicy, Policy, SolverPolicy};
use hjb_illiquid::reduction::{classify_all, ReductionCase};
use hjb_illiquid::solver::{reconstruct, solve_reduced_h4, ValueSurface};
use hjb_illiquid::verify::{self, Section};
use serde::Serialize;

mod config;

/// Prints a line to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

use config::{ConfigError, Loaded, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "hjb-illiquid", version, about = "Symmetry reductions, solver and simulator for the illiquid-asset HJB problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every random draw; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reduction case, e.g. H4 or H12.
    #[arg(long, global = true)]
    case: Option<String>,
    /// Symmetry parameter of the H4 family.
    #[arg(long, global = true, allow_negative_numbers = true)]
    omega: Option<f64>,
    /// Restrict `verify` to one report section.
    #[arg(long, global = true)]
    only: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Bracket tables, covariance, equivalence and reduction identities.
    Verify,
    /// Classification of the reductions, or one case with --case.
    Reduce,
    /// Solve the admissible reduced equation.
    Solve,
    /// Evaluate the reconstructed policy on the query grid.
    Policy,
    /// Monte Carlo comparison of the solver policy with baselines.
    Simulate,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    config_hash: &'a str,
    #[serde(flatten)]
    body: T,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("HJB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| ConfigError(format!("HJB_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| anyhow!("thread pool: {e}"))
}

fn load(cli: &Cli) -> anyhow::Result<Loaded> {
    let path = cli.config.as_ref().ok_or_else(|| ConfigError("--config <path> is required".into()))?;
    let mut loaded = RunConfig::load(path)?;
    let c = &mut loaded.config;
    if let Some(s) = cli.seed {
        c.seed = Some(s);
    }
    if let Some(s) = c.seed {
        c.mc.seed = s;
        c.verify.seed = s;
    }
    if let Some(case) = &cli.case {
        c.reduction.case = case.clone();
    }
    if let Some(o) = cli.omega {
        c.reduction.omega = Some(o);
    }
    if cli.out.is_some() {
        c.out = cli.out.clone();
    }
    c.validate().map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    Ok(loaded)
}

fn out_dir(c: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

/// Writes `contents` to `dir/name` through a temporary file and rename.
fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> anyhow::Result<PathBuf> {
    use std::io::Write;
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(&target).map_err(|e| anyhow!("cannot write {}: {}", target.display(), e.error))?;
    Ok(target)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, command: &str, hash: &str, body: T) -> anyhow::Result<String> {
    let env = Envelope { command, config_hash: hash, body };
    let mut s = serde_json::to_string_pretty(&env)?;
    s.push('\n');
    write_atomic(dir, name, s.as_bytes())?;
    Ok(s)
}

fn csv_line(values: &[f64]) -> String {
    let cells: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
    cells.join(",")
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    configure_threads()?;
    let loaded = load(cli)?;
    let dir = out_dir(&loaded.config)?;
    match cli.command {
        Command::Verify => cmd_verify(cli, &loaded, &dir),
        Command::Reduce => cmd_reduce(&loaded, &dir),
        Command::Solve => cmd_solve(&loaded, &dir).map(|_| true),
        Command::Policy => cmd_policy(&loaded, &dir),
        Command::Simulate => cmd_simulate(&loaded, &dir),
    }
}

fn cmd_verify(cli: &Cli, l: &Loaded, dir: &Path) -> anyhow::Result<bool> {
    let c = &l.config;
    let only: Vec<Section> = match &cli.only {
        Some(s) => vec![s.parse::<Section>().map_err(|e| ConfigError(e.to_string()))?],
        None => Vec::new(),
    };
    let report = verify::run(&c.params, &c.survival, &c.verify, &only)?;
    write_json(dir, "verify.json", "verify", &l.hash, &report)?;
    for (name, s) in &report.sections {
        let failed = s.checks.iter().filter(|c| !c.passed).count();
        say!("{name}: {} ({} checks, {failed} failed)", if s.passed { "pass" } else { "FAIL" }, s.checks.len());
        for chk in s.checks.iter().filter(|c| !c.passed) {
            say!("  failed: {} = {:e} (tolerance {:e})", chk.name, chk.value, chk.tolerance);
        }
    }
    Ok(report.passed)
}

/// Catalog row for a parsed case.
fn catalog_id(case: &ReductionCase) -> &'static str {
    match case {
        ReductionCase::H2 => "H2",
        ReductionCase::H4Omega0 => "H4_omega0",
        ReductionCase::H4 { .. } => "H4",
        ReductionCase::H5 { .. } => "H5",
        ReductionCase::H7 { .. } => "H7",
        ReductionCase::H8 => "H8",
        ReductionCase::H12 => "H12",
    }
}

fn cmd_reduce(l: &Loaded, dir: &Path) -> anyhow::Result<bool> {
    #[derive(Serialize)]
    struct Body<'a> {
        case: Option<&'a hjb_illiquid::reduction::CaseEntry>,
        catalog: &'a hjb_illiquid::reduction::CatalogReport,
    }
    let c = &l.config;
    let omega = c.omega();
    let catalog = classify_all(&c.params, &c.survival, Some(omega));
    let case = ReductionCase::parse(&c.reduction.case, omega).map_err(|e| ConfigError(e.to_string()))?;
    let entry = match case {
        ReductionCase::H4 { omega } => {
            let adm = hjb_illiquid::reduction::classify(case);
            let mut e = catalog.entry("H4").cloned().ok_or_else(|| anyhow!("catalog lacks H4"))?;
            e.admissibility = adm;
            if let hjb_illiquid::reduction::Admissibility::Rejected(r) = adm {
                e.reason = r.describe().to_string();
            }
            e.subalgebra = format!("<e1 + {omega} e3>");
            Some(e)
        }
        other => catalog.entry(catalog_id(&other)).cloned(),
    };
    write_json(dir, "reduce.json", "reduce", &l.hash, Body { case: entry.as_ref(), catalog: &catalog })?;
    if let Some(e) = &entry {
        say!("{}", serde_json::to_string_pretty(e)?);
    }
    Ok(true)
}

fn solve_surface(l: &Loaded) -> anyhow::Result<ValueSurface> {
    let c = &l.config;
    let omega = c.omega();
    let case = ReductionCase::parse(&c.reduction.case, omega).map_err(|e| ConfigError(e.to_string()))?;
    if !matches!(case, ReductionCase::H4 { omega } if omega > 0.0) {
        bail!(ConfigError(format!("only H4 with omega > 0 can be solved; got {case}")));
    }
    Ok(solve_reduced_h4(&c.params, &c.survival, omega, &c.grid()?, &c.solver)?)
}

fn cmd_solve(l: &Loaded, dir: &Path) -> anyhow::Result<ValueSurface> {
    #[derive(Serialize)]
    struct Body<'a> {
        omega: f64,
        grid: &'a hjb_illiquid::solver::Grid2D,
        report: &'a hjb_illiquid::solver::SolveReport,
        interior_admissible: bool,
    }
    let s = solve_surface(l)?;
    let pol = s.policy()?;
    let g = s.grid;
    let mut csv = String::from("z,h,W,W_z,W_zz,pi,c0\n");
    for j in 0..g.n_h {
        for i in 0..g.n_z {
            let k = g.idx(i, j);
            csv.push_str(&csv_line(&[g.z(i), g.h(j), s.w[k], s.w_z[k], s.w_zz[k], pol.pi[k], pol.c0[k]]));
            csv.push('\n');
        }
    }
    write_atomic(dir, "surface.csv", csv.as_bytes())?;
    let body = Body { omega: s.omega, grid: &s.grid, report: &s.report, interior_admissible: s.interior_admissible() };
    write_json(dir, "solve.json", "solve", &l.hash, body)?;
    write_json(dir, "surface.json", "solve", &l.hash, &s)?;
    say!(
        "solved {}x{} in {} Newton iterations, residual {:e}, certificate {:e}",
        g.n_z, g.n_h, s.report.iterations, s.report.final_residual, s.report.certificate
    );
    Ok(s)
}

/// Reuses `surface.json` when it was produced from the same config.
fn cached_surface(l: &Loaded, dir: &Path) -> anyhow::Result<ValueSurface> {
    #[derive(serde::Deserialize)]
    struct Cached {
        config_hash: String,
        #[serde(flatten)]
        surface: ValueSurface,
    }
    let path = dir.join("surface.json");
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(c) = serde_json::from_str::<Cached>(&text) {
            if c.config_hash == l.hash && c.surface.omega == l.config.omega() {
                return Ok(c.surface);
            }
        }
    }
    cmd_solve(l, dir)
}

fn cmd_policy(l: &Loaded, dir: &Path) -> anyhow::Result<bool> {
    let s = cached_surface(l, dir)?;
    let q = &l.config.policy;
    let mut pts = Vec::new();
    for &t in &q.t {
        for &h in &q.h {
            for &lv in &q.l {
                pts.push([lv, h, t]);
            }
        }
    }
    let samples = reconstruct(&s, &pts)?;
    let mut csv = String::from("l,h,t,pi,c\n");
    for x in &samples {
        csv.push_str(&csv_line(&[x.l, x.h, x.t, x.pi, x.c]));
        csv.push('\n');
    }
    let path = write_atomic(dir, "policy.csv", csv.as_bytes())?;
    say!("wrote {} rows to {}", samples.len(), path.display());
    Ok(samples.iter().all(|x| x.pi.is_finite() && x.c.is_finite()))
}

fn cmd_simulate(l: &Loaded, dir: &Path) -> anyhow::Result<bool> {
    #[derive(Serialize)]
    struct Body<'a> {
        estimate: f64,
        std_error: f64,
        n_paths: usize,
        dt: f64,
        clamp_fraction: f64,
        solver_not_worse: bool,
        comparison: &'a hjb_illiquid::montecarlo::Comparison,
    }
    let c = &l.config;
    let s = cached_surface(l, dir)?;
    let solver = SolverPolicy::new(&s);
    let zero = FractionPolicy::zero_investment(c.baselines.q);
    let merton = FractionPolicy::merton(&c.params, c.baselines.q);
    let policies: [&dyn Policy; 3] = [&solver, &zero, &merton];
    let cmp = compare_policies(&c.params, &c.survival, &c.utility(), &policies, &c.mc)?;
    let head = &cmp.reports[0];
    let ok = cmp.first_not_worse(3.0) && cmp.invalid.is_empty();
    let body = Body {
        estimate: head.estimate,
        std_error: head.std_error,
        n_paths: head.n_paths,
        dt: head.dt,
        clamp_fraction: head.clamp_fraction,
        solver_not_worse: ok,
        comparison: &cmp,
    };
    write_json(dir, "simulate.json", "simulate", &l.hash, body)?;
    for r in &cmp.reports {
        say!("{}: {:.6} ± {:.6} (clamped {:.3})", r.policy, r.estimate, r.std_error, r.clamp_fraction);
    }
    Ok(ok)
}
