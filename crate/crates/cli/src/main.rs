use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use trisaddle::io::{
    read_json, save_system, write_plotdata, write_report, BenchReport, BenchRow, ProblemSource, RunConfig,
};
use trisaddle::krylov::{gmres, PrecondSide};
use trisaddle::precond::{parse_kinds, ApproxBlocks, BlockPreconditioner, PreconKind, Recipe};
use trisaddle::problems::ProblemSpec;
use trisaddle::spectral::{bounds_exact_form, kind_bounds, estimate_constants, spectrum_and_check_with, EigenBox};
use trisaddle::system::BlockSystem;
use trisaddle::Error;

const EXIT_NOT_CONVERGED: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "trisaddle",
    version,
    about = "Block factorization preconditioners for three-by-three saddle-point systems",
    after_help = "Exit codes: 0 success, 1 solver did not converge or a spectrum check failed, \
                  2 usage, input or hypothesis errors."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated problem as A.mtx, B.mtx, C.mtx, D.mtx and system.json.
    Generate {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one problem with each requested kind and print IT and RES.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Also write <STEM>.json and <STEM>.csv reports.
        #[arg(long, value_name = "STEM")]
        report: Option<PathBuf>,
    },
    /// Sweep sizes × kinds and emit a report.
    #[command(long_about = "Sweep sizes × kinds and emit a report.\n\n\
        CSV columns: problem,order,recipe,kind,iterations,converged,final_residual,wall_time_ms,error.\n\
        wall_time_ms times the GMRES call only.")]
    Bench {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Size parameters to sweep: p, grid power, cells, or n for random problems.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        /// Report stem; writes <STEM>.json and <STEM>.csv.
        #[arg(long, value_name = "STEM")]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the eigenvalue box of each kind.
    Bounds {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Dense spectrum of M⁻¹K checked against the box, with optional plot data.
    #[command(long_about = "Dense spectrum of M⁻¹K checked against the box, with optional plot data.\n\n\
        Plot data is written to <OUT>/spectrum_<kind>.csv: two comment lines \
        ('# kind=..' and '# box re_lo=.. re_hi=.. im_lo=.. im_hi=..') then columns re,im,in_box \
        with one row per eigenvalue and in_box in {0,1}.")]
    Spectrum {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the structural assumptions of a system.
    Validate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    StokesModified,
    ImageRestoration,
    PoissonControl,
    FdStokesSubstitute,
    Random,
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long, value_enum)]
    problem: Option<Family>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    grid_pow: Option<u32>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Read the system from a directory written by `generate`.
    #[arg(long, conflicts_with = "problem")]
    input: Option<PathBuf>,
}

impl ProblemArgs {
    fn spec(&self, family: Family, size: Option<usize>) -> ProblemSpec {
        match family {
            Family::StokesModified => ProblemSpec::StokesModified { p: size.or(self.p).unwrap_or(8) },
            Family::ImageRestoration => ProblemSpec::ImageRestoration { p: size.or(self.p).unwrap_or(8) },
            Family::PoissonControl => ProblemSpec::PoissonControl {
                grid_pow: size.map(|s| s as u32).or(self.grid_pow).unwrap_or(3),
                beta: self.beta.unwrap_or(1e-2),
            },
            Family::FdStokesSubstitute => ProblemSpec::FdStokesSubstitute { cells: size.or(self.cells).unwrap_or(8) },
            Family::Random => {
                let n = size.or(self.n).unwrap_or(12);
                ProblemSpec::Random {
                    n,
                    m: self.m.unwrap_or((2 * n / 3).max(1)),
                    l: self.l.unwrap_or((n / 2).max(1)),
                    seed: self.seed.unwrap_or(0),
                }
            }
        }
    }

    fn source(&self) -> Option<ProblemSource> {
        if let Some(dir) = &self.input {
            return Some(ProblemSource::Files { dir: dir.clone() });
        }
        self.problem.map(|f| ProblemSource::Generated(self.spec(f, None)))
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ex61, ex62, ex63, ex64, ex65, exact or custom.
    #[arg(long)]
    recipe: Option<String>,
    /// Comma-separated kinds (d, ut, lt, f1..f5) or "all".
    #[arg(long)]
    kinds: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    maxit: Option<usize>,
    #[arg(long)]
    restart: Option<usize>,
    #[arg(long, value_enum)]
    side: Option<Side>,
    /// Drop tolerance of incomplete Cholesky factors.
    #[arg(long)]
    droptol: Option<f64>,
    #[arg(long)]
    dense_threshold: Option<usize>,
    /// Directory with MA.mtx, S.mtx and MS.mtx for the custom recipe.
    #[arg(long)]
    custom_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Right,
    Left,
}

impl RunArgs {
    fn resolve(&self, problems: Vec<ProblemSource>) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => read_json(path)?,
            None => RunConfig::default(),
        };
        if !problems.is_empty() {
            cfg.problems = problems;
        }
        if let Some(r) = &self.recipe {
            cfg.recipe = r.parse()?;
        }
        if let Some(k) = &self.kinds {
            cfg.kinds = parse_kinds(k)?;
        }
        if let Some(t) = self.tol {
            cfg.solver.tol = t;
        }
        if let Some(m) = self.maxit {
            cfg.solver.maxit = m;
        }
        if self.restart.is_some() {
            cfg.solver.restart = self.restart;
        }
        if let Some(s) = self.side {
            cfg.solver.side = match s {
                Side::Right => PrecondSide::Right,
                Side::Left => PrecondSide::Left,
            };
        }
        if let Some(d) = self.droptol {
            cfg.droptol = d;
        }
        if let Some(d) = self.dense_threshold {
            cfg.dense_threshold = d;
        }
        if self.custom_dir.is_some() {
            cfg.custom_dir = self.custom_dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn need_problem(p: &ProblemArgs) -> Result<Vec<ProblemSource>, Error> {
    Ok(p.source().into_iter().collect())
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Generate { problem, out } => {
            let family = problem
                .problem
                .ok_or_else(|| Error::InvalidArgument("generate needs --problem".into()))?;
            let spec = problem.spec(family, None);
            let sys = spec.generate()?;
            save_system(&sys, &out, Some(&spec))?;
            let (n, m, l) = sys.dims();
            println!("wrote {} (n={n} m={m} l={l})", out.display());
            Ok(0)
        }
        Command::Solve { problem, run, report } => {
            let cfg = run.resolve(need_problem(&problem)?)?;
            let rows = solve_all(&cfg)?;
            print_rows(&rows);
            if let Some(stem) = report {
                let rep = BenchReport::new(cfg, rows.clone());
                let (j, c) = write_report(&rep, stem)?;
                println!("report: {} {}", j.display(), c.display());
            }
            Ok(rows_exit(&rows))
        }
        Command::Bench {
            problem,
            run,
            sizes,
            out,
            threads,
        } => {
            let mut sources = Vec::new();
            match (problem.problem, sizes.is_empty()) {
                (Some(f), false) => sources.extend(sizes.iter().map(|&s| ProblemSource::Generated(problem.spec(f, Some(s))))),
                _ => sources.extend(problem.source()),
            }
            let cfg = run.resolve(sources)?;
            if let Some(t) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global()
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            }
            let rows = solve_all(&cfg)?;
            print_rows(&rows);
            let rep = BenchReport::new(cfg, rows.clone());
            match out {
                Some(stem) => {
                    let (j, c) = write_report(&rep, stem)?;
                    println!("report: {} {}", j.display(), c.display());
                }
                None => println!("{}", serde_json::to_string_pretty(&rep)?),
            }
            Ok(rows_exit(&rows))
        }
        Command::Bounds { problem, run, json } => {
            let cfg = run.resolve(need_problem(&problem)?)?;
            let src = single(&cfg)?;
            let sys = src.load()?;
            let blocks = cfg.build_blocks(&sys)?;
            let est = estimate_constants(&sys, &blocks)?;
            let exact = cfg.recipe == Recipe::Exact;
            if !exact {
                est.check_hypothesis()?;
            }
            let mut boxes = Vec::new();
            for &kind in &cfg.kinds {
                let b = if exact {
                    bounds_exact_form(kind, est.omega_hi, est.tau_lo)
                } else {
                    kind_bounds(kind, &est)?
                };
                boxes.push((kind, b));
            }
            if json {
                let v = serde_json::json!({
                    "problem": src.label(),
                    "recipe": cfg.recipe,
                    "estimates": est,
                    "boxes": boxes.iter().map(|(k, b)| serde_json::json!({"kind": k, "box": b})).collect::<Vec<_>>(),
                });
                println!("{}", serde_json::to_string_pretty(&v)?);
            } else {
                println!("problem {}  recipe {}", src.label(), cfg.recipe);
                println!(
                    "mu [{:.6}, {:.6}]  nu [{:.6}, {:.6}]  omega [{:.6}, {:.6}]  tau [{:.6}, {:.6}]  theta [{:.6}, {:.6}]",
                    est.mu_lo, est.mu_hi, est.nu_lo, est.nu_hi, est.omega_lo, est.omega_hi, est.tau_lo, est.tau_hi, est.theta_lo, est.theta_hi
                );
                println!("{:<5} {:>14} {:>14} {:>14}", "kind", "eta_lo", "eta_hi", "im_bound");
                for (k, b) in &boxes {
                    println!("{:<5} {:>14.6} {:>14.6} {:>14.6}", k.name(), b.re_lo, b.re_hi, b.im_abs);
                }
            }
            Ok(0)
        }
        Command::Spectrum { problem, run, out } => {
            let cfg = run.resolve(need_problem(&problem)?)?;
            let src = single(&cfg)?;
            let sys = src.load()?;
            let blocks = cfg.build_blocks(&sys)?;
            let est = estimate_constants(&sys, &blocks)?;
            est.check_hypothesis()?;
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
            }
            println!("problem {}  recipe {}  order {}", src.label(), cfg.recipe, sys.order());
            println!(
                "{:<5} {:>6} {:>12} {:>12} {:>12} {:>12} {:>8}",
                "kind", "eigs", "re_lo", "re_hi", "im_bound", "max_viol", "inside"
            );
            let mut code = 0;
            for &kind in &cfg.kinds {
                let check = spectrum_and_check_with(&sys, &blocks, kind, &est)?;
                let inside = check.all_inside();
                if !inside {
                    code = EXIT_NOT_CONVERGED;
                }
                let EigenBox { re_lo, re_hi, im_abs } = check.bbox;
                println!(
                    "{:<5} {:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.2e} {:>8}",
                    kind.name(),
                    check.eigenvalues.len(),
                    re_lo,
                    re_hi,
                    im_abs,
                    check.max_violation,
                    if inside { "yes" } else { "NO" }
                );
                if let Some(dir) = &out {
                    write_plotdata(&check.plot_data(), dir.join(format!("spectrum_{}.csv", kind.name())))?;
                }
            }
            Ok(code)
        }
        Command::Validate { problem, json } => {
            let src = problem
                .source()
                .ok_or_else(|| Error::InvalidArgument("validate needs --problem or --input".into()))?;
            let sys = src.load()?;
            let rep = sys.validate();
            if json {
                println!("{}", serde_json::to_string_pretty(&rep)?);
            } else {
                println!("problem {}", src.label());
                println!("n={} m={} l={}", rep.n, rep.m, rep.l);
                println!("A symmetric {}  A spd {}", rep.a_symmetric, opt(rep.a_spd));
                println!("D symmetric {}  D semidefinite {}  D definite {}", rep.d_symmetric, opt(rep.d_sps), rep.d_spd);
                println!("m <= n {}  rank B {}  rank C {}", rep.m_le_n, opt(rep.b_rank), opt(rep.c_rank));
                for w in &rep.warnings {
                    println!("warning: {w}");
                }
                for f in &rep.failures {
                    println!("failure: {f}");
                }
                println!("{}", if rep.passed { "PASSED" } else { "FAILED" });
            }
            Ok(if rep.passed { 0 } else { EXIT_USAGE })
        }
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "skipped".to_string(), |x| x.to_string())
}

fn single(cfg: &RunConfig) -> Result<&ProblemSource, Error> {
    match cfg.problems.as_slice() {
        [one] => Ok(one),
        _ => Err(Error::InvalidArgument("exactly one problem is required (--problem or --input)".into())),
    }
}

fn solve_all(cfg: &RunConfig) -> Result<Vec<BenchRow>, Error> {
    let mut rows = Vec::new();
    for src in &cfg.problems {
        let sys = src.load()?;
        let blocks = cfg.build_blocks(&sys)?;
        for note in &blocks.notes {
            eprintln!("note: {note}");
        }
        let label = src.label();
        let cells: Vec<BenchRow> = cfg
            .kinds
            .par_iter()
            .map(|&kind| solve_one(cfg, &label, &sys, &blocks, kind))
            .collect();
        rows.extend(cells);
    }
    Ok(rows)
}

fn solve_one(cfg: &RunConfig, label: &str, sys: &BlockSystem, blocks: &ApproxBlocks, kind: PreconKind) -> BenchRow {
    let mut row = BenchRow {
        problem: label.to_string(),
        order: sys.order(),
        recipe: cfg.recipe,
        kind,
        iterations: 0,
        converged: false,
        final_residual: f64::NAN,
        wall_time_ms: 0.0,
        error: None,
    };
    let result = BlockPreconditioner::new(kind, blocks, sys).and_then(|m| gmres(sys, Some(&m), &sys.rhs(), &cfg.solver));
    match result {
        Ok((_, rep)) => {
            row.iterations = rep.iterations;
            row.converged = rep.converged;
            row.final_residual = rep.final_residual;
            row.wall_time_ms = (rep.wall_time * 1e6).round() / 1e3;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn print_rows(rows: &[BenchRow]) {
    let mut last = "";
    for r in rows {
        if r.problem != last {
            println!("problem {}  order {}  recipe {}", r.problem, r.order, r.recipe);
            println!("{:<5} {:>6} {:>12} {:>10} {:>10}", "kind", "IT", "RES", "converged", "time_ms");
            last = &r.problem;
        }
        match &r.error {
            Some(e) => println!("{:<5} error: {e}", r.kind.name()),
            None => println!(
                "{:<5} {:>6} {:>12.3e} {:>10} {:>10.1}",
                r.kind.name(),
                r.iterations,
                r.final_residual,
                if r.converged { "yes" } else { "no" },
                r.wall_time_ms
            ),
        }
    }
}

fn rows_exit(rows: &[BenchRow]) -> u8 {
    if rows.iter().any(|r| r.error.is_some()) {
        EXIT_USAGE
    } else if rows.iter().any(|r| !r.converged) {
        EXIT_NOT_CONVERGED
    } else {
        0
    }
}
