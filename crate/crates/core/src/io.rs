//! Matrix Market exchange, system directories, run configuration and reports.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::factor::DEFAULT_DENSE_THRESHOLD;
use crate::krylov::SolveConfig;
use crate::linalg::sparse::SparseMatrix;
use crate::linalg::vector::Vector;
use crate::precond::{ApproxBlocks, BuildOptions, PreconKind, Recipe};
use crate::problems::ProblemSpec;
use crate::spectral::PlotData;
use crate::system::BlockSystem;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const SIDECAR_NAME: &str = "system.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<SparseMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_market(BufReader::new(file), path)
}

/// Parses coordinate real (or integer) general/symmetric data. `path` is only used in errors.
pub fn parse_matrix_market(reader: impl BufRead, path: &Path) -> Result<SparseMatrix> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (lno, header) = match lines.next() {
        Some((n, l)) => (n, l.map_err(|e| Error::io(path, e))?),
        None => return Err(parse_err(path, 1, "empty file")),
    };
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" {
        return Err(parse_err(path, lno, "expected '%%MatrixMarket matrix coordinate <field> <symmetry>'"));
    }
    if tokens[1] != "matrix" {
        return Err(parse_err(path, lno, format!("unknown object '{}'", tokens[1])));
    }
    if tokens[2] != "coordinate" {
        return Err(Error::UnsupportedField(format!("format '{}'", tokens[2])));
    }
    match tokens[3].as_str() {
        "real" | "double" | "integer" => {}
        "complex" | "pattern" => return Err(Error::UnsupportedField(format!("field '{}'", tokens[3]))),
        other => return Err(parse_err(path, lno, format!("unknown field '{other}'"))),
    }
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" | "hermitian" => {
            return Err(Error::UnsupportedField(format!("symmetry '{}'", tokens[4])))
        }
        other => return Err(parse_err(path, lno, format!("unknown symmetry '{other}'"))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    let mut last = lno;
    for (lno, line) in lines {
        last = lno;
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        match size {
            None => {
                if fields.len() != 3 {
                    return Err(parse_err(path, lno, "size line needs 'rows cols nnz'"));
                }
                let parse = |s: &str| s.parse::<usize>().map_err(|_| parse_err(path, lno, format!("bad integer '{s}'")));
                let (r, c, nnz) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
                if symmetry == Symmetry::Symmetric && r != c {
                    return Err(parse_err(path, lno, "symmetric matrix must be square"));
                }
                triplets.reserve(if symmetry == Symmetry::Symmetric { 2 * nnz } else { nnz });
                size = Some((r, c, nnz));
            }
            Some((r, c, _)) => {
                if fields.len() != 3 {
                    return Err(parse_err(path, lno, "entry line needs 'row col value'"));
                }
                let i: usize = fields[0].parse().map_err(|_| parse_err(path, lno, format!("bad row index '{}'", fields[0])))?;
                let j: usize = fields[1].parse().map_err(|_| parse_err(path, lno, format!("bad column index '{}'", fields[1])))?;
                let v: f64 = fields[2].parse().map_err(|_| parse_err(path, lno, format!("bad value '{}'", fields[2])))?;
                if i == 0 || j == 0 || i > r || j > c {
                    return Err(parse_err(path, lno, format!("index ({i}, {j}) outside {r}x{c}")));
                }
                if !v.is_finite() {
                    return Err(parse_err(path, lno, "non-finite value"));
                }
                triplets.push((i - 1, j - 1, v));
                if symmetry == Symmetry::Symmetric && i != j {
                    triplets.push((j - 1, i - 1, v));
                }
            }
        }
    }
    let (r, c, nnz) = size.ok_or_else(|| parse_err(path, last, "missing size line"))?;
    let stored = match symmetry {
        Symmetry::General => triplets.len(),
        Symmetry::Symmetric => triplets.iter().filter(|t| t.0 >= t.1).count(),
    };
    if stored != nnz {
        return Err(parse_err(path, last, format!("expected {nnz} entries, found {stored}")));
    }
    SparseMatrix::from_triplets(r, c, &triplets)
}

/// Writes coordinate real general, row-major, shortest round-trip decimal form.
pub fn write_matrix_market(m: &SparseMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_matrix_market_to(m, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_matrix_market_to(m: &SparseMatrix, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", m.nrows(), m.ncols(), m.nnz())?;
    for (i, j, v) in m.iter() {
        writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

/// Dimensions, right-hand side and origin of a saved system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSidecar {
    pub schema_version: u32,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
}

const BLOCK_FILES: [&str; 4] = ["A.mtx", "B.mtx", "C.mtx", "D.mtx"];

/// Writes A.mtx, B.mtx, C.mtx, D.mtx and system.json into `dir`, creating it if needed.
pub fn save_system(sys: &BlockSystem, dir: impl AsRef<Path>, problem: Option<&ProblemSpec>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, m) in BLOCK_FILES.iter().zip([sys.a(), sys.b(), sys.c(), sys.d()]) {
        write_matrix_market(m, dir.join(name))?;
    }
    let (n, m, l) = sys.dims();
    let sidecar = SystemSidecar {
        schema_version: REPORT_SCHEMA_VERSION,
        n,
        m,
        l,
        f: sys.f().to_vec(),
        g: sys.g().to_vec(),
        h: sys.h().to_vec(),
        problem: problem.cloned(),
    };
    write_json(&sidecar, dir.join(SIDECAR_NAME))
}

/// Reads a system directory. Without a sidecar the right-hand side is K·𝟙.
pub fn load_system(dir: impl AsRef<Path>) -> Result<(BlockSystem, Option<SystemSidecar>)> {
    let dir = dir.as_ref();
    let mut blocks = Vec::with_capacity(4);
    for name in BLOCK_FILES {
        blocks.push(read_matrix_market(dir.join(name))?);
    }
    let d = blocks.pop().unwrap();
    let c = blocks.pop().unwrap();
    let b = blocks.pop().unwrap();
    let a = blocks.pop().unwrap();
    let side = dir.join(SIDECAR_NAME);
    if !side.exists() {
        return Ok((BlockSystem::with_unit_solution(a, b, c, d)?, None));
    }
    let sidecar: SystemSidecar = read_json(&side)?;
    let sys = BlockSystem::new(
        a,
        b,
        c,
        d,
        Vector::new(sidecar.f.clone())?,
        Vector::new(sidecar.g.clone())?,
        Vector::new(sidecar.h.clone())?,
    )?;
    if sys.dims() != (sidecar.n, sidecar.m, sidecar.l) {
        return Err(Error::InvalidSystem(format!(
            "sidecar dims ({}, {}, {}) disagree with block files {:?}",
            sidecar.n,
            sidecar.m,
            sidecar.l,
            sys.dims()
        )));
    }
    Ok((sys, Some(sidecar)))
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Where a run takes its systems from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemSource {
    Generated(ProblemSpec),
    Files { dir: PathBuf },
}

impl ProblemSource {
    pub fn label(&self) -> String {
        match self {
            ProblemSource::Generated(spec) => match spec {
                ProblemSpec::StokesModified { p } => format!("stokes-modified p={p}"),
                ProblemSpec::ImageRestoration { p } => format!("image-restoration p={p}"),
                ProblemSpec::PoissonControl { grid_pow, beta } => format!("poisson-control pow={grid_pow} beta={beta}"),
                ProblemSpec::FdStokesSubstitute { cells } => format!("fd-stokes cells={cells}"),
                ProblemSpec::Random { n, m, l, seed } => format!("random {n}x{m}x{l} seed={seed}"),
            },
            ProblemSource::Files { dir } => format!("files {}", dir.display()),
        }
    }

    pub fn load(&self) -> Result<BlockSystem> {
        match self {
            ProblemSource::Generated(spec) => spec.generate(),
            ProblemSource::Files { dir } => Ok(load_system(dir)?.0),
        }
    }
}

/// Everything needed to reproduce a solve or bench run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problems: Vec<ProblemSource>,
    pub recipe: Recipe,
    pub kinds: Vec<PreconKind>,
    pub solver: SolveConfig,
    pub droptol: f64,
    #[serde(default = "default_dense_threshold")]
    pub dense_threshold: usize,
    /// Directory holding MA.mtx, S.mtx and MS.mtx for the custom recipe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_dense_threshold() -> usize {
    DEFAULT_DENSE_THRESHOLD
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problems: Vec::new(),
            recipe: Recipe::Ex61,
            kinds: PreconKind::ALL.to_vec(),
            solver: SolveConfig::default(),
            droptol: 1e-8,
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
            custom_dir: None,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.problems.is_empty() {
            return Err(Error::InvalidArgument("run needs at least one problem".into()));
        }
        if self.kinds.is_empty() {
            return Err(Error::InvalidArgument("run needs at least one preconditioner kind".into()));
        }
        if !(self.droptol > 0.0) {
            return Err(Error::InvalidArgument(format!("droptol must be positive, got {}", self.droptol)));
        }
        self.solver.validate()?;
        if let Some(dir) = &self.output_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let probe = dir.join(".write-probe");
            File::create(&probe).map_err(|e| Error::io(&probe, e))?;
            let _ = std::fs::remove_file(&probe);
        }
        Ok(())
    }

    /// Approximation blocks for `sys`. An incomplete Cholesky breakdown is
    /// retried once with droptol/10; the retry is recorded in the notes.
    pub fn build_blocks(&self, sys: &BlockSystem) -> Result<ApproxBlocks> {
        if self.recipe == Recipe::Custom {
            let dir = self.custom_dir.as_ref().ok_or_else(|| {
                Error::InvalidArgument("the custom recipe needs a directory with MA.mtx, S.mtx and MS.mtx".into())
            })?;
            let m_a = read_matrix_market(dir.join("MA.mtx"))?;
            let s = read_matrix_market(dir.join("S.mtx"))?;
            let ms = read_matrix_market(dir.join("MS.mtx"))?;
            return ApproxBlocks::from_sparse_matrices(&m_a, &s, &ms, self.dense_threshold);
        }
        let opts = BuildOptions {
            dense_threshold: self.dense_threshold,
            droptol: self.droptol,
        };
        match ApproxBlocks::build_with(sys, self.recipe, opts) {
            Err(Error::BreakdownNonpositivePivot { column, pivot }) => {
                let retry = BuildOptions {
                    droptol: self.droptol / 10.0,
                    ..opts
                };
                let mut blocks = ApproxBlocks::build_with(sys, self.recipe, retry)?;
                blocks.notes.push(format!(
                    "ichol broke down at column {column} (pivot {pivot:e}); retried with droptol {:e}",
                    retry.droptol
                ));
                Ok(blocks)
            }
            other => other,
        }
    }

    /// SHA-256 of the compact JSON encoding, in hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("RunConfig serializes");
        format!("{:x}", Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentStamp {
    pub crate_version: String,
    pub os: String,
    pub arch: String,
}

impl EnvironmentStamp {
    pub fn current() -> Self {
        EnvironmentStamp {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
        }
    }
}

/// One (problem, kind) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub problem: String,
    pub order: usize,
    pub recipe: Recipe,
    pub kind: PreconKind,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub wall_time_ms: f64,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub environment: EnvironmentStamp,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn new(config: RunConfig, rows: Vec<BenchRow>) -> Self {
        BenchReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config_hash: config.hash(),
            config,
            environment: EnvironmentStamp::current(),
            rows,
        }
    }
}

pub fn write_report_json(report: &BenchReport, path: impl AsRef<Path>) -> Result<()> {
    write_json(report, path)
}

/// Columns: problem,order,recipe,kind,iterations,converged,final_residual,wall_time_ms,error.
pub fn write_report_csv(report: &BenchReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in &report.rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.json` and `<stem>.csv`.
pub fn write_report(report: &BenchReport, stem: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let stem = stem.as_ref();
    let json = stem.with_extension("json");
    let csv = stem.with_extension("csv");
    write_report_json(report, &json)?;
    write_report_csv(report, &csv)?;
    Ok((json, csv))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::new(std::io::ErrorKind::Other, format!("{other:?}"))),
    }
}

/// Two comment lines (kind, box corners) followed by `re,im,in_box` rows.
pub fn write_plotdata(data: &PlotData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_plotdata_to(data, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_plotdata_to(data: &PlotData, w: &mut impl Write) -> std::io::Result<()> {
    let b = data.bbox;
    writeln!(w, "# kind={}", data.kind)?;
    writeln!(
        w,
        "# box re_lo={:e} re_hi={:e} im_lo={:e} im_hi={:e}",
        b.re_lo, b.re_hi, -b.im_abs, b.im_abs
    )?;
    writeln!(w, "re,im,in_box")?;
    for p in &data.points {
        writeln!(w, "{:e},{:e},{}", p.re, p.im, u8::from(p.in_box))?;
    }
    Ok(())
}
