//! Problem registry, convergence studies and CSV output.

mod problems;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

pub use problems::{pin_node, Assembled, ProblemKind};

use crate::frames::{build_hierarchy, read_cache, write_cache, FrameError, FrameHierarchy};
use crate::grid::{GridError, PointCloud};
use crate::operators::OperatorError;
use crate::solver::{prolong, solve, solve_multilevel, SolveState, SolverConfig, SolverError};

/// Environment variable overriding the default frame cache location.
pub const CACHE_ENV: &str = "ELLIPT3D_CACHE";

/// Default width of the prebuilt frame hierarchy.
pub const DEFAULT_K_MAX: usize = 5;

pub const CSV_HEADER: &str = "n,h,interior,boundary,max_error,rate_running,iters,seconds,c";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("study configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Frames(#[from] FrameError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed CSV line {line}: {message}")]
    Csv { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// `ELLIPT3D_CACHE` if set, otherwise a file in the system temp directory.
pub fn default_cache_path() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ellipt3d-frames-v1.txt"))
}

/// Builds the hierarchy up to `k_max` and writes it to `path`.
pub fn precompute_frames(k_max: usize, path: &Path) -> Result<FrameHierarchy, HarnessError> {
    let h = build_hierarchy(k_max);
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    write_cache(&h, &mut w)?;
    w.flush().map_err(io_err(path))?;
    Ok(h)
}

/// Loads the cached hierarchy, rebuilding it when the file is missing,
/// unreadable or too shallow.
pub fn load_or_build_frames(k_max: usize, path: &Path) -> Result<FrameHierarchy, HarnessError> {
    match File::open(path) {
        Ok(f) => match read_cache(BufReader::new(f)) {
            Ok(h) if h.k_max >= k_max => return Ok(truncate_hierarchy(h, k_max)),
            Ok(h) => log::warn!("frame cache {} has kmax={} < {k_max}; rebuilding", path.display(), h.k_max),
            Err(e) => log::warn!("frame cache {} unusable ({e}); rebuilding", path.display()),
        },
        Err(e) if e.kind() == io::ErrorKind::NotFound => log::info!("building frame cache {}", path.display()),
        Err(e) => log::warn!("cannot open frame cache {} ({e}); rebuilding", path.display()),
    }
    precompute_frames(k_max, path)
}

fn truncate_hierarchy(mut h: FrameHierarchy, k_max: usize) -> FrameHierarchy {
    let k_max = k_max.max(1);
    h.k_max = k_max;
    h.directions.truncate(k_max);
    h.levels.truncate(k_max);
    h.map1.truncate(k_max - 1);
    h.map2.truncate(k_max - 1);
    h
}

/// Result of solving one problem at one resolution.
pub struct Run {
    pub cloud: Arc<PointCloud>,
    pub state: SolveState,
    pub max_error: f64,
    pub seconds: f64,
    pub pin: Option<crate::NodeId>,
}

/// Assembles and solves `problem` at lattice count `n`, optionally warm
/// started from a coarser run.
pub fn solve_problem(
    problem: ProblemKind,
    n: usize,
    hierarchy: &FrameHierarchy,
    config: &SolverConfig,
    warm: Option<&Run>,
) -> Result<Run, HarnessError> {
    let start = Instant::now();
    let Assembled { cloud, mut op, k_star } = problem.assemble(n, hierarchy)?;
    log::info!(
        "{problem} n={n}: {} interior, {} boundary, k*={k_star}",
        cloud.num_interior(),
        cloud.num_boundary()
    );
    let init = warm.map(|w| prolong(&w.state, &w.cloud, &cloud));
    let state = if problem.uses_frames() {
        solve_multilevel(&mut op, hierarchy, k_star, config, init.as_ref())?
    } else {
        solve(&mut op, config, init.as_ref())?
    };
    let pin = op.pin();
    let max_error = problem.max_error(&cloud, &state.u, pin);
    Ok(Run { cloud, state, max_error, seconds: start.elapsed().as_secs_f64(), pin })
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub problem: ProblemKind,
    pub ns: Vec<usize>,
    pub solver: SolverConfig,
    pub k_max: usize,
    pub output: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    /// Record wall-clock times in the `seconds` column. Off by default so
    /// that repeated studies produce identical files.
    pub timing: bool,
}

impl StudyConfig {
    pub fn new(problem: ProblemKind, ns: Vec<usize>) -> Self {
        Self { problem, ns, solver: SolverConfig::default(), k_max: DEFAULT_K_MAX, output: None, cache: None, timing: false }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.ns.iter().any(|&n| n < 6) {
            return Err(HarnessError::Config("every n must be at least 6".into()));
        }
        if self.ns.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::Config("n values must be strictly increasing".into()));
        }
        if self.k_max == 0 {
            return Err(HarnessError::Config("kmax must be at least 1".into()));
        }
        self.solver.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRecord {
    pub n: usize,
    pub h: f64,
    pub interior: usize,
    pub boundary: usize,
    pub max_error: f64,
    /// Least-squares rate over this and all previous rows.
    pub rate_running: Option<f64>,
    pub converged: bool,
    pub iters: usize,
    pub seconds: Option<f64>,
    pub c: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyResult {
    pub problem: ProblemKind,
    pub records: Vec<StudyRecord>,
    /// Least-squares slope of `log(max_error)` against `log(h)`, if at least
    /// three records are available.
    pub rate: Option<f64>,
}

impl StudyResult {
    pub fn all_converged(&self) -> bool {
        self.records.iter().all(|r| r.converged)
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len()) as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn log_rate(records: &[StudyRecord]) -> f64 {
    let xs: Vec<f64> = records.iter().map(|r| r.h.ln()).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.max_error.ln()).collect();
    fit_slope(&xs, &ys)
}

/// Runs the convergence study, warm starting each resolution from the
/// previous one, and writes the CSV if an output path is configured.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult, HarnessError> {
    config.validate()?;
    let cache = config.cache.clone().unwrap_or_else(default_cache_path);
    let hierarchy = load_or_build_frames(config.k_max, &cache)?;
    let mut records: Vec<StudyRecord> = Vec::new();
    let mut previous: Option<Run> = None;
    for &n in &config.ns {
        let run = solve_problem(config.problem, n, &hierarchy, &config.solver, previous.as_ref())?;
        if !run.state.converged {
            log::warn!("{} n={n}: not converged (residual {:e})", config.problem, run.state.final_residual());
        }
        let params = run.cloud.params();
        let mut record = StudyRecord {
            n,
            h: params.h,
            interior: run.cloud.num_interior(),
            boundary: run.cloud.num_boundary(),
            max_error: run.max_error,
            rate_running: None,
            converged: run.state.converged,
            iters: run.state.iterations,
            seconds: config.timing.then_some(run.seconds),
            c: run.state.c,
        };
        records.push(record.clone());
        if records.len() >= 2 {
            record.rate_running = Some(log_rate(&records));
            *records.last_mut().unwrap() = record;
        }
        previous = Some(run);
    }
    let rate = (records.len() >= 3).then(|| log_rate(&records));
    let result = StudyResult { problem: config.problem, records, rate };
    if let Some(path) = &config.output {
        emit_csv(&result, path)?;
    }
    Ok(result)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

pub fn write_csv(result: &StudyResult, mut w: impl Write) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in &result.records {
        writeln!(
            w,
            "{},{:.16e},{},{},{:.16e},{},{},{},{}",
            r.n,
            r.h,
            r.interior,
            r.boundary,
            r.max_error,
            fmt_opt(r.rate_running),
            r.iters,
            fmt_opt(r.seconds),
            fmt_opt(r.c)
        )?;
    }
    Ok(())
}

pub fn emit_csv(result: &StudyResult, path: &Path) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    write_csv(result, &mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub n: usize,
    pub h: f64,
    pub interior: usize,
    pub boundary: usize,
    pub max_error: f64,
    pub rate_running: Option<f64>,
    pub iters: usize,
    pub seconds: Option<f64>,
    pub c: Option<f64>,
}

impl From<&StudyRecord> for CsvRow {
    fn from(r: &StudyRecord) -> Self {
        Self {
            n: r.n,
            h: r.h,
            interior: r.interior,
            boundary: r.boundary,
            max_error: r.max_error,
            rate_running: r.rate_running,
            iters: r.iters,
            seconds: r.seconds,
            c: r.c,
        }
    }
}

pub fn read_csv(r: impl BufRead) -> Result<Vec<CsvRow>, HarnessError> {
    let mut lines = r.lines();
    let csv_err = |line: usize, message: String| HarnessError::Csv { line, message };
    let header = lines.next().transpose().map_err(|e| csv_err(1, e.to_string()))?;
    if header.as_deref() != Some(CSV_HEADER) {
        return Err(csv_err(1, "unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| csv_err(lineno, e.to_string()))?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(csv_err(lineno, format!("expected 9 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| csv_err(lineno, format!("`{s}`: {e}")));
        let int = |s: &str| s.parse::<usize>().map_err(|e| csv_err(lineno, format!("`{s}`: {e}")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        rows.push(CsvRow {
            n: int(f[0])?,
            h: num(f[1])?,
            interior: int(f[2])?,
            boundary: int(f[3])?,
            max_error: num(f[4])?,
            rate_running: opt(f[5])?,
            iters: int(f[6])?,
            seconds: opt(f[7])?,
            c: opt(f[8])?,
        });
    }
    Ok(rows)
}
