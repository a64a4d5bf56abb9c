use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ellipt3d::harness::{
    default_cache_path, load_or_build_frames, precompute_frames, run_study, solve_problem, write_csv, ProblemKind,
    StudyConfig, DEFAULT_K_MAX,
};
use ellipt3d::solver::SolverConfig;

#[derive(Parser)]
#[command(name = "ellipt3d", version, about = "Monotone meshfree solvers for fully nonlinear elliptic PDEs in 3D")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Problem name (linear-degenerate, two-operator, convex-envelope,
    /// monge-ampere, poisson-neumann-eig, minimal-lagrangian).
    #[arg(long)]
    problem: ProblemKind,
    /// Max-norm residual tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Outer iteration cap.
    #[arg(long, default_value_t = 5000)]
    max_outer: usize,
    /// Largest frame / direction width.
    #[arg(long, default_value_t = DEFAULT_K_MAX)]
    kmax: usize,
    /// Frame cache file (defaults to $ELLIPT3D_CACHE or a temp file).
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn solver(&self) -> SolverConfig {
        SolverConfig { tolerance: self.tol, max_outer: self.max_outer, ..SolverConfig::default() }
    }

    fn cache(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(default_cache_path)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem at one resolution.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Lattice count per side of the covering cube.
        #[arg(long)]
        n: usize,
    },
    /// Convergence study over several resolutions, written as CSV.
    Study {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "8,12,16,20")]
        ns: Vec<usize>,
        /// Fill the `seconds` column with wall-clock times.
        #[arg(long)]
        timing: bool,
    },
    /// Build the frame hierarchy and write the cache.
    Frames {
        #[arg(long, default_value_t = DEFAULT_K_MAX)]
        kmax: usize,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

enum Outcome {
    Done,
    NotConverged,
}

fn run(cli: Cli) -> Result<Outcome, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Solve { common, n } => {
            let hierarchy = load_or_build_frames(common.kmax, &common.cache())?;
            let config = common.solver();
            config.validate()?;
            let run = solve_problem(common.problem, n, &hierarchy, &config, None)?;
            println!(
                "problem={} n={n} interior={} boundary={} converged={} iters={} residual={:e} max_error={:e} c={}",
                common.problem,
                run.cloud.num_interior(),
                run.cloud.num_boundary(),
                run.state.converged,
                run.state.iterations,
                run.state.final_residual(),
                run.max_error,
                run.state.c.map(|c| c.to_string()).unwrap_or_default()
            );
            if let Some(path) = &common.out {
                let mut w = BufWriter::new(File::create(path)?);
                writeln!(w, "x,y,z,u,exact")?;
                for id in run.cloud.ids() {
                    let x = run.cloud.point(id);
                    writeln!(
                        w,
                        "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                        x[0],
                        x[1],
                        x[2],
                        run.state.u[id.index()],
                        common.problem.exact(&x)
                    )?;
                }
                w.flush()?;
            }
            Ok(if run.state.converged { Outcome::Done } else { Outcome::NotConverged })
        }
        Command::Study { common, ns, timing } => {
            let config = StudyConfig {
                problem: common.problem,
                ns,
                solver: common.solver(),
                k_max: common.kmax,
                output: common.out.clone(),
                cache: Some(common.cache()),
                timing,
            };
            let result = run_study(&config)?;
            if common.out.is_none() {
                write_csv(&result, io::stdout().lock())?;
            }
            if let Some(rate) = result.rate {
                eprintln!("fitted rate: {rate:.3}");
            }
            Ok(if result.all_converged() { Outcome::Done } else { Outcome::NotConverged })
        }
        Command::Frames { kmax, cache } => {
            let path = cache.unwrap_or_else(default_cache_path);
            let h = precompute_frames(kmax, &path)?;
            for level in &h.levels {
                println!("k={} frames={} dtheta={:.6}", level.k, level.frames.len(), level.dtheta);
            }
            println!("wrote {}", path.display());
            Ok(Outcome::Done)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
