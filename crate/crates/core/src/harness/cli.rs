//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a run failed, 2 bad arguments or configuration.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::schemes::Mode;

use super::config::RunConfig;
use super::report::{diagnostics_csv, write_atomic};
use super::vtk::export_vtk;
use super::{run_convergence_study, run_stability_study, single_run};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bioconv", version, about = "Mixed finite element solver for bioconvection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Manufactured-solution error and rate tables over a mesh sweep.
    Converge(Overrides),
    /// Final-time discrete norms over a mesh sweep.
    Stability(Overrides),
    /// One run with per-step diagnostics and the final fields as VTK.
    Simulate(Overrides),
    /// One run writing VTK snapshots at the requested times.
    Export(Overrides),
}

#[derive(Debug, Args)]
struct Overrides {
    /// Flat key = value configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// decoupled | coupled
    #[arg(long)]
    scheme: Option<String>,
    /// const:A | affine:A,B | exp
    #[arg(long)]
    nu: Option<String>,
    /// gradient | symmetric
    #[arg(long)]
    viscous_form: Option<String>,
    /// Comma-separated subdivisions per side, e.g. 4,8,16.
    #[arg(long, conflicts_with = "size")]
    sizes: Option<String>,
    #[arg(long)]
    size: Option<String>,
    /// Time step, or `h` for tau = 1/n.
    #[arg(long)]
    tau: Option<String>,
    /// manufactured | physical
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long = "T")]
    final_time: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    #[arg(long = "U")]
    swim_speed: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long = "g")]
    gravity: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// Upper viscosity bound used for warnings.
    #[arg(long = "k")]
    viscosity_bound: Option<String>,
    #[arg(long)]
    quadrature: Option<String>,
    /// Comma-separated snapshot times for `export`.
    #[arg(long)]
    times: Option<String>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(|e| e.to_string())?,
            None => RunConfig::default(),
        };
        let pairs = [
            ("scheme", &self.scheme),
            ("nu", &self.nu),
            ("viscous_form", &self.viscous_form),
            ("sizes", &self.sizes),
            ("size", &self.size),
            ("tau", &self.tau),
            ("mode", &self.mode),
            ("out", &self.out),
            ("T", &self.final_time),
            ("theta", &self.theta),
            ("U", &self.swim_speed),
            ("gamma", &self.gamma),
            ("g", &self.gravity),
            ("alpha", &self.alpha),
            ("k", &self.viscosity_bound),
            ("quadrature", &self.quadrature),
            ("export_times", &self.times),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v).map_err(|e| e.to_string())?;
            }
        }
        Ok(cfg)
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (overrides, run): (&Overrides, fn(&RunConfig) -> i32) = match &cli.command {
        Command::Converge(o) => (o, converge),
        Command::Stability(o) => (o, stability),
        Command::Simulate(o) => (o, simulate),
        Command::Export(o) => (o, export),
    };
    let cfg = match overrides.resolve().and_then(|cfg| check(&cli.command, cfg)) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    run(&cfg)
}

fn check(command: &Command, cfg: RunConfig) -> Result<RunConfig, String> {
    match command {
        Command::Converge(_) => {
            if cfg.mode != Mode::Manufactured {
                return Err("converge needs mode = manufactured".into());
            }
            cfg.validate(true)
        }
        Command::Stability(_) => cfg.validate(false),
        Command::Simulate(_) | Command::Export(_) => {
            if cfg.sizes.len() != 1 {
                return Err(format!("{} runs on one mesh, pass --size", command_name(command)));
            }
            cfg.validate(false)
        }
    }
    .map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Converge(_) => "converge",
        Command::Stability(_) => "stability",
        Command::Simulate(_) => "simulate",
        Command::Export(_) => "export",
    }
}

fn converge(cfg: &RunConfig) -> i32 {
    eprintln!("converge: {} scheme, nu = {}, sizes {:?}", cfg.scheme, cfg.params.viscosity, cfg.sizes);
    let report = run_convergence_study(cfg);
    for run in &report.runs {
        match &run.result {
            Ok(m) => {
                eprintln!(
                    "  n={:<4} u_l2={:.4e} c_l2={:.4e} p_l2={:.4e}  ({:.2} s)",
                    run.subdivisions,
                    m.record.errors.velocity_l2,
                    m.record.errors.concentration_l2,
                    m.record.errors.pressure_l2,
                    run.wall_seconds
                );
                for w in &m.warnings {
                    eprintln!("  warning n={}: {w}", run.subdivisions);
                }
            }
            Err(e) => eprintln!("  n={:<4} failed: {e}", run.subdivisions),
        }
    }
    match report.write(&cfg.out) {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: cannot write reports to {}: {e}", cfg.out.display());
            return EXIT_RUN_FAILED;
        }
    }
    if report.failures().is_empty() {
        EXIT_OK
    } else {
        EXIT_RUN_FAILED
    }
}

fn stability(cfg: &RunConfig) -> i32 {
    eprintln!("stability: {} scheme, {} mode, sizes {:?}", cfg.scheme, cfg.mode, cfg.sizes);
    let report = run_stability_study(cfg);
    for run in &report.runs {
        match &run.result {
            Ok(r) => eprintln!(
                "  n={:<4} |u|={:.4e} |c|={:.4e} |p|={:.4e}  ({:.2} s)",
                run.subdivisions, r.last.velocity_l2, r.last.concentration_l2, r.last.pressure_l2, run.wall_seconds
            ),
            Err(e) => eprintln!("  n={:<4} failed: {e}", run.subdivisions),
        }
    }
    match report.write(&cfg.out) {
        Ok(p) => eprintln!("wrote {}", p.display()),
        Err(e) => {
            eprintln!("error: cannot write report to {}: {e}", cfg.out.display());
            return EXIT_RUN_FAILED;
        }
    }
    if report.failures().is_empty() {
        EXIT_OK
    } else {
        EXIT_RUN_FAILED
    }
}

fn simulate(cfg: &RunConfig) -> i32 {
    single(cfg, false)
}

fn export(cfg: &RunConfig) -> i32 {
    single(cfg, true)
}

fn single(cfg: &RunConfig, snapshots: bool) -> i32 {
    let n = cfg.sizes[0];
    eprintln!("{} mode, {} scheme, n={n}, tau={}", cfg.mode, cfg.scheme, cfg.params_for(n).time_step);
    let times: &[f64] = if snapshots { &cfg.export_times } else { &[] };
    let run = match single_run(cfg, n, times) {
        Ok(run) => run,
        Err(e) => {
            eprintln!("error: run failed: {e}");
            return EXIT_RUN_FAILED;
        }
    };
    for w in &run.summary.warnings {
        eprintln!("warning: {w}");
    }
    let write = || -> Result<(), String> {
        std::fs::create_dir_all(&cfg.out).map_err(|e| format!("{}: {e}", cfg.out.display()))?;
        let d = &run.discretization;
        let csv = diagnostics_csv(&cfg.header_lines(), &run.summary.diagnostics);
        let path = cfg.out.join("diagnostics.csv");
        write_atomic(&path, &csv).map_err(|e| format!("{}: {e}", path.display()))?;
        eprintln!("wrote {}", path.display());
        let path = cfg.out.join("final.vtk");
        export_vtk(d, &run.summary.final_state, &path).map_err(|e| e.to_string())?;
        eprintln!("wrote {}", path.display());
        for (k, (t, state)) in run.snapshots.iter().enumerate() {
            let path = cfg.out.join(format!("snapshot_{k:03}.vtk"));
            export_vtk(d, state, &path).map_err(|e| e.to_string())?;
            eprintln!("wrote {} (t = {t})", path.display());
        }
        Ok(())
    };
    match write() {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUN_FAILED
        }
    }
}
