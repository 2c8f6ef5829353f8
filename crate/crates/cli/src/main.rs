//! `evodiff` — run, check and inspect reaction–diffusion systems on evolving
//! domains from a TOML configuration.
//!
//! Exit status: 0 success, 1 error (or a failed check), 2 blow-up detected.
//! `EVODIFF_THREADS` caps the worker threads used by node loops.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use evodiff::config::{load_config, AppConfig};
use evodiff::diagnostics::{monitor_setup, run_duality, DualityRun};
use evodiff::expr::{Expr, Scope};
use evodiff::io::{export_plotdata, write_diagnostics_csv, write_snapshot, PlotData, RunManifest};
use evodiff::kernel::{
    classical_solution, h0_and_cn, j_epsilon, solve_density, verify_fundamental, ExponentMode,
    Geometry, KernelContext,
};
use evodiff::models::{
    check_intermediate_sums, check_polynomial_bound, check_quasi_positivity, check_vl,
    ConditionReport, SampleBox,
};
use evodiff::solver::{manufactured_convergence, run, ConvergenceStatus};

#[derive(Parser)]
#[command(name = "evodiff", version, about = "Reaction-diffusion on dilationally evolving domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a configuration; writes snapshots, diagnostics.csv and manifest.json.
    Run {
        config: PathBuf,
        /// Output directory (overrides `[output] dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the structural condition checkers on the configured model.
    Check {
        config: PathBuf,
        /// Machine-readable report (default: `<output dir>/conditions.json`).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Half-width of the sampling box.
        #[arg(long, default_value_t = 10.0)]
        radius: f64,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
    /// Run with the Lyapunov monitor and print `t, P` as CSV.
    Lyapunov {
        config: PathBuf,
        #[arg(long, default_value_t = 2)]
        p: u32,
    },
    /// Evaluate the duality inequality against the backward dual problem.
    DualCheck {
        config: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value_t = 0.0)]
        l1: f64,
        #[arg(long, default_value_t = 0.0)]
        l2: f64,
        /// Test function `ξ(x)` before normalisation.
        #[arg(long, default_value = "1")]
        xi: String,
        #[arg(long, default_value_t = 1e-2)]
        tol_rel: f64,
    },
    /// Boundary-potential computations; prints CSV.
    Kernel {
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, value_enum)]
        geometry: Option<GeometryArg>,
        #[arg(long, value_enum, default_value_t = ModeArg::PaperLiteral)]
        mode: ModeArg,
        #[arg(long, value_enum)]
        op: KernelOp,
        /// Boundary nodes on the circle.
        #[arg(long, default_value_t = 32)]
        nodes: usize,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
    },
    /// Manufactured-solution refinement study: smooth, linear or large-dt.
    Convergence {
        case: String,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run a configuration and write plot data (diagnostics, slices or final).
    Export {
        config: PathBuf,
        #[arg(long, default_value = "diagnostics")]
        what: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GeometryArg {
    Interval,
    Circle,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    PaperLiteral,
    Standard,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelOp {
    Cn,
    VerifyZ0,
    JTest,
    Density,
    Reconstruct,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("EVODIFF_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("EVODIFF_THREADS={v:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn load(path: &Path) -> Result<AppConfig> {
    load_config(path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_run(config: &Path, out: Option<PathBuf>) -> Result<u8> {
    let cfg = load(config)?;
    let (run_cfg, initial) = cfg.build()?;
    let dir = out.unwrap_or_else(|| cfg.output_dir());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let start = Instant::now();
    let traj = run(&run_cfg, initial)?;
    let wall = start.elapsed().as_secs_f64();
    for (i, snap) in traj.snapshots.iter().enumerate() {
        write_snapshot(&dir.join(format!("snapshot_{i:05}.bin")), &run_cfg.grid, snap)?;
    }
    write_diagnostics_csv(&dir.join("diagnostics.csv"), &traj)?;
    RunManifest::new(&cfg, &run_cfg.law, &traj, wall)?.write(&dir.join("manifest.json"))?;
    for w in &traj.warnings {
        eprintln!("warning: {w}");
    }
    let last = traj.diagnostics.last().expect("at least one record");
    println!(
        "{}: t = {}, {} steps of dt = {:.3e}, sup = {:.6e}, min = {:.6e}, mass residual = {:.3e}",
        traj.termination.label(),
        last.t,
        traj.steps,
        traj.dt,
        last.sup,
        last.min,
        last.conservation_residual
    );
    println!("output written to {}", dir.display());
    Ok(traj.termination.exit_code() as u8)
}

fn print_reports(reports: &[ConditionReport]) {
    println!("{:<34} {:<13} constants", "condition", "verdict");
    for r in reports {
        let consts: Vec<String> = r.constants.iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
        println!(
            "{:<34} {:<13} {}",
            r.condition,
            format!("{:?}", r.verdict).to_lowercase(),
            consts.join(" ")
        );
    }
}

fn cmd_check(config: &Path, report: Option<PathBuf>, radius: f64, samples: usize) -> Result<u8> {
    let cfg = load(config)?;
    let model = cfg.build_model()?;
    let sampling = SampleBox::new(radius, samples);
    let m = model.components();
    let cert = model.certificate().cloned().unwrap_or_default();
    let b = cert.b.clone().unwrap_or_else(|| vec![1.0; m]);
    let mut reports = vec![
        check_quasi_positivity(&model, sampling)?,
        check_intermediate_sums(&model, &b, sampling)?,
    ];
    let mut a_vectors = vec![vec![1.0; m]];
    if m > 1 {
        let mut a = vec![2.0; m];
        a[m - 1] = 1.0;
        a_vectors.push(a);
    }
    reports.extend(check_vl(&model, cert.k.unwrap_or(1.0), &a_vectors, sampling)?);
    reports.push(check_polynomial_bound(&model, &[radius, 10.0 * radius, 100.0 * radius], samples)?);
    print_reports(&reports);
    let path = report.unwrap_or_else(|| cfg.output_dir().join("conditions.json"));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, serde_json::to_string_pretty(&reports)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("report written to {}", path.display());
    Ok(0)
}

fn cmd_lyapunov(config: &Path, p: u32) -> Result<u8> {
    let cfg = load(config)?;
    let (mut run_cfg, initial) = cfg.build()?;
    if run_cfg.lyapunov.is_none() {
        let setup = monitor_setup(&run_cfg.model, p)?;
        eprintln!(
            "K = {}{}, thresholds {:?}, Θ = {:?}",
            setup.k,
            if setup.heuristic { " (sampled)" } else { "" },
            setup.thresholds,
            setup.params.theta
        );
        run_cfg.lyapunov = Some(setup.params);
    }
    let traj = run(&run_cfg, initial)?;
    println!("t,P");
    for r in &traj.diagnostics {
        println!("{:?},{}", r.t, r.lyapunov_p.map(|v| format!("{v:?}")).unwrap_or_default());
    }
    eprintln!("{}", traj.termination.label());
    Ok(traj.termination.exit_code() as u8)
}

fn cmd_dual_check(config: &Path, p: f64, l1: f64, l2: f64, xi: &str, tol_rel: f64) -> Result<u8> {
    let cfg = load(config)?;
    let (run_cfg, initial) = cfg.build()?;
    let n = run_cfg.grid.dim();
    let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let mut scope = Scope::new(&names);
    for (i, alias) in ["x", "y", "z"].iter().take(n).enumerate() {
        scope.alias(alias, i);
    }
    let xi_expr = Expr::parse(xi, &scope)?;
    let xi = run_cfg.grid.sample(|x| xi_expr.eval(x));
    let job = DualityRun {
        config: run_cfg,
        initial,
        xi,
        p,
        l1,
        l2,
        tol_rel,
        tol_abs: 0.0,
    };
    let (result, _, _) = run_duality(&job)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(if result.passes { 0 } else { 1 })
}

#[allow(clippy::too_many_arguments)]
fn cmd_kernel(
    n: usize,
    geometry: Option<GeometryArg>,
    mode: ModeArg,
    op: KernelOp,
    nodes: usize,
    t: f64,
    eps: f64,
) -> Result<u8> {
    let mode = match mode {
        ModeArg::PaperLiteral => ExponentMode::PaperLiteral,
        ModeArg::Standard => ExponentMode::Standard,
    };
    if let KernelOp::Cn = op {
        let k = h0_and_cn(n)?;
        println!("n,h0_quadrature,h0_closed,omega_n,c_n");
        println!("{},{:?},{:?},{:?},{:?}", k.n, k.h0_quadrature, k.h0_closed, k.omega_n, k.c_n);
        return Ok(0);
    }
    let geometry = match (geometry, n) {
        (Some(GeometryArg::Interval) | None, 1) => Geometry::Interval { a: 0.0, b: 1.0 },
        (Some(GeometryArg::Circle) | None, 2) => Geometry::Circle {
            center: [0.0, 0.0],
            radius: 1.0,
            nodes,
        },
        _ => bail!("geometry must be interval for n = 1 and circle for n = 2"),
    };
    let ctx = KernelContext::identity(geometry, mode)?;
    match op {
        KernelOp::Cn => unreachable!(),
        KernelOp::VerifyZ0 => {
            let r = verify_fundamental(&ctx, 7)?;
            println!("mode,residual,flagged");
            println!("{:?},{:?},{}", r.mode, r.residual, r.flagged);
        }
        KernelOp::JTest => {
            println!("per_panel,value");
            for per in [2, 4, 8, 16, 32] {
                println!("{per},{:?}", j_epsilon(|_, _| 1.0, eps, 0, t, per, &ctx)?);
            }
        }
        KernelOp::Density | KernelOp::Reconstruct => {
            let times: Vec<f64> = (0..=10).map(|k| t * k as f64 / 10.0).collect();
            let sol = solve_density(|_: &[f64], _| 1.0, &times, &ctx)?;
            eprintln!(
                "residual {:.3e}, condition estimate {:.3}",
                sol.residual, sol.condition_estimate
            );
            if let KernelOp::Density = op {
                println!("t,node,g");
                for (k, row) in sol.values.iter().enumerate() {
                    for (i, g) in row.iter().enumerate() {
                        println!("{:?},{i},{g:?}", times[k]);
                    }
                }
            } else {
                let points: Vec<Vec<f64>> = (1..=8)
                    .map(|i| {
                        let r = 0.1 * i as f64;
                        if n == 1 { vec![r] } else { vec![r - 0.05, 0.0] }
                    })
                    .collect();
                println!("{},phi", (1..=n).map(|i| format!("x{i}")).collect::<Vec<_>>().join(","));
                for x in points {
                    let phi = classical_solution(&sol, &x, t, 8, &ctx)?;
                    let coords: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
                    println!("{},{phi:?}", coords.join(","));
                }
            }
        }
    }
    Ok(0)
}

fn cmd_convergence(case: &str, json: Option<PathBuf>) -> Result<u8> {
    let report = manufactured_convergence(case)?;
    println!("{:>6} {:>12} {:>12} {:>12}", "N", "h", "dt", "error");
    for l in &report.levels {
        println!("{:>6} {:>12.4e} {:>12.4e} {:>12.4e}", l.nodes_per_axis, l.h, l.dt, l.error);
    }
    let status = match report.status {
        ConvergenceStatus::Observed { order } => format!("observed order {order:.3}"),
        ConvergenceStatus::Exact => "exact to rounding".to_string(),
        ConvergenceStatus::Degraded { order } => format!("degraded, order {order:.3}"),
    };
    println!("orders {:?}: {status}", report.orders);
    if let Some(path) = json {
        std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}

fn cmd_export(config: &Path, what: &str, out: Option<PathBuf>) -> Result<u8> {
    let selector: PlotData = what.parse()?;
    let cfg = load(config)?;
    let (run_cfg, initial) = cfg.build()?;
    let traj = run(&run_cfg, initial)?;
    let dir = out.unwrap_or_else(|| cfg.output_dir());
    for f in export_plotdata(&traj, &run_cfg.grid, selector, &dir)? {
        println!("{}", f.display());
    }
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<u8> {
    configure_threads()?;
    match cli.command {
        Command::Run { config, out } => cmd_run(&config, out),
        Command::Check {
            config,
            report,
            radius,
            samples,
        } => cmd_check(&config, report, radius, samples),
        Command::Lyapunov { config, p } => cmd_lyapunov(&config, p),
        Command::DualCheck {
            config,
            p,
            l1,
            l2,
            xi,
            tol_rel,
        } => cmd_dual_check(&config, p, l1, l2, &xi, tol_rel),
        Command::Kernel {
            n,
            geometry,
            mode,
            op,
            nodes,
            t,
            eps,
        } => cmd_kernel(n, geometry, mode, op, nodes, t, eps),
        Command::Convergence { case, json } => cmd_convergence(&case, json),
        Command::Export { config, what, out } => cmd_export(&config, &what, out),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
