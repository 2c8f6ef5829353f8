//! End-to-end acceptance checks. Each criterion prints one line:
//! `[PASS] <n> <name>: <detail>` or `[FAIL] …`; the test fails if any does.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use evodiff::diagnostics::{
    b_matrix, lyapunov_p, lyapunov_p_m, run_duality, theta_threshold, DualityRun,
};
use evodiff::grid::{Grid, StateField};
use evodiff::growth::{GrowthLaw, JacobianMode};
use evodiff::kernel::{
    apply_density_operator, h0_and_cn, solve_density, verify_fundamental, ExponentMode, Geometry,
    KernelContext, KernelMatrix,
};
use evodiff::models::{
    check_intermediate_sums, check_vl, Builtin, ReactionModel, SampleBox, Verdict,
};
use evodiff::solver::{manufactured_convergence, run, RunConfig, Termination, Trajectory};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn ex1() -> ReactionModel {
    ReactionModel::builtin(Builtin::BrusselatorSurface { alpha: 1.0, beta: 2.0 }, vec![1.0, 0.5]).unwrap()
}

fn ex2(d: Vec<f64>) -> ReactionModel {
    ReactionModel::builtin(Builtin::ReversibleReaction { kf: 1.0, kr: 1.0 }, d).unwrap()
}

fn ex3() -> ReactionModel {
    ReactionModel::builtin(Builtin::Example3 { alpha: 1.0, beta: 1.0 }, vec![1.0, 0.5]).unwrap()
}

fn weighted_l2(grid: &Grid, a: &[f64], b: &[f64]) -> (f64, f64) {
    let w = grid.bulk_weights();
    let diff: f64 = a.iter().zip(b).zip(w).map(|((x, y), w)| w * (x - y).powi(2)).sum();
    let norm: f64 = b.iter().zip(w).map(|(y, w)| w * y * y).sum();
    (diff.sqrt(), norm.sqrt())
}

fn static_heat() -> Outcome {
    let grid = Grid::new(&[1.0], &[129]).map_err(err)?;
    let law = GrowthLaw::stationary(1, 1.0);
    let cfg = RunConfig::new(law, ReactionModel::zero(vec![1.0]), grid.clone(), 0.1);
    let u0 = grid.sample(|x| (PI * x[0]).cos());
    let traj = run(&cfg, StateField::new(0.0, vec![u0])).map_err(err)?;
    let decay = (-PI * PI * 0.1f64).exp();
    let exact = grid.sample(|x| decay * (PI * x[0]).cos());
    let (e, n) = weighted_l2(&grid, &traj.final_state().components[0], &exact);
    ensure(
        traj.termination == Termination::Completed && e / n <= 1e-3,
        format!("relative L2 error {:.3e} (≤ 1e-3), {} steps", e / n, traj.steps),
    )
}

fn growth_dilution() -> Outcome {
    let grid = Grid::new(&[1.0, 1.0, 1.0], &[5, 5, 5]).map_err(err)?;
    let mut details = Vec::new();
    let mut ok = true;
    for (mode, factor) in [
        (JacobianMode::PaperSqrt, (-0.15f64).exp()),
        (JacobianMode::StandardDet, (-0.3f64).exp()),
    ] {
        let law = GrowthLaw::isotropic_exponential(0.1, 3, 1.0)
            .map_err(err)?
            .with_jacobian(mode);
        let cfg = RunConfig::new(law, ReactionModel::zero(vec![1.0]), grid.clone(), 1.0);
        let traj = run(&cfg, StateField::uniform(&grid, 0.0, &[2.0])).map_err(err)?;
        let want = 2.0 * factor;
        let worst = traj.final_state().components[0]
            .iter()
            .map(|v| ((v - want) / want).abs())
            .fold(0.0, f64::max);
        ok &= worst <= 1e-8;
        details.push(format!("{mode:?} rel err {worst:.2e}"));
    }
    ensure(ok, details.join(", ") + " (≤ 1e-8)")
}

fn ex2_initial(grid: &Grid) -> StateField {
    StateField::new(
        0.0,
        vec![
            grid.sample(|x| 1.0 + 0.5 * (PI * x[0]).cos()),
            grid.sample(|x| 1.0 + 0.3 * (PI * x[1]).cos()),
            grid.sample(|x| 0.5 + 0.2 * (PI * x[0]).cos() * (PI * x[1]).cos()),
        ],
    )
}

fn mass_drift(traj: &Trajectory) -> f64 {
    let m0 = traj.diagnostics[0].evolving_mass;
    traj.diagnostics
        .iter()
        .map(|r| ((r.evolving_mass - m0) / m0).abs())
        .fold(0.0, f64::max)
}

fn ex2_conservation() -> Outcome {
    let grid = Grid::new(&[1.0, 1.0], &[17, 17]).map_err(err)?;
    let model = ex2(vec![1.0, 0.5, 2.0]);
    let stat = RunConfig::new(GrowthLaw::stationary(2, 1.0), model.clone(), grid.clone(), 1.0);
    let traj = run(&stat, ex2_initial(&grid)).map_err(err)?;
    let drift_static = mass_drift(&traj);

    let law = GrowthLaw::isotropic_exponential(0.2, 2, 1.0).map_err(err)?;
    let grow = RunConfig::new(law.clone(), model, grid.clone(), 1.0);
    let traj_g = run(&grow, ex2_initial(&grid)).map_err(err)?;
    let m0 = traj_g.diagnostics[0].evolving_mass;
    // the reference-domain mass must decay exactly like 1 / J(t)
    let mut worst = 0.0f64;
    for snap in &traj_g.snapshots {
        let j = law.volume_factor(snap.t).map_err(err)?;
        let reference: f64 = [0.5, 0.5, 1.0]
            .iter()
            .zip(&snap.components)
            .map(|(b, u)| b * grid.integrate_bulk(u).unwrap())
            .sum();
        worst = worst.max((j * reference - m0).abs() / m0);
    }
    let drift_grow = mass_drift(&traj_g);
    ensure(
        drift_static <= 1e-8 && worst <= 1e-6 && drift_grow <= 1e-6,
        format!(
            "static drift {drift_static:.2e} (≤ 1e-8); growing J·mass drift {worst:.2e}, \
             evolving-mass drift {drift_grow:.2e} (≤ 1e-6)"
        ),
    )
}

fn example_runs() -> Result<Vec<(&'static str, Trajectory)>, String> {
    let grid = Grid::new(&[1.0, 1.0], &[17, 17]).map_err(err)?;
    let two = StateField::new(
        0.0,
        vec![
            grid.sample(|x| 1.0 + 0.5 * (PI * x[0]).cos()),
            grid.sample(|x| 0.8 + 0.3 * (PI * x[1]).cos()),
        ],
    );
    let mut out = Vec::new();
    for (name, model, init) in [
        ("Ex. 1", ex1(), two.clone()),
        ("Ex. 2", ex2(vec![1.0, 0.5, 2.0]), ex2_initial(&grid)),
        ("Ex. 3", ex3(), two.clone()),
    ] {
        let cfg = RunConfig::new(GrowthLaw::stationary(2, 1.0), model, grid.clone(), 0.5);
        out.push((name, run(&cfg, init).map_err(err)?));
    }
    Ok(out)
}

fn nonnegativity(runs: &[(&str, Trajectory)]) -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for (name, traj) in runs {
        let min = traj.min_over_run();
        let floor = -1e-8 * (1.0 + traj.max_over_run());
        ok &= min >= floor;
        details.push(format!("{name} min {min:.3e}"));
    }
    ensure(ok, details.join(", ") + " (≥ −1e-8·(1+sup))")
}

fn blowup(runs: &[(&str, Trajectory)]) -> Outcome {
    let grid = Grid::new(&[1.0], &[33]).map_err(err)?;
    let model = ReactionModel::from_expressions("square-flux", &["0"], &["u1^2"], &BTreeMap::new(), vec![1.0])
        .map_err(err)?;
    let mut cfg = RunConfig::new(GrowthLaw::stationary(1, 10.0), model, grid.clone(), 10.0);
    cfg.max_steps = 1_000_000;
    let traj = run(&cfg, StateField::uniform(&grid, 0.0, &[1.0])).map_err(err)?;
    let codes: Vec<i32> = runs.iter().map(|(_, t)| t.termination.exit_code()).collect();
    let blew = matches!(traj.termination, Termination::BlowupDetected { .. });
    ensure(
        blew && traj.steps < 1_000_000 && traj.termination.exit_code() == 2 && codes.iter().all(|c| *c == 0),
        format!(
            "u² flux: {} after {} steps (exit {}); examples exit {:?}",
            traj.termination.label(),
            traj.steps,
            traj.termination.exit_code(),
            codes
        ),
    )
}

fn lyapunov() -> Outcome {
    let p21 = lyapunov_p(1.0, 1.0, 2, 2.0).map_err(err)?;
    let pm = lyapunov_p_m(&[0.7, 1.3], 3, &[1.7]).map_err(err)?;
    let p2 = lyapunov_p(0.7, 1.3, 3, 1.7).map_err(err)?;
    let (u, v) = (0.4f64, 2.5f64);
    let binom = lyapunov_p(u, v, 4, 1.0).map_err(err)?;
    let binom_err = (binom - (u + v).powi(4)).abs() / (u + v).powi(4);
    let det = b_matrix(2.0, 1.0, 1.0, 0).det;
    let theta = theta_threshold(4.0, 1.0, 1.0).map_err(err)?;
    ensure(
        p21 == 21.0 && pm.to_bits() == p2.to_bits() && binom_err <= 1e-12 && det == 12.0 && theta == 1.25,
        format!(
            "P(1,1)={p21}, m=2 bitwise {}, binomial rel {binom_err:.1e}, det B={det}, Θ threshold={theta}",
            pm.to_bits() == p2.to_bits()
        ),
    )
}

fn kernel_constants() -> Outcome {
    let c2 = h0_and_cn(2).map_err(err)?;
    let c3 = h0_and_cn(3).map_err(err)?;
    let closed = |k: &evodiff::kernel::KernelConstants| k.h0_closed * k.omega_n / 2.0;
    let r2 = (c2.c_n / (4.0 * PI) - 1.0).abs().max((c2.c_n / closed(&c2) - 1.0).abs());
    let r3 = (c3.c_n / (8.0 * PI.powf(1.5)) - 1.0).abs().max((c3.c_n / closed(&c3) - 1.0).abs());
    let circle = Geometry::Circle { center: [0.0, 0.0], radius: 1.0, nodes: 8 };
    let std = KernelContext::new(KernelMatrix::Constant(vec![1.0, 1.0]), circle, ExponentMode::Standard)
        .map_err(err)?;
    let s = verify_fundamental(&std, 7).map_err(err)?;
    let p = verify_fundamental(&std.with_mode(ExponentMode::PaperLiteral), 7).map_err(err)?;
    ensure(
        r2 <= 1e-8 && r3 <= 1e-8 && s.residual <= 1e-4 && !s.flagged && p.flagged,
        format!(
            "c2 rel {r2:.1e}, c3 rel {r3:.1e}; Z0 residual standard {:.1e}, paper-literal {:.2} (flagged {})",
            s.residual, p.residual, p.flagged
        ),
    )
}

fn volterra() -> Outcome {
    let ctx = KernelContext::identity(
        Geometry::Circle { center: [0.0, 0.0], radius: 1.0, nodes: 24 },
        ExponentMode::PaperLiteral,
    )
    .map_err(err)?;
    let times: Vec<f64> = (0..=12).map(|k| 0.025 * k as f64).collect();
    let gamma = |q: &[f64], t: f64| (1.0 + t) * (2.0 + q[0] - 0.5 * q[1]);
    let sol = solve_density(gamma, &times, &ctx).map_err(err)?;
    let back = apply_density_operator(&sol, &ctx).map_err(err)?;
    let mut worst = 0.0f64;
    for (k, row) in back.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            let want = -2.0 * gamma(&ctx.nodes()[i].point, times[k]);
            worst = worst.max((v - want).abs() / want.abs());
        }
    }
    let cut = times[6];
    let altered = solve_density(
        |q: &[f64], t: f64| if t > cut { -3.0 + q[1] } else { gamma(q, t) },
        &times,
        &ctx,
    )
    .map_err(err)?;
    let causal = sol.values[..=6] == altered.values[..=6];
    ensure(
        worst <= 1e-8 && causal,
        format!("apply-after-solve rel {worst:.1e} (≤ 1e-8), causality exact {causal}, cond ≈ {:.2}", sol.condition_estimate),
    )
}

fn duality() -> Outcome {
    let grid = Grid::new(&[1.0, 1.0], &[33, 33]).map_err(err)?;
    let cfg = RunConfig::new(
        GrowthLaw::stationary(2, 1.0),
        ex2(vec![1.0, 0.5, 2.0]),
        grid.clone(),
        0.2,
    );
    let xi = grid.sample(|x| 1.0 + x[0] * x[1]);
    let job = DualityRun {
        config: cfg,
        initial: ex2_initial(&grid),
        xi,
        p: 2.0,
        l1: 0.0,
        l2: 1.0,
        tol_rel: 1e-2,
        tol_abs: 0.0,
    };
    let (res, _, _) = run_duality(&job).map_err(err)?;
    ensure(
        res.lhs <= res.rhs + 1e-2 * res.rhs.abs(),
        format!("LHS {:.6} ≤ RHS {:.6} (+1% slack)", res.lhs, res.rhs),
    )
}

fn convergence() -> Outcome {
    let report = manufactured_convergence("smooth").map_err(err)?;
    let ok = report.levels.len() >= 3 && report.orders.iter().all(|o| (1.9..=2.1).contains(o));
    let errors: Vec<String> = report.levels.iter().map(|l| format!("{:.3e}", l.error)).collect();
    ensure(ok, format!("orders {:?} (∈ [1.9, 2.1]), errors {:?}", report.orders, errors))
}

fn certificates() -> Outcome {
    let sampling = SampleBox::new(10.0, 2000);
    let a1 = 2.0;
    let r1 = &check_vl(&ex1(), 1.0, &[vec![a1, 1.0]], sampling).map_err(err)?[0];
    let la1 = r1.constants["L_a"];
    let ex1_ok = r1.verdict == Verdict::Pass && la1 <= 2.0f64.max(1.0 * a1) + 1e-9;

    // a = (1, 1), α = β = 1: g1 + g2 = α u1 u2³ (1 − u2³) ≤ (aα/4) u1
    let r3 = &check_vl(&ex3(), 1.0, &[vec![1.0, 1.0]], sampling).map_err(err)?[0];
    let la3 = r3.constants["L_a"];
    let ex3_ok = r3.verdict == Verdict::Pass && la3 <= 0.25 + 1e-9;

    let r2 = check_intermediate_sums(&ex2(vec![1.0; 3]), &[0.5, 0.5, 1.0], sampling).map_err(err)?;
    let l1 = r2.constants["L1"];
    ensure(
        ex1_ok && ex3_ok && l1 == 0.0,
        format!("Ex. 1 L_a {la1:.6} (≤ 2), Ex. 3 L_a {la3:.6} (≤ aα/4 = 0.25), Ex. 2 L1 = {l1}"),
    )
}

#[test]
fn acceptance() {
    println!();
    let mut failures = Vec::new();
    let mut report = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("[PASS] {id:>2} {name}: {d} [{secs:.2}s]"),
            Err(d) => {
                println!("[FAIL] {id:>2} {name}: {d} [{secs:.2}s]");
                failures.push(id);
            }
        }
    };
    report(1, "static-domain reduction", &mut static_heat);
    report(2, "growth-dilution exactness", &mut growth_dilution);
    report(3, "weighted-mass conservation", &mut ex2_conservation);
    let runs = example_runs();
    report(4, "nonnegativity", &mut || nonnegativity(runs.as_ref().map_err(Clone::clone)?));
    report(5, "blow-up detection", &mut || blowup(runs.as_ref().map_err(Clone::clone)?));
    report(6, "Lyapunov machinery", &mut lyapunov);
    report(7, "kernel constants", &mut kernel_constants);
    report(8, "Volterra density solve", &mut volterra);
    report(9, "duality inequality", &mut duality);
    report(10, "manufactured convergence", &mut convergence);
    report(11, "condition certificates", &mut certificates);
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
