//! Estimate machinery as computable monitors: Lyapunov polynomials, the
//! positivity matrix and Θ threshold, the backward dual problem and the
//! duality inequality, and L1 growth reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, GridError, StateField};
use crate::growth::{GrowthError, GrowthLaw};
use crate::models::{check_vl, ModelError, ReactionModel, SampleBox, Verdict};
use crate::operator::{FluxConvention, FluxFn, OperatorContext, OperatorError};
use crate::solver::{run, RunConfig, SolverError, Termination, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("misaligned trajectories: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Growth(#[from] GrowthError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("primal run failed: {0}")]
    Solver(Box<SolverError>),
}

impl From<SolverError> for DiagnosticsError {
    fn from(e: SolverError) -> Self {
        DiagnosticsError::Solver(Box::new(e))
    }
}

/// Largest supported polynomial order.
pub const MAX_ORDER: u32 = 30;

/// Order `p` and weights `θ_1..θ_{m-1}` of the Lyapunov polynomial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovParams {
    pub p: u32,
    pub theta: Vec<f64>,
}

impl LyapunovParams {
    pub fn validate(&self, m: usize) -> Result<(), DiagnosticsError> {
        check_order(self.p)?;
        if m < 2 || self.theta.len() != m - 1 {
            return Err(DiagnosticsError::Parameter(format!(
                "{} theta values for {m} components (need m - 1, m >= 2)",
                self.theta.len()
            )));
        }
        if self.theta.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(DiagnosticsError::Parameter(format!(
                "theta {:?} must be positive",
                self.theta
            )));
        }
        Ok(())
    }
}

fn check_order(p: u32) -> Result<(), DiagnosticsError> {
    if !(2..=MAX_ORDER).contains(&p) {
        return Err(DiagnosticsError::Parameter(format!(
            "order p = {p} must lie in 2..={MAX_ORDER}"
        )));
    }
    Ok(())
}

/// `p! / (k_1! ⋯ k_r!)` for parts summing to `p`, exact in integers.
fn multinomial(p: u32, parts: &[u32]) -> f64 {
    let mut remaining = p as u128;
    let mut acc: u128 = 1;
    for &k in parts {
        let k = k as u128;
        // C(remaining, k)
        let mut c: u128 = 1;
        for j in 0..k {
            c = c * (remaining - j) / (j + 1);
        }
        acc *= c;
        remaining -= k;
    }
    acc as f64
}

/// `Σ_β C(p, β) Θ^{β²} u^β v^{p−β}`.
pub fn lyapunov_p(u: f64, v: f64, p: u32, theta: f64) -> Result<f64, DiagnosticsError> {
    check_order(p)?;
    if !(u >= 0.0 && v >= 0.0) {
        return Err(DiagnosticsError::Parameter(format!(
            "arguments ({u}, {v}) must be nonnegative"
        )));
    }
    if !(theta > 0.0) {
        return Err(DiagnosticsError::Parameter(format!("theta = {theta} must be positive")));
    }
    let mut total = 0.0;
    for beta in 0..=p {
        let coef = multinomial(p, &[beta, p - beta]);
        let weight = 1.0 * theta.powi((beta * beta) as i32);
        let mono = 1.0 * u.powi(beta as i32) * v.powi((p - beta) as i32);
        total += coef * weight * mono;
    }
    Ok(total)
}

/// Multinomial form over `|β| ≤ p`, the last component taking `p − |β|`.
pub fn lyapunov_p_m(z: &[f64], p: u32, theta: &[f64]) -> Result<f64, DiagnosticsError> {
    LyapunovParams {
        p,
        theta: theta.to_vec(),
    }
    .validate(z.len())?;
    if z.iter().any(|v| !(*v >= 0.0)) {
        return Err(DiagnosticsError::Parameter(format!(
            "arguments {z:?} must be nonnegative"
        )));
    }
    Ok(lyapunov_p_m_unchecked(z, p, theta))
}

fn lyapunov_p_m_unchecked(z: &[f64], p: u32, theta: &[f64]) -> f64 {
    let r = z.len() - 1;
    let mut beta = vec![0u32; r];
    let mut parts = vec![0u32; r + 1];
    let mut total = 0.0;
    // multi-indices in lexicographic order with β_1 slowest
    loop {
        let used: u32 = beta.iter().sum();
        if used <= p {
            parts[..r].copy_from_slice(&beta);
            parts[r] = p - used;
            let coef = multinomial(p, &parts);
            let mut weight = 1.0;
            for j in 0..r {
                weight *= theta[j].powi((beta[j] * beta[j]) as i32);
            }
            let mut mono = 1.0;
            for j in 0..r {
                mono *= z[j].powi(beta[j] as i32);
            }
            mono *= z[r].powi((p - used) as i32);
            total += coef * weight * mono;
        }
        // advance the odometer, last index fastest
        let mut j = r;
        loop {
            if j == 0 {
                return total;
            }
            j -= 1;
            beta[j] += 1;
            if beta[j] <= p {
                break;
            }
            beta[j] = 0;
        }
    }
}

/// `∫_Ω P(u(x)) dx`; small negative overshoots are evaluated at zero.
pub fn lyapunov_field(
    grid: &Grid,
    state: &StateField,
    params: &LyapunovParams,
) -> Result<f64, DiagnosticsError> {
    params.validate(state.components.len())?;
    state.check(grid)?;
    let m = state.components.len();
    let mut z = vec![0.0; m];
    let values: Vec<f64> = (0..grid.len())
        .map(|lin| {
            state.node_values(lin, &mut z);
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            if m == 2 {
                lyapunov_p(z[0], z[1], params.p, params.theta[0]).unwrap_or(f64::NAN)
            } else {
                lyapunov_p_m_unchecked(&z, params.p, &params.theta)
            }
        })
        .collect();
    Ok(grid.integrate_bulk(&values)?)
}

/// Chain-rule time derivative of `P(u, v)` given `u_t, v_t`:
/// `Σ_{β<p} p!/(β!(p−1−β)!) Θ^{β²} u^β v^{p−1−β} (Θ^{2β+1} u_t + v_t)`.
pub fn lyapunov_dp_dt(
    u: f64,
    v: f64,
    ut: f64,
    vt: f64,
    p: u32,
    theta: f64,
) -> Result<f64, DiagnosticsError> {
    check_order(p)?;
    let mut total = 0.0;
    for beta in 0..p {
        let coef = p as f64 * multinomial(p - 1, &[beta, p - 1 - beta]);
        total += coef
            * theta.powi((beta * beta) as i32)
            * u.powi(beta as i32)
            * v.powi((p - 1 - beta) as i32)
            * (theta.powi((2 * beta + 1) as i32) * ut + vt);
    }
    Ok(total)
}

/// `max{K, (D + D̃) / (2 √(D D̃))}`.
pub fn theta_threshold(d: f64, d_tilde: f64, k: f64) -> Result<f64, DiagnosticsError> {
    if !(d > 0.0 && d_tilde > 0.0) {
        return Err(DiagnosticsError::Parameter(format!(
            "diffusivities ({d}, {d_tilde}) must be positive"
        )));
    }
    Ok(k.max((d + d_tilde) / (2.0 * (d * d_tilde).sqrt())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BMatrix {
    pub entries: [[f64; 2]; 2],
    pub det: f64,
    pub positive_definite: bool,
}

/// `[[D Θ^{4β+4}, (D+D̃)/2 Θ^{2β+1}], [(D+D̃)/2 Θ^{2β+1}, D̃]]` with the
/// leading-minor test.
pub fn b_matrix(theta: f64, d: f64, d_tilde: f64, beta: u32) -> BMatrix {
    let a = d * theta.powi((4 * beta + 4) as i32);
    let off = 0.5 * (d + d_tilde) * theta.powi((2 * beta + 1) as i32);
    let det = a * d_tilde - off * off;
    BMatrix {
        entries: [[a, off], [off, d_tilde]],
        det,
        positive_definite: a > 0.0 && det > 0.0,
    }
}

/// Θ weights chosen for trajectory monitoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSetup {
    pub params: LyapunovParams,
    pub k: f64,
    /// Set when `K` was not certified and had to be estimated by sampling.
    pub heuristic: bool,
    pub thresholds: Vec<f64>,
}

/// Smallest `K` in `1, 2, 4, …, 1024` for which the sampled weight-vector
/// condition holds with `a = (K, …, K, 1)` and `(2K, …, 2K, 1)`.
pub fn empirical_k(model: &ReactionModel) -> Result<Option<f64>, DiagnosticsError> {
    let m = model.components();
    let sampling = SampleBox::new(10.0, 2000);
    for e in 0..=10 {
        let k = f64::from(1u32 << e);
        let vecs: Vec<Vec<f64>> = [k, 2.0 * k]
            .iter()
            .map(|&w| {
                let mut a = vec![w; m];
                a[m - 1] = 1.0;
                a
            })
            .collect();
        let reports = check_vl(model, k, &vecs, sampling)?;
        if reports.iter().all(|r| r.verdict == Verdict::Pass) {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// Θ = 1.05 × threshold for `m = 2`; for other `m`, `θ_j = 1.05 ×
/// max{K, threshold(d_j, d_m)}`.
pub fn monitor_setup(model: &ReactionModel, p: u32) -> Result<MonitorSetup, DiagnosticsError> {
    let m = model.components();
    if m < 2 {
        return Err(DiagnosticsError::Parameter(
            "Lyapunov monitoring needs at least two components".into(),
        ));
    }
    let (k, heuristic) = match model.certificate().and_then(|c| c.k) {
        Some(k) => (k, false),
        None => (empirical_k(model)?.unwrap_or(1.0), true),
    };
    let d = model.diffusivities();
    let thresholds = (0..m - 1)
        .map(|j| theta_threshold(d[j], d[m - 1], k))
        .collect::<Result<Vec<_>, _>>()?;
    let params = LyapunovParams {
        p,
        theta: thresholds.iter().map(|t| 1.05 * t).collect(),
    };
    params.validate(m)?;
    Ok(MonitorSetup {
        params,
        k,
        heuristic,
        thresholds,
    })
}

/// Data of the backward dual problem
/// `φ_t + D Δ_t φ = −L1 φ − ξ`, `D ∇_t φ·η = L2 φ`, `φ(T) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualConfig {
    /// Nodal values of `ξ ≥ 0`, constant in time.
    pub xi: Vec<f64>,
    pub l1: f64,
    pub l2: f64,
    pub d: f64,
    /// Diffusivity of the second species, used only by the `L2` admissibility test.
    pub d_tilde: f64,
    pub horizon: f64,
}

impl DualConfig {
    pub fn validate(&self, grid: &Grid) -> Result<(), DiagnosticsError> {
        grid.check_shape(&self.xi)?;
        let mut errs = Vec::new();
        if self.xi.iter().any(|v| !(*v >= 0.0)) {
            errs.push("xi must be nonnegative".to_string());
        }
        if !(self.d > 0.0 && self.d_tilde > 0.0) {
            errs.push(format!("diffusivities ({}, {}) must be positive", self.d, self.d_tilde));
        }
        if !(self.l1 >= 0.0) {
            errs.push(format!("L1 = {} must be >= 0", self.l1));
        }
        let need = (self.d_tilde * self.l1 / self.d).max(self.l1);
        if !(self.l2 >= need) {
            errs.push(format!("L2 = {} must be >= max(D~ L1 / D, L1) = {need}", self.l2));
        }
        if !(self.horizon > 0.0) {
            errs.push(format!("horizon = {} must be positive", self.horizon));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(DiagnosticsError::Parameter(errs.join("; ")))
        }
    }
}

/// Scales `ξ` so that `‖ξ‖_{p′, Ω×(0,T)} = 1` (time-constant `ξ`).
pub fn normalize_xi(
    grid: &Grid,
    xi: &[f64],
    p_prime: f64,
    horizon: f64,
) -> Result<Vec<f64>, DiagnosticsError> {
    if !(p_prime >= 1.0) || !(horizon > 0.0) {
        return Err(DiagnosticsError::Parameter(format!(
            "need p' >= 1 and T > 0, got {p_prime}, {horizon}"
        )));
    }
    let pow: Vec<f64> = xi.iter().map(|v| v.abs().powf(p_prime)).collect();
    let norm = (horizon * grid.integrate_bulk(&pow)?).powf(1.0 / p_prime);
    if norm == 0.0 {
        return Ok(xi.to_vec());
    }
    Ok(xi.iter().map(|v| v / norm).collect())
}

/// `φ` at each requested time, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub times: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
}

impl DualSolution {
    pub fn min_value(&self) -> f64 {
        self.phi.iter().flatten().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.phi.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_times(times: &[f64], horizon: f64) -> Result<(), DiagnosticsError> {
    if times.len() < 2
        || times[0] != 0.0
        || times.windows(2).any(|w| !(w[1] > w[0]))
        || (times[times.len() - 1] - horizon).abs() > 1e-12 * horizon.max(1.0)
    {
        return Err(DiagnosticsError::Misaligned(format!(
            "times must increase strictly from 0 to the horizon {horizon}"
        )));
    }
    Ok(())
}

/// Solves the dual problem backwards through `times` as a forward problem in
/// `τ = T − t` (RK4 between consecutive times).
pub fn dual_solve(
    cfg: &DualConfig,
    grid: &Grid,
    law: &GrowthLaw,
    times: &[f64],
) -> Result<DualSolution, DiagnosticsError> {
    cfg.validate(grid)?;
    check_times(times, cfg.horizon)?;
    let len = grid.len();
    let l2 = cfg.l2;
    let flux = FluxFn(move |_: &[f64], _: &crate::grid::Face, _: f64, z: &[f64], out: &mut [f64]| {
        out[0] = l2 * z[0];
    });
    let rhs = |t: f64, psi: &[f64]| -> Result<Vec<f64>, DiagnosticsError> {
        let ctx = OperatorContext::new(grid, law, &[cfg.d], t, FluxConvention::DScaled)?;
        let st = StateField::new(t, vec![psi.to_vec()]);
        let gh = ctx.boundary_close(&st, &flux)?;
        let mut out = vec![0.0; len];
        ctx.apply_diffusion_into(psi, cfg.d, &gh, 0, &mut out)?;
        for i in 0..len {
            out[i] += cfg.l1 * psi[i] + cfg.xi[i];
        }
        Ok(out)
    };
    let n = times.len();
    let mut phi = vec![Vec::new(); n];
    phi[n - 1] = vec![0.0; len];
    for k in (1..n).rev() {
        let t = times[k];
        let h = t - times[k - 1];
        let psi = &phi[k];
        let k1 = rhs(t, psi)?;
        let y2: Vec<f64> = (0..len).map(|i| psi[i] + 0.5 * h * k1[i]).collect();
        let k2 = rhs(t - 0.5 * h, &y2)?;
        let y3: Vec<f64> = (0..len).map(|i| psi[i] + 0.5 * h * k2[i]).collect();
        let k3 = rhs(t - 0.5 * h, &y3)?;
        let y4: Vec<f64> = (0..len).map(|i| psi[i] + h * k3[i]).collect();
        let k4 = rhs(times[k - 1], &y4)?;
        phi[k - 1] = (0..len)
            .map(|i| psi[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
    }
    Ok(DualSolution {
        times: times.to_vec(),
        phi,
    })
}

/// Both sides of the duality inequality and their difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityResult {
    /// `∫∫ w ξ`, `w = Σ b_i u_i`
    pub lhs: f64,
    /// `∫ w(0) φ(0)`
    pub initial: f64,
    /// `∫∫ Σ b_i (d_i − D) u_i Δ_t φ`
    pub cross: f64,
    /// `L1 ∫∫ φ`
    pub bulk_l1: f64,
    /// `L1 ∫∫_Γ φ`
    pub boundary_l1: f64,
    /// `−∫∫ a(t) w`
    pub dilution: f64,
    pub rhs: f64,
    /// `lhs − rhs`
    pub residual: f64,
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub passes: bool,
}

/// Evaluates the printed duality inequality on aligned primal snapshots and
/// dual solution, with the grid's trapezoid quadratures in space and time.
#[allow(clippy::too_many_arguments)]
pub fn duality_check(
    grid: &Grid,
    law: &GrowthLaw,
    snapshots: &[StateField],
    d: &[f64],
    b: &[f64],
    dual: &DualSolution,
    cfg: &DualConfig,
    tol_rel: f64,
    tol_abs: f64,
) -> Result<DualityResult, DiagnosticsError> {
    if snapshots.len() != dual.times.len()
        || snapshots
            .iter()
            .zip(&dual.times)
            .any(|(s, t)| (s.t - t).abs() > 1e-12 * t.abs().max(1.0))
    {
        return Err(DiagnosticsError::Misaligned(format!(
            "{} primal snapshots vs {} dual times",
            snapshots.len(),
            dual.times.len()
        )));
    }
    let m = d.len();
    if b.len() != m || snapshots.iter().any(|s| s.components.len() != m) {
        return Err(DiagnosticsError::Misaligned(
            "weights, diffusivities and snapshot components disagree".into(),
        ));
    }
    let len = grid.len();
    let l2 = cfg.l2;
    let flux = FluxFn(move |_: &[f64], _: &crate::grid::Face, _: f64, z: &[f64], out: &mut [f64]| {
        out[0] = l2 * z[0];
    });
    let mut lhs_s = Vec::new();
    let mut cross_s = Vec::new();
    let mut bulk_s = Vec::new();
    let mut bdry_s = Vec::new();
    let mut dil_s = Vec::new();
    let mut lap = vec![0.0; len];
    for (s, phi) in snapshots.iter().zip(&dual.phi) {
        s.check(grid)?;
        let w: Vec<f64> = (0..len)
            .map(|i| (0..m).map(|c| b[c] * s.components[c][i]).sum())
            .collect();
        let wx: Vec<f64> = w.iter().zip(&cfg.xi).map(|(a, x)| a * x).collect();
        lhs_s.push(grid.integrate_bulk(&wx)?);
        let ctx = OperatorContext::new(grid, law, &[cfg.d], s.t, FluxConvention::DScaled)?;
        let gh = ctx.boundary_close(&StateField::new(s.t, vec![phi.clone()]), &flux)?;
        ctx.apply_diffusion_into(phi, 1.0, &gh, 0, &mut lap)?;
        let cross: Vec<f64> = (0..len)
            .map(|i| {
                (0..m)
                    .map(|c| b[c] * (d[c] - cfg.d) * s.components[c][i])
                    .sum::<f64>()
                    * lap[i]
            })
            .collect();
        cross_s.push(grid.integrate_bulk(&cross)?);
        bulk_s.push(cfg.l1 * grid.integrate_bulk(phi)?);
        bdry_s.push(cfg.l1 * grid.integrate_boundary(phi)?);
        dil_s.push(-law.dilution_rate(s.t)? * grid.integrate_bulk(&w)?);
    }
    let trap = |v: &[f64]| -> f64 {
        dual.times
            .windows(2)
            .zip(v.windows(2))
            .map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1]))
            .sum()
    };
    let w0: Vec<f64> = (0..len)
        .map(|i| {
            (0..m).map(|c| b[c] * snapshots[0].components[c][i]).sum::<f64>() * dual.phi[0][i]
        })
        .collect();
    let lhs = trap(&lhs_s);
    let initial = grid.integrate_bulk(&w0)?;
    let cross = trap(&cross_s);
    let bulk_l1 = trap(&bulk_s);
    let boundary_l1 = trap(&bdry_s);
    let dilution = trap(&dil_s);
    let rhs = initial + cross + bulk_l1 + boundary_l1 + dilution;
    let residual = lhs - rhs;
    Ok(DualityResult {
        lhs,
        initial,
        cross,
        bulk_l1,
        boundary_l1,
        dilution,
        rhs,
        residual,
        tol_rel,
        tol_abs,
        passes: residual <= tol_rel * rhs.abs() + tol_abs,
    })
}

/// Inputs for [`run_duality`].
#[derive(Debug, Clone)]
pub struct DualityRun {
    pub config: RunConfig,
    pub initial: StateField,
    /// Un-normalised `ξ`; scaled to unit `p′` norm before use.
    pub xi: Vec<f64>,
    pub p: f64,
    pub l1: f64,
    pub l2: f64,
    pub tol_rel: f64,
    pub tol_abs: f64,
}

/// Runs the primal problem with a snapshot at every step, solves the dual
/// problem on the same times and evaluates the inequality. `D`, `D̃` are the
/// first two diffusivities (the second falls back to the first for `m = 1`).
pub fn run_duality(job: &DualityRun) -> Result<(DualityResult, Trajectory, DualSolution), DiagnosticsError> {
    if !(job.p > 1.0) {
        return Err(DiagnosticsError::Parameter(format!("p = {} must exceed 1", job.p)));
    }
    let mut cfg = job.config.clone();
    cfg.snapshot_every = 1;
    cfg.diagnostics_every = 0;
    let traj = run(&cfg, job.initial.clone())?;
    if traj.termination != Termination::Completed {
        return Err(DiagnosticsError::Misaligned(format!(
            "primal run ended with {}",
            traj.termination.label()
        )));
    }
    let grid = &cfg.grid;
    let d = cfg.model.diffusivities();
    let p_prime = job.p / (job.p - 1.0);
    let xi = normalize_xi(grid, &job.xi, p_prime, cfg.t_end)?;
    let dual_cfg = DualConfig {
        xi,
        l1: job.l1,
        l2: job.l2,
        d: d[0],
        d_tilde: *d.get(1).unwrap_or(&d[0]),
        horizon: cfg.t_end,
    };
    let times: Vec<f64> = traj.snapshots.iter().map(|s| s.t).collect();
    let dual = dual_solve(&dual_cfg, grid, &cfg.law, &times)?;
    let result = duality_check(
        grid,
        &cfg.law,
        &traj.snapshots,
        d,
        &traj.weights,
        &dual,
        &dual_cfg,
        job.tol_rel,
        job.tol_abs,
    )?;
    Ok((result, traj, dual))
}

/// Weighted L1 history with an exponential fit `C e^{r t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Report {
    pub max_bulk: f64,
    pub max_boundary: f64,
    pub c: f64,
    pub rate: f64,
    /// Growth accelerates well beyond any single exponential.
    pub super_exponential: bool,
}

fn fit_line(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mt, slope))
}

/// L1 report over the diagnostics records of `traj`, weighted by `b`.
pub fn l1_report(traj: &Trajectory, b: &[f64]) -> Result<L1Report, DiagnosticsError> {
    if traj.diagnostics.is_empty() {
        return Err(DiagnosticsError::Parameter("empty trajectory".into()));
    }
    let weighted = |v: &[f64]| -> f64 { v.iter().zip(b).map(|(x, w)| x * w).sum() };
    let series: Vec<(f64, f64, f64)> = traj
        .diagnostics
        .iter()
        .map(|r| (r.t, weighted(&r.l1_bulk), weighted(&r.l1_boundary)))
        .collect();
    let max_bulk = series.iter().map(|s| s.1).fold(0.0, f64::max);
    let max_boundary = series.iter().map(|s| s.2).fold(0.0, f64::max);
    let logs: Vec<(f64, f64)> = series
        .iter()
        .filter(|s| s.1 > 0.0 && s.1.is_finite())
        .map(|s| (s.0, s.1.ln()))
        .collect();
    let non_finite = series.iter().any(|s| !s.1.is_finite() || !s.2.is_finite());
    let (intercept, rate) = fit_line(&logs).unwrap_or((logs.first().map_or(0.0, |p| p.1), 0.0));
    let half = logs.len() / 2;
    let accelerating = match (fit_line(&logs[..half.max(2).min(logs.len())]), fit_line(&logs[half..])) {
        (Some((_, early)), Some((_, late))) => late > 2.0 * early.max(0.0) + 1.0,
        _ => false,
    };
    let blowup = matches!(traj.termination, Termination::BlowupDetected { .. });
    Ok(L1Report {
        max_bulk,
        max_boundary,
        c: intercept.exp(),
        rate,
        super_exponential: non_finite || accelerating || (blowup && rate > 0.0),
    })
}

/// Terms of the `γ = 2` interpolation inequality
/// `‖v‖²_{2,Γ} ≤ ε ‖∇v‖²_{2,Ω} + C ‖v‖²_{1,Ω}` for one discrete field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationTerms {
    pub trace_sq: f64,
    pub grad_sq: f64,
    pub l1: f64,
    /// Smallest `C` making the inequality hold for this field.
    pub needed: f64,
}

pub fn interpolation_terms(grid: &Grid, v: &[f64], eps: f64) -> Result<InterpolationTerms, DiagnosticsError> {
    grid.check_shape(v)?;
    let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    let trace_sq = grid.integrate_boundary(&sq)?;
    // ∫|∇v|² = −∫ v Δv under the mirrored closure
    let st = GrowthLaw::stationary(grid.dim(), 1.0);
    let ctx = OperatorContext::new(grid, &st, &[1.0], 0.0, FluxConvention::DScaled)?;
    let mut lap = vec![0.0; v.len()];
    ctx.apply_neumann_into(v, 0, &mut lap);
    let vl: Vec<f64> = v.iter().zip(&lap).map(|(a, b)| a * b).collect();
    let grad_sq = -grid.integrate_bulk(&vl)?;
    let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let l1 = grid.integrate_bulk(&abs)?;
    let needed = if l1 == 0.0 {
        0.0
    } else {
        ((trace_sq - eps * grad_sq) / (l1 * l1)).max(0.0)
    };
    Ok(InterpolationTerms {
        trace_sq,
        grad_sq,
        l1,
        needed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Builtin;
    use proptest::prelude::*;

    #[test]
    fn lyapunov_examples() {
        assert_eq!(lyapunov_p(1.0, 1.0, 2, 2.0).unwrap(), 21.0);
        assert_eq!(lyapunov_p(0.0, 3.0, 3, 5.0).unwrap(), 27.0);
        assert!(lyapunov_p(1.0, 1.0, 1, 2.0).is_err());
        assert!(lyapunov_p(-1.0, 1.0, 2, 2.0).is_err());
        assert_eq!(lyapunov_p_m(&[1.0, 1.0, 1.0], 2, &[2.0, 2.0]).unwrap(), 49.0);
        assert!(lyapunov_p_m(&[1.0, 1.0, 1.0], 2, &[2.0]).is_err());
    }

    #[test]
    fn multinomial_by_enumeration() {
        // brute-force count of words with the given letter multiplicities
        fn count(parts: &mut [u32]) -> u64 {
            if parts.iter().all(|&k| k == 0) {
                return 1;
            }
            let mut total = 0;
            for i in 0..parts.len() {
                if parts[i] > 0 {
                    parts[i] -= 1;
                    total += count(parts);
                    parts[i] += 1;
                }
            }
            total
        }
        for parts in [vec![2u32, 1, 1], vec![3, 0, 2], vec![1, 1, 1, 1], vec![4, 2]] {
            let p = parts.iter().sum();
            assert_eq!(multinomial(p, &parts), count(&mut parts.clone()) as f64);
        }
    }

    #[test]
    fn threshold_and_matrix() {
        assert_eq!(theta_threshold(1.0, 1.0, 0.5).unwrap(), 1.0);
        assert_eq!(theta_threshold(4.0, 1.0, 1.0).unwrap(), 1.25);
        assert_eq!(theta_threshold(1.0, 1.0, 7.0).unwrap(), 7.0);
        assert!(theta_threshold(0.0, 1.0, 1.0).is_err());
        let b = b_matrix(2.0, 1.0, 1.0, 0);
        assert_eq!(b.entries, [[16.0, 2.0], [2.0, 1.0]]);
        assert_eq!(b.det, 12.0);
        assert!(b.positive_definite);
        let s = b_matrix(1.0, 1.0, 1.0, 0);
        assert_eq!(s.det, 0.0);
        assert!(!s.positive_definite);
        for beta in 0..4 {
            let t: f64 = 1.3;
            let d = 2.0;
            let closed = d * d * (t.powi(4 * beta + 4) - t.powi(4 * beta + 2));
            let m = b_matrix(t, d, d, beta as u32);
            assert!((m.det - closed).abs() < 1e-10 * closed);
        }
    }

    #[test]
    fn posdef_is_monotone_in_theta() {
        for (d, dt) in [(1.0, 1.0), (4.0, 1.0), (0.1, 3.0)] {
            for beta in 0..4 {
                let mut seen = false;
                for i in 0..400 {
                    let t = 1.0 + 0.01 * i as f64;
                    let pd = b_matrix(t, d, dt, beta).positive_definite;
                    assert!(!seen || pd, "lost definiteness at {t} ({d}, {dt}, {beta})");
                    seen |= pd;
                }
            }
        }
    }

    #[test]
    fn dp_dt_matches_finite_differences() {
        let u = |t: f64| 1.0 + 0.5 * t.sin();
        let v = |t: f64| 2.0 * (-t).exp();
        let (p, th) = (4, 1.3);
        let t0 = 0.4;
        let exact =
            lyapunov_dp_dt(u(t0), v(t0), 0.5 * t0.cos(), -2.0 * (-t0).exp(), p, th).unwrap();
        let mut errs = vec![];
        for h in [1e-2, 5e-3] {
            let fd = (lyapunov_p(u(t0 + h), v(t0 + h), p, th).unwrap()
                - lyapunov_p(u(t0 - h), v(t0 - h), p, th).unwrap())
                / (2.0 * h);
            errs.push((fd - exact).abs());
        }
        assert!(errs[1] < errs[0] / 3.5, "{errs:?}");
    }

    #[test]
    fn monitor_uses_certificate_or_estimate() {
        let ex1 = ReactionModel::builtin(
            Builtin::BrusselatorSurface { alpha: 1.0, beta: 1.0 },
            vec![4.0, 1.0],
        )
        .unwrap();
        let s = monitor_setup(&ex1, 2).unwrap();
        assert!(!s.heuristic);
        assert_eq!(s.thresholds, vec![1.25]);
        assert!((s.params.theta[0] - 1.3125).abs() < 1e-15);

        let plain = ReactionModel::from_expressions(
            "plain",
            &["0", "0"],
            &["-u1", "u1"],
            &Default::default(),
            vec![1.0, 1.0],
        )
        .unwrap();
        let s = monitor_setup(&plain, 2).unwrap();
        assert!(s.heuristic);
        assert_eq!(s.k, 1.0);
    }

    #[test]
    fn dual_trivial_cases() {
        let grid = Grid::unit(1, 11).unwrap();
        let st = GrowthLaw::stationary(1, 1.0);
        let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
        let mut cfg = DualConfig {
            xi: vec![0.0; grid.len()],
            l1: 0.0,
            l2: 0.0,
            d: 1.0,
            d_tilde: 1.0,
            horizon: 1.0,
        };
        let z = dual_solve(&cfg, &grid, &st, &times).unwrap();
        assert!(z.phi.iter().flatten().all(|v| *v == 0.0));
        cfg.xi = vec![1.0; grid.len()];
        let one = dual_solve(&cfg, &grid, &st, &times).unwrap();
        for (t, phi) in one.times.iter().zip(&one.phi) {
            for v in phi {
                assert!((v - (1.0 - t)).abs() < 1e-12);
            }
        }
        cfg.l2 = -1.0;
        assert!(dual_solve(&cfg, &grid, &st, &times).is_err());
    }

    #[test]
    fn zero_primal_passes_duality() {
        let grid = Grid::unit(1, 11).unwrap();
        let st = GrowthLaw::stationary(1, 1.0);
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let cfg = DualConfig {
            xi: grid.sample(|x| 1.0 + x[0]),
            l1: 0.5,
            l2: 0.5,
            d: 1.0,
            d_tilde: 1.0,
            horizon: 1.0,
        };
        let dual = dual_solve(&cfg, &grid, &st, &times).unwrap();
        let snaps: Vec<StateField> =
            times.iter().map(|&t| StateField::uniform(&grid, t, &[0.0])).collect();
        let r = duality_check(&grid, &st, &snaps, &[1.0], &[1.0], &dual, &cfg, 1e-2, 0.0).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.rhs >= 0.0 && r.passes);
        assert!((r.residual + r.rhs).abs() < 1e-15);
        assert!(duality_check(&grid, &st, &snaps[1..], &[1.0], &[1.0], &dual, &cfg, 1e-2, 0.0).is_err());
    }

    #[test]
    fn interpolation_inequality_with_fitted_constant() {
        let grid = Grid::unit(2, 17).unwrap();
        let eps = 0.5;
        let family: Vec<Vec<f64>> = (1..=8)
            .map(|k| {
                let k = k as f64;
                grid.sample(|x| 1.0 + 0.9 * (k * x[0]).cos() * (0.5 * k * x[1]).sin())
            })
            .collect();
        let terms: Vec<InterpolationTerms> = family
            .iter()
            .map(|v| interpolation_terms(&grid, v, eps).unwrap())
            .collect();
        let c = terms.iter().map(|t| t.needed).fold(0.0, f64::max);
        assert!(c.is_finite());
        for t in &terms {
            assert!(t.grad_sq >= 0.0);
            assert!(t.trace_sq <= (eps * t.grad_sq + c * t.l1 * t.l1) * (1.0 + 1e-12));
        }
        // a smaller ε needs at least as large a constant
        let c_small = family
            .iter()
            .map(|v| interpolation_terms(&grid, v, 0.1).unwrap().needed)
            .fold(0.0, f64::max);
        assert!(c_small >= c);
    }

    proptest! {
        #[test]
        fn unit_theta_is_binomial(u in 0.0f64..10.0, v in 0.0f64..10.0, p in 2u32..=6) {
            let got = lyapunov_p(u, v, p, 1.0).unwrap();
            let want = (u + v).powi(p as i32);
            prop_assert!((got - want).abs() <= 1e-12 * want.max(1e-300));
        }

        #[test]
        fn two_component_forms_agree_bitwise(u in 0.0f64..10.0, v in 0.0f64..10.0, p in 2u32..=8, th in 0.5f64..3.0) {
            prop_assert_eq!(
                lyapunov_p(u, v, p, th).unwrap().to_bits(),
                lyapunov_p_m(&[u, v], p, &[th]).unwrap().to_bits()
            );
        }

        #[test]
        fn unit_theta_is_multinomial(z in proptest::collection::vec(0.0f64..5.0, 3..5), p in 2u32..=5) {
            let th = vec![1.0; z.len() - 1];
            let got = lyapunov_p_m(&z, p, &th).unwrap();
            let want = z.iter().sum::<f64>().powi(p as i32);
            prop_assert!((got - want).abs() <= 1e-12 * want.max(1e-300));
        }
    }
}
