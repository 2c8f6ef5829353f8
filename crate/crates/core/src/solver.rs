//! Method-of-lines integration of the pulled-back system.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{lyapunov_field, DiagnosticsError, LyapunovParams};
use crate::grid::{Face, Grid, GridError, Side, StateField, PAR_THRESHOLD};
use crate::growth::{GrowthError, GrowthLaw};
use crate::models::{check_quasi_positivity, ModelError, ReactionModel, SampleBox, Verdict};
use crate::operator::{BoundaryFlux, FluxConvention, OperatorContext, OperatorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Growth(#[from] GrowthError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("non-finite value in component {component} at node {node} {coords:?}, t = {t}")]
    NonFinite {
        component: usize,
        node: usize,
        coords: Vec<f64>,
        t: f64,
    },
    #[error("linear solve stalled after {iterations} iterations (relative residual {residual:e})")]
    LinearSolve { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepper {
    /// Classical fourth-order Runge–Kutta on the whole right-hand side.
    #[default]
    ExplicitRk4,
    /// Crank–Nicolson diffusion and dilution (midpoint coefficients), explicit
    /// reaction, boundary flux lagged into the ghost values.
    ImexCn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStep {
    Auto,
    Fixed(f64),
}

/// Manufactured source terms added to the bulk and boundary fields.
pub trait Forcing: Sync {
    fn bulk(&self, x: &[f64], t: f64, scales: &[f64], dilution: f64, out: &mut [f64]);
    fn boundary(&self, x: &[f64], face: &Face, t: f64, scales: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub law: GrowthLaw,
    pub model: ReactionModel,
    pub grid: Grid,
    pub t_end: f64,
    pub stepper: Stepper,
    pub dt: TimeStep,
    pub safety: f64,
    pub overshoot_tol: f64,
    /// Sup-norm cap; `None` means `1e6 (1 + initial sup)`.
    pub blowup_threshold: Option<f64>,
    /// Keep a snapshot every this many steps (0: initial and final only).
    pub snapshot_every: usize,
    /// Record diagnostics every this many steps (0: initial and final only).
    pub diagnostics_every: usize,
    pub convention: FluxConvention,
    /// Mass weights; defaults to the certificate's `b`, else all ones.
    pub weights: Option<Vec<f64>>,
    pub lyapunov: Option<LyapunovParams>,
    pub max_steps: usize,
}

impl RunConfig {
    pub fn new(law: GrowthLaw, model: ReactionModel, grid: Grid, t_end: f64) -> Self {
        Self {
            law,
            model,
            grid,
            t_end,
            stepper: Stepper::ExplicitRk4,
            dt: TimeStep::Auto,
            safety: 0.9,
            overshoot_tol: 1e-8,
            blowup_threshold: None,
            snapshot_every: 0,
            diagnostics_every: 1,
            convention: FluxConvention::DScaled,
            weights: None,
            lyapunov: None,
            max_steps: 10_000_000,
        }
    }

    /// Weights used for the evolving mass.
    pub fn mass_weights(&self) -> Vec<f64> {
        self.weights
            .clone()
            .or_else(|| self.model.certificate().and_then(|c| c.b.clone()))
            .unwrap_or_else(|| vec![1.0; self.model.components()])
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let mut errs = Vec::new();
        if self.law.dim() != self.grid.dim() {
            errs.push(format!(
                "growth dimension {} differs from grid dimension {}",
                self.law.dim(),
                self.grid.dim()
            ));
        }
        if !(self.t_end > 0.0) {
            errs.push(format!("t_end = {} must be positive", self.t_end));
        }
        if self.t_end > self.law.horizon() {
            errs.push(format!(
                "t_end = {} exceeds the growth horizon {}",
                self.t_end,
                self.law.horizon()
            ));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            errs.push(format!("safety = {} must lie in (0, 1]", self.safety));
        }
        if !(self.overshoot_tol >= 0.0) {
            errs.push(format!("overshoot_tol = {} must be >= 0", self.overshoot_tol));
        }
        if let TimeStep::Fixed(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                errs.push(format!("dt = {dt} must be positive"));
            }
        }
        if let Some(b) = &self.weights {
            if b.len() != self.model.components() || b.iter().any(|w| !(*w > 0.0)) {
                errs.push(format!("weights {b:?} must be positive, one per component"));
            }
        }
        if let Some(p) = &self.lyapunov {
            if let Err(e) = p.validate(self.model.components()) {
                errs.push(e.to_string());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SolverError::Config(errs.join("; ")))
        }
    }
}

/// Boundary flux `g(u)` plus an optional manufactured contribution.
struct SystemFlux<'a> {
    model: &'a ReactionModel,
    forcing: Option<&'a dyn Forcing>,
    scales: &'a [f64],
}

impl BoundaryFlux for SystemFlux<'_> {
    fn flux(&self, x: &[f64], face: &Face, t: f64, z: &[f64], out: &mut [f64]) {
        self.model.g_into(z, out);
        if let Some(fc) = self.forcing {
            let mut extra = vec![0.0; out.len()];
            fc.boundary(x, face, t, self.scales, &mut extra);
            out.iter_mut().zip(&extra).for_each(|(o, e)| *o += e);
        }
    }
}

/// Everything needed to evaluate the semi-discrete right-hand side.
#[derive(Clone, Copy)]
pub struct System<'a> {
    pub grid: &'a Grid,
    pub law: &'a GrowthLaw,
    pub model: &'a ReactionModel,
    pub convention: FluxConvention,
    pub forcing: Option<&'a dyn Forcing>,
}

impl<'a> System<'a> {
    pub fn new(grid: &'a Grid, law: &'a GrowthLaw, model: &'a ReactionModel) -> Self {
        Self {
            grid,
            law,
            model,
            convention: FluxConvention::DScaled,
            forcing: None,
        }
    }

    pub fn context(&self, t: f64) -> Result<OperatorContext<'a>, SolverError> {
        Ok(OperatorContext::new(
            self.grid,
            self.law,
            self.model.diffusivities(),
            t,
            self.convention,
        )?)
    }

    fn ghosts(
        &self,
        ctx: &OperatorContext,
        state: &StateField,
    ) -> Result<crate::operator::Ghosts, SolverError> {
        let flux = SystemFlux {
            model: self.model,
            forcing: self.forcing,
            scales: ctx.scales(),
        };
        Ok(ctx.boundary_close(state, &flux)?)
    }

    /// Adds `f(u) + F` at every node.
    fn add_sources(
        &self,
        ctx: &OperatorContext,
        state: &StateField,
        out: &mut [Vec<f64>],
    ) {
        if self.model.bulk_is_zero() && self.forcing.is_none() {
            return;
        }
        let m = state.components.len();
        let n = self.grid.dim();
        let len = self.grid.len();
        let mut flat = vec![0.0; len * m];
        let work = |(z, x, tmp): &mut (Vec<f64>, Vec<f64>, Vec<f64>), (lin, chunk): (usize, &mut [f64])| {
            state.node_values(lin, z);
            self.model.f_into(z, chunk);
            if let Some(fc) = self.forcing {
                self.grid.coords_into(lin, x);
                fc.bulk(x, ctx.time(), ctx.scales(), ctx.dilution(), tmp);
                chunk.iter_mut().zip(tmp.iter()).for_each(|(c, e)| *c += e);
            }
        };
        let init = || (vec![0.0; m], vec![0.0; n], vec![0.0; m]);
        if len >= PAR_THRESHOLD {
            flat.par_chunks_mut(m)
                .enumerate()
                .for_each_init(init, work);
        } else {
            let mut scratch = init();
            for item in flat.chunks_mut(m).enumerate() {
                work(&mut scratch, item);
            }
        }
        for (c, o) in out.iter_mut().enumerate() {
            for (lin, v) in o.iter_mut().enumerate() {
                *v += flat[lin * m + c];
            }
        }
    }

    /// `L u_i + f_i(u)` for every component.
    pub fn rhs(&self, state: &StateField) -> Result<Vec<Vec<f64>>, SolverError> {
        let ctx = self.context(state.t)?;
        let ghosts = self.ghosts(&ctx, state)?;
        let mut out = Vec::with_capacity(state.components.len());
        for (c, u) in state.components.iter().enumerate() {
            let mut o = vec![0.0; u.len()];
            ctx.apply_l_into(u, &ghosts, c, &mut o)?;
            out.push(o);
        }
        self.add_sources(&ctx, state, &mut out);
        Ok(out)
    }

    /// Rate of change of `Σ b_i ∫ u_i J` implied by the reaction fields alone.
    fn mass_source(&self, state: &StateField, b: &[f64]) -> Result<f64, SolverError> {
        let t = state.t;
        let j = self.law.volume_factor(t)?;
        let scales = self.law.scales(t)?;
        let m = state.components.len();
        let d = self.model.diffusivities();
        let mut z = vec![0.0; m];
        let mut g = vec![0.0; m];
        let mut total = 0.0;
        if !self.model.bulk_is_zero() {
            let w = self.grid.bulk_weights();
            for lin in 0..self.grid.len() {
                state.node_values(lin, &mut z);
                self.model.f_into(&z, &mut g);
                total += w[lin] * b.iter().zip(&g).map(|(bi, gi)| bi * gi).sum::<f64>();
            }
        }
        for face in self.grid.faces() {
            let mut acc = 0.0;
            for (&lin, w) in face.nodes.iter().zip(&face.weights) {
                state.node_values(lin, &mut z);
                self.model.g_into(&z, &mut g);
                let s: f64 = (0..m)
                    .map(|i| {
                        let scale = match self.convention {
                            FluxConvention::DScaled => 1.0,
                            FluxConvention::Plain => d[i],
                        };
                        b[i] * scale * g[i]
                    })
                    .sum();
                acc += w * s;
            }
            total += acc / scales[face.axis];
        }
        Ok(j * total)
    }
}

fn first_non_finite(grid: &Grid, state: &StateField) -> Result<(), SolverError> {
    if let Some((component, node)) = state.first_non_finite() {
        return Err(SolverError::NonFinite {
            component,
            node,
            coords: grid.coords(node),
            t: state.t,
        });
    }
    Ok(())
}

fn axpy(base: &[Vec<f64>], k: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    base.iter()
        .zip(k)
        .map(|(u, r)| u.iter().zip(r).map(|(a, b)| a + h * b).collect())
        .collect()
}

/// Advances `state` by `dt`.
pub fn step(
    system: &System,
    state: &StateField,
    dt: f64,
    stepper: Stepper,
) -> Result<StateField, SolverError> {
    if dt == 0.0 {
        return Ok(state.clone());
    }
    if !(dt > 0.0) {
        return Err(SolverError::Config(format!("dt = {dt} must be >= 0")));
    }
    let next = match stepper {
        Stepper::ExplicitRk4 => step_rk4(system, state, dt)?,
        Stepper::ImexCn => step_imex(system, state, dt)?,
    };
    first_non_finite(system.grid, &next)?;
    Ok(next)
}

fn step_rk4(system: &System, state: &StateField, dt: f64) -> Result<StateField, SolverError> {
    let t = state.t;
    let u = &state.components;
    let k1 = system.rhs(state)?;
    let s2 = StateField::new(t + 0.5 * dt, axpy(u, &k1, 0.5 * dt));
    let k2 = system.rhs(&s2)?;
    let s3 = StateField::new(t + 0.5 * dt, axpy(u, &k2, 0.5 * dt));
    let k3 = system.rhs(&s3)?;
    let s4 = StateField::new(t + dt, axpy(u, &k3, dt));
    let k4 = system.rhs(&s4)?;
    let h6 = dt / 6.0;
    let comps = (0..u.len())
        .map(|c| {
            (0..u[c].len())
                .map(|i| u[c][i] + h6 * (k1[c][i] + 2.0 * k2[c][i] + 2.0 * k3[c][i] + k4[c][i]))
                .collect()
        })
        .collect();
    Ok(StateField::new(t + dt, comps))
}

fn step_imex(system: &System, state: &StateField, dt: f64) -> Result<StateField, SolverError> {
    let tm = state.t + 0.5 * dt;
    let ctx = system.context(tm)?;
    let ghosts = system.ghosts(&ctx, state)?;
    let mut src: Vec<Vec<f64>> = vec![vec![0.0; system.grid.len()]; state.components.len()];
    system.add_sources(&ctx, state, &mut src);
    let mut comps = Vec::with_capacity(state.components.len());
    let len = system.grid.len();
    let mut ln = vec![0.0; len];
    let mut lf = vec![0.0; len];
    for (c, u) in state.components.iter().enumerate() {
        ctx.apply_neumann_into(u, c, &mut ln);
        ctx.apply_l_into(u, &ghosts, c, &mut lf)?;
        let rhs: Vec<f64> = (0..len)
            .map(|i| u[i] + 0.5 * dt * ln[i] + dt * (lf[i] - ln[i]) + dt * src[c][i])
            .collect();
        comps.push(solve_cn(&ctx, c, dt, &rhs, u)?);
    }
    Ok(StateField::new(state.t + dt, comps))
}

/// Solves `(I − dt/2 L_N) x = rhs` by conjugate gradients on the
/// trapezoid-weighted (symmetric) form, Jacobi preconditioned.
fn solve_cn(
    ctx: &OperatorContext,
    c: usize,
    dt: f64,
    rhs: &[f64],
    guess: &[f64],
) -> Result<Vec<f64>, SolverError> {
    let grid = ctx.grid();
    let w = grid.bulk_weights();
    let len = rhs.len();
    let d = ctx.diffusivities()[c];
    let center: f64 = (0..grid.dim())
        .map(|k| 2.0 * d * ctx.inv_lambda_sq()[k] / (grid.spacing()[k] * grid.spacing()[k]))
        .sum::<f64>()
        + ctx.dilution();
    let diag_scale = 1.0 + 0.5 * dt * center;
    if !(diag_scale > 0.0) {
        return Err(SolverError::Config(format!(
            "implicit system is not positive definite (diagonal factor {diag_scale}); reduce dt"
        )));
    }
    let mut tmp = vec![0.0; len];
    let mut apply = |x: &[f64], out: &mut [f64]| {
        ctx.apply_neumann_into(x, c, &mut tmp);
        for i in 0..len {
            out[i] = w[i] * (x[i] - 0.5 * dt * tmp[i]);
        }
    };
    let b: Vec<f64> = (0..len).map(|i| w[i] * rhs[i]).collect();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = guess.to_vec();
    if bnorm == 0.0 {
        return Ok(vec![0.0; len]);
    }
    let mut ax = vec![0.0; len];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = (0..len).map(|i| b[i] - ax[i]).collect();
    let mut z: Vec<f64> = (0..len).map(|i| r[i] / (w[i] * diag_scale)).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let max_iter = 10 * len + 100;
    let tol = 1e-13 * bnorm;
    let mut ap = vec![0.0; len];
    for it in 0..max_iter {
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= tol {
            return Ok(x);
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(SolverError::LinearSolve {
                iterations: it,
                residual: rnorm / bnorm,
            });
        }
        let alpha = rz / pap;
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] / (w[i] * diag_scale);
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..len {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(SolverError::LinearSolve {
        iterations: max_iter,
        residual: rnorm / bnorm,
    })
}

/// Largest explicit step `safety / (2 max d Σ_k Λ2/h_k² + max(k2, 0))` over `[t0, t1]`.
pub fn stable_dt(
    law: &GrowthLaw,
    grid: &Grid,
    d: &[f64],
    t0: f64,
    t1: f64,
    safety: f64,
) -> Result<f64, SolverError> {
    let bounds = law.verify_bounds_on(t0, t1, 256)?;
    let dmax = d.iter().cloned().fold(0.0, f64::max);
    let sum: f64 = grid.spacing().iter().map(|h| bounds.lambda2 / (h * h)).sum();
    Ok(safety / (2.0 * dmax * sum + bounds.k2.max(0.0)))
}

/// Values recorded between steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// `∫_Ω |u_i| dx` on the reference domain.
    pub l1_bulk: Vec<f64>,
    /// `∫_Γ |u_i| dσ` on the reference boundary.
    pub l1_boundary: Vec<f64>,
    pub sup: f64,
    pub min: f64,
    pub evolving_mass: f64,
    pub lyapunov_p: Option<f64>,
    /// `M(t) − M(0) − ∫_0^t (reaction contribution)`.
    pub conservation_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    BlowupDetected { t_last_valid: f64, sup: f64 },
    PositivityFailure { t: f64, min: f64 },
    Error { t: f64, message: String },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::BlowupDetected { .. } => "blowup-detected",
            Termination::PositivityFailure { .. } => "positivity-failure",
            Termination::Error { .. } => "error",
        }
    }

    /// Process exit status: 0 completed, 2 blow-up, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Termination::Completed => 0,
            Termination::BlowupDetected { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<StateField>,
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub termination: Termination,
    pub dt: f64,
    pub steps: usize,
    pub weights: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateField {
        self.snapshots.last().expect("trajectory always holds the initial snapshot")
    }

    /// Smallest value seen across all diagnostics records.
    pub fn min_over_run(&self) -> f64 {
        self.diagnostics.iter().map(|r| r.min).fold(f64::INFINITY, f64::min)
    }

    pub fn max_over_run(&self) -> f64 {
        self.diagnostics.iter().map(|r| r.sup).fold(0.0, f64::max)
    }
}

struct Recorder<'a> {
    system: System<'a>,
    weights: Vec<f64>,
    lyapunov: Option<&'a LyapunovParams>,
    mass0: f64,
    source_integral: f64,
    last_source: f64,
}

impl Recorder<'_> {
    fn record(&self, state: &StateField) -> Result<DiagnosticsRecord, SolverError> {
        let grid = self.system.grid;
        let mut l1_bulk = Vec::new();
        let mut l1_boundary = Vec::new();
        for u in &state.components {
            let abs: Vec<f64> = u.iter().map(|v| v.abs()).collect();
            l1_bulk.push(grid.integrate_bulk(&abs)?);
            l1_boundary.push(grid.integrate_boundary(&abs)?);
        }
        let mass = crate::operator::evolving_mass(grid, state, self.system.law, state.t, &self.weights)?;
        let lyapunov_p = match self.lyapunov {
            Some(p) => Some(lyapunov_field(grid, state, p)?),
            None => None,
        };
        Ok(DiagnosticsRecord {
            t: state.t,
            l1_bulk,
            l1_boundary,
            sup: state.sup_norm(),
            min: state.min_value(),
            evolving_mass: mass,
            lyapunov_p,
            conservation_residual: mass - self.mass0 - self.source_integral,
        })
    }

    fn advance_source(&mut self, state: &StateField, dt: f64) -> Result<(), SolverError> {
        let s = self.system.mass_source(state, &self.weights)?;
        self.source_integral += 0.5 * dt * (self.last_source + s);
        self.last_source = s;
        Ok(())
    }
}

/// Compatibility of the initial data with the flux condition, as the largest
/// mismatch `|d ∇u0·η − g(u0)|` over boundary nodes (one-sided differences).
pub fn initial_compatibility(
    system: &System,
    initial: &StateField,
) -> Result<f64, SolverError> {
    let grid = system.grid;
    let ctx = system.context(initial.t)?;
    let strides = grid.strides();
    let m = initial.components.len();
    let mut z = vec![0.0; m];
    let mut g = vec![0.0; m];
    let mut worst = 0.0f64;
    for face in grid.faces() {
        let s = strides[face.axis] as isize
            * match face.side {
                Side::Low => 1,
                Side::High => -1,
            };
        let h = grid.spacing()[face.axis];
        for &lin in &face.nodes {
            initial.node_values(lin, &mut z);
            system.model.g_into(&z, &mut g);
            for c in 0..m {
                let u = &initial.components[c];
                let i1 = (lin as isize + s) as usize;
                let i2 = (lin as isize + 2 * s) as usize;
                // derivative along the outward normal
                let dn = (3.0 * u[lin] - 4.0 * u[i1] + u[i2]) / (2.0 * h)
                    / ctx.scales()[face.axis];
                let lhs = match system.convention {
                    FluxConvention::DScaled => ctx.diffusivities()[c] * dn,
                    FluxConvention::Plain => dn,
                };
                worst = worst.max((lhs - g[c]).abs());
            }
        }
    }
    Ok(worst)
}

/// Integrates `config` from `initial` to `t_end`.
pub fn run(config: &RunConfig, initial: StateField) -> Result<Trajectory, SolverError> {
    run_forced(config, initial, None)
}

/// [`run`] with optional manufactured source terms.
pub fn run_forced(
    config: &RunConfig,
    initial: StateField,
    forcing: Option<&dyn Forcing>,
) -> Result<Trajectory, SolverError> {
    config.validate()?;
    initial.check(&config.grid)?;
    let m = config.model.components();
    if initial.components.len() != m {
        return Err(SolverError::Config(format!(
            "initial data has {} components, model has {m}",
            initial.components.len()
        )));
    }
    if initial.t != 0.0 {
        return Err(SolverError::Config(format!(
            "initial data must be at t = 0, got {}",
            initial.t
        )));
    }
    first_non_finite(&config.grid, &initial)?;
    let sup0 = initial.sup_norm();
    let threshold = config.blowup_threshold.unwrap_or(1e6 * (1.0 + sup0));
    if !(threshold > sup0) {
        return Err(SolverError::Config(format!(
            "blowup_threshold = {threshold} must exceed the initial sup norm {sup0}"
        )));
    }

    let system = System {
        grid: &config.grid,
        law: &config.law,
        model: &config.model,
        convention: config.convention,
        forcing,
    };

    let mut warnings = Vec::new();
    let qp = check_quasi_positivity(&config.model, SampleBox::default())?;
    // nonnegativity is only predicted for nonnegative data and a quasi-positive model
    let monitor_positivity = qp.verdict != Verdict::Fail
        && initial.min_value() >= -config.overshoot_tol * (1.0 + sup0);
    if qp.verdict == Verdict::Fail {
        warnings.push(format!(
            "model fails the quasi-positivity check (witness {:?}); nonnegativity is not guaranteed",
            qp.witness
        ));
    }
    if forcing.is_none() {
        let mismatch = initial_compatibility(&system, &initial)?;
        if mismatch > 1e-2 * (1.0 + sup0) {
            warnings.push(format!(
                "initial data is not compatible with the flux condition (max mismatch {mismatch:.3e}); expect an initial layer"
            ));
        }
    }

    let dt_target = match config.dt {
        TimeStep::Fixed(dt) => dt,
        TimeStep::Auto => {
            let explicit = stable_dt(
                &config.law,
                &config.grid,
                config.model.diffusivities(),
                0.0,
                config.t_end,
                config.safety,
            )?;
            match config.stepper {
                Stepper::ExplicitRk4 => explicit,
                Stepper::ImexCn => 10.0 * explicit,
            }
        }
    };
    let steps = (config.t_end / dt_target).ceil().max(1.0) as usize;
    if steps > config.max_steps {
        return Err(SolverError::Config(format!(
            "{steps} steps needed at dt = {dt_target:e}, above max_steps = {}",
            config.max_steps
        )));
    }
    let dt = config.t_end / steps as f64;

    let weights = config.mass_weights();
    let mut recorder = Recorder {
        system,
        weights: weights.clone(),
        lyapunov: config.lyapunov.as_ref(),
        mass0: 0.0,
        source_integral: 0.0,
        last_source: 0.0,
    };
    recorder.mass0 =
        crate::operator::evolving_mass(&config.grid, &initial, &config.law, 0.0, &weights)?;
    recorder.last_source = system.mass_source(&initial, &weights)?;

    let mut snapshots = vec![initial.clone()];
    let mut diagnostics = vec![recorder.record(&initial)?];
    let mut state = initial;
    let mut termination = Termination::Completed;
    let mut taken = 0;

    for i in 1..=steps {
        let t_next = if i == steps {
            config.t_end
        } else {
            config.t_end * i as f64 / steps as f64
        };
        let h = t_next - state.t;
        let next = match step(&system, &state, h, config.stepper) {
            Ok(mut s) => {
                s.t = t_next;
                s
            }
            Err(SolverError::NonFinite { .. }) => {
                diagnostics.push(DiagnosticsRecord {
                    sup: f64::INFINITY,
                    t: t_next,
                    ..diagnostics.last().cloned().expect("initial record exists")
                });
                termination = Termination::BlowupDetected {
                    t_last_valid: state.t,
                    sup: f64::INFINITY,
                };
                break;
            }
            Err(e) => {
                termination = Termination::Error {
                    t: state.t,
                    message: e.to_string(),
                };
                break;
            }
        };
        taken = i;
        recorder.advance_source(&next, h)?;
        let sup = next.sup_norm();
        let min = next.min_value();
        let blowup = sup >= threshold;
        let negative = monitor_positivity && min < -config.overshoot_tol * (1.0 + sup);
        let last = i == steps || blowup || negative;
        if last || (config.diagnostics_every > 0 && i % config.diagnostics_every == 0) {
            diagnostics.push(recorder.record(&next)?);
        }
        if last || (config.snapshot_every > 0 && i % config.snapshot_every == 0) {
            snapshots.push(next.clone());
        }
        if blowup {
            termination = Termination::BlowupDetected {
                t_last_valid: state.t,
                sup,
            };
            break;
        }
        if negative {
            termination = Termination::PositivityFailure { t: next.t, min };
            break;
        }
        state = next;
    }

    Ok(Trajectory {
        snapshots,
        diagnostics,
        termination,
        dt,
        steps: taken,
        weights,
        warnings,
    })
}

/// Outcome classification of a refinement study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConvergenceStatus {
    Observed { order: f64 },
    /// Errors at rounding level on every grid.
    Exact,
    /// Some observed order fell below 1.5.
    Degraded { order: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLevel {
    pub nodes_per_axis: usize,
    pub h: f64,
    pub dt: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub case: String,
    pub levels: Vec<ConvergenceLevel>,
    /// `log2(e_k / e_{k+1})` for consecutive levels.
    pub orders: Vec<f64>,
    pub status: ConvergenceStatus,
}

#[derive(Clone, Copy)]
enum Profile {
    /// `1 + x1 + 2 x2`
    Linear,
    /// `e^{-t/2} (2 + S(x))`, `S = sin(x1 + 0.3) cos(2 x2)`
    Decaying,
    /// `2 + S(x) cos(10 t)`
    Oscillating,
}

struct Manufactured {
    d: f64,
    profile: Profile,
}

impl Manufactured {
    fn shape(x: &[f64]) -> f64 {
        (x[0] + 0.3).sin() * (2.0 * x[1]).cos()
    }

    fn exact(&self, x: &[f64], t: f64) -> f64 {
        match self.profile {
            Profile::Linear => 1.0 + x[0] + 2.0 * x[1],
            Profile::Decaying => (-0.5 * t).exp() * (2.0 + Self::shape(x)),
            Profile::Oscillating => 2.0 + Self::shape(x) * (10.0 * t).cos(),
        }
    }

    /// (∂_t u, [∂_k u], [∂²_k u])
    fn derivatives(&self, x: &[f64], t: f64) -> (f64, [f64; 2], [f64; 2]) {
        let (e, ut) = match self.profile {
            Profile::Linear => return (0.0, [1.0, 2.0], [0.0, 0.0]),
            Profile::Decaying => ((-0.5 * t).exp(), -0.5 * self.exact(x, t)),
            Profile::Oscillating => (
                (10.0 * t).cos(),
                -10.0 * (10.0 * t).sin() * Self::shape(x),
            ),
        };
        let (s0, c0) = (x[0] + 0.3).sin_cos();
        let (s1, c1) = (2.0 * x[1]).sin_cos();
        (
            ut,
            [e * c0 * c1, -2.0 * e * s0 * s1],
            [-e * s0 * c1, -4.0 * e * s0 * c1],
        )
    }
}

impl Forcing for Manufactured {
    fn bulk(&self, x: &[f64], t: f64, scales: &[f64], dilution: f64, out: &mut [f64]) {
        let (ut, _, d2) = self.derivatives(x, t);
        let lap: f64 = (0..2).map(|k| d2[k] / (scales[k] * scales[k])).sum();
        out[0] = ut - self.d * lap + dilution * self.exact(x, t);
    }

    fn boundary(&self, x: &[f64], face: &Face, t: f64, scales: &[f64], out: &mut [f64]) {
        let (_, d1, _) = self.derivatives(x, t);
        out[0] = self.d * face.side.sign() * d1[face.axis] / scales[face.axis];
    }
}

/// Refinement study on the unit square with `λ = (1 + t/2, e^{t/5})`.
///
/// Cases: `smooth` (explicit RK4, `dt ∝ h²`), `linear` (exactly representable
/// solution), `large-dt` (IMEX with a fixed step that dominates the error on
/// a time-oscillating solution).
pub fn manufactured_convergence(case: &str) -> Result<ConvergenceReport, SolverError> {
    let (profile, stepper, fixed_dt, t_end) = match case {
        "smooth" => (Profile::Decaying, Stepper::ExplicitRk4, None, 0.1),
        "linear" => (Profile::Linear, Stepper::ExplicitRk4, None, 0.1),
        "large-dt" => (Profile::Oscillating, Stepper::ImexCn, Some(0.05), 0.2),
        other => {
            return Err(SolverError::Config(format!(
                "unknown convergence case {other:?} (smooth, linear, large-dt)"
            )))
        }
    };
    let d = 1.0;
    let law = GrowthLaw::per_axis(&["1 + 0.5*t", "exp(0.2*t)"], 0.2)?;
    let forcing = Manufactured { d, profile };
    let mut levels = Vec::new();
    for n in [17usize, 33, 65] {
        let grid = Grid::unit(2, n)?;
        let model = ReactionModel::zero(vec![d]);
        let mut cfg = RunConfig::new(law.clone(), model, grid.clone(), t_end);
        cfg.stepper = stepper;
        cfg.dt = fixed_dt.map_or(TimeStep::Auto, TimeStep::Fixed);
        cfg.diagnostics_every = 0;
        let initial = StateField::new(0.0, vec![grid.sample(|x| forcing.exact(x, 0.0))]);
        let traj = run_forced(&cfg, initial, Some(&forcing))?;
        if traj.termination != Termination::Completed {
            return Err(SolverError::Config(format!(
                "refinement run on {n} nodes ended with {}",
                traj.termination.label()
            )));
        }
        let u = &traj.final_state().components[0];
        let exact = grid.sample(|x| forcing.exact(x, t_end));
        let diff: Vec<f64> = u.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).collect();
        let sq: Vec<f64> = exact.iter().map(|v| v * v).collect();
        let error = (grid.integrate_bulk(&diff)? / grid.integrate_bulk(&sq)?).sqrt();
        levels.push(ConvergenceLevel {
            nodes_per_axis: n,
            h: grid.spacing()[0],
            dt: traj.dt,
            error,
        });
    }
    let orders: Vec<f64> = levels
        .windows(2)
        .map(|w| (w[0].error / w[1].error).log2())
        .collect();
    let status = if levels.iter().all(|l| l.error < 1e-11) {
        ConvergenceStatus::Exact
    } else {
        let order = *orders.last().expect("three levels give two orders");
        if orders.iter().any(|o| !(*o >= 1.5)) {
            ConvergenceStatus::Degraded { order }
        } else {
            ConvergenceStatus::Observed { order }
        }
    };
    Ok(ConvergenceReport {
        case: case.to_string(),
        levels,
        orders,
        status,
    })
}
