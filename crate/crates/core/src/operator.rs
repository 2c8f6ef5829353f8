//! The pulled-back spatial operator on the reference box.
//!
//! On `Ω` the moving-domain problem becomes
//!
//! ```text
//! ∂u_i/∂t = d_i Δ_t u_i − a(t) u_i + f_i(u),     Δ_t = Σ_k λ_k(t)^-2 ∂²/∂x_k²
//! d_i ∇_t u_i · η = g_i(u)  on Γ,                ∇_t = A(t)^-1 ∇
//! ```
//!
//! The flux condition is imposed with one ghost value per face node, mirrored
//! through the face so that the centered difference of the normal derivative
//! equals the prescribed flux. Edge and corner nodes take one ghost per face
//! they belong to; each axis' second difference reads the ghost of the face
//! normal to that axis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Face, Grid, GridError, Side, StateField, PAR_THRESHOLD};
use crate::growth::{GrowthError, GrowthLaw};
use crate::models::ReactionModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error(transparent)]
    Growth(#[from] GrowthError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("operator contract violated: {0}")]
    Contract(String),
    #[error("point {point:?} lies outside the domain at t = {t}")]
    OutsideDomain { point: Vec<f64>, t: f64 },
}

/// How the boundary flux is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluxConvention {
    /// `d_i ∇_t u_i · η = g_i`
    #[default]
    DScaled,
    /// `∇_t u_i · η = g_i`
    Plain,
}

/// How the surface measure of the moving boundary is pulled back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceScaling {
    /// One factor `sqrt(det A(t))` for the whole boundary.
    PaperLiteral,
    /// Face normal to `e_k` scales by `Π_{j≠k} λ_j(t)`.
    FaceExact,
}

/// Source of boundary flux values at a face node.
pub trait BoundaryFlux: Sync {
    /// Writes the `m` flux values at position `x` on `face` for state `z`.
    fn flux(&self, x: &[f64], face: &Face, t: f64, z: &[f64], out: &mut [f64]);
}

impl BoundaryFlux for ReactionModel {
    fn flux(&self, _x: &[f64], _face: &Face, _t: f64, z: &[f64], out: &mut [f64]) {
        self.g_into(z, out);
    }
}

/// Adapter turning a closure into a [`BoundaryFlux`].
pub struct FluxFn<F>(pub F);

impl<F> BoundaryFlux for FluxFn<F>
where
    F: Fn(&[f64], &Face, f64, &[f64], &mut [f64]) + Sync,
{
    fn flux(&self, x: &[f64], face: &Face, t: f64, z: &[f64], out: &mut [f64]) {
        (self.0)(x, face, t, z, out)
    }
}

/// Coefficients of the pulled-back operator frozen at one time.
#[derive(Debug, Clone)]
pub struct OperatorContext<'a> {
    grid: &'a Grid,
    d: Vec<f64>,
    t: f64,
    lambda: Vec<f64>,
    inv_lambda_sq: Vec<f64>,
    a: f64,
    convention: FluxConvention,
}

/// Closed ghost values for every component, face and face node.
#[derive(Debug, Clone, PartialEq)]
pub struct Ghosts {
    t: f64,
    /// `values[component][face][local node]`
    values: Vec<Vec<Vec<f64>>>,
}

impl Ghosts {
    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn face_values(&self, component: usize, face: usize) -> &[f64] {
        &self.values[component][face]
    }
}

impl<'a> OperatorContext<'a> {
    pub fn new(
        grid: &'a Grid,
        law: &GrowthLaw,
        d: &[f64],
        t: f64,
        convention: FluxConvention,
    ) -> Result<Self, OperatorError> {
        if law.dim() != grid.dim() {
            return Err(OperatorError::Contract(format!(
                "growth law dimension {} does not match grid dimension {}",
                law.dim(),
                grid.dim()
            )));
        }
        if d.iter().any(|v| !(*v > 0.0)) {
            return Err(OperatorError::Contract(format!(
                "diffusivities {d:?} must be positive"
            )));
        }
        let lambda = law.scales(t)?;
        let inv_lambda_sq = lambda.iter().map(|l| 1.0 / (l * l)).collect();
        Ok(Self {
            grid,
            d: d.to_vec(),
            t,
            lambda,
            inv_lambda_sq,
            a: law.dilution_rate(t)?,
            convention,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.grid
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn scales(&self) -> &[f64] {
        &self.lambda
    }

    pub fn inv_lambda_sq(&self) -> &[f64] {
        &self.inv_lambda_sq
    }

    pub fn dilution(&self) -> f64 {
        self.a
    }

    pub fn diffusivities(&self) -> &[f64] {
        &self.d
    }

    pub fn convention(&self) -> FluxConvention {
        self.convention
    }

    /// Ghost increment `2 h_k λ_k g / d` (or without `d` for the plain convention).
    fn ghost_increment(&self, axis: usize, component: usize, g: f64) -> f64 {
        let base = 2.0 * self.grid.spacing()[axis] * self.lambda[axis] * g;
        match self.convention {
            FluxConvention::DScaled => base / self.d[component],
            FluxConvention::Plain => base,
        }
    }

    /// Ghost values that close the flux condition for every component.
    pub fn boundary_close<F: BoundaryFlux + ?Sized>(
        &self,
        state: &StateField,
        flux: &F,
    ) -> Result<Ghosts, OperatorError> {
        let m = state.components.len();
        if m != self.d.len() {
            return Err(OperatorError::Contract(format!(
                "{m} components for {} diffusivities",
                self.d.len()
            )));
        }
        state.check(self.grid)?;
        let n = self.grid.dim();
        let strides = self.grid.strides();
        let mut values = vec![Vec::with_capacity(self.grid.faces().len()); m];
        let mut z = vec![0.0; m];
        let mut g = vec![0.0; m];
        let mut x = vec![0.0; n];
        for face in self.grid.faces() {
            let step = strides[face.axis];
            let mut per_comp = vec![Vec::with_capacity(face.nodes.len()); m];
            for &lin in &face.nodes {
                let inward = match face.side {
                    Side::Low => lin + step,
                    Side::High => lin - step,
                };
                state.node_values(lin, &mut z);
                self.grid.coords_into(lin, &mut x);
                flux.flux(&x, face, self.t, &z, &mut g);
                for c in 0..m {
                    per_comp[c].push(
                        state.components[c][inward] + self.ghost_increment(face.axis, c, g[c]),
                    );
                }
            }
            for (c, v) in per_comp.into_iter().enumerate() {
                values[c].push(v);
            }
        }
        Ok(Ghosts { t: self.t, values })
    }

    fn check_ghosts(&self, ghosts: &Ghosts, component: usize) -> Result<(), OperatorError> {
        if ghosts.t != self.t {
            return Err(OperatorError::Contract(format!(
                "ghosts closed at t = {} used at t = {}",
                ghosts.t, self.t
            )));
        }
        let faces = self.grid.faces();
        let ok = ghosts
            .values
            .get(component)
            .is_some_and(|per_face| {
                per_face.len() == faces.len()
                    && per_face
                        .iter()
                        .zip(faces)
                        .all(|(v, f)| v.len() == f.nodes.len())
            });
        if !ok {
            return Err(OperatorError::Contract(format!(
                "ghosts for component {component} are missing or mis-shaped"
            )));
        }
        Ok(())
    }

    /// `d_c Δ_t u − a(t) u` at every node, with closed ghosts.
    pub fn apply_l(
        &self,
        u: &[f64],
        ghosts: &Ghosts,
        component: usize,
    ) -> Result<Vec<f64>, OperatorError> {
        let mut out = vec![0.0; u.len()];
        self.apply_l_into(u, ghosts, component, &mut out)?;
        Ok(out)
    }

    pub fn apply_l_into(
        &self,
        u: &[f64],
        ghosts: &Ghosts,
        component: usize,
        out: &mut [f64],
    ) -> Result<(), OperatorError> {
        self.check_ghosts(ghosts, component)?;
        self.grid.check_shape(u)?;
        self.apply_raw(u, self.d[component], Some(&ghosts.values[component]), self.a, out);
        Ok(())
    }

    /// `d Δ_t u` alone (no dilution), closed with `ghosts[component]`.
    pub fn apply_diffusion_into(
        &self,
        u: &[f64],
        d: f64,
        ghosts: &Ghosts,
        component: usize,
        out: &mut [f64],
    ) -> Result<(), OperatorError> {
        self.check_ghosts(ghosts, component)?;
        self.grid.check_shape(u)?;
        self.apply_raw(u, d, Some(&ghosts.values[component]), 0.0, out);
        Ok(())
    }

    /// The same operator with homogeneous flux (mirror ghosts), for component `c`.
    pub fn apply_neumann_into(&self, u: &[f64], component: usize, out: &mut [f64]) {
        self.apply_raw(u, self.d[component], None, self.a, out);
    }

    /// `d Δ_t u − a u` with either explicit ghosts or mirror closure.
    pub(crate) fn apply_raw(
        &self,
        u: &[f64],
        d: f64,
        ghosts: Option<&[Vec<f64>]>,
        a: f64,
        out: &mut [f64],
    ) {
        let grid = self.grid;
        let n = grid.dim();
        let counts = grid.counts();
        let strides = grid.strides();
        let coef: Vec<f64> = (0..n)
            .map(|k| d * self.inv_lambda_sq[k] / (grid.spacing()[k] * grid.spacing()[k]))
            .collect();
        let node = |lin: usize| -> f64 {
            let mut idx = [0usize; 3];
            let mut rem = lin;
            for k in 0..n {
                idx[k] = rem / strides[k];
                rem %= strides[k];
            }
            let uc = u[lin];
            let mut acc = 0.0;
            for k in 0..n {
                let s = strides[k];
                let (lo, hi) = if idx[k] == 0 {
                    let ghost = match ghosts {
                        Some(g) => g[2 * k][grid.face_local(&idx[..n], k)],
                        None => u[lin + s],
                    };
                    (ghost, u[lin + s])
                } else if idx[k] == counts[k] - 1 {
                    let ghost = match ghosts {
                        Some(g) => g[2 * k + 1][grid.face_local(&idx[..n], k)],
                        None => u[lin - s],
                    };
                    (u[lin - s], ghost)
                } else {
                    (u[lin - s], u[lin + s])
                };
                acc += coef[k] * (lo - 2.0 * uc + hi);
            }
            acc - a * uc
        };
        if out.len() >= PAR_THRESHOLD {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(lin, o)| *o = node(lin));
        } else {
            for (lin, o) in out.iter_mut().enumerate() {
                *o = node(lin);
            }
        }
    }
}

/// Concentration on the moving domain, `c(y, t) = u(A(t)^-1 y, t)`, by
/// multilinear interpolation of the nodal values.
pub fn pushforward(
    grid: &Grid,
    u: &[f64],
    law: &GrowthLaw,
    t: f64,
    y: &[f64],
) -> Result<f64, OperatorError> {
    grid.check_shape(u)?;
    let n = grid.dim();
    if y.len() != n {
        return Err(OperatorError::Contract(format!(
            "query point has {} coordinates for a {n}-d grid",
            y.len()
        )));
    }
    let lambda = law.scales(t)?;
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for k in 0..n {
        let x = y[k] / lambda[k];
        let ext = grid.extents()[k];
        let tol = 1e-12 * ext;
        if !(x >= -tol && x <= ext + tol) {
            return Err(OperatorError::OutsideDomain {
                point: y.to_vec(),
                t,
            });
        }
        let s = (x / grid.spacing()[k]).clamp(0.0, (grid.counts()[k] - 1) as f64);
        let i = (s.floor() as usize).min(grid.counts()[k] - 2);
        base[k] = i;
        frac[k] = s - i as f64;
    }
    let strides = grid.strides();
    let mut value = 0.0;
    for corner in 0..(1usize << n) {
        let mut w = 1.0;
        let mut lin = 0;
        for k in 0..n {
            let bit = corner >> k & 1;
            w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
            lin += (base[k] + bit) * strides[k];
        }
        if w != 0.0 {
            value += w * u[lin];
        }
    }
    Ok(value)
}

/// `Σ_i b_i ∫_Ω u_i J(t) dx`, the weighted mass carried by the moving domain.
pub fn evolving_mass(
    grid: &Grid,
    state: &StateField,
    law: &GrowthLaw,
    t: f64,
    b: &[f64],
) -> Result<f64, OperatorError> {
    if b.len() != state.components.len() || b.iter().any(|w| !(*w > 0.0)) {
        return Err(OperatorError::Contract(format!(
            "weights {b:?} must be positive, one per component"
        )));
    }
    let j = law.volume_factor(t)?;
    let mut total = 0.0;
    for (w, u) in b.iter().zip(&state.components) {
        total += w * grid.integrate_bulk(u)?;
    }
    Ok(j * total)
}

/// Weighted boundary mass `Σ_i b_i ∫_Γt u_i dσ_t` under the chosen surface scaling.
pub fn boundary_mass(
    grid: &Grid,
    state: &StateField,
    law: &GrowthLaw,
    t: f64,
    b: &[f64],
    scaling: SurfaceScaling,
) -> Result<f64, OperatorError> {
    let lambda = law.scales(t)?;
    let n = grid.dim();
    let mut total = 0.0;
    for face in grid.faces() {
        let factor = match scaling {
            SurfaceScaling::PaperLiteral => lambda.iter().product::<f64>().sqrt(),
            SurfaceScaling::FaceExact => (0..n)
                .filter(|&k| k != face.axis)
                .map(|k| lambda[k])
                .product(),
        };
        let mut acc = 0.0;
        for (&lin, w) in face.nodes.iter().zip(&face.weights) {
            let v: f64 = b
                .iter()
                .zip(&state.components)
                .map(|(bi, u)| bi * u[lin])
                .sum();
            acc += w * v;
        }
        total += factor * acc;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growth::JacobianMode;
    use proptest::prelude::*;

    fn zero_flux() -> FluxFn<impl Fn(&[f64], &Face, f64, &[f64], &mut [f64]) + Sync> {
        FluxFn(|_: &[f64], _: &Face, _: f64, _: &[f64], out: &mut [f64]| {
            out.iter_mut().for_each(|v| *v = 0.0)
        })
    }

    #[test]
    fn constant_field_sees_only_dilution() {
        let grid = Grid::unit(2, 9).unwrap();
        let st = GrowthLaw::stationary(2, 1.0);
        let ctx = OperatorContext::new(&grid, &st, &[1.0], 0.5, FluxConvention::DScaled).unwrap();
        let s = StateField::uniform(&grid, 0.5, &[3.0]);
        let gh = ctx.boundary_close(&s, &zero_flux()).unwrap();
        assert!(ctx.apply_l(&s.components[0], &gh, 0).unwrap().iter().all(|&v| v == 0.0));

        let law = GrowthLaw::isotropic_exponential(0.1, 3, 1.0).unwrap();
        let grid = Grid::unit(3, 5).unwrap();
        let ctx = OperatorContext::new(&grid, &law, &[1.0], 0.5, FluxConvention::DScaled).unwrap();
        let s = StateField::uniform(&grid, 0.5, &[1.0]);
        let gh = ctx.boundary_close(&s, &zero_flux()).unwrap();
        for v in ctx.apply_l(&s.components[0], &gh, 0).unwrap() {
            assert!((v + 0.15).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_profile_under_scaled_axis() {
        // λ = 2 frozen (no time dependence in the check), u = x², d = 1
        let law = GrowthLaw::per_axis(&["1 + t"], 1.0).unwrap();
        let grid = Grid::unit(1, 11).unwrap();
        let ctx = OperatorContext::new(&grid, &law, &[1.0], 1.0, FluxConvention::DScaled).unwrap();
        let a = ctx.dilution();
        let u = grid.sample(|x| x[0] * x[0]);
        let s = StateField::new(1.0, vec![u.clone()]);
        let gh = ctx.boundary_close(&s, &zero_flux()).unwrap();
        let lu = ctx.apply_l(&u, &gh, 0).unwrap();
        for lin in 1..grid.len() - 1 {
            let expect = 0.25 * 2.0 - a * u[lin];
            assert!((lu[lin] - expect).abs() < 1e-12, "{} vs {expect}", lu[lin]);
        }
    }

    #[test]
    fn ghost_closure_formula() {
        let grid = Grid::unit(1, 11).unwrap();
        let st = GrowthLaw::stationary(1, 1.0);
        let ctx = OperatorContext::new(&grid, &st, &[1.0], 0.0, FluxConvention::DScaled).unwrap();
        let mut u = vec![0.0; grid.len()];
        u[9] = 5.0;
        let s = StateField::new(0.0, vec![u]);
        let unit = FluxFn(|_: &[f64], _: &Face, _: f64, _: &[f64], out: &mut [f64]| out[0] = 1.0);
        let gh = ctx.boundary_close(&s, &unit).unwrap();
        let right = grid.faces().iter().position(|f| f.side == Side::High).unwrap();
        assert!((gh.face_values(0, right)[0] - 5.2).abs() < 1e-15);

        // homogeneous flux mirrors the inward neighbor
        let gh0 = ctx.boundary_close(&s, &zero_flux()).unwrap();
        assert_eq!(gh0.face_values(0, right)[0], 5.0);

        // λ = 2 doubles the increment
        let law = GrowthLaw::per_axis(&["1 + t"], 1.0).unwrap();
        let ctx2 = OperatorContext::new(&grid, &law, &[1.0], 1.0, FluxConvention::DScaled).unwrap();
        let s2 = StateField::new(1.0, s.components.clone());
        let gh2 = ctx2.boundary_close(&s2, &unit).unwrap();
        assert!((gh2.face_values(0, right)[0] - 5.4).abs() < 1e-15);

        // plain convention drops d
        let ctx3 = OperatorContext::new(&grid, &st, &[4.0], 0.0, FluxConvention::Plain).unwrap();
        let gh3 = ctx3.boundary_close(&s, &unit).unwrap();
        assert!((gh3.face_values(0, right)[0] - 5.2).abs() < 1e-15);
        let ctx4 = OperatorContext::new(&grid, &st, &[4.0], 0.0, FluxConvention::DScaled).unwrap();
        let gh4 = ctx4.boundary_close(&s, &unit).unwrap();
        assert!((gh4.face_values(0, right)[0] - 5.05).abs() < 1e-15);
    }

    #[test]
    fn stale_ghosts_are_rejected() {
        let grid = Grid::unit(1, 5).unwrap();
        let st = GrowthLaw::stationary(1, 1.0);
        let c0 = OperatorContext::new(&grid, &st, &[1.0], 0.0, FluxConvention::DScaled).unwrap();
        let c1 = OperatorContext::new(&grid, &st, &[1.0], 0.5, FluxConvention::DScaled).unwrap();
        let s = StateField::uniform(&grid, 0.0, &[1.0]);
        let gh = c0.boundary_close(&s, &zero_flux()).unwrap();
        assert!(matches!(
            c1.apply_l(&s.components[0], &gh, 0),
            Err(OperatorError::Contract(_))
        ));
        assert!(c0.apply_l(&s.components[0], &gh, 1).is_err());
    }

    #[test]
    fn linear_profile_with_matching_flux_is_exact() {
        // u = 2 x_1 + 1 on [0,1]^2, d = 1, λ = 1: outward flux is +2 on the
        // high x-face, -2 on the low x-face, 0 on the y-faces.
        let grid = Grid::unit(2, 7).unwrap();
        let st = GrowthLaw::stationary(2, 1.0);
        let ctx = OperatorContext::new(&grid, &st, &[1.0], 0.0, FluxConvention::DScaled).unwrap();
        let u = grid.sample(|x| 2.0 * x[0] + 1.0);
        let s = StateField::new(0.0, vec![u.clone()]);
        let flux = FluxFn(|_: &[f64], f: &Face, _: f64, _: &[f64], out: &mut [f64]| {
            out[0] = if f.axis == 0 { 2.0 * f.side.sign() } else { 0.0 };
        });
        let gh = ctx.boundary_close(&s, &flux).unwrap();
        for v in ctx.apply_l(&u, &gh, 0).unwrap() {
            assert!(v.abs() < 1e-11);
        }
    }

    #[test]
    fn static_reduces_to_plain_laplacian_bitwise() {
        let grid = Grid::unit(2, 6).unwrap();
        let st = GrowthLaw::stationary(2, 1.0);
        let ctx = OperatorContext::new(&grid, &st, &[0.7], 0.3, FluxConvention::DScaled).unwrap();
        let u = grid.sample(|x| (3.0 * x[0]).sin() + x[1] * x[1]);
        let mut out = vec![0.0; u.len()];
        ctx.apply_neumann_into(&u, 0, &mut out);
        let h = grid.spacing();
        let strides = grid.strides();
        for lin in 0..u.len() {
            let idx = grid.index_of(lin);
            let mut acc = 0.0;
            for k in 0..2 {
                let lo = if idx[k] == 0 { u[lin + strides[k]] } else { u[lin - strides[k]] };
                let hi = if idx[k] == grid.counts()[k] - 1 { u[lin - strides[k]] } else { u[lin + strides[k]] };
                acc += 0.7 / (h[k] * h[k]) * (lo - 2.0 * u[lin] + hi);
            }
            assert_eq!(out[lin], acc);
        }
    }

    #[test]
    fn green_identity_holds_discretely() {
        // ∫_Ω Δ_t u = Σ_k λ_k^-1 ∫_{faces ⊥ e_k} ∇_t u·η with u smooth, λ = (1.5, 0.8)
        let law = GrowthLaw::per_axis(&["1 + 0.5*t", "1 - 0.2*t"], 1.0).unwrap();
        let exact_u = |x: &[f64]| (x[0] + 0.3).sin() * (0.5 * x[1]).exp();
        let du = |x: &[f64]| {
            [
                (x[0] + 0.3).cos() * (0.5 * x[1]).exp(),
                0.5 * (x[0] + 0.3).sin() * (0.5 * x[1]).exp(),
            ]
        };
        let mut errs = vec![];
        for n in [9, 17, 33] {
            let grid = Grid::unit(2, n).unwrap();
            let ctx = OperatorContext::new(&grid, &law, &[1.0], 1.0, FluxConvention::DScaled).unwrap();
            let lam = ctx.scales().to_vec();
            let u = grid.sample(exact_u);
            let s = StateField::new(1.0, vec![u.clone()]);
            let flux = FluxFn(move |x: &[f64], f: &Face, _: f64, _: &[f64], out: &mut [f64]| {
                out[0] = f.side.sign() * du(x)[f.axis] / lam[f.axis];
            });
            let gh = ctx.boundary_close(&s, &flux).unwrap();
            let lu = ctx.apply_l(&u, &gh, 0).unwrap();
            // remove the dilution term to isolate Δ_t
            let lap: Vec<f64> = lu.iter().zip(&u).map(|(l, v)| l + ctx.dilution() * v).collect();
            let bulk = grid.integrate_bulk(&lap).unwrap();
            let mut bdry = 0.0;
            for f in grid.faces() {
                for (&lin, w) in f.nodes.iter().zip(&f.weights) {
                    let x = grid.coords(lin);
                    bdry += w * f.side.sign() * du(&x)[f.axis] / (ctx.scales()[f.axis] * ctx.scales()[f.axis]);
                }
            }
            errs.push((bulk - bdry).abs());
        }
        // trapezoid weights make the ghost closure a summation by parts
        for e in &errs {
            assert!(*e < 1e-12, "{errs:?}");
        }
    }

    #[test]
    fn pushforward_cases() {
        let grid = Grid::unit(2, 5).unwrap();
        let st = GrowthLaw::stationary(2, 1.0);
        let u = grid.sample(|x| x[0] + 2.0 * x[1]);
        assert!((pushforward(&grid, &u, &st, 0.0, &[0.3, 0.6]).unwrap() - 1.5).abs() < 1e-14);

        let law = GrowthLaw::per_axis(&["1 + t", "1"], 1.0).unwrap();
        let ux = grid.sample(|x| x[0]);
        assert!((pushforward(&grid, &ux, &law, 1.0, &[1.0, 0.2]).unwrap() - 0.5).abs() < 1e-14);
        assert!(matches!(
            pushforward(&grid, &ux, &law, 1.0, &[2.5, 0.2]),
            Err(OperatorError::OutsideDomain { .. })
        ));
        let c = vec![4.0; grid.len()];
        assert_eq!(pushforward(&grid, &c, &law, 0.7, &[1.6, 0.9]).unwrap(), 4.0);
    }

    #[test]
    fn evolving_mass_modes() {
        let grid = Grid::unit(3, 4).unwrap();
        let law = GrowthLaw::isotropic_exponential(0.1, 3, 1.0).unwrap();
        let s = StateField::uniform(&grid, 1.0, &[1.0]);
        let m = evolving_mass(&grid, &s, &law, 1.0, &[1.0]).unwrap();
        assert!((m - 0.15f64.exp()).abs() < 1e-13);
        let std = law.with_jacobian(JacobianMode::StandardDet);
        let m = evolving_mass(&grid, &s, &std, 1.0, &[1.0]).unwrap();
        assert!((m - 0.3f64.exp()).abs() < 1e-13);

        let st = GrowthLaw::stationary(3, 1.0);
        let s2 = StateField::new(0.0, vec![vec![2.0; grid.len()], vec![3.0; grid.len()]]);
        let m = evolving_mass(&grid, &s2, &st, 0.0, &[0.5, 1.0]).unwrap();
        assert!((m - 4.0).abs() < 1e-14);
    }

    #[test]
    fn boundary_mass_scalings() {
        let grid = Grid::unit(2, 5).unwrap();
        let law = GrowthLaw::per_axis(&["1 + t", "1"], 1.0).unwrap();
        let s = StateField::uniform(&grid, 1.0, &[1.0]);
        // moving domain is [0,2]x[0,1]: perimeter 6
        let exact = boundary_mass(&grid, &s, &law, 1.0, &[1.0], SurfaceScaling::FaceExact).unwrap();
        assert!((exact - 6.0).abs() < 1e-14);
        let lit = boundary_mass(&grid, &s, &law, 1.0, &[1.0], SurfaceScaling::PaperLiteral).unwrap();
        assert!((lit - 4.0 * 2f64.sqrt()).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn apply_l_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, k in 1.0f64..4.0) {
            let grid = Grid::unit(2, 6).unwrap();
            let law = GrowthLaw::per_axis(&["1 + t", "exp(0.2*t)"], 1.0).unwrap();
            let ctx = OperatorContext::new(&grid, &law, &[1.3], 0.4, FluxConvention::DScaled).unwrap();
            let u = grid.sample(|x| (k * x[0]).sin() * x[1]);
            let v = grid.sample(|x| (x[0] - x[1] * k).cos());
            let w: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let mut lu = vec![0.0; u.len()];
            let mut lv = vec![0.0; u.len()];
            let mut lw = vec![0.0; u.len()];
            ctx.apply_neumann_into(&u, 0, &mut lu);
            ctx.apply_neumann_into(&v, 0, &mut lv);
            ctx.apply_neumann_into(&w, 0, &mut lw);
            for i in 0..u.len() {
                prop_assert!((lw[i] - (a * lu[i] + b * lv[i])).abs() < 1e-9 * (1.0 + lw[i].abs()));
            }
        }
    }
}
