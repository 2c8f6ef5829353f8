//! Boundary heat potentials for a time-dependent diagonal operator on an
//! interval (n = 1) or a circle (n = 2): fundamental solution, double-layer
//! type operator `J_ε`, single-layer kernel `W`, density solve and
//! reconstruction.
//!
//! The kernels carry the exponent denominator `4π(t−s)` by default; the
//! standard heat-kernel denominator `4(t−s)` is available as a mode and is
//! what [`verify_fundamental`] checks against the heat equation.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;
use thiserror::Error;

use crate::growth::{GrowthError, GrowthLaw};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("out of range: {0}")]
    Range(String),
    #[error("invalid kernel parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Growth(#[from] GrowthError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExponentMode {
    /// `exp(−⟨Ã r, r⟩ / 4π(t−s))`
    #[default]
    PaperLiteral,
    /// `exp(−⟨Ã r, r⟩ / 4(t−s))`
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Geometry {
    /// `[a, b]`; the boundary is the two endpoints with unit weight.
    Interval { a: f64, b: f64 },
    /// Circle discretized by `nodes` equally spaced points, the first at angle 0.
    Circle {
        center: [f64; 2],
        radius: f64,
        nodes: usize,
    },
}

impl Geometry {
    pub fn dim(&self) -> usize {
        match self {
            Geometry::Interval { .. } => 1,
            Geometry::Circle { .. } => 2,
        }
    }

    /// Same geometry with `factor` times as many boundary nodes (circle only).
    pub fn refined(&self, factor: usize) -> Geometry {
        match *self {
            Geometry::Circle {
                center,
                radius,
                nodes,
            } => Geometry::Circle {
                center,
                radius,
                nodes: nodes * factor,
            },
            ref g => g.clone(),
        }
    }
}

/// Boundary quadrature node: position, outward unit normal, arc-length weight.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryNode {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
    pub weight: f64,
}

/// Diagonal `A(s)`.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelMatrix {
    Constant(Vec<f64>),
    /// `A(s) = diag(λ_i(s))` from a growth law.
    Growth(GrowthLaw),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelContext {
    matrix: KernelMatrix,
    geometry: Geometry,
    nodes: Vec<BoundaryNode>,
    mode: ExponentMode,
}

impl KernelContext {
    pub fn new(
        matrix: KernelMatrix,
        geometry: Geometry,
        mode: ExponentMode,
    ) -> Result<Self, KernelError> {
        let n = geometry.dim();
        match &matrix {
            KernelMatrix::Constant(d) => {
                if d.len() != n || d.iter().any(|v| !(*v > 0.0)) {
                    return Err(KernelError::Parameter(format!(
                        "A = diag{d:?} must have {n} positive entries"
                    )));
                }
            }
            KernelMatrix::Growth(law) => {
                if law.dim() != n {
                    return Err(KernelError::Parameter(format!(
                        "growth law dimension {} for a {n}-d boundary",
                        law.dim()
                    )));
                }
            }
        }
        let nodes = match geometry {
            Geometry::Interval { a, b } => {
                if !(b > a) {
                    return Err(KernelError::Parameter(format!("interval [{a}, {b}] is empty")));
                }
                vec![
                    BoundaryNode {
                        point: vec![a],
                        normal: vec![-1.0],
                        weight: 1.0,
                    },
                    BoundaryNode {
                        point: vec![b],
                        normal: vec![1.0],
                        weight: 1.0,
                    },
                ]
            }
            Geometry::Circle {
                center,
                radius,
                nodes,
            } => {
                if !(radius > 0.0) || nodes < 3 {
                    return Err(KernelError::Parameter(format!(
                        "circle needs radius > 0 and >= 3 nodes (got {radius}, {nodes})"
                    )));
                }
                let w = 2.0 * PI * radius / nodes as f64;
                (0..nodes)
                    .map(|j| {
                        let th = 2.0 * PI * j as f64 / nodes as f64;
                        let (s, c) = th.sin_cos();
                        BoundaryNode {
                            point: vec![center[0] + radius * c, center[1] + radius * s],
                            normal: vec![c, s],
                            weight: w,
                        }
                    })
                    .collect()
            }
        };
        Ok(Self {
            matrix,
            geometry,
            nodes,
            mode,
        })
    }

    pub fn identity(geometry: Geometry, mode: ExponentMode) -> Result<Self, KernelError> {
        let n = geometry.dim();
        Self::new(KernelMatrix::Constant(vec![1.0; n]), geometry, mode)
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    pub fn nodes(&self) -> &[BoundaryNode] {
        &self.nodes
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn mode(&self) -> ExponentMode {
        self.mode
    }

    pub fn with_geometry(&self, geometry: Geometry) -> Result<Self, KernelError> {
        Self::new(self.matrix.clone(), geometry, self.mode)
    }

    pub fn with_mode(&self, mode: ExponentMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    /// Diagonal of `A(s)`.
    pub fn diag(&self, s: f64) -> Result<Vec<f64>, KernelError> {
        match &self.matrix {
            KernelMatrix::Constant(d) => Ok(d.clone()),
            KernelMatrix::Growth(law) => Ok(law.scales(s)?),
        }
    }

    fn denominator(&self, tau: f64) -> f64 {
        match self.mode {
            ExponentMode::PaperLiteral => 4.0 * PI * tau,
            ExponentMode::Standard => 4.0 * tau,
        }
    }
}

/// `A(s)`-dependent pieces reused across one time node.
struct Frozen {
    inv: Vec<f64>,
    sqrt_det: f64,
}

impl Frozen {
    fn new(diag: &[f64]) -> Self {
        Self {
            inv: diag.iter().map(|v| 1.0 / v).collect(),
            sqrt_det: diag.iter().product::<f64>().sqrt(),
        }
    }

    fn quad(&self, r: &[f64]) -> f64 {
        r.iter().zip(&self.inv).map(|(x, a)| a * x * x).sum()
    }
}

fn check_order(s: f64, t: f64) -> Result<f64, KernelError> {
    let tau = t - s;
    if !(tau > 0.0) {
        return Err(KernelError::Range(format!("need t > s, got t = {t}, s = {s}")));
    }
    Ok(tau)
}

/// `Z₀(r, s, t) = |4π(t−s)|^{-n/2} det A(s)^{-1/2} exp(−⟨Ã(s) r, r⟩ / den)`.
pub fn z0(r: &[f64], s: f64, t: f64, ctx: &KernelContext) -> Result<f64, KernelError> {
    let tau = check_order(s, t)?;
    if r.len() != ctx.dim() {
        return Err(KernelError::Parameter(format!("offset {r:?} has the wrong dimension")));
    }
    let fr = Frozen::new(&ctx.diag(s)?);
    let n = ctx.dim() as f64;
    Ok((4.0 * PI * tau).powf(-0.5 * n) / fr.sqrt_det * (-fr.quad(r) / ctx.denominator(tau)).exp())
}

/// Outcome of the heat-equation residual test of `Z₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalCheck {
    pub mode: ExponentMode,
    /// `max |∂_t Z − Σ a_i ∂²_i Z|` over the sample grid, with `a_i` the diagonal of `A`.
    pub residual: f64,
    /// Residual above `1e-3`: `Z₀` is not a fundamental solution in this mode.
    pub flagged: bool,
}

/// Finite-difference residual of `Z₀` against `∂_t − Σ a_i ∂²_i` with `A`
/// frozen at `s = 0`, on offsets in `[−1, 1]^n` and `t ∈ {0.25, 0.5, 1}`.
pub fn verify_fundamental(ctx: &KernelContext, per_axis: usize) -> Result<FundamentalCheck, KernelError> {
    if per_axis < 2 {
        return Err(KernelError::Parameter("need at least 2 sample points per axis".into()));
    }
    let n = ctx.dim();
    let frozen = ctx.with_frozen(0.0)?;
    let a = frozen.diag(0.0)?;
    let h = 1e-3;
    let mut worst = 0.0f64;
    let total = per_axis.pow(n as u32);
    for t in [0.25, 0.5, 1.0] {
        for k in 0..total {
            let mut rem = k;
            let r: Vec<f64> = (0..n)
                .map(|_| {
                    let i = rem % per_axis;
                    rem /= per_axis;
                    -1.0 + 2.0 * i as f64 / (per_axis - 1) as f64
                })
                .collect();
            let z = |r: &[f64], t: f64| z0(r, 0.0, t, &frozen);
            let dt = (z(&r, t + h)? - z(&r, t - h)?) / (2.0 * h);
            let mut lap = 0.0;
            let c = z(&r, t)?;
            for i in 0..n {
                let mut p = r.clone();
                p[i] += h;
                let mut m = r.clone();
                m[i] -= h;
                lap += a[i] * (z(&p, t)? - 2.0 * c + z(&m, t)?) / (h * h);
            }
            worst = worst.max((dt - lap).abs());
        }
    }
    Ok(FundamentalCheck {
        mode: ctx.mode,
        residual: worst,
        flagged: worst > 1e-3,
    })
}

impl KernelContext {
    /// Context with `A` frozen at time `s`.
    fn with_frozen(&self, s: f64) -> Result<Self, KernelError> {
        Ok(Self {
            matrix: KernelMatrix::Constant(self.diag(s)?),
            ..self.clone()
        })
    }
}

/// `H(0)` by quadrature and in closed form, the unit-sphere area `ω_n`, and
/// `c_n = ω_n H(0) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub n: usize,
    pub h0_quadrature: f64,
    pub h0_closed: f64,
    pub omega_n: f64,
    pub c_n: f64,
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

pub fn h0_and_cn(n: usize) -> Result<KernelConstants, KernelError> {
    if !(1..=3).contains(&n) {
        return Err(KernelError::Parameter(format!("n = {n} must be 1, 2 or 3")));
    }
    let half = 0.5 * n as f64;
    // s = e^y: ∫ e^{−(n/2) y} exp(−e^{−y}/4) dy over a range where the tails are below 1e-16
    let integrand = |y: f64| (-half * y - 0.25 * (-y).exp()).exp();
    let h0_quadrature = adaptive_simpson(&integrand, -6.0, 80.0, 1e-14);
    let h0_closed = 2f64.powi(n as i32) * gamma(half);
    let omega_n = 2.0 * PI.powf(half) / gamma(half);
    Ok(KernelConstants {
        n,
        h0_quadrature,
        h0_closed,
        omega_n,
        c_n: 0.5 * omega_n * h0_quadrature,
    })
}

/// `W(t−s, x, Q) = det A(s)^{-1/2} (t−s)^{-n/2-1} exp(−⟨Ã(s)(x−Q), x−Q⟩ / den)`.
pub fn w_kernel(
    s: f64,
    t: f64,
    x: &[f64],
    q: &[f64],
    ctx: &KernelContext,
) -> Result<f64, KernelError> {
    let tau = check_order(s, t)?;
    let fr = Frozen::new(&ctx.diag(s)?);
    Ok(w_frozen(&fr, tau, x, q, ctx))
}

fn w_frozen(fr: &Frozen, tau: f64, x: &[f64], q: &[f64], ctx: &KernelContext) -> f64 {
    let n = ctx.dim() as f64;
    let r: Vec<f64> = x.iter().zip(q).map(|(a, b)| a - b).collect();
    (-fr.quad(&r) / ctx.denominator(tau)).exp() / (fr.sqrt_det * tau.powf(0.5 * n + 1.0))
}

/// Kernel of `J`: `⟨Ã(s)(y−Q), η_Q⟩ det A(s)^{-1/2} (t−s)^{-n/2-1} exp(…)`.
fn j_frozen(fr: &Frozen, tau: f64, q: &BoundaryNode, y: &[f64], ctx: &KernelContext) -> f64 {
    let r: Vec<f64> = y.iter().zip(&q.point).map(|(a, b)| a - b).collect();
    let proj: f64 = r
        .iter()
        .zip(&fr.inv)
        .zip(&q.normal)
        .map(|((ri, ai), ni)| ai * ri * ni)
        .sum();
    if proj == 0.0 {
        return 0.0;
    }
    let n = ctx.dim() as f64;
    proj * (-fr.quad(&r) / ctx.denominator(tau)).exp() / (fr.sqrt_det * tau.powf(0.5 * n + 1.0))
}

/// Number of geometric levels and their ratio in graded time quadratures.
pub const GRADING_LEVELS: usize = 20;
pub const GRADING_RATIO: f64 = 0.5;

/// Three-point Gauss–Legendre nodes and weights on `[−1, 1]`.
const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// Quadrature nodes and weights on `[0, upper]` over panels that shrink
/// geometrically toward the singular time `t ≥ upper`: breakpoints
/// `t − t·GRADING_RATIO^k` for `k = 1..=GRADING_LEVELS` that fall inside the
/// interval, plus any extra `cuts`. Each panel is split into `per_panel` equal
/// intervals carrying a three-point Gauss–Legendre rule.
pub fn graded_time_rule(upper: f64, t: f64, cuts: &[f64], per_panel: usize) -> Vec<(f64, f64)> {
    let mut breaks = vec![0.0, upper];
    let mut width = 1.0;
    for _ in 0..GRADING_LEVELS {
        width *= GRADING_RATIO;
        breaks.push(t * (1.0 - width));
    }
    breaks.extend_from_slice(cuts);
    breaks.retain(|b| *b >= 0.0 && *b <= upper);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * upper.max(1.0));
    let per_panel = per_panel.max(1);
    let mut rule = Vec::with_capacity(3 * per_panel * breaks.len());
    for w in breaks.windows(2) {
        let h = (w[1] - w[0]) / per_panel as f64;
        for k in 0..per_panel {
            let mid = w[0] + h * (k as f64 + 0.5);
            for (x, wt) in GAUSS3 {
                rule.push((mid + 0.5 * h * x, 0.5 * h * wt));
            }
        }
    }
    rule
}

/// `J_ε(f)(Q, t)` for `Q` the boundary node `q_index`; `f(s, j)` is the
/// density at time `s` on boundary node `j`.
pub fn j_epsilon<F: Fn(f64, usize) -> f64>(
    f: F,
    eps: f64,
    q_index: usize,
    t: f64,
    per_panel: usize,
    ctx: &KernelContext,
) -> Result<f64, KernelError> {
    if !(eps > 0.0 && eps < t) {
        return Err(KernelError::Range(format!("need 0 < ε < t, got ε = {eps}, t = {t}")));
    }
    let q = ctx
        .nodes
        .get(q_index)
        .ok_or_else(|| KernelError::Parameter(format!("no boundary node {q_index}")))?;
    let mut total = 0.0;
    for (s, ws) in graded_time_rule(t - eps, t, &[], per_panel) {
        let fr = Frozen::new(&ctx.diag(s)?);
        let tau = t - s;
        let mut inner = 0.0;
        for (j, y) in ctx.nodes.iter().enumerate() {
            let k = j_frozen(&fr, tau, q, &y.point, ctx);
            if k != 0.0 {
                inner += y.weight * k * f(s, j);
            }
        }
        total += ws * inner;
    }
    Ok(total)
}

/// Boundary density on the product grid `nodes × times`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySolution {
    /// `t_0 = 0 < t_1 < … < t_K = T`
    pub times: Vec<f64>,
    /// `values[k][i]` at boundary node `i`, time `t_k`
    pub values: Vec<Vec<f64>>,
    pub c_n: f64,
    /// 1-norm condition estimate of the discrete `−c_n I + J`.
    pub condition_estimate: f64,
    /// `max |(−c_n I + J) g + 2γ| / max |2γ|`
    pub residual: f64,
}

/// Discrete `−c_n I + J` on `nodes × times` with a trapezoid rule in `s < t`
/// (the `s = t` node carries a vanishing kernel for distinct points and a zero
/// normal projection for coincident ones).
struct VolterraSystem {
    n_nodes: usize,
    n_times: usize,
    /// dense row-major, block lower triangular
    m: Vec<f64>,
}

impl VolterraSystem {
    fn assemble(ctx: &KernelContext, times: &[f64], c_n: f64) -> Result<Self, KernelError> {
        let nn = ctx.nodes.len();
        let nt = times.len();
        let size = nn * nt;
        let mut m = vec![0.0; size * size];
        let frozen: Vec<Frozen> = times
            .iter()
            .map(|&s| ctx.diag(s).map(|d| Frozen::new(&d)))
            .collect::<Result<_, _>>()?;
        for k in 0..nt {
            for i in 0..nn {
                let row = k * nn + i;
                m[row * size + row] = -c_n;
                for l in 0..k {
                    let ws = if l == 0 {
                        0.5 * (times[1] - times[0])
                    } else {
                        0.5 * (times[l + 1] - times[l - 1])
                    };
                    let tau = times[k] - times[l];
                    for (j, y) in ctx.nodes.iter().enumerate() {
                        let kv = j_frozen(&frozen[l], tau, &ctx.nodes[i], &y.point, ctx);
                        m[row * size + l * nn + j] += ws * y.weight * kv;
                    }
                }
            }
        }
        Ok(Self {
            n_nodes: nn,
            n_times: nt,
            m,
        })
    }

    fn size(&self) -> usize {
        self.n_nodes * self.n_times
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.size();
        (0..n)
            .map(|r| self.m[r * n..(r + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Forward block substitution; the diagonal blocks are `−c_n I`.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.size();
        let mut x = vec![0.0; n];
        for r in 0..n {
            let block_start = (r / self.n_nodes) * self.n_nodes;
            let acc: f64 = (0..block_start).map(|c| self.m[r * n + c] * x[c]).sum();
            x[r] = (rhs[r] - acc) / self.m[r * n + r];
        }
        x
    }

    /// Backward substitution with the transpose.
    fn solve_transpose(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.size();
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let block_end = (r / self.n_nodes + 1) * self.n_nodes;
            let acc: f64 = (block_end..n).map(|c| self.m[c * n + r] * x[c]).sum();
            x[r] = (rhs[r] - acc) / self.m[r * n + r];
        }
        x
    }

    fn norm1(&self) -> f64 {
        let n = self.size();
        (0..n)
            .map(|c| (0..n).map(|r| self.m[r * n + c].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Hager's estimate of `‖M^{-1}‖_1`.
    fn inverse_norm1_estimate(&self) -> f64 {
        let n = self.size();
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            est = y.iter().map(|v| v.abs()).sum::<f64>();
            let xi: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
            let z = self.solve_transpose(&xi);
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |acc, (j, v)| if v.abs() > acc.1 { (j, v.abs()) } else { acc });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= ztx {
                break;
            }
            x.iter_mut().for_each(|v| *v = 0.0);
            x[jmax] = 1.0;
        }
        est
    }
}

/// Solves `(−c_n I + J) g = −2γ` on `nodes × times` by forward time-marching.
pub fn solve_density<G: Fn(&[f64], f64) -> f64>(
    gamma_data: G,
    times: &[f64],
    ctx: &KernelContext,
) -> Result<DensitySolution, KernelError> {
    if times.len() < 2 || times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(KernelError::Parameter(
            "times must start at 0 and increase strictly".into(),
        ));
    }
    let c_n = h0_and_cn(ctx.dim())?.c_n;
    let sys = VolterraSystem::assemble(ctx, times, c_n)?;
    let nn = ctx.nodes.len();
    let rhs: Vec<f64> = times
        .iter()
        .flat_map(|&t| ctx.nodes.iter().map(move |q| (q, t)))
        .map(|(q, t)| -2.0 * gamma_data(&q.point, t))
        .collect();
    let g = sys.solve(&rhs);
    let back = sys.apply(&g);
    let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = back
        .iter()
        .zip(&rhs)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let residual = if scale == 0.0 { err } else { err / scale };
    let condition_estimate = sys.norm1() * sys.inverse_norm1_estimate();
    Ok(DensitySolution {
        times: times.to_vec(),
        values: g.chunks(nn).map(|c| c.to_vec()).collect(),
        c_n,
        condition_estimate,
        residual,
    })
}

/// Applies the discrete `−c_n I + J` to a density (for solve-then-apply checks).
pub fn apply_density_operator(
    g: &DensitySolution,
    ctx: &KernelContext,
) -> Result<Vec<Vec<f64>>, KernelError> {
    let sys = VolterraSystem::assemble(ctx, &g.times, g.c_n)?;
    let flat: Vec<f64> = g.values.iter().flatten().cloned().collect();
    Ok(sys.apply(&flat).chunks(ctx.nodes.len()).map(|c| c.to_vec()).collect())
}

/// Density value at time `s` on node `j`, linear in time, held constant past the ends.
fn density_at(g: &DensitySolution, s: f64, j: usize) -> f64 {
    let t = &g.times;
    if s <= t[0] {
        return g.values[0][j];
    }
    if s >= t[t.len() - 1] {
        return g.values[t.len() - 1][j];
    }
    let k = t.partition_point(|v| *v <= s).min(t.len() - 1);
    let (a, b) = (t[k - 1], t[k]);
    let w = (s - a) / (b - a);
    (1.0 - w) * g.values[k - 1][j] + w * g.values[k][j]
}

/// `φ(x, t) = ∫_0^t ∫_Γ W(t−s, x, Q) g(Q, s) dσ ds` with a graded time rule.
pub fn classical_solution(
    g: &DensitySolution,
    x: &[f64],
    t: f64,
    per_panel: usize,
    ctx: &KernelContext,
) -> Result<f64, KernelError> {
    if x.len() != ctx.dim() {
        return Err(KernelError::Parameter(format!("point {x:?} has the wrong dimension")));
    }
    if !(t > 0.0) {
        return Ok(0.0);
    }
    if g.values.first().map(Vec::len) != Some(ctx.nodes.len()) {
        return Err(KernelError::Parameter("density does not match the boundary nodes".into()));
    }
    let mut total = 0.0;
    for (s, ws) in graded_time_rule(t, t, &g.times, per_panel) {
        let tau = t - s;
        if tau <= 0.0 {
            continue; // W vanishes as s → t for x off the boundary
        }
        let fr = Frozen::new(&ctx.diag(s)?);
        let mut inner = 0.0;
        for (j, q) in ctx.nodes.iter().enumerate() {
            inner += q.weight * w_frozen(&fr, tau, x, &q.point, ctx) * density_at(g, s, j);
        }
        total += ws * inner;
    }
    Ok(total)
}

/// `max |φ_i − φ_j| / (|t_i − t_j|^{1/2} + |x_i − x_j|)^a` over sample pairs
/// `(x, t, φ)`.
pub fn holder_seminorm(samples: &[(Vec<f64>, f64, f64)], a: f64) -> Result<f64, KernelError> {
    if !(a > 0.0 && a < 1.0) {
        return Err(KernelError::Parameter(format!("exponent a = {a} must lie in (0, 1)")));
    }
    let mut best = 0.0f64;
    for (i, (xi, ti, pi)) in samples.iter().enumerate() {
        for (xj, tj, pj) in &samples[i + 1..] {
            let dx: f64 = xi.iter().zip(xj).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let dist = (ti - tj).abs().sqrt() + dx;
            if dist > 0.0 {
                best = best.max((pi - pj).abs() / dist.powf(a));
            }
        }
    }
    Ok(best)
}
