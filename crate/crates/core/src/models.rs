//! Reaction vector fields `(f, g)` and sampling-based checkers for the
//! structural conditions that guarantee nonnegative global solutions.
//!
//! `f` acts in the bulk, `g` is the boundary flux. The checkers are
//! falsification tools: a `Fail` verdict always carries a witness point that
//! reproduces the violation, while `Pass` only means no violation was found on
//! the sampled box.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError, Scope};

/// Tolerance for sign tests in the quasi-positivity check.
pub const QP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model evaluation produced a non-finite value {value} in {field}_{component} at z = {input:?}")]
    NonFinite {
        field: &'static str,
        component: usize,
        value: f64,
        input: Vec<f64>,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("invalid checker arguments: {0}")]
    Arguments(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Reaction systems shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "kebab-case")]
pub enum Builtin {
    /// Two species, `g = (α u2 − u2² u1, β − (α+1) u2 + u2² u1)`.
    BrusselatorSurface { alpha: f64, beta: f64 },
    /// `R1 + R2 ⇌ P1` with forward/reverse rates on the boundary.
    ReversibleReaction { kf: f64, kr: f64 },
    /// Two species, `g = (α u1 u2³ − u1 u2², u1 u2² − β u1 u2⁶)`.
    Example3 { alpha: f64, beta: f64 },
}

impl Builtin {
    pub fn components(&self) -> usize {
        match self {
            Builtin::ReversibleReaction { .. } => 3,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Builtin::BrusselatorSurface { .. } => "brusselator-surface",
            Builtin::ReversibleReaction { .. } => "reversible-reaction",
            Builtin::Example3 { .. } => "example3",
        }
    }

    fn g(&self, z: &[f64], out: &mut [f64]) {
        match *self {
            Builtin::BrusselatorSurface { alpha, beta } => {
                let (u1, u2) = (z[0], z[1]);
                let cubic = u2 * u2 * u1;
                out[0] = alpha * u2 - cubic;
                out[1] = beta - (alpha + 1.0) * u2 + cubic;
            }
            Builtin::ReversibleReaction { kf, kr } => {
                // one net rate so that ½g1 + ½g2 + g3 cancels exactly
                let net = kf * z[0] * z[1] - kr * z[2];
                out[0] = -net;
                out[1] = -net;
                out[2] = net;
            }
            Builtin::Example3 { alpha, beta } => {
                let (u1, u2) = (z[0], z[1]);
                let sq = u2 * u2;
                out[0] = alpha * u1 * sq * u2 - u1 * sq;
                out[1] = u1 * sq - beta * u1 * sq * sq * sq;
            }
        }
    }

    /// Constants the source model states for this system.
    pub fn certificate(&self) -> Certificate {
        match *self {
            Builtin::BrusselatorSurface { .. } | Builtin::Example3 { .. } => Certificate {
                k: Some(1.0),
                ..Default::default()
            },
            Builtin::ReversibleReaction { .. } => Certificate {
                b: Some(vec![0.5, 0.5, 1.0]),
                l1: Some(0.0),
                ..Default::default()
            },
        }
    }
}

/// Optional admissibility constants attached to a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_fg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
enum Fields {
    Builtin(Builtin),
    Expressions {
        f: Vec<Expr>,
        g: Vec<Expr>,
        has_division: bool,
    },
}

/// A reaction–diffusion system: `m` species with bulk field `f`, boundary
/// field `g` and diffusivities `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionModel {
    name: String,
    m: usize,
    fields: Fields,
    d: Vec<f64>,
    meta: Option<Certificate>,
}

/// Output of a checked evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionRates {
    pub values: Vec<f64>,
    /// The input had a negative entry (solver overshoot); values are still
    /// evaluated as written.
    pub negative_input: bool,
}

impl ReactionModel {
    pub fn builtin(which: Builtin, d: Vec<f64>) -> Result<Self, ModelError> {
        let model = Self {
            name: which.name().to_string(),
            m: which.components(),
            fields: Fields::Builtin(which),
            d,
            meta: Some(which.certificate()),
        };
        model.validate()?;
        Ok(model)
    }

    /// Model from expression strings over `u1..um` and named constants.
    pub fn from_expressions<S: AsRef<str>>(
        name: &str,
        f: &[S],
        g: &[S],
        constants: &BTreeMap<String, f64>,
        d: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let m = d.len();
        if f.len() != m || g.len() != m {
            return Err(ModelError::Invalid(format!(
                "{} f rows and {} g rows for {m} diffusivities",
                f.len(),
                g.len()
            )));
        }
        let scope = Scope::components(m).with_constants(constants);
        let parse = |rows: &[S]| -> Result<Vec<Expr>, ModelError> {
            rows.iter()
                .map(|s| Expr::parse(s.as_ref(), &scope).map_err(ModelError::from))
                .collect()
        };
        let f = parse(f)?;
        let g = parse(g)?;
        let has_division = f.iter().chain(&g).any(Expr::contains_division);
        let model = Self {
            name: name.to_string(),
            m,
            fields: Fields::Expressions { f, g, has_division },
            d,
            meta: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// `f = g = 0` with the given diffusivities.
    pub fn zero(d: Vec<f64>) -> Self {
        let rows = vec!["0"; d.len()];
        Self::from_expressions("zero", &rows, &rows, &BTreeMap::new(), d)
            .expect("zero model is valid")
    }

    pub fn with_certificate(mut self, meta: Certificate) -> Self {
        self.meta = Some(meta);
        self
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.m == 0 {
            return Err(ModelError::Invalid("need at least one component".into()));
        }
        if self.d.len() != self.m {
            return Err(ModelError::Invalid(format!(
                "{} diffusivities for {} components",
                self.d.len(),
                self.m
            )));
        }
        if let Some((i, d)) = self
            .d
            .iter()
            .enumerate()
            .find(|(_, d)| !(**d > 0.0) || !d.is_finite())
        {
            return Err(ModelError::Invalid(format!(
                "diffusivity d{} = {d} must be positive",
                i + 1
            )));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn components(&self) -> usize {
        self.m
    }

    pub fn diffusivities(&self) -> &[f64] {
        &self.d
    }

    pub fn certificate(&self) -> Option<&Certificate> {
        self.meta.as_ref()
    }

    pub fn builtin_kind(&self) -> Option<Builtin> {
        match &self.fields {
            Fields::Builtin(b) => Some(*b),
            Fields::Expressions { .. } => None,
        }
    }

    /// True when a user expression divides, so local Lipschitz continuity is
    /// not implied by the grammar.
    pub fn may_be_non_lipschitz(&self) -> bool {
        matches!(
            self.fields,
            Fields::Expressions {
                has_division: true,
                ..
            }
        )
    }

    /// Unchecked bulk evaluation into `out` (hot path).
    pub fn f_into(&self, z: &[f64], out: &mut [f64]) {
        match &self.fields {
            Fields::Builtin(_) => out.iter_mut().for_each(|v| *v = 0.0),
            Fields::Expressions { f, .. } => {
                for (o, e) in out.iter_mut().zip(f) {
                    *o = e.eval(z);
                }
            }
        }
    }

    /// Unchecked boundary evaluation into `out` (hot path).
    pub fn g_into(&self, z: &[f64], out: &mut [f64]) {
        match &self.fields {
            Fields::Builtin(b) => b.g(z, out),
            Fields::Expressions { g, .. } => {
                for (o, e) in out.iter_mut().zip(g) {
                    *o = e.eval(z);
                }
            }
        }
    }

    /// True when `f` is identically zero by construction.
    pub fn bulk_is_zero(&self) -> bool {
        match &self.fields {
            Fields::Builtin(_) => true,
            Fields::Expressions { f, .. } => f.iter().all(|e| *e == Expr::Const(0.0)),
        }
    }

    fn checked(
        &self,
        field: &'static str,
        z: &[f64],
        eval: impl Fn(&[f64], &mut [f64]),
    ) -> Result<ReactionRates, ModelError> {
        if z.len() != self.m {
            return Err(ModelError::Arguments(format!(
                "input has {} entries for {} components",
                z.len(),
                self.m
            )));
        }
        let mut values = vec![0.0; self.m];
        eval(z, &mut values);
        if let Some((component, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite())
        {
            return Err(ModelError::NonFinite {
                field,
                component: component + 1,
                value,
                input: z.to_vec(),
            });
        }
        Ok(ReactionRates {
            values,
            negative_input: z.iter().any(|&v| v < 0.0),
        })
    }

    pub fn eval_f(&self, z: &[f64]) -> Result<ReactionRates, ModelError> {
        self.checked("f", z, |z, out| self.f_into(z, out))
    }

    pub fn eval_g(&self, z: &[f64]) -> Result<ReactionRates, ModelError> {
        self.checked("g", z, |z, out| self.g_into(z, out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
    pub constants: BTreeMap<String, f64>,
    pub sample_domain: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Point set used by every checker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleBox {
    pub radius: f64,
    pub count: usize,
}

impl Default for SampleBox {
    fn default() -> Self {
        Self {
            radius: 10.0,
            count: 10_000,
        }
    }
}

impl SampleBox {
    pub fn new(radius: f64, count: usize) -> Self {
        Self { radius, count }
    }

    fn describe(&self, m: usize) -> String {
        format!(
            "[0,{}]^{m}: {} Halton points + vertices + coordinate faces",
            self.radius, self.count
        )
    }

    /// Vertices of `[0,R]^m`, Halton points, and Halton points projected onto
    /// each coordinate face `z_j ∈ {0, R}`.
    pub fn points(&self, m: usize) -> Vec<Vec<f64>> {
        let r = self.radius;
        let mut pts = Vec::with_capacity(2 * self.count + (1 << m.min(16)));
        for mask in 0..(1usize << m.min(16)) {
            pts.push((0..m).map(|j| if mask >> j & 1 == 1 { r } else { 0.0 }).collect());
        }
        let halton: Vec<Vec<f64>> = (1..=self.count as u64)
            .map(|k| (0..m).map(|j| r * radical_inverse(k, PRIMES[j % PRIMES.len()])).collect())
            .collect();
        let per_face = (self.count / (2 * m)).max(1);
        for j in 0..m {
            for side in [0.0, r] {
                for p in halton.iter().take(per_face) {
                    let mut q = p.clone();
                    q[j] = side;
                    pts.push(q);
                }
            }
        }
        pts.extend(halton);
        pts
    }
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while k > 0 {
        out += (k % base) as f64 * inv;
        k /= base;
        inv /= base as f64;
    }
    out
}

fn eval_pair(model: &ReactionModel, z: &[f64], f: &mut [f64], g: &mut [f64]) -> Result<(), ModelError> {
    model.f_into(z, f);
    model.g_into(z, g);
    for (field, vals) in [("f", &*f), ("g", &*g)] {
        if let Some((i, &v)) = vals.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ModelError::NonFinite {
                field,
                component: i + 1,
                value: v,
                input: z.to_vec(),
            });
        }
    }
    Ok(())
}

/// For each `i`, tests `f_i(z) ≥ 0` and `g_i(z) ≥ 0` on sample points with `z_i = 0`.
pub fn check_quasi_positivity(
    model: &ReactionModel,
    sampling: SampleBox,
) -> Result<ConditionReport, ModelError> {
    if !(sampling.radius > 0.0) {
        return Err(ModelError::Arguments("sample radius must be positive".into()));
    }
    let m = model.components();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; m];
    let mut worst = 0.0f64;
    for p in sampling.points(m) {
        for i in 0..m {
            let mut z = p.clone();
            z[i] = 0.0;
            eval_pair(model, &z, &mut f, &mut g)?;
            worst = worst.min(f[i]).min(g[i]);
            if f[i] < -QP_TOL || g[i] < -QP_TOL {
                let field = if f[i] < -QP_TOL { "f" } else { "g" };
                return Ok(ConditionReport {
                    condition: "quasi-positivity".into(),
                    verdict: Verdict::Fail,
                    witness: Some(z),
                    constants: BTreeMap::from([("min_value".into(), f[i].min(g[i]))]),
                    sample_domain: sampling.describe(m),
                    notes: vec![format!("{field}_{} < 0 with u{} = 0", i + 1, i + 1)],
                });
            }
        }
    }
    Ok(ConditionReport {
        condition: "quasi-positivity".into(),
        verdict: Verdict::Pass,
        witness: None,
        constants: BTreeMap::from([("min_value".into(), worst)]),
        sample_domain: sampling.describe(m),
        notes: vec!["no violation on the sampled box".into()],
    })
}

/// Radii factors used to detect a linear bound that fails along a ray.
const RAY_FACTORS: [f64; 3] = [1.0, 4.0, 16.0];

/// Largest ratio `max(w·f(z), w·g(z)) / (Σz + 1)` over the box, with its argmax.
fn fit_linear_bound(
    model: &ReactionModel,
    weights: &[f64],
    sampling: SampleBox,
) -> Result<(f64, Vec<f64>), ModelError> {
    let m = model.components();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; m];
    let mut best = f64::NEG_INFINITY;
    let mut arg = vec![0.0; m];
    for z in sampling.points(m) {
        eval_pair(model, &z, &mut f, &mut g)?;
        let wf: f64 = weights.iter().zip(&f).map(|(w, v)| w * v).sum();
        let wg: f64 = weights.iter().zip(&g).map(|(w, v)| w * v).sum();
        let ratio = wf.max(wg) / (z.iter().sum::<f64>() + 1.0);
        if ratio > best {
            best = ratio;
            arg = z;
        }
    }
    Ok((best, arg))
}

/// Fits the linear constant over growing boxes. Returns the report pieces:
/// the constant on the base box and, if the constant keeps growing with the
/// box, a witness that violates the base-box bound.
fn linear_condition(
    model: &ReactionModel,
    weights: &[f64],
    sampling: SampleBox,
) -> Result<(f64, Vec<f64>, Option<Vec<f64>>), ModelError> {
    let fits = RAY_FACTORS
        .iter()
        .map(|k| fit_linear_bound(model, weights, SampleBox::new(sampling.radius * k, sampling.count)))
        .collect::<Result<Vec<_>, _>>()?;
    let base = fits[0].0.max(0.0);
    let levels: Vec<f64> = fits.iter().map(|(l, _)| l.max(0.0)).collect();
    let growing = levels[2] > 2.0 * levels[1] + 1e-12 && levels[1] > 1.5 * levels[0] + 1e-12;
    let witness = growing.then(|| fits[2].1.clone());
    Ok((base, levels, witness))
}

fn linear_report(
    condition: String,
    key: String,
    sampling: SampleBox,
    m: usize,
    (base, levels, witness): (f64, Vec<f64>, Option<Vec<f64>>),
) -> ConditionReport {
    let mut constants = BTreeMap::from([(key, base)]);
    for (k, l) in RAY_FACTORS.iter().zip(&levels) {
        constants.insert(format!("fit_at_R*{k}"), *l);
    }
    let verdict = if witness.is_some() {
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    let notes = if witness.is_some() {
        vec!["fitted constant grows with the sample box: no linear bound".into()]
    } else {
        vec![]
    };
    ConditionReport {
        condition,
        verdict,
        witness,
        constants,
        sample_domain: sampling.describe(m),
        notes,
    }
}

/// Intermediate-sums condition: `Σ b_j f_j, Σ b_j g_j ≤ L1 (Σ z_j + 1)`.
pub fn check_intermediate_sums(
    model: &ReactionModel,
    b: &[f64],
    sampling: SampleBox,
) -> Result<ConditionReport, ModelError> {
    let m = model.components();
    if b.len() != m || b.iter().any(|w| !(*w > 0.0)) {
        return Err(ModelError::Arguments(format!(
            "weights {b:?} must be {m} positive numbers"
        )));
    }
    let fit = linear_condition(model, b, sampling)?;
    Ok(linear_report(
        format!("intermediate-sums b={b:?}"),
        "L1".into(),
        sampling,
        m,
        fit,
    ))
}

/// Condition on every weight vector `a` with `a_m = 1` and other entries `≥ K`:
/// `Σ a_j f_j, Σ a_j g_j ≤ L_a (Σ z_j + 1)`.
pub fn check_vl(
    model: &ReactionModel,
    k: f64,
    a_vectors: &[Vec<f64>],
    sampling: SampleBox,
) -> Result<Vec<ConditionReport>, ModelError> {
    let m = model.components();
    a_vectors
        .iter()
        .map(|a| {
            if a.len() != m
                || a[m - 1] != 1.0
                || a[..m - 1].iter().any(|&x| !(x >= k))
            {
                return Err(ModelError::Arguments(format!(
                    "weight vector {a:?} needs {m} entries, last = 1, others >= {k}"
                )));
            }
            let fit = linear_condition(model, a, sampling)?;
            Ok(linear_report(
                format!("VL a={a:?}"),
                "L_a".into(),
                sampling,
                m,
                fit,
            ))
        })
        .collect()
}

/// Largest degree tried by [`check_polynomial_bound`].
pub const MAX_DEGREE: u32 = 16;

/// Smallest integer `l` such that `|f_i|, |g_i| ≤ K_fg (Σz + 1)^l` with a
/// constant that stops growing along `radii`.
pub fn check_polynomial_bound(
    model: &ReactionModel,
    radii: &[f64],
    count: usize,
) -> Result<ConditionReport, ModelError> {
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] > w[0])) || !(radii[0] > 0.0) {
        return Err(ModelError::Arguments(
            "radii must be positive, increasing, at least two".into(),
        ));
    }
    let m = model.components();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; m];
    // (|h|max, Σz+1) per point per radius
    let mut levels: Vec<Vec<(f64, f64)>> = Vec::new();
    for &r in radii {
        let mut vals = Vec::new();
        for z in (SampleBox { radius: r, count }).points(m) {
            eval_pair(model, &z, &mut f, &mut g)?;
            let h = f.iter().chain(&g).fold(0.0f64, |acc, v| acc.max(v.abs()));
            vals.push((h, z.iter().sum::<f64>() + 1.0));
        }
        levels.push(vals);
    }
    let fit_k = |l: u32| -> Vec<f64> {
        levels
            .iter()
            .map(|vals| {
                vals.iter()
                    .map(|(h, s)| h / s.powi(l as i32))
                    .fold(0.0, f64::max)
            })
            .collect()
    };
    for l in 0..=MAX_DEGREE {
        let ks = fit_k(l);
        let stable = ks
            .windows(2)
            .zip(radii.windows(2))
            .all(|(k, r)| k[1] <= (r[1] / r[0]).sqrt() * k[0] + 1e-300);
        if stable {
            let k_fg = ks.iter().cloned().fold(0.0, f64::max);
            let mut constants = BTreeMap::from([("l".into(), l as f64), ("K_fg".into(), k_fg)]);
            for (r, k) in radii.iter().zip(&ks) {
                constants.insert(format!("K_at_R={r}"), *k);
            }
            return Ok(ConditionReport {
                condition: "polynomial-bound".into(),
                verdict: Verdict::Pass,
                witness: None,
                constants,
                sample_domain: format!("boxes [0,R]^{m} for R in {radii:?}, {count} points each"),
                notes: vec![],
            });
        }
    }
    Ok(ConditionReport {
        condition: "polynomial-bound".into(),
        verdict: Verdict::Inconclusive,
        witness: None,
        constants: BTreeMap::new(),
        sample_domain: format!("boxes [0,R]^{m} for R in {radii:?}"),
        notes: vec![format!("no degree up to {MAX_DEGREE} gives a stable constant")],
    })
}
