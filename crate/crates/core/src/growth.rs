//! Dilational domain evolution `Ω_t = A(t) Ω` with `A(t) = diag(λ_1(t), …, λ_n(t))`.
//!
//! A [`GrowthLaw`] yields the per-axis scale factors, the volume factor that
//! weights integrals on the moving domain, and the dilution rate `a(t)`, the
//! logarithmic derivative of that volume factor, which appears as the `-a(t) u`
//! sink in the pulled-back operator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError, Scope};

/// Slack for time arguments that land on the horizon up to rounding.
const HORIZON_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrowthError {
    #[error("time {t} outside the growth horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("invalid growth law: {0}")]
    Validation(String),
    #[error("growth law not admissible at t = {t}: {reason}")]
    Admissibility { t: f64, reason: String },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Which volume Jacobian the pulled-back operator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    /// `sqrt(Π λ_i)`, the factor written in the source model.
    #[default]
    PaperSqrt,
    /// `Π λ_i = det A(t)`, the usual change-of-variables factor.
    StandardDet,
}

/// Closed-form per-axis scale factor `λ(t)` with its symbolic derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisLaw {
    source: String,
    value: Expr,
    rate: Expr,
}

impl AxisLaw {
    pub fn parse(src: &str) -> Result<Self, GrowthError> {
        let scope = Scope::new(&["t"]);
        let value = Expr::parse(src, &scope)?;
        let rate = value.derivative(0);
        Ok(Self {
            source: src.to_string(),
            value,
            rate,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    fn eval(&self, t: f64) -> f64 {
        self.value.eval(&[t])
    }

    fn eval_rate(&self, t: f64) -> f64 {
        self.rate.eval(&[t])
    }
}

/// Sampled scale factors `λ_i(t_j)` interpolated with a monotone cubic.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    times: Vec<f64>,
    /// `samples[i][j] = λ_i(t_j)`
    samples: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(times: Vec<f64>, samples: Vec<Vec<f64>>) -> Result<Self, GrowthError> {
        if times.len() < 2 {
            return Err(GrowthError::Validation(
                "a growth table needs at least two samples".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(GrowthError::Validation(format!(
                "growth table must start at t = 0, got {}",
                times[0]
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GrowthError::Validation(
                "growth table times must be strictly increasing".into(),
            ));
        }
        for (axis, col) in samples.iter().enumerate() {
            if col.len() != times.len() {
                return Err(GrowthError::Validation(format!(
                    "axis {axis}: {} samples for {} times",
                    col.len(),
                    times.len()
                )));
            }
            if let Some((j, v)) = col.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(GrowthError::Validation(format!(
                    "axis {axis}: non-positive scale factor {v} at t = {}",
                    times[j]
                )));
            }
            if col[0] != 1.0 {
                return Err(GrowthError::Validation(format!(
                    "axis {axis}: scale factor at t = 0 must be 1, got {}",
                    col[0]
                )));
            }
        }
        let slopes = samples
            .iter()
            .map(|col| monotone_slopes(&times, col))
            .collect();
        Ok(Self {
            times,
            samples,
            slopes,
        })
    }

    /// Smallest spacing between consecutive sample times.
    pub fn min_spacing(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn eval(&self, axis: usize, t: f64) -> f64 {
        let ts = &self.times;
        let ys = &self.samples[axis];
        let ms = &self.slopes[axis];
        let k = match ts.partition_point(|&x| x <= t) {
            0 => 0,
            p if p >= ts.len() => ts.len() - 2,
            p => p - 1,
        };
        let h = ts[k + 1] - ts[k];
        let s = ((t - ts[k]) / h).clamp(0.0, 1.0);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * ys[k] + h10 * h * ms[k] + h01 * ys[k + 1] + h11 * h * ms[k + 1]
    }
}

/// Fritsch–Carlson slopes for a shape-preserving piecewise cubic Hermite fit.
fn monotone_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let delta: Vec<f64> = (0..n - 1)
        .map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k]))
        .collect();
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for k in 1..n - 1 {
        m[k] = if delta[k - 1] * delta[k] <= 0.0 {
            0.0
        } else {
            (delta[k - 1] + delta[k]) / 2.0
        };
    }
    for k in 0..n - 1 {
        if delta[k] == 0.0 {
            m[k] = 0.0;
            m[k + 1] = 0.0;
            continue;
        }
        let a = m[k] / delta[k];
        let b = m[k + 1] / delta[k];
        let r = a * a + b * b;
        if r > 9.0 {
            let tau = 3.0 / r.sqrt();
            m[k] = tau * a * delta[k];
            m[k + 1] = tau * b * delta[k];
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub enum GrowthKind {
    Static,
    /// `λ(t) = exp(ρ t)` on every axis.
    IsotropicExponential { rho: f64 },
    /// `λ(t) = S / (1 + (S - 1) exp(-ρ t))` on every axis, saturating at `S`.
    IsotropicLogistic { rho: f64, saturation: f64 },
    PerAxis(Vec<AxisLaw>),
    /// `step` is the centered-difference step for the dilution rate.
    Tabulated { table: Table, step: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthLaw {
    kind: GrowthKind,
    n: usize,
    horizon: f64,
    jacobian: JacobianMode,
}

/// Dilution rate together with an accuracy flag for tabulated laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DilutionRate {
    pub value: f64,
    /// Set when a one-sided difference had to be used (table ends).
    pub reduced_accuracy: bool,
}

/// Empirical admissibility constants over a time window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBounds {
    /// `min_{i,t} 1/λ_i(t)^2`
    pub lambda1: f64,
    /// `max_{i,t} 1/λ_i(t)^2`
    pub lambda2: f64,
    /// `min_t a(t)`
    pub k1: f64,
    /// `max_t a(t)`
    pub k2: f64,
}

impl GrowthLaw {
    pub fn new(kind: GrowthKind, n: usize, horizon: f64) -> Result<Self, GrowthError> {
        if !(1..=3).contains(&n) {
            return Err(GrowthError::Validation(format!(
                "spatial dimension must be 1, 2 or 3, got {n}"
            )));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(GrowthError::Validation(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        match &kind {
            GrowthKind::Static => {}
            GrowthKind::IsotropicExponential { rho } => {
                if !rho.is_finite() {
                    return Err(GrowthError::Validation("rho must be finite".into()));
                }
            }
            GrowthKind::IsotropicLogistic { rho, saturation } => {
                if !rho.is_finite() || !(*saturation > 0.0) {
                    return Err(GrowthError::Validation(
                        "logistic growth needs finite rho and positive saturation".into(),
                    ));
                }
            }
            GrowthKind::PerAxis(axes) => {
                if axes.len() != n {
                    return Err(GrowthError::Validation(format!(
                        "{} per-axis laws for dimension {n}",
                        axes.len()
                    )));
                }
                for (i, ax) in axes.iter().enumerate() {
                    let v0 = ax.eval(0.0);
                    if (v0 - 1.0).abs() > 1e-14 {
                        return Err(GrowthError::Validation(format!(
                            "axis {i}: λ(0) = {v0} for \"{}\", must be 1",
                            ax.source()
                        )));
                    }
                }
            }
            GrowthKind::Tabulated { table, step } => {
                if table.samples.len() != n {
                    return Err(GrowthError::Validation(format!(
                        "table has {} axes for dimension {n}",
                        table.samples.len()
                    )));
                }
                if table.end() < horizon * (1.0 - HORIZON_SLACK) {
                    return Err(GrowthError::Validation(format!(
                        "table ends at {} before the horizon {horizon}",
                        table.end()
                    )));
                }
                if !(*step > 0.0) {
                    return Err(GrowthError::Validation(
                        "derivative step must be positive".into(),
                    ));
                }
            }
        }
        Ok(Self {
            kind,
            n,
            horizon,
            jacobian: JacobianMode::default(),
        })
    }

    pub fn stationary(n: usize, horizon: f64) -> Self {
        Self::new(GrowthKind::Static, n, horizon).expect("valid static law")
    }

    pub fn isotropic_exponential(rho: f64, n: usize, horizon: f64) -> Result<Self, GrowthError> {
        Self::new(GrowthKind::IsotropicExponential { rho }, n, horizon)
    }

    pub fn per_axis<S: AsRef<str>>(
        exprs: &[S],
        horizon: f64,
    ) -> Result<Self, GrowthError> {
        let axes = exprs
            .iter()
            .map(|s| AxisLaw::parse(s.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        let n = axes.len();
        Self::new(GrowthKind::PerAxis(axes), n, horizon)
    }

    /// Tabulated law whose derivative step defaults to the table spacing.
    pub fn tabulated(table: Table, horizon: f64) -> Result<Self, GrowthError> {
        let step = table.min_spacing();
        let n = table.samples.len();
        Self::new(GrowthKind::Tabulated { table, step }, n, horizon)
    }

    pub fn with_jacobian(mut self, mode: JacobianMode) -> Self {
        self.jacobian = mode;
        self
    }

    pub fn kind(&self) -> &GrowthKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn jacobian(&self) -> JacobianMode {
        self.jacobian
    }

    pub fn is_static(&self) -> bool {
        matches!(self.kind, GrowthKind::Static)
    }

    fn check_time(&self, t: f64) -> Result<(), GrowthError> {
        let slack = HORIZON_SLACK * self.horizon.max(1.0);
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(GrowthError::OutOfHorizon {
                t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    /// Scale factor on one axis, without the horizon check.
    fn lambda(&self, axis: usize, t: f64) -> f64 {
        match &self.kind {
            GrowthKind::Static => 1.0,
            GrowthKind::IsotropicExponential { rho } => (rho * t).exp(),
            GrowthKind::IsotropicLogistic { rho, saturation } => {
                saturation / (1.0 + (saturation - 1.0) * (-rho * t).exp())
            }
            GrowthKind::PerAxis(axes) => axes[axis].eval(t),
            GrowthKind::Tabulated { table, .. } => table.eval(axis, t),
        }
    }

    /// `(λ_1(t), …, λ_n(t))`.
    pub fn scales(&self, t: f64) -> Result<Vec<f64>, GrowthError> {
        self.check_time(t)?;
        let out: Vec<f64> = (0..self.n).map(|i| self.lambda(i, t)).collect();
        if let Some(bad) = out.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(GrowthError::Admissibility {
                t,
                reason: format!("scale factor {bad} is not positive and finite"),
            });
        }
        Ok(out)
    }

    /// Volume factor `J(t)`: `sqrt(Π λ_i)` or `Π λ_i` depending on the Jacobian mode.
    pub fn volume_factor(&self, t: f64) -> Result<f64, GrowthError> {
        let prod: f64 = self.scales(t)?.iter().product();
        Ok(match self.jacobian {
            JacobianMode::PaperSqrt => prod.sqrt(),
            JacobianMode::StandardDet => prod,
        })
    }

    /// `Σ_i λ_i'(t)/λ_i(t)`, the logarithmic derivative of `Π λ_i`.
    fn log_det_rate(&self, t: f64) -> Result<DilutionRate, GrowthError> {
        let exact = |value| DilutionRate {
            value,
            reduced_accuracy: false,
        };
        Ok(match &self.kind {
            GrowthKind::Static => exact(0.0),
            GrowthKind::IsotropicExponential { rho } => exact(rho * self.n as f64),
            GrowthKind::IsotropicLogistic { rho, saturation } => {
                let lam = self.lambda(0, t);
                exact(self.n as f64 * rho * (1.0 - lam / saturation))
            }
            GrowthKind::PerAxis(axes) => exact(
                axes.iter()
                    .map(|ax| ax.eval_rate(t) / ax.eval(t))
                    .sum::<f64>(),
            ),
            GrowthKind::Tabulated { step, .. } => {
                let log_det = |s: f64| -> f64 { (0..self.n).map(|i| self.lambda(i, s).ln()).sum() };
                let h = *step;
                if t - h >= 0.0 && t + h <= self.horizon {
                    exact((log_det(t + h) - log_det(t - h)) / (2.0 * h))
                } else if t + h <= self.horizon {
                    DilutionRate {
                        value: (log_det(t + h) - log_det(t)) / h,
                        reduced_accuracy: true,
                    }
                } else {
                    DilutionRate {
                        value: (log_det(t) - log_det(t - h)) / h,
                        reduced_accuracy: true,
                    }
                }
            }
        })
    }

    /// Dilution rate `a(t) = J'(t)/J(t)` with the accuracy flag.
    pub fn dilution_rate_detailed(&self, t: f64) -> Result<DilutionRate, GrowthError> {
        self.check_time(t)?;
        let mut r = self.log_det_rate(t)?;
        if self.jacobian == JacobianMode::PaperSqrt {
            r.value *= 0.5;
        }
        Ok(r)
    }

    pub fn dilution_rate(&self, t: f64) -> Result<f64, GrowthError> {
        self.dilution_rate_detailed(t).map(|r| r.value)
    }

    /// `∫_0^t a(s) ds = ln J(t)`.
    pub fn integrated_dilution(&self, t: f64) -> Result<f64, GrowthError> {
        Ok(self.volume_factor(t)?.ln())
    }

    /// Empirical `Λ1, Λ2, k1, k2` over a uniform sample of `[0, T]`.
    pub fn verify_bounds(&self, samples: usize) -> Result<GrowthBounds, GrowthError> {
        self.verify_bounds_on(0.0, self.horizon, samples)
    }

    /// As [`verify_bounds`](Self::verify_bounds) on a sub-window `[t0, t1]`.
    pub fn verify_bounds_on(
        &self,
        t0: f64,
        t1: f64,
        samples: usize,
    ) -> Result<GrowthBounds, GrowthError> {
        if samples < 2 {
            return Err(GrowthError::Validation(format!(
                "need at least 2 samples, got {samples}"
            )));
        }
        if t1 < t0 {
            return Err(GrowthError::Validation(format!(
                "empty window [{t0}, {t1}]"
            )));
        }
        let mut b = GrowthBounds {
            lambda1: f64::INFINITY,
            lambda2: f64::NEG_INFINITY,
            k1: f64::INFINITY,
            k2: f64::NEG_INFINITY,
        };
        for j in 0..samples {
            let t = t0 + (t1 - t0) * j as f64 / (samples - 1) as f64;
            let scales = self.scales(t)?;
            for lam in scales {
                let inv = 1.0 / (lam * lam);
                if !inv.is_finite() {
                    return Err(GrowthError::Admissibility {
                        t,
                        reason: format!("1/λ² = {inv} is not finite"),
                    });
                }
                b.lambda1 = b.lambda1.min(inv);
                b.lambda2 = b.lambda2.max(inv);
            }
            let a = self.dilution_rate(t)?;
            if !a.is_finite() {
                return Err(GrowthError::Admissibility {
                    t,
                    reason: format!("dilution rate {a} is not finite"),
                });
            }
            b.k1 = b.k1.min(a);
            b.k2 = b.k2.max(a);
        }
        Ok(b)
    }
}
