//! Structured node grid on the reference box with boundary faces and
//! trapezoidal quadrature on the box and on its surface.
//!
//! Nodes are stored row-major: axis 0 varies slowest.

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Low,
    High,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Low => -1.0,
            Side::High => 1.0,
        }
    }
}

/// One face of the box: `x_axis = 0` (Low) or `x_axis = extent` (High).
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
    /// Linear node indices on the face, in face-local row-major order.
    pub nodes: Vec<usize>,
    /// Trapezoid weights for the face measure, aligned with `nodes`.
    pub weights: Vec<f64>,
}

impl Face {
    /// Unit outward normal `±e_axis`.
    pub fn normal(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[self.axis] = self.side.sign();
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    extents: Vec<f64>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    weights: Vec<f64>,
    faces: Vec<Face>,
}

/// Node count above which node loops run in parallel.
pub(crate) const PAR_THRESHOLD: usize = 4096;

fn trapezoid_1d(count: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; count];
    w[0] = h / 2.0;
    w[count - 1] = h / 2.0;
    w
}

impl Grid {
    pub fn new(extents: &[f64], counts: &[usize]) -> Result<Self, GridError> {
        let n = extents.len();
        if !(1..=3).contains(&n) {
            return Err(GridError::Invalid(format!("dimension {n} not in 1..=3")));
        }
        if counts.len() != n {
            return Err(GridError::Invalid(format!(
                "{} node counts for {n} extents",
                counts.len()
            )));
        }
        if let Some(c) = counts.iter().find(|&&c| c < 3) {
            return Err(GridError::Invalid(format!("need at least 3 nodes per axis, got {c}")));
        }
        if let Some(e) = extents.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return Err(GridError::Invalid(format!("extent {e} must be positive")));
        }
        let spacing: Vec<f64> = extents
            .iter()
            .zip(counts)
            .map(|(e, &c)| e / (c - 1) as f64)
            .collect();
        let mut strides = vec![1; n];
        for k in (0..n - 1).rev() {
            strides[k] = strides[k + 1] * counts[k + 1];
        }
        let axis_w: Vec<Vec<f64>> = counts
            .iter()
            .zip(&spacing)
            .map(|(&c, &h)| trapezoid_1d(c, h))
            .collect();
        let total: usize = counts.iter().product();
        let mut idx = vec![0; n];
        let mut weights = Vec::with_capacity(total);
        for lin in 0..total {
            unravel(lin, counts, &mut idx);
            weights.push((0..n).map(|k| axis_w[k][idx[k]]).product());
        }
        let mut faces = Vec::with_capacity(2 * n);
        for axis in 0..n {
            for side in [Side::Low, Side::High] {
                let fixed = match side {
                    Side::Low => 0,
                    Side::High => counts[axis] - 1,
                };
                let mut nodes = Vec::new();
                let mut fw = Vec::new();
                for lin in 0..total {
                    unravel(lin, counts, &mut idx);
                    if idx[axis] != fixed {
                        continue;
                    }
                    nodes.push(lin);
                    fw.push(
                        (0..n)
                            .filter(|&k| k != axis)
                            .map(|k| axis_w[k][idx[k]])
                            .product(),
                    );
                }
                faces.push(Face {
                    axis,
                    side,
                    nodes,
                    weights: fw,
                });
            }
        }
        Ok(Self {
            extents: extents.to_vec(),
            counts: counts.to_vec(),
            spacing,
            strides,
            weights,
            faces,
        })
    }

    /// Unit box `[0,1]^n` with `count` nodes per axis.
    pub fn unit(n: usize, count: usize) -> Result<Self, GridError> {
        Self::new(&vec![1.0; n], &vec![count; n])
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, axis: usize, side: Side) -> &Face {
        &self.faces[2 * axis + usize::from(side == Side::High)]
    }

    /// Bulk trapezoid weights, one per node.
    pub fn bulk_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn index_of(&self, lin: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        unravel(lin, &self.counts, &mut idx);
        idx
    }

    pub fn coords(&self, lin: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.coords_into(lin, &mut x);
        x
    }

    pub fn coords_into(&self, lin: usize, x: &mut [f64]) {
        let mut rem = lin;
        for k in 0..self.dim() {
            let i = rem / self.strides[k];
            rem %= self.strides[k];
            x[k] = i as f64 * self.spacing[k];
        }
    }

    /// Sample a function of position at every node.
    pub fn sample<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let n = self.dim();
        let eval = |lin: usize| {
            let mut x = [0.0; 3];
            self.coords_into(lin, &mut x[..n]);
            f(&x[..n])
        };
        if self.len() >= PAR_THRESHOLD {
            (0..self.len()).into_par_iter().map(eval).collect()
        } else {
            (0..self.len()).map(eval).collect()
        }
    }

    pub(crate) fn check_shape(&self, field: &[f64]) -> Result<(), GridError> {
        if field.len() != self.len() {
            return Err(GridError::Shape {
                expected: self.len(),
                got: field.len(),
            });
        }
        Ok(())
    }

    /// Trapezoidal `∫_Ω φ dx`.
    pub fn integrate_bulk(&self, field: &[f64]) -> Result<f64, GridError> {
        self.check_shape(field)?;
        Ok(self.weights.iter().zip(field).map(|(w, v)| w * v).sum())
    }

    /// Trapezoidal `∫_Γ φ dσ` over nodal values; edge and corner nodes count
    /// once per face they belong to, with that face's weight.
    pub fn integrate_boundary(&self, field: &[f64]) -> Result<f64, GridError> {
        self.check_shape(field)?;
        Ok(self
            .faces
            .iter()
            .map(|f| {
                f.nodes
                    .iter()
                    .zip(&f.weights)
                    .map(|(&i, w)| w * field[i])
                    .sum::<f64>()
            })
            .sum())
    }

    /// `∫_Γ` of per-face trace values as returned by [`trace`](Self::trace).
    pub fn integrate_trace(&self, traces: &[Vec<f64>]) -> f64 {
        self.faces
            .iter()
            .zip(traces)
            .map(|(f, tr)| f.weights.iter().zip(tr).map(|(w, v)| w * v).sum::<f64>())
            .sum()
    }

    /// Restriction of nodal values to each face, in face order.
    pub fn trace(&self, field: &[f64]) -> Result<Vec<Vec<f64>>, GridError> {
        self.check_shape(field)?;
        Ok(self
            .faces
            .iter()
            .map(|f| f.nodes.iter().map(|&i| field[i]).collect())
            .collect())
    }

    /// Total box volume and surface area (sum of the quadrature weights).
    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }

    pub fn surface_area(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|axis| {
                2.0 * (0..n)
                    .filter(|&k| k != axis)
                    .map(|k| self.extents[k])
                    .product::<f64>()
            })
            .sum()
    }

    /// Face-local index of a node that lies on the face normal to `axis`.
    pub(crate) fn face_local(&self, idx: &[usize], axis: usize) -> usize {
        let mut out = 0;
        for k in 0..self.dim() {
            if k != axis {
                out = out * self.counts[k] + idx[k];
            }
        }
        out
    }
}

/// `m` nodal component arrays at one time stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub t: f64,
    pub components: Vec<Vec<f64>>,
}

impl StateField {
    pub fn new(t: f64, components: Vec<Vec<f64>>) -> Self {
        Self { t, components }
    }

    /// Spatially constant state.
    pub fn uniform(grid: &Grid, t: f64, values: &[f64]) -> Self {
        Self::new(t, values.iter().map(|&v| vec![v; grid.len()]).collect())
    }

    pub fn components_len(&self) -> usize {
        self.components.len()
    }

    pub fn check(&self, grid: &Grid) -> Result<(), GridError> {
        for c in &self.components {
            grid.check_shape(c)?;
        }
        Ok(())
    }

    /// All component values at one node.
    pub fn node_values(&self, lin: usize, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c[lin];
        }
    }

    /// Max over components and nodes of `|u|`.
    pub fn sup_norm(&self) -> f64 {
        self.components
            .iter()
            .flatten()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.components
            .iter()
            .flatten()
            .fold(f64::INFINITY, |acc, &v| acc.min(v))
    }

    /// First non-finite entry as `(component, node)`.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.components.iter().enumerate().find_map(|(c, v)| {
            v.iter().position(|x| !x.is_finite()).map(|i| (c, i))
        })
    }
}

fn unravel(mut lin: usize, counts: &[usize], idx: &mut [usize]) {
    for k in (0..counts.len()).rev() {
        idx[k] = lin % counts[k];
        lin /= counts[k];
    }
}
