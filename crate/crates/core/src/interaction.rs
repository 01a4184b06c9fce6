//! The linear functional `A(h, s)` and the network lag `sum_j w_ij Y_j`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::basis::QuadratureGrid;
use crate::error::{FnarError, Result};
use crate::network::NetworkWeights;

/// Function on `[0, 1]` stored by its values at the quadrature nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionOnGrid {
    values: Vec<f64>,
}

impl FunctionOnGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(g) = values.iter().position(|v| !v.is_finite()) {
            return Err(FnarError::invalid(format!("non-finite function value at node {g}")));
        }
        Ok(Self { values })
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(grid: &QuadratureGrid, c: f64) -> Self {
        Self {
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: &QuadratureGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: &QuadratureGrid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: grid.points().iter().map(|&u| f(u)).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Linear interpolation between nodes, constant beyond the end nodes.
    pub fn eval(&self, grid: &QuadratureGrid, s: f64) -> f64 {
        grid.interpolate(&self.values, s)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    pub fn add_scaled(&mut self, a: f64, other: &FunctionOnGrid) {
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
    }
}

/// Interaction kernel `nu(u, s)` for integral operators.
#[derive(Clone)]
pub enum Kernel {
    /// `scale * 0.75 / h * (1 - ((u - s) / h)^2)_+` with bandwidth `h`.
    ///
    /// `bandwidth = 1, scale = 1` gives `0.75 (1 - (u - s)^2)` on `[0, 1]^2`.
    Epanechnikov { bandwidth: f64, scale: f64 },
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl Kernel {
    pub fn epanechnikov() -> Self {
        Kernel::Epanechnikov {
            bandwidth: 1.0,
            scale: 1.0,
        }
    }

    pub fn value(&self, u: f64, s: f64) -> f64 {
        match self {
            Kernel::Epanechnikov { bandwidth, scale } => {
                let z = (u - s) / bandwidth;
                if z.abs() >= 1.0 {
                    0.0
                } else {
                    scale * 0.75 / bandwidth * (1.0 - z * z)
                }
            }
            Kernel::Custom(f) => f(u, s),
        }
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Epanechnikov { bandwidth, scale } => f
                .debug_struct("Epanechnikov")
                .field("bandwidth", bandwidth)
                .field("scale", scale)
                .finish(),
            Kernel::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
enum OperatorKind {
    PointEval,
    KernelIntegral {
        kernel: Kernel,
        /// Row `s`-node, column `u`-node: `w_u * nu(u, s)`.
        table: DMatrix<f64>,
        nu_max: f64,
    },
    PastWindow {
        width: f64,
    },
}

/// Known linear functional `A(h, s)` acting on functions tabulated on a grid.
#[derive(Debug, Clone)]
pub struct InteractionOperator {
    grid: QuadratureGrid,
    kind: OperatorKind,
}

impl InteractionOperator {
    /// Concurrent interaction `A(h, s) = h(s)`.
    pub fn point_eval(grid: &QuadratureGrid) -> Self {
        Self {
            grid: grid.clone(),
            kind: OperatorKind::PointEval,
        }
    }

    /// `A(h, s) = int_0^1 h(u) nu(u, s) du`, tabulated on the grid.
    pub fn kernel_integral(grid: &QuadratureGrid, kernel: Kernel) -> Result<Self> {
        let g = grid.len();
        let pts = grid.points();
        let mut table = DMatrix::zeros(g, g);
        let mut nu_max: f64 = 0.0;
        for (a, &s) in pts.iter().enumerate() {
            for (b, &u) in pts.iter().enumerate() {
                let v = kernel.value(u, s);
                if !v.is_finite() {
                    return Err(FnarError::invalid(format!("kernel is not finite at u={u}, s={s}")));
                }
                nu_max = nu_max.max(v.abs());
                table[(a, b)] = grid.weights()[b] * v;
            }
        }
        Ok(Self {
            grid: grid.clone(),
            kind: OperatorKind::KernelIntegral {
                kernel,
                table,
                nu_max,
            },
        })
    }

    /// The Epanechnikov interaction `0.75 (1 - (u - s)^2)`.
    pub fn epanechnikov(grid: &QuadratureGrid) -> Self {
        Self::kernel_integral(grid, Kernel::epanechnikov()).expect("Epanechnikov kernel is finite")
    }

    /// Average of `h` over the trailing window `[max(0, s - width), s]`.
    ///
    /// Near `s = 0` the window is truncated and averaged over its own length;
    /// at `s = 0` the operator returns `h(0)`.
    pub fn past_window(grid: &QuadratureGrid, width: f64) -> Result<Self> {
        if !(width > 0.0 && width <= 1.0) {
            return Err(FnarError::invalid(format!("window width must lie in (0, 1], got {width}")));
        }
        Ok(Self {
            grid: grid.clone(),
            kind: OperatorKind::PastWindow { width },
        })
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        match &self.kind {
            OperatorKind::PointEval => "point-eval".into(),
            OperatorKind::KernelIntegral { kernel, .. } => match kernel {
                Kernel::Epanechnikov { bandwidth, scale } if *bandwidth == 1.0 && *scale == 1.0 => {
                    "epanechnikov".into()
                }
                Kernel::Epanechnikov { bandwidth, scale } => {
                    format!("epanechnikov(bandwidth={bandwidth},scale={scale})")
                }
                Kernel::Custom(_) => "kernel".into(),
            },
            OperatorKind::PastWindow { width } => format!("past-window:{width}"),
        }
    }

    fn check(&self, h: &FunctionOnGrid) -> Result<()> {
        if h.len() != self.grid.len() {
            return Err(FnarError::invalid(format!(
                "function has {} values but the operator grid has {}",
                h.len(),
                self.grid.len()
            )));
        }
        Ok(())
    }

    /// `A(h, s)` for any `s` in `[0, 1]`.
    pub fn apply(&self, h: &FunctionOnGrid, s: f64) -> Result<f64> {
        self.check(h)?;
        if !(0.0..=1.0).contains(&s) {
            return Err(FnarError::Domain(format!("interaction evaluated at s = {s}")));
        }
        Ok(self.apply_values(h.values(), s))
    }

    /// Unchecked `A(h, s)` on raw nodal values.
    pub(crate) fn apply_values(&self, h: &[f64], s: f64) -> f64 {
        match &self.kind {
            OperatorKind::PointEval => self.grid.interpolate(h, s),
            OperatorKind::KernelIntegral { kernel, .. } => self
                .grid
                .points()
                .iter()
                .zip(self.grid.weights())
                .zip(h)
                .map(|((&u, &w), &v)| w * v * kernel.value(u, s))
                .sum(),
            OperatorKind::PastWindow { width } => {
                let a = (s - width).max(0.0);
                if s - a <= 1e-14 {
                    self.grid.interpolate(h, s)
                } else {
                    self.grid.integrate_interpolant(h, a, s) / (s - a)
                }
            }
        }
    }

    /// `A(h, u_g)` at every quadrature node.
    pub fn apply_on_grid(&self, h: &FunctionOnGrid) -> Result<FunctionOnGrid> {
        self.check(h)?;
        Ok(FunctionOnGrid::from_vec_unchecked(self.apply_nodes(h.values())))
    }

    pub(crate) fn apply_nodes(&self, h: &[f64]) -> Vec<f64> {
        match &self.kind {
            OperatorKind::PointEval => h.to_vec(),
            OperatorKind::KernelIntegral { table, .. } => {
                (0..table.nrows()).map(|a| table.row(a).iter().zip(h).map(|(t, v)| t * v).sum()).collect()
            }
            OperatorKind::PastWindow { .. } => {
                self.grid.points().iter().map(|&s| self.apply_values(h, s)).collect()
            }
        }
    }

    /// Apply to every row of `h` (rows are functions on the grid).
    pub(crate) fn apply_rows(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.kind {
            OperatorKind::PointEval => h.clone(),
            OperatorKind::KernelIntegral { table, .. } => h * table.transpose(),
            OperatorKind::PastWindow { .. } => {
                let mut out = DMatrix::zeros(h.nrows(), h.ncols());
                for r in 0..h.nrows() {
                    let row: Vec<f64> = h.row(r).iter().copied().collect();
                    for (g, v) in self.apply_nodes(&row).into_iter().enumerate() {
                        out[(r, g)] = v;
                    }
                }
                out
            }
        }
    }

    /// Bound `b` with `||A(h, .)|| <= b ||h||`.
    ///
    /// Point evaluation and window averaging give 1; kernel integrals give the
    /// largest absolute tabulated kernel value.
    pub fn contraction_bound(&self) -> f64 {
        match &self.kind {
            OperatorKind::PointEval | OperatorKind::PastWindow { .. } => 1.0,
            OperatorKind::KernelIntegral { nu_max, .. } => *nu_max,
        }
    }
}

/// `Ybar_i = sum_j w_ij Y_j`, pointwise on the grid.
pub fn network_lag(w: &NetworkWeights, y: &[FunctionOnGrid]) -> Result<Vec<FunctionOnGrid>> {
    if y.len() != w.n() {
        return Err(FnarError::invalid(format!(
            "network has {} units but {} functions were supplied",
            w.n(),
            y.len()
        )));
    }
    let g = y.first().map_or(0, |f| f.len());
    if y.iter().any(|f| f.len() != g) {
        return Err(FnarError::invalid("functions are tabulated on different grids"));
    }
    Ok((0..w.n())
        .map(|i| {
            let mut acc = vec![0.0; g];
            for (j, wij) in w.matrix().row(i) {
                for (a, v) in acc.iter_mut().zip(y[j].values()) {
                    *a += wij * v;
                }
            }
            FunctionOnGrid::from_vec_unchecked(acc)
        })
        .collect())
}
