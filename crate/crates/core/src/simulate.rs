//! Panels of functional outcomes and the data-generating process.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::basis::QuadratureGrid;
use crate::error::{FnarError, Result};
use crate::interaction::{FunctionOnGrid, InteractionOperator};
use crate::network::NetworkWeights;
use crate::rng::{substream, Stream};

/// Balanced panel: `n` units, `T` periods, outcome curves on a shared grid
/// and `d_x` scalar covariates per unit-period.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalPanel {
    n: usize,
    t: usize,
    dx: usize,
    grid: QuadratureGrid,
    /// `((t * n + i) * G + g)`.
    y: Vec<f64>,
    /// `((t * n + i) * dx + j)`.
    x: Vec<f64>,
}

impl FunctionalPanel {
    /// `y` is ordered period-major (`t * n + i`); `x` likewise with `dx`
    /// values per unit-period.
    pub fn new(
        n: usize,
        t: usize,
        dx: usize,
        grid: QuadratureGrid,
        y: Vec<FunctionOnGrid>,
        x: Vec<f64>,
    ) -> Result<Self> {
        if n == 0 || t == 0 {
            return Err(FnarError::invalid(format!("panel needs n, T >= 1 (got n={n}, T={t})")));
        }
        if y.len() != n * t {
            return Err(FnarError::invalid(format!("expected {} outcome curves, got {}", n * t, y.len())));
        }
        if x.len() != n * t * dx {
            return Err(FnarError::invalid(format!("expected {} covariate values, got {}", n * t * dx, x.len())));
        }
        let g = grid.len();
        let mut flat = Vec::with_capacity(n * t * g);
        for (k, f) in y.iter().enumerate() {
            if f.len() != g {
                return Err(FnarError::invalid(format!(
                    "outcome curve {k} has {} values, grid has {g}",
                    f.len()
                )));
            }
            flat.extend_from_slice(f.values());
        }
        if flat.iter().chain(&x).any(|v| !v.is_finite()) {
            return Err(FnarError::invalid("panel contains non-finite values"));
        }
        Ok(Self {
            n,
            t,
            dx,
            grid,
            y: flat,
            x,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn y(&self, i: usize, t: usize) -> &[f64] {
        let g = self.grid.len();
        let o = (t * self.n + i) * g;
        &self.y[o..o + g]
    }

    pub fn y_mut(&mut self, i: usize, t: usize) -> &mut [f64] {
        let g = self.grid.len();
        let o = (t * self.n + i) * g;
        &mut self.y[o..o + g]
    }

    pub fn x(&self, i: usize, t: usize) -> &[f64] {
        let o = (t * self.n + i) * self.dx;
        &self.x[o..o + self.dx]
    }

    pub fn x_mut(&mut self, i: usize, t: usize) -> &mut [f64] {
        let o = (t * self.n + i) * self.dx;
        &mut self.x[o..o + self.dx]
    }

    /// Outcome curves of period `t`, one per unit.
    pub fn period(&self, t: usize) -> Vec<FunctionOnGrid> {
        (0..self.n)
            .map(|i| FunctionOnGrid::from_vec_unchecked(self.y(i, t).to_vec()))
            .collect()
    }

    /// Keep only the first `t` periods.
    pub fn truncate_periods(&self, t: usize) -> Result<Self> {
        if t == 0 || t > self.t {
            return Err(FnarError::invalid(format!("cannot keep {t} of {} periods", self.t)));
        }
        let g = self.grid.len();
        Ok(Self {
            n: self.n,
            t,
            dx: self.dx,
            grid: self.grid.clone(),
            y: self.y[..t * self.n * g].to_vec(),
            x: self.x[..t * self.n * self.dx].to_vec(),
        })
    }
}

/// Parameters of the data-generating process.
#[derive(Debug, Clone)]
pub struct DgpConfig {
    pub alpha0: FunctionOnGrid,
    pub beta0: Vec<FunctionOnGrid>,
    pub fixed_effects: Vec<FunctionOnGrid>,
    pub operator: InteractionOperator,
    pub weights: NetworkWeights,
    /// Stop the Neumann iteration once the largest change drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Run the iteration even when the stationarity index is at least one.
    pub allow_nonstationary: bool,
}

impl DgpConfig {
    pub fn new(
        alpha0: FunctionOnGrid,
        beta0: Vec<FunctionOnGrid>,
        fixed_effects: Vec<FunctionOnGrid>,
        operator: InteractionOperator,
        weights: NetworkWeights,
    ) -> Result<Self> {
        let g = operator.grid().len();
        if alpha0.len() != g || beta0.iter().chain(&fixed_effects).any(|f| f.len() != g) {
            return Err(FnarError::invalid("DGP functions must live on the operator grid"));
        }
        if fixed_effects.len() != weights.n() {
            return Err(FnarError::invalid(format!(
                "{} fixed effects for {} units",
                fixed_effects.len(),
                weights.n()
            )));
        }
        Ok(Self {
            alpha0,
            beta0,
            fixed_effects,
            operator,
            weights,
            tol: 1e-3,
            max_iter: 10_000,
            allow_nonstationary: false,
        })
    }

    pub fn grid(&self) -> &QuadratureGrid {
        self.operator.grid()
    }

    /// `sup|alpha0| * ||W||_inf * b`; the process is stationary when below one.
    pub fn stationarity_index(&self) -> f64 {
        self.alpha0.sup_norm() * self.weights.row_sup() * self.operator.contraction_bound()
    }
}

/// Converged outcome curves and the number of fixed-point sweeps used.
#[derive(Debug, Clone)]
pub struct NeumannSolution {
    pub y: Vec<FunctionOnGrid>,
    pub iterations: usize,
    pub final_change: f64,
}

/// `(AH)(s) = alpha0(s) * W * A(H, s)` on the grid, rows = units.
fn apply_network_operator(cfg: &DgpConfig, h: &DMatrix<f64>) -> DMatrix<f64> {
    let a = cfg.operator.apply_rows(h);
    let (n, g) = (a.nrows(), a.ncols());
    let mut out = DMatrix::zeros(n, g);
    let alpha = cfg.alpha0.values();
    for i in 0..n {
        for (j, wij) in cfg.weights.matrix().row(i) {
            for k in 0..g {
                out[(i, k)] += wij * a[(j, k)];
            }
        }
        for k in 0..g {
            out[(i, k)] *= alpha[k];
        }
    }
    out
}

/// Solve `Y = AY + rhs` by fixed-point iteration from `Y = rhs`.
pub fn neumann_solve(cfg: &DgpConfig, rhs: &[FunctionOnGrid]) -> Result<NeumannSolution> {
    let n = cfg.weights.n();
    let g = cfg.grid().len();
    if rhs.len() != n || rhs.iter().any(|f| f.len() != g) {
        return Err(FnarError::invalid("right-hand side does not match network and grid"));
    }
    let index = cfg.stationarity_index();
    if index >= 1.0 {
        if !cfg.allow_nonstationary {
            return Err(FnarError::NonStationaryDgp(format!(
                "sup|alpha| * ||W||_inf * b = {index:.4} is not below 1"
            )));
        }
        log::warn!("stationarity index {index:.4} >= 1; iterating anyway");
    }
    let r = DMatrix::from_fn(n, g, |i, k| rhs[i].values()[k]);
    let mut y = r.clone();
    let mut change = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let next = apply_network_operator(cfg, &y) + &r;
        change = (&next - &y).amax();
        y = next;
        if !change.is_finite() {
            break;
        }
        if change < cfg.tol {
            let y = (0..n)
                .map(|i| FunctionOnGrid::from_vec_unchecked(y.row(i).iter().copied().collect()))
                .collect();
            return Ok(NeumannSolution {
                y,
                iterations: it,
                final_change: change,
            });
        }
    }
    Err(FnarError::NonStationaryDgp(format!(
        "Neumann iteration did not converge in {} sweeps (last change {change:.3e})",
        cfg.max_iter
    )))
}

/// `scale * (e1 + e2 s + e3 s^2)` on the grid.
pub fn polynomial_error(grid: &QuadratureGrid, scale: f64, e: [f64; 3]) -> FunctionOnGrid {
    FunctionOnGrid::from_fn(grid, |s| scale * (e[0] + e[1] * s + e[2] * s * s))
}

/// Standard deviation of the polynomial error coefficients.
pub const MC_ERROR_SD: f64 = 0.4;

/// Heteroskedastic error curves `sqrt(1 + deg_i) (e1 + e2 s + e3 s^2)`,
/// `e ~ N(0, 0.4^2)` independent across coefficients, units and periods.
///
/// `deg_i` is the number of neighbours of unit `i`. Ordered period-major.
pub fn gen_mc_errors(n: usize, t: usize, w: &NetworkWeights, grid: &QuadratureGrid, seed: u64) -> Vec<FunctionOnGrid> {
    let normal = Normal::new(0.0, MC_ERROR_SD).expect("valid normal");
    let mut out = Vec::with_capacity(n * t);
    for tt in 0..t {
        for i in 0..n {
            let mut rng = substream(seed, Stream::Error, i as u64, tt as u64);
            let e = [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)];
            let scale = (1.0 + w.degree(i) as f64).sqrt();
            out.push(polynomial_error(grid, scale, e));
        }
    }
    out
}

/// Normal density with mean `mu` and variance `var`.
fn normal_pdf(s: f64, mu: f64, var: f64) -> f64 {
    (-(s - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// The Monte Carlo interaction coefficient `phi(s; 0.4, 0.5^2) + 0.2 s - 0.4 s^2`.
pub fn mc_alpha0(s: f64) -> f64 {
    normal_pdf(s, 0.4, 0.25) + 0.2 * s - 0.4 * s * s
}

/// `r (sqrt(1 + s) + s (1 - s))`.
pub fn mc_beta0(r: f64, s: f64) -> f64 {
    r * ((1.0 + s).sqrt() + s * (1.0 - s))
}

/// `1 + cos(i s)` with the 1-based unit number `i`.
pub fn mc_fixed_effect(i: usize, s: f64) -> f64 {
    1.0 + ((i + 1) as f64 * s).cos()
}

/// Size and signal parameters of the Monte Carlo design.
#[derive(Debug, Clone, PartialEq)]
pub struct McDesign {
    pub n: usize,
    pub t: usize,
    /// Covariate signal strength in `beta0`.
    pub r: f64,
    /// Multiplier applied to `alpha0`; 1 reproduces the reference design.
    pub alpha_scale: f64,
    pub grid_size: usize,
}

impl McDesign {
    pub fn new(n: usize, t: usize, r: f64) -> Self {
        Self {
            n,
            t,
            r,
            alpha_scale: 1.0,
            grid_size: 99,
        }
    }
}

/// Draw one panel from the Monte Carlo design.
///
/// Builds a random lattice network, the Epanechnikov interaction, standard
/// normal covariates and heteroskedastic polynomial errors, then solves each
/// period by Neumann iteration. Returns the panel and the true parameters.
pub fn simulate_mc_panel(design: &McDesign, seed: u64) -> Result<(FunctionalPanel, DgpConfig)> {
    if !(design.r > 0.0) {
        return Err(FnarError::invalid(format!("r must be positive, got {}", design.r)));
    }
    if design.t == 0 {
        return Err(FnarError::invalid("T must be at least 1"));
    }
    let grid = QuadratureGrid::new(design.grid_size)?;
    let w = NetworkWeights::lattice(design.n, seed)?;
    let alpha0 = FunctionOnGrid::from_fn(&grid, |s| design.alpha_scale * mc_alpha0(s));
    let beta0 = vec![FunctionOnGrid::from_fn(&grid, |s| mc_beta0(design.r, s))];
    let fe = (0..design.n)
        .map(|i| FunctionOnGrid::from_fn(&grid, |s| mc_fixed_effect(i, s)))
        .collect();
    let op = InteractionOperator::epanechnikov(&grid);
    let cfg = DgpConfig::new(alpha0, beta0, fe, op, w)?;
    let errors = gen_mc_errors(design.n, design.t, &cfg.weights, &grid, seed);
    let panel = simulate_panel(&cfg, design.t, &errors, seed)?;
    Ok((panel, cfg))
}

/// Draw standard normal covariates (one per `beta0` entry) and solve every
/// period of the model given the error curves (period-major).
pub fn simulate_panel(cfg: &DgpConfig, t: usize, errors: &[FunctionOnGrid], seed: u64) -> Result<FunctionalPanel> {
    let n = cfg.weights.n();
    let dx = cfg.beta0.len();
    let mut x = Vec::with_capacity(n * t * dx);
    for tt in 0..t {
        for i in 0..n {
            let mut rng = substream(seed, Stream::Covariate, i as u64, tt as u64);
            for _ in 0..dx {
                x.push(rng.sample::<f64, _>(rand_distr::StandardNormal));
            }
        }
    }
    simulate_with_covariates(cfg, t, &x, errors)
}

/// Solve every period for given covariates (`(t * n + i) * dx + j`) and errors.
pub fn simulate_with_covariates(
    cfg: &DgpConfig,
    t: usize,
    x: &[f64],
    errors: &[FunctionOnGrid],
) -> Result<FunctionalPanel> {
    let n = cfg.weights.n();
    let dx = cfg.beta0.len();
    let grid = cfg.grid().clone();
    if errors.len() != n * t || x.len() != n * t * dx {
        return Err(FnarError::invalid("errors or covariates do not match n * T"));
    }
    let mut y = Vec::with_capacity(n * t);
    for tt in 0..t {
        let rhs: Vec<FunctionOnGrid> = (0..n)
            .map(|i| {
                let o = tt * n + i;
                let mut f = cfg.fixed_effects[i].clone();
                f.add_scaled(1.0, &errors[o]);
                for (j, b) in cfg.beta0.iter().enumerate() {
                    f.add_scaled(x[o * dx + j], b);
                }
                f
            })
            .collect();
        y.extend(neumann_solve(cfg, &rhs)?.y);
    }
    FunctionalPanel::new(n, t, dx, grid, y, x.to_vec())
}
