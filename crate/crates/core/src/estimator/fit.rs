use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::moments::{MomentSpec, MomentSystem};
use super::variance::{estimate_fixed_effects, estimate_variance};
use crate::basis::{BasisSystem, QuadratureGrid};
use crate::error::{FnarError, Result};
use crate::interaction::{FunctionOnGrid, InteractionOperator};
use crate::network::NetworkWeights;
use crate::rng::{substream, Stream};
use crate::simulate::FunctionalPanel;

/// Relative singular-value floor below which a design counts as rank deficient.
pub const RANK_FLOOR: f64 = 1e-10;

/// Weight matrix for the moment vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmegaChoice {
    Identity,
    /// `blockdiag((sum_l Z'D'DZ / N)^{-1}, quad_weight * I_M)`.
    TwoSlsBlock { quad_weight: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    /// Linear and quadratic moments with the instrument-block weight.
    Gmm1,
    /// Linear and quadratic moments with the identity weight.
    Gmm2,
    /// Linear moments only.
    TwoSls,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Gmm1, Estimator::Gmm2, Estimator::TwoSls];

    pub fn omega(self) -> OmegaChoice {
        match self {
            Estimator::Gmm1 => OmegaChoice::TwoSlsBlock { quad_weight: 1.0 },
            Estimator::Gmm2 => OmegaChoice::Identity,
            Estimator::TwoSls => OmegaChoice::TwoSlsBlock { quad_weight: 0.0 },
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Estimator::Gmm1 => "GMM1",
            Estimator::Gmm2 => "GMM2",
            Estimator::TwoSls => "2SLS",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Estimator {
    type Err = FnarError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gmm1" | "gmm-1" => Ok(Estimator::Gmm1),
            "gmm2" | "gmm-2" => Ok(Estimator::Gmm2),
            "2sls" | "tsls" | "two-sls" => Ok(Estimator::TwoSls),
            _ => Err(FnarError::invalid(format!("unknown estimator '{s}' (expected gmm1, gmm2 or 2sls)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop when the gradient's max-norm falls below this.
    pub grad_tol: f64,
    /// Perturbed restarts tried when the first run does not converge.
    pub restarts: usize,
    /// Optional symmetric box on every coefficient.
    pub box_bound: Option<f64>,
    pub variance: bool,
    pub fixed_effects: bool,
    /// Seed for restart perturbations.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-10,
            restarts: 3,
            box_bound: None,
            variance: true,
            fixed_effects: true,
            seed: 0,
        }
    }
}

/// Estimated coefficients, diagnostics and (optionally) their sandwich variance.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub estimator: Estimator,
    pub theta: Vec<f64>,
    pub basis: BasisSystem,
    pub dx: usize,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub objective_trace: Vec<f64>,
    /// Asymptotic variance of `sqrt(n (T - 1)) (theta_hat - theta)`.
    pub sigma: Option<DMatrix<f64>>,
    /// `n (T - 1)`.
    pub n_eff: usize,
    pub fixed_effects: Option<Vec<FunctionOnGrid>>,
}

impl GmmFit {
    fn k(&self) -> usize {
        self.basis.len()
    }

    /// Coefficient block `r` (0 = alpha, `j + 1` = beta_j).
    pub fn block(&self, r: usize) -> &[f64] {
        let k = self.k();
        &self.theta[r * k..(r + 1) * k]
    }

    fn block_value(&self, r: usize, s: f64) -> Result<f64> {
        if r > self.dx {
            return Err(FnarError::invalid(format!("covariate {} out of range", r - 1)));
        }
        self.basis.combine(self.block(r), s)
    }

    pub fn alpha(&self, s: f64) -> Result<f64> {
        self.block_value(0, s)
    }

    pub fn beta(&self, j: usize, s: f64) -> Result<f64> {
        self.block_value(j + 1, s)
    }

    /// `sigma_r(s) = sqrt(phi(s)' Sigma_rr phi(s))`.
    fn sigma_value(&self, r: usize, s: f64) -> Result<f64> {
        let sig = self
            .sigma
            .as_ref()
            .ok_or_else(|| FnarError::VarianceUnavailable("variance was not computed".into()))?;
        if r > self.dx {
            return Err(FnarError::invalid(format!("covariate {} out of range", r - 1)));
        }
        let phi = self.basis.eval(s)?;
        let k = self.k();
        let mut v = 0.0;
        for a in 0..k {
            for b in 0..k {
                v += phi[a] * sig[(r * k + a, r * k + b)] * phi[b];
            }
        }
        Ok(v.max(0.0).sqrt())
    }

    pub fn sigma_alpha(&self, s: f64) -> Result<f64> {
        self.sigma_value(0, s)
    }

    pub fn sigma_beta(&self, j: usize, s: f64) -> Result<f64> {
        self.sigma_value(j + 1, s)
    }

    /// Standard error `sigma(s) / sqrt(n (T - 1))`.
    pub fn se_alpha(&self, s: f64) -> Result<f64> {
        Ok(self.sigma_alpha(s)? / (self.n_eff as f64).sqrt())
    }

    pub fn se_beta(&self, j: usize, s: f64) -> Result<f64> {
        Ok(self.sigma_beta(j, s)? / (self.n_eff as f64).sqrt())
    }

    /// Pointwise 95% interval for `alpha(s)`.
    pub fn ci_alpha(&self, s: f64) -> Result<(f64, f64)> {
        let (a, se) = (self.alpha(s)?, self.se_alpha(s)?);
        Ok((a - 1.96 * se, a + 1.96 * se))
    }

    pub fn ci_beta(&self, j: usize, s: f64) -> Result<(f64, f64)> {
        let (b, se) = (self.beta(j, s)?, self.se_beta(j, s)?);
        Ok((b - 1.96 * se, b + 1.96 * se))
    }

    pub fn alpha_on(&self, grid: &QuadratureGrid) -> FunctionOnGrid {
        self.block_on(0, grid)
    }

    pub fn beta_on(&self, j: usize, grid: &QuadratureGrid) -> FunctionOnGrid {
        self.block_on(j + 1, grid)
    }

    fn block_on(&self, r: usize, grid: &QuadratureGrid) -> FunctionOnGrid {
        let k = self.k();
        let mut phi = vec![0.0; k];
        let th = self.block(r);
        FunctionOnGrid::from_vec_unchecked(
            grid.points()
                .iter()
                .map(|&s| {
                    self.basis.eval_into(s, &mut phi);
                    phi.iter().zip(th).map(|(a, b)| a * b).sum()
                })
                .collect(),
        )
    }
}

/// Symmetric inverse with a relative eigenvalue floor.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(max > 0.0) || !(min > RANK_FLOOR * max) {
        return Err(min.max(0.0));
    }
    let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    Ok(&eig.eigenvectors * inv * eig.eigenvectors.transpose())
}

impl MomentSystem {
    /// The weight matrix `Omega` for `choice`.
    pub fn omega(&self, choice: OmegaChoice) -> Result<DMatrix<f64>> {
        let d = self.n_moments();
        match choice {
            OmegaChoice::Identity => Ok(DMatrix::identity(d, d)),
            OmegaChoice::TwoSlsBlock { quad_weight } => {
                let nl = self.n_linear();
                let big_n = (self.n_eff() * self.moment_points().len()) as f64;
                let zz = &self.suff.zz / big_n;
                let inv = spd_inverse(&zz).map_err(|min| FnarError::Underidentified {
                    detail: "instrument cross-product matrix is singular".into(),
                    min_singular: min,
                })?;
                let mut om = DMatrix::zeros(d, d);
                om.view_mut((0, 0), (nl, nl)).copy_from(&inv);
                for m in nl..d {
                    om[(m, m)] = quad_weight;
                }
                Ok(om)
            }
        }
    }

    /// `gbar' Omega gbar`.
    pub fn objective(&self, theta: &[f64], omega: &DMatrix<f64>) -> Result<f64> {
        let g = self.moments(theta)?;
        Ok(g.dot(&(omega * &g)))
    }
}

fn result_from(sys: &MomentSystem, spec: &MomentSpec, estimator: Estimator, theta: DVector<f64>) -> GmmFit {
    GmmFit {
        estimator,
        theta: theta.iter().copied().collect(),
        basis: spec.basis.clone(),
        dx: sys.dx(),
        objective: f64::NAN,
        iterations: 0,
        converged: true,
        objective_trace: Vec::new(),
        sigma: None,
        n_eff: sys.n_eff(),
        fixed_effects: None,
    }
}

/// Closed-form minimizer of the linear-moment objective with the
/// instrument-block weight.
pub fn fit_2sls(sys: &MomentSystem, spec: &MomentSpec) -> Result<GmmFit> {
    let g = &sys.suff.lin_g;
    let svd = g.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if g.nrows() < g.ncols() || !(max > 0.0) || min < RANK_FLOOR * max {
        return Err(FnarError::Underidentified {
            detail: "instrument-regressor cross moment is rank deficient".into(),
            min_singular: if g.nrows() < g.ncols() { 0.0 } else { min },
        });
    }
    let omega = sys.omega(Estimator::TwoSls.omega())?;
    let nl = sys.n_linear();
    let oz = omega.view((0, 0), (nl, nl));
    let a = g.transpose() * oz * g;
    let b = g.transpose() * oz * &sys.suff.lin_c;
    let theta = a
        .clone()
        .cholesky()
        .map(|c| c.solve(&b))
        .or_else(|| a.lu().solve(&b))
        .ok_or_else(|| FnarError::NumericalFailure("2SLS normal equations are singular".into()))?;
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(FnarError::NumericalFailure("2SLS solution is not finite".into()));
    }
    let mut fit = result_from(sys, spec, Estimator::TwoSls, theta.clone());
    let q = sys.moments_fast(&theta);
    fit.objective = q.dot(&(&omega * &q));
    fit.objective_trace = vec![fit.objective];
    Ok(fit)
}

struct Run {
    theta: DVector<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn clamp(theta: &mut DVector<f64>, bound: Option<f64>) {
    if let Some(b) = bound {
        theta.iter_mut().for_each(|v| *v = v.clamp(-b, b));
    }
}

/// Damped Newton iteration on `gbar' Omega gbar`.
///
/// The step solves `(J' Omega J + S + lambda D) delta = -J' Omega gbar`, where
/// `S = sum_m (Omega gbar)_m 2 C_m` is the exact second-order term of the
/// quadratic moments. When `J' Omega J + S` is not positive definite the
/// damping grows until it is, which falls back towards scaled gradient
/// descent. Only steps that do not increase the objective are accepted.
fn minimize(sys: &MomentSystem, omega: &DMatrix<f64>, start: DVector<f64>, opts: &FitOptions) -> Result<Run> {
    let p = sys.n_params();
    let nl = sys.n_linear();
    let hess: Vec<DMatrix<f64>> = (0..sys.n_quadratic()).map(|m| sys.quad_hessian(m)).collect();
    let objective = |th: &DVector<f64>| {
        let g = sys.moments_fast(th);
        g.dot(&(omega * &g))
    };

    let mut theta = start;
    clamp(&mut theta, opts.box_bound);
    let mut q = objective(&theta);
    if !q.is_finite() {
        return Err(FnarError::NumericalFailure("objective is not finite at the start".into()));
    }
    let mut trace = vec![q];
    let mut lambda = 1e-6;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let g = sys.moments_fast(&theta);
        let j = sys.jacobian_fast(&theta);
        let og = omega * &g;
        let grad = j.transpose() * &og;
        if 2.0 * grad.amax() <= opts.grad_tol {
            converged = true;
            break;
        }
        let jtoj = j.transpose() * omega * &j;
        let mut h = jtoj.clone();
        for (m, hm) in hess.iter().enumerate() {
            h += hm * og[nl + m];
        }
        let scale = (0..p).map(|a| jtoj[(a, a)].abs()).fold(0.0, f64::max).max(1e-300);

        let mut accepted = None;
        while lambda < 1e20 {
            let mut a = h.clone();
            for d in 0..p {
                a[(d, d)] += lambda * scale;
            }
            if let Some(ch) = a.cholesky() {
                let step = -ch.solve(&grad);
                let mut cand = &theta + &step;
                clamp(&mut cand, opts.box_bound);
                let qc = objective(&cand);
                if qc.is_finite() && qc <= q {
                    accepted = Some((cand, qc, step));
                    lambda = (lambda * 0.1).max(1e-12);
                    break;
                }
            }
            lambda *= 10.0;
        }
        iterations += 1;
        let Some((cand, qc, step)) = accepted else {
            // No descent step exists at machine precision.
            converged = 2.0 * grad.amax() <= opts.grad_tol.sqrt() * (1.0 + q);
            break;
        };
        let tiny_step = step.amax() <= 1e-13 * (1.0 + theta.amax());
        let flat = q - qc <= 1e-15 * q.max(f64::MIN_POSITIVE);
        theta = cand;
        q = qc;
        trace.push(q);
        if tiny_step && flat {
            let g = sys.moments_fast(&theta);
            let grad = sys.jacobian_fast(&theta).transpose() * (omega * &g);
            converged = 2.0 * grad.amax() <= opts.grad_tol.sqrt() * (1.0 + q);
            break;
        }
    }
    Ok(Run {
        theta,
        objective: q,
        iterations,
        converged,
        trace,
    })
}

/// Minimize the full quadratic-plus-linear objective, starting from 2SLS.
pub fn fit_gmm(sys: &MomentSystem, spec: &MomentSpec, omega: OmegaChoice, opts: &FitOptions) -> Result<GmmFit> {
    let start = fit_2sls(sys, spec)?;
    let om = sys.omega(omega)?;
    let theta0 = DVector::from_vec(start.theta.clone());
    let mut best = minimize(sys, &om, theta0.clone(), opts)?;
    if !best.converged {
        for k in 0..opts.restarts {
            let mut rng = substream(opts.seed, Stream::Perturbation, k as u64, 0);
            let pert = theta0.map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + 0.1 * (1.0 + v.abs()) * z
            });
            let run = minimize(sys, &om, pert, opts)?;
            let better = (run.converged && !best.converged)
                || (run.converged == best.converged && run.objective < best.objective);
            if better {
                best = run;
            }
            if best.converged {
                break;
            }
        }
        if !best.converged {
            log::warn!("GMM did not converge; returning the best iterate");
        }
    }
    let estimator = match omega {
        OmegaChoice::Identity => Estimator::Gmm2,
        OmegaChoice::TwoSlsBlock { quad_weight: 0.0 } => Estimator::TwoSls,
        OmegaChoice::TwoSlsBlock { .. } => Estimator::Gmm1,
    };
    let mut fit = result_from(sys, spec, estimator, best.theta);
    fit.objective = best.objective;
    fit.iterations = best.iterations;
    fit.converged = best.converged;
    fit.objective_trace = best.trace;
    Ok(fit)
}

/// Build the moment system, fit, and attach variance and fixed effects as
/// requested in `opts`.
pub fn estimate(
    panel: &FunctionalPanel,
    w: &NetworkWeights,
    op: &InteractionOperator,
    spec: &MomentSpec,
    estimator: Estimator,
    opts: &FitOptions,
) -> Result<GmmFit> {
    let sys = MomentSystem::new(panel, w, op, spec)?;
    let mut fit = match estimator {
        Estimator::TwoSls => fit_2sls(&sys, spec)?,
        other => fit_gmm(&sys, spec, other.omega(), opts)?,
    };
    if opts.variance {
        if !fit.converged {
            log::warn!("computing variance at a non-converged iterate");
        }
        let omega = sys.omega(estimator.omega())?;
        fit.sigma = Some(estimate_variance(&sys, &fit.theta, &omega)?);
    }
    if opts.fixed_effects {
        fit.fixed_effects = Some(estimate_fixed_effects(&fit, panel, w, op)?);
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_mc_panel, McDesign};

    fn setup(r: f64, seed: u64) -> (MomentSystem, MomentSpec, crate::simulate::DgpConfig, FunctionalPanel) {
        let (panel, cfg) = simulate_mc_panel(&McDesign::new(40, 5, r), seed).unwrap();
        let basis = BasisSystem::bspline(2, 3, panel.grid()).unwrap();
        let spec = MomentSpec::new(basis, 10, &cfg.weights).unwrap();
        let sys = MomentSystem::new(&panel, &cfg.weights, &cfg.operator, &spec).unwrap();
        (sys, spec, cfg, panel)
    }

    #[test]
    fn zero_quadratic_weight_reproduces_2sls() {
        let (sys, spec, _, _) = setup(1.0, 4);
        let a = fit_2sls(&sys, &spec).unwrap();
        let b = fit_gmm(&sys, &spec, OmegaChoice::TwoSlsBlock { quad_weight: 0.0 }, &FitOptions::default()).unwrap();
        assert!(b.converged);
        for (x, y) in a.theta.iter().zip(&b.theta) {
            assert!((x - y).abs() < 1e-10 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn gmm_converges_and_descends() {
        let (sys, spec, cfg, _) = setup(1.0, 21);
        let fit = fit_gmm(&sys, &spec, Estimator::Gmm1.omega(), &FitOptions::default()).unwrap();
        assert!(fit.converged, "iterations {}", fit.iterations);
        assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        // Objective at the optimum is no larger than at the projected truth.
        let mut theta0 = spec.basis.project(cfg.alpha0.values());
        theta0.extend(spec.basis.project(cfg.beta0[0].values()));
        let om = sys.omega(Estimator::Gmm1.omega()).unwrap();
        assert!(fit.objective <= sys.objective(&theta0, &om).unwrap());
        let q = cfg.grid();
        let a = fit.alpha_on(q);
        let rmse = (a
            .values()
            .iter()
            .zip(cfg.alpha0.values())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / q.len() as f64)
            .sqrt();
        assert!(rmse < 0.3, "{rmse}");
    }

    #[test]
    fn estimator_names() {
        for e in Estimator::ALL {
            assert_eq!(e.label().parse::<Estimator>().unwrap(), e);
        }
        assert!("ols".parse::<Estimator>().is_err());
    }
}
