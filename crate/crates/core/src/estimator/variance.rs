use nalgebra::{DMatrix, DVector};

use super::fit::{spd_inverse, GmmFit};
use super::moments::MomentSystem;
use crate::error::{FnarError, Result};
use crate::interaction::{network_lag, FunctionOnGrid, InteractionOperator};
use crate::network::NetworkWeights;
use crate::simulate::FunctionalPanel;

/// Eigenvalues of the sandwich below `-PSD_TOL * max` trigger a warning before clipping.
const PSD_TOL: f64 = 1e-10;

/// Long-run variance of `sqrt(n (T - 1)) gbar` at `theta`, allowing for the
/// first-order serial dependence created by differencing. Linear and
/// quadratic blocks are uncorrelated.
pub fn moment_covariance(sys: &MomentSystem, theta: &[f64]) -> Result<DMatrix<f64>> {
    let (n, t1, k) = (sys.n(), sys.differenced_periods(), sys.basis_len());
    let n0 = sys.n_eff();
    let lc = sys.moment_points().len();
    let nl = sys.n_linear();
    let d_b = nl / k;
    if theta.len() != sys.n_params() {
        return Err(FnarError::invalid("theta length does not match the moment system"));
    }

    let res: Vec<Vec<f64>> = (0..lc).map(|l| sys.residuals_at(l, theta)).collect();

    // u_o = dB_o (x) (L^{-1} sum_l phi_l e_lo).
    let u: Vec<DVector<f64>> = (0..n0)
        .map(|o| {
            let mut w = vec![0.0; k];
            for (l, r) in res.iter().enumerate() {
                for (wk, pk) in w.iter_mut().zip(sys.phi(l)) {
                    *wk += pk * r[o] / lc as f64;
                }
            }
            let b = sys.db_row(o);
            DVector::from_fn(nl, |idx, _| b[idx / k] * w[idx % k])
        })
        .collect();
    debug_assert_eq!(d_b * k, nl);

    let d = sys.n_moments();
    let mut v = DMatrix::zeros(d, d);
    {
        let mut vz = v.view_mut((0, 0), (nl, nl));
        for i in 0..n {
            for tt in 0..t1 {
                let a = &u[tt * n + i];
                let lo = tt.saturating_sub(1);
                let hi = (tt + 1).min(t1 - 1);
                for t2 in lo..=hi {
                    vz.ger(1.0 / n0 as f64, a, &u[t2 * n + i], 1.0);
                }
            }
        }
    }

    // c_ij,tt = L^{-1} sum_l e_i e_j.
    let quad = sys.quad_weights();
    let c = |i: usize, j: usize, tt: usize| -> f64 {
        res.iter().map(|r| r[tt * n + i] * r[tt * n + j]).sum::<f64>() / lc as f64
    };
    for a in 0..quad.len() {
        for b in a..quad.len() {
            let mut acc = 0.0;
            for (i, j, pa) in quad[a].matrix().triplets() {
                let pb = quad[b].get(i, j);
                if pb == 0.0 {
                    continue;
                }
                let cs: Vec<f64> = (0..t1).map(|tt| c(i, j, tt)).collect();
                let mut band = 0.0;
                for tt in 0..t1 {
                    let lo = tt.saturating_sub(1);
                    let hi = (tt + 1).min(t1 - 1);
                    for t2 in lo..=hi {
                        band += cs[tt] * cs[t2];
                    }
                }
                acc += pa * pb * band;
            }
            let val = 2.0 * acc / n0 as f64;
            v[(nl + a, nl + b)] = val;
            v[(nl + b, nl + a)] = val;
        }
    }
    Ok(v)
}

/// Sandwich `(J' W J)^{-1} J' W V W J (J' W J)^{-1}` at `theta`, clipped to
/// the positive semidefinite cone.
pub fn estimate_variance(sys: &MomentSystem, theta: &[f64], omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let j = sys.jacobian(theta)?;
    let v = moment_covariance(sys, theta)?;
    let jo = j.transpose() * omega;
    let bread = &jo * &j;
    let inv = spd_inverse(&bread)
        .map_err(|min| FnarError::VarianceUnavailable(format!("J' Omega J is singular (smallest eigenvalue {min:.3e})")))?;
    let meat = &jo * v * jo.transpose();
    let s = &inv * meat * &inv;
    let s = (&s + s.transpose()) * 0.5;
    if s.iter().any(|x| !x.is_finite()) {
        return Err(FnarError::VarianceUnavailable("sandwich is not finite".into()));
    }
    let eig = s.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(s);
    }
    if min < -PSD_TOL * max {
        log::warn!("variance estimate has eigenvalue {min:.3e}; clipping to zero");
    }
    let clipped = eig.eigenvalues.map(|x| x.max(0.0));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose())
}

/// `f_i(s) = T^{-1} sum_t (Y_it(s) - alpha(s) A(Ybar_it, s) - X_it' beta(s))` on the grid.
pub fn estimate_fixed_effects(
    fit: &GmmFit,
    panel: &FunctionalPanel,
    w: &NetworkWeights,
    op: &InteractionOperator,
) -> Result<Vec<FunctionOnGrid>> {
    let (n, t, dx) = (panel.n(), panel.t(), panel.dx());
    if dx != fit.dx {
        return Err(FnarError::invalid("fit and panel have different covariate counts"));
    }
    if t == 1 {
        log::warn!("fixed effects from a single period are not consistent");
    }
    let grid = panel.grid();
    let g = grid.len();
    let alpha = fit.alpha_on(grid);
    let betas: Vec<FunctionOnGrid> = (0..dx).map(|j| fit.beta_on(j, grid)).collect();
    let mut acc = vec![vec![0.0; g]; n];
    for tt in 0..t {
        let lag = network_lag(w, &panel.period(tt))?;
        for i in 0..n {
            let a = op.apply_nodes(lag[i].values());
            let y = panel.y(i, tt);
            let x = panel.x(i, tt);
            for k in 0..g {
                let mut r = y[k] - alpha.values()[k] * a[k];
                for j in 0..dx {
                    r -= x[j] * betas[j].values()[k];
                }
                acc[i][k] += r / t as f64;
            }
        }
    }
    Ok(acc.into_iter().map(FunctionOnGrid::from_vec_unchecked).collect())
}
