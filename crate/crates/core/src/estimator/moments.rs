use nalgebra::{DMatrix, DVector};

use super::instruments::{build_instruments, IvSpec};
use crate::basis::BasisSystem;
use crate::error::{FnarError, Result};
use crate::interaction::InteractionOperator;
use crate::network::{quadratic_weights, NetworkWeights, QuadWeightMatrix};
use crate::simulate::FunctionalPanel;

/// Ingredients of the integrated moment conditions.
#[derive(Debug, Clone)]
pub struct MomentSpec {
    pub basis: BasisSystem,
    /// Number `L` of moment points `l / (L + 1)`.
    pub points: usize,
    pub iv: IvSpec,
    /// Quadratic-moment weight matrices; may be empty.
    pub quad: Vec<QuadWeightMatrix>,
}

impl MomentSpec {
    /// Default instruments and the two standard quadratic weights built from `w`.
    pub fn new(basis: BasisSystem, points: usize, w: &NetworkWeights) -> Result<Self> {
        if points == 0 {
            return Err(FnarError::invalid("need at least one moment point"));
        }
        Ok(Self {
            basis,
            points,
            iv: IvSpec::default(),
            quad: quadratic_weights(w)?,
        })
    }

    pub fn moment_points(&self) -> Vec<f64> {
        (1..=self.points).map(|l| l as f64 / (self.points + 1) as f64).collect()
    }
}

/// First-differenced data at the moment points, cached once per panel.
///
/// Differenced observations are indexed by `o = tt * n + i` for
/// `tt = 0..T-1`, holding `E_{i,tt+1} - E_{i,tt}`. Parameters are ordered
/// `(theta_alpha, theta_1, .., theta_dx)`, each a block of `K` coefficients;
/// linear moments are ordered instrument-major, then basis index.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    n: usize,
    t1: usize,
    k: usize,
    dx: usize,
    d_b: usize,
    d_q: usize,
    points: Vec<f64>,
    phi: Vec<Vec<f64>>,
    /// `l * N0 + o`.
    dy: Vec<f64>,
    /// `l * N0 + o`: differenced `A(Ybar_it, s_l)`.
    da: Vec<f64>,
    /// `o * dx + j`.
    dxv: Vec<f64>,
    /// `o * d_b + c`.
    db: Vec<f64>,
    quad: Vec<QuadWeightMatrix>,
    pub(crate) suff: SufficientStats,
}

/// Exact polynomial representation of the averaged moments:
/// linear part `c - G theta`, quadratic part `a_m - 2 b_m' theta + theta' C_m theta`.
#[derive(Debug, Clone)]
pub(crate) struct SufficientStats {
    pub lin_g: DMatrix<f64>,
    pub lin_c: DVector<f64>,
    pub zz: DMatrix<f64>,
    pub qa: Vec<f64>,
    pub qb: Vec<DVector<f64>>,
    pub qc: Vec<DMatrix<f64>>,
}

impl MomentSystem {
    pub fn new(
        panel: &FunctionalPanel,
        w: &NetworkWeights,
        op: &InteractionOperator,
        spec: &MomentSpec,
    ) -> Result<Self> {
        let (n, t, dx) = (panel.n(), panel.t(), panel.dx());
        if t < 2 {
            return Err(FnarError::CannotDifference(t));
        }
        if op.grid().len() != panel.grid().len() {
            return Err(FnarError::invalid("operator and panel use different grids"));
        }
        if let Some(p) = spec.quad.iter().find(|p| p.dim() != n) {
            return Err(FnarError::invalid(format!("quadratic weight has dimension {}, panel has {n}", p.dim())));
        }
        let inst = build_instruments(panel, w, &spec.iv)?;
        let grid = panel.grid();
        let points = spec.moment_points();
        let k = spec.basis.len();
        let t1 = t - 1;
        let n0 = n * t1;
        let lc = points.len();

        let phi: Vec<Vec<f64>> = points
            .iter()
            .map(|&s| {
                let mut v = vec![0.0; k];
                spec.basis.eval_into(s, &mut v);
                v
            })
            .collect();

        // Network lags of outcomes, then levels at each moment point.
        let mut ylev = vec![0.0; lc * n * t];
        let mut alev = vec![0.0; lc * n * t];
        for tt in 0..t {
            let ys: Vec<&[f64]> = (0..n).map(|i| panel.y(i, tt)).collect();
            let g = grid.len();
            for i in 0..n {
                let mut ybar = vec![0.0; g];
                for (j, wij) in w.matrix().row(i) {
                    for (a, v) in ybar.iter_mut().zip(ys[j]) {
                        *a += wij * v;
                    }
                }
                for (l, &s) in points.iter().enumerate() {
                    let idx = (l * t + tt) * n + i;
                    ylev[idx] = grid.interpolate(ys[i], s);
                    alev[idx] = op.apply_values(&ybar, s);
                }
            }
        }
        let mut dy = vec![0.0; lc * n0];
        let mut da = vec![0.0; lc * n0];
        for l in 0..lc {
            for tt in 0..t1 {
                for i in 0..n {
                    let now = (l * t + tt) * n + i;
                    let next = (l * t + tt + 1) * n + i;
                    dy[l * n0 + tt * n + i] = ylev[next] - ylev[now];
                    da[l * n0 + tt * n + i] = alev[next] - alev[now];
                }
            }
        }
        let mut dxv = vec![0.0; n0 * dx];
        let d_b = inst.d_b();
        let mut db = vec![0.0; n0 * d_b];
        for tt in 0..t1 {
            for i in 0..n {
                let o = tt * n + i;
                for j in 0..dx {
                    dxv[o * dx + j] = panel.x(i, tt + 1)[j] - panel.x(i, tt)[j];
                }
                let (b0, b1) = (inst.row(i, tt), inst.row(i, tt + 1));
                for c in 0..d_b {
                    db[o * d_b + c] = b1[c] - b0[c];
                }
            }
        }

        let mut sys = Self {
            n,
            t1,
            k,
            dx,
            d_b,
            d_q: inst.d_q(),
            points,
            phi,
            dy,
            da,
            dxv,
            db,
            quad: spec.quad.clone(),
            suff: SufficientStats {
                lin_g: DMatrix::zeros(0, 0),
                lin_c: DVector::zeros(0),
                zz: DMatrix::zeros(0, 0),
                qa: Vec::new(),
                qb: Vec::new(),
                qc: Vec::new(),
            },
        };
        sys.suff = sys.sufficient_stats();
        Ok(sys)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `T - 1`.
    pub fn differenced_periods(&self) -> usize {
        self.t1
    }

    /// `n (T - 1)`.
    pub fn n_eff(&self) -> usize {
        self.n * self.t1
    }

    pub fn basis_len(&self) -> usize {
        self.k
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    pub fn d_q(&self) -> usize {
        self.d_q
    }

    /// `(d_x + 1) K`.
    pub fn n_params(&self) -> usize {
        (self.dx + 1) * self.k
    }

    /// `(d_q + d_x) K`.
    pub fn n_linear(&self) -> usize {
        self.d_b * self.k
    }

    pub fn n_quadratic(&self) -> usize {
        self.quad.len()
    }

    /// `(d_q + d_x) K + M`.
    pub fn n_moments(&self) -> usize {
        self.n_linear() + self.n_quadratic()
    }

    pub fn moment_points(&self) -> &[f64] {
        &self.points
    }

    pub fn quad_weights(&self) -> &[QuadWeightMatrix] {
        &self.quad
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(FnarError::invalid(format!(
                "theta has length {}, expected {}",
                theta.len(),
                self.n_params()
            )));
        }
        Ok(())
    }

    /// Differenced regressor `r` (0 = interaction, 1.. = covariates) for observation `o`.
    #[inline]
    fn dr(&self, l: usize, o: usize, r: usize) -> f64 {
        if r == 0 {
            self.da[l * self.n_eff() + o]
        } else {
            self.dxv[o * self.dx + r - 1]
        }
    }

    /// `(alpha(s_l), beta_1(s_l), ..)` implied by `theta`.
    fn functions_at(&self, l: usize, theta: &[f64]) -> Vec<f64> {
        let k = self.k;
        (0..=self.dx)
            .map(|r| self.phi[l].iter().zip(&theta[r * k..(r + 1) * k]).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Differenced residuals at moment point `l`.
    pub(crate) fn residuals_at(&self, l: usize, theta: &[f64]) -> Vec<f64> {
        let c = self.functions_at(l, theta);
        let n0 = self.n_eff();
        (0..n0)
            .map(|o| {
                let mut e = self.dy[l * n0 + o];
                for (r, cr) in c.iter().enumerate() {
                    e -= self.dr(l, o, r) * cr;
                }
                e
            })
            .collect()
    }

    pub(crate) fn db_row(&self, o: usize) -> &[f64] {
        &self.db[o * self.d_b..(o + 1) * self.d_b]
    }

    pub(crate) fn phi(&self, l: usize) -> &[f64] {
        &self.phi[l]
    }

    /// `g(s_l; theta)`, assembled from adjacent-period differences.
    pub fn moments_at(&self, l: usize, theta: &[f64]) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        if l >= self.points.len() {
            return Err(FnarError::invalid(format!("moment point {l} out of range")));
        }
        Ok(self.moments_at_unchecked(l, theta))
    }

    fn moments_at_unchecked(&self, l: usize, theta: &[f64]) -> DVector<f64> {
        let (n, k, d_b) = (self.n, self.k, self.d_b);
        let n0 = self.n_eff() as f64;
        let e = self.residuals_at(l, theta);
        let mut g = DVector::zeros(self.n_moments());
        let mut v = vec![0.0; d_b];
        for (o, eo) in e.iter().enumerate() {
            for (vc, bc) in v.iter_mut().zip(self.db_row(o)) {
                *vc += bc * eo;
            }
        }
        for c in 0..d_b {
            for kk in 0..k {
                g[c * k + kk] = v[c] * self.phi[l][kk] / n0;
            }
        }
        for (m, p) in self.quad.iter().enumerate() {
            let s: f64 = (0..self.t1).map(|tt| p.quad_form(&e[tt * n..(tt + 1) * n])).sum();
            g[self.n_linear() + m] = s / n0;
        }
        g
    }

    /// `J(s_l; theta)`.
    pub fn jacobian_at(&self, l: usize, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        if l >= self.points.len() {
            return Err(FnarError::invalid(format!("moment point {l} out of range")));
        }
        Ok(self.jacobian_at_unchecked(l, theta))
    }

    fn jacobian_at_unchecked(&self, l: usize, theta: &[f64]) -> DMatrix<f64> {
        let (n, k, d_b, nr) = (self.n, self.k, self.d_b, self.dx + 1);
        let n0 = self.n_eff();
        let phi = &self.phi[l];
        let mut j = DMatrix::zeros(self.n_moments(), self.n_params());

        let mut s = vec![0.0; d_b * nr];
        for o in 0..n0 {
            let b = self.db_row(o);
            for r in 0..nr {
                let dr = self.dr(l, o, r);
                for c in 0..d_b {
                    s[c * nr + r] += b[c] * dr;
                }
            }
        }
        for c in 0..d_b {
            for r in 0..nr {
                for a in 0..k {
                    for bb in 0..k {
                        j[(c * k + a, r * k + bb)] = -s[c * nr + r] * phi[a] * phi[bb] / n0 as f64;
                    }
                }
            }
        }

        let e = self.residuals_at(l, theta);
        let mut pe = vec![0.0; n];
        for (m, p) in self.quad.iter().enumerate() {
            let mut acc = vec![0.0; nr];
            for tt in 0..self.t1 {
                p.apply(&e[tt * n..(tt + 1) * n], &mut pe);
                for (i, pei) in pe.iter().enumerate() {
                    let o = tt * n + i;
                    for (r, ar) in acc.iter_mut().enumerate() {
                        *ar += pei * self.dr(l, o, r);
                    }
                }
            }
            let row = self.n_linear() + m;
            for r in 0..nr {
                for a in 0..k {
                    j[(row, r * k + a)] = -2.0 * acc[r] * phi[a] / n0 as f64;
                }
            }
        }
        j
    }

    /// `gbar(theta) = L^{-1} sum_l g(s_l; theta)`.
    pub fn moments(&self, theta: &[f64]) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        let mut g = DVector::zeros(self.n_moments());
        for l in 0..self.points.len() {
            g += self.moments_at_unchecked(l, theta);
        }
        Ok(g / self.points.len() as f64)
    }

    /// `Jbar(theta) = L^{-1} sum_l J(s_l; theta)`.
    pub fn jacobian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let mut j = DMatrix::zeros(self.n_moments(), self.n_params());
        for l in 0..self.points.len() {
            j += self.jacobian_at_unchecked(l, theta);
        }
        Ok(j / self.points.len() as f64)
    }

    fn sufficient_stats(&self) -> SufficientStats {
        let (n, k, d_b, nr) = (self.n, self.k, self.d_b, self.dx + 1);
        let n0 = self.n_eff();
        let p = self.n_params();
        let nl = self.n_linear();
        let lc = self.points.len();
        let scale = 1.0 / (lc as f64 * n0 as f64);

        let mut lin_g = DMatrix::zeros(nl, p);
        let mut lin_c = DVector::zeros(nl);
        let mut zz = DMatrix::zeros(nl, nl);
        let mut qa = vec![0.0; self.quad.len()];
        let mut qb = vec![DVector::zeros(p); self.quad.len()];
        let mut qc = vec![DMatrix::zeros(p, p); self.quad.len()];

        let mut bb = DMatrix::<f64>::zeros(d_b, d_b);
        for o in 0..n0 {
            let b = self.db_row(o);
            for c in 0..d_b {
                for c2 in 0..d_b {
                    bb[(c, c2)] += b[c] * b[c2];
                }
            }
        }

        let mut col = vec![0.0; n];
        let mut pcol = vec![0.0; n];
        for l in 0..lc {
            let phi = &self.phi[l];
            let phiphi = DMatrix::from_fn(k, k, |a, b| phi[a] * phi[b]);

            let mut br = DMatrix::<f64>::zeros(d_b, nr);
            let mut by = DVector::<f64>::zeros(d_b);
            for o in 0..n0 {
                let b = self.db_row(o);
                let y = self.dy[l * n0 + o];
                for c in 0..d_b {
                    by[c] += b[c] * y;
                    for r in 0..nr {
                        br[(c, r)] += b[c] * self.dr(l, o, r);
                    }
                }
            }
            for c in 0..d_b {
                for a in 0..k {
                    lin_c[c * k + a] += by[c] * phi[a] * scale;
                    for r in 0..nr {
                        for b2 in 0..k {
                            lin_g[(c * k + a, r * k + b2)] += br[(c, r)] * phiphi[(a, b2)] * scale;
                        }
                    }
                    for c2 in 0..d_b {
                        for b2 in 0..k {
                            zz[(c * k + a, c2 * k + b2)] += bb[(c, c2)] * phiphi[(a, b2)];
                        }
                    }
                }
            }

            // Columns: 0..nr regressors, nr = outcome.
            for (m, pm) in self.quad.iter().enumerate() {
                let mut rr = DMatrix::<f64>::zeros(nr + 1, nr + 1);
                for tt in 0..self.t1 {
                    let cols: Vec<Vec<f64>> = (0..=nr)
                        .map(|r| {
                            (0..n)
                                .map(|i| {
                                    let o = tt * n + i;
                                    if r < nr {
                                        self.dr(l, o, r)
                                    } else {
                                        self.dy[l * n0 + o]
                                    }
                                })
                                .collect()
                        })
                        .collect();
                    for r2 in 0..=nr {
                        col.copy_from_slice(&cols[r2]);
                        pm.apply(&col, &mut pcol);
                        for r1 in 0..=nr {
                            rr[(r1, r2)] += cols[r1].iter().zip(&pcol).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                qa[m] += rr[(nr, nr)] * scale;
                for r in 0..nr {
                    for a in 0..k {
                        qb[m][r * k + a] += rr[(r, nr)] * phi[a] * scale;
                        for r2 in 0..nr {
                            for b2 in 0..k {
                                qc[m][(r * k + a, r2 * k + b2)] += rr[(r, r2)] * phiphi[(a, b2)] * scale;
                            }
                        }
                    }
                }
            }
        }
        SufficientStats {
            lin_g,
            lin_c,
            zz,
            qa,
            qb,
            qc,
        }
    }

    /// Averaged moments from the cached polynomial representation.
    pub(crate) fn moments_fast(&self, theta: &DVector<f64>) -> DVector<f64> {
        let s = &self.suff;
        let mut g = DVector::zeros(self.n_moments());
        let lin = &s.lin_c - &s.lin_g * theta;
        g.rows_mut(0, self.n_linear()).copy_from(&lin);
        for m in 0..self.quad.len() {
            let ct = &s.qc[m] * theta;
            g[self.n_linear() + m] = s.qa[m] - 2.0 * s.qb[m].dot(theta) + theta.dot(&ct);
        }
        g
    }

    pub(crate) fn jacobian_fast(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let s = &self.suff;
        let mut j = DMatrix::zeros(self.n_moments(), self.n_params());
        j.rows_mut(0, self.n_linear()).copy_from(&(-&s.lin_g));
        for m in 0..self.quad.len() {
            let row = (&s.qc[m] * theta - &s.qb[m]) * 2.0;
            j.row_mut(self.n_linear() + m).copy_from(&row.transpose());
        }
        j
    }

    /// Constant Hessians `2 C_m` of the quadratic moments.
    pub(crate) fn quad_hessian(&self, m: usize) -> DMatrix<f64> {
        &self.suff.qc[m] * 2.0
    }
}
