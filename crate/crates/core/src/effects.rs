//! Network multipliers: marginal effects, impulse responses and key players.

use std::path::Path;

use rayon::prelude::*;

use crate::basis::QuadratureGrid;
use crate::error::{FnarError, Result};
use crate::estimator::GmmFit;
use crate::interaction::{FunctionOnGrid, InteractionOperator};
use crate::io::{fmt, write_table};
use crate::network::NetworkWeights;
use crate::simulate::DgpConfig;

/// Default truncation order of the multiplier series.
pub const DEFAULT_ORDER: usize = 5;

/// Impacts closer than this (relative) count as ties.
const TIE_TOL: f64 = 1e-12;

/// A shock path `eta(s)` hitting one unit.
pub type ShockFunction = FunctionOnGrid;

/// Interaction and covariate functions driving the propagation.
#[derive(Debug, Clone)]
pub struct ModelFunctions {
    pub alpha: FunctionOnGrid,
    pub betas: Vec<FunctionOnGrid>,
    pub operator: InteractionOperator,
}

impl ModelFunctions {
    pub fn new(alpha: FunctionOnGrid, betas: Vec<FunctionOnGrid>, operator: InteractionOperator) -> Result<Self> {
        let g = operator.grid().len();
        if alpha.len() != g || betas.iter().any(|b| b.len() != g) {
            return Err(FnarError::invalid("model functions must live on the operator grid"));
        }
        Ok(Self { alpha, betas, operator })
    }

    /// Estimated functions from a fit, tabulated on the operator grid.
    pub fn from_fit(fit: &GmmFit, operator: &InteractionOperator) -> Self {
        let grid = operator.grid();
        Self {
            alpha: fit.alpha_on(grid),
            betas: (0..fit.dx).map(|j| fit.beta_on(j, grid)).collect(),
            operator: operator.clone(),
        }
    }

    pub fn from_truth(cfg: &DgpConfig) -> Self {
        Self {
            alpha: cfg.alpha0.clone(),
            betas: cfg.beta0.clone(),
            operator: cfg.operator.clone(),
        }
    }

    pub fn grid(&self) -> &QuadratureGrid {
        self.operator.grid()
    }

    /// `sup|alpha| * b`.
    pub fn contraction(&self) -> f64 {
        self.alpha.sup_norm() * self.operator.contraction_bound()
    }
}

/// `gamma(h, s) = alpha(s) A(h, s)`.
fn gamma(alpha: &FunctionOnGrid, op: &InteractionOperator, h: &[f64]) -> Vec<f64> {
    op.apply_nodes(h).iter().zip(alpha.values()).map(|(a, b)| a * b).collect()
}

/// `gamma^ell(h, .)` with `gamma^0 = h`.
pub fn gamma_power(alpha: &FunctionOnGrid, op: &InteractionOperator, h: &FunctionOnGrid, ell: usize) -> Result<FunctionOnGrid> {
    let g = op.grid().len();
    if alpha.len() != g || h.len() != g {
        return Err(FnarError::invalid("functions must live on the operator grid"));
    }
    let mut cur = h.values().to_vec();
    for _ in 0..ell {
        cur = gamma(alpha, op, &cur);
    }
    Ok(FunctionOnGrid::from_vec_unchecked(cur))
}

/// Per-order terms `W^ell e_i gamma^ell(h, .)` and their running sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub unit: usize,
    /// `per_order[ell][k]` is the term of order `ell` for unit `k`.
    pub per_order: Vec<Vec<FunctionOnGrid>>,
    /// Sum over all orders, one function per unit.
    pub cumulative: Vec<FunctionOnGrid>,
}

impl PropagationResult {
    /// Truncation order `S`.
    pub fn order(&self) -> usize {
        self.per_order.len() - 1
    }

    /// Sum of the terms of order `0..=s`.
    pub fn cumulative_through(&self, s: usize) -> Vec<FunctionOnGrid> {
        let n = self.cumulative.len();
        let g = self.cumulative.first().map_or(0, |f| f.len());
        let mut acc = vec![vec![0.0; g]; n];
        for terms in self.per_order.iter().take(s + 1) {
            for (a, t) in acc.iter_mut().zip(terms) {
                for (x, y) in a.iter_mut().zip(t.values()) {
                    *x += y;
                }
            }
        }
        acc.into_iter().map(FunctionOnGrid::from_vec_unchecked).collect()
    }

    /// Write `order,unit,grid_index,value` and `unit,grid_index,value` tables.
    pub fn write(&self, per_order: &Path, cumulative: &Path) -> Result<()> {
        let rows = self.per_order.iter().enumerate().flat_map(|(ell, terms)| {
            terms.iter().enumerate().flat_map(move |(k, f)| {
                f.values()
                    .iter()
                    .enumerate()
                    .map(move |(g, v)| vec![ell.to_string(), k.to_string(), g.to_string(), fmt(*v)])
            })
        });
        write_table(per_order, &["order", "unit", "grid_index", "value"], rows)?;
        let rows = self.cumulative.iter().enumerate().flat_map(|(k, f)| {
            f.values()
                .iter()
                .enumerate()
                .map(move |(g, v)| vec![k.to_string(), g.to_string(), fmt(*v)])
        });
        write_table(cumulative, &["unit", "grid_index", "value"], rows)
    }
}

/// Propagate a function `h` entering at unit `i` through `S` network orders.
pub fn propagate(model: &ModelFunctions, w: &NetworkWeights, i: usize, h: &FunctionOnGrid, order: usize) -> Result<PropagationResult> {
    let n = w.n();
    if i >= n {
        return Err(FnarError::invalid(format!("unit {i} out of range (n = {n})")));
    }
    let g = model.grid().len();
    if h.len() != g {
        return Err(FnarError::invalid("propagated function must live on the operator grid"));
    }
    let mut reach = vec![0.0; n];
    reach[i] = 1.0;
    let mut gam = h.values().to_vec();
    let mut per_order = Vec::with_capacity(order + 1);
    let mut cum = vec![vec![0.0; g]; n];
    for ell in 0..=order {
        if ell > 0 {
            reach = w.apply(&reach);
            gam = gamma(&model.alpha, &model.operator, &gam);
        }
        let terms: Vec<FunctionOnGrid> = reach
            .iter()
            .zip(cum.iter_mut())
            .map(|(&r, c)| {
                let v: Vec<f64> = gam.iter().map(|x| r * x).collect();
                for (a, b) in c.iter_mut().zip(&v) {
                    *a += b;
                }
                FunctionOnGrid::from_vec_unchecked(v)
            })
            .collect();
        per_order.push(terms);
    }
    Ok(PropagationResult {
        unit: i,
        per_order,
        cumulative: cum.into_iter().map(FunctionOnGrid::from_vec_unchecked).collect(),
    })
}

/// Effect on every unit of raising covariate `j` of unit `i`.
pub fn marginal_effects(model: &ModelFunctions, w: &NetworkWeights, i: usize, j: usize, order: usize) -> Result<PropagationResult> {
    let beta = model
        .betas
        .get(j)
        .ok_or_else(|| FnarError::invalid(format!("covariate {j} out of range (d_x = {})", model.betas.len())))?;
    propagate(model, w, i, beta, order)
}

/// Response of every unit to the shock `eta` in unit `i`'s error.
pub fn impulse_response(model: &ModelFunctions, w: &NetworkWeights, i: usize, eta: &ShockFunction, order: usize) -> Result<PropagationResult> {
    propagate(model, w, i, eta, order)
}

/// `int_0^1 1' I(s) ds` over the cumulative response.
pub fn total_impact(result: &PropagationResult, grid: &QuadratureGrid) -> f64 {
    result.cumulative.iter().map(|f| grid.integrate(f.values())).sum()
}

/// Unit whose shock has the largest total impact, with all impacts.
/// Ties go to the lowest index.
pub fn risk_key_player(model: &ModelFunctions, w: &NetworkWeights, eta: &ShockFunction, order: usize) -> Result<(usize, Vec<f64>)> {
    let impacts = (0..w.n())
        .into_par_iter()
        .map(|i| impulse_response(model, w, i, eta, order).map(|r| total_impact(&r, model.grid())))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &v) in impacts.iter().enumerate().skip(1) {
        let b = impacts[best];
        if v > b + TIE_TOL * b.abs().max(v.abs()) {
            best = i;
        }
    }
    Ok((best, impacts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn point_model(q: &QuadratureGrid, alpha: f64, beta: f64) -> ModelFunctions {
        ModelFunctions::new(
            FunctionOnGrid::constant(q, alpha),
            vec![FunctionOnGrid::constant(q, beta)],
            InteractionOperator::point_eval(q),
        )
        .unwrap()
    }

    fn star(n: usize) -> NetworkWeights {
        let mut e = Vec::new();
        for k in 1..n {
            e.push((0, k, 1.0 / (n - 1) as f64));
            e.push((k, 0, 1.0));
        }
        NetworkWeights::from_triplets(n, &e).unwrap()
    }

    #[test]
    fn gamma_power_scalar_recursion() {
        let q = QuadratureGrid::new(7).unwrap();
        let op = InteractionOperator::point_eval(&q);
        let a = FunctionOnGrid::constant(&q, 0.6);
        let h = FunctionOnGrid::constant(&q, 2.0);
        assert_eq!(gamma_power(&a, &op, &h, 0).unwrap(), h);
        for ell in 1..6 {
            let g = gamma_power(&a, &op, &h, ell).unwrap();
            assert!(g.values().iter().all(|v| (v - 0.6f64.powi(ell as i32) * 2.0).abs() < 1e-14));
        }
    }

    #[test]
    fn zero_beta_and_own_effect() {
        let q = QuadratureGrid::new(5).unwrap();
        let w = star(4);
        let m = point_model(&q, 0.5, 0.0);
        let r = marginal_effects(&m, &w, 1, 0, 4).unwrap();
        assert!(r.cumulative.iter().all(|f| f.sup_norm() == 0.0));

        let m = ModelFunctions::new(
            FunctionOnGrid::constant(&q, 0.5),
            vec![FunctionOnGrid::from_fn(&q, |s| 1.0 + s)],
            InteractionOperator::point_eval(&q),
        )
        .unwrap();
        let r = marginal_effects(&m, &w, 2, 0, 0).unwrap();
        for (k, f) in r.cumulative.iter().enumerate() {
            if k == 2 {
                assert_eq!(f, &m.betas[0]);
            } else {
                assert_eq!(f.sup_norm(), 0.0);
            }
        }
        assert!(marginal_effects(&m, &w, 9, 0, 1).is_err());
        assert!(marginal_effects(&m, &w, 0, 3, 1).is_err());
    }

    #[test]
    fn cumulative_equals_sum_of_terms() {
        let q = QuadratureGrid::new(11).unwrap();
        let w = NetworkWeights::lattice(15, 2).unwrap();
        let m = ModelFunctions::new(
            FunctionOnGrid::from_fn(&q, |s| 0.5 - 0.2 * s),
            vec![],
            InteractionOperator::epanechnikov(&q),
        )
        .unwrap();
        let eta = FunctionOnGrid::from_fn(&q, |s| (3.0 * s).sin());
        let r = impulse_response(&m, &w, 3, &eta, 6).unwrap();
        assert_eq!(r.order(), 6);
        assert_eq!(r.cumulative_through(6), r.cumulative);
    }

    #[test]
    fn concurrent_closed_form() {
        let q = QuadratureGrid::new(21).unwrap();
        let w = NetworkWeights::lattice(10, 5).unwrap();
        let alpha = FunctionOnGrid::from_fn(&q, |s| 0.6 * s);
        let beta = FunctionOnGrid::from_fn(&q, |s| 1.0 + s * s);
        let m = ModelFunctions::new(alpha.clone(), vec![beta.clone()], InteractionOperator::point_eval(&q)).unwrap();
        let r = marginal_effects(&m, &w, 4, 0, 30).unwrap();
        let wd = w.to_dense();
        let abar = alpha.sup_norm();
        for (g, &s) in q.points().iter().enumerate() {
            let a = 0.6 * s;
            let mut e = DVector::zeros(10);
            e[4] = beta.values()[g];
            let exact = (DMatrix::identity(10, 10) - &wd * a).lu().solve(&e).unwrap();
            for k in 0..10 {
                let err = (r.cumulative[k].values()[g] - exact[k]).abs();
                assert!(err <= abar.powi(31) / (1.0 - abar) * beta.sup_norm() + 1e-14);
            }
        }
    }

    #[test]
    fn zero_shock_on_subinterval_stays_zero_concurrently() {
        let q = QuadratureGrid::new(40).unwrap();
        let w = NetworkWeights::lattice(12, 1).unwrap();
        let m = point_model(&q, 0.7, 1.0);
        let eta = FunctionOnGrid::from_fn(&q, |s| if s < 0.5 { 0.0 } else { 1.0 });
        let r = impulse_response(&m, &w, 0, &eta, 8).unwrap();
        for f in &r.cumulative {
            for (g, &s) in q.points().iter().enumerate() {
                if s < 0.5 {
                    assert_eq!(f.values()[g], 0.0);
                }
            }
        }
    }

    #[test]
    fn past_window_carries_early_shock_forward() {
        let q = QuadratureGrid::new(99).unwrap();
        let w = NetworkWeights::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let m = ModelFunctions::new(
            FunctionOnGrid::constant(&q, 0.5),
            vec![],
            InteractionOperator::past_window(&q, 0.3).unwrap(),
        )
        .unwrap();
        let eta = FunctionOnGrid::from_fn(&q, |s| if s < 0.3 { 1.0 } else { 0.0 });
        let r = impulse_response(&m, &w, 0, &eta, 5).unwrap();
        // Neighbour responds after the shock has ended.
        let late = q.locate(0.45).0;
        assert!(r.cumulative[1].values()[late] > 0.0);
        assert_eq!(eta.values()[late], 0.0);
    }

    #[test]
    fn key_player_ties_and_star() {
        let q = QuadratureGrid::new(9).unwrap();
        let m = point_model(&q, 0.5, 1.0);
        let zero = FunctionOnGrid::zeros(&q);
        let w = star(6);
        let (k, imp) = risk_key_player(&m, &w, &zero, 5).unwrap();
        assert_eq!(k, 0);
        assert!(imp.iter().all(|&v| v == 0.0));

        let cycle = NetworkWeights::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let eta = FunctionOnGrid::constant(&q, 1.0);
        assert_eq!(risk_key_player(&m, &cycle, &eta, 5).unwrap().0, 0);

        // Brute-force the impacts of every unit on the star and compare.
        let (k, imp) = risk_key_player(&m, &w, &eta, 5).unwrap();
        let brute: Vec<f64> = (0..6)
            .map(|i| total_impact(&impulse_response(&m, &w, i, &eta, 5).unwrap(), &q))
            .collect();
        assert_eq!(imp, brute);
        let max = brute.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(brute[0], max);
        assert_eq!(k, 0);
    }

    #[test]
    fn gamma_contraction_bound() {
        let q = QuadratureGrid::new(99).unwrap();
        let op = InteractionOperator::epanechnikov(&q);
        let a = FunctionOnGrid::from_fn(&q, crate::simulate::mc_alpha0);
        let b = op.contraction_bound() * a.sup_norm();
        for seed in 0..10 {
            let h = FunctionOnGrid::from_fn(&q, |s| ((seed as f64 + 1.0) * 7.0 * s).sin() + 0.3 * seed as f64);
            for ell in 0..6 {
                let g = gamma_power(&a, &op, &h, ell).unwrap();
                assert!(g.sup_norm() <= b.powi(ell as i32) * h.sup_norm() + 1e-14);
            }
        }
    }

    proptest! {
        #[test]
        fn impulse_response_is_linear_in_shock(
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
            e1 in proptest::collection::vec(-1.0f64..1.0, 15),
            e2 in proptest::collection::vec(-1.0f64..1.0, 15),
        ) {
            let q = QuadratureGrid::new(15).unwrap();
            let w = NetworkWeights::lattice(8, 3).unwrap();
            let m = ModelFunctions::new(
                FunctionOnGrid::from_fn(&q, |s| 0.7 - 0.3 * s),
                vec![],
                InteractionOperator::epanechnikov(&q),
            ).unwrap();
            let f1 = FunctionOnGrid::new(e1).unwrap();
            let f2 = FunctionOnGrid::new(e2).unwrap();
            let mut comb = f1.scaled(a);
            comb.add_scaled(b, &f2);
            let r = impulse_response(&m, &w, 2, &comb, 5).unwrap();
            let r1 = impulse_response(&m, &w, 2, &f1, 5).unwrap();
            let r2 = impulse_response(&m, &w, 2, &f2, 5).unwrap();
            for k in 0..8 {
                for g in 0..15 {
                    let lhs = r.cumulative[k].values()[g];
                    let rhs = a * r1.cumulative[k].values()[g] + b * r2.cumulative[k].values()[g];
                    prop_assert!((lhs - rhs).abs() < 1e-12);
                }
            }
        }
    }
}
