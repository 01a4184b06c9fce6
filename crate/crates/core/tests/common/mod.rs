//! Fixtures and the dense moment oracle shared by the integration tests.

#![allow(dead_code)]

use fnar::estimator::{MomentSpec, MomentSystem};
use fnar::{BasisSystem, FunctionOnGrid, FunctionalPanel, InteractionOperator, NetworkWeights, QuadratureGrid};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRID: usize = 11;

pub struct Fixture {
    pub panel: FunctionalPanel,
    pub w: NetworkWeights,
    pub op: InteractionOperator,
    pub spec: MomentSpec,
}

pub fn network(n: usize) -> NetworkWeights {
    match n {
        2 => NetworkWeights::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap(),
        3 => NetworkWeights::from_triplets(
            3,
            &[(0, 1, 0.5), (0, 2, 0.5), (1, 0, 1.0), (2, 0, 0.3), (2, 1, 0.7)],
        )
        .unwrap(),
        _ => unreachable!(),
    }
}

pub fn operators(q: &QuadratureGrid) -> Vec<InteractionOperator> {
    vec![
        InteractionOperator::point_eval(q),
        InteractionOperator::epanechnikov(q),
        InteractionOperator::past_window(q, 0.3).unwrap(),
    ]
}

pub fn random_panel(n: usize, t: usize, dx: usize, q: &QuadratureGrid, rng: &mut ChaCha8Rng) -> FunctionalPanel {
    let y = (0..n * t)
        .map(|_| FunctionOnGrid::new((0..q.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let x = (0..n * t * dx).map(|_| rng.random_range(-1.0..1.0)).collect();
    FunctionalPanel::new(n, t, dx, q.clone(), y, x).unwrap()
}

/// Every `n <= 3`, `T <= 3`, `K <= 2` combination with both `d_x = 1, 2`,
/// three operators and two moment-point counts.
pub fn fixtures() -> Vec<Fixture> {
    let q = QuadratureGrid::new(GRID).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out = Vec::new();
    for n in 2..=3 {
        for t in 2..=3 {
            for (knots, degree) in [(0, 0), (0, 1), (1, 0)] {
                for dx in 1..=2 {
                    for op in operators(&q) {
                        for points in [1, 3] {
                            let w = network(n);
                            let basis = BasisSystem::bspline(knots, degree, &q).unwrap();
                            let spec = MomentSpec::new(basis, points, &w).unwrap();
                            let panel = random_panel(n, t, dx, &q, &mut rng);
                            out.push(Fixture { panel, w, op: op.clone(), spec });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Stacked `Y(s)`, `H(s)`, `Z(s)` with rows ordered `t * n + i`.
pub fn stacked(f: &Fixture, s: f64) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let p = &f.panel;
    let (n, t, dx) = (p.n(), p.t(), p.dx());
    let q = p.grid();
    let phi = f.spec.basis.eval(s).unwrap();
    let k = phi.len();
    let wd = f.w.to_dense();
    let y = DVector::from_fn(n * t, |r, _| q.interpolate(p.y(r % n, r / n), s));
    let mut h = DMatrix::zeros(n * t, (dx + 1) * k);
    let orders = &f.spec.iv.orders;
    let d_b = orders.len() * dx + dx;
    let mut z = DMatrix::zeros(n * t, d_b * k);
    for tt in 0..t {
        let xt = DMatrix::from_fn(n, dx, |i, j| p.x(i, tt)[j]);
        let ybar: Vec<FunctionOnGrid> = (0..n)
            .map(|i| {
                let mut v = vec![0.0; q.len()];
                for j in 0..n {
                    for (g, a) in v.iter_mut().enumerate() {
                        *a += wd[(i, j)] * p.y(j, tt)[g];
                    }
                }
                FunctionOnGrid::new(v).unwrap()
            })
            .collect();
        let lags: Vec<DMatrix<f64>> = orders
            .iter()
            .map(|&o| (0..o).fold(xt.clone(), |acc, _| &wd * acc))
            .collect();
        for i in 0..n {
            let r = tt * n + i;
            let a = f.op.apply(&ybar[i], s).unwrap();
            let mut b = Vec::with_capacity(d_b);
            for lag in &lags {
                b.extend((0..dx).map(|j| lag[(i, j)]));
            }
            b.extend((0..dx).map(|j| xt[(i, j)]));
            for kk in 0..k {
                h[(r, kk)] = a * phi[kk];
                for j in 0..dx {
                    h[(r, (j + 1) * k + kk)] = xt[(i, j)] * phi[kk];
                }
                for (c, bc) in b.iter().enumerate() {
                    z[(r, c * k + kk)] = bc * phi[kk];
                }
            }
        }
    }
    (y, h, z)
}

pub fn difference_matrix(n: usize, t: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n * (t - 1), n * t);
    for tt in 0..t - 1 {
        for i in 0..n {
            d[(tt * n + i, (tt + 1) * n + i)] = 1.0;
            d[(tt * n + i, tt * n + i)] = -1.0;
        }
    }
    d
}

pub fn block_diag(p: &DMatrix<f64>, copies: usize) -> DMatrix<f64> {
    let n = p.nrows();
    let mut out = DMatrix::zeros(n * copies, n * copies);
    for c in 0..copies {
        out.view_mut((c * n, c * n), (n, n)).copy_from(p);
    }
    out
}

/// Dense `g(s; theta)` and its Jacobian.
pub fn dense_at(f: &Fixture, s: f64, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, t) = (f.panel.n(), f.panel.t());
    let n0 = (n * (t - 1)) as f64;
    let (y, h, z) = stacked(f, s);
    let d = difference_matrix(n, t);
    let e = &y - &h * theta;
    let de = &d * &e;
    let dh = &d * &h;
    let dz = &d * &z;
    let nl = z.ncols();
    let m = f.spec.quad.len();
    let mut g = DVector::zeros(nl + m);
    let mut j = DMatrix::zeros(nl + m, theta.len());
    g.rows_mut(0, nl).copy_from(&(dz.transpose() * &de / n0));
    j.view_mut((0, 0), (nl, theta.len())).copy_from(&(-(dz.transpose() * &dh) / n0));
    for (mi, pm) in f.spec.quad.iter().enumerate() {
        let big = block_diag(&pm.to_dense(), t - 1);
        g[nl + mi] = de.dot(&(&big * &de)) / n0;
        let grad = -(dh.transpose() * (&big + big.transpose()) * &de) / n0;
        j.row_mut(nl + mi).copy_from(&grad.transpose());
    }
    (g, j)
}

pub fn random_theta(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-1.0..1.0))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}


/// Largest absolute gap between streaming and dense moments and Jacobians,
/// per point and averaged, over every fixture.
pub fn oracle_deviation() -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fx = fixtures();
    let mut worst = 0.0f64;
    for f in &fx {
        let sys = MomentSystem::new(&f.panel, &f.w, &f.op, &f.spec).unwrap();
        let theta = random_theta(sys.n_params(), &mut rng);
        let pts = f.spec.moment_points();
        let mut gbar = DVector::zeros(sys.n_moments());
        let mut jbar = DMatrix::zeros(sys.n_moments(), sys.n_params());
        for (l, &s) in pts.iter().enumerate() {
            let (g, j) = dense_at(f, s, &theta);
            let gs = sys.moments_at(l, theta.as_slice()).unwrap();
            let js = sys.jacobian_at(l, theta.as_slice()).unwrap();
            worst = worst.max(max_abs_diff(g.as_slice(), gs.as_slice()));
            worst = worst.max(max_abs_diff(j.as_slice(), js.as_slice()));
            gbar += g / pts.len() as f64;
            jbar += j / pts.len() as f64;
        }
        let gs = sys.moments(theta.as_slice()).unwrap();
        let js = sys.jacobian(theta.as_slice()).unwrap();
        worst = worst.max(max_abs_diff(gbar.as_slice(), gs.as_slice()));
        worst = worst.max(max_abs_diff(jbar.as_slice(), js.as_slice()));
    }
    (fx.len(), worst)
}

/// Relative Frobenius error of the analytic Jacobian against central
/// differences on each of `cases` random panels.
pub fn finite_difference_errors(cases: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = QuadratureGrid::new(GRID).unwrap();
    (0..cases)
        .map(|case| {
            let n = 2 + case % 2;
            let t = 2 + (case / 2) % 2;
            let w = network(n);
            let basis = BasisSystem::bspline(case % 3, 1, &q).unwrap();
            let spec = MomentSpec::new(basis, 4, &w).unwrap();
            let panel = random_panel(n, t, 1 + case % 2, &q, &mut rng);
            let op = operators(&q).swap_remove(case % 3);
            let sys = MomentSystem::new(&panel, &w, &op, &spec).unwrap();
            let theta = random_theta(sys.n_params(), &mut rng);
            let j = sys.jacobian(theta.as_slice()).unwrap();
            let h = 1e-5;
            let mut fd = DMatrix::zeros(j.nrows(), j.ncols());
            for c in 0..theta.len() {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[c] += h;
                dn[c] -= h;
                let diff = (sys.moments(up.as_slice()).unwrap() - sys.moments(dn.as_slice()).unwrap()) / (2.0 * h);
                fd.set_column(c, &diff);
            }
            (&fd - &j).norm() / j.norm()
        })
        .collect()
}

/// Largest change in the averaged moments after adding a random
/// time-invariant function to every unit's outcomes.
pub fn fixed_effect_shift() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for f in fixtures().iter().step_by(3) {
        let sys = MomentSystem::new(&f.panel, &f.w, &f.op, &f.spec).unwrap();
        let theta = random_theta(sys.n_params(), &mut rng);
        let mut shifted = f.panel.clone();
        for i in 0..shifted.n() {
            let fe: Vec<f64> = (0..GRID).map(|_| rng.random_range(-3.0..3.0)).collect();
            for tt in 0..shifted.t() {
                for (y, c) in shifted.y_mut(i, tt).iter_mut().zip(&fe) {
                    *y += c;
                }
            }
        }
        let sys2 = MomentSystem::new(&shifted, &f.w, &f.op, &f.spec).unwrap();
        let a = sys.moments(theta.as_slice()).unwrap();
        let b = sys2.moments(theta.as_slice()).unwrap();
        worst = worst.max(max_abs_diff(a.as_slice(), b.as_slice()));
    }
    worst
}
