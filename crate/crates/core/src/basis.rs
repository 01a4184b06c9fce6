//! Quadrature on `(0, 1)` and Gram-Schmidt orthonormalized B-spline bases.
//!
//! Every inner product in the crate goes through the same [`QuadratureGrid`],
//! so a basis built here is orthonormal with respect to exactly the rule used
//! during estimation.

use nalgebra::DMatrix;

use crate::error::{FnarError, Result};

/// Equally spaced interior nodes `l / (G + 1)` with uniform weights `1 / G`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(FnarError::invalid(format!(
                "quadrature needs at least 2 points, got {count}"
            )));
        }
        let denom = (count + 1) as f64;
        let points = (1..=count).map(|l| l as f64 / denom).collect();
        let weights = vec![1.0 / count as f64; count];
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Quadrature approximation of `int_0^1 f(s) ds` for `f` tabulated on the nodes.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Quadrature inner product `<f, g>`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter()
            .zip(g)
            .zip(&self.weights)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    /// Index `g` and fraction `t` such that `s` lies at `(1 - t) u_g + t u_{g+1}`.
    ///
    /// Points outside `[u_1, u_G]` clamp to the first or last node.
    pub fn locate(&self, s: f64) -> (usize, f64) {
        let pts = &self.points;
        let last = pts.len() - 1;
        if s <= pts[0] {
            return (0, 0.0);
        }
        if s >= pts[last] {
            return (last - 1, 1.0);
        }
        let hi = pts.partition_point(|&u| u <= s);
        let lo = hi - 1;
        let t = (s - pts[lo]) / (pts[hi] - pts[lo]);
        (lo, t)
    }

    /// Piecewise-linear interpolation of nodal values with constant extension
    /// beyond the first and last node.
    pub fn interpolate(&self, values: &[f64], s: f64) -> f64 {
        let (g, t) = self.locate(s);
        if t == 0.0 {
            values[g]
        } else {
            values[g] * (1.0 - t) + values[g + 1] * t
        }
    }

    /// Exact integral over `[a, b]` of the piecewise-linear interpolant of `values`.
    pub fn integrate_interpolant(&self, values: &[f64], a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let pts = &self.points;
        let start = pts.partition_point(|&u| u <= a);
        let mut x0 = a;
        let mut f0 = self.interpolate(values, a);
        let mut acc = 0.0;
        for g in start..pts.len() {
            if pts[g] >= b {
                break;
            }
            acc += 0.5 * (f0 + values[g]) * (pts[g] - x0);
            x0 = pts[g];
            f0 = values[g];
        }
        let fb = self.interpolate(values, b);
        acc + 0.5 * (f0 + fb) * (b - x0)
    }
}

/// Clamped B-spline basis on `[0, 1]` with equally spaced inner knots.
#[derive(Debug, Clone, PartialEq)]
struct BSpline {
    degree: usize,
    knots: Vec<f64>,
}

impl BSpline {
    fn new(inner_knots: usize, degree: usize) -> Self {
        let mut knots = vec![0.0; degree + 1];
        let step = 1.0 / (inner_knots + 1) as f64;
        knots.extend((1..=inner_knots).map(|j| j as f64 * step));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self { degree, knots }
    }

    fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Values of all raw basis functions at `s` (Cox-de Boor on the active span).
    fn values_into(&self, s: f64, out: &mut [f64]) {
        let p = self.degree;
        let t = &self.knots;
        let nb = self.len();
        out.fill(0.0);
        // Last basis index whose span starts at or before s; s = 1 uses the final span.
        let span = if s >= t[nb] {
            nb - 1
        } else {
            (t.partition_point(|&k| k <= s) - 1).clamp(p, nb - 1)
        };
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = s - t[span + 1 - j];
            right[j] = t[span + j] - s;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        for (r, v) in n.into_iter().enumerate() {
            out[span - p + r] = v;
        }
    }
}

/// `K` continuous functions on `[0, 1]`, orthonormal under the quadrature rule.
///
/// Each `phi_k` is a linear combination of clamped B-splines; row `k` of the
/// transform holds its raw-spline coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSystem {
    spline: BSpline,
    inner_knots: usize,
    coeffs: DMatrix<f64>,
    quad: QuadratureGrid,
}

impl BasisSystem {
    /// Orthonormalize the `inner_knots + degree + 1` B-splines against `quad`.
    ///
    /// Modified Gram-Schmidt in index order, with one re-orthogonalization pass.
    pub fn bspline(inner_knots: usize, degree: usize, quad: &QuadratureGrid) -> Result<Self> {
        let spline = BSpline::new(inner_knots, degree);
        let k = spline.len();
        if quad.len() < 2 * k {
            return Err(FnarError::IllConditionedBasis(format!(
                "{} quadrature points cannot resolve {k} basis functions (need at least {})",
                quad.len(),
                2 * k
            )));
        }

        let mut raw = DMatrix::zeros(quad.len(), k);
        let mut buf = vec![0.0; k];
        for (g, &u) in quad.points().iter().enumerate() {
            spline.values_into(u, &mut buf);
            for r in 0..k {
                raw[(g, r)] = buf[r];
            }
        }
        let mut gram = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = quad.inner(raw.column(a).as_slice(), raw.column(b).as_slice());
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }

        let inner = |x: &[f64], y: &[f64]| -> f64 {
            let mut acc = 0.0;
            for a in 0..k {
                if x[a] == 0.0 {
                    continue;
                }
                for b in 0..k {
                    acc += x[a] * gram[(a, b)] * y[b];
                }
            }
            acc
        };

        let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(k);
        for idx in 0..k {
            let mut v = vec![0.0; k];
            v[idx] = 1.0;
            let start_norm = inner(&v, &v).sqrt();
            for _pass in 0..2 {
                for c in &coeffs {
                    let proj = inner(c, &v);
                    for (vi, ci) in v.iter_mut().zip(c) {
                        *vi -= proj * ci;
                    }
                }
            }
            let norm = inner(&v, &v).sqrt();
            if !(norm > 1e-10 * start_norm.max(f64::MIN_POSITIVE)) {
                return Err(FnarError::IllConditionedBasis(format!(
                    "basis function {idx} is numerically dependent on its predecessors"
                )));
            }
            v.iter_mut().for_each(|x| *x /= norm);
            coeffs.push(v);
        }
        let coeffs = DMatrix::from_fn(k, k, |r, c| coeffs[r][c]);

        Ok(Self {
            spline,
            inner_knots,
            coeffs,
            quad: quad.clone(),
        })
    }

    /// Number of basis functions `K`.
    pub fn len(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn degree(&self) -> usize {
        self.spline.degree
    }

    pub fn inner_knots(&self) -> usize {
        self.inner_knots
    }

    pub fn quadrature(&self) -> &QuadratureGrid {
        &self.quad
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    /// `phi^K(s)`.
    pub fn eval(&self, s: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&s) {
            return Err(FnarError::Domain(format!("basis evaluated at s = {s}, outside [0, 1]")));
        }
        let mut out = vec![0.0; self.len()];
        self.eval_into(s, &mut out);
        Ok(out)
    }

    /// Unchecked variant of [`eval`](Self::eval) writing into `out`.
    pub(crate) fn eval_into(&self, s: f64, out: &mut [f64]) {
        let k = self.len();
        let mut raw = vec![0.0; k];
        self.spline.values_into(s, &mut raw);
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..k).map(|c| self.coeffs[(r, c)] * raw[c]).sum();
        }
    }

    /// `phi^K(s)' theta` for a coefficient block of length `K`.
    pub fn combine(&self, theta: &[f64], s: f64) -> Result<f64> {
        if theta.len() != self.len() {
            return Err(FnarError::invalid(format!(
                "coefficient block has length {}, basis has {}",
                theta.len(),
                self.len()
            )));
        }
        Ok(self.eval(s)?.iter().zip(theta).map(|(a, b)| a * b).sum())
    }

    /// Quadrature Gram matrix of the orthonormalized system.
    pub fn gram(&self) -> DMatrix<f64> {
        let k = self.len();
        let q = &self.quad;
        let mut vals = DMatrix::zeros(q.len(), k);
        let mut buf = vec![0.0; k];
        for (g, &u) in q.points().iter().enumerate() {
            self.eval_into(u, &mut buf);
            for r in 0..k {
                vals[(g, r)] = buf[r];
            }
        }
        DMatrix::from_fn(k, k, |a, b| q.inner(vals.column(a).as_slice(), vals.column(b).as_slice()))
    }

    /// Coefficients of the quadrature projection of nodal values onto the basis.
    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        let k = self.len();
        let mut out = vec![0.0; k];
        let mut buf = vec![0.0; k];
        for (g, (&u, &w)) in self.quad.points().iter().zip(self.quad.weights()).enumerate() {
            self.eval_into(u, &mut buf);
            for r in 0..k {
                out[r] += w * values[g] * buf[r];
            }
        }
        out
    }
}
