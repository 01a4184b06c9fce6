//! Interaction matrices `W` and quadratic-moment matrices `P_m`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{FnarError, Result};
use crate::rng::{substream, Stream};
use crate::sparse::CsrMatrix;

/// Distance used when building weights from unit locations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    /// Haversine distance in kilometres; coordinates are `(lon, lat)` in degrees.
    GreatCircleKm,
}

impl DistanceMetric {
    pub fn distance(self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match self {
            DistanceMetric::Euclidean => ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt(),
            DistanceMetric::GreatCircleKm => {
                const EARTH_RADIUS_KM: f64 = 6371.0088;
                let (lon1, lat1) = (a[0].to_radians(), a[1].to_radians());
                let (lon2, lat2) = (b[0].to_radians(), b[1].to_radians());
                let h = ((lat2 - lat1) / 2.0).sin().powi(2)
                    + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
                2.0 * EARTH_RADIUS_KM * h.sqrt().asin()
            }
        }
    }
}

/// Time-invariant `n x n` interaction matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    w: CsrMatrix,
    row_sup: f64,
    coords: Option<Vec<[f64; 2]>>,
}

impl NetworkWeights {
    pub fn from_csr(w: CsrMatrix) -> Result<Self> {
        if w.dim() == 0 {
            return Err(FnarError::invalid("network must contain at least one unit"));
        }
        for (r, c, v) in w.triplets() {
            if !v.is_finite() {
                return Err(FnarError::invalid(format!("non-finite weight at ({r}, {c})")));
            }
            if r == c {
                return Err(FnarError::invalid(format!(
                    "diagonal weight w[{r},{r}] = {v}; the diagonal must be zero"
                )));
            }
        }
        let row_sup = w.max_abs_row_sum();
        Ok(Self {
            w,
            row_sup,
            coords: None,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(FnarError::invalid(format!(
                "weights must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Self::from_csr(CsrMatrix::from_dense(m))
    }

    /// Build from `(i, j, w_ij)` triplets; duplicate pairs are summed.
    pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for &(i, j, v) in entries {
            if i >= n || j >= n {
                return Err(FnarError::invalid(format!(
                    "edge ({i}, {j}) out of range for {n} units"
                )));
            }
            *map.entry((i, j)).or_insert(0.0) += v;
        }
        Self::from_csr(CsrMatrix::from_map(n, &map))
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::from_csr(CsrMatrix::zeros(n))
    }

    /// Row-normalized adjacency of units sitting on integer lattice cells;
    /// two units are linked iff their Euclidean distance is exactly one.
    pub fn from_lattice_cells(cells: &[(i64, i64)]) -> Result<Self> {
        let n = cells.len();
        let mut seen = std::collections::HashSet::new();
        for c in cells {
            if !seen.insert(*c) {
                return Err(FnarError::invalid(format!("two units share lattice cell {c:?}")));
            }
        }
        let index: std::collections::HashMap<(i64, i64), usize> =
            cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut map = BTreeMap::new();
        for (i, &(x, y)) in cells.iter().enumerate() {
            let nbrs: Vec<usize> = [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)]
                .iter()
                .filter_map(|c| index.get(c).copied())
                .collect();
            let deg = nbrs.len() as f64;
            for j in nbrs {
                map.insert((i, j), 1.0 / deg);
            }
        }
        let mut out = Self::from_csr(CsrMatrix::from_map(n, &map))?;
        out.coords = Some(cells.iter().map(|&(x, y)| [x as f64, y as f64]).collect());
        Ok(out)
    }

    /// Randomly place `n` units on distinct cells of a `[sqrt(2n)] x [sqrt(2n)]`
    /// lattice (nearest integer, halves rounded up) and link lattice neighbours.
    pub fn lattice(n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(FnarError::invalid(format!("lattice design needs n >= 2, got {n}")));
        }
        let side = lattice_side(n);
        let capacity = side * side;
        if n > capacity {
            return Err(FnarError::invalid(format!(
                "{n} units do not fit on a {side}x{side} lattice"
            )));
        }
        let mut cells: Vec<usize> = (0..capacity).collect();
        let mut rng = substream(seed, Stream::Lattice, n as u64, 0);
        cells.shuffle(&mut rng);
        let placed: Vec<(i64, i64)> = cells[..n]
            .iter()
            .map(|&c| ((c % side) as i64, (c / side) as i64))
            .collect();
        Self::from_lattice_cells(&placed)
    }

    /// `w_ij = w~_ij / sum_{j != i} w~_ij` with `w~_ij = 1{d_ij <= threshold} / d_ij`
    /// (or the plain indicator when `inverse_distance` is false). Rows without
    /// neighbours stay zero.
    pub fn from_distances(
        coords: &[[f64; 2]],
        threshold: f64,
        inverse_distance: bool,
        metric: DistanceMetric,
    ) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(FnarError::invalid("no coordinates supplied"));
        }
        let mut map = BTreeMap::new();
        for i in 0..n {
            let mut row = Vec::new();
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = metric.distance(coords[i], coords[j]);
                if !d.is_finite() {
                    return Err(FnarError::invalid(format!("non-finite distance between {i} and {j}")));
                }
                if d == 0.0 {
                    return Err(FnarError::invalid(format!(
                        "units {i} and {j} share the same location"
                    )));
                }
                if d <= threshold {
                    row.push((j, if inverse_distance { 1.0 / d } else { 1.0 }));
                }
            }
            let total: f64 = row.iter().map(|(_, v)| v).sum();
            for (j, v) in row {
                map.insert((i, j), v / total);
            }
        }
        let mut out = Self::from_csr(CsrMatrix::from_map(n, &map))?;
        out.coords = Some(coords.to_vec());
        Ok(out)
    }

    /// Read an edge list with header `i,j,weight` (0-based unit ids).
    pub fn read_edge_list(path: &Path, n: Option<usize>) -> Result<Self> {
        let rows = crate::io::read_table(path, &["i", "j", "weight"])?;
        let mut entries = Vec::with_capacity(rows.len());
        let mut max_id = 0;
        for row in &rows {
            let i = row.usize_at(0)?;
            let j = row.usize_at(1)?;
            let v = row.f64_at(2)?;
            max_id = max_id.max(i).max(j);
            entries.push((i, j, v));
        }
        let n = n.unwrap_or(if rows.is_empty() { 0 } else { max_id + 1 });
        Self::from_triplets(n, &entries)
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let rows = self
            .w
            .triplets()
            .map(|(i, j, v)| vec![i.to_string(), j.to_string(), format!("{v:.17e}")]);
        crate::io::write_table(path, &["i", "j", "weight"], rows)
    }

    pub fn n(&self) -> usize {
        self.w.dim()
    }

    /// Maximum absolute row sum `||W||_inf`.
    pub fn row_sup(&self) -> f64 {
        self.row_sup
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.w
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w.get(i, j)
    }

    /// Number of units `i` is linked to.
    pub fn degree(&self, i: usize) -> usize {
        self.w.row(i).filter(|&(_, v)| v != 0.0).count()
    }

    /// `y = W x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        self.w.mul_vec(x, &mut y);
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.w.to_dense()
    }
}

/// Nearest integer to `sqrt(2n)`, halves rounded up.
pub fn lattice_side(n: usize) -> usize {
    ((2.0 * n as f64).sqrt() + 0.5).floor() as usize
}

/// Symmetric, zero-diagonal `P_{m,1}` used in a quadratic moment condition.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadWeightMatrix {
    p: CsrMatrix,
}

impl QuadWeightMatrix {
    pub fn new(p: CsrMatrix) -> Result<Self> {
        for (r, c, v) in p.triplets() {
            if r == c {
                return Err(FnarError::invalid(format!("P has nonzero diagonal entry at {r}")));
            }
            if p.get(c, r) != v {
                return Err(FnarError::invalid(format!("P is not symmetric at ({r}, {c})")));
            }
        }
        Ok(Self { p })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(CsrMatrix::from_dense(m))
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p.get(i, j)
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.p.quad_form(x)
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.p.mul_vec(x, y)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.p.to_dense()
    }
}

/// `P_1 = (W + W') / 2` and `P_2 = W'W - diag(W'W)`.
pub fn quadratic_weights(w: &NetworkWeights) -> Result<Vec<QuadWeightMatrix>> {
    let m = w.matrix();
    let n = m.dim();

    let mut p1 = BTreeMap::new();
    for (i, j, v) in m.triplets() {
        let vt = m.get(j, i);
        p1.insert((i, j), (v + vt) / 2.0);
        p1.insert((j, i), (vt + v) / 2.0);
    }

    // Accumulate (W'W)_ij = sum_k w_ki w_kj row by row so both triangles see
    // the same products in the same order.
    let mut p2: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for k in 0..n {
        let row: Vec<(usize, f64)> = m.row(k).collect();
        for &(i, wi) in &row {
            for &(j, wj) in &row {
                if i != j {
                    *p2.entry((i, j)).or_insert(0.0) += wi * wj;
                }
            }
        }
    }

    Ok(vec![
        QuadWeightMatrix::new(CsrMatrix::from_map(n, &p1))?,
        QuadWeightMatrix::new(CsrMatrix::from_map(n, &p2))?,
    ])
}
