use crate::basis::QuadratureGrid;
use crate::error::{FnarError, Result};
use crate::interaction::FunctionOnGrid;

/// Piecewise-linear interpolant through `(s, y)` observations, evaluated at
/// the grid nodes. Values are held constant beyond the first and last
/// observation points. Points may arrive unsorted; repeated `s` keep the
/// first value.
pub fn interpolate_response(points: &[(f64, f64)], grid: &QuadratureGrid) -> Result<FunctionOnGrid> {
    if points.is_empty() {
        return Err(FnarError::MissingData("no observations to interpolate".into()));
    }
    if points.iter().any(|(s, y)| !s.is_finite() || !y.is_finite()) {
        return Err(FnarError::invalid("non-finite observation"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|b, a| a.0 == b.0);

    let eval = |s: f64| -> f64 {
        if s <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if s >= last.0 {
            return last.1;
        }
        let k = pts.partition_point(|p| p.0 <= s);
        let (s0, y0) = pts[k - 1];
        let (s1, y1) = pts[k];
        y0 + (y1 - y0) * (s - s0) / (s1 - s0)
    };
    Ok(FunctionOnGrid::from_fn(grid, eval))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_and_constant_extension() {
        let q = QuadratureGrid::new(3).unwrap();
        let f = interpolate_response(&[(0.0, 0.0), (1.0, 1.0)], &q).unwrap();
        assert_eq!(f.values(), &[0.25, 0.5, 0.75]);

        let f = interpolate_response(&[(0.6, 2.0), (0.4, 1.0)], &q).unwrap();
        assert_eq!(f.values(), &[1.0, 1.5, 2.0]);

        let f = interpolate_response(&[(0.3, -4.0)], &q).unwrap();
        assert_eq!(f.values(), &[-4.0; 3]);
    }

    #[test]
    fn empty_is_missing_data() {
        let q = QuadratureGrid::new(3).unwrap();
        assert!(matches!(interpolate_response(&[], &q), Err(FnarError::MissingData(_))));
    }
}
