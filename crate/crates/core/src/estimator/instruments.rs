use crate::error::{FnarError, Result};
use crate::network::NetworkWeights;
use crate::simulate::FunctionalPanel;

/// Which network lags of which covariates serve as excluded instruments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IvSpec {
    /// Powers of `W` applied to the covariates, e.g. `[1, 2]` for `WX` and `W^2 X`.
    pub orders: Vec<usize>,
    /// Zero-based covariate indices kept out of the lagged instruments.
    pub exclude: Vec<usize>,
}

impl Default for IvSpec {
    fn default() -> Self {
        Self {
            orders: vec![1, 2],
            exclude: Vec::new(),
        }
    }
}

/// Instrument rows `B_it = (Q_it, X_it)` for every unit-period.
#[derive(Debug, Clone, PartialEq)]
pub struct Instruments {
    n: usize,
    t: usize,
    d_q: usize,
    d_b: usize,
    /// `(t * n + i) * d_b + c`.
    values: Vec<f64>,
    /// True when every network lag is identically zero.
    pub degenerate: bool,
}

impl Instruments {
    pub fn d_q(&self) -> usize {
        self.d_q
    }

    /// `d_q + d_x`.
    pub fn d_b(&self) -> usize {
        self.d_b
    }

    pub fn row(&self, i: usize, t: usize) -> &[f64] {
        let o = (t * self.n + i) * self.d_b;
        &self.values[o..o + self.d_b]
    }

    pub fn periods(&self) -> usize {
        self.t
    }
}

/// Stack `Q_it` (lag order major, then covariate) ahead of `X_it`.
pub fn build_instruments(panel: &FunctionalPanel, w: &NetworkWeights, iv: &IvSpec) -> Result<Instruments> {
    let (n, t, dx) = (panel.n(), panel.t(), panel.dx());
    if w.n() != n {
        return Err(FnarError::invalid(format!("network has {} units, panel has {n}", w.n())));
    }
    if let Some(&j) = iv.exclude.iter().find(|&&j| j >= dx) {
        return Err(FnarError::invalid(format!("excluded covariate {j} does not exist (d_x = {dx})")));
    }
    if iv.orders.contains(&0) {
        return Err(FnarError::invalid("instrument lag orders start at 1"));
    }
    let included: Vec<usize> = (0..dx).filter(|j| !iv.exclude.contains(j)).collect();
    let d_q = included.len() * iv.orders.len();
    if d_q == 0 {
        return Err(FnarError::Underidentified {
            detail: "no covariates or lag orders left to build instruments".into(),
            min_singular: 0.0,
        });
    }
    let max_order = iv.orders.iter().copied().max().unwrap_or(0);
    let d_b = d_q + dx;
    let mut values = vec![0.0; n * t * d_b];
    let mut degenerate = true;
    for tt in 0..t {
        for (jn, &j) in included.iter().enumerate() {
            let mut lag: Vec<f64> = (0..n).map(|i| panel.x(i, tt)[j]).collect();
            for order in 1..=max_order {
                lag = w.apply(&lag);
                if let Some(pos) = iv.orders.iter().position(|&o| o == order) {
                    let c = pos * included.len() + jn;
                    for (i, &v) in lag.iter().enumerate() {
                        values[(tt * n + i) * d_b + c] = v;
                        degenerate &= v == 0.0;
                    }
                }
            }
        }
        for i in 0..n {
            let o = (tt * n + i) * d_b;
            values[o + d_q..o + d_b].copy_from_slice(panel.x(i, tt));
        }
    }
    if degenerate {
        log::warn!("all network-lagged instruments are zero; the model is underidentified");
    }
    Ok(Instruments {
        n,
        t,
        d_q,
        d_b,
        values,
        degenerate,
    })
}
