//! Replication harness scoring the estimators on the simulation design.

use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::basis::BasisSystem;
use crate::error::{FnarError, Result};
use crate::estimator::{estimate, Estimator, FitOptions, GmmFit, MomentSpec};
use crate::io::{fmt, write_table};
use crate::rng::{derive_seed, Stream};
use crate::simulate::{simulate_mc_panel, DgpConfig, McDesign};

/// Share of hard failures above which the whole run is rejected.
const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n: usize,
    pub t: usize,
    /// Moment points `L`.
    pub l: usize,
    /// Interior knots `K~`.
    pub ktilde: usize,
    pub degree: usize,
    pub r: f64,
    pub estimators: Vec<Estimator>,
    pub replications: usize,
    pub base_seed: u64,
    pub grid_size: usize,
    /// Points where 95% interval coverage of `alpha0` is recorded.
    pub coverage_points: Vec<f64>,
}

impl McConfig {
    pub fn new(n: usize, t: usize, l: usize, ktilde: usize, r: f64) -> Self {
        Self {
            n,
            t,
            l,
            ktilde,
            degree: 3,
            r,
            estimators: Estimator::ALL.to_vec(),
            replications: 500,
            base_seed: 20_240_101,
            grid_size: 99,
            coverage_points: vec![0.25, 0.5, 0.75],
        }
    }

    /// Named reference designs.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper-table1-row1" => Ok(Self::new(40, 5, 10, 2, 0.4)),
            "paper-table1-row1-r1" => Ok(Self::new(40, 5, 10, 2, 1.0)),
            "large-r1" => Ok(Self::new(80, 10, 10, 2, 1.0)),
            _ => Err(FnarError::invalid(format!(
                "unknown preset '{name}' (known: paper-table1-row1, paper-table1-row1-r1, large-r1)"
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 || self.l == 0 || self.replications == 0 || self.grid_size == 0 {
            return Err(FnarError::invalid("n, T, L, replications and grid size must be positive"));
        }
        if !(self.r > 0.0) {
            return Err(FnarError::invalid("r must be positive"));
        }
        if self.estimators.is_empty() {
            return Err(FnarError::invalid("at least one estimator is required"));
        }
        Ok(())
    }

    /// Seed of replication `rep`.
    pub fn replication_seed(&self, rep: usize) -> u64 {
        derive_seed(self.base_seed, Stream::Replication, rep as u64, 0)
    }
}

/// Scores of one estimator on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct FitScore {
    pub bias_alpha: f64,
    pub rmse_alpha: f64,
    pub bias_beta: f64,
    pub rmse_beta: f64,
    pub converged: bool,
    /// Per coverage point; `None` when the variance was unavailable.
    pub covered: Vec<Option<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub seed: u64,
    /// Indexed like `McConfig::estimators`; `Err` holds the failure message.
    pub scores: Vec<std::result::Result<FitScore, String>>,
}

/// Aggregated bias and RMSE for one estimator and target.
#[derive(Debug, Clone, PartialEq)]
pub struct McRow {
    pub estimator: Estimator,
    /// `"alpha"` or `"beta"`.
    pub target: &'static str,
    pub bias: f64,
    pub rmse: f64,
    /// Monte Carlo standard error of `rmse`.
    pub rmse_se: f64,
}

#[derive(Debug, Clone)]
pub struct McReport {
    pub config: McConfig,
    pub rows: Vec<McRow>,
    pub records: Vec<ReplicationRecord>,
    /// Hard failures per estimator.
    pub failures: Vec<usize>,
    /// Fits returned without convergence per estimator.
    pub nonconverged: Vec<usize>,
    pub elapsed: Duration,
}

/// Mean signed and root-mean-square error of `est - truth` over the grid.
fn score_curve(est: &[f64], truth: &[f64]) -> (f64, f64) {
    let g = truth.len() as f64;
    let bias = est.iter().zip(truth).map(|(a, b)| a - b).sum::<f64>() / g;
    let mse = est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / g;
    (bias, mse.sqrt())
}

fn score(fit: &GmmFit, truth: &DgpConfig, points: &[f64]) -> FitScore {
    let grid = truth.grid();
    let (bias_alpha, rmse_alpha) = score_curve(fit.alpha_on(grid).values(), truth.alpha0.values());
    let (bias_beta, rmse_beta) = score_curve(fit.beta_on(0, grid).values(), truth.beta0[0].values());
    let covered = points
        .iter()
        .map(|&s| {
            let (lo, hi) = fit.ci_alpha(s).ok()?;
            let a0 = truth.alpha0.eval(grid, s);
            Some(lo <= a0 && a0 <= hi)
        })
        .collect();
    FitScore {
        bias_alpha,
        rmse_alpha,
        bias_beta,
        rmse_beta,
        converged: fit.converged,
        covered,
    }
}

/// Simulate one replication and score every requested estimator on it.
pub fn run_replication(cfg: &McConfig, rep: usize) -> ReplicationRecord {
    let seed = cfg.replication_seed(rep);
    let mut design = McDesign::new(cfg.n, cfg.t, cfg.r);
    design.grid_size = cfg.grid_size;
    let sim = simulate_mc_panel(&design, seed).and_then(|(panel, truth)| {
        let basis = BasisSystem::bspline(cfg.ktilde, cfg.degree, panel.grid())?;
        let spec = MomentSpec::new(basis, cfg.l, &truth.weights)?;
        Ok((panel, truth, spec))
    });
    let scores = match sim {
        Err(e) => vec![Err(e.to_string()); cfg.estimators.len()],
        Ok((panel, truth, spec)) => cfg
            .estimators
            .iter()
            .map(|&est| {
                let opts = FitOptions {
                    fixed_effects: false,
                    seed,
                    ..FitOptions::default()
                };
                estimate(&panel, &truth.weights, &truth.operator, &spec, est, &opts)
                    .map(|fit| score(&fit, &truth, &cfg.coverage_points))
                    .map_err(|e| e.to_string())
            })
            .collect(),
    };
    ReplicationRecord { rep, seed, scores }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Run all replications in parallel and aggregate in replication order.
pub fn run_mc(cfg: &McConfig) -> Result<McReport> {
    cfg.validate()?;
    let start = Instant::now();
    let records: Vec<ReplicationRecord> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep))
        .collect();
    let ne = cfg.estimators.len();
    let mut failures = vec![0; ne];
    let mut nonconverged = vec![0; ne];
    for r in &records {
        for (e, s) in r.scores.iter().enumerate() {
            match s {
                Err(msg) => {
                    failures[e] += 1;
                    log::warn!("replication {} ({}): {msg}", r.rep, cfg.estimators[e]);
                }
                Ok(sc) if !sc.converged => nonconverged[e] += 1,
                Ok(_) => {}
            }
        }
    }
    let total = cfg.replications;
    if let Some(&worst) = failures.iter().max() {
        if worst as f64 > MAX_FAILURE_RATE * total as f64 {
            return Err(FnarError::Harness { failures: worst, total });
        }
    }

    let mut rows = Vec::new();
    for (e, &est) in cfg.estimators.iter().enumerate() {
        let ok: Vec<&FitScore> = records.iter().filter_map(|r| r.scores[e].as_ref().ok()).collect();
        if ok.is_empty() {
            continue;
        }
        for target in ["alpha", "beta"] {
            let (b, r): (Vec<f64>, Vec<f64>) = ok
                .iter()
                .map(|s| {
                    if target == "alpha" {
                        (s.bias_alpha, s.rmse_alpha)
                    } else {
                        (s.bias_beta, s.rmse_beta)
                    }
                })
                .unzip();
            let (bias, _) = mean_se(&b);
            let (rmse, rmse_se) = mean_se(&r);
            rows.push(McRow {
                estimator: est,
                target,
                bias,
                rmse,
                rmse_se,
            });
        }
    }
    Ok(McReport {
        config: cfg.clone(),
        rows,
        records,
        failures,
        nonconverged,
        elapsed: start.elapsed(),
    })
}

impl McReport {
    pub fn row(&self, estimator: Estimator, target: &str) -> Option<&McRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.target == target)
    }

    fn index(&self, estimator: Estimator) -> Option<usize> {
        self.config.estimators.iter().position(|&e| e == estimator)
    }

    /// Per-replication scores of one estimator (successful fits only).
    pub fn scores(&self, estimator: Estimator) -> Vec<&FitScore> {
        let Some(e) = self.index(estimator) else {
            return Vec::new();
        };
        self.records.iter().filter_map(|r| r.scores[e].as_ref().ok()).collect()
    }

    /// Mean and standard error of the per-replication difference
    /// `rmse_alpha(a) - rmse_alpha(b)` over replications where both succeeded.
    pub fn paired_rmse_alpha_difference(&self, a: Estimator, b: Estimator) -> Option<(f64, f64)> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let d: Vec<f64> = self
            .records
            .iter()
            .filter_map(|r| match (&r.scores[ia], &r.scores[ib]) {
                (Ok(x), Ok(y)) => Some(x.rmse_alpha - y.rmse_alpha),
                _ => None,
            })
            .collect();
        if d.is_empty() {
            return None;
        }
        Some(mean_se(&d))
    }

    /// Empirical coverage of the 95% interval at each coverage point.
    /// Replications without a variance estimate count as misses.
    pub fn coverage(&self, estimator: Estimator) -> Vec<f64> {
        let scores = self.scores(estimator);
        (0..self.config.coverage_points.len())
            .map(|k| {
                let hits = scores.iter().filter(|s| s.covered[k] == Some(true)).count();
                hits as f64 / scores.len().max(1) as f64
            })
            .collect()
    }

    /// Rows of the `n,T,L,Ktilde,r,estimator,target,bias,rmse` table.
    pub fn table_rows(&self) -> Vec<Vec<String>> {
        let c = &self.config;
        self.rows
            .iter()
            .map(|r| {
                vec![
                    c.n.to_string(),
                    c.t.to_string(),
                    c.l.to_string(),
                    c.ktilde.to_string(),
                    c.r.to_string(),
                    r.estimator.label().to_string(),
                    r.target.to_string(),
                    fmt(r.bias),
                    fmt(r.rmse),
                ]
            })
            .collect()
    }

    pub fn write_table(&self, path: &Path) -> Result<()> {
        write_table(
            path,
            &["n", "T", "L", "Ktilde", "r", "estimator", "target", "bias", "rmse"],
            self.table_rows(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> McConfig {
        let mut c = McConfig::new(20, 3, 5, 1, 1.0);
        c.replications = 4;
        c.base_seed = 17;
        c
    }

    #[test]
    fn single_replication_rmse_dominates_bias() {
        let mut c = small();
        c.replications = 1;
        let rep = run_mc(&c).unwrap();
        for r in &rep.rows {
            assert!(r.rmse >= r.bias.abs(), "{r:?}");
        }
    }

    #[test]
    fn reproducible() {
        let c = small();
        let a = run_mc(&c).unwrap();
        let b = run_mc(&c).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.records, b.records);
        assert_eq!(a.table_rows().len(), 6);
    }

    #[test]
    fn presets_and_validation() {
        let p = McConfig::preset("paper-table1-row1").unwrap();
        assert_eq!((p.n, p.t, p.l, p.ktilde, p.r, p.replications), (40, 5, 10, 2, 0.4, 500));
        assert!(McConfig::preset("nope").is_err());
        let mut c = small();
        c.estimators.clear();
        assert!(run_mc(&c).is_err());
    }
}
