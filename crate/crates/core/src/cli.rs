//! Command-line interface: `simulate`, `estimate`, `montecarlo` and `effects`.
//!
//! Every subcommand also reads a TOML file via `--config`; keys use the
//! long flag names (with `-` or `_`) inside a table named after the
//! subcommand, and flags given on the command line take precedence.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::basis::{BasisSystem, QuadratureGrid};
use crate::effects::{self, ModelFunctions, PropagationResult};
use crate::error::{FnarError, Result};
use crate::estimator::{estimate, Estimator, FitOptions, GmmFit, IvSpec, MomentSpec};
use crate::interaction::{FunctionOnGrid, InteractionOperator};
use crate::io::{self, fmt, write_table};
use crate::montecarlo::{run_mc, McConfig};
use crate::network::{DistanceMetric, NetworkWeights};
use crate::simulate::{simulate_mc_panel, McDesign};

#[derive(Debug, Parser)]
#[command(name = "fnar", version, about = "Functional network autoregressive panel models")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// TOML file with default values for the chosen subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a panel from the simulation design.
    Simulate(SimulateArgs),
    /// Fit the model to panel tables.
    Estimate(EstimateArgs),
    /// Run the replication study.
    Montecarlo(MonteCarloArgs),
    /// Network multipliers of a fitted or given model.
    #[command(subcommand)]
    Effects(EffectsCommand),
}

#[derive(Debug, Args, Deserialize, Default)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct SimulateArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "T", short = 'T')]
    #[serde(alias = "T", alias = "t")]
    periods: Option<usize>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplier applied to the interaction function.
    #[arg(long)]
    alpha_scale: Option<f64>,
    #[arg(long)]
    grid_size: Option<usize>,
    /// Existing directory receiving the output tables.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
struct ModelArgs {
    /// point-eval, epanechnikov or past-window:WIDTH.
    #[arg(long)]
    operator: Option<String>,
    /// Edge list `i,j,weight`.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Coordinates `unit,lon,lat`, linked within `--threshold`.
    #[arg(long)]
    coords: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Measure distances along the sphere (km) instead of in the plane.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    great_circle: Option<bool>,
    /// Weight links by inverse distance before row normalization.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    inverse_distance: Option<bool>,
    #[arg(long)]
    grid_size: Option<usize>,
}

#[derive(Debug, Args, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
struct EstimateArgs {
    /// Outcome table `unit,period,s,y` (or `grid_index` instead of `s`).
    #[arg(long)]
    outcomes: Option<PathBuf>,
    /// Covariate table `unit,period,x1..xd`.
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Moment points `L`.
    #[arg(long = "L", short = 'L')]
    #[serde(alias = "L", alias = "l")]
    moment_points: Option<usize>,
    #[arg(long)]
    ktilde: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    /// gmm1, gmm2 or 2sls.
    #[arg(long)]
    estimator: Option<String>,
    /// Covariate indices (0-based) kept out of the instruments.
    #[arg(long, value_delimiter = ',')]
    iv_exclude: Option<Vec<usize>>,
    /// Lag orders of the instruments.
    #[arg(long, value_delimiter = ',')]
    iv_orders: Option<Vec<usize>>,
    /// Seed for optimizer restarts.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Deserialize, Default)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct MonteCarloArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "T", short = 'T')]
    #[serde(alias = "T", alias = "t")]
    periods: Option<usize>,
    #[arg(long = "L", short = 'L')]
    #[serde(alias = "L", alias = "l")]
    moment_points: Option<usize>,
    #[arg(long)]
    ktilde: Option<usize>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output table; printed to stdout as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
struct EffectsArgs {
    /// `fit.json` written by `estimate`.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Interaction function `s,value` (instead of `--fit`).
    #[arg(long)]
    alpha_file: Option<PathBuf>,
    /// Covariate function `s,value` (instead of `--fit`).
    #[arg(long)]
    beta_file: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long)]
    unit: Option<usize>,
    /// Covariate index (0-based) for marginal effects.
    #[arg(long)]
    covariate: Option<usize>,
    /// Shock path `s,eta`.
    #[arg(long)]
    shock_file: Option<PathBuf>,
    /// Truncation order `S`.
    #[arg(long)]
    orders: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum EffectsCommand {
    /// Effect of raising one unit's covariate.
    Marginal(EffectsArgs),
    /// Response to a shock in one unit's error.
    Impulse(EffectsArgs),
    /// Unit whose shock has the largest total impact.
    Keyplayer(EffectsArgs),
}

/// Fill every `None` in `self` from `other`.
trait Merge {
    fn merge(self, other: Self) -> Self;
}

macro_rules! impl_merge {
    ($t:ty { $($f:ident),* } $(, nested { $($g:ident),* })?) => {
        impl Merge for $t {
            fn merge(self, other: Self) -> Self {
                Self {
                    $($f: self.$f.or(other.$f),)*
                    $($($g: self.$g.merge(other.$g),)*)?
                }
            }
        }
    };
}

impl_merge!(SimulateArgs { n, periods, r, seed, alpha_scale, grid_size, out });
impl_merge!(ModelArgs { operator, weights, coords, threshold, great_circle, inverse_distance, grid_size });
impl_merge!(
    EstimateArgs { outcomes, covariates, moment_points, ktilde, degree, estimator, iv_exclude, iv_orders, seed, out },
    nested { model }
);
impl_merge!(MonteCarloArgs { preset, n, periods, moment_points, ktilde, r, estimators, replications, seed, out });
impl_merge!(
    EffectsArgs { fit, alpha_file, beta_file, unit, covariate, shock_file, orders, out },
    nested { model }
);

fn load_section<T: for<'de> Deserialize<'de> + Default>(config: Option<&Path>, section: &str) -> Result<T> {
    let Some(path) = config else {
        return Ok(T::default());
    };
    let text = io::read_text(path)?;
    let doc: toml::Table = toml::from_str(&text).map_err(|e| schema(path, e.to_string()))?;
    match doc.get(section) {
        None => Ok(T::default()),
        Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| schema(path, format!("[{section}]: {e}"))),
    }
}

fn schema(path: &Path, message: String) -> FnarError {
    FnarError::Schema {
        path: path.to_path_buf(),
        line: 0,
        message,
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| FnarError::invalid(format!("missing required option --{flag}")))
}

fn existing_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(FnarError::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        })
    }
}

/// Parse `point-eval`, `epanechnikov` or `past-window:WIDTH`.
pub fn parse_operator(label: &str, grid: &QuadratureGrid) -> Result<InteractionOperator> {
    match label {
        "point-eval" | "point" | "concurrent" => Ok(InteractionOperator::point_eval(grid)),
        "epanechnikov" => Ok(InteractionOperator::epanechnikov(grid)),
        _ => {
            if let Some(w) = label.strip_prefix("past-window:") {
                let width: f64 = w
                    .parse()
                    .map_err(|_| FnarError::invalid(format!("bad past-window width '{w}'")))?;
                InteractionOperator::past_window(grid, width)
            } else {
                Err(FnarError::invalid(format!(
                    "unknown operator '{label}' (expected point-eval, epanechnikov or past-window:WIDTH)"
                )))
            }
        }
    }
}

fn load_weights(m: &ModelArgs, n: Option<usize>) -> Result<NetworkWeights> {
    match (&m.weights, &m.coords) {
        (Some(p), None) => NetworkWeights::read_edge_list(p, n),
        (None, Some(p)) => {
            let coords = io::read_coords(p)?;
            let threshold = required(m.threshold, "threshold")?;
            let metric = if m.great_circle.unwrap_or(false) {
                DistanceMetric::GreatCircleKm
            } else {
                DistanceMetric::Euclidean
            };
            NetworkWeights::from_distances(&coords, threshold, m.inverse_distance.unwrap_or(false), metric)
        }
        (Some(_), Some(_)) => Err(FnarError::invalid("give either --weights or --coords, not both")),
        (None, None) => Err(FnarError::invalid("missing network: give --weights or --coords")),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let out = a.out.unwrap_or_else(|| PathBuf::from("."));
    existing_dir(&out)?;
    let mut design = McDesign::new(required(a.n, "n")?, required(a.periods, "T")?, a.r.unwrap_or(1.0));
    design.alpha_scale = a.alpha_scale.unwrap_or(1.0);
    if let Some(g) = a.grid_size {
        design.grid_size = g;
    }
    let seed = required(a.seed, "seed")?;
    let (panel, truth) = simulate_mc_panel(&design, seed)?;
    io::write_panel(&panel, &out.join("outcomes.csv"), &out.join("covariates.csv"))?;
    truth.weights.write_edge_list(&out.join("weights.csv"))?;

    let grid = truth.grid();
    let rows = (0..grid.len()).map(|g| {
        let mut r = vec![g.to_string(), fmt(grid.points()[g]), fmt(truth.alpha0.values()[g])];
        r.extend(truth.beta0.iter().map(|b| fmt(b.values()[g])));
        r
    });
    let names: Vec<String> = (1..=truth.beta0.len()).map(|j| format!("beta{j}")).collect();
    let mut header = vec!["grid_index", "s", "alpha"];
    header.extend(names.iter().map(|s| s.as_str()));
    write_table(&out.join("truth.csv"), &header, rows)?;
    let rows = truth.fixed_effects.iter().enumerate().flat_map(|(i, f)| {
        f.values()
            .iter()
            .enumerate()
            .map(move |(g, v)| vec![i.to_string(), g.to_string(), fmt(*v)])
    });
    write_table(&out.join("fixed_effects_true.csv"), &["unit", "grid_index", "value"], rows)?;
    log::info!(
        "simulated n={} T={} (stationarity index {:.4}) into {}",
        panel.n(),
        panel.t(),
        truth.stationarity_index(),
        out.display()
    );
    Ok(())
}

fn estimate_table(fit: &GmmFit, grid: &QuadratureGrid, r: usize) -> Result<Vec<Vec<String>>> {
    grid.points()
        .iter()
        .map(|&s| {
            let (est, se, ci) = if r == 0 {
                (fit.alpha(s)?, fit.se_alpha(s).ok(), fit.ci_alpha(s).ok())
            } else {
                (fit.beta(r - 1, s)?, fit.se_beta(r - 1, s).ok(), fit.ci_beta(r - 1, s).ok())
            };
            let opt = |v: Option<f64>| v.map(fmt).unwrap_or_else(|| "NaN".into());
            Ok(vec![
                fmt(s),
                fmt(est),
                opt(se),
                opt(ci.map(|c| c.0)),
                opt(ci.map(|c| c.1)),
            ])
        })
        .collect()
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
    existing_dir(&out)?;
    let grid = QuadratureGrid::new(a.model.grid_size.unwrap_or(99))?;
    let obs = io::read_observations(&required(a.outcomes.clone(), "outcomes")?)?;
    let cov = io::read_covariates(&required(a.covariates.clone(), "covariates")?)?;
    let panel = io::panel_from_tables(&obs, &cov, &grid)?;
    let w = load_weights(&a.model, Some(panel.n()))?;
    let op_label = a.model.operator.clone().unwrap_or_else(|| "epanechnikov".into());
    let op = parse_operator(&op_label, &grid)?;
    let ktilde = a.ktilde.unwrap_or(2);
    let degree = a.degree.unwrap_or(3);
    let basis = BasisSystem::bspline(ktilde, degree, &grid)?;
    let mut spec = MomentSpec::new(basis, a.moment_points.unwrap_or(10), &w)?;
    spec.iv = IvSpec {
        orders: a.iv_orders.clone().unwrap_or_else(|| vec![1, 2]),
        exclude: a.iv_exclude.clone().unwrap_or_default(),
    };
    let estimator: Estimator = a.estimator.as_deref().unwrap_or("gmm1").parse()?;
    let opts = FitOptions {
        seed: a.seed.unwrap_or(0),
        ..FitOptions::default()
    };
    let fit = estimate(&panel, &w, &op, &spec, estimator, &opts)?;

    let header = ["s", "estimate", "se", "ci_lo", "ci_hi"];
    write_table(&out.join("alpha.csv"), &header, estimate_table(&fit, &grid, 0)?)?;
    for j in 0..fit.dx {
        write_table(&out.join(format!("beta{}.csv", j + 1)), &header, estimate_table(&fit, &grid, j + 1)?)?;
    }
    if let Some(fe) = &fit.fixed_effects {
        let rows = fe.iter().enumerate().flat_map(|(i, f)| {
            f.values()
                .iter()
                .enumerate()
                .map(move |(g, v)| vec![i.to_string(), g.to_string(), fmt(*v)])
        });
        write_table(&out.join("fixed_effects.csv"), &["unit", "grid_index", "value"], rows)?;
    }

    let k = fit.basis.len();
    let table = |r: usize| -> Vec<serde_json::Value> {
        estimate_table(&fit, &grid, r)
            .unwrap_or_default()
            .into_iter()
            .map(|row| json!({"s": row[0], "estimate": row[1], "se": row[2], "ci_lo": row[3], "ci_hi": row[4]}))
            .collect()
    };
    let doc = json!({
        "estimator": fit.estimator.label(),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "objective": fit.objective,
        "n": panel.n(),
        "T": panel.t(),
        "dx": fit.dx,
        "covariates": cov.names,
        "operator": op.label(),
        "moment_points": spec.points,
        "instruments": {"orders": spec.iv.orders, "exclude": spec.iv.exclude},
        "basis": {"ktilde": ktilde, "degree": degree, "K": k, "grid_size": grid.len()},
        "theta": fit.theta,
        "theta_alpha": fit.block(0),
        "theta_beta": (0..fit.dx).map(|j| fit.block(j + 1).to_vec()).collect::<Vec<_>>(),
        "sigma": fit.sigma.as_ref().map(|s| (0..s.nrows()).map(|r| s.row(r).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>()),
        "alpha": table(0),
        "beta": (1..=fit.dx).map(table).collect::<Vec<_>>(),
    });
    io::write_text(&out.join("fit.json"), &serde_json::to_string_pretty(&doc).expect("json"))?;
    println!(
        "{}: converged={} iterations={} objective={:.6e}",
        fit.estimator, fit.converged, fit.iterations, fit.objective
    );
    Ok(())
}

fn cmd_montecarlo(a: MonteCarloArgs) -> Result<()> {
    let mut cfg = match &a.preset {
        Some(p) => McConfig::preset(p)?,
        None => McConfig::new(
            required(a.n, "n")?,
            required(a.periods, "T")?,
            a.moment_points.unwrap_or(10),
            a.ktilde.unwrap_or(2),
            a.r.unwrap_or(1.0),
        ),
    };
    if a.preset.is_some() {
        cfg.n = a.n.unwrap_or(cfg.n);
        cfg.t = a.periods.unwrap_or(cfg.t);
        cfg.l = a.moment_points.unwrap_or(cfg.l);
        cfg.ktilde = a.ktilde.unwrap_or(cfg.ktilde);
        cfg.r = a.r.unwrap_or(cfg.r);
    }
    if let Some(list) = &a.estimators {
        cfg.estimators = list.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    }
    cfg.replications = a.replications.unwrap_or(cfg.replications);
    cfg.base_seed = required(a.seed, "seed")?;
    if let Some(p) = &a.out {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            existing_dir(parent)?;
        }
    }
    let report = run_mc(&cfg)?;
    println!("n,T,L,Ktilde,r,estimator,target,bias,rmse");
    for row in report.table_rows() {
        println!("{}", row.join(","));
    }
    for (e, est) in cfg.estimators.iter().enumerate() {
        if report.failures[e] + report.nonconverged[e] > 0 {
            eprintln!(
                "{est}: {} failed, {} not converged of {}",
                report.failures[e], report.nonconverged[e], cfg.replications
            );
        }
    }
    if let Some(p) = &a.out {
        report.write_table(p)?;
    }
    Ok(())
}

/// Rebuild the model functions from a `fit.json` document.
fn model_from_fit(path: &Path, model: &ModelArgs) -> Result<ModelFunctions> {
    let doc: serde_json::Value =
        serde_json::from_str(&io::read_text(path)?).map_err(|e| schema(path, e.to_string()))?;
    let get_usize = |v: &serde_json::Value, key: &str| -> Result<usize> {
        v.get(key)
            .and_then(|x| x.as_u64())
            .map(|x| x as usize)
            .ok_or_else(|| schema(path, format!("missing integer field '{key}'")))
    };
    let basis_doc = doc.get("basis").ok_or_else(|| schema(path, "missing 'basis'".into()))?;
    let grid = QuadratureGrid::new(model.grid_size.unwrap_or(get_usize(basis_doc, "grid_size")?))?;
    let basis = BasisSystem::bspline(get_usize(basis_doc, "ktilde")?, get_usize(basis_doc, "degree")?, &grid)?;
    let dx = get_usize(&doc, "dx")?;
    let theta: Vec<f64> = doc
        .get("theta")
        .and_then(|t| t.as_array())
        .ok_or_else(|| schema(path, "missing 'theta'".into()))?
        .iter()
        .map(|v| v.as_f64().ok_or_else(|| schema(path, "non-numeric theta entry".into())))
        .collect::<Result<_>>()?;
    let k = basis.len();
    if theta.len() != (dx + 1) * k {
        return Err(schema(path, format!("theta has {} entries, expected {}", theta.len(), (dx + 1) * k)));
    }
    let label = match &model.operator {
        Some(l) => l.clone(),
        None => doc
            .get("operator")
            .and_then(|v| v.as_str())
            .ok_or_else(|| schema(path, "missing 'operator'".into()))?
            .to_string(),
    };
    let op = parse_operator(&label, &grid)?;
    let block = |r: usize| -> Result<FunctionOnGrid> {
        let vals = grid
            .points()
            .iter()
            .map(|&s| basis.combine(&theta[r * k..(r + 1) * k], s))
            .collect::<Result<Vec<_>>>()?;
        FunctionOnGrid::new(vals)
    };
    ModelFunctions::new(block(0)?, (1..=dx).map(block).collect::<Result<_>>()?, op)
}

fn load_model(a: &EffectsArgs) -> Result<ModelFunctions> {
    match (&a.fit, &a.alpha_file) {
        (Some(p), None) => model_from_fit(p, &a.model),
        (None, Some(p)) => {
            let grid = QuadratureGrid::new(a.model.grid_size.unwrap_or(99))?;
            let op = parse_operator(a.model.operator.as_deref().unwrap_or("point-eval"), &grid)?;
            let alpha = io::read_function(p, "value", &grid)?;
            let betas = match &a.beta_file {
                Some(b) => vec![io::read_function(b, "value", &grid)?],
                None => Vec::new(),
            };
            ModelFunctions::new(alpha, betas, op)
        }
        (Some(_), Some(_)) => Err(FnarError::invalid("give either --fit or --alpha-file, not both")),
        (None, None) => Err(FnarError::invalid("missing model: give --fit or --alpha-file")),
    }
}

fn write_propagation(result: &PropagationResult, out: &Path, grid: &QuadratureGrid) -> Result<()> {
    result.write(&out.join("per_order.csv"), &out.join("cumulative.csv"))?;
    println!("unit {}: total impact {:.6e}", result.unit, effects::total_impact(result, grid));
    Ok(())
}

fn cmd_effects(c: EffectsCommand, config: Option<&Path>) -> Result<()> {
    let (kind, a) = match c {
        EffectsCommand::Marginal(a) => ("marginal", a),
        EffectsCommand::Impulse(a) => ("impulse", a),
        EffectsCommand::Keyplayer(a) => ("keyplayer", a),
    };
    let a = a.merge(load_section(config, "effects")?);
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
    existing_dir(&out)?;
    let model = load_model(&a)?;
    let w = load_weights(&a.model, None)?;
    let order = a.orders.unwrap_or(effects::DEFAULT_ORDER);
    let grid = model.grid().clone();
    let shock = || -> Result<FunctionOnGrid> { io::read_function(&required(a.shock_file.clone(), "shock-file")?, "eta", &grid) };
    match kind {
        "marginal" => {
            let r = effects::marginal_effects(&model, &w, required(a.unit, "unit")?, a.covariate.unwrap_or(0), order)?;
            write_propagation(&r, &out, &grid)
        }
        "impulse" => {
            let r = effects::impulse_response(&model, &w, required(a.unit, "unit")?, &shock()?, order)?;
            write_propagation(&r, &out, &grid)
        }
        _ => {
            let (best, impacts) = effects::risk_key_player(&model, &w, &shock()?, order)?;
            let rows = impacts.iter().enumerate().map(|(i, v)| vec![i.to_string(), fmt(*v)]);
            write_table(&out.join("impacts.csv"), &["unit", "total_impact"], rows)?;
            println!("{best}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a.merge(load_section(config, "simulate")?)),
        Command::Estimate(a) => cmd_estimate(a.merge(load_section(config, "estimate")?)),
        Command::Montecarlo(a) => cmd_montecarlo(a.merge(load_section(config, "montecarlo")?)),
        Command::Effects(c) => cmd_effects(c, config),
    }
}

/// Run with the given arguments (including the program name) and return the exit code.
pub fn run_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 4,
            };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run() -> i32 {
    run_with(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn operator_labels_round_trip() {
        let q = QuadratureGrid::new(9).unwrap();
        for l in ["point-eval", "epanechnikov", "past-window:0.25"] {
            assert_eq!(parse_operator(l, &q).unwrap().label(), l);
        }
        assert!(parse_operator("median", &q).is_err());
        assert!(parse_operator("past-window:x", &q).is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "[simulate]\nn = 12\nT = 3\nseed = 5\nr = 0.4\n").unwrap();
        let from_file: SimulateArgs = load_section(Some(&p), "simulate").unwrap();
        let flags = SimulateArgs {
            n: Some(20),
            ..Default::default()
        };
        let m = flags.merge(from_file);
        assert_eq!(m.n, Some(20));
        assert_eq!(m.periods, Some(3));
        assert_eq!(m.seed, Some(5));
        assert_eq!(m.r, Some(0.4));
    }

    #[test]
    fn unknown_config_key_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "[simulate]\nbogus = 1\n").unwrap();
        let err = load_section::<SimulateArgs>(Some(&p), "simulate").unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}
