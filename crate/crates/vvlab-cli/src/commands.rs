//! Subcommand implementations.

use serde::Serialize;
use vvlab::bounds::Bounds;
use vvlab::classical::ClassicalTable;
use vvlab::moment::{random_unit_coefficients, synthesize_control, ControlOptions};
use vvlab::problem::{validate_assumptions, Potential, VectorField};
use vvlab::sim::{cost_scan, scan_spectrum, Verdict};
use vvlab::spectral::{discretize, eigenpairs, gap_check, localization_check, points_for, weyl_check, Spectrum};

use crate::config::{ConfigError, Modules, RunConfig, EXAMPLE_EPS};
use crate::output::{eps_tag, IoError, Sink};

/// Spectral band constant used by the Weyl check.
const D_REF: f64 = std::f64::consts::PI;
/// Gap-window margin `δ` in `2πε/(T₁ + δ)`.
const GAP_DELTA: f64 = 0.5;
/// Classical table resolution.
const TABLE_POINTS: usize = 256;
/// Eigenvalues up to this multiple of `max V` are computed by default.
const E_MAX_FACTOR: f64 = 4.0;
/// `δ` in the upper cost exponent `min_m 𝖦(T, m, δ)`.
const ENVELOPE_DELTA: f64 = 0.01;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Assumptions(String),
    Resolution(String),
    Family(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Assumptions(_) => 3,
            CliError::Resolution(_) => 4,
            CliError::Family(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Assumptions(m) | CliError::Resolution(m) | CliError::Family(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(format!("config error: {e}"))
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Config(format!("output error: {}", e.0))
    }
}

impl From<vvlab::Error> for CliError {
    fn from(e: vvlab::Error) -> Self {
        use vvlab::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidParameter(_) | E::InvalidInput(_) | E::Domain(_) | E::TrajectoryExited { .. } => CliError::Config(msg),
            E::AssumptionViolation(_) | E::HypothesisViolation(_) | E::EnergyBelowGround { .. } => CliError::Assumptions(msg),
            E::Resolution(_) | E::SolverFailure(_) | E::Truncation(_) => CliError::Resolution(msg),
            E::IllConditioned(_) | E::InsufficientFamily(_) => CliError::Family(msg),
        }
    }
}

/// Field and potential, with assumption failures reported by item.
fn setup(cfg: &RunConfig, sink: &mut Sink) -> Result<(VectorField, Potential), CliError> {
    let field = cfg.field_spec()?.build()?;
    let report = validate_assumptions(&field);
    sink.json("assumptions.json", &report)?;
    let pot = Potential::new(&field).map_err(|e| {
        let items = report.failed_items().join("/");
        CliError::Assumptions(format!("assumptions {items} fail: {e}"))
    })?;
    Ok((field, pot))
}

#[derive(Serialize)]
struct G14Row {
    e: f64,
    g14: f64,
}

fn bounds_into(cfg: &RunConfig, sink: &mut Sink, pot: &Potential) -> Result<(), CliError> {
    let b = Bounds::new(pot)?;
    let report = b.report(cfg.with_t15)?;
    sink.json("bounds.json", &report)?;
    let rows: Vec<G14Row> = b.g14_table()?.into_iter().map(|(e, g14)| G14Row { e, g14 }).collect();
    sink.csv("g14.csv", &rows)?;
    println!("T1 = {}  T14 = {}  T16 = {:?}", report.t1, report.t14, report.t16);
    Ok(())
}

pub fn bounds(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let (_, pot) = setup(cfg, sink)?;
    bounds_into(cfg, sink, &pot)
}

#[derive(Serialize)]
struct ModeRow {
    k: usize,
    lambda: f64,
    beta: f64,
    gap: f64,
    eps_dphi0: f64,
    eps_dphil: f64,
}

#[derive(Serialize)]
struct SpectrumSummary {
    eps: f64,
    n_points: usize,
    modes: usize,
    gram_residual: f64,
    weyl: Option<vvlab::spectral::WeylReport>,
    gaps: Option<vvlab::spectral::GapReport>,
    localization: Option<vvlab::spectral::LocalizationReport>,
}

fn spectrum_for(cfg: &RunConfig, field: &VectorField, pot: &Potential, eps: f64) -> Result<Spectrum, CliError> {
    let n = cfg.n_points.unwrap_or_else(|| points_for(field, eps, cfg.points_per_eps));
    let disc = discretize(field, eps, n)?;
    let k = match cfg.k_max {
        Some(k) => k,
        None => disc.count_below(E_MAX_FACTOR * pot.vmax).max(1),
    };
    Ok(eigenpairs(&disc, k)?)
}

fn spectrum_into(cfg: &RunConfig, sink: &mut Sink, field: &VectorField, pot: &Potential, modules: &Modules) -> Result<(), CliError> {
    let eps_list = cfg.eps()?;
    let table = if modules.weyl || modules.gaps { Some(ClassicalTable::build(pot, TABLE_POINTS, None)?) } else { None };
    for eps in eps_list {
        let sp = spectrum_for(cfg, field, pot, eps)?;
        let tag = eps_tag(eps);
        let rows: Vec<ModeRow> = sp
            .rows()
            .into_iter()
            .map(|(k, lambda, beta, gap, eps_dphi0, eps_dphil)| ModeRow { k, lambda, beta, gap, eps_dphi0, eps_dphil })
            .collect();
        sink.csv(&format!("spectrum_{tag}.csv"), &rows)?;
        let weyl = match (&table, modules.weyl) {
            (Some(t), true) => Some(weyl_check(&sp, pot, t, D_REF)?),
            _ => None,
        };
        let gaps = match (&table, modules.gaps) {
            (Some(t), true) => Some(gap_check(&sp, pot, t.t1, GAP_DELTA)?),
            _ => None,
        };
        let localization = if modules.localization {
            let ks: Vec<usize> = cfg.localization_modes.iter().copied().filter(|&k| k < sp.len()).collect();
            Some(localization_check(&sp, pot, &ks)?)
        } else {
            None
        };
        let summary = SpectrumSummary { eps, n_points: sp.x.len(), modes: sp.len(), gram_residual: sp.gram_residual(), weyl, gaps, localization };
        sink.json(&format!("spectrum_{tag}.json"), &summary)?;
        println!("eps = {eps}: {} modes", sp.len());
    }
    Ok(())
}

pub fn spectrum(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let (field, pot) = setup(cfg, sink)?;
    spectrum_into(cfg, sink, &field, &pot, &cfg.modules)
}

pub fn localization(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let (field, pot) = setup(cfg, sink)?;
    let only = Modules { weyl: false, gaps: false, localization: true };
    spectrum_into(cfg, sink, &field, &pot, &only)
}

#[derive(Serialize)]
struct ControlRow {
    t: f64,
    h: f64,
    h_scaled: f64,
}

#[derive(Serialize)]
struct CostRow {
    eps: f64,
    t: f64,
    m: f64,
    n_trunc: usize,
    ln_norm_sq_achieved: f64,
    ln_bound_predicted_unit_c: f64,
    ln_fitted_constant: f64,
    modal_residual: f64,
    family_residual: f64,
}

pub fn control(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let (field, pot) = setup(cfg, sink)?;
    let eps_list = cfg.eps()?;
    let t = match cfg.t {
        Some(t) => t,
        None => cfg.t_over_t16.unwrap_or(1.2) * Bounds::new(&pot)?.t16()?,
    };
    let n = cfg.n_trunc.unwrap_or(ControlOptions::default().n_trunc);
    let opts = ControlOptions { n_trunc: n, target_residual: cfg.target_residual, ..Default::default() };
    let v0 = random_unit_coefficients(2 * n, cfg.seed);
    let mut costs = Vec::new();
    let mut worst = 0.0f64;
    for eps in eps_list {
        let modes = cfg.k_max.unwrap_or(2 * n + 2);
        let disc = discretize(&field, eps, cfg.n_points.unwrap_or_else(|| points_for(&field, eps, cfg.points_per_eps).max(4 * modes)))?;
        let sp = eigenpairs(&disc, modes)?;
        let v = &v0[..v0.len().min(sp.len())];
        let sig = synthesize_control(&sp, &field, t, cfg.m, v, &opts)?;
        let tag = eps_tag(eps);
        let rows: Vec<ControlRow> = sig
            .t_grid
            .iter()
            .zip(&sig.h_values)
            .map(|(&t, &hs)| ControlRow { t, h: hs * sig.h_log_scale.exp(), h_scaled: hs })
            .collect();
        sink.csv(&format!("control_{tag}.csv"), &rows)?;
        sink.json(&format!("family_{tag}.json"), &sig.family)?;
        worst = worst.max(sig.modal_residual);
        costs.push(CostRow {
            eps,
            t,
            m: cfg.m,
            n_trunc: sig.n_trunc,
            ln_norm_sq_achieved: sig.ln_norm_sq,
            ln_bound_predicted_unit_c: sig.ln_bound_unit,
            ln_fitted_constant: sig.ln_fitted_constant,
            modal_residual: sig.modal_residual,
            family_residual: sig.family.biorthogonality_residual,
        });
        println!("eps = {eps}: modal residual {:.3e}, ln‖h‖² = {:.4}", sig.modal_residual, sig.ln_norm_sq);
    }
    sink.csv("cost.csv", &costs)?;
    if !(worst < cfg.target_residual) {
        return Err(CliError::Family(format!("post-control residual {worst:.3e} ≥ target {:.1e}", cfg.target_residual)));
    }
    Ok(())
}

#[derive(Serialize)]
struct ScanRow {
    eps: f64,
    t: f64,
    log_c0: f64,
    k_used: usize,
    converged: bool,
}

pub fn cost_scan_cmd(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let (field, pot) = setup(cfg, sink)?;
    let eps_list = cfg.eps()?;
    let b = Bounds::new(&pot)?;
    let table = b.g14_table()?;
    let t = match cfg.t {
        Some(t) => t,
        None => 0.5 * (b.t14()?.0 + b.t16()?),
    };
    let lower = b.lower_rate(t, &table)?.0;
    let upper = b.min_cost_exponent_upper(t, ENVELOPE_DELTA, &table)?.1;
    let spectra: Vec<Spectrum> = eps_list.iter().map(|&e| scan_spectrum(&field, e, cfg.points_per_eps, cfg.k_cap)).collect::<vvlab::Result<_>>()?;
    let scan = cost_scan(&field, &spectra, t, cfg.k_start, cfg.k_cap, Some((lower, upper)))?;
    let rows: Vec<ScanRow> =
        scan.cells.iter().map(|c| ScanRow { eps: c.eps, t: c.t, log_c0: c.log_c0, k_used: c.k_used, converged: c.converged }).collect();
    sink.csv("cost_scan.csv", &rows)?;
    sink.json("cost_scan.json", &scan)?;
    let flag = if scan.verdict == Verdict::Inconclusive { " (inconclusive: fit unreliable)" } else { "" };
    println!("rate = {:.6} (R² = {:.4}), envelope [{lower:.6}, {upper:.6}], verdict {:?}{flag}", scan.fit.rate, scan.fit.r2, scan.verdict);
    Ok(())
}

pub fn example5(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let (field, pot) = setup(cfg, sink)?;
    bounds_into(cfg, sink, &pot)?;
    spectrum_into(cfg, sink, &field, &pot, &cfg.modules)
}

/// Defaults of the `example5` run: the sign − preset and three `ε` values.
pub fn example5_defaults(cfg: &mut RunConfig) {
    if cfg.preset.is_none() && cfg.field.is_none() {
        cfg.preset = Some("example5-minus".into());
    }
    if cfg.eps_list.is_none() {
        cfg.eps_list = Some(EXAMPLE_EPS.to_vec());
    }
}
