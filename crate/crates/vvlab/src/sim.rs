//! Time-domain solvers for the viscous problems, the duality residual, the modal Gramian
//! measurement of `C₀(T, ε)`, and exponential-rate fitting across `ε`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use rug::Float;
use serde::Serialize;

use crate::numerics::fit::{linear_fit, LineFit};
use crate::numerics::mp;
use crate::numerics::tridiag::Factored;
use crate::problem::VectorField;
use crate::spectral::{discretize, eigenpairs, points_for, Discretization, Spectrum};
use crate::{Error, Result};

/// Largest time step relative to `ε`.
pub const DT_OVER_EPS: f64 = 1.0 / 50.0;
/// Relative change of `C₀` under doubling of the mode count accepted as converged.
pub const K_DOUBLING_TOL: f64 = 0.05;
/// `R²` below which an exponential fit is flagged.
pub const MIN_R2: f64 = 0.8;
/// Default `ε` grid of the cost scan.
pub const DEFAULT_EPS_GRID: [f64; 5] = [0.08, 0.06, 0.045, 0.034, 0.025];

/// Which unknown a trajectory stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variable {
    /// Controlled original unknown.
    Y,
    /// Free original observation unknown.
    U,
    /// Conjugated observation `ζ = e^{f/2ε} u`.
    Zeta,
    /// Conjugated control unknown `v = e^{−f/2ε} y`.
    V,
}

/// Uniform time grid with `nt` steps on `[0, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t_end: f64,
    pub nt: usize,
}

impl TimeGrid {
    /// Steps so that `Δt ≤ ε/50`.
    pub fn for_eps(t_end: f64, eps: f64) -> Self {
        Self { t_end, nt: ((t_end / (DT_OVER_EPS * eps)).ceil() as usize).max(1) }
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.nt as f64
    }
}

/// Snapshots on the interior grid plus the boundary flux `ε∂_x(·)(t, 0)` at step midpoints.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub variable: Variable,
    pub eps: f64,
    pub x: Vec<f64>,
    pub grid: TimeGrid,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub flux_times: Vec<f64>,
    pub flux: Vec<f64>,
}

impl Trajectory {
    pub fn initial(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("non-empty trajectory")
    }
}

/// `y_t = −(lo·y_{i−1} + di·y_i + up·y_{i+1})` with `y_{−1} = g(t)` and `y_n = 0`.
struct Operator {
    lo: Vec<f64>,
    di: Vec<f64>,
    up: Vec<f64>,
}

struct Evolution {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    mid_first: Vec<f64>,
}

/// Crank–Nicolson with boundary lifting; keeps every `stride`-th state and the final one.
fn crank_nicolson<G: Fn(f64) -> f64>(op: &Operator, init: &[f64], grid: TimeGrid, g: G, stride: usize) -> Result<Evolution> {
    let n = init.len();
    let dt = grid.dt();
    let half = 0.5 * dt;
    let sub: Vec<f64> = op.lo.iter().map(|v| half * v).collect();
    let sup: Vec<f64> = op.up.iter().map(|v| half * v).collect();
    let diag: Vec<f64> = op.di.iter().map(|v| 1.0 + half * v).collect();
    let fac = Factored::new(&sub, &diag, &sup);
    let stride = stride.max(1);
    let mut y = init.to_vec();
    let mut times = vec![0.0];
    let mut states = vec![y.clone()];
    let mut mid_first = Vec::with_capacity(grid.nt);
    let mut rhs = vec![0.0; n];
    for step in 0..grid.nt {
        let (t0, t1) = (step as f64 * dt, (step + 1) as f64 * dt);
        for i in 0..n {
            let left = if i > 0 { y[i - 1] } else { 0.0 };
            let right = if i + 1 < n { y[i + 1] } else { 0.0 };
            rhs[i] = y[i] - half * (op.lo[i] * left + op.di[i] * y[i] + op.up[i] * right);
        }
        rhs[0] -= half * op.lo[0] * (g(t0) + g(t1));
        fac.solve_in_place(&mut rhs);
        if !rhs.iter().all(|v| v.is_finite()) {
            return Err(Error::SolverFailure(format!("non-finite state at step {step}")));
        }
        mid_first.push(0.5 * (y[0] + rhs[0]));
        std::mem::swap(&mut y, &mut rhs);
        if (step + 1) % stride == 0 || step + 1 == grid.nt {
            times.push(t1);
            states.push(y.clone());
        }
    }
    Ok(Evolution { times, states, mid_first })
}

fn conjugated_operator(disc: &Discretization) -> Operator {
    let n = disc.n;
    let e = disc.eps;
    Operator { lo: vec![disc.offdiag / e; n], di: disc.diag.iter().map(|d| d / e).collect(), up: vec![disc.offdiag / e; n] }
}

fn midpoints(grid: TimeGrid) -> Vec<f64> {
    let dt = grid.dt();
    (0..grid.nt).map(|k| (k as f64 + 0.5) * dt).collect()
}

/// `ε∂_t v + P_ε v = 0`, `v(t,0) = g(t)`, `v(t,L) = 0`.
pub fn solve_conjugated_heat<G: Fn(f64) -> f64>(disc: &Discretization, grid: TimeGrid, g: G, init: &[f64], stride: usize) -> Result<Trajectory> {
    if init.len() != disc.n {
        return Err(Error::InvalidInput(format!("initial state has {} points, grid has {}", init.len(), disc.n)));
    }
    let ev = crank_nicolson(&conjugated_operator(disc), init, grid, g, stride)?;
    let scale = disc.eps / disc.h;
    Ok(Trajectory {
        variable: Variable::V,
        eps: disc.eps,
        x: disc.x.clone(),
        grid,
        times: ev.times,
        states: ev.states,
        flux_times: midpoints(grid),
        flux: ev.mid_first.iter().map(|v| scale * v).collect(),
    })
}

/// Free observation problem solved through `ζ = e^{f/2ε} u`; the flux is the discrete adjoint of the
/// boundary lifting in [`solve_control_conjugated`].
pub fn solve_observation(field: &VectorField, disc: &Discretization, grid: TimeGrid, u0: &[f64], stride: usize) -> Result<Trajectory> {
    let e2 = 2.0 * disc.eps;
    let zeta0: Vec<f64> = disc.x.iter().zip(u0).map(|(&x, u)| (field.f(x) / e2).exp() * u).collect();
    let mut tr = solve_conjugated_heat(disc, grid, |_| 0.0, &zeta0, stride)?;
    let back: Vec<f64> = disc.x.iter().map(|&x| (-field.f(x) / e2).exp()).collect();
    for s in tr.states.iter_mut() {
        s.iter_mut().zip(&back).for_each(|(v, w)| *v *= w);
    }
    let w0 = (-field.f(0.0) / e2).exp();
    tr.flux.iter_mut().for_each(|v| *v *= w0);
    tr.variable = Variable::U;
    Ok(tr)
}

/// Control problem solved through `v = e^{−f/2ε} y`, returned in the original variable.
pub fn solve_control_conjugated<H: Fn(f64) -> f64>(
    field: &VectorField,
    disc: &Discretization,
    grid: TimeGrid,
    h: H,
    y0: &[f64],
    stride: usize,
) -> Result<Trajectory> {
    let e2 = 2.0 * disc.eps;
    let v0: Vec<f64> = disc.x.iter().zip(y0).map(|(&x, y)| (-field.f(x) / e2).exp() * y).collect();
    let g0 = (-field.f(0.0) / e2).exp();
    let mut tr = solve_conjugated_heat(disc, grid, |t| g0 * h(t), &v0, stride)?;
    let fwd: Vec<f64> = disc.x.iter().map(|&x| (field.f(x) / e2).exp()).collect();
    for s in tr.states.iter_mut() {
        s.iter_mut().zip(&fwd).for_each(|(v, w)| *v *= w);
    }
    tr.flux.clear();
    tr.flux_times.clear();
    tr.variable = Variable::Y;
    Ok(tr)
}

/// `(∂_t + f′∂_x + 𝔟 − ε∂_x²) y = 0`, `y(t,0) = h(t)`, `y(t,L) = 0`, by centered differences.
pub fn solve_viscous_transport<H: Fn(f64) -> f64>(
    field: &VectorField,
    eps: f64,
    n: usize,
    grid: TimeGrid,
    h: H,
    y0: &[f64],
    stride: usize,
) -> Result<Trajectory> {
    let disc = discretize(field, eps, n)?;
    if y0.len() != n {
        return Err(Error::InvalidInput(format!("initial state has {} points, grid has {n}", y0.len())));
    }
    let hx = disc.h;
    let k = eps / (hx * hx);
    let op = Operator {
        lo: disc.x.iter().map(|&x| -k - field.fp(x) / (2.0 * hx)).collect(),
        di: disc.x.iter().map(|&x| 2.0 * k + field.b(x)).collect(),
        up: disc.x.iter().map(|&x| -k + field.fp(x) / (2.0 * hx)).collect(),
    };
    let ev = crank_nicolson(&op, y0, grid, h, stride)?;
    Ok(Trajectory { variable: Variable::Y, eps, x: disc.x, grid, times: ev.times, states: ev.states, flux_times: vec![], flux: vec![] })
}

/// `max_j ‖a_j − b_j‖ / max_j ‖b_j‖` over matching snapshots.
pub fn trajectory_mismatch(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.states.len() != b.states.len() || a.x.len() != b.x.len() {
        return Err(Error::InvalidInput("trajectories on different grids".into()));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = b.states.iter().map(|s| norm(s)).fold(0.0, f64::max);
    let diff = a
        .states
        .iter()
        .zip(&b.states)
        .map(|(p, q)| norm(&p.iter().zip(q).map(|(x, y)| x - y).collect::<Vec<_>>()))
        .fold(0.0, f64::max);
    Ok(diff / scale)
}

/// Normalized `|(u(T),y0) − (u0,y(T)) + ∫ε∂_x u(t,0) h(T−t) dt|`, the time integral by the midpoint rule
/// with `h` averaged over each step.
pub fn duality_residual<H: Fn(f64) -> f64>(u: &Trajectory, y: &Trajectory, h: H) -> Result<f64> {
    if u.variable != Variable::U || y.variable != Variable::Y {
        return Err(Error::InvalidInput("expected an observation and a control trajectory".into()));
    }
    if u.grid != y.grid || u.x.len() != y.x.len() || u.x.first() != y.x.first() || u.flux.len() != u.grid.nt {
        return Err(Error::InvalidInput("observation and control grids differ".into()));
    }
    let hx = u.x[0];
    let ip = |a: &[f64], b: &[f64]| hx * a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let a = ip(u.last(), y.initial());
    let b = ip(u.initial(), y.last());
    let dt = u.grid.dt();
    let nt = u.grid.nt;
    let c: f64 = (0..nt)
        .map(|m| {
            let n = nt - 1 - m;
            dt * u.flux[m] * 0.5 * (h(n as f64 * dt) + h((n + 1) as f64 * dt))
        })
        .sum();
    let scale = a.abs().max(b.abs()).max(c.abs());
    Ok(if scale == 0.0 { 0.0 } else { (a - b + c).abs() / scale })
}

/// Result of one Gramian evaluation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GramianValue {
    pub eps: f64,
    pub t: f64,
    pub k: usize,
    pub log_c0: f64,
    /// `1e−14·trace` was added to the observation Gramian.
    pub regularized: bool,
}

/// Working precision for a pencil of size `k`.
pub fn gramian_precision(k: usize) -> u32 {
    128 + 8 * k as u32
}

/// `ln C₀(T, ε)` from the largest generalized eigenvalue of the modal pencil on the first `k` modes.
pub fn gramian_log_cost(spec: &Spectrum, field: &VectorField, t: f64, k: usize) -> Result<GramianValue> {
    if !spec.qf_zero {
        return Err(Error::HypothesisViolation("modal Gramian requires q_f = 0".into()));
    }
    if k == 0 || k > spec.len() {
        return Err(Error::InvalidParameter(format!("k = {k} not in 1..={}", spec.len())));
    }
    let eps = spec.eps;
    let fx: Vec<f64> = spec.x.iter().map(|&x| field.f(x)).collect();
    let fmin = fx.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = fx.iter().map(|f| (-(f - fmin) / eps).exp()).collect();
    let gram: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|j| (0..k).map(|l| spec.h * w.iter().zip(&spec.eigfuns[j]).zip(&spec.eigfuns[l]).map(|((wi, a), b)| wi * a * b).sum::<f64>()).collect())
        .collect();
    let lm: Vec<f64> = (0..k).map(|j| -spec.lambdas[j] * t / eps - spec.dphi0[j].abs().ln()).collect();
    let c = lm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let prec = gramian_precision(k);
    let scale: Vec<Float> = lm.iter().map(|l| Float::with_val(prec, l - c).exp()).collect();
    let mut m = mp::zeros(k, k, prec);
    let mut g = mp::zeros(k, k, prec);
    for i in 0..k {
        for j in 0..k {
            m[i][j] = Float::with_val(prec, &scale[i] * &scale[j]) * gram[i][j];
            let s = Float::with_val(prec, spec.lambdas[i]) + spec.lambdas[j];
            let decay = -Float::with_val(prec, -Float::with_val(prec, &s * t) / eps).exp_m1();
            g[i][j] = decay * eps / s;
        }
    }
    let (l, regularized) = match mp::cholesky(&g, prec) {
        Some(l) => (l, false),
        None => {
            let tr = (0..k).fold(Float::new(prec), |a, i| a + &g[i][i]) * 1e-14;
            for i in 0..k {
                g[i][i] += &tr;
            }
            (mp::cholesky(&g, prec).ok_or_else(|| Error::SolverFailure("observation Gramian not positive".into()))?, true)
        }
    };
    let a = mp::congruence_inverse(&l, &m, prec);
    let (af, ln_scale) = mp::to_scaled_f64(&a);
    let dm = DMatrix::from_fn(k, k, |i, j| 0.5 * (af[i][j] + af[j][i]));
    let top = SymmetricEigen::new(dm).eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(top > 0.0) {
        return Err(Error::SolverFailure("non-positive pencil eigenvalue".into()));
    }
    let log_c0_sq = (field.f(0.0) - fmin) / eps + 2.0 * c + ln_scale + top.ln();
    Ok(GramianValue { eps, t, k, log_c0: 0.5 * log_c0_sq, regularized })
}

/// `C₀(T, ε)` with the mode count doubled from `k_start` until `C₀` changes by less than 5%.
#[derive(Debug, Clone, Serialize)]
pub struct GramianCost {
    pub eps: f64,
    pub t: f64,
    pub k_used: usize,
    pub log_c0: f64,
    pub history: Vec<(usize, f64)>,
    pub converged: bool,
    pub regularized: bool,
}

pub fn gramian_cost(spec: &Spectrum, field: &VectorField, t: f64, k_start: usize, k_cap: usize) -> Result<GramianCost> {
    let k_cap = k_cap.min(spec.len());
    let mut k = k_start.clamp(1, k_cap);
    let mut history = Vec::new();
    let mut prev = gramian_log_cost(spec, field, t, k)?;
    history.push((k, prev.log_c0));
    let mut regularized = prev.regularized;
    while 2 * k <= k_cap {
        let next = gramian_log_cost(spec, field, t, 2 * k)?;
        k *= 2;
        history.push((k, next.log_c0));
        regularized |= next.regularized;
        let change = (next.log_c0 - prev.log_c0).abs();
        prev = next;
        if change < (1.0 + K_DOUBLING_TOL).ln() {
            return Ok(GramianCost { eps: spec.eps, t, k_used: k, log_c0: prev.log_c0, history, converged: true, regularized });
        }
    }
    Ok(GramianCost { eps: spec.eps, t, k_used: k, log_c0: prev.log_c0, history, converged: false, regularized })
}

/// Fit `ln C₀ = rate/ε + b`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExponentFit {
    pub rate: f64,
    pub rate_se: f64,
    pub intercept: f64,
    pub r2: f64,
    pub reliable: bool,
}

pub fn exponent_fit(eps: &[f64], log_c0: &[f64]) -> Result<ExponentFit> {
    if eps.len() < 4 || eps.len() != log_c0.len() {
        return Err(Error::InvalidInput(format!("exponent fit needs ≥ 4 matching points, got {}", eps.len())));
    }
    let inv: Vec<f64> = eps.iter().map(|e| 1.0 / e).collect();
    let LineFit { slope, intercept, r2, slope_se, .. } = linear_fit(&inv, log_c0).ok_or_else(|| Error::InvalidInput("degenerate ε grid".into()))?;
    Ok(ExponentFit { rate: slope, rate_se: slope_se, intercept, r2, reliable: r2 >= MIN_R2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    InsideEnvelope,
    OutsideEnvelope,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostScan {
    pub t: f64,
    pub eps_list: Vec<f64>,
    pub cells: Vec<GramianCost>,
    pub fit: ExponentFit,
    /// `(sup_E(G₁₄ − ET), min_m 𝖦(T, m, δ))`.
    pub envelope: Option<(f64, f64)>,
    pub verdict: Verdict,
}

/// Spectrum used by the cost scan for one `ε`.
pub fn scan_spectrum(field: &VectorField, eps: f64, points_per_eps: f64, k_cap: usize) -> Result<Spectrum> {
    let disc = discretize(field, eps, points_for(field, eps, points_per_eps))?;
    eigenpairs(&disc, k_cap)
}

/// Cost scan over precomputed spectra (one per `ε`, in order).
pub fn cost_scan(field: &VectorField, spectra: &[Spectrum], t: f64, k_start: usize, k_cap: usize, envelope: Option<(f64, f64)>) -> Result<CostScan> {
    let cells: Vec<GramianCost> = spectra.par_iter().map(|sp| gramian_cost(sp, field, t, k_start, k_cap)).collect::<Result<_>>()?;
    let eps_list: Vec<f64> = spectra.iter().map(|s| s.eps).collect();
    let logs: Vec<f64> = cells.iter().map(|c| c.log_c0).collect();
    let fit = exponent_fit(&eps_list, &logs)?;
    let verdict = match envelope {
        _ if !fit.reliable => Verdict::Inconclusive,
        Some((lo, hi)) if fit.rate >= lo && fit.rate <= hi => Verdict::InsideEnvelope,
        Some(_) => Verdict::OutsideEnvelope,
        None => Verdict::Inconclusive,
    };
    Ok(CostScan { t, eps_list, cells, fit, envelope, verdict })
}
