//! Finite-difference discretization of `P_ε = −ε²∂_x² + V + ε q_f` with Dirichlet conditions,
//! eigenpairs, and the Weyl band, gap, and localization diagnostics.

use rayon::prelude::*;
use serde::Serialize;

use crate::agmon::AgmonProfile;
use crate::classical::{period, phase_volume, ClassicalTable};
use crate::numerics::fit::{linear_fit, LineFit};
use crate::numerics::logsum::log_sum_exp;
use crate::problem::{Potential, VectorField};
use crate::{Error, Result};

/// Smallest number of interior points.
pub const MIN_POINTS: usize = 64;
/// Largest admissible mesh `h` relative to `ε`.
pub const MAX_H_OVER_EPS: f64 = 1.0 / 8.0;
/// Floor below which `|φ|` is treated as underflowed.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

/// Symmetric tridiagonal matrix of the discretized operator on the interior nodes.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub eps: f64,
    pub n: usize,
    pub h: f64,
    pub x: Vec<f64>,
    pub diag: Vec<f64>,
    pub offdiag: f64,
    pub qf_zero: bool,
}

/// Interior points so that `h ≈ ε / points_per_eps`.
pub fn points_for(field: &VectorField, eps: f64, points_per_eps: f64) -> usize {
    ((points_per_eps * field.length() / eps).ceil() as usize).max(MIN_POINTS)
}

/// Second-order centered differences; rejects `h > ε/8`.
pub fn discretize(field: &VectorField, eps: f64, n: usize) -> Result<Discretization> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("ε must be > 0, got {eps}")));
    }
    if n < MIN_POINTS {
        return Err(Error::InvalidParameter(format!("n = {n} < {MIN_POINTS}")));
    }
    let h = field.length() / (n + 1) as f64;
    if h > MAX_H_OVER_EPS * eps {
        return Err(Error::Resolution(format!("h = {h:.3e} > ε/8 = {:.3e}", eps / 8.0)));
    }
    let x: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
    let k = eps * eps / (h * h);
    let diag = x.iter().map(|&xi| 2.0 * k + field.v(xi) + eps * field.qf(xi)).collect();
    Ok(Discretization { eps, n, h, x, diag, offdiag: -k, qf_zero: field.is_balanced() })
}

impl Discretization {
    /// Number of eigenvalues strictly below `lambda` (Sturm count).
    pub fn count_below(&self, lambda: f64) -> usize {
        let e2 = self.offdiag * self.offdiag;
        let mut q = 1.0;
        let mut count = 0;
        for (i, &d) in self.diag.iter().enumerate() {
            q = if i == 0 { d - lambda } else { d - lambda - e2 / q };
            if q == 0.0 {
                q = -f64::EPSILON * (d.abs() + lambda.abs()).max(f64::MIN_POSITIVE);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let r = 2.0 * self.offdiag.abs();
        let lo = self.diag.iter().cloned().fold(f64::INFINITY, f64::min) - r;
        let hi = self.diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + r;
        (lo, hi)
    }

    /// `k`-th eigenvalue (0-based) by bisection to machine precision.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                return mid;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }

    /// Eigenvector for an eigenvalue by forward and backward three-term recurrences matched
    /// inside the allowed region; normalized so that `h·Σψ² = 1` and `ψ′(0) > 0`.
    pub fn eigenvector(&self, lambda: f64) -> Vec<f64> {
        let n = self.n;
        let e = self.offdiag;
        let mut fwd = vec![0.0; n];
        fwd[0] = 1.0;
        if n > 1 {
            fwd[1] = -(self.diag[0] - lambda) * fwd[0] / e;
        }
        for i in 1..n - 1 {
            fwd[i + 1] = -((self.diag[i] - lambda) * fwd[i] + e * fwd[i - 1]) / e;
        }
        let mut bwd = vec![0.0; n];
        bwd[n - 1] = 1.0;
        if n > 1 {
            bwd[n - 2] = -(self.diag[n - 1] - lambda) * bwd[n - 1] / e;
        }
        for i in (1..n - 1).rev() {
            bwd[i - 1] = -((self.diag[i] - lambda) * bwd[i] + e * bwd[i + 1]) / e;
        }
        let m = self.match_index(lambda, &fwd);
        let scale = fwd[m] / bwd[m];
        let mut psi: Vec<f64> = fwd[..m].to_vec();
        psi.extend(bwd[m..].iter().map(|b| b * scale));
        let norm = (self.h * psi.iter().map(|p| p * p).sum::<f64>()).sqrt();
        let sgn = if psi[0] >= 0.0 { 1.0 } else { -1.0 };
        psi.iter_mut().for_each(|p| *p *= sgn / norm);
        psi
    }

    /// Index of the largest `|fwd|` inside `{V_i + 2ε²/h² ≤ λ + 2ε²/h²}`, the discrete allowed region.
    fn match_index(&self, lambda: f64, fwd: &[f64]) -> usize {
        let k2 = -2.0 * self.offdiag;
        let allowed: Vec<usize> = (0..self.n).filter(|&i| self.diag[i] - k2 <= lambda).collect();
        let (lo, hi) = match (allowed.first(), allowed.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => {
                let i = (0..self.n).min_by(|&a, &b| self.diag[a].total_cmp(&self.diag[b])).unwrap_or(0);
                (i, i)
            }
        };
        let mut best = lo;
        for i in lo..=hi {
            if fwd[i].abs() > fwd[best].abs() {
                best = i;
            }
        }
        best
    }
}

/// Eigenpairs of one discretization; boundary derivatives are scaled by `ε`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eps: f64,
    pub h: f64,
    pub x: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gaps: Vec<f64>,
    pub eigfuns: Vec<Vec<f64>>,
    pub dphi0: Vec<f64>,
    pub dphil: Vec<f64>,
    pub qf_zero: bool,
}

/// First `k_max` eigenpairs; requires `k_max ≤ n/4`.
pub fn eigenpairs(disc: &Discretization, k_max: usize) -> Result<Spectrum> {
    if k_max == 0 || 4 * k_max > disc.n {
        return Err(Error::Resolution(format!("k_max = {k_max} must satisfy 1 ≤ k_max ≤ n/4 = {}", disc.n / 4)));
    }
    let lambdas: Vec<f64> = (0..k_max).into_par_iter().map(|k| disc.eigenvalue(k)).collect();
    for (k, w) in lambdas.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::SolverFailure(format!("eigenvalues {k} and {} not separated", k + 1)));
        }
    }
    let eigfuns: Vec<Vec<f64>> = lambdas.par_iter().map(|&l| disc.eigenvector(l)).collect();
    let h = disc.h;
    let n = disc.n;
    let dphi0 = eigfuns.iter().map(|p| disc.eps * (4.0 * p[0] - p[1]) / (2.0 * h)).collect();
    let dphil = eigfuns.iter().map(|p| disc.eps * (p[n - 2] - 4.0 * p[n - 1]) / (2.0 * h)).collect();
    let betas: Vec<f64> = lambdas.iter().map(|l| l.sqrt()).collect();
    let gaps = betas.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(Spectrum { eps: disc.eps, h, x: disc.x.clone(), lambdas, betas, gaps, eigfuns, dphi0, dphil, qf_zero: disc.qf_zero })
}

/// Spectra for several `ε` in parallel, with `h ≈ ε/points_per_eps` and all eigenvalues up to `e_max`.
pub fn spectra_up_to(field: &VectorField, eps_list: &[f64], points_per_eps: f64, e_max: f64) -> Result<Vec<Spectrum>> {
    eps_list
        .par_iter()
        .map(|&eps| {
            let disc = discretize(field, eps, points_for(field, eps, points_per_eps))?;
            let k = disc.count_below(e_max).max(1);
            eigenpairs(&disc, k)
        })
        .collect()
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// `max |h·Σφ_jφ_k − δ_jk|`.
    pub fn gram_residual(&self) -> f64 {
        let k = self.len();
        (0..k)
            .into_par_iter()
            .map(|i| {
                (0..k)
                    .map(|j| {
                        let g: f64 = self.eigfuns[i].iter().zip(&self.eigfuns[j]).map(|(a, b)| a * b).sum::<f64>() * self.h;
                        (g - if i == j { 1.0 } else { 0.0 }).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// `max_i |φ_k(x_i) − (−1)^k φ_k(L − x_i)|`.
    pub fn reflection_residual(&self, k: usize) -> f64 {
        let p = &self.eigfuns[k];
        let s = if k % 2 == 0 { 1.0 } else { -1.0 };
        let n = p.len();
        (0..n).map(|i| (p[i] - s * p[n - 1 - i]).abs()).fold(0.0, f64::max)
    }

    /// Rows `(k, λ, β, gap, εφ′(0), εφ′(L))`; the last gap is `NaN`.
    pub fn rows(&self) -> Vec<(usize, f64, f64, f64, f64, f64)> {
        (0..self.len())
            .map(|k| (k, self.lambdas[k], self.betas[k], self.gaps.get(k).copied().unwrap_or(f64::NAN), self.dphi0[k], self.dphil[k]))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeylReport {
    pub eps: f64,
    /// Smallest `D` with `C = 0`.
    pub d_fit: f64,
    /// Smallest `C` with `D = d_ref`.
    pub c_fit: f64,
    pub d_ref: f64,
    pub band_violations: usize,
    pub k_range: (usize, usize),
    pub excluded_above_cap: usize,
    pub within_hypotheses: bool,
    /// `max_E |#{λ_k ≤ E} − Φ(E)/(πε)|` on 10 energies.
    pub count_error: f64,
}

/// Weyl band check with `D_fit = max_k |Φ(λ_k)/ε − πk|`.
pub fn weyl_check(spec: &Spectrum, pot: &Potential, table: &ClassicalTable, d_ref: f64) -> Result<WeylReport> {
    let eps = spec.eps;
    let ks: Vec<usize> = (0..spec.len()).filter(|&k| spec.lambdas[k] <= table.e_cap).collect();
    let excluded = spec.len() - ks.len();
    let phis: Vec<f64> = ks.iter().map(|&k| phase_volume(pot, spec.lambdas[k].max(pot.e0))).collect::<Result<_>>()?;
    let d_fit = ks.iter().zip(&phis).map(|(&k, p)| (p / eps - std::f64::consts::PI * k as f64).abs()).fold(0.0, f64::max);
    let e32 = eps.powf(1.5);
    let mut c_fit: f64 = 0.0;
    let mut violations = 0;
    for &k in &ks {
        let pk = std::f64::consts::PI * k as f64;
        let lo = table.phi_inverse(pot, eps * (pk - d_ref))?;
        let hi = table.phi_inverse(pot, eps * (pk + d_ref))?;
        let l = spec.lambdas[k];
        let excess = (lo - l).max(l - hi).max(0.0);
        if excess > 0.0 {
            violations += 1;
        }
        c_fit = c_fit.max(excess / e32);
    }
    let lmax = ks.last().map(|&k| spec.lambdas[k]).unwrap_or(pot.e0);
    let mut count_error: f64 = 0.0;
    for i in 1..=10 {
        let e = pot.e0 + (lmax - pot.e0) * i as f64 / 10.5;
        let count = spec.lambdas.iter().filter(|&&l| l <= e).count() as f64;
        count_error = count_error.max((count - phase_volume(pot, e)? / (std::f64::consts::PI * eps)).abs());
    }
    Ok(WeylReport {
        eps,
        d_fit,
        c_fit,
        d_ref,
        band_violations: violations,
        k_range: (ks.first().copied().unwrap_or(0), ks.last().copied().unwrap_or(0)),
        excluded_above_cap: excluded,
        within_hypotheses: spec.qf_zero,
        count_error,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub eps: f64,
    pub threshold: f64,
    /// Smallest index from which `β_{ℓ+1} − β_ℓ ≥ 2πε/(T₁+δ)`; `None` if the last gap fails.
    pub n_obs: Option<usize>,
    pub gamma_obs: f64,
    pub gamma2_obs: f64,
    /// `(k, G_k·T(λ_k)/(2πε))` for mid-range `k`.
    pub period_ratios: Vec<(usize, f64)>,
    pub within_hypotheses: bool,
}

pub fn gap_check(spec: &Spectrum, pot: &Potential, t1: f64, delta: f64) -> Result<GapReport> {
    let eps = spec.eps;
    let threshold = 2.0 * std::f64::consts::PI * eps / (t1 + delta);
    let n_obs = match spec.gaps.iter().rposition(|&g| g < threshold) {
        None => Some(0),
        Some(i) if i + 1 < spec.gaps.len() => Some(i + 1),
        Some(_) => None,
    };
    let gamma_obs = spec.gaps.iter().cloned().fold(f64::INFINITY, f64::min) / eps;
    let gamma2_obs = spec.lambdas.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min) / eps;
    let n = spec.gaps.len();
    let period_ratios = (n / 4..=(3 * n) / 4)
        .filter(|&k| k < n && spec.lambdas[k] > pot.e0)
        .map(|k| Ok((k, spec.gaps[k] * period(pot, spec.lambdas[k])? / (2.0 * std::f64::consts::PI * eps))))
        .collect::<Result<_>>()?;
    Ok(GapReport { eps, threshold, n_obs, gamma_obs, gamma2_obs, period_ratios, within_hypotheses: spec.qf_zero })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeLocalization {
    pub k: usize,
    pub e: f64,
    pub d0: f64,
    /// Regression of `−ε log|φ_k|` on `d_{A,E}` over the forbidden window.
    pub fit: Option<LineFit>,
    pub window_points: usize,
    /// Smallest `δ ≥ 0` with `|φ_k| ≤ e^{(δ − d)/ε}` on the forbidden region.
    pub delta_upper: f64,
    /// `|ε log(ε|φ_k′(0)|/√(E+1)) + d(0)|`.
    pub delta_flux: f64,
    /// Smallest `δ ≥ 0` with `‖e^{−f/2ε}φ_k‖ ≥ e^{−(min W_E + δ)/ε}`.
    pub delta_weighted: f64,
    pub underflow_points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalizationReport {
    pub eps: f64,
    pub modes: Vec<ModeLocalization>,
    pub delta_obs: f64,
}

/// Localization diagnostics; the regression window is `d ∈ [ε, d_edge − ε]` on each forbidden side,
/// where `d_edge` is the distance at the boundary on that side.
pub fn localization_check(spec: &Spectrum, pot: &Potential, k_set: &[usize]) -> Result<LocalizationReport> {
    let eps = spec.eps;
    let field = &pot.field;
    let modes: Vec<ModeLocalization> = k_set
        .par_iter()
        .map(|&k| {
            if k >= spec.len() {
                return Err(Error::InvalidParameter(format!("mode {k} not computed")));
            }
            let e = spec.lambdas[k].max(pot.e0);
            let prof = AgmonProfile::new(pot, e)?;
            let d = prof.d_on_sorted(&spec.x);
            let phi = &spec.eigfuns[k];
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            let mut delta_upper: f64 = 0.0;
            let mut underflow = 0;
            for (i, &xi) in spec.x.iter().enumerate() {
                if d[i] <= 0.0 {
                    continue;
                }
                let a = phi[i].abs();
                if a < UNDERFLOW_FLOOR {
                    underflow += 1;
                    continue;
                }
                let y = -eps * a.ln();
                delta_upper = delta_upper.max(d[i] - y);
                let edge = if xi < prof.x_minus { prof.d0 } else { prof.dl };
                if d[i] >= eps && d[i] <= edge - eps {
                    xs.push(d[i]);
                    ys.push(y);
                }
            }
            let flux = spec.dphi0[k].abs();
            let delta_flux = (eps * (flux / (e + 1.0).sqrt()).ln() + prof.d0).abs();
            let ln_terms: Vec<f64> = spec
                .x
                .iter()
                .zip(phi)
                .filter(|(_, p)| p.abs() > 0.0)
                .map(|(&xi, p)| -field.f(xi) / eps + 2.0 * p.abs().ln() + spec.h.ln())
                .collect();
            let ln_norm = 0.5 * log_sum_exp(&ln_terms);
            let min_w = prof.extrema().min_w;
            let delta_weighted = (-eps * ln_norm - min_w).max(0.0);
            Ok(ModeLocalization {
                k,
                e,
                d0: prof.d0,
                fit: linear_fit(&xs, &ys),
                window_points: xs.len(),
                delta_upper,
                delta_flux,
                delta_weighted,
                underflow_points: underflow,
            })
        })
        .collect::<Result<_>>()?;
    let delta_obs = modes.iter().map(|m| m.delta_flux.max(m.delta_upper)).fold(0.0, f64::max);
    Ok(LocalizationReport { eps, modes, delta_obs })
}
