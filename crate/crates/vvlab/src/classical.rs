//! Classical quantities of the Hamiltonian `ξ² + V(x)`: phase volume `Φ(E)`,
//! period `T(E)`, `T₁ = sup T`, the interaction time `T_{E,B}`, `Γ₀` and `κ₀`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::Serialize;

use crate::agmon::turning_points;
use crate::numerics::quad::{adaptive, gauss_legendre, tanh_sinh_nodes};
use crate::numerics::roots::golden_max;
use crate::problem::Potential;
use crate::{Error, Result};

const Q_TOL: f64 = 1e-13;
/// Relative distance to `E0` below which `Φ′` uses the harmonic limit.
pub const HARMONIC_GUARD: f64 = 1e-9;

/// `E − V(tp + dir·w²)` evaluated without cancellation near the turning point `tp` and near `x0`.
struct Gap<'a> {
    pot: &'a Potential,
    e: f64,
    tp: f64,
    dir: f64,
    len: f64,
    turning: bool,
}

impl<'a> Gap<'a> {
    fn new(pot: &'a Potential, e: f64, tp: f64, dir: f64, turning: bool) -> Self {
        Self { pot, e, tp, dir, len: (pot.x0 - tp).abs(), turning }
    }

    /// Returns `(E − V(s)) / w²` when `tp` is a turning point, else `E − V(s)`.
    fn eval(&self, w: f64) -> f64 {
        let w2 = w * w;
        let s = self.tp + self.dir * w2;
        let gap = if self.turning && w2 < 0.1 * self.len {
            return -self.dir * self.pot.mean_vp(self.tp, s);
        } else {
            (self.e - self.pot.e0) - self.pot.v_above_min(s)
        };
        if self.turning {
            gap / w2
        } else {
            gap
        }
    }

    /// `∫ 2w·√(E − V) dw` over the half-interval.
    fn phase(&self) -> f64 {
        adaptive(
            |w| {
                let g = self.eval(w).max(0.0).sqrt();
                if self.turning {
                    2.0 * w * w * g
                } else {
                    2.0 * w * g
                }
            },
            0.0,
            self.len.sqrt(),
            Q_TOL,
            Q_TOL,
        )
        .value
    }

    /// `∫ 2w / √(E − V) dw` over the half-interval.
    fn inverse(&self) -> f64 {
        adaptive(
            |w| {
                let g = self.eval(w);
                if g <= 0.0 {
                    return 0.0;
                }
                if self.turning {
                    2.0 / g.sqrt()
                } else {
                    2.0 * w / g.sqrt()
                }
            },
            0.0,
            self.len.sqrt(),
            Q_TOL,
            Q_TOL,
        )
        .value
    }
}

/// `Φ(E) = ∫_{x−}^{x+} √(E − V)`.
pub fn phase_volume(pot: &Potential, e: f64) -> Result<f64> {
    let (xm, xp) = turning_points(pot, e)?;
    if e == pot.e0 {
        return Ok(0.0);
    }
    Ok(Gap::new(pot, e, xm, 1.0, e < pot.v0).phase() + Gap::new(pot, e, xp, -1.0, e < pot.vl).phase())
}

/// `T(E) = 2∫_{x−}^{x+} √E / √(E − V)` for `E > E0`.
pub fn period(pot: &Potential, e: f64) -> Result<f64> {
    if !(e > pot.e0) {
        return Err(Error::Domain(format!("T(E) requires E > E0 = {}, got {e}", pot.e0)));
    }
    let (xm, xp) = turning_points(pot, e)?;
    let s = Gap::new(pot, e, xm, 1.0, e < pot.v0).inverse() + Gap::new(pot, e, xp, -1.0, e < pot.vl).inverse();
    Ok(2.0 * e.sqrt() * s)
}

/// Harmonic-oscillator limit `2π√E0 / √(V″(x0)/2)` of `T(E)` as `E → E0⁺`.
pub fn period_harmonic_limit(pot: &Potential) -> f64 {
    2.0 * PI * pot.e0.sqrt() / (0.5 * pot.vpp_min).sqrt()
}

/// `𝒯(E) = T(E) / (2√E)`.
pub fn cal_t(pot: &Potential, e: f64) -> Result<f64> {
    Ok(period(pot, e)? / (2.0 * e.sqrt()))
}

/// `Φ′(E) = T(E) / (4√E)`, with the harmonic limit within [`HARMONIC_GUARD`] of `E0`.
pub fn phi_prime(pot: &Potential, e: f64) -> Result<f64> {
    if e - pot.e0 < HARMONIC_GUARD * pot.e0 {
        if e < pot.e0 {
            return Err(Error::EnergyBelowGround { e, e0: pot.e0 });
        }
        return Ok(PI / (2.0 * (0.5 * pot.vpp_min).sqrt()));
    }
    Ok(period(pot, e)? / (4.0 * e.sqrt()))
}

/// `(T₁, argmax)`; the harmonic limit at `E0` and the kinks `V0`, `VL` are candidates.
pub fn sup_period(pot: &Potential) -> Result<(f64, f64)> {
    let n = 256;
    let hi = 2.0 * pot.vmax;
    let t_of = |e: f64| if e <= pot.e0 { period_harmonic_limit(pot) } else { period(pot, e).unwrap_or(f64::NAN) };
    let mut es: Vec<f64> = (0..=n).map(|i| pot.e0 + (hi - pot.e0) * i as f64 / n as f64).collect();
    es.push(pot.v0);
    es.push(pot.vl);
    es.sort_by(f64::total_cmp);
    es.dedup();
    let ts: Vec<f64> = es.iter().map(|&e| t_of(e)).collect();
    let (mut bi, mut bt) = (0, f64::NEG_INFINITY);
    for (i, &t) in ts.iter().enumerate() {
        if t > bt {
            bt = t;
            bi = i;
        }
    }
    let lo = es[bi.saturating_sub(1)];
    let up = es[(bi + 1).min(es.len() - 1)];
    let (xe, xt) = golden_max(t_of, lo, up, 1e-13 * pot.vmax);
    if xt > bt {
        Ok((xt, xe))
    } else {
        Ok((bt, es[bi]))
    }
}

/// Tabulated `(E, Φ, T, 𝒯)`; the first row holds the harmonic limit of `T` at `E0`.
#[derive(Debug, Clone, Serialize)]
pub struct ClassicalTable {
    pub energies: Vec<f64>,
    pub phi: Vec<f64>,
    pub period_t: Vec<f64>,
    pub cal_t: Vec<f64>,
    pub t1: f64,
    pub t1_arg: f64,
    pub e_cap: f64,
}

impl ClassicalTable {
    /// `n + 1` energies on `[E0, E_cap]`, `E_cap = 50·max V` by default.
    pub fn build(pot: &Potential, n: usize, e_cap: Option<f64>) -> Result<Self> {
        let e_cap = e_cap.unwrap_or(50.0 * pot.vmax);
        let energies: Vec<f64> = (0..=n).map(|i| pot.e0 + (e_cap - pot.e0) * i as f64 / n as f64).collect();
        let mut phi = Vec::with_capacity(n + 1);
        let mut period_t = Vec::with_capacity(n + 1);
        for &e in &energies {
            phi.push(phase_volume(pot, e)?);
            period_t.push(if e == pot.e0 { period_harmonic_limit(pot) } else { period(pot, e)? });
        }
        let cal_t = energies.iter().zip(&period_t).map(|(e, t)| t / (2.0 * e.sqrt())).collect();
        let (t1, t1_arg) = sup_period(pot)?;
        Ok(Self { energies, phi, period_t, cal_t, t1, t1_arg, e_cap })
    }

    /// `Φ⁻¹(y)` by bracketing in the table and bisection on `Φ`; `E0` for `y ≤ 0`.
    pub fn phi_inverse(&self, pot: &Potential, y: f64) -> Result<f64> {
        if y <= 0.0 {
            return Ok(pot.e0);
        }
        let last = *self.phi.last().expect("non-empty table");
        if y > last {
            return Err(Error::Domain(format!("Φ⁻¹({y}) beyond E_cap = {}", self.e_cap)));
        }
        let i = self.phi.partition_point(|&p| p < y).max(1);
        let (lo, hi) = (self.energies[i - 1], self.energies[i]);
        Ok(phi_inverse_bracketed(pot, y, lo, hi))
    }
}

fn phi_inverse_bracketed(pot: &Potential, y: f64, lo: f64, hi: f64) -> f64 {
    crate::numerics::roots::bisect(|e| phase_volume(pot, e).unwrap_or(f64::NAN) - y, lo, hi)
}

/// `Φ⁻¹(y)` without a table, bracketing on `[E0, ∞)` by doubling.
pub fn phi_inverse(pot: &Potential, y: f64) -> Result<f64> {
    if y <= 0.0 {
        return Ok(pot.e0);
    }
    let mut hi = pot.vmax.max(2.0 * pot.e0);
    while phase_volume(pot, hi)? < y {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Domain("Φ⁻¹ bracket overflow".into()));
        }
    }
    Ok(phi_inverse_bracketed(pot, y, pot.e0, hi))
}

#[derive(Debug, Clone, Copy)]
struct KernelNode {
    w: f64,
    x: f64,
    x_minus_e: f64,
    phi_prime: f64,
}

/// Cached quadrature of `T_{E,B} = (1/π)∫_{E0}^∞ log|(x+E+2B)/(x−E)| Φ′(x) dx` for fixed `E`.
///
/// `[E0, X1]` is split at `E`, `V0`, `VL` and integrated by tanh-sinh with exact distances to
/// the logarithmic singularity; `[X1, ∞)` uses `x = X1/u²` and Gauss–Legendre in `u`.
#[derive(Debug, Clone)]
pub struct InteractionKernel {
    pub e: f64,
    nodes: Vec<KernelNode>,
    tail: Vec<KernelNode>,
}

impl InteractionKernel {
    pub fn new(pot: &Potential, e: f64) -> Result<Self> {
        Self::with_step(pot, e, 1.0 / 32.0)
    }

    pub fn with_step(pot: &Potential, e: f64, h: f64) -> Result<Self> {
        if !(e >= pot.e0) {
            return Err(Error::EnergyBelowGround { e, e0: pot.e0 });
        }
        let x1 = 4.0 * pot.vmax.max(e);
        let mut bps = vec![pot.e0, e, pot.v0, pot.vl, x1];
        bps.retain(|&b| b >= pot.e0 && b <= x1);
        bps.sort_by(f64::total_cmp);
        bps.dedup();
        let mut nodes = Vec::new();
        for seg in bps.windows(2) {
            let (p, q) = (seg[0], seg[1]);
            for nd in tanh_sinh_nodes(p, q, h) {
                let x_minus_e = if q == e {
                    -nd.dr
                } else if p == e {
                    nd.dl
                } else {
                    nd.x - e
                };
                let phi_prime = if p == pot.e0 && nd.dl < HARMONIC_GUARD * pot.e0 {
                    PI / (2.0 * (0.5 * pot.vpp_min).sqrt())
                } else {
                    phi_prime(pot, nd.x)?
                };
                nodes.push(KernelNode { w: nd.w, x: nd.x, x_minus_e, phi_prime });
            }
        }
        let (gx, gw) = gauss_legendre(24);
        let mut tail = Vec::new();
        for panel in 0..4 {
            let (ua, ub) = (panel as f64 / 4.0, (panel + 1) as f64 / 4.0);
            for (t, wt) in gx.iter().zip(&gw) {
                let u = 0.5 * (ua + ub) + 0.5 * (ub - ua) * t;
                let x = x1 / (u * u);
                let jac = 2.0 * x1 / (u * u * u) * 0.5 * (ub - ua) * wt;
                tail.push(KernelNode { w: jac, x, x_minus_e: x - e, phi_prime: phi_prime(pot, x)? });
            }
        }
        Ok(Self { e, nodes, tail })
    }

    pub fn eval(&self, b: f64) -> Result<f64> {
        if !(b >= 0.0) {
            return Err(Error::InvalidParameter(format!("B must be >= 0, got {b}")));
        }
        let c = 2.0 * self.e + 2.0 * b;
        let mut s = 0.0;
        for n in &self.nodes {
            s += n.w * ((n.x + self.e + 2.0 * b) / n.x_minus_e.abs()).ln() * n.phi_prime;
        }
        for n in &self.tail {
            s += n.w * (c / n.x_minus_e).ln_1p() * n.phi_prime;
        }
        Ok(s / PI)
    }
}

/// `T_{E,B}`.
pub fn interaction_time(pot: &Potential, e: f64, b: f64) -> Result<f64> {
    if !(b >= 0.0) {
        return Err(Error::InvalidParameter(format!("B must be >= 0, got {b}")));
    }
    InteractionKernel::new(pot, e)?.eval(b)
}

/// `Γ₀(α, β) = πα − log(1+α²) − 2α·atan(1/α) + log(β²−1) + β·log((β+1)/(β−1))`.
pub fn gamma0(alpha: f64, beta: f64) -> Result<f64> {
    if !(beta >= 1.0) || !(beta <= alpha) || !alpha.is_finite() {
        return Err(Error::Domain(format!("Γ₀ requires 1 ≤ β ≤ α, got α={alpha}, β={beta}")));
    }
    let head = PI * alpha - alpha.mul_add(alpha, 1.0).ln() - 2.0 * alpha * (1.0 / alpha).atan();
    // log(β²−1) + β·log((β+1)/(β−1)) = (1−β)·log(β−1) + (1+β)·log(β+1)
    let tail = if beta == 1.0 {
        2.0 * std::f64::consts::LN_2
    } else {
        (1.0 - beta) * (beta - 1.0).ln() + (1.0 + beta) * (beta + 1.0).ln()
    };
    Ok(head + tail)
}

fn kappa_objective(u: f64, v: f64) -> f64 {
    let beta = u.exp();
    let alpha = beta * v.exp();
    gamma0(alpha, beta).map(|g| g / (alpha * alpha + beta * beta)).unwrap_or(f64::NEG_INFINITY)
}

/// `(κ₀, α*, β*)` from an `n × n` log-spaced grid on `1 ≤ β ≤ α ≤ 100β`, `β ≤ 100`, with local refinement.
pub fn kappa0_with_grid(n: usize) -> (f64, f64, f64) {
    let span = 100f64.ln();
    let (mut bu, mut bv, mut best) = (0.0, 0.0, f64::NEG_INFINITY);
    for i in 0..=n {
        for j in 0..=n {
            let (u, v) = (span * i as f64 / n as f64, span * j as f64 / n as f64);
            let g = kappa_objective(u, v);
            if g > best {
                best = g;
                bu = u;
                bv = v;
            }
        }
    }
    // Alternating golden-section refinement with the wedge boundary u, v ≥ 0.
    let mut step = span / n as f64;
    for _ in 0..60 {
        let (nu, _) = golden_max(|u| kappa_objective(u, bv), (bu - step).max(0.0), bu + step, 1e-14);
        let (nv, _) = golden_max(|v| kappa_objective(nu, v), (bv - step).max(0.0), bv + step, 1e-14);
        let moved = (nu - bu).abs() + (nv - bv).abs();
        bu = nu;
        bv = nv;
        step = (step * 0.7).max(2.0 * moved).max(1e-10);
        if moved < 1e-13 {
            break;
        }
    }
    let cand = kappa_objective(bu, bv);
    // Boundary candidates where the golden search cannot reach exactly 0.
    let mut out = (cand, bu, bv);
    for (u, v) in [(0.0, bv), (bu, 0.0), (0.0, 0.0)] {
        let g = kappa_objective(u, v);
        if g > out.0 {
            out = (g, u, v);
        }
    }
    let beta = out.1.exp();
    let alpha = beta * out.2.exp();
    (out.0 / (2.0 * PI * 2f64.sqrt()), alpha, beta)
}

/// `κ₀ = (1/(2π√2))·max_{α≥β≥1} Γ₀(α,β)/(α²+β²)`.
pub fn kappa0() -> f64 {
    kappa0_with_grid(64).0
}

/// Half-turn constant used by closed-form comparisons.
pub const HALF_PI: f64 = FRAC_PI_2;
