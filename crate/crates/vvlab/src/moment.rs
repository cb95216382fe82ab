//! Moment method: the Gevrey transmutation kernel `k_T`, sine and exponential biorthogonal
//! families, two-phase null-control synthesis, and the dissipation sums `A_ε`, `B_ε`.
//!
//! Exponential weights reach `e^{±10³}`, so family data and modal sums are carried in MPFR floats.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rug::ops::Pow;
use rug::{Assign, Float};
use serde::Serialize;

use crate::agmon::AgmonProfile;
use crate::bounds::{Bounds, ENERGY_GRID};
use crate::numerics::logsum::log_sum_exp;
use crate::numerics::mp;
use crate::numerics::quad::gauss_legendre;
use crate::numerics::roots::scan_and_refine_max;
use crate::problem::{Potential, VectorField};
use crate::spectral::Spectrum;
use crate::{Error, Result};

/// Largest series order accepted by kernel evaluations.
pub const DEFAULT_J_CAP: usize = 4096;
/// Relative size of the last kernel series term at which summation stops.
pub const SERIES_REL_TOL: f64 = 1e-14;
/// Largest accepted condition number of the sine Gram matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// Default `ε′` in `α = 2S²(1+ε′)`.
pub const DEFAULT_ALPHA_MARGIN: f64 = 0.05;
/// Default `δ` in the window `S = (T₁+δ)/2`.
pub const DEFAULT_WINDOW_DELTA: f64 = 0.5;
/// Default post-control modal residual target.
pub const DEFAULT_TARGET_RESIDUAL: f64 = 1e-6;
/// Default relative change of `‖h‖²` between trapezoid steps `h` and `2h`.
pub const QUAD_TOL: f64 = 1e-10;
/// Smallest trapezoid step in `u` before the control quadrature reports a resolution failure.
pub const MIN_NODE_STEP: f64 = 1.0 / 1024.0;
/// Working precision of the `c_l` quadrature.
const C_PREC: u32 = 256;

fn ln_abs(x: &Float) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let (m, e) = x.to_f64_exp();
    m.abs().ln() + e as f64 * LN_2
}

fn bits(nats: f64) -> u32 {
    (nats.max(0.0) / LN_2).ceil() as u32
}

/// Taylor coefficients `e_k` of `a(t₀+h)/a(t₀)`, `a(t) = e^{−α(1/t + 1/(T−t))}`, from
/// `t²(T−t)² a′ = αT(T−2t) a`.
struct GevreyTaylor {
    p: [Float; 5],
    q: [Float; 2],
    e: Vec<Float>,
    ln_a: Float,
    tmp: Float,
    prec: u32,
}

impl GevreyTaylor {
    fn new(alpha: f64, t: &Float, r: &Float, prec: u32) -> Self {
        let a = Float::with_val(prec, t * r);
        let b = Float::with_val(prec, r - t);
        let tt = Float::with_val(prec, t + r);
        let p0 = Float::with_val(prec, &a * &a);
        let p1 = Float::with_val(prec, &a * &b) * 2u32;
        let p2 = Float::with_val(prec, &b * &b) - Float::with_val(prec, &a * 2u32);
        let p3 = Float::with_val(prec, &b * -2i32);
        let p4 = Float::with_val(prec, 1);
        let at = Float::with_val(prec, &tt * alpha);
        let q0 = Float::with_val(prec, &at * &b);
        let q1 = at * -2i32;
        let inv = Float::with_val(prec, t.recip_ref()) + Float::with_val(prec, r.recip_ref());
        let ln_a = inv * -alpha;
        Self { p: [p0, p1, p2, p3, p4], q: [q0, q1], e: vec![Float::with_val(prec, 1)], ln_a, tmp: Float::new(prec), prec }
    }

    /// Extends the coefficient list through index `k`.
    fn ensure(&mut self, k: usize) {
        while self.e.len() <= k {
            let n = self.e.len() - 1;
            let mut acc = Float::with_val(self.prec, &self.q[0] * &self.e[n]);
            if n >= 1 {
                self.tmp.assign(&self.q[1] * &self.e[n - 1]);
                acc += &self.tmp;
            }
            for i in 1..=4usize {
                if n + 1 > i {
                    let idx = n + 1 - i;
                    self.tmp.assign(&self.p[i] * &self.e[idx]);
                    self.tmp *= idx as u32;
                    acc -= &self.tmp;
                }
            }
            acc /= &self.p[0];
            acc /= (n + 1) as u32;
            self.e.push(acc);
        }
    }

    fn coeff(&mut self, k: usize) -> &Float {
        self.ensure(k);
        &self.e[k]
    }
}

fn interior(t_end: f64, t: f64) -> bool {
    t > 0.0 && t < t_end
}

/// Working precision for kernel sums at `(t, s)`.
fn kernel_prec(alpha: f64, m: f64, s: f64, extra: u32) -> u32 {
    128 + extra + bits(1.25 * (2.0 * alpha.sqrt() * s.abs() + alpha.min(4.0 * alpha.sqrt() * s.abs() + 1.0)) / m)
}

/// The transmutation kernel with Cauchy data `(0, a(t))` on `s = 0`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelEvaluator {
    pub alpha: f64,
    pub t_end: f64,
    pub j_cap: usize,
}

/// Finite-difference residual of `∂_t k + ∂_s² k` at one point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PdeResidual {
    pub t: f64,
    pub s: f64,
    pub dt_k: f64,
    pub dss_k: f64,
    pub residual: f64,
    pub scale: f64,
}

impl KernelEvaluator {
    pub fn new(alpha: f64, t_end: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel needs α > 0 and T > 0, got α = {alpha}, T = {t_end}")));
        }
        Ok(Self { alpha, t_end, j_cap: DEFAULT_J_CAP })
    }

    /// `α = 2S²(1+margin)` for the half-window `S`.
    pub fn for_window(s_half: f64, t_end: f64, margin: f64) -> Result<Self> {
        Self::new(2.0 * s_half * s_half * (1.0 + margin), t_end)
    }

    pub fn with_j_cap(mut self, j_cap: usize) -> Self {
        self.j_cap = j_cap;
        self
    }

    /// Series radius guard `√(2α)`.
    pub fn radius(&self) -> f64 {
        (2.0 * self.alpha).sqrt()
    }

    /// `a(t) = e^{−α(1/t + 1/(T−t))}`, zero outside `(0, T)`.
    pub fn gevrey(&self, t: f64) -> f64 {
        if !interior(self.t_end, t) {
            return 0.0;
        }
        (-self.alpha * (1.0 / t + 1.0 / (self.t_end - t))).exp()
    }

    fn tr(&self, t: f64, prec: u32) -> (Float, Float) {
        let tf = Float::with_val(prec, t);
        let r = Float::with_val(prec, self.t_end) - &tf;
        (tf, r)
    }

    /// `a^{(j)}(t)`.
    pub fn derivative(&self, t: f64, j: usize) -> Result<f64> {
        if j > self.j_cap {
            return Err(Error::Truncation(format!("derivative order {j} exceeds cap {}", self.j_cap)));
        }
        if !interior(self.t_end, t) {
            return Ok(0.0);
        }
        let m = t.min(self.t_end - t);
        let prec = 128 + bits(self.alpha / m) + 4 * j as u32;
        let (tf, r) = self.tr(t, prec);
        let mut g = GevreyTaylor::new(self.alpha, &tf, &r, prec);
        let ej = g.coeff(j).clone();
        let v = ej * Float::with_val(prec, Float::factorial(j as u32)) * Float::with_val(prec, g.ln_a.exp_ref());
        Ok(v.to_f64())
    }

    /// `k_T(t, s)` summed until the last term is below `SERIES_REL_TOL` of the partial sum.
    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        self.eval_with_order(t, s).map(|(v, _)| v)
    }

    /// Kernel value and the series order used.
    pub fn eval_with_order(&self, t: f64, s: f64) -> Result<(f64, usize)> {
        let (v, j) = self.eval_mp(t, s, SERIES_REL_TOL, 0)?;
        Ok((v.to_f64(), j))
    }

    fn guard(&self, t: f64, s: f64) -> Result<()> {
        if s.abs() >= self.radius() {
            return Err(Error::Domain(format!("|s| = {} outside series radius √(2α) = {}", s.abs(), self.radius())));
        }
        if !(0.0..=self.t_end).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.t_end)));
        }
        Ok(())
    }

    fn eval_mp(&self, t: f64, s: f64, tol: f64, extra: u32) -> Result<(Float, usize)> {
        self.guard(t, s)?;
        let m = t.min(self.t_end - t);
        if s == 0.0 || m <= 0.0 {
            return Ok((Float::new(64), 0));
        }
        let prec = kernel_prec(self.alpha, m, s, extra + bits(-tol.ln()));
        let (tf, r) = self.tr(t, prec);
        let mut g = GevreyTaylor::new(self.alpha, &tf, &r, prec);
        let sf = Float::with_val(prec, s);
        let s2 = Float::with_val(prec, &sf * &sf);
        let mut q = sf;
        let mut sum = Float::new(prec);
        let mut lts = [f64::INFINITY; 2];
        let mut small = 0;
        for j in 0..=self.j_cap {
            if j > 0 {
                q *= &s2;
                q /= (2 * (2 * j + 1)) as u32;
            }
            let mut term = Float::with_val(prec, g.coeff(j) * &q);
            if j % 2 == 1 {
                term = -term;
            }
            sum += &term;
            let lt = ln_abs(&term);
            let par = j % 2;
            if lt < ln_abs(&sum) + tol.ln() && (lt < lts[par] || lt == f64::NEG_INFINITY) {
                small += 1;
                if small >= 2 {
                    let a = Float::with_val(prec, g.ln_a.exp_ref());
                    return Ok((sum * a, j));
                }
            } else {
                small = 0;
            }
            lts[par] = lt;
        }
        Err(Error::Truncation(format!("kernel series at (t, s) = ({t}, {s}) not converged by order {}", self.j_cap)))
    }

    /// Right side of `|k(t,s)| ≤ |s| exp((s²/δ − α/(1+δ)) / min{t, T−t})`.
    pub fn bound(&self, t: f64, s: f64, delta: f64) -> f64 {
        let m = t.min(self.t_end - t);
        s.abs() * ((s * s / delta - self.alpha / (1.0 + delta)) / m).exp()
    }

    /// Central differences in multiprecision; `scale = max(|∂_t k|, |∂_s² k|)`.
    pub fn pde_residual(&self, t: f64, s: f64) -> Result<PdeResidual> {
        let m = t.min(self.t_end - t);
        if !(m > 0.0) {
            return Err(Error::Domain(format!("t = {t} not interior to (0, {})", self.t_end)));
        }
        let pow2 = |x: f64| 2f64.powi(x.log2().floor() as i32);
        let ht = pow2(1e-12 * m);
        let hs = pow2(1e-12 * s.abs().max(1.0));
        let tol = 1e-45;
        let extra = 160;
        let k = |tt: f64, ss: f64| self.eval_mp(tt, ss, tol, extra).map(|v| v.0);
        let c = k(t, s)?;
        let tp = k(t + ht, s)?;
        let tm = k(t - ht, s)?;
        let sp = k(t, s + hs)?;
        let sm = k(t, s - hs)?;
        let prec = c.prec().max(tp.prec()).max(sp.prec());
        let dt = (Float::with_val(prec, &tp - &tm) / (2.0 * ht)).to_f64();
        let dss = ((Float::with_val(prec, &sp + &sm) - Float::with_val(prec, &c * 2u32)) / (hs * hs)).to_f64();
        Ok(PdeResidual { t, s, dt_k: dt, dss_k: dss, residual: (dt + dss).abs(), scale: dt.abs().max(dss.abs()) })
    }
}

/// `a^{(j)}(t)` for `a = e^{−α(1/t + 1/(T−t))}`; zero outside `(0, T)`.
pub fn gevrey_derivative(alpha: f64, t_end: f64, t: f64, j: usize) -> Result<f64> {
    KernelEvaluator::new(alpha, t_end)?.derivative(t, j)
}

/// `k_T(t, s)` with series cap `j_cap`.
pub fn heat_kernel(alpha: f64, t_end: f64, t: f64, s: f64, j_cap: usize) -> Result<f64> {
    KernelEvaluator::new(alpha, t_end)?.with_j_cap(j_cap).eval(t, s)
}

fn validate_frequencies(betas: &[f64], n_trunc: usize) -> Result<()> {
    if n_trunc == 0 || n_trunc > betas.len() {
        return Err(Error::InvalidParameter(format!("family size {n_trunc} not in 1..={}", betas.len())));
    }
    let b = &betas[..n_trunc];
    if !(b[0] > 0.0) || b.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("frequencies must be positive and strictly increasing".into()));
    }
    Ok(())
}

fn gram_f64(betas: &[f64], s: f64) -> DMatrix<f64> {
    let n = betas.len();
    DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (betas[i], betas[j]);
        if i == j {
            s - (2.0 * a * s).sin() / (2.0 * a)
        } else {
            ((a - b) * s).sin() / (a - b) - ((a + b) * s).sin() / (a + b)
        }
    })
}

fn condition(g: &DMatrix<f64>) -> f64 {
    let ev = SymmetricEigen::new(g.clone()).eigenvalues;
    let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `∫_{−S}^{S} sin(β_n s) sin(β_m s) ds` in closed form.
fn gram_mp(betas: &[f64], s: f64, prec: u32) -> mp::Mat {
    let n = betas.len();
    let sf = Float::with_val(prec, s);
    let mut g = mp::zeros(n, n, prec);
    let sinc = |c: &Float| -> Float {
        let x = Float::with_val(prec, c * &sf);
        Float::with_val(prec, x.sin_ref()) / c
    };
    for i in 0..n {
        for j in 0..=i {
            let a = Float::with_val(prec, betas[i]);
            let b = Float::with_val(prec, betas[j]);
            let v = if i == j {
                let two_a = Float::with_val(prec, &a * 2u32);
                Float::with_val(prec, &sf - sinc(&two_a))
            } else {
                let d = Float::with_val(prec, &a - &b);
                let p = Float::with_val(prec, &a + &b);
                sinc(&d) - sinc(&p)
            };
            g[i][j] = v.clone();
            g[j][i] = v;
        }
    }
    g
}

/// `v_n = Σ_m (G⁻¹)_{nm} sin(β_m s)` biorthogonal to `sin(β_l s)` on `(−S, S)`.
#[derive(Debug, Clone)]
pub struct SineFamily {
    pub betas: Vec<f64>,
    pub s_half: f64,
    pub n_trunc: usize,
    pub condition: f64,
    pub gram_residual: f64,
    pub prec: u32,
    gram: mp::Mat,
    inv: mp::Mat,
}

/// Builds the sine biorthogonal family with precision sized from the Gram condition number.
pub fn sine_biorthogonal(betas: &[f64], s_half: f64, n_trunc: usize) -> Result<SineFamily> {
    sine_biorthogonal_with_precision(betas, s_half, n_trunc, 128)
}

/// As [`sine_biorthogonal`] with at least `prec` bits.
pub fn sine_biorthogonal_with_precision(betas: &[f64], s_half: f64, n_trunc: usize, prec: u32) -> Result<SineFamily> {
    validate_frequencies(betas, n_trunc)?;
    if !(s_half > 0.0) {
        return Err(Error::InvalidParameter(format!("half-window S = {s_half} must be positive")));
    }
    let b = &betas[..n_trunc];
    let cond = condition(&gram_f64(b, s_half));
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned(format!(
            "sine Gram condition number {cond:.3e} exceeds {MAX_CONDITION:.0e}; enlarge S or reduce the family size"
        )));
    }
    let prec = prec.max(128 + bits(cond.ln()));
    let gram = gram_mp(b, s_half, prec);
    let l = mp::cholesky(&gram, prec)
        .ok_or_else(|| Error::IllConditioned("sine Gram matrix not positive definite in working precision".into()))?;
    let n = n_trunc;
    let cols: Vec<Vec<Float>> = (0..n)
        .map(|j| {
            let e: Vec<Float> = (0..n).map(|i| Float::with_val(prec, (i == j) as u32)).collect();
            mp::cholesky_solve(&l, &e, prec)
        })
        .collect();
    let inv: mp::Mat = (0..n).map(|i| (0..n).map(|j| cols[j][i].clone()).collect()).collect();
    let mut res = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let s = Float::with_val(prec, Float::sum(gram[i].iter().zip(&cols[j]).map(|(a, b)| Float::with_val(prec, a * b)).collect::<Vec<_>>().iter()));
            let d = s - (i == j) as u32;
            res = res.max(d.to_f64().abs());
        }
    }
    Ok(SineFamily { betas: b.to_vec(), s_half, n_trunc, condition: cond, gram_residual: res, prec, gram, inv })
}

impl SineFamily {
    /// `(G⁻¹)_{nm}` rounded to `f64`.
    pub fn coefficients(&self) -> Vec<Vec<f64>> {
        self.inv.iter().map(|r| r.iter().map(|v| v.to_f64()).collect()).collect()
    }

    pub fn gram(&self) -> Vec<Vec<f64>> {
        self.gram.iter().map(|r| r.iter().map(|v| v.to_f64()).collect()).collect()
    }

    pub fn eval(&self, n: usize, s: f64) -> f64 {
        self.inv[n].iter().zip(&self.betas).map(|(c, b)| c.to_f64() * (b * s).sin()).sum()
    }

    /// `max_{n,l} |∫ v_n sin(β_l s) ds − δ_{nl}|` by composite 16-point Gauss–Legendre in `f64`.
    pub fn quadrature_residual(&self) -> f64 {
        let (xg, wg) = gauss_legendre(16);
        let bmax = self.betas.iter().cloned().fold(0.0, f64::max);
        let panels = ((bmax * self.s_half).ceil() as usize + 4).max(8);
        let hw = self.s_half / panels as f64;
        let mut nodes = Vec::new();
        for p in 0..panels {
            let c = -self.s_half + (2 * p + 1) as f64 * hw;
            for (x, w) in xg.iter().zip(&wg) {
                nodes.push((c + hw * x, hw * w));
            }
        }
        let coef = self.coefficients();
        let n = self.n_trunc;
        let mut worst = 0.0f64;
        for i in 0..n {
            for l in 0..n {
                let v: f64 = nodes
                    .iter()
                    .map(|&(s, w)| {
                        let vn: f64 = coef[i].iter().zip(&self.betas).map(|(c, b)| c * (b * s).sin()).sum();
                        w * vn * (self.betas[l] * s).sin()
                    })
                    .sum();
                worst = worst.max((v - (i == l) as u8 as f64).abs());
            }
        }
        worst
    }
}

/// `∫_0^S s^k sin(βs) ds` for odd `k ≤ kmax`, indexed by `(k−1)/2`, via the integration-by-parts recursion.
fn odd_sine_moments(beta: f64, s: f64, kmax: usize, prec: u32) -> Vec<Float> {
    let boost: f64 = (1..=kmax).map(|i| (i as f64 / beta).ln().max(0.0)).sum();
    let wp = prec + bits(boost) + 64;
    let b = Float::with_val(wp, beta);
    let sf = Float::with_val(wp, s);
    let bs = Float::with_val(wp, &b * &sf);
    let (sn, cs) = (Float::with_val(wp, bs.sin_ref()), Float::with_val(wp, bs.cos_ref()));
    let sb = Float::with_val(wp, &sn / &b);
    let cb = Float::with_val(wp, &cs / &b);
    let mut p = Float::with_val(wp, 1) / &b - &cb;
    let mut q = sb.clone();
    let mut sk = Float::with_val(wp, 1);
    let mut out = Vec::with_capacity(kmax / 2 + 1);
    for k in 1..=kmax {
        sk *= &sf;
        let pn = Float::with_val(wp, &q * k as u32) / &b - Float::with_val(wp, &sk * &cb);
        let qn = Float::with_val(wp, &sk * &sb) - Float::with_val(wp, &p * k as u32) / &b;
        p = pn;
        q = qn;
        if k % 2 == 1 {
            out.push(Float::with_val(prec, &p));
        }
    }
    out
}

/// Trapezoid sum in `u` with `t = T/(1+e^{−u})` of `∫_0^T e^{−α(1/t + 1/(T−t)) − β²t} dt`.
fn gevrey_laplace(alpha: f64, t_end: f64, beta: f64) -> Result<Float> {
    let prec = C_PREC;
    let b2 = beta * beta;
    let phi = |u: f64| -> f64 {
        let sig = 1.0 / (1.0 + (-u).exp());
        -(alpha / t_end) * (2.0 + 2.0 * u.cosh()) - b2 * t_end * sig + (t_end * sig * (1.0 - sig)).ln()
    };
    let (u0, _) = scan_and_refine_max(phi, -30.0, 30.0, 1200, 1e-12);
    let ln_peak = phi(u0);
    let cut = (prec as f64) * LN_2 + 40.0;
    let thf = Float::with_val(prec, t_end);
    let node = |du: f64| -> Float {
        let uf = Float::with_val(prec, u0) + du;
        let eu = Float::with_val(prec, uf.exp_ref());
        let emu = Float::with_val(prec, eu.recip_ref());
        let t = Float::with_val(prec, &thf / (Float::with_val(prec, &emu + 1u32)));
        let r = Float::with_val(prec, &thf / (Float::with_val(prec, &eu + 1u32)));
        let inv = Float::with_val(prec, t.recip_ref()) + Float::with_val(prec, r.recip_ref());
        let expo = inv * -alpha - Float::with_val(prec, &t * b2) + Float::with_val(prec, Float::with_val(prec, &t * &r) / &thf).ln() - ln_peak;
        expo.exp()
    };
    let sweep = |h: f64, offset: f64, stride: i64| -> Float {
        let mut acc = Float::new(prec);
        for dir in [1i64, -1] {
            let mut k: i64 = if dir == 1 { 0 } else { -stride };
            loop {
                let du = offset + k as f64 * h;
                if phi(u0 + du) - ln_peak < -cut {
                    break;
                }
                acc += node(du);
                k += dir * stride;
                if k.abs() > 1_000_000 {
                    break;
                }
            }
        }
        acc
    };
    let mut h = 0.5;
    let mut s = Float::with_val(prec, sweep(h, 0.0, 1) * h);
    for _ in 0..14 {
        let odd = sweep(h, 0.5 * h, 1);
        let s_new = Float::with_val(prec, &s * 0.5) + Float::with_val(prec, &odd * (0.5 * h));
        let diff = Float::with_val(prec, &s_new - &s).abs();
        h *= 0.5;
        s = s_new;
        if ln_abs(&diff) < ln_abs(&s) - (prec as f64 - 40.0) * LN_2 {
            let lp = Float::with_val(prec, ln_peak);
            return Ok(s * lp.exp());
        }
    }
    Err(Error::SolverFailure(format!("c quadrature for β = {beta} did not converge")))
}

/// `u_n = w_n / c_n` with `w_n(t) = ∫ k_T^{(J)}(t,s) v_n(s) ds` for the order-`J` kernel.
#[derive(Debug, Clone)]
pub struct ExpFamily {
    pub betas: Vec<f64>,
    pub t_end: f64,
    pub s_half: f64,
    pub alpha: f64,
    pub n_trunc: usize,
    pub order: usize,
    pub prec: u32,
    pub ln_c: Vec<f64>,
    pub condition: f64,
    pub sine_gram_residual: f64,
    pub excluded: Vec<usize>,
    mu: Vec<Vec<Float>>,
    c: Vec<Float>,
}

/// Summary of an exponential family for export.
#[derive(Debug, Clone, Serialize)]
pub struct FamilyDiagnostics {
    pub n_trunc: usize,
    pub order: usize,
    pub prec: u32,
    pub t_end: f64,
    pub s_half: f64,
    pub alpha: f64,
    pub condition: f64,
    pub sine_gram_residual: f64,
    pub biorthogonality_residual: f64,
    pub ln_c: Vec<f64>,
    pub ln_cl_lower_constant: f64,
    pub excluded: Vec<usize>,
}

/// Builds the exponential biorthogonal family on `(0, T)` for frequencies `β_n`.
pub fn exp_biorthogonal(betas: &[f64], t_end: f64, s_half: f64, alpha: f64, n_trunc: usize) -> Result<ExpFamily> {
    validate_frequencies(betas, n_trunc)?;
    if !(t_end > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon {t_end} must be positive")));
    }
    if !(alpha > 2.0 * s_half * s_half) {
        return Err(Error::InvalidParameter(format!("α = {alpha} must exceed 2S² = {}", 2.0 * s_half * s_half)));
    }
    let b = &betas[..n_trunc];
    let cond = condition(&gram_f64(b, s_half));
    let (bmin, bmax) = (b[0], b[n_trunc - 1]);
    let spread = (bmax * bmax - bmin * bmin) * t_end;
    let prec = 192 + bits(spread + bmax * s_half + cond.max(1.0).ln());
    let sine = sine_biorthogonal_with_precision(betas, s_half, n_trunc, prec)?;
    let mut order = 0usize;
    for &bl in b {
        let target = -((bmax * bmax - bl * bl) * t_end + 40.0 + cond.max(1.0).ln());
        let lbs = (bl * s_half).ln();
        let mut n = 1usize;
        let mut lf = 0.0;
        loop {
            lf += (n as f64).ln();
            if n % 2 == 1 && n as f64 > bl * s_half && n as f64 * lbs - lf < target {
                break;
            }
            n += 1;
        }
        order = order.max((n - 1) / 2);
    }
    if order > DEFAULT_J_CAP {
        return Err(Error::Truncation(format!("family needs kernel order {order} above cap {DEFAULT_J_CAP}")));
    }
    let kmax = 2 * order + 1;
    let moments: Vec<Vec<Float>> = b.par_iter().map(|&bm| odd_sine_moments(bm, s_half, kmax, prec)).collect();
    let mu: Vec<Vec<Float>> = (0..n_trunc)
        .into_par_iter()
        .map(|n| {
            let mut fact = Float::with_val(prec, 1);
            (0..=order)
                .map(|j| {
                    if j > 0 {
                        fact *= (2 * j) as u32;
                        fact *= (2 * j + 1) as u32;
                    }
                    let mut acc = Float::new(prec);
                    for m in 0..n_trunc {
                        acc += Float::with_val(prec, &sine.inv[n][m] * &moments[m][j]);
                    }
                    acc * 2u32 / &fact
                })
                .collect()
        })
        .collect();
    let mut c = Vec::with_capacity(n_trunc);
    let mut excluded = Vec::new();
    for (l, &bl) in b.iter().enumerate() {
        let v = gevrey_laplace(alpha, t_end, bl)? / bl;
        if v.is_zero() || !v.is_finite() {
            excluded.push(l);
        }
        c.push(v);
    }
    if let Some(&first) = excluded.first() {
        if first == 0 {
            return Err(Error::InsufficientFamily(format!("c_0 not representable for β = {}", b[0])));
        }
        return exp_biorthogonal(betas, t_end, s_half, alpha, first).map(|mut f| {
            f.excluded = excluded;
            f
        });
    }
    let ln_c = c.iter().map(ln_abs).collect();
    Ok(ExpFamily {
        betas: b.to_vec(),
        t_end,
        s_half,
        alpha,
        n_trunc,
        order,
        prec,
        ln_c,
        condition: cond,
        sine_gram_residual: sine.gram_residual,
        excluded,
        mu,
        c,
    })
}

/// Trapezoid node in `u` with `t = T/(1+e^{−u})`.
struct TimeNode {
    t: Float,
    r: Float,
    weight: Float,
}

fn time_node(t_end: f64, u: f64, h: f64, prec: u32) -> TimeNode {
    let uf = Float::with_val(prec, u);
    let eu = Float::with_val(prec, uf.exp_ref());
    let emu = Float::with_val(prec, eu.recip_ref());
    let t = Float::with_val(prec, t_end) / (emu + 1u32);
    let r = Float::with_val(prec, t_end) / (eu + 1u32);
    let weight = Float::with_val(prec, &t * &r) / t_end * h;
    TimeNode { t, r, weight }
}

/// Values on a trapezoid node set and `∫_0^T |z|² dt` for a list of coefficient vectors.
#[derive(Debug, Clone)]
pub struct NodeSweep {
    pub times: Vec<f64>,
    pub weights: Vec<f64>,
    pub values: Vec<Vec<Float>>,
    pub norm_sq: Vec<Float>,
    pub rel_change: f64,
}

impl ExpFamily {
    /// `c(β) = β⁻¹ ∫_0^T a(t) e^{−β²t} dt`.
    pub fn c_of(&self, beta: f64) -> Result<Float> {
        Ok(gevrey_laplace(self.alpha, self.t_end, beta)? / beta)
    }

    /// `Σ_j (−1)^j μ_{n,j} β^{2j+1}` for every `n`.
    fn sine_pairing(&self, beta: f64) -> Vec<Float> {
        let prec = self.prec;
        let b = Float::with_val(prec, beta);
        let b2 = Float::with_val(prec, &b * &b);
        let mut pw: Vec<Float> = Vec::with_capacity(self.order + 1);
        let mut cur = b;
        for j in 0..=self.order {
            if j > 0 {
                cur *= &b2;
            }
            pw.push(if j % 2 == 0 { cur.clone() } else { -cur.clone() });
        }
        self.mu
            .iter()
            .map(|row| {
                let mut acc = Float::new(prec);
                for (m, p) in row.iter().zip(&pw) {
                    acc += Float::with_val(prec, m * p);
                }
                acc
            })
            .collect()
    }

    /// `∫_0^T u_n(t) e^{−β²t} dt = (c(β)/c_n) Σ_j (−1)^j μ_{n,j} β^{2j+1}` for every `n`.
    pub fn moments_against(&self, beta: f64) -> Result<Vec<Float>> {
        let idx = self.betas.iter().position(|&b| b == beta);
        let cb = match idx {
            Some(i) => self.c[i].clone(),
            None => self.c_of(beta)?,
        };
        let pairing = self.sine_pairing(beta);
        Ok(pairing
            .into_iter()
            .zip(&self.c)
            .map(|(s, cn)| Float::with_val(self.prec, &s * &cb) / cn)
            .collect())
    }

    /// Matrix `∫ u_n e^{−β_l² t} dt − δ_{nl}` and its max-norm.
    pub fn residual_matrix(&self) -> Result<(Vec<Vec<f64>>, f64)> {
        let n = self.n_trunc;
        let mut mat = vec![vec![0.0; n]; n];
        let mut worst = 0.0f64;
        for l in 0..n {
            let col = self.moments_against(self.betas[l])?;
            for (i, v) in col.iter().enumerate() {
                let d = (Float::with_val(self.prec, v - (i == l) as u32)).to_f64();
                mat[i][l] = d;
                worst = worst.max(d.abs());
            }
        }
        Ok((mat, worst))
    }

    /// `min_l ln[c_l β_l e^{β_l²T} e^{4α/T} / T^{3/2}]`.
    pub fn ln_cl_lower_constant(&self) -> f64 {
        let t = self.t_end;
        self.ln_c
            .iter()
            .zip(&self.betas)
            .map(|(lc, b)| lc + b.ln() + b * b * t + 4.0 * self.alpha / t - 1.5 * t.ln())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn diagnostics(&self) -> Result<FamilyDiagnostics> {
        let (_, res) = self.residual_matrix()?;
        Ok(FamilyDiagnostics {
            n_trunc: self.n_trunc,
            order: self.order,
            prec: self.prec,
            t_end: self.t_end,
            s_half: self.s_half,
            alpha: self.alpha,
            condition: self.condition,
            sine_gram_residual: self.sine_gram_residual,
            biorthogonality_residual: res,
            ln_c: self.ln_c.clone(),
            ln_cl_lower_constant: self.ln_cl_lower_constant(),
            excluded: self.excluded.clone(),
        })
    }

    /// Series weights `(−1)^j j! Σ_n (b_n/c_n) μ_{n,j}` of `z = Σ b_n u_n`.
    fn series_weights(&self, b: &[Float]) -> Vec<Float> {
        let prec = self.prec;
        let scaled: Vec<Float> = b.iter().zip(&self.c).map(|(bn, cn)| Float::with_val(prec, bn / cn)).collect();
        let mut fact = Float::with_val(prec, 1);
        (0..=self.order)
            .map(|j| {
                if j > 0 {
                    fact *= j as u32;
                }
                let mut acc = Float::new(prec);
                for (sn, row) in scaled.iter().zip(&self.mu) {
                    acc += Float::with_val(prec, sn * &row[j]);
                }
                acc *= &fact;
                if j % 2 == 1 {
                    -acc
                } else {
                    acc
                }
            })
            .collect()
    }

    fn eval_weights(&self, weights: &[Vec<Float>], node: &TimeNode) -> Vec<Float> {
        let tf = node.t.to_f64();
        let m = tf.min(node.r.to_f64());
        let prec = 128 + bits(1.25 * (2.0 * self.alpha.sqrt() * self.s_half + self.alpha.min(4.0 * self.alpha.sqrt() * self.s_half + 1.0)) / m);
        let t = Float::with_val(prec, &node.t);
        let r = Float::with_val(prec, &node.r);
        let mut g = GevreyTaylor::new(self.alpha, &t, &r, prec);
        g.ensure(self.order);
        let a = Float::with_val(prec, g.ln_a.exp_ref());
        let mut tmp = Float::new(prec);
        weights
            .iter()
            .map(|w| {
                let mut acc = Float::new(prec);
                for (e, wj) in g.e.iter().zip(w) {
                    tmp.assign(e * wj);
                    acc += &tmp;
                }
                acc * &a
            })
            .collect()
    }

    /// [`Self::sweep`] with the step halved from `h0` until the step-`2h` comparison is below `tol`.
    pub fn sweep_adaptive(&self, coeffs: &[Vec<Float>], h0: f64, tol: f64) -> Result<NodeSweep> {
        let mut h = h0;
        loop {
            let sw = self.sweep(coeffs, h)?;
            if sw.rel_change <= tol {
                return Ok(sw);
            }
            if h < MIN_NODE_STEP {
                return Err(Error::Resolution(format!(
                    "control quadrature change {:.2e} above {tol:.1e} at step {h}",
                    sw.rel_change
                )));
            }
            h *= 0.5;
        }
    }

    /// Evaluates `z_k = Σ_n b^{(k)}_n u_n` on trapezoid nodes in `u` with step `h`, outward from the
    /// centre until every `|z_k|²` contribution is below `1e-20` of its running sum.
    pub fn sweep(&self, coeffs: &[Vec<Float>], h: f64) -> Result<NodeSweep> {
        let weights: Vec<Vec<Float>> = coeffs.iter().map(|b| self.series_weights(b)).collect();
        let k = coeffs.len();
        let mut nodes: Vec<(f64, f64, Vec<Float>)> = Vec::new();
        let mut sums = vec![Float::new(self.prec); k];
        let mut sums_even = vec![Float::new(self.prec); k];
        for dir in [1i64, -1] {
            let mut i: i64 = if dir == 1 { 0 } else { -1 };
            let mut quiet = 0;
            loop {
                let u = i as f64 * h;
                if u.abs() > 14.0 {
                    return Err(Error::SolverFailure("control sweep did not decay within |u| ≤ 14".into()));
                }
                let node = time_node(self.t_end, u, h, self.prec);
                let vals = self.eval_weights(&weights, &node);
                let mut all_small = true;
                for (j, v) in vals.iter().enumerate() {
                    let c = Float::with_val(self.prec, v * v) * &node.weight;
                    if ln_abs(&c) > ln_abs(&sums[j]) + (1e-20f64).ln() || sums[j].is_zero() && !c.is_zero() {
                        all_small = false;
                    }
                    if i % 2 == 0 {
                        sums_even[j] += &c;
                    }
                    sums[j] += c;
                }
                nodes.push((u, node.t.to_f64(), vals));
                quiet = if all_small && i.abs() >= 4 { quiet + 1 } else { 0 };
                if quiet >= 3 {
                    break;
                }
                i += dir;
            }
        }
        nodes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut rel = 0.0f64;
        for j in 0..k {
            let coarse = Float::with_val(self.prec, &sums_even[j] * 2u32);
            let d = Float::with_val(self.prec, &coarse - &sums[j]);
            if !sums[j].is_zero() {
                rel = rel.max((d / &sums[j]).to_f64().abs());
            }
        }
        let times = nodes.iter().map(|n| n.1).collect();
        let wts = nodes.iter().map(|n| h * n.1 * (self.t_end - n.1) / self.t_end).collect();
        let values = (0..k).map(|j| nodes.iter().map(|n| n.2[j].clone()).collect()).collect();
        Ok(NodeSweep { times, weights: wts, values, norm_sq: sums, rel_change: rel })
    }

    /// `ln max_n ‖u_n‖² T³ e^{−(16+ε′)S²/T} / (β_n² e^{2β_n²T})`.
    pub fn ln_norm_constant(&self, eps_prime: f64, h: f64) -> Result<f64> {
        let n = self.n_trunc;
        let coeffs: Vec<Vec<Float>> = (0..n).map(|i| (0..n).map(|j| Float::with_val(self.prec, (i == j) as u32)).collect()).collect();
        let sw = self.sweep_adaptive(&coeffs, h, QUAD_TOL)?;
        let t = self.t_end;
        Ok(sw
            .norm_sq
            .iter()
            .zip(&self.betas)
            .map(|(ns, b)| ln_abs(ns) + 3.0 * t.ln() - (16.0 + eps_prime) * self.s_half * self.s_half / t - 2.0 * b.ln() - 2.0 * b * b * t)
            .fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Unit coefficient vector with entries drawn uniformly from `[−1, 1]`.
pub fn random_unit_coefficients(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Modal coefficients `⟨v, φ_n⟩` of a grid function.
pub fn project(spec: &Spectrum, v: &[f64]) -> Vec<f64> {
    spec.eigfuns.iter().map(|phi| spec.h * phi.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()).collect()
}

/// Parameters of the two-phase synthesis.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ControlOptions {
    pub n_trunc: usize,
    pub window_delta: f64,
    pub alpha_margin: f64,
    pub cost_delta: f64,
    pub target_residual: f64,
    pub node_step: f64,
    pub quad_tol: f64,
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self {
            n_trunc: 15,
            window_delta: DEFAULT_WINDOW_DELTA,
            alpha_margin: DEFAULT_ALPHA_MARGIN,
            cost_delta: 0.0,
            target_residual: DEFAULT_TARGET_RESIDUAL,
            node_step: 0.125,
            quad_tol: QUAD_TOL,
        }
    }
}

/// Boundary control `h` on `[0, T]`, zero on `[0, mT]`; `h(t_i) = h_values[i]·e^{h_log_scale}`.
#[derive(Debug, Clone, Serialize)]
pub struct ControlSignal {
    pub eps: f64,
    pub t_end: f64,
    pub phase_split: f64,
    pub n_trunc: usize,
    pub t_grid: Vec<f64>,
    pub h_values: Vec<f64>,
    pub h_log_scale: f64,
    pub ln_norm_sq: f64,
    pub ln_bound_unit: f64,
    pub ln_fitted_constant: f64,
    pub modal_residual: f64,
    pub tail_fraction: f64,
    pub quad_rel_change: f64,
    pub family: FamilyDiagnostics,
}

/// Smallest family size whose uncontrolled modes, decaying freely over `[0, T]`, stay below `1e-8`
/// relative to the ground mode (geometric tail with the smallest observed gap).
pub fn default_n_trunc(spec: &Spectrum, t: f64) -> usize {
    let eps = spec.eps;
    let gap = spec.lambdas.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let ratio = (-gap * t / eps).exp();
    for n in 1..spec.len() {
        let tail = (-(spec.lambdas[n] - spec.lambdas[0]) * t / eps).exp() / (1.0 - ratio).max(1e-300);
        if tail < 1e-8 {
            return n;
        }
    }
    spec.len()
}

/// Two-phase null control: free decay on `[0, mT]`, moment control on `[mT, T]`.
pub fn synthesize_control(spec: &Spectrum, field: &VectorField, t: f64, m: f64, v0: &[f64], opts: &ControlOptions) -> Result<ControlSignal> {
    if !spec.qf_zero {
        return Err(Error::HypothesisViolation("moment synthesis requires q_f = 0".into()));
    }
    if !(0.0..1.0).contains(&m) {
        return Err(Error::Domain(format!("phase split m = {m} not in [0, 1)")));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon {t} must be positive")));
    }
    let n = opts.n_trunc;
    if n == 0 {
        return Err(Error::InvalidParameter("family size must be positive".into()));
    }
    if n > spec.len() {
        return Err(Error::InsufficientFamily(format!("family size {n} exceeds the {} computed modes", spec.len())));
    }
    if v0.len() > spec.len() {
        return Err(Error::InvalidInput(format!("{} coefficients for {} modes", v0.len(), spec.len())));
    }
    let eps = spec.eps;
    let tau = (1.0 - m) * t;
    let th = eps * tau;
    let pot = Potential::new(field)?;
    let t1 = Bounds::new(&pot)?.t1;
    let s_half = 0.5 * (t1 + opts.window_delta);
    let alpha = 2.0 * s_half * s_half * (1.0 + opts.alpha_margin);
    let f0 = field.f(0.0);

    let k_state = v0.len();
    let ln_free: Vec<f64> = (0..k_state).map(|k| v0[k].abs().ln() - spec.lambdas[k] * t / eps).collect();
    let total = log_sum_exp(&ln_free.iter().map(|l| 2.0 * l).collect::<Vec<_>>());
    let tail = if k_state > n { log_sum_exp(&ln_free[n..].iter().map(|l| 2.0 * l).collect::<Vec<_>>()) } else { f64::NEG_INFINITY };
    let tail_fraction = (0.5 * (tail - total)).exp();
    if tail_fraction > opts.target_residual {
        return Err(Error::InsufficientFamily(format!(
            "uncontrolled modes leave relative residual {tail_fraction:.3e} > {:.1e}; enlarge the family",
            opts.target_residual
        )));
    }

    let betas: Vec<f64> = spec.betas.iter().map(|b| b / eps).collect();
    let fam = exp_biorthogonal(&betas, th, s_half, alpha, n)?;
    let prec = fam.prec;
    let n = fam.n_trunc;

    let mpf = |v: f64| Float::with_val(prec, v);
    let free: Vec<Float> = (0..spec.len())
        .map(|k| if k < k_state { mpf(-spec.lambdas[k] * t / eps).exp() * v0[k] } else { Float::new(prec) })
        .collect();
    let half_f0 = mpf(f0 / (2.0 * eps)).exp();
    let coeff: Vec<Float> = (0..n).map(|i| -Float::with_val(prec, &free[i] * &half_f0) / spec.dphi0[i]).collect();

    let k2 = (2 * n).max(k_state).min(spec.len());
    let e_half = mpf(-f0 / (2.0 * eps)).exp();
    let mut res_sq = Float::new(prec);
    let mut free_sq = Float::new(prec);
    for k in 0..k2 {
        let mk = fam.moments_against(betas[k])?;
        let mut acc = Float::new(prec);
        for (cn, mn) in coeff.iter().zip(&mk) {
            acc += Float::with_val(prec, cn * mn);
        }
        let a_t = Float::with_val(prec, &acc * &e_half) * spec.dphi0[k] + &free[k];
        res_sq += Float::with_val(prec, &a_t * &a_t);
        free_sq += Float::with_val(prec, &free[k] * &free[k]);
    }
    let modal_residual = if free_sq.is_zero() { 0.0 } else { (0.5 * (ln_abs(&res_sq) - ln_abs(&free_sq))).exp() };

    let sw = fam.sweep_adaptive(std::slice::from_ref(&coeff), opts.node_step, opts.quad_tol)?;
    let ln_norm_sq = ln_abs(&sw.norm_sq[0]) + eps.ln();
    let ln_h: Vec<f64> = sw.values[0].iter().map(|v| ln_abs(v) + eps.ln()).collect();
    let h_log_scale = ln_h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut pts: Vec<(f64, f64)> = sw.times
        .iter()
        .zip(&sw.values[0])
        .map(|(s, v)| {
            let sign = if v.is_sign_negative() { -1.0 } else { 1.0 };
            let mag = if v.is_zero() { 0.0 } else { (ln_abs(v) + eps.ln() - h_log_scale).exp() };
            (m * t + tau - s / eps, sign * mag)
        })
        .collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let ln_terms: Vec<f64> = (0..k_state)
        .map(|k| {
            let a_mt = v0[k].abs().ln() - spec.lambdas[k] * m * t / eps;
            spec.lambdas[k].ln() + 2.0 * a_mt - 2.0 * (spec.dphi0[k].abs() / eps).ln()
        })
        .collect();
    let ln_bound_unit = -6.0 * eps.ln() - 3.0 * tau.ln() + (4.0 * t1 * t1 + opts.cost_delta) / (eps * tau) + f0 / eps + log_sum_exp(&ln_terms);

    Ok(ControlSignal {
        eps,
        t_end: t,
        phase_split: m,
        n_trunc: n,
        t_grid: pts.iter().map(|p| p.0).collect(),
        h_values: pts.iter().map(|p| p.1).collect(),
        h_log_scale,
        ln_norm_sq,
        ln_bound_unit,
        ln_fitted_constant: ln_norm_sq - ln_bound_unit,
        modal_residual,
        tail_fraction,
        quad_rel_change: sw.rel_change,
        family: fam.diagnostics()?,
    })
}

/// `A_ε = Σ e^{−2λ_nθmT/ε}` and `B_ε = sup (λ_n/|εφ_n′(0)|²) e^{−2λ_n(1−θ)mT/ε} ‖e^{−f/2ε}φ_n‖²`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DissipationReport {
    pub eps: f64,
    pub t: f64,
    pub m: f64,
    pub theta: f64,
    pub a_eps: f64,
    pub a_constant: f64,
    pub ln_b_eps: f64,
    pub f_exponent: f64,
    pub delta_obs: f64,
}

/// Evaluates `A_ε` (with a geometric tail beyond the computed modes), `B_ε`, and
/// `F = sup_E (d_{A,E}(0) − E(1−θ)mT − min W_E)`; `δ_obs = (ε/2) ln B_ε − F`.
pub fn dissipation_bounds(spec: &Spectrum, pot: &Potential, t: f64, m: f64, theta: f64) -> Result<DissipationReport> {
    if !(m > 0.0 && m < 1.0) || !(theta > 0.0 && theta < 1.0) || !(t > 0.0) {
        return Err(Error::Domain(format!("need T > 0 and m, θ in (0, 1); got T = {t}, m = {m}, θ = {theta}")));
    }
    let eps = spec.eps;
    let w = 2.0 * theta * m * t / eps;
    let ln_a: Vec<f64> = spec.lambdas.iter().map(|l| -w * l).collect();
    let gap = spec.lambdas.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min);
    let last = *spec.lambdas.last().unwrap_or(&0.0);
    let r = (-w * gap).exp();
    let tail = (-w * (last + gap)).exp() / (1.0 - r);
    let a_eps = log_sum_exp(&ln_a).exp() + tail;
    let fx: Vec<f64> = spec.x.iter().map(|&x| -pot.field.f(x) / eps).collect();
    let ln_b = (0..spec.len())
        .map(|k| {
            let terms: Vec<f64> = spec.eigfuns[k].iter().zip(&fx).map(|(p, f)| f + 2.0 * p.abs().max(1e-300).ln()).collect();
            let ln_norm = log_sum_exp(&terms) + spec.h.ln();
            spec.lambdas[k].ln() - 2.0 * spec.dphi0[k].abs().ln() - 2.0 * spec.lambdas[k] * (1.0 - theta) * m * t / eps + ln_norm
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let mut f_exp = f64::NEG_INFINITY;
    for i in 0..=ENERGY_GRID {
        let e = pot.e0 + (pot.vmax - pot.e0) * i as f64 / ENERGY_GRID as f64;
        let prof = AgmonProfile::new(pot, e)?;
        let v = prof.d0 - e * (1.0 - theta) * m * t - prof.extrema().min_w;
        f_exp = f_exp.max(v);
    }
    Ok(DissipationReport {
        eps,
        t,
        m,
        theta,
        a_eps,
        a_constant: theta * m * t * a_eps,
        ln_b_eps: ln_b,
        f_exponent: f_exp,
        delta_obs: 0.5 * eps * ln_b - f_exp,
    })
}

/// `Float` power helper for tests and callers needing `β^k`.
pub fn mp_pow(x: f64, k: u32, prec: u32) -> Float {
    Float::with_val(prec, Float::with_val(prec, x).pow(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Sign;
    use crate::spectral::{discretize, eigenpairs, points_for};

    fn preset() -> VectorField {
        VectorField::example(1.0, 2.0, Sign::Minus, 2.0).unwrap()
    }

    fn spectrum(eps: f64, k: usize) -> Spectrum {
        let field = preset();
        let n = points_for(&field, eps, 40.0).max(4 * k);
        eigenpairs(&discretize(&field, eps, n).unwrap(), k).unwrap()
    }

    /// Quadratic-cost Taylor recurrence `e_k = (1/k) Σ i g_i e_{k−i}`.
    fn taylor_direct(alpha: f64, t: f64, r: f64, jmax: usize, prec: u32) -> Vec<Float> {
        let it = Float::with_val(prec, t).recip();
        let ir = Float::with_val(prec, r).recip();
        let mut ig = vec![Float::new(prec)];
        for i in 1..=jmax {
            let pt = Float::with_val(prec, (&it).pow((i + 1) as u32));
            let pr = Float::with_val(prec, (&ir).pow((i + 1) as u32));
            let s = if i % 2 == 0 { pt + pr } else { pr - pt };
            ig.push(s * -alpha * i as u32);
        }
        let mut e = vec![Float::with_val(prec, 1)];
        for k in 1..=jmax {
            let mut acc = Float::new(prec);
            for i in 1..=k {
                acc += Float::with_val(prec, &ig[i] * &e[k - i]);
            }
            e.push(acc / k as u32);
        }
        e
    }

    #[test]
    fn five_term_recurrence_matches_direct_taylor() {
        for &(alpha, t, r) in &[(1.0, 0.3, 0.7), (29.7, 0.05, 1.32), (29.7, 0.9, 0.47)] {
            let prec = 1024;
            let direct = taylor_direct(alpha, t, r, 60, prec);
            let mut g = GevreyTaylor::new(alpha, &Float::with_val(prec, t), &Float::with_val(prec, r), prec);
            for (k, d) in direct.iter().enumerate() {
                let v = g.coeff(k).clone();
                let rel = Float::with_val(prec, &v - d).to_f64().abs() / d.to_f64().abs();
                assert!(rel < 1e-40, "α={alpha} t={t} k={k}: {rel}");
            }
        }
    }

    #[test]
    fn gevrey_value_and_second_derivative() {
        let (alpha, t_end) = (1.3, 1.0);
        let a_mid = gevrey_derivative(alpha, t_end, 0.5, 0).unwrap();
        assert!((a_mid - (-4.0 * alpha / t_end).exp()).abs() < 1e-15 * a_mid);
        let t = 0.37;
        let r = t_end - t;
        let a = (-alpha * (1.0 / t + 1.0 / r)).exp();
        let g1 = alpha / (t * t) - alpha / (r * r);
        let g2 = -2.0 * alpha / (t * t * t) - 2.0 * alpha / (r * r * r);
        let exact = a * (g1 * g1 + g2);
        let v = gevrey_derivative(alpha, t_end, t, 2).unwrap();
        assert!((v - exact).abs() < 1e-12 * exact.abs());
    }

    #[test]
    fn gevrey_first_derivative_matches_central_difference() {
        let (alpha, t_end) = (1.0, 1.0);
        let t = t_end / 3.0;
        let hstep = 1e-5;
        let k = KernelEvaluator::new(alpha, t_end).unwrap();
        let fd = (k.gevrey(t + hstep) - k.gevrey(t - hstep)) / (2.0 * hstep);
        let d = k.derivative(t, 1).unwrap();
        assert!((d - fd).abs() < 1e-6 * d.abs(), "{d} vs {fd}");
    }

    #[test]
    fn gevrey_flat_near_endpoints() {
        let (alpha, t_end) = (10.0, 1.0);
        let k = KernelEvaluator::new(alpha, t_end).unwrap();
        for j in 0..=10 {
            let max = (1..200).map(|i| k.derivative(i as f64 / 200.0, j).unwrap().abs()).fold(0.0, f64::max);
            let near = k.derivative(t_end / 100.0, j).unwrap().abs();
            assert!(near < 1e-30 * max, "j={j}: {near} vs {max}");
        }
        assert_eq!(k.derivative(0.0, 3).unwrap(), 0.0);
        assert_eq!(k.derivative(1.5, 3).unwrap(), 0.0);
        assert!(matches!(k.with_j_cap(5).derivative(0.5, 6), Err(Error::Truncation(_))));
    }

    #[test]
    fn kernel_cauchy_data_on_axis() {
        let k = KernelEvaluator::for_window(2.0, 1.0, DEFAULT_ALPHA_MARGIN).unwrap();
        for &t in &[0.2, 0.5, 0.71] {
            assert_eq!(k.eval(t, 0.0).unwrap(), 0.0);
            let h = 1e-6;
            let ds = (k.eval(t, h).unwrap() - k.eval(t, -h).unwrap()) / (2.0 * h);
            let a = k.gevrey(t);
            assert!((ds - a).abs() < 1e-6 * a, "t={t}: {ds} vs {a}");
        }
    }

    #[test]
    fn kernel_solves_backward_heat_equation() {
        let s_half = 3.0;
        let k = KernelEvaluator::for_window(s_half, 1.2, DEFAULT_ALPHA_MARGIN).unwrap();
        for &t in &[0.15, 0.4, 0.6, 1.0] {
            for &s in &[-2.9, -1.0, 0.5, 2.0] {
                let r = k.pde_residual(t, s).unwrap();
                assert!(r.residual < 1e-6 * r.scale, "({t},{s}): {r:?}");
            }
        }
    }

    #[test]
    fn kernel_respects_decay_bound() {
        let s_half = 2.5;
        let t_end = 1.0;
        let k = KernelEvaluator::for_window(s_half, t_end, DEFAULT_ALPHA_MARGIN).unwrap();
        for i in 0..20 {
            let t = t_end * (i as f64 + 0.5) / 20.0;
            for j in 0..20 {
                let s = -s_half + 2.0 * s_half * (j as f64 + 0.5) / 20.0;
                let v = k.eval(t, s).unwrap();
                assert!(v.abs() <= k.bound(t, s, 0.9), "({t},{s}): {v}");
            }
        }
    }

    #[test]
    fn kernel_radius_guard() {
        let k = KernelEvaluator::new(2.0, 1.0).unwrap();
        assert!(matches!(k.eval(0.5, 2.0), Err(Error::Domain(_))));
        assert!(matches!(heat_kernel(2.0, 1.0, 0.5, -2.5, 60), Err(Error::Domain(_))));
        assert!(matches!(k.eval(1.5, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn kernel_precision_is_sufficient() {
        let k = KernelEvaluator::for_window(3.7, 1.4, DEFAULT_ALPHA_MARGIN).unwrap();
        for &(t, s) in &[(0.05, 3.5), (0.3, -2.0), (0.7, 3.7)] {
            let (a, _) = k.eval_mp(t, s, 1e-30, 0).unwrap();
            let (b, _) = k.eval_mp(t, s, 1e-30, 512).unwrap();
            let rel = Float::with_val(b.prec(), &a - &b).to_f64().abs() / b.to_f64().abs();
            assert!(rel < 1e-25, "({t},{s}): {rel}");
        }
    }

    #[test]
    fn odd_sine_moments_match_power_series() {
        let (beta, s, prec) = (3.0, 2.0, 256);
        let rec = odd_sine_moments(beta, s, 41, prec);
        for (idx, v) in rec.iter().enumerate() {
            let k = 2 * idx + 1;
            let mut acc = Float::new(prec);
            let mut term_fact = Float::with_val(prec, 1);
            for i in 0..120u32 {
                if i > 0 {
                    term_fact *= (2 * i) * (2 * i + 1);
                }
                let num = mp_pow(beta, 2 * i + 1, prec) * mp_pow(s, k as u32 + 2 * i + 2, prec);
                let t = num / &term_fact / (k as u32 + 2 * i + 2);
                if i % 2 == 0 {
                    acc += t;
                } else {
                    acc -= t;
                }
            }
            let rel = Float::with_val(prec, v - &acc).to_f64().abs() / acc.to_f64().abs();
            assert!(rel < 1e-40, "k={k}: {rel}");
        }
    }

    #[test]
    fn harmonic_frequencies_give_diagonal_gram() {
        let s_half = 1.7;
        let betas: Vec<f64> = (1..=6).map(|n| n as f64 * std::f64::consts::PI / s_half).collect();
        let fam = sine_biorthogonal(&betas, s_half, 6).unwrap();
        let coef = fam.coefficients();
        let g = fam.gram();
        for i in 0..6 {
            for j in 0..6 {
                let (ge, ce) = if i == j { (s_half, 1.0 / s_half) } else { (0.0, 0.0) };
                assert!((g[i][j] - ge).abs() < 1e-13);
                assert!((coef[i][j] - ce).abs() < 1e-13);
            }
        }
        let s = 0.3;
        assert!((fam.eval(2, s) - (betas[2] * s).sin() / s_half).abs() < 1e-13);
    }

    #[test]
    fn sine_family_on_example_spectrum() {
        let eps = 0.05;
        let sp = spectrum(eps, 15);
        let betas: Vec<f64> = sp.betas.iter().map(|b| b / eps).collect();
        let pot = Potential::new(&preset()).unwrap();
        let t1 = Bounds::new(&pot).unwrap().t1;
        let fam = sine_biorthogonal(&betas, 0.5 * (t1 + DEFAULT_WINDOW_DELTA), 15).unwrap();
        assert!(fam.gram_residual < 1e-9, "{}", fam.gram_residual);
        let q = fam.quadrature_residual();
        assert!(q < 1e-8, "{q}");
    }

    #[test]
    fn nearly_coincident_frequencies_are_ill_conditioned() {
        let betas = [1.0, 2.0, 2.0 + 1e-9, 3.0];
        assert!(matches!(sine_biorthogonal(&betas, 2.0, 4), Err(Error::IllConditioned(_))));
        assert!(matches!(sine_biorthogonal(&[2.0, 1.0], 2.0, 2), Err(Error::InvalidInput(_))));
    }

    /// `∫ a^{(j)}(t) e^{−β²t} dt = β^{2j} ∫ a e^{−β²t} dt` by direct trapezoid quadrature in `u`.
    #[test]
    fn integration_by_parts_identity_by_quadrature() {
        let (alpha, t_end, beta) = (6.0, 1.0, 2.5);
        let prec = 512;
        let h = 1.0 / 64.0;
        let base = gevrey_laplace(alpha, t_end, beta).unwrap();
        for j in 0..=5usize {
            let mut acc = Float::new(prec);
            for i in -1400i64..=1400 {
                let node = time_node(t_end, i as f64 * h, h, prec);
                let mut g = GevreyTaylor::new(alpha, &node.t, &node.r, prec);
                let ej = g.coeff(j).clone();
                let expo = Float::with_val(prec, &g.ln_a - Float::with_val(prec, &node.t * (beta * beta)));
                let v = ej * Float::with_val(prec, Float::factorial(j as u32)) * expo.exp() * &node.weight;
                acc += v;
            }
            let expected = Float::with_val(prec, &base * beta.powi(2 * j as i32));
            let rel = Float::with_val(prec, &acc - &expected).to_f64().abs() / expected.to_f64().abs();
            assert!(rel < 1e-20, "j={j}: {rel}");
        }
    }

    /// Pointwise `u_n` integrated against `e^{−β_l² t}` on the node set reproduces `δ_{nl}`.
    #[test]
    fn exp_family_biorthogonal_by_direct_quadrature() {
        let betas = [1.0, 2.2, 3.1, 4.3];
        let s_half = 2.0;
        let t_end = 1.0;
        let alpha = 2.0 * s_half * s_half * 1.05;
        let fam = exp_biorthogonal(&betas, t_end, s_half, alpha, 4).unwrap();
        let n = 4;
        let unit: Vec<Vec<Float>> = (0..n).map(|i| (0..n).map(|j| Float::with_val(fam.prec, (i == j) as u32)).collect()).collect();
        let sw = fam.sweep(&unit, 1.0 / 32.0).unwrap();
        let mut worst = 0.0f64;
        for i in 0..n {
            for (l, &bl) in betas.iter().enumerate() {
                let mut acc = Float::new(fam.prec);
                for ((t, w), v) in sw.times.iter().zip(&sw.weights).zip(&sw.values[i]) {
                    acc += Float::with_val(fam.prec, v * (w * (-bl * bl * t).exp()));
                }
                worst = worst.max((acc.to_f64() - (i == l) as u8 as f64).abs());
            }
        }
        assert!(worst < 1e-6, "{worst}");
        let (_, r) = fam.residual_matrix().unwrap();
        assert!(r < 1e-20, "{r}");
    }

    #[test]
    fn c_lower_bound_constant_is_positive_and_finite() {
        let betas = [1.0, 2.2, 3.1, 4.3, 5.2];
        let fam = exp_biorthogonal(&betas, 0.8, 2.0, 8.4, 5).unwrap();
        assert!(fam.ln_cl_lower_constant().is_finite());
        for (lc, b) in fam.ln_c.iter().zip(&betas) {
            let upper = -(b.ln()) - 4.0 * fam.alpha / fam.t_end + 0.8f64.ln();
            assert!(*lc < upper, "c_l must not exceed T·a_max/β_l");
        }
    }

    #[test]
    fn single_mode_is_annihilated() {
        let eps = 0.05;
        let field = preset();
        let sp = spectrum(eps, 16);
        let pot = Potential::new(&field).unwrap();
        let t16 = Bounds::new(&pot).unwrap().t16().unwrap();
        let opts = ControlOptions { n_trunc: 6, ..Default::default() };
        for k in [0usize, 2] {
            let mut v0 = vec![0.0; 6];
            v0[k] = 1.0;
            let sig = synthesize_control(&sp, &field, 1.2 * t16, 0.5, &v0, &opts).unwrap();
            assert!(sig.modal_residual < 1e-6, "k={k}: {}", sig.modal_residual);
            assert!(sig.t_grid.iter().all(|&t| t >= 0.5 * 1.2 * t16 - 1e-9));
            assert!(sig.ln_norm_sq.is_finite() && sig.ln_fitted_constant.is_finite());
        }
    }

    #[test]
    fn single_phase_has_no_dissipation_interval() {
        let eps = 0.05;
        let field = preset();
        let sp = spectrum(eps, 12);
        let v0 = random_unit_coefficients(4, 7);
        let opts = ControlOptions { n_trunc: 6, ..Default::default() };
        let t = 40.0;
        let sig = synthesize_control(&sp, &field, t, 0.0, &v0, &opts).unwrap();
        assert!(sig.t_grid.first().unwrap() < &(0.25 * t));
        assert!(sig.modal_residual < 1e-6);
    }

    #[test]
    fn synthesis_errors() {
        let eps = 0.05;
        let field = preset();
        let sp = spectrum(eps, 8);
        let v0 = random_unit_coefficients(3, 1);
        let small = ControlOptions { n_trunc: 1, ..Default::default() };
        assert!(matches!(synthesize_control(&sp, &field, 1.0, 0.5, &v0, &small), Err(Error::InsufficientFamily(_))));
        let big = ControlOptions { n_trunc: 20, ..Default::default() };
        assert!(matches!(synthesize_control(&sp, &field, 40.0, 0.5, &v0, &big), Err(Error::InsufficientFamily(_))));
        assert!(matches!(synthesize_control(&sp, &field, 40.0, 1.0, &v0, &small), Err(Error::Domain(_))));
        let unbalanced = preset().with_qf(0.3);
        let n = points_for(&unbalanced, eps, 40.0);
        let sp2 = eigenpairs(&discretize(&unbalanced, eps, n).unwrap(), 8).unwrap();
        assert!(matches!(synthesize_control(&sp2, &unbalanced, 40.0, 0.5, &v0, &small), Err(Error::HypothesisViolation(_))));
    }

    #[test]
    fn random_coefficients_are_unit_and_reproducible() {
        let a = random_unit_coefficients(30, 42);
        let b = random_unit_coefficients(30, 42);
        assert_eq!(a, b);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dissipation_sums_are_controlled() {
        let field = preset();
        let pot = Potential::new(&field).unwrap();
        let t = 20.0;
        let (m, theta) = (0.5, 0.2);
        let reps: Vec<DissipationReport> =
            [0.05, 0.03].iter().map(|&e| dissipation_bounds(&spectrum(e, 40), &pot, t, m, theta).unwrap()).collect();
        assert!(reps[1].a_constant <= reps[0].a_constant * 1.05, "{reps:?}");
        for r in &reps {
            assert!(r.ln_b_eps <= 2.0 * (r.f_exponent + r.delta_obs.max(0.0)) / r.eps + 1e-9);
        }
        assert!(reps[1].delta_obs <= reps[0].delta_obs.max(0.0) + 1e-12, "{reps:?}");
    }
}
