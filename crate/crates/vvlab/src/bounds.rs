//! Control-time bounds and cost exponents: `G₁₄`, `G₁₅`, `T₁₄`, `T₁₅`, `T₁₆`,
//! the limit transport time `T_{f′}`, and the exponent `𝖦(T, m, δ)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::agmon::AgmonProfile;
use crate::classical::{sup_period, InteractionKernel};
use crate::numerics::quad::adaptive;
use crate::numerics::roots::golden_max;
use crate::problem::{Potential, VectorField};
use crate::{Error, Result};

/// Energy grid intervals used by suprema over `E ∈ [E0, max V]`.
pub const ENERGY_GRID: usize = 256;

/// `T_{f′} = ∫_0^L ds / |f′(s)|`.
pub fn limit_transport_time(field: &VectorField) -> Result<f64> {
    let rep = crate::problem::validate_assumptions(field);
    if !rep.a1.pass {
        return Err(Error::AssumptionViolation(format!("A1 fails ({}): T_f′ = +∞", rep.a1.detail)));
    }
    let r = adaptive(|s| 1.0 / field.fp(s).abs(), 0.0, field.length(), 1e-13, 1e-13);
    Ok(r.value)
}

/// `(m*, min_{m∈[0,1)} a/(1−m) − b·m)`.
pub fn minimize_f(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        let m = 1.0 - (a / b).sqrt();
        (m, 2.0 * (a * b).sqrt() - b)
    } else {
        (0.0, a)
    }
}

/// `G(T) = min_{m∈[0,1)} a/((1−m)T) − b·m·T + c`.
pub fn g_of_t(a: f64, b: f64, c: f64, t: f64) -> f64 {
    minimize_f(a / t, b * t).1 + c
}

/// Smallest `T` with `G(T) < 0`: `2√(a/b) + c/b`.
pub fn threshold_time(a: f64, b: f64, c: f64) -> f64 {
    2.0 * (a / b).sqrt() + c / b
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GeometricConstants {
    pub e: f64,
    pub b: f64,
    pub g14: f64,
    pub g15: f64,
    pub g16: f64,
    pub s14: f64,
    pub s15: f64,
    pub s16: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct T15Report {
    pub t15: f64,
    pub arg_e: f64,
    pub arg_b: f64,
    pub b_max: f64,
    /// The maximizing `B` sits at the end of the searched range.
    pub b_on_boundary: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub t_limit: f64,
    pub t1: f64,
    pub t1_arg: f64,
    pub e0: f64,
    pub t14: f64,
    pub t14_arg: f64,
    pub t15: Option<T15Report>,
    pub t16: Option<f64>,
    pub sup_g14: f64,
    pub sup_g14_arg: f64,
    pub q_f_zero: bool,
}

/// Bound evaluator for one potential, caching `T₁`.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub pot: Potential,
    pub t1: f64,
    pub t1_arg: f64,
}

impl Bounds {
    pub fn new(pot: &Potential) -> Result<Self> {
        let (t1, t1_arg) = sup_period(pot)?;
        Ok(Self { pot: pot.clone(), t1, t1_arg })
    }

    fn energy_grid(&self) -> Vec<f64> {
        let (e0, vm) = (self.pot.e0, self.pot.vmax);
        (0..=ENERGY_GRID).map(|i| e0 + (vm - e0) * i as f64 / ENERGY_GRID as f64).collect()
    }

    /// `(G₁₄, G₁₅)` at energy `E`.
    pub fn g14_g15(&self, e: f64) -> Result<(f64, f64)> {
        let p = AgmonProfile::new(&self.pot, e)?;
        let ex = p.extrema();
        let w0 = p.w(0.0);
        Ok((w0 - ex.min_w, w0 - ex.sup_wt))
    }

    pub fn g14(&self, e: f64) -> Result<f64> {
        Ok(self.g14_g15(e)?.0)
    }

    pub fn g15(&self, e: f64) -> Result<f64> {
        Ok(self.g14_g15(e)?.1)
    }

    pub fn s16(&self) -> f64 {
        2.0 * 2f64.sqrt() * self.pot.e0.sqrt() * self.t1
    }

    pub fn geometric_constants(&self, e: f64, b: f64) -> Result<GeometricConstants> {
        if !(b >= 0.0) {
            return Err(Error::InvalidParameter(format!("B must be >= 0, got {b}")));
        }
        let (g14, g15) = self.g14_g15(e)?;
        let s15 = InteractionKernel::new(&self.pot, e)?.eval(b)?;
        Ok(GeometricConstants { e, b, g14, g15, g16: g14, s14: 0.0, s15, s16: self.s16() })
    }

    /// `G₁₄` on the energy grid of `[E0, max V]`.
    pub fn g14_table(&self) -> Result<Vec<(f64, f64)>> {
        self.energy_grid().into_par_iter().map(|e| Ok((e, self.g14(e)?))).collect()
    }

    /// `sup_{E≥E0} objective(E, G₁₄(E))` over `[E0, max V]` with golden refinement.
    fn sup_over_energy<F: Fn(f64, f64) -> f64 + Sync>(&self, table: &[(f64, f64)], obj: F) -> Result<(f64, f64)> {
        let vals: Vec<f64> = table.iter().map(|&(e, g)| obj(e, g)).collect();
        let (mut bi, mut bv) = (0, f64::NEG_INFINITY);
        for (i, &v) in vals.iter().enumerate() {
            if v > bv {
                bv = v;
                bi = i;
            }
        }
        let lo = table[bi.saturating_sub(1)].0;
        let hi = table[(bi + 1).min(table.len() - 1)].0;
        if hi > lo {
            let (xe, xv) = golden_max(|e| self.g14(e).map(|g| obj(e, g)).unwrap_or(f64::NEG_INFINITY), lo, hi, 1e-10 * self.pot.vmax);
            if xv > bv {
                return Ok((xv, xe));
            }
        }
        Ok((bv, table[bi].0))
    }

    /// `(sup_E G₁₄(E), argmax)`; `G₁₄` is constant for `E ≥ max V`.
    pub fn sup_g14(&self, table: &[(f64, f64)]) -> Result<(f64, f64)> {
        self.sup_over_energy(table, |_, g| g)
    }

    /// `T₁₄ = sup_E G₁₄(E)/E`.
    pub fn t14(&self) -> Result<(f64, f64)> {
        let t = self.g14_table()?;
        self.sup_over_energy(&t, |e, g| g / e)
    }

    /// `sup_E (G₁₄(E) − E·T)`, the exponent of the lower cost bound.
    pub fn lower_rate(&self, t: f64, table: &[(f64, f64)]) -> Result<(f64, f64)> {
        self.sup_over_energy(table, |e, g| g - e * t)
    }

    /// `T₁₆ = (sup_E G₁₄ + 2√2·√E0·T₁) / E0`; requires `q_f ≡ 0`.
    pub fn t16(&self) -> Result<f64> {
        self.require_balanced()?;
        let t = self.g14_table()?;
        Ok((self.sup_g14(&t)?.0 + self.s16()) / self.pot.e0)
    }

    fn require_balanced(&self) -> Result<()> {
        if !self.pot.field.is_balanced() {
            return Err(Error::HypothesisViolation(format!("q_f = {} ≠ 0", self.pot.field.qf_const())));
        }
        Ok(())
    }

    /// `𝖦(T,m,δ) = 2T₁²/((1−m)T) + sup_E [G₁₄(E) − m(1−δ)E·T]`.
    pub fn cost_exponent_upper(&self, t: f64, m: f64, delta: f64, table: &[(f64, f64)]) -> Result<f64> {
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::Domain(format!("m must lie in (0,1), got {m}")));
        }
        if !(t > 0.0) || !(delta > 0.0) {
            return Err(Error::Domain("T and δ must be positive".into()));
        }
        let k = m * (1.0 - delta) * t;
        let (s, _) = self.sup_over_energy(table, |e, g| g - k * e)?;
        Ok(2.0 * self.t1 * self.t1 / ((1.0 - m) * t) + s)
    }

    /// `(m*, min_m 𝖦(T,m,δ))`; `𝖦` is convex in `m`.
    pub fn min_cost_exponent_upper(&self, t: f64, delta: f64, table: &[(f64, f64)]) -> Result<(f64, f64)> {
        let (m, v) = golden_max(
            |m| -self.cost_exponent_upper(t, m, delta, table).unwrap_or(f64::INFINITY),
            1e-9,
            1.0 - 1e-9,
            1e-10,
        );
        Ok((m, -v))
    }

    /// `T₁₅ = sup_{E,B} (G₁₅(E) + T_{E,B})/(E+B)` over `E ∈ [E0, max V]`, `B ∈ [0, B_max]`.
    pub fn t15(&self, b_max: Option<f64>) -> Result<T15Report> {
        self.require_balanced()?;
        let b_max = b_max.unwrap_or(10.0 * self.pot.vmax);
        let grid = self.energy_grid();
        let per_e: Vec<(f64, f64, f64)> = grid
            .par_iter()
            .map(|&e| {
                let (b, v) = self.best_b(e, b_max)?;
                Ok((e, b, v))
            })
            .collect::<Result<_>>()?;
        let (mut bi, mut bv) = (0, f64::NEG_INFINITY);
        for (i, r) in per_e.iter().enumerate() {
            if r.2 > bv {
                bv = r.2;
                bi = i;
            }
        }
        let (mut arg_e, mut arg_b) = (per_e[bi].0, per_e[bi].1);
        let lo = grid[bi.saturating_sub(1)];
        let hi = grid[(bi + 1).min(grid.len() - 1)];
        if hi > lo {
            let (xe, xv) = golden_max(|e| self.best_b(e, b_max).map(|r| r.1).unwrap_or(f64::NEG_INFINITY), lo, hi, 1e-8 * self.pot.vmax);
            if xv > bv {
                bv = xv;
                arg_e = xe;
                arg_b = self.best_b(xe, b_max)?.0;
            }
        }
        Ok(T15Report { t15: bv, arg_e, arg_b, b_max, b_on_boundary: arg_b >= b_max * (1.0 - 1e-6) })
    }

    /// `(argmax_B, max_B (G₁₅(E) + T_{E,B})/(E+B))` for fixed `E`.
    fn best_b(&self, e: f64, b_max: f64) -> Result<(f64, f64)> {
        let g15 = self.g15(e)?;
        let k = InteractionKernel::new(&self.pot, e)?;
        let obj = |b: f64| k.eval(b).map(|t| (g15 + t) / (e + b)).unwrap_or(f64::NEG_INFINITY);
        let n = 64;
        let bs: Vec<f64> = (0..=n).map(|i| b_max * i as f64 / n as f64).collect();
        let (mut bi, mut bv) = (0, f64::NEG_INFINITY);
        for (i, &b) in bs.iter().enumerate() {
            let v = obj(b);
            if v > bv {
                bv = v;
                bi = i;
            }
        }
        let lo = bs[bi.saturating_sub(1)];
        let hi = bs[(bi + 1).min(n)];
        let (xb, xv) = golden_max(obj, lo, hi, 1e-10 * b_max.max(1.0));
        Ok(if xv > bv { (xb, xv) } else { (bs[bi], bv) })
    }

    /// Full report; `T₁₅` is optional because it is the expensive entry.
    pub fn report(&self, with_t15: bool) -> Result<BoundsReport> {
        let table = self.g14_table()?;
        let (t14, t14_arg) = self.sup_over_energy(&table, |e, g| g / e)?;
        let (sup_g14, sup_g14_arg) = self.sup_g14(&table)?;
        let balanced = self.pot.field.is_balanced();
        let t16 = if balanced { Some((sup_g14 + self.s16()) / self.pot.e0) } else { None };
        let t15 = if balanced && with_t15 { Some(self.t15(None)?) } else { None };
        Ok(BoundsReport {
            t_limit: limit_transport_time(&self.pot.field)?,
            t1: self.t1,
            t1_arg: self.t1_arg,
            e0: self.pot.e0,
            t14,
            t14_arg,
            t15,
            t16,
            sup_g14,
            sup_g14_arg,
            q_f_zero: balanced,
        })
    }
}
