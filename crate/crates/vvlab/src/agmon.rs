//! Turning points, Agmon distance `d_{A,E}`, and the weights
//! `W_E = d_{A,E} + f/2`, `W̃_E = f/2 − d_{A,E}`.

use serde::Serialize;

use crate::numerics::quad::adaptive;
use crate::numerics::roots::{bisect, golden_max};
use crate::problem::{CaseSign, Potential};
use crate::{Error, Result};

/// Grid intervals used to locate extrema of `W_E` and `W̃_E` before refinement.
pub const EXTREMA_GRID: usize = 2048;
const D_TOL: f64 = 1e-13;

/// `(x−(E), x+(E))`, clamped to `[0, L]`.
pub fn turning_points(pot: &Potential, e: f64) -> Result<(f64, f64)> {
    if !(e >= pot.e0) {
        return Err(Error::EnergyBelowGround { e, e0: pot.e0 });
    }
    if e == pot.e0 {
        return Ok((pot.x0, pot.x0));
    }
    let l = pot.length();
    let de = e - pot.e0;
    let xm = if e >= pot.v0 { 0.0 } else { bisect(|x| pot.v_above_min(x) - de, 0.0, pot.x0) };
    let xp = if e >= pot.vl { l } else { bisect(|x| pot.v_above_min(x) - de, pot.x0, l) };
    Ok((xm, xp))
}

/// Per-energy Agmon geometry.
#[derive(Debug, Clone)]
pub struct AgmonProfile {
    pub e: f64,
    pub x_minus: f64,
    pub x_plus: f64,
    pub d0: f64,
    pub dl: f64,
    pot: Potential,
}

/// Location and value of the extrema of `W_E` and `W̃_E` over `[0, L]`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeightExtrema {
    pub min_w: f64,
    pub argmin_w: f64,
    pub sup_wt: f64,
    pub argsup_wt: f64,
}

impl AgmonProfile {
    pub fn new(pot: &Potential, e: f64) -> Result<Self> {
        let (x_minus, x_plus) = turning_points(pot, e)?;
        let mut p = Self { e, x_minus, x_plus, d0: 0.0, dl: 0.0, pot: pot.clone() };
        p.d0 = p.d(0.0);
        p.dl = p.d(pot.length());
        Ok(p)
    }

    pub fn potential(&self) -> &Potential {
        &self.pot
    }

    fn root_gap(&self, s: f64) -> f64 {
        (self.pot.v_above_min(s) - (self.e - self.pot.e0)).max(0.0).sqrt()
    }

    /// `|∫_{tp}^{x} √((V−E)₊)|` with `s = tp ± w²` removing the turning-point singularity.
    fn from_turning(&self, tp: f64, x: f64) -> f64 {
        let len = (x - tp).abs();
        if len == 0.0 {
            return 0.0;
        }
        let dir = if x > tp { 1.0 } else { -1.0 };
        adaptive(|w| 2.0 * w * self.root_gap(tp + dir * w * w), 0.0, len.sqrt(), D_TOL, D_TOL).value
    }

    /// Agmon distance from `x` to the allowed region `[x−, x+]`.
    pub fn d(&self, x: f64) -> f64 {
        if x < self.x_minus {
            self.from_turning(self.x_minus, x)
        } else if x > self.x_plus {
            self.from_turning(self.x_plus, x)
        } else {
            0.0
        }
    }

    pub fn w(&self, x: f64) -> f64 {
        self.d(x) + 0.5 * self.pot.field.f(x)
    }

    pub fn wt(&self, x: f64) -> f64 {
        0.5 * self.pot.field.f(x) - self.d(x)
    }

    /// `d` at ascending abscissae by cumulative integration outward from the turning points.
    pub fn d_on_sorted(&self, xs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; xs.len()];
        let mut acc = 0.0;
        let mut prev = self.x_minus;
        for i in (0..xs.len()).rev() {
            let x = xs[i];
            if x >= self.x_minus {
                continue;
            }
            acc += if prev == self.x_minus {
                self.from_turning(self.x_minus, x)
            } else {
                adaptive(|s| self.root_gap(s), x, prev, D_TOL, D_TOL).value
            };
            prev = x;
            out[i] = acc;
        }
        acc = 0.0;
        prev = self.x_plus;
        for (i, &x) in xs.iter().enumerate() {
            if x <= self.x_plus {
                continue;
            }
            acc += if prev == self.x_plus {
                self.from_turning(self.x_plus, x)
            } else {
                adaptive(|s| self.root_gap(s), prev, x, D_TOL, D_TOL).value
            };
            prev = x;
            out[i] = acc;
        }
        out
    }

    /// Extrema of `W_E` and `W̃_E`: grid scan followed by golden-section refinement.
    pub fn extrema(&self) -> WeightExtrema {
        let l = self.pot.length();
        let xs: Vec<f64> = (0..=EXTREMA_GRID).map(|i| l * i as f64 / EXTREMA_GRID as f64).collect();
        let d = self.d_on_sorted(&xs);
        let half_f: Vec<f64> = xs.iter().map(|&x| 0.5 * self.pot.field.f(x)).collect();
        let w: Vec<f64> = d.iter().zip(&half_f).map(|(d, h)| d + h).collect();
        let wt: Vec<f64> = d.iter().zip(&half_f).map(|(d, h)| h - d).collect();
        let (argmin_w, min_w) = refine(&xs, &w, |x| -self.w(x), true);
        let (argsup_wt, sup_wt) = refine(&xs, &wt, |x| self.wt(x), false);
        WeightExtrema { min_w, argmin_w, sup_wt, argsup_wt }
    }

    /// Rows `(x, V, d, W, W̃)` on `n + 1` uniform points.
    pub fn table(&self, n: usize) -> Vec<[f64; 5]> {
        let l = self.pot.length();
        let xs: Vec<f64> = (0..=n).map(|i| l * i as f64 / n as f64).collect();
        let d = self.d_on_sorted(&xs);
        xs.iter()
            .zip(&d)
            .map(|(&x, &d)| {
                let hf = 0.5 * self.pot.field.f(x);
                [x, self.pot.v(x), d, d + hf, hf - d]
            })
            .collect()
    }
}

/// Refines the extremum of sampled values; `minimize` flips the sign convention of `obj`.
fn refine<F: FnMut(f64) -> f64>(xs: &[f64], vals: &[f64], mut obj: F, minimize: bool) -> (f64, f64) {
    let sgn = if minimize { -1.0 } else { 1.0 };
    let (mut bi, mut bv) = (0, f64::NEG_INFINITY);
    for (i, &v) in vals.iter().enumerate() {
        if sgn * v > bv {
            bv = sgn * v;
            bi = i;
        }
    }
    let n = xs.len() - 1;
    // Endpoints are evaluated exactly.
    let exact_end = |i: usize, obj: &mut F| (xs[i], obj(xs[i]));
    if bi == 0 || bi == n {
        let (x, v) = exact_end(bi, &mut obj);
        let (xi, vi) = golden_max(&mut obj, xs[bi.saturating_sub(1)], xs[(bi + 1).min(n)], 1e-12);
        return if vi > v { (xi, sgn * vi) } else { (x, sgn * v) };
    }
    let (x, v) = golden_max(&mut obj, xs[bi - 1], xs[bi + 1], 1e-12);
    let (xa, va) = exact_end(0, &mut obj);
    let (xb, vb) = exact_end(n, &mut obj);
    let mut best = (x, v);
    for c in [(xa, va), (xb, vb)] {
        if c.1 > best.1 {
            best = c;
        }
    }
    (best.0, sgn * best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
    NonMonotone,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub sign_case: CaseSign,
    pub w_monotone: Direction,
    pub wt_monotone: Direction,
    pub min_w_location: f64,
    pub sup_wt_location: f64,
    pub energies: Vec<f64>,
}

fn direction(v: &[f64]) -> Direction {
    let tol = 1e-12 * v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    if v.windows(2).all(|w| w[1] >= w[0] - tol) {
        Direction::Increasing
    } else if v.windows(2).all(|w| w[1] <= w[0] + tol) {
        Direction::Decreasing
    } else {
        Direction::NonMonotone
    }
}

/// Classifies the sign case and verifies the monotonicity of `W_E`, `W̃_E` on sample energies.
pub fn monotonicity_case(pot: &Potential) -> Result<CaseReport> {
    if pot.case_sign == CaseSign::Mixed {
        return Err(Error::AssumptionViolation("f′ changes sign".into()));
    }
    let energies: Vec<f64> = (0..10).map(|i| pot.e0 + (1.2 * pot.vmax - pot.e0) * i as f64 / 9.0).collect();
    let mut wdirs = Vec::new();
    let mut wtdirs = Vec::new();
    for &e in &energies {
        let p = AgmonProfile::new(pot, e)?;
        let t = p.table(256);
        wdirs.push(direction(&t.iter().map(|r| r[3]).collect::<Vec<_>>()));
        wtdirs.push(direction(&t.iter().map(|r| r[4]).collect::<Vec<_>>()));
    }
    let merge = |ds: &[Direction]| if ds.iter().all(|d| *d == ds[0]) { ds[0] } else { Direction::NonMonotone };
    let (min_w_location, sup_wt_location) = match pot.case_sign {
        CaseSign::Increasing => (0.0, pot.length()),
        _ => (pot.length(), 0.0),
    };
    Ok(CaseReport {
        sign_case: pot.case_sign,
        w_monotone: merge(&wdirs),
        wt_monotone: merge(&wtdirs),
        min_w_location,
        sup_wt_location,
        energies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Sign, VectorField};

    fn pot(m: f64, a: f64, s: Sign, l: f64) -> Potential {
        Potential::new(&VectorField::example(m, a, s, l).unwrap()).unwrap()
    }

    #[test]
    fn turning_points_closed_form() {
        let p = pot(1.0, 2.0, Sign::Plus, 2.0);
        let (xm, xp) = turning_points(&p, 0.5).unwrap();
        assert!((xm - 0.5).abs() < 1e-14 && (xp - 1.5).abs() < 1e-14);
        assert_eq!(turning_points(&p, p.e0).unwrap(), (1.0, 1.0));
        assert_eq!(turning_points(&p, 10.0).unwrap(), (0.0, 2.0));
        assert!(turning_points(&p, 0.2).is_err());
    }

    #[test]
    fn ground_energy_distance_is_quadratic() {
        let p = pot(1.0, 2.0, Sign::Minus, 2.0);
        let prof = AgmonProfile::new(&p, p.e0).unwrap();
        assert!((prof.d(1.5) - 0.125).abs() < 1e-13);
        for &x in &[0.0, 0.3, 0.77, 1.2, 2.0] {
            let exact = 2.0 * (x - 1.0) * (x - 1.0) / 4.0;
            assert!((prof.d(x) - exact).abs() < 1e-13 * exact.max(1.0), "x={x}");
        }
    }

    #[test]
    fn cumulative_grid_matches_pointwise() {
        let p = pot(0.8, 1.7, Sign::Plus, 2.0);
        let prof = AgmonProfile::new(&p, 0.6 * p.e0 + 0.4 * p.vmax).unwrap();
        let xs: Vec<f64> = (0..=100).map(|i| 0.02 * i as f64).collect();
        let d = prof.d_on_sorted(&xs);
        for (x, dv) in xs.iter().zip(&d) {
            assert!((prof.d(*x) - dv).abs() < 1e-12);
        }
    }

    #[test]
    fn decreasing_case_ground_weight_difference() {
        let (m, a, l) = (1.0f64, 2.0f64, 2.0f64);
        let p = pot(m, a, Sign::Minus, l);
        let prof = AgmonProfile::new(&p, p.e0).unwrap();
        let fplus = l / 8.0 * (a * a * l * l + 4.0 * m * m).sqrt() + m * m / (2.0 * a) * (a * l / (2.0 * m)).asinh();
        assert!((prof.w(0.0) - prof.w(l) - fplus).abs() < 1e-12);
        let ex = prof.extrema();
        assert!((ex.argmin_w - l).abs() < 1e-12);
        assert!(ex.argsup_wt.abs() < 1e-12);
    }

    #[test]
    fn above_barrier_distance_vanishes() {
        let p = pot(1.0, 2.0, Sign::Plus, 2.0);
        let prof = AgmonProfile::new(&p, 1.5 * p.vmax).unwrap();
        for &x in &[0.0, 0.5, 2.0] {
            assert_eq!(prof.d(x), 0.0);
            assert_eq!(prof.w(x), 0.5 * p.field.f(x));
        }
    }

    #[test]
    fn case_classification() {
        let r = monotonicity_case(&pot(1.0, 2.0, Sign::Plus, 2.0)).unwrap();
        assert_eq!(r.sign_case, CaseSign::Increasing);
        assert_eq!(r.w_monotone, Direction::Increasing);
        assert_eq!(r.wt_monotone, Direction::Increasing);
        let r = monotonicity_case(&pot(1.0, 2.0, Sign::Minus, 2.0)).unwrap();
        assert_eq!(r.sign_case, CaseSign::Decreasing);
        assert_eq!(r.w_monotone, Direction::Decreasing);
    }
}
