//! The ε = 0 limit: characteristics of `ẋ = f′(x)`, exit times, explicit solutions of the limit
//! observation and control equations, and the observability classification.

use rayon::prelude::*;
use serde::Serialize;

use crate::numerics::quad::adaptive;
use crate::problem::VectorField;
use crate::{Error, Result};

const J_TOL: f64 = 1e-13;

/// Boundary-condition case by the signs of `f′(0)` and `f′(L)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundaryCase {
    /// `f′(0) > 0 > f′(L)`: both ends inflow for the control equation.
    PlusMinus,
    /// `f′ > 0`: control enters at `0`; observation vanishes at `L`.
    PlusPlus,
    /// `f′ < 0`: no control; observation vanishes at `0`.
    MinusMinus,
    /// `f′(0) < 0 < f′(L)`: no boundary conditions.
    MinusPlus,
}

impl BoundaryCase {
    pub fn of(field: &VectorField) -> Result<Self> {
        let (a, b) = (field.fp(0.0), field.fp(field.length()));
        if a == 0.0 || b == 0.0 {
            return Err(Error::AssumptionViolation("f′ vanishes at an endpoint".into()));
        }
        Ok(match (a > 0.0, b > 0.0) {
            (true, false) => Self::PlusMinus,
            (true, true) => Self::PlusPlus,
            (false, false) => Self::MinusMinus,
            (false, true) => Self::MinusPlus,
        })
    }

    /// The control `h` enters the limit control equation.
    pub fn control_enters(self) -> bool {
        matches!(self, Self::PlusMinus | Self::PlusPlus)
    }
}

/// Duality pairing `⟨y(T),u0⟩ − ⟨y0,u(T)⟩ = D` of the limit problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Pairing {
    /// `D = f′(0)∫_0^T u(t,0) h(T−t) dt`.
    Weighted { fp0: f64 },
    Zero,
}

/// Characteristics of a nonvanishing field.
#[derive(Debug, Clone)]
pub struct FlowMap {
    pub field: VectorField,
    pub case: BoundaryCase,
    pub increasing: bool,
}

impl FlowMap {
    /// Requires `f′ ≠ 0` on `[0, L]`.
    pub fn new(field: &VectorField) -> Result<Self> {
        let rep = crate::problem::validate_assumptions(field);
        if !rep.a1.pass {
            return Err(Error::AssumptionViolation(format!("A1 fails: {}", rep.a1.detail)));
        }
        let case = BoundaryCase::of(field)?;
        if matches!(case, BoundaryCase::PlusMinus | BoundaryCase::MinusPlus) {
            return Err(Error::AssumptionViolation(format!("{case:?} requires a sign change of f′")));
        }
        Ok(Self { field: field.clone(), case, increasing: case == BoundaryCase::PlusPlus })
    }

    pub fn length(&self) -> f64 {
        self.field.length()
    }

    /// `J(x, y) = ∫_x^y ds / f′(s)`, the signed travel time from `x` to `y`.
    pub fn travel_time(&self, x: f64, y: f64) -> f64 {
        self.along(x, y, |_| 1.0)
    }

    /// `∫_x^y g(s) / f′(s) ds`, the time integral of `g` along the characteristic from `x` to `y`.
    pub fn along<G: Fn(f64) -> f64>(&self, x: f64, y: f64, g: G) -> f64 {
        if x == y {
            return 0.0;
        }
        let f = &self.field;
        adaptive(|s| g(s) / f.fp(s), x, y, J_TOL, J_TOL).value
    }

    /// Time to reach the outflow boundary from `x`.
    pub fn exit_time(&self, x: f64) -> f64 {
        self.travel_time(x, self.outflow_end())
    }

    /// Time since entering through the inflow boundary for a point now at `x`.
    pub fn entry_time(&self, x: f64) -> f64 {
        self.travel_time(self.inflow_end(), x)
    }

    fn outflow_end(&self) -> f64 {
        if self.increasing {
            self.length()
        } else {
            0.0
        }
    }

    fn inflow_end(&self) -> f64 {
        if self.increasing {
            0.0
        } else {
            self.length()
        }
    }

    /// `T_{f′} = |J(0, L)|`.
    pub fn flushing_time(&self) -> f64 {
        self.travel_time(0.0, self.length()).abs()
    }

    /// `Y_x(t)` for `t` of either sign, by safeguarded Newton on `J(x, ·) = t`.
    pub fn flow(&self, x: f64, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(x);
        }
        let end = if t > 0.0 { self.outflow_end() } else { self.inflow_end() };
        let t_max = self.travel_time(x, end);
        if t.abs() > t_max.abs() {
            return Err(Error::TrajectoryExited { x, t, t_exit: t_max });
        }
        let (mut lo, mut hi) = if x < end { (x, end) } else { (end, x) };
        let g = |y: f64| self.travel_time(x, y) - t;
        let rising = self.increasing;
        let mut y = x + t * self.field.fp(x);
        if !(y > lo && y < hi) {
            y = 0.5 * (lo + hi);
        }
        for _ in 0..200 {
            let gy = g(y);
            if gy == 0.0 {
                return Ok(y);
            }
            if (gy < 0.0) == rising {
                lo = y;
            } else {
                hi = y;
            }
            let newton = y - gy * self.field.fp(y);
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - y).abs() <= 1e-15 * (1.0 + y.abs()) || hi - lo <= 1e-15 * (1.0 + y.abs()) {
                return Ok(next);
            }
            y = next;
        }
        Ok(y)
    }

    /// `u(t, x) = exp(∫_0^t q(Y_x(τ))dτ)·u0(Y_x(t))`, zero after exit.
    pub fn observation_value<U: Fn(f64) -> f64>(&self, u0: &U, t: f64, x: f64) -> Result<f64> {
        if t > self.exit_time(x) {
            return Ok(0.0);
        }
        let y = self.flow(x, t)?;
        let f = &self.field;
        Ok(self.along(x, y, |s| f.q(s)).exp() * u0(y))
    }

    /// Limit control equation `(∂_t + f′∂_x + 𝔟) y = 0` with inflow data `h` at `0` when `f′ > 0`.
    pub fn control_value<Y: Fn(f64) -> f64, H: Fn(f64) -> f64>(&self, y0: &Y, h: &H, t: f64, x: f64) -> Result<f64> {
        let f = &self.field;
        let entry = self.entry_time(x);
        if t <= entry {
            let z = self.flow(x, -t)?;
            Ok((-self.along(z, x, |s| f.b(s))).exp() * y0(z))
        } else if self.case.control_enters() {
            Ok((-self.along(0.0, x, |s| f.b(s))).exp() * h(t - entry))
        } else {
            Ok(0.0)
        }
    }
}

/// `u(T, x_i)` on a grid, in parallel.
pub fn solve_limit_equation<U: Fn(f64) -> f64 + Sync>(flow: &FlowMap, u0: &U, t: f64, xs: &[f64]) -> Result<Vec<f64>> {
    xs.par_iter().map(|&x| flow.observation_value(u0, t, x)).collect()
}

/// Snapshots `u(t_j, x_i)` as rows `(t, x, u)`.
pub fn limit_trajectory<U: Fn(f64) -> f64 + Sync>(flow: &FlowMap, u0: &U, ts: &[f64], xs: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    let mut rows = Vec::with_capacity(ts.len() * xs.len());
    for &t in ts {
        let u = solve_limit_equation(flow, u0, t, xs)?;
        rows.extend(xs.iter().zip(u).map(|(&x, v)| (t, x, v)));
    }
    Ok(rows)
}

/// Both sides of `∫|u(T)|² dx = ∫_{image} |u0(y)|² w(y) dy`, with `w` from `y = Y_x(T)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MassIdentity {
    pub lhs: f64,
    pub rhs: f64,
}

pub fn mass_identity<U: Fn(f64) -> f64 + Sync>(flow: &FlowMap, u0: &U, t: f64) -> Result<MassIdentity> {
    let l = flow.length();
    let f = &flow.field;
    let (xs, ws) = crate::numerics::quad::gauss_legendre(64);
    let panels = 32;
    let node_sets: Vec<(f64, f64)> = (0..panels)
        .flat_map(|p| {
            let (a, b) = (l * p as f64 / panels as f64, l * (p + 1) as f64 / panels as f64);
            xs.iter().zip(&ws).map(move |(&s, &w)| (0.5 * (a + b) + 0.5 * (b - a) * s, 0.5 * (b - a) * w)).collect::<Vec<_>>()
        })
        .collect();
    let lhs: f64 = node_sets
        .par_iter()
        .map(|&(x, w)| flow.observation_value(u0, t, x).map(|u| w * u * u))
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    let rhs: f64 = node_sets
        .par_iter()
        .map(|&(y, w)| {
            let back = flow.travel_time(flow.inflow_end(), y);
            if back < t {
                return Ok(0.0);
            }
            let x = flow.flow(y, -t)?;
            let growth = (2.0 * flow.along(x, y, |s| f.q(s))).exp();
            let u = u0(y);
            Ok(w * u * u * growth * f.fp(x) / f.fp(y))
        })
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    Ok(MassIdentity { lhs, rhs })
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservabilityReport {
    pub case: BoundaryCase,
    pub t: f64,
    pub critical_time: f64,
    pub observable: bool,
    pub pairing: Pairing,
    /// Support of an initial datum invisible on `[0, T]` that has not exited by `T`.
    pub witness_support: Option<(f64, f64)>,
}

pub fn limit_observability(field: &VectorField, t: f64) -> Result<ObservabilityReport> {
    let flow = FlowMap::new(field)?;
    let critical_time = flow.flushing_time();
    let observable = t >= critical_time;
    let pairing = if flow.increasing { Pairing::Weighted { fp0: field.fp(0.0) } } else { Pairing::Zero };
    let witness_support = if observable {
        None
    } else if flow.increasing {
        Some((flow.flow(0.0, t)?, flow.length()))
    } else {
        Some((flow.flow(flow.length(), t)?, flow.length()))
    };
    Ok(ObservabilityReport { case: flow.case, t, critical_time, observable, pairing, witness_support })
}

/// Smooth bump supported on `[a, b]`.
pub fn bump(a: f64, b: f64) -> impl Fn(f64) -> f64 + Sync + Copy {
    move |x: f64| {
        if x <= a || x >= b {
            0.0
        } else {
            let s = (2.0 * x - a - b) / (b - a);
            (-1.0 / (1.0 - s * s)).exp() * std::f64::consts::E
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Sign;

    #[test]
    fn identity_and_closed_form_flow() {
        let (m, a, l) = (1.0, 2.0, 2.0);
        let f = VectorField::example(m, a, Sign::Plus, l).unwrap();
        let fl = FlowMap::new(&f).unwrap();
        assert_eq!(fl.flow(0.3, 0.0).unwrap(), 0.3);
        for &(x, t) in &[(1.0, 0.2), (0.0, 0.5), (0.4, 0.05)] {
            let y0: f64 = x - l / 2.0;
            let yc = (m / a) * ((a * y0 / m).asinh() + a * t).sinh() + l / 2.0;
            let y = fl.flow(x, t).unwrap();
            assert!((y - yc).abs() < 1e-10, "{y} vs {yc}");
        }
        let tf = (2.0 / a) * (a * l / (2.0 * m)).asinh();
        assert!((fl.travel_time(0.0, l) - tf).abs() < 1e-12);
        assert_eq!(fl.exit_time(l), 0.0);
        assert!(matches!(fl.flow(0.0, 1.01 * tf), Err(Error::TrajectoryExited { .. })));
    }

    #[test]
    fn flat_transport_of_constant() {
        let f = VectorField::example(1.0, 0.0, Sign::Plus, 2.0).unwrap();
        let fl = FlowMap::new(&f).unwrap();
        let one = |_: f64| 1.0;
        let xs: Vec<f64> = (0..=20).map(|i| 0.1 * i as f64).collect();
        let u = solve_limit_equation(&fl, &one, 0.75, &xs).unwrap();
        for (x, v) in xs.iter().zip(u) {
            let expect = if 0.75 <= 2.0 - x { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn decreasing_field_flows_left() {
        let f = VectorField::example(1.0, 1.0, Sign::Minus, 2.0).unwrap();
        let fl = FlowMap::new(&f).unwrap();
        assert_eq!(fl.case, BoundaryCase::MinusMinus);
        let y = fl.flow(1.5, 0.3).unwrap();
        assert!(y < 1.5);
        assert!((fl.travel_time(1.5, y) - 0.3).abs() < 1e-12);
        assert!((fl.exit_time(1.5) - fl.travel_time(1.5, 0.0)).abs() < 1e-15);
    }

    #[test]
    fn balanced_growth_factor() {
        let f = VectorField::example(1.0, 2.0, Sign::Plus, 2.0).unwrap();
        let fl = FlowMap::new(&f).unwrap();
        let y = fl.flow(0.2, 0.4).unwrap();
        let g = fl.along(0.2, y, |s| f.q(s)).exp();
        assert!((g - (f.fp(y) / f.fp(0.2)).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn observability_threshold() {
        let f = VectorField::example(1.0, 2.0, Sign::Plus, 2.0).unwrap();
        let tf = FlowMap::new(&f).unwrap().flushing_time();
        assert!(limit_observability(&f, 1.1 * tf).unwrap().observable);
        let r = limit_observability(&f, 0.9 * tf).unwrap();
        assert!(!r.observable);
        assert!(matches!(r.pairing, Pairing::Weighted { .. }));
        let (a, b) = r.witness_support.unwrap();
        let fl = FlowMap::new(&f).unwrap();
        let u0 = bump(a, b);
        let xs: Vec<f64> = (0..200).map(|i| 2.0 * i as f64 / 199.0).collect();
        let u = solve_limit_equation(&fl, &u0, 0.9 * tf, &xs).unwrap();
        assert!(u.iter().any(|v| v.abs() > 1e-3));
        for k in 0..50 {
            let t = 0.9 * tf * k as f64 / 49.0;
            assert_eq!(fl.observation_value(&u0, t, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn mixed_sign_rejected() {
        let grid: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
        let fv: Vec<f64> = grid.iter().map(|x| (x - 0.5) * (x - 0.5)).collect();
        let f = VectorField::tabulated(&grid, &fv).unwrap();
        assert!(matches!(FlowMap::new(&f), Err(Error::AssumptionViolation(_))));
    }
}
