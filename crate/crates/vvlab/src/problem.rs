//! Vector fields `f′ = 𝔞` on `[0, L]`, the effective potential `V = f′²/4`,
//! assumption checks A1–A4, and the explicit family `f±_{M,a}`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::numerics::roots::bisect;
use crate::numerics::spline::NaturalCubicSpline;
use crate::{Error, Result};

/// Default number of grid points used by assumption checks.
pub const CHECK_GRID: usize = 4096;
/// Threshold on `|V′|` below which a grid sample counts as critical.
pub const CRITICAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+", alias = "plus")]
    Plus,
    #[serde(rename = "-", alias = "minus")]
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Example { m: f64, a: f64, sign: Sign, f_left: f64 },
    Tabulated { spline: Arc<NaturalCubicSpline>, f_left: f64 },
}

/// A transport field on `[0, L]` with zeroth-order coefficient `𝔟 = f″/2 + q_f`.
///
/// `f` is normalized so that `f(0) = offset` (zero unless [`VectorField::with_offset`] is used).
#[derive(Debug, Clone)]
pub struct VectorField {
    l: f64,
    shape: Shape,
    qf: f64,
    offset: f64,
}

/// `F(y) = ∫_0^y √(a²s² + M²) ds`.
fn example_antiderivative(m: f64, a: f64, y: f64) -> f64 {
    let r = (a * a * y * y + m * m).sqrt();
    let z = a * y / m;
    // (M²/2a)·asinh(z) = (M y / 2)·asinh(z)/z
    let asinh_over_z = if z.abs() < 1e-4 {
        let z2 = z * z;
        1.0 - z2 / 6.0 + 3.0 * z2 * z2 / 40.0
    } else {
        z.asinh() / z
    };
    0.5 * y * r + 0.5 * m * y * asinh_over_z
}

impl VectorField {
    /// `f±_{M,a}(x) = ±∫_{-L/2}^{x-L/2} √(a²s² + M²) ds` on `[0, L]`.
    pub fn example(m: f64, a: f64, sign: Sign, l: f64) -> Result<Self> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::InvalidParameter(format!("M must be > 0, got {m}")));
        }
        if !(a >= 0.0) || !a.is_finite() {
            return Err(Error::InvalidParameter(format!("a must be >= 0, got {a}")));
        }
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::InvalidParameter(format!("L must be > 0, got {l}")));
        }
        let f_left = example_antiderivative(m, a, -0.5 * l);
        Ok(Self { l, shape: Shape::Example { m, a, sign, f_left }, qf: 0.0, offset: 0.0 })
    }

    /// Spline-interpolated `f` from samples; the grid is translated to start at 0.
    pub fn tabulated(grid: &[f64], f_values: &[f64]) -> Result<Self> {
        if grid.len() < 16 {
            return Err(Error::InvalidParameter(format!("tabulated field needs >= 16 samples, got {}", grid.len())));
        }
        if grid.len() != f_values.len() {
            return Err(Error::InvalidParameter("grid and f_values lengths differ".into()));
        }
        if grid.iter().chain(f_values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite sample".into()));
        }
        let x: Vec<f64> = grid.iter().map(|g| g - grid[0]).collect();
        let l = x[x.len() - 1];
        let spline = NaturalCubicSpline::new(x, f_values.to_vec())
            .ok_or_else(|| Error::InvalidParameter("grid must be strictly increasing".into()))?;
        let f_left = f_values[0];
        Ok(Self { l, shape: Shape::Tabulated { spline: Arc::new(spline), f_left }, qf: 0.0, offset: 0.0 })
    }

    /// Sets a constant `q_f = 𝔟 − f″/2`; zero is the balanced choice `𝔟 = f″/2`.
    pub fn with_qf(mut self, qf: f64) -> Self {
        self.qf = qf;
        self
    }

    /// Replaces `f` by `f + c`.
    pub fn with_offset(mut self, c: f64) -> Self {
        self.offset = c;
        self
    }

    pub fn length(&self) -> f64 {
        self.l
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn qf_const(&self) -> f64 {
        self.qf
    }

    pub fn is_balanced(&self) -> bool {
        self.qf == 0.0
    }

    /// `(M, a, sign)` for the explicit family.
    pub fn example_params(&self) -> Option<(f64, f64, Sign)> {
        match self.shape {
            Shape::Example { m, a, sign, .. } => Some((m, a, sign)),
            Shape::Tabulated { .. } => None,
        }
    }

    /// Returns `(f − offset, f′, f″, f‴)` at `x`.
    fn derivs(&self, x: f64) -> (f64, f64, f64, f64) {
        match &self.shape {
            Shape::Example { m, a, sign, f_left } => {
                let s = sign.value();
                let y = x - 0.5 * self.l;
                let r2 = a * a * y * y + m * m;
                let r = r2.sqrt();
                let f = s * (example_antiderivative(*m, *a, y) - f_left);
                (f, s * r, s * a * a * y / r, s * a * a * m * m / (r2 * r))
            }
            Shape::Tabulated { spline, f_left } => {
                let (v, d1, d2, d3) = spline.eval_all(x);
                (v - f_left, d1, d2, d3)
            }
        }
    }

    pub fn f(&self, x: f64) -> f64 {
        self.derivs(x).0 + self.offset
    }

    /// `𝔞 = f′`.
    pub fn fp(&self, x: f64) -> f64 {
        self.derivs(x).1
    }

    pub fn fpp(&self, x: f64) -> f64 {
        self.derivs(x).2
    }

    /// `𝔟 = f″/2 + q_f`.
    pub fn b(&self, x: f64) -> f64 {
        0.5 * self.fpp(x) + self.qf
    }

    /// `q = 𝔞′ − 𝔟`.
    pub fn q(&self, x: f64) -> f64 {
        self.fpp(x) - self.b(x)
    }

    /// `q_f = f″/2 − q`.
    pub fn qf(&self, x: f64) -> f64 {
        0.5 * self.fpp(x) - self.q(x)
    }

    /// `V = f′²/4`.
    pub fn v(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Example { m, a, .. } => {
                let y = x - 0.5 * self.l;
                0.25 * (a * a * y * y + m * m)
            }
            Shape::Tabulated { .. } => {
                let d = self.derivs(x).1;
                0.25 * d * d
            }
        }
    }

    pub fn vp(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Example { a, .. } => 0.5 * a * a * (x - 0.5 * self.l),
            Shape::Tabulated { .. } => {
                let (_, d1, d2, _) = self.derivs(x);
                0.5 * d1 * d2
            }
        }
    }

    pub fn vpp(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Example { a, .. } => 0.5 * a * a,
            Shape::Tabulated { .. } => {
                let (_, d1, d2, d3) = self.derivs(x);
                0.5 * (d2 * d2 + d1 * d3)
            }
        }
    }

    pub fn grid(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.l * i as f64 / (n - 1) as f64).collect()
    }
}

/// JSON-shaped field definition.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    #[serde(alias = "closed_form_example")]
    Example {
        #[serde(rename = "M")]
        m: f64,
        a: f64,
        sign: Sign,
        #[serde(rename = "L")]
        l: f64,
        #[serde(default)]
        qf: f64,
    },
    Tabulated {
        grid: Vec<f64>,
        f_values: Vec<f64>,
        #[serde(default)]
        qf: f64,
    },
}

impl FieldSpec {
    pub fn build(&self) -> Result<VectorField> {
        match self {
            FieldSpec::Example { m, a, sign, l, qf } => Ok(VectorField::example(*m, *a, *sign, *l)?.with_qf(*qf)),
            FieldSpec::Tabulated { grid, f_values, qf } => Ok(VectorField::tabulated(grid, f_values)?.with_qf(*qf)),
        }
    }

    /// Named presets: `example5-minus`, `example5-plus` (M=1, a=2, L=2) and `flat` (a=0).
    pub fn preset(name: &str) -> Option<Self> {
        let ex = |a: f64, sign| FieldSpec::Example { m: 1.0, a, sign, l: 2.0, qf: 0.0 };
        match name {
            "example5-minus" | "example5" | "minus" => Some(ex(2.0, Sign::Minus)),
            "example5-plus" | "plus" => Some(ex(2.0, Sign::Plus)),
            "flat" => Some(ex(0.0, Sign::Plus)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseSign {
    Increasing,
    Decreasing,
    Mixed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub pass: bool,
    pub witnesses: Vec<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub a1: Check,
    pub a2: Check,
    pub a3: Check,
    pub a4: Check,
    pub case_sign: CaseSign,
    /// `min|𝔞|` for single-signed fields; `≤ 0` when `𝔞` changes sign.
    pub margin: f64,
    /// Refined interior minimizer of `V` when A2 passes.
    pub x0: Option<f64>,
}

impl AssumptionReport {
    pub fn failed_items(&self) -> Vec<&'static str> {
        [("A1", &self.a1), ("A2", &self.a2), ("A3", &self.a3), ("A4", &self.a4)]
            .into_iter()
            .filter(|(_, c)| !c.pass)
            .map(|(n, _)| n)
            .collect()
    }

    pub fn all_pass(&self) -> bool {
        self.failed_items().is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct CriticalCluster {
    lo: usize,
    hi: usize,
    zero_run: usize,
    left: i8,
    right: i8,
}

fn critical_clusters(vp: &[f64]) -> Vec<CriticalCluster> {
    let n = vp.len();
    let s: Vec<i8> = vp
        .iter()
        .map(|&v| if v.abs() < CRITICAL_TOL { 0 } else if v > 0.0 { 1 } else { -1 })
        .collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if s[i] == 0 {
            let mut j = i;
            while j < n && s[j] == 0 {
                j += 1;
            }
            out.push(CriticalCluster {
                lo: i.saturating_sub(1),
                hi: j.min(n - 1),
                zero_run: j - i,
                left: if i > 0 { s[i - 1] } else { 0 },
                right: if j < n { s[j] } else { 0 },
            });
            i = j;
        } else {
            if i > 0 && s[i - 1] != 0 && s[i] != s[i - 1] {
                out.push(CriticalCluster { lo: i - 1, hi: i, zero_run: 0, left: s[i - 1], right: s[i] });
            }
            i += 1;
        }
    }
    out
}

/// Checks assumption items A1–A4 on a grid of `n` points.
pub fn validate_assumptions_with(field: &VectorField, n: usize) -> AssumptionReport {
    let xs = field.grid(n);
    let fp: Vec<f64> = xs.iter().map(|&x| field.fp(x)).collect();
    let vp: Vec<f64> = xs.iter().map(|&x| field.vp(x)).collect();
    let min_fp = fp.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_fp = fp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let case_sign = if min_fp > 0.0 {
        CaseSign::Increasing
    } else if max_fp < 0.0 {
        CaseSign::Decreasing
    } else {
        CaseSign::Mixed
    };
    let margin = min_fp.max(-max_fp);
    let a1_witness: Vec<f64> = match case_sign {
        CaseSign::Mixed => xs.iter().zip(&fp).filter(|(_, v)| v.abs() <= margin.abs().max(1e-300) * 1.0000001).map(|(x, _)| *x).take(4).collect(),
        _ => vec![],
    };
    let a1 = Check {
        pass: margin > 0.0,
        witnesses: a1_witness,
        detail: format!("margin = {margin:.6e}"),
    };

    // Isolated zeros of V′ at 0 or L (forced by natural spline ends) are not interior critical points.
    let clusters: Vec<CriticalCluster> = critical_clusters(&vp)
        .into_iter()
        .filter(|c| !(c.zero_run > 0 && c.zero_run <= 2 && (c.lo == 0 || c.hi == n - 1) && (c.left == 0 || c.right == 0)))
        .collect();
    let witness_of = |c: &CriticalCluster| 0.5 * (xs[c.lo] + xs[c.hi]);
    let valid_min = |c: &CriticalCluster| c.left == -1 && c.right == 1 && c.zero_run <= 2 && c.lo > 0 && c.hi < n - 1;
    let mut x0 = None;
    let a2 = if clusters.len() == 1 && valid_min(&clusters[0]) {
        let c = clusters[0];
        let (lo, hi) = (xs[c.lo], xs[c.hi]);
        let r = bisect(|x| field.vp(x), lo, hi);
        x0 = Some(r);
        Check { pass: true, witnesses: vec![r], detail: "single interior minimum of V".into() }
    } else {
        let detail = if clusters.is_empty() {
            "V has no interior critical point".to_string()
        } else if clusters.iter().any(|c| c.zero_run > 2) {
            "V′ vanishes on an interval (non-isolated critical set)".to_string()
        } else {
            format!("{} critical points of V", clusters.len())
        };
        Check { pass: false, witnesses: clusters.iter().map(witness_of).collect(), detail }
    };

    let v0 = field.v(0.0);
    let vl = field.v(field.length());
    let a3 = Check {
        pass: (v0 - vl).abs() > 1e-12 * v0.abs().max(vl.abs()).max(1e-300),
        witnesses: vec![0.0, field.length()],
        detail: format!("V(0) = {v0:.12e}, V(L) = {vl:.12e}"),
    };

    let a4 = match x0 {
        Some(x) => {
            let vpp = field.vpp(x);
            Check { pass: vpp > CRITICAL_TOL, witnesses: vec![x], detail: format!("V″(x0) = {vpp:.6e}") }
        }
        None => Check { pass: false, witnesses: vec![], detail: "no isolated minimum".into() },
    };

    AssumptionReport { a1, a2, a3, a4, case_sign, margin, x0 }
}

pub fn validate_assumptions(field: &VectorField) -> AssumptionReport {
    validate_assumptions_with(field, CHECK_GRID)
}

/// The effective potential with its distinguished values.
#[derive(Debug, Clone)]
pub struct Potential {
    pub field: VectorField,
    pub x0: f64,
    pub e0: f64,
    pub v0: f64,
    pub vl: f64,
    pub vmax: f64,
    pub vpp_min: f64,
    pub case_sign: CaseSign,
}

impl Potential {
    /// Requires assumption items A1 and A2.
    pub fn new(field: &VectorField) -> Result<Self> {
        let rep = validate_assumptions(field);
        if !rep.a1.pass || !rep.a2.pass {
            let mut msg = Vec::new();
            if !rep.a1.pass {
                msg.push(format!("A1 fails ({})", rep.a1.detail));
            }
            if !rep.a2.pass {
                msg.push(format!("A2 fails ({})", rep.a2.detail));
            }
            if !rep.a4.pass {
                msg.push(format!("A4 fails ({})", rep.a4.detail));
            }
            return Err(Error::AssumptionViolation(msg.join("; ")));
        }
        let x0 = rep.x0.expect("A2 pass provides x0");
        let v0 = field.v(0.0);
        let vl = field.v(field.length());
        Ok(Self {
            field: field.clone(),
            x0,
            e0: field.v(x0),
            v0,
            vl,
            vmax: v0.max(vl),
            vpp_min: field.vpp(x0),
            case_sign: rep.case_sign,
        })
    }

    pub fn v(&self, x: f64) -> f64 {
        self.field.v(x)
    }

    /// Gauss–Legendre mean of `V′` over `[a, b]`.
    pub fn mean_vp(&self, a: f64, b: f64) -> f64 {
        const X: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329_0, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
        const W: [f64; 4] = [0.362_683_783_378_362_0, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
        let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
        let mut s = 0.0;
        for (x, w) in X.iter().zip(&W) {
            s += w * (self.field.vp(c - r * x) + self.field.vp(c + r * x));
        }
        0.5 * s
    }

    /// `V(x) − E0`, in mean-value form near `x0` to avoid cancellation.
    pub fn v_above_min(&self, x: f64) -> f64 {
        let dx = x - self.x0;
        if dx.abs() <= 0.25 * self.length() {
            dx * self.mean_vp(self.x0, x)
        } else {
            self.v(x) - self.e0
        }
    }

    pub fn length(&self) -> f64 {
        self.field.length()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quad::adaptive;

    #[test]
    fn example_center_values() {
        let f = VectorField::example(1.0, 1.0, Sign::Plus, 2.0).unwrap();
        assert!((f.fp(1.0) - 1.0).abs() < 1e-15);
        assert!((f.v(1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn example_endpoint_speed() {
        let f = VectorField::example(1.0, 2.0, Sign::Minus, 2.0).unwrap();
        assert!((f.fp(2.0) + 5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn example_f_matches_quadrature_of_fp() {
        for &a in &[1e-6, 1e-3, 0.5, 2.0, 4.0] {
            let f = VectorField::example(1.3, a, Sign::Minus, 2.0).unwrap();
            for &x in &[0.3, 1.0, 1.7, 2.0] {
                let q = adaptive(|s| f.fp(s), 0.0, x, 1e-14, 1e-14).value;
                assert!((f.f(x) - q).abs() < 1e-12 * q.abs().max(1.0), "a={a} x={x}");
            }
            assert_eq!(f.f(0.0), 0.0);
        }
    }

    #[test]
    fn example_derivatives_match_finite_differences() {
        let f = VectorField::example(0.7, 1.5, Sign::Plus, 2.0).unwrap();
        let h = 1e-5;
        for &x in &[0.2, 0.9, 1.4] {
            let d2 = (f.fp(x + h) - f.fp(x - h)) / (2.0 * h);
            assert!((d2 - f.fpp(x)).abs() < 1e-8);
            let vp = (f.v(x + h) - f.v(x - h)) / (2.0 * h);
            assert!((vp - f.vp(x)).abs() < 1e-8);
            let vpp = (f.vp(x + h) - f.vp(x - h)) / (2.0 * h);
            assert!((vpp - f.vpp(x)).abs() < 1e-8);
            let fppp = (f.fpp(x + h) - f.fpp(x - h)) / (2.0 * h);
            assert!((0.5 * (f.fpp(x).powi(2) + f.fp(x) * fppp) - f.vpp(x)).abs() < 1e-7);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(VectorField::example(0.0, 1.0, Sign::Plus, 2.0).is_err());
        assert!(VectorField::example(1.0, -1.0, Sign::Plus, 2.0).is_err());
        assert!(VectorField::tabulated(&[0.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn example_passes_a1_a2_a4_at_midpoint() {
        for sign in [Sign::Plus, Sign::Minus] {
            let f = VectorField::example(1.0, 2.0, sign, 2.0).unwrap();
            let r = validate_assumptions(&f);
            assert!(r.a1.pass && r.a2.pass && r.a4.pass);
            assert!((r.x0.unwrap() - 1.0).abs() < 1e-15);
            let p = Potential::new(&f).unwrap();
            assert!((p.e0 - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_field_fails_a2_a4() {
        let f = VectorField::example(1.0, 0.0, Sign::Plus, 2.0).unwrap();
        let r = validate_assumptions(&f);
        assert!(r.a1.pass);
        assert!(!r.a2.pass && !r.a4.pass);
        assert!(Potential::new(&f).is_err());
    }

    #[test]
    fn endpoint_potential() {
        let f = VectorField::example(2.0, 1.0, Sign::Plus, 2.0).unwrap();
        assert!((f.v(2.0) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn double_well_fails_a2_with_three_witnesses() {
        let xs: Vec<f64> = (0..=200).map(|i| 2.0 * i as f64 / 200.0).collect();
        // f′ = 1 + 4(y² − 0.25)², y = x − 1: V has minima at y = ±0.5 and a maximum at y = 0
        let fp = |x: f64| {
            let y = x - 1.0;
            1.0 + 4.0 * (y * y - 0.25).powi(2)
        };
        let mut fv = vec![0.0];
        for w in xs.windows(2) {
            let prev = *fv.last().unwrap();
            fv.push(prev + adaptive(fp, w[0], w[1], 1e-15, 1e-15).value);
        }
        let f = VectorField::tabulated(&xs, &fv).unwrap();
        let r = validate_assumptions(&f);
        assert!(!r.a2.pass);
        assert_eq!(r.a2.witnesses.len(), 3);
        assert!((r.a2.witnesses[0] - 0.5).abs() < 0.02);
        assert!((r.a2.witnesses[2] - 1.5).abs() < 0.02);
    }

    #[test]
    fn mixed_sign_field_fails_a1() {
        let xs: Vec<f64> = (0..=64).map(|i| i as f64 / 32.0).collect();
        let fv: Vec<f64> = xs.iter().map(|x| 0.5 * (x - 1.0) * (x - 1.0)).collect();
        let f = VectorField::tabulated(&xs, &fv).unwrap();
        let r = validate_assumptions(&f);
        assert_eq!(r.case_sign, CaseSign::Mixed);
        assert!(!r.a1.pass && r.margin <= 0.0);
    }
}
