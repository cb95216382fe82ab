//! Deterministic quadrature: adaptive Gauss–Kronrod (7/15) and tanh-sinh rules
//! whose integrand receives exact distances to both interval endpoints.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub abs_err: f64,
    pub converged: bool,
}

/// Single 15-point Kronrod panel; returns (Kronrod value, |Kronrod − Gauss|).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let dx = r * XGK[j];
        let s = f(c - dx) + f(c + dx);
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    (rk * r, ((rk - rg) * r).abs())
}

struct Panel {
    a: f64,
    b: f64,
    val: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> QuadResult {
    adaptive_with_limit(&mut f, a, b, abs_tol, rel_tol, 4000)
}

pub fn adaptive_with_limit<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> QuadResult {
    if a == b {
        return QuadResult { value: 0.0, abs_err: 0.0, converged: true };
    }
    let (v, e) = gk15(f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, val: v, err: e });
    let mut total = v;
    let mut total_err = e;
    let mut count = 1;
    loop {
        if total_err <= abs_tol.max(rel_tol * total.abs()) {
            return QuadResult { value: total, abs_err: total_err, converged: true };
        }
        if count >= max_panels {
            break;
        }
        let p = heap.pop().expect("non-empty heap");
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            heap.push(p);
            break;
        }
        let (v1, e1) = gk15(f, p.a, m);
        let (v2, e2) = gk15(f, m, p.b);
        total += v1 + v2 - p.val;
        total_err += e1 + e2 - p.err;
        heap.push(Panel { a: p.a, b: m, val: v1, err: e1 });
        heap.push(Panel { a: m, b: p.b, val: v2, err: e2 });
        count += 1;
    }
    // Recompute sums to remove drift from incremental updates.
    let (mut s, mut se) = (0.0, 0.0);
    for p in heap.iter() {
        s += p.val;
        se += p.err;
    }
    QuadResult { value: s, abs_err: se, converged: se <= abs_tol.max(rel_tol * s.abs()) }
}

/// Node of a tanh-sinh rule on `[a, b]`: abscissa, distance to `a`, distance to `b`, weight.
#[derive(Debug, Clone, Copy)]
pub struct TsNode {
    pub x: f64,
    pub dl: f64,
    pub dr: f64,
    pub w: f64,
}

/// Tanh-sinh nodes on `[a, b]` with step `h`, truncated where weights vanish.
pub fn tanh_sinh_nodes(a: f64, b: f64, h: f64) -> Vec<TsNode> {
    let len = b - a;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut out = Vec::new();
    let kmax = (4.0 / h).ceil() as i64;
    for k in -kmax..=kmax {
        let t = k as f64 * h;
        let u = half_pi * t.sinh();
        let ch = u.cosh();
        let w = h * half_pi * t.cosh() / (ch * ch) * 0.5 * len;
        // 1 + tanh(u) = 2 / (1 + e^{-2u}), 1 - tanh(u) = 2 / (1 + e^{2u})
        let dl = len / (1.0 + (-2.0 * u).exp());
        let dr = len / (1.0 + (2.0 * u).exp());
        if !(w > 1e-300) || dl <= 0.0 || dr <= 0.0 {
            continue;
        }
        let x = if dl < dr { a + dl } else { b - dr };
        out.push(TsNode { x, dl, dr, w });
    }
    out
}

/// Tanh-sinh integration with step refinement until successive estimates agree.
/// The integrand receives `(x, distance to a, distance to b)`.
pub fn tanh_sinh<F: FnMut(f64, f64, f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64) -> QuadResult {
    if a == b {
        return QuadResult { value: 0.0, abs_err: 0.0, converged: true };
    }
    let mut prev = f64::NAN;
    let mut h = 0.5;
    for _ in 0..9 {
        let s: f64 = tanh_sinh_nodes(a, b, h).iter().map(|n| n.w * f(n.x, n.dl, n.dr)).sum();
        let err = (s - prev).abs();
        if err <= rel_tol * s.abs() || err < 1e-300 {
            return QuadResult { value: s, abs_err: err, converged: true };
        }
        prev = s;
        h *= 0.5;
    }
    QuadResult { value: prev, abs_err: f64::NAN, converged: false }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}
