//! Bracketed root finding and one-dimensional maximization.

/// Bisection on a sign-changing bracket, iterated until the bracket stops shrinking.
/// Returns the endpoint with the smaller residual magnitude.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return lo;
    }
    if fhi == 0.0 {
        return hi;
    }
    let mut fh = fhi;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo.min(hi) || mid >= lo.max(hi) {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
            fh = fm;
        }
    }
    if flo.abs() <= fh.abs() {
        lo
    } else {
        hi
    }
}

/// Golden-section search for a maximum of `f` on `[a, b]`; returns `(argmax, max)`.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Maximize `f` over `[a, b]`: uniform scan with `n` intervals, then golden refinement
/// around the best sample (endpoints included in the comparison).
pub fn scan_and_refine_max<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize, tol: f64) -> (f64, f64) {
    if b <= a {
        return (a, f(a));
    }
    let xs: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let (mut bi, mut bv) = (0, f64::NEG_INFINITY);
    for (i, &v) in vals.iter().enumerate() {
        if v > bv {
            bv = v;
            bi = i;
        }
    }
    let lo = xs[bi.saturating_sub(1)];
    let hi = xs[(bi + 1).min(n)];
    let (xr, vr) = golden_max(&mut f, lo, hi, tol);
    if vr > bv {
        (xr, vr)
    } else {
        (xs[bi], bv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0);
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn golden_parabola() {
        let (x, v) = golden_max(|x| -(x - 0.3) * (x - 0.3) + 1.0, 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((v - 1.0).abs() < 1e-13);
    }

    #[test]
    fn scan_handles_endpoint_max() {
        let (x, _) = scan_and_refine_max(|x| x, 0.0, 1.0, 16, 1e-12);
        assert!((x - 1.0).abs() < 1e-9);
    }
}
