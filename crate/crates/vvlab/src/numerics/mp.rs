//! Dense multiprecision linear algebra on `rug::Float`.

use rug::Float;

pub type Mat = Vec<Vec<Float>>;

pub fn zeros(n: usize, m: usize, prec: u32) -> Mat {
    (0..n).map(|_| (0..m).map(|_| Float::new(prec)).collect()).collect()
}

/// Lower Cholesky factor of a symmetric matrix; `None` when a pivot is not positive.
pub fn cholesky(a: &Mat, prec: u32) -> Option<Mat> {
    let n = a.len();
    let mut l = zeros(n, n, prec);
    for j in 0..n {
        let mut s = Float::with_val(prec, &a[j][j]);
        for k in 0..j {
            s -= Float::with_val(prec, &l[j][k] * &l[j][k]);
        }
        if s <= 0 {
            return None;
        }
        let d = s.sqrt();
        for i in j + 1..n {
            let mut t = Float::with_val(prec, &a[i][j]);
            for k in 0..j {
                t -= Float::with_val(prec, &l[i][k] * &l[j][k]);
            }
            l[i][j] = t / &d;
        }
        l[j][j] = d;
    }
    Some(l)
}

/// Solves `L x = b`.
pub fn forward_sub(l: &Mat, b: &[Float], prec: u32) -> Vec<Float> {
    let n = l.len();
    let mut x: Vec<Float> = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = Float::with_val(prec, &b[i]);
        for k in 0..i {
            s -= Float::with_val(prec, &l[i][k] * &x[k]);
        }
        x.push(s / &l[i][i]);
    }
    x
}

/// Solves `Lᵀ x = b`.
pub fn backward_sub_t(l: &Mat, b: &[Float], prec: u32) -> Vec<Float> {
    let n = l.len();
    let mut x: Vec<Float> = (0..n).map(|_| Float::new(prec)).collect();
    for i in (0..n).rev() {
        let mut s = Float::with_val(prec, &b[i]);
        for k in i + 1..n {
            s -= Float::with_val(prec, &l[k][i] * &x[k]);
        }
        x[i] = s / &l[i][i];
    }
    x
}

/// Solves `A x = b` for symmetric positive definite `A` given its Cholesky factor.
pub fn cholesky_solve(l: &Mat, b: &[Float], prec: u32) -> Vec<Float> {
    backward_sub_t(l, &forward_sub(l, b, prec), prec)
}

/// `L⁻¹ A L⁻ᵀ` for symmetric `A`.
pub fn congruence_inverse(l: &Mat, a: &Mat, prec: u32) -> Mat {
    let n = l.len();
    let cols: Vec<Vec<Float>> = (0..n).map(|j| forward_sub(l, &a.iter().map(|r| r[j].clone()).collect::<Vec<_>>(), prec)).collect();
    let mut out = zeros(n, n, prec);
    for i in 0..n {
        let row: Vec<Float> = cols.iter().map(|c| c[i].clone()).collect();
        let y = forward_sub(l, &row, prec);
        for j in 0..n {
            out[i][j] = y[j].clone();
        }
    }
    out
}

/// `max |a_ij|` as `f64` with its binary exponent kept separately: returns `(mantissa_matrix, log_scale)`
/// where `a = e^{log_scale} · mantissa`.
pub fn to_scaled_f64(a: &Mat) -> (Vec<Vec<f64>>, f64) {
    let mut max = Float::new(a[0][0].prec());
    for r in a {
        for v in r {
            let av = Float::with_val(v.prec(), v.abs_ref());
            if av > max {
                max = av;
            }
        }
    }
    if max == 0 {
        return (a.iter().map(|r| vec![0.0; r.len()]).collect(), 0.0);
    }
    let ln = Float::with_val(max.prec(), max.ln_ref()).to_f64();
    let scaled = a.iter().map(|r| r.iter().map(|v| Float::with_val(v.prec(), v / &max).to_f64()).collect()).collect();
    (scaled, ln)
}
