//! Tridiagonal linear solves (Thomas algorithm).

/// Solves `sub[i]·x[i-1] + diag[i]·x[i] + sup[i]·x[i+1] = rhs[i]`; `sub[0]` and `sup[n-1]` are ignored.
pub fn solve(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0];
    c[0] = if n > 1 { sup[0] / beta } else { 0.0 };
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - sub[i] * c[i - 1];
        if i + 1 < n {
            c[i] = sup[i] / beta;
        }
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

/// Pre-factored tridiagonal matrix for repeated solves with the same coefficients.
#[derive(Debug, Clone)]
pub struct Factored {
    sub: Vec<f64>,
    inv_beta: Vec<f64>,
    c: Vec<f64>,
}

impl Factored {
    pub fn new(sub: &[f64], diag: &[f64], sup: &[f64]) -> Self {
        let n = diag.len();
        let mut c = vec![0.0; n];
        let mut inv_beta = vec![0.0; n];
        let mut beta = diag[0];
        inv_beta[0] = 1.0 / beta;
        c[0] = if n > 1 { sup[0] / beta } else { 0.0 };
        for i in 1..n {
            beta = diag[i] - sub[i] * c[i - 1];
            inv_beta[i] = 1.0 / beta;
            if i + 1 < n {
                c[i] = sup[i] / beta;
            }
        }
        Self { sub: sub.to_vec(), inv_beta, c }
    }

    pub fn solve_in_place(&self, d: &mut [f64]) {
        let n = d.len();
        d[0] *= self.inv_beta[0];
        for i in 1..n {
            d[i] = (d[i] - self.sub[i] * d[i - 1]) * self.inv_beta[i];
        }
        for i in (0..n - 1).rev() {
            d[i] -= self.c[i] * d[i + 1];
        }
    }
}
