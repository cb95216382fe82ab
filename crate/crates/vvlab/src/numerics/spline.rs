//! Natural cubic spline interpolation with first and second derivatives.

#[derive(Debug, Clone)]
pub struct NaturalCubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalCubicSpline {
    /// Requires at least two strictly increasing abscissae.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Option<Self> {
        let n = x.len();
        if n < 2 || y.len() != n || x.windows(2).any(|w| !(w[1] > w[0])) {
            return None;
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut sub = vec![0.0; k];
            let mut diag = vec![0.0; k];
            let mut sup = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                sub[i - 1] = h0;
                diag[i - 1] = 2.0 * (h0 + h1);
                sup[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            let sol = super::tridiag::solve(&sub, &diag, &sup, &rhs);
            m[1..n - 1].copy_from_slice(&sol);
        }
        Some(Self { x, y, m })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Returns (s, s', s'', s''') at `t`.
    pub fn eval_all(&self, t: f64) -> (f64, f64, f64, f64) {
        let i = self.segment(t);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let (a, b) = ((x1 - t) / h, (t - x0) / h);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let s = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d1 = (y1 - y0) / h + (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let d2 = a * m0 + b * m1;
        let d3 = (m1 - m0) / h;
        (s, d1, d2, d3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_linear_data() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let s = NaturalCubicSpline::new(x, y).unwrap();
        let (v, d1, d2, _) = s.eval_all(1.234);
        assert!((v - (2.0 * 1.234 - 1.0)).abs() < 1e-13);
        assert!((d1 - 2.0).abs() < 1e-12);
        assert!(d2.abs() < 1e-12);
    }

    #[test]
    fn interpolates_knots_of_smooth_data() {
        let x: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let s = NaturalCubicSpline::new(x.clone(), y.clone()).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!((s.eval_all(*xi).0 - yi).abs() < 1e-14);
        }
        assert!((s.eval_all(0.5).1 - 0.5f64.cos()).abs() < 1e-5);
    }

    #[test]
    fn rejects_non_increasing() {
        assert!(NaturalCubicSpline::new(vec![0.0, 1.0, 1.0], vec![0.0; 3]).is_none());
    }
}
