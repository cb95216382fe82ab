//! Log-domain arithmetic for quantities spanning hundreds of orders of magnitude.

/// `ln Σ exp(l_i)`; returns `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(ls: &[f64]) -> f64 {
    let m = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + ls.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Signed log-domain sum: inputs `(sign, ln|x|)`, output `(sign, ln|Σ x|)`.
pub fn signed_log_sum(terms: &[(f64, f64)]) -> (f64, f64) {
    let m = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return (0.0, f64::NEG_INFINITY);
    }
    let s: f64 = terms.iter().map(|(sg, l)| sg * (l - m).exp()).sum();
    if s == 0.0 {
        (0.0, f64::NEG_INFINITY)
    } else {
        (s.signum(), m + s.abs().ln())
    }
}
