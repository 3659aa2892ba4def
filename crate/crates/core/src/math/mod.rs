//! Shared numerical primitives: standard-normal functions and Owen's T.

pub mod normal;
pub mod owens_t;

pub use normal::{norm_cdf, norm_log_pdf, norm_pdf, norm_quantile};
pub use owens_t::owens_t;

/// log(sum(exp(v))) guarded against overflow; returns -inf for empty input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let v = [0.3_f64, -1.2, 2.0];
        let direct = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v) - direct).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_handles_large_values() {
        let v = [1000.0_f64, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2.0_f64.ln())).abs() < 1e-12);
    }
}
