//! Central finite differences, the oracle behind every gradient test.

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Per-coordinate central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, point: &[f64], h: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub value: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
}

/// Compares the analytic gradient returned by `f` at `point` with central
/// differences of its value.
pub fn finite_difference_check<F>(mut f: F, point: &[f64], h: f64) -> GradCheck
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (value, analytic) = f(point);
    assert_eq!(analytic.len(), point.len(), "gradient length mismatch");
    let numeric = central_difference(|x| f(x).0, point, h);
    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &b)| relative_error(a, b))
        .fold(0.0, f64::max);
    GradCheck {
        value,
        analytic,
        numeric,
        max_rel_error,
    }
}
