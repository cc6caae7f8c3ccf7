//! Composite trapezoid quadrature on uniform grids.

/// Composite trapezoid rule for samples spaced `h` apart.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let interior: f64 = values[1..n - 1].iter().sum();
            h * (0.5 * (values[0] + values[n - 1]) + interior)
        }
    }
}

/// Trapezoid rule for `f(values[i])` without allocating.
pub fn trapezoid_map(values: &[f64], h: f64, f: impl Fn(f64) -> f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let interior: f64 = values[1..n - 1].iter().map(|&v| f(v)).sum();
            h * (0.5 * (f(values[0]) + f(values[n - 1])) + interior)
        }
    }
}

/// Trapezoid rule on a non-uniform abscissa.
pub fn trapezoid_xy(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}
