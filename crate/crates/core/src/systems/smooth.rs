/// Differentiable surrogate for `max(0, x)`: `½(√(x² + γ²) + x)`.
pub fn smooth_max(x: f64, gamma: f64) -> f64 {
    0.5 * ((x * x + gamma * gamma).sqrt() + x)
}

pub fn smooth_max_d1(x: f64, gamma: f64) -> f64 {
    0.5 * (x / (x * x + gamma * gamma).sqrt() + 1.0)
}

pub fn smooth_max_d2(x: f64, gamma: f64) -> f64 {
    let r2 = x * x + gamma * gamma;
    0.5 * gamma * gamma / (r2 * r2.sqrt())
}

/// Antiderivative of [`smooth_max`] (up to a constant): the potential of a
/// smoothed one-sided spring.
pub fn smooth_max_integral(x: f64, gamma: f64) -> f64 {
    let g2 = gamma * gamma;
    let r = (x * x + g2).sqrt();
    // x + r cancels for large negative x; use x + r = γ²/(r − x) there
    let log_term = if x >= 0.0 { (x + r).ln() } else { g2.ln() - (r - x).ln() };
    0.25 * (x * r + g2 * log_term) + 0.25 * x * x
}
