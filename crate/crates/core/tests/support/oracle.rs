//! Independent numerical oracles.

use std::f64::consts::FRAC_PI_2;

/// Composite Simpson rule with `n` (even) panels.
fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// Two-sided Student-t tail probability by quadrature. Substituting
/// `x = √ν·tan θ` turns the density into `cos^{ν−1} θ` on `(−π/2, π/2)`.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let density = |theta: f64| theta.cos().max(0.0).powf(df - 1.0);
    let total = simpson(-FRAC_PI_2, FRAC_PI_2, 200_000, density);
    let from = (t.abs() / df.sqrt()).atan();
    2.0 * simpson(from, FRAC_PI_2, 200_000, density) / total
}
