//! Finite-difference utilities used by gradient-verification tests.
//!
//! These deliberately avoid [`super::tape::Tape::backward`]: they re-evaluate
//! the forward closure at perturbed points, so they stay an independent
//! oracle for the analytic gradients.

/// Central difference `(f(+eps) - f(-eps)) / (2 eps)` of a scalar function
/// of one perturbation parameter.
pub fn central_difference<F: FnMut(f64) -> f64>(eps: f64, mut f: F) -> f64 {
    (f(eps) - f(-eps)) / (2.0 * eps)
}

/// Relative error with an absolute floor: once both values drop below the
/// floor their disagreement is numerical noise, not a wrong gradient.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_matches_polynomial_derivative() {
        // f(x) = (2+x)^3 at x=0 has derivative 12.
        let d = central_difference(1e-5, |x| (2.0 + x).powi(3));
        assert!((d - 12.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floors_tiny_values() {
        assert!(relative_error(1e-12, -1e-12, 1e-6) < 1e-5);
        assert!(relative_error(1.0, 2.0, 1e-6) > 0.3);
    }
}
