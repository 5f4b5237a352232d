use crate::real::Real;

/// Numerically stable `-[y log s(z) + (1-y) log(1-s(z))]`.
pub(crate) fn bce_with_logits<T: Real>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

/// Logistic function, kept strictly inside `(0, 1)` even where the exact
/// value rounds to an endpoint.
pub(crate) fn sigmoid<T: Real>(z: T) -> T {
    let s = if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    };
    s.max(T::min_positive_value()).min(T::one() - T::epsilon())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_form_matches_direct_formula() {
        for &(z, y) in &[(0.3f64, 1.0), (-2.5, 0.0), (4.0, 0.25), (-0.7, 0.6), (12.0, 1.0)] {
            let s = 1.0 / (1.0 + (-z).exp());
            let direct = -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
            assert!((bce_with_logits(z, y) - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn sigmoid_is_symmetric_and_finite_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(3.0f64) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0f64) > 0.0 && sigmoid(800.0f64) < 1.0);
    }
}
