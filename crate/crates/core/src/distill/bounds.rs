//! Error bounds for the constructed distilled predictor.
//!
//! For `x, y, z ≥ 0` and `τ > 0` the squared distance obeys the weak
//! triangle inequality
//! `|x−y|² ≤ max(τ, 4/τ²)·|x−z|² + min(1+τ, 4(1+τ)/(3τ))·|y−z|²`.
//! Chaining it through the feature-space ridge solution yields
//! `loss_vs_optimal ≤ (2a + 2b)·λ` and `loss_vs_labels ≤ b·L + (4b + 2a)·λ`
//! with `(a, b)` the two coefficients above. Both are minimised over
//! `τ = 2` and the `τ = ε ∈ (0, 1)` branch, where `a = 4/ε²`, `b = 1 + ε`.

/// Interior points of the uniform `ε` grid on `(0, 1)`.
pub const EPS_GRID_POINTS: usize = 10_000;

/// Value of a bound and the `τ` attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundValue {
    pub value: f64,
    pub tau: f64,
}

/// `(max(τ, 4/τ²), min(1+τ, 4(1+τ)/(3τ)))`.
pub fn tau_coefficients(tau: f64) -> (f64, f64) {
    assert!(tau > 0.0, "tau must be positive");
    let a = tau.max(4.0 / (tau * tau));
    let b = (1.0 + tau).min(4.0 * (1.0 + tau) / (3.0 * tau));
    (a, b)
}

/// Right-hand side of the weak triangle inequality for `|x−y|²`.
pub fn weak_triangle_rhs(tau: f64, dist_xz_sq: f64, dist_yz_sq: f64) -> f64 {
    let (a, b) = tau_coefficients(tau);
    a * dist_xz_sq + b * dist_yz_sq
}

pub fn optimal_bound_at(tau: f64, lambda: f64) -> f64 {
    let (a, b) = tau_coefficients(tau);
    2.0 * (a + b) * lambda
}

pub fn label_bound_at(tau: f64, train_loss: f64, lambda: f64) -> f64 {
    let (a, b) = tau_coefficients(tau);
    b * train_loss + (4.0 * b + 2.0 * a) * lambda
}

fn minimise(candidates: impl Iterator<Item = f64>, f: impl Fn(f64) -> f64) -> BoundValue {
    let mut best = BoundValue {
        value: f(2.0),
        tau: 2.0,
    };
    for tau in candidates {
        let v = f(tau);
        if v < best.value {
            best = BoundValue { value: v, tau };
        }
    }
    best
}

fn eps_grid() -> impl Iterator<Item = f64> {
    (1..=EPS_GRID_POINTS).map(|k| k as f64 / (EPS_GRID_POINTS + 1) as f64)
}

/// Bound on `(1/n)‖f_full − f_S‖²` over the training points; `8λ`.
pub fn bound_vs_optimal(lambda: f64) -> BoundValue {
    assert!(lambda >= 0.0, "lambda must be non-negative");
    minimise(eps_grid(), |t| optimal_bound_at(t, lambda))
}

/// Bound on `(1/n)‖y − f_S‖²` given the full fit's training loss `L`.
pub fn bound_vs_labels(train_loss: f64, lambda: f64) -> BoundValue {
    assert!(
        train_loss >= 0.0 && lambda >= 0.0,
        "loss and lambda must be non-negative"
    );
    let denom = train_loss + 4.0 * lambda;
    let stationary = if denom > 0.0 {
        Some((16.0 * lambda / denom).cbrt()).filter(|e| *e > 0.0 && *e < 1.0)
    } else {
        None
    };
    minimise(eps_grid().chain(stationary), |t| label_bound_at(t, train_loss, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn optimal_bound_is_eight_lambda() {
        assert_relative_eq!(bound_vs_optimal(1e-5).value, 8e-5, max_relative = 1e-15);
        assert_eq!(bound_vs_optimal(0.5).value, 4.0);
        assert_eq!(bound_vs_optimal(0.5).tau, 2.0);
    }

    #[test]
    fn eps_branch_near_one_is_twelve_lambda() {
        let v = optimal_bound_at(0.999, 1e-5);
        assert!((v / 1e-5 - 12.0).abs() < 0.02);
        assert!(v > 8e-5);
    }

    #[test]
    fn label_bound_examples() {
        assert_relative_eq!(bound_vs_labels(0.0, 1e-5).value, 1.2e-4, max_relative = 1e-15);
        let b = bound_vs_labels(1.0, 1e-5);
        assert_relative_eq!(b.value, 1.0815, max_relative = 1e-4);
        assert_relative_eq!(b.tau, (16e-5f64 / (1.0 + 4e-5)).cbrt(), max_relative = 1e-12);
        assert!((b.tau - 0.0543).abs() < 1e-4);
        assert_eq!(bound_vs_labels(0.0, 0.0).value, 0.0);
    }

    #[test]
    fn stationary_point_beats_grid() {
        let (l, lam) = (0.3, 2e-4);
        let b = bound_vs_labels(l, lam);
        for t in eps_grid().step_by(7) {
            assert!(b.value <= label_bound_at(t, l, lam) + 1e-15);
        }
    }

    #[test]
    fn weak_triangle_holds_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let (x, y, z): (f64, f64, f64) = (
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            let lhs = (x - y).powi(2);
            let rhs = [2.0, 0.5]
                .iter()
                .map(|&t| weak_triangle_rhs(t, (x - z).powi(2), (y - z).powi(2)))
                .fold(f64::INFINITY, f64::min);
            assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12, "{x} {y} {z}");
        }
    }

    proptest! {
        #[test]
        fn label_bound_never_exceeds_tau_two(l in 0.0f64..10.0, lam in 0.0f64..1.0) {
            let v = bound_vs_labels(l, lam).value;
            prop_assert!(v <= 2.0 * l + 12.0 * lam);
            prop_assert!(v >= l.min(2.0 * l));
        }

        #[test]
        fn optimal_bound_is_linear(lam in 1e-12f64..10.0) {
            prop_assert!((bound_vs_optimal(lam).value - 8.0 * lam).abs() <= 1e-15 * lam);
        }
    }
}
