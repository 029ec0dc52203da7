//! Pointwise activation functions with first and second derivatives.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
    Erf,
}

const TWO_OVER_SQRT_PI: f64 = 1.128_379_167_095_512_6;

impl Activation {
    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Erf => libm::erf(x),
        }
    }

    #[inline]
    pub fn sigma_prime(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
            Activation::Erf => TWO_OVER_SQRT_PI * (-x * x).exp(),
        }
    }

    #[inline]
    pub fn sigma_second(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Identity => 0.0,
            Activation::Erf => -2.0 * x * TWO_OVER_SQRT_PI * (-x * x).exp(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Erf => "erf",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_exact() {
        let a = Activation::Identity;
        for x in [-3.0, 0.0, 1.7] {
            assert_eq!(a.sigma(x), x);
            assert_eq!(a.sigma_prime(x), 1.0);
            assert_eq!(a.sigma_second(x), 0.0);
        }
    }

    #[test]
    fn tanh_bounded_with_derivative_identity() {
        let a = Activation::Tanh;
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            let s = a.sigma(x);
            assert!(s.abs() < 1.0);
            assert!((a.sigma_prime(x) - (1.0 - s * s)).abs() < 1e-15);
        }
    }

    /// Central finite differences agree with the analytic derivatives to
    /// O(h²) for every activation on a grid.
    #[test]
    fn finite_difference_derivatives() {
        let h = 1e-5;
        for act in [Activation::Tanh, Activation::Identity, Activation::Erf] {
            for i in -30..=30 {
                let x = i as f64 * 0.13;
                let fd1 = (act.sigma(x + h) - act.sigma(x - h)) / (2.0 * h);
                assert!(
                    (fd1 - act.sigma_prime(x)).abs() <= 5.0 * h * h + 1e-12,
                    "{}: sigma' mismatch at {x}",
                    act.name()
                );
                let fd2 = (act.sigma_prime(x + h) - act.sigma_prime(x - h)) / (2.0 * h);
                assert!(
                    (fd2 - act.sigma_second(x)).abs() <= 20.0 * h * h + 1e-10,
                    "{}: sigma'' mismatch at {x}",
                    act.name()
                );
            }
        }
    }

    #[test]
    fn erf_prime_at_zero() {
        // σ'(0) = 2/√π for the error function.
        let a = Activation::Erf;
        assert!((a.sigma_prime(0.0) - TWO_OVER_SQRT_PI).abs() < 1e-15);
        assert!((a.sigma(0.0)).abs() < 1e-15);
    }
}
