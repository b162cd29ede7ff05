//! Regularized Heaviside step and its derivative.

use crate::scalar::Real;

/// Half-width `epsilon` of the smoothed step, in grid units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeavisideParams<T> {
    pub epsilon: T,
}

impl<T: Real> HeavisideParams<T> {
    pub fn new(epsilon: T) -> Self {
        assert!(epsilon > T::zero(), "epsilon must be positive");
        Self { epsilon }
    }

    /// `H(phi)`: 0 below `-eps`, 1 above `eps`, sinusoidal blend between.
    #[inline]
    pub fn heaviside(&self, phi: T) -> T {
        let eps = self.epsilon;
        if phi > eps {
            T::one()
        } else if phi < -eps {
            T::zero()
        } else {
            let r = phi / eps;
            T::half() * (T::one() + r + (T::pi() * r).sin() / T::pi())
        }
    }

    /// `dH/dphi`, supported on `|phi| <= eps`.
    #[inline]
    pub fn delta(&self, phi: T) -> T {
        let eps = self.epsilon;
        if phi.abs() > eps {
            T::zero()
        } else {
            (T::one() + (T::pi() * phi / eps).cos()) / (T::two() * eps)
        }
    }

    /// Peak of the delta, `1 / eps`.
    #[inline]
    pub fn delta_max(&self) -> T {
        T::one() / self.epsilon
    }
}

impl Default for HeavisideParams<f64> {
    fn default() -> Self {
        Self { epsilon: 1.5 }
    }
}
