//! Block-diagonal Gaussian over a predicted position sequence.

use crate::error::{Error, Result};
use crate::linalg::{Sym2, Vec2};
use crate::scalar::Real;

/// Gaussian density over `H` future positions `x(k+1), …, x(k+H)`.
///
/// Cross-step covariance is identically zero, so only the `H` diagonal
/// 2x2 blocks are stored. `scale` is an exponent applied lazily: raising
/// the density to the power `α` divides every covariance block by `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGaussian<T> {
    start_step: u32,
    mean: Vec<Vec2<T>>,
    blocks: Vec<Sym2<T>>,
    scale: T,
}

impl<T: Real> TrajectoryGaussian<T> {
    pub fn new(start_step: u32, mean: Vec<Vec2<T>>, blocks: Vec<Sym2<T>>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Structure("trajectory horizon must be at least 1".into()));
        }
        if mean.len() != blocks.len() {
            return Err(Error::Structure(format!(
                "{} mean positions but {} covariance blocks",
                mean.len(),
                blocks.len()
            )));
        }
        if let Some(i) = blocks.iter().position(|b| !b.is_spd()) {
            return Err(Error::Numerical(format!("covariance block {i} is not SPD: {:?}", blocks[i])));
        }
        Ok(Self {
            start_step,
            mean,
            blocks,
            scale: T::one(),
        })
    }

    /// Step `k` the prediction was made at; the first mean entry is `k+1`.
    pub fn start_step(&self) -> u32 {
        self.start_step
    }

    pub fn horizon(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[Vec2<T>] {
        &self.mean
    }

    /// Mean stacked as `[x₁, y₁, x₂, y₂, …]`.
    pub fn stacked_mean(&self) -> Vec<T> {
        self.mean.iter().flat_map(|m| [m.x, m.y]).collect()
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// Effective covariance of step `i` (zero-based), with the exponent applied.
    pub fn block(&self, i: usize) -> Sym2<T> {
        self.blocks[i].scale(self.scale.recip())
    }

    pub fn blocks(&self) -> impl Iterator<Item = Sym2<T>> + '_ {
        (0..self.horizon()).map(move |i| self.block(i))
    }

    /// The density raised to the power `alpha > 0`.
    pub fn powered(&self, alpha: T) -> Self {
        let mut out = self.clone();
        out.scale = self.scale * alpha;
        out
    }

    /// Folds the lazy exponent into the stored blocks.
    pub fn materialized(&self) -> Self {
        Self {
            start_step: self.start_step,
            mean: self.mean.clone(),
            blocks: self.blocks().collect(),
            scale: T::one(),
        }
    }

    /// Differential entropy, summed over the independent blocks.
    pub fn entropy(&self) -> T {
        self.blocks().map(|b| gaussian_entropy_2d(&b)).sum()
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.horizon() != other.horizon() {
            return Err(Error::Structure(format!(
                "horizon mismatch: {} vs {}",
                self.horizon(),
                other.horizon()
            )));
        }
        Ok(())
    }

    /// Largest absolute difference over means and effective blocks.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let m = self
            .mean
            .iter()
            .zip(&other.mean)
            .map(|(a, b)| (a.x - b.x).abs().max((a.y - b.y).abs()));
        let c = self.blocks().zip(other.blocks()).map(|(a, b)| a.max_abs_diff(&b));
        m.chain(c).fold(T::zero(), T::max)
    }

    /// Log-density at a stacked point sequence.
    pub fn log_density(&self, x: &[Vec2<T>]) -> T {
        let half = T::lit(0.5);
        let log_2pi = T::TAU().ln();
        self.blocks()
            .zip(self.mean.iter().zip(x))
            .map(|(b, (m, p))| {
                let d = *p - *m;
                let inv = b.inverse().expect("SPD block");
                -half * inv.quad_form(d) - half * b.det().ln() - log_2pi
            })
            .sum()
    }
}

/// `½ log((2πe)² det Σ)` for a 2-D Gaussian.
pub fn gaussian_entropy_2d<T: Real>(cov: &Sym2<T>) -> T {
    let two_pi_e = T::TAU() * T::E();
    T::lit(0.5) * (two_pi_e * two_pi_e * cov.det()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample() -> TrajectoryGaussian<f64> {
        TrajectoryGaussian::new(
            3,
            vec![Vec2::new(1.0, 2.0), Vec2::new(1.5, 2.5)],
            vec![Sym2::new(0.5, 0.1, 0.4), Sym2::isotropic(0.2)],
        )
        .unwrap()
    }

    #[test]
    fn powering_divides_covariance() {
        let p = sample().powered(4.0);
        assert_relative_eq!(p.block(0).xx, 0.125);
        assert_relative_eq!(p.materialized().block(1).yy, 0.05);
        assert_eq!(p.materialized().scale(), 1.0);
    }

    #[test]
    fn rejects_malformed() {
        assert!(TrajectoryGaussian::<f64>::new(0, vec![], vec![]).is_err());
        assert!(TrajectoryGaussian::<f64>::new(0, vec![Vec2::zero()], vec![]).is_err());
        assert!(TrajectoryGaussian::<f64>::new(0, vec![Vec2::zero()], vec![Sym2::new(1.0, 2.0, 1.0)]).is_err());
    }

    #[test]
    fn entropy_of_unit_block() {
        let g = TrajectoryGaussian::<f64>::new(0, vec![Vec2::zero()], vec![Sym2::identity()]).unwrap();
        assert_relative_eq!(g.entropy(), 1.0 + (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-14);
    }

    #[test]
    fn stacked_mean_layout() {
        assert_eq!(sample().stacked_mean(), vec![1.0, 2.0, 1.5, 2.5]);
    }
}
