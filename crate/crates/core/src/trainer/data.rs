//! Synthetic isotropic-Gaussian inputs with Gaussian augmentation.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Column-sample matrices (d × n): clean inputs and two augmented views.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: DMatrix<f64>,
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
    /// Third independent view, drawn only for an augmented Sim-2 target.
    pub x3: Option<DMatrix<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }
}

fn view<R: Rng + ?Sized>(x: &DMatrix<f64>, sigma: f64, rng: &mut R) -> DMatrix<f64> {
    if sigma == 0.0 {
        return x.clone();
    }
    x.map(|v| {
        let z: f64 = StandardNormal.sample(rng);
        v + sigma * z
    })
}

/// `x ~ N(0, I_d)` and `x⁽¹⁾, x⁽²⁾ ~ N(x, σ²I_d)`, drawn in that order.
pub fn sample_batch<R: Rng + ?Sized>(n: usize, d: usize, sigma2: f64, rng: &mut R) -> Result<Batch> {
    sample_views(n, d, sigma2, false, rng)
}

pub fn sample_views<R: Rng + ?Sized>(n: usize, d: usize, sigma2: f64, third: bool, rng: &mut R) -> Result<Batch> {
    if n == 0 || d == 0 {
        return Err(Error::config(format!("batch needs n, d >= 1, got n={n}, d={d}")));
    }
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(Error::config(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    let x = DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(rng));
    let sigma = sigma2.sqrt();
    let x1 = view(&x, sigma, rng);
    let x2 = view(&x, sigma, rng);
    let x3 = third.then(|| view(&x, sigma, rng));
    Ok(Batch { x, x1, x2, x3 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_variance_views_equal_input() {
        let b = sample_batch(7, 3, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(b.x, b.x1);
        assert_eq!(b.x, b.x2);
    }

    #[test]
    fn same_seed_same_batch() {
        let a = sample_batch(5, 4, 1.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_batch(5, 4, 1.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn view_covariance() {
        let n = 100_000;
        let b = sample_batch(n, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let cov = &b.x1 * b.x1.transpose() / n as f64;
        let want = DMatrix::<f64>::identity(4, 4) * 2.0;
        assert!((cov - want).amax() < 0.05);
    }

    #[test]
    fn rejects_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_batch(0, 3, 1.0, &mut rng).is_err());
        assert!(sample_batch(3, 0, 1.0, &mut rng).is_err());
        assert!(sample_batch(3, 3, -1.0, &mut rng).is_err());
    }
}
