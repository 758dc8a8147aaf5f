use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::TcModel;
use crate::tensor::DenseTensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// I.i.d. standard Gaussian cores.
    #[default]
    Gaussian,
    /// Gaussian cores scaled so the reconstruction norm equals the data norm.
    Scaled,
    /// Gaussian cores, then balanced normalization.
    Balanced,
}

/// Random starting model; deterministic for a fixed seed. `data_norm` is
/// used by [`InitScheme::Scaled`] (and ignored otherwise).
pub fn init_model(
    dims: &[usize],
    bonds: &[usize],
    seed: u64,
    scheme: InitScheme,
    data_norm: Option<f64>,
) -> Result<TcModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_model(dims, bonds, &mut rng).and_then(|m| match scheme {
        InitScheme::Gaussian => Ok(m),
        InitScheme::Balanced => m.balanced_normalize(),
        InitScheme::Scaled => {
            let Some(target) = data_norm else {
                return invalid("the scaled init scheme needs the data norm");
            };
            let current = m.reconstruct().frobenius_norm();
            if !(current > 0.0) || !(target > 0.0) {
                return Ok(m);
            }
            let f = (target / current).powf(1.0 / m.order() as f64);
            m.scaled(&vec![f; m.order()])
        }
    })
}

/// Chain with i.i.d. standard Gaussian cores drawn in core order.
pub fn gaussian_model(dims: &[usize], bonds: &[usize], rng: &mut impl rand::Rng) -> Result<TcModel> {
    let n = dims.len();
    if bonds.len() != n {
        return invalid(format!("{} bonds given for {} modes", bonds.len(), n));
    }
    if bonds.iter().chain(dims).any(|&d| d == 0) {
        return invalid("dims and bonds must be positive");
    }
    let cores = (0..n)
        .map(|k| {
            let d = vec![bonds[k], dims[k], bonds[(k + 1) % n]];
            DenseTensor::from_fn(d, |_| StandardNormal.sample(rng))
        })
        .collect::<Result<Vec<_>>>()?;
    TcModel::new(cores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_by_seed() {
        let a = init_model(&[4, 5, 6], &[2, 3, 2], 9, InitScheme::Gaussian, None).unwrap();
        let b = init_model(&[4, 5, 6], &[2, 3, 2], 9, InitScheme::Gaussian, None).unwrap();
        assert_eq!(a, b);
        let c = init_model(&[4, 5, 6], &[2, 3, 2], 10, InitScheme::Gaussian, None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scaled_matches_data_norm() {
        let m = init_model(&[5, 5, 5], &[3, 3, 3], 1, InitScheme::Scaled, Some(42.0)).unwrap();
        let norm = m.reconstruct().frobenius_norm();
        assert!((norm - 42.0).abs() <= 0.5 * 42.0);
    }

    #[test]
    fn balanced_terms_are_equal() {
        let m = init_model(&[4, 6, 5], &[2, 3, 2], 2, InitScheme::Balanced, None).unwrap();
        let t = m.sensitivity().per_mode_terms;
        let max = t.iter().cloned().fold(f64::MIN, f64::max);
        let min = t.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - min) / max <= 1e-6);
    }
}
