//! Synthetic interaction data.

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::rng::rng_from_seed;
use crate::split::InteractionVector;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("n_max ({n_max}) must be in [1, n_item) with n_item = {n_item}")]
    BadSizes { n_max: usize, n_item: u32 },
}

/// `n_user` users, each with a length drawn uniformly from `[1, n_max]` and
/// items drawn without replacement from `[1, n_item]`.
pub fn generate_synthetic(
    n_user: usize,
    n_item: u32,
    n_max: usize,
    seed: u64,
) -> Result<Vec<InteractionVector>, DatasetError> {
    if n_max == 0 || n_max >= n_item as usize {
        return Err(DatasetError::BadSizes { n_max, n_item });
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..n_user)
        .map(|_| {
            let len = rng.gen_range(1..=n_max);
            let items = index::sample(&mut rng, n_item as usize, len)
                .into_iter()
                .map(|i| i as u32 + 1)
                .collect();
            InteractionVector::new(items).expect("sampled without replacement")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_seeded_and_bounded() {
        let a = generate_synthetic(200, 50, 8, 3).unwrap();
        assert_eq!(a, generate_synthetic(200, 50, 8, 3).unwrap());
        assert_ne!(a, generate_synthetic(200, 50, 8, 4).unwrap());
        for v in &a {
            assert!((1..=8).contains(&v.len()));
            assert!(v.items().iter().all(|&i| (1..=50).contains(&i)));
        }
        assert!(generate_synthetic(0, 50, 8, 3).unwrap().is_empty());
        assert!(generate_synthetic(5, 8, 8, 3).is_err());
        assert!(generate_synthetic(5, 8, 0, 3).is_err());
    }
}
