//! Vector splitting with fake-item masking.
//!
//! A user's interaction set is padded with fake items up to `n* = c * n_max`
//! columns, shuffled, and the resulting 0/1 mask is cut into `s_spl` additive
//! shares with entries drawn from `{-1, 0, 1}` plus a single correction per
//! column. Summing all shares gives back the mask; summing fewer gives noise.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Item identifier, 1-based over the catalog.
pub type ItemId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("invalid split configuration: {0}")]
    InvalidConfig(String),
    #[error("interaction vector is empty")]
    EmptyInteractions,
    #[error("item {0} appears more than once")]
    DuplicateItem(ItemId),
    #[error("item {item} is outside the catalog [1, {n_item}]")]
    ItemOutOfRange { item: ItemId, n_item: u32 },
    #[error("{len} interactions exceed n_max = {n_max}")]
    TooManyInteractions { len: usize, n_max: usize },
    #[error("no shares supplied")]
    NoShares,
    #[error("shares carry different index vectors (mixed sources)")]
    ShareMixing,
    #[error("column {column} sums to {value}, share set is incomplete")]
    IncompleteShareSet { column: usize, value: i32 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("asked for {requested} shares but only {available} were given")]
    NotEnoughShares { requested: usize, available: usize },
}

/// Sizing of the masked matrix and the number of shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    n_item: u32,
    n_max: usize,
    c: usize,
    s_spl: usize,
}

impl SplitConfig {
    pub fn new(n_item: u32, n_max: usize, c: usize, s_spl: usize) -> Result<Self, SplitError> {
        if n_max == 0 {
            return Err(SplitError::InvalidConfig("n_max must be at least 1".into()));
        }
        if c <= 1 {
            return Err(SplitError::InvalidConfig(format!("c must be > 1, got {c}")));
        }
        if s_spl == 0 {
            return Err(SplitError::InvalidConfig("s_spl must be at least 1".into()));
        }
        let n_star = c
            .checked_mul(n_max)
            .ok_or_else(|| SplitError::InvalidConfig("c * n_max overflows".into()))?;
        if n_star >= n_item as usize {
            return Err(SplitError::InvalidConfig(format!(
                "c * n_max = {n_star} must be smaller than n_item = {n_item}"
            )));
        }
        Ok(Self {
            n_item,
            n_max,
            c,
            s_spl,
        })
    }

    pub fn n_item(&self) -> u32 {
        self.n_item
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn s_spl(&self) -> usize {
        self.s_spl
    }

    /// Width of the masked matrix, `c * n_max`.
    pub fn n_star(&self) -> usize {
        self.c * self.n_max
    }

    /// Same sizing with a different share count.
    pub fn with_shares(&self, s_spl: usize) -> Result<Self, SplitError> {
        Self::new(self.n_item, self.n_max, self.c, s_spl)
    }
}

/// A user's set of interacted items, kept in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct InteractionVector {
    items: Vec<ItemId>,
}

impl InteractionVector {
    /// Builds a non-empty vector of distinct, positive item ids.
    pub fn new(mut items: Vec<ItemId>) -> Result<Self, SplitError> {
        if items.is_empty() {
            return Err(SplitError::EmptyInteractions);
        }
        items.sort_unstable();
        for w in items.windows(2) {
            if w[0] == w[1] {
                return Err(SplitError::DuplicateItem(w[0]));
            }
        }
        if items[0] == 0 {
            return Err(SplitError::ItemOutOfRange {
                item: 0,
                n_item: u32::MAX,
            });
        }
        Ok(Self { items })
    }

    /// The empty set. Valid as a recommendation result but never splittable.
    pub fn empty() -> Self {
        Self { items: Vec::new() }
    }

    // Caller guarantees distinct items.
    pub(crate) fn from_distinct(mut items: Vec<ItemId>) -> Self {
        items.sort_unstable();
        Self { items }
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.items.binary_search(&item).is_ok()
    }

    /// Checks the vector against catalog size and `n_max`.
    pub fn validate(&self, cfg: &SplitConfig) -> Result<(), SplitError> {
        if self.items.is_empty() {
            return Err(SplitError::EmptyInteractions);
        }
        if self.items.len() > cfg.n_max {
            return Err(SplitError::TooManyInteractions {
                len: self.items.len(),
                n_max: cfg.n_max,
            });
        }
        // sorted, so the extremes are enough
        let lo = self.items[0];
        let hi = self.items[self.items.len() - 1];
        for item in [lo, hi] {
            if item == 0 || item > cfg.n_item {
                return Err(SplitError::ItemOutOfRange {
                    item,
                    n_item: cfg.n_item,
                });
            }
        }
        Ok(())
    }
}

/// The shuffled index row and its aligned 0/1 real-item mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedMatrix {
    indices: Arc<[ItemId]>,
    mask: Vec<u8>,
}

impl MaskedMatrix {
    pub fn indices(&self) -> &[ItemId] {
        &self.indices
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn width(&self) -> usize {
        self.mask.len()
    }
}

/// One additive share of a mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitVector {
    values: Vec<i32>,
}

impl SplitVector {
    pub fn new(values: Vec<i32>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A split vector paired with the index row it refers to.
///
/// Shares cut from the same source hold the same `Arc` for their indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SplitShare {
    pub split: SplitVector,
    pub indices: Arc<[ItemId]>,
}

impl SplitShare {
    pub fn width(&self) -> usize {
        self.indices.len()
    }
}

/// Element-wise sum of the first `t` shares, no cleanup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeculatedVector(pub Vec<i32>);

/// Pads `source` with distinct fake items and shuffles the columns.
pub fn mask_interactions<R: Rng + ?Sized>(
    source: &InteractionVector,
    cfg: &SplitConfig,
    rng: &mut R,
) -> Result<MaskedMatrix, SplitError> {
    source.validate(cfg)?;
    let n_star = cfg.n_star();
    let real = source.items();
    let n_fake = n_star - real.len();

    // Sample ranks in the complement of the real set, then map each rank to
    // the item it denotes by stepping over the (sorted) real items.
    let complement = cfg.n_item as usize - real.len();
    let ranks = index::sample(rng, complement, n_fake);

    let mut columns: Vec<(ItemId, u8)> = Vec::with_capacity(n_star);
    columns.extend(real.iter().map(|&i| (i, 1u8)));
    for rank in ranks.iter() {
        let mut item = rank as ItemId + 1;
        for &r in real {
            if r <= item {
                item += 1;
            } else {
                break;
            }
        }
        columns.push((item, 0));
    }
    columns.shuffle(rng);

    let (indices, mask): (Vec<ItemId>, Vec<u8>) = columns.into_iter().unzip();
    Ok(MaskedMatrix {
        indices: indices.into(),
        mask,
    })
}

/// Cuts the mask of `matrix` into `s_spl` additive shares.
///
/// Each share starts as i.i.d. uniform draws over `{-1, 0, 1}`. For every
/// column the residual `mask - sum` is then added to one share picked
/// uniformly at random, so the shares sum exactly to the mask.
pub fn split_mask<R: Rng + ?Sized>(
    matrix: &MaskedMatrix,
    s_spl: usize,
    rng: &mut R,
) -> Result<Vec<SplitShare>, SplitError> {
    if s_spl == 0 {
        return Err(SplitError::InvalidConfig("s_spl must be at least 1".into()));
    }
    let width = matrix.width();
    let mut shares: Vec<Vec<i32>> = (0..s_spl)
        .map(|_| (0..width).map(|_| rng.gen_range(-1..=1)).collect())
        .collect();

    for d in 0..width {
        let sum: i32 = shares.iter().map(|v| v[d]).sum();
        let diff = i32::from(matrix.mask[d]) - sum;
        let target = rng.gen_range(0..s_spl);
        shares[target][d] += diff;
    }

    Ok(shares
        .into_iter()
        .map(|values| SplitShare {
            split: SplitVector::new(values),
            indices: Arc::clone(&matrix.indices),
        })
        .collect())
}

/// Masks and splits `source` into `cfg.s_spl()` shares.
pub fn split_vector<R: Rng + ?Sized>(
    source: &InteractionVector,
    cfg: &SplitConfig,
    rng: &mut R,
) -> Result<Vec<SplitShare>, SplitError> {
    let matrix = mask_interactions(source, cfg, rng)?;
    split_mask(&matrix, cfg.s_spl, rng)
}

/// Like [`split_vector`] but also hands back the mask the shares encode.
pub fn split_vector_with_mask<R: Rng + ?Sized>(
    source: &InteractionVector,
    cfg: &SplitConfig,
    rng: &mut R,
) -> Result<(MaskedMatrix, Vec<SplitShare>), SplitError> {
    let matrix = mask_interactions(source, cfg, rng)?;
    let shares = split_mask(&matrix, cfg.s_spl, rng)?;
    Ok((matrix, shares))
}

fn same_indices(a: &Arc<[ItemId]>, b: &Arc<[ItemId]>) -> bool {
    Arc::ptr_eq(a, b) || a[..] == b[..]
}

/// Sums the shares and keeps the items whose column adds up to one.
pub fn reconstruct(shares: &[SplitShare]) -> Result<InteractionVector, SplitError> {
    let first = shares.first().ok_or(SplitError::NoShares)?;
    let width = first.width();
    let mut sum = vec![0i32; width];
    for share in shares {
        if !same_indices(&share.indices, &first.indices) {
            return Err(SplitError::ShareMixing);
        }
        if share.split.len() != width {
            return Err(SplitError::LengthMismatch {
                left: share.split.len(),
                right: width,
            });
        }
        for (acc, v) in sum.iter_mut().zip(share.split.values()) {
            *acc += v;
        }
    }

    let mut items = Vec::new();
    for (column, (&value, &item)) in sum.iter().zip(first.indices.iter()).enumerate() {
        match value {
            0 => {}
            1 => items.push(item),
            _ => return Err(SplitError::IncompleteShareSet { column, value }),
        }
    }
    Ok(InteractionVector::from_distinct(items))
}

/// Sums the first `t` shares.
pub fn speculate(shares: &[SplitShare], t: usize) -> Result<SpeculatedVector, SplitError> {
    if t > shares.len() {
        return Err(SplitError::NotEnoughShares {
            requested: t,
            available: shares.len(),
        });
    }
    let width = shares.first().map_or(0, SplitShare::width);
    let mut sum = vec![0i32; width];
    for share in &shares[..t] {
        if share.split.len() != width {
            return Err(SplitError::LengthMismatch {
                left: share.split.len(),
                right: width,
            });
        }
        for (acc, v) in sum.iter_mut().zip(share.split.values()) {
            *acc += v;
        }
    }
    Ok(SpeculatedVector(sum))
}

/// Jaccard index between the columns equal to one in `spec` and in `mask`.
///
/// Two empty sets compare as identical (1.0).
pub fn jaccard_similarity(spec: &SpeculatedVector, mask: &[u8]) -> Result<f64, SplitError> {
    if spec.0.len() != mask.len() {
        return Err(SplitError::LengthMismatch {
            left: spec.0.len(),
            right: mask.len(),
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&s, &m) in spec.0.iter().zip(mask) {
        let a = s == 1;
        let b = m == 1;
        if a && b {
            inter += 1;
        }
        if a || b {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Checks that every index is distinct and that the real items match `source`.
pub fn check_masked_matrix(matrix: &MaskedMatrix, source: &InteractionVector) -> bool {
    let mut seen = HashSet::with_capacity(matrix.width());
    if matrix.indices.len() != matrix.mask.len() {
        return false;
    }
    let mut real = Vec::new();
    for (&item, &bit) in matrix.indices.iter().zip(&matrix.mask) {
        if !seen.insert(item) || bit > 1 {
            return false;
        }
        if bit == 1 {
            real.push(item);
        }
    }
    real.sort_unstable();
    real == source.items()
}
