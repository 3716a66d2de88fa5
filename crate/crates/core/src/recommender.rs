//! Server-side interaction matrix and the pluggable recommendation step.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::VirtualId;
use crate::split::{InteractionVector, ItemId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecommendError {
    #[error("row {vid}: item {item} outside [1, {n_item}]")]
    ItemOutOfRange {
        vid: VirtualId,
        item: ItemId,
        n_item: u32,
    },
    #[error("k must satisfy 1 <= k <= n_max ({n_max}), got {k}")]
    BadK { k: usize, n_max: usize },
    #[error("unknown recommender {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionMatrix {
    rows: BTreeMap<VirtualId, InteractionVector>,
    n_item: u32,
}

impl InteractionMatrix {
    pub fn rows(&self) -> &BTreeMap<VirtualId, InteractionVector> {
        &self.rows
    }

    pub fn n_item(&self) -> u32 {
        self.n_item
    }

    /// Interaction count per item, indexed by item id (slot 0 unused).
    pub fn item_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_item as usize + 1];
        for row in self.rows.values() {
            for &i in row.items() {
                counts[i as usize] += 1;
            }
        }
        counts
    }
}

pub fn build_matrix(
    aggregated: BTreeMap<VirtualId, InteractionVector>,
    n_item: u32,
) -> Result<InteractionMatrix, RecommendError> {
    for (vid, row) in &aggregated {
        if let Some(&item) = row.items().iter().find(|&&i| i == 0 || i > n_item) {
            return Err(RecommendError::ItemOutOfRange {
                vid: vid.clone(),
                item,
                n_item,
            });
        }
    }
    Ok(InteractionMatrix {
        rows: aggregated,
        n_item,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecommenderKind {
    Popularity,
}

impl FromStr for RecommenderKind {
    type Err = RecommendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "popularity" => Ok(Self::Popularity),
            other => Err(RecommendError::UnknownKind(other.to_owned())),
        }
    }
}

impl fmt::Display for RecommenderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Popularity => f.write_str("popularity"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommenderSpec {
    pub kind: RecommenderKind,
    pub k: usize,
}

impl RecommenderSpec {
    pub fn new(kind: RecommenderKind, k: usize, n_max: usize) -> Result<Self, RecommendError> {
        if k == 0 || k > n_max {
            return Err(RecommendError::BadK { k, n_max });
        }
        Ok(Self { kind, k })
    }
}

/// A strategy producing at most `k` unseen items per row.
pub trait Recommender {
    fn recommend(&self, matrix: &InteractionMatrix, k: usize)
        -> BTreeMap<VirtualId, InteractionVector>;
}

/// Most interacted items first, ties by ascending item id.
#[derive(Debug, Clone, Copy, Default)]
pub struct Popularity;

impl Popularity {
    pub fn ranking(matrix: &InteractionMatrix) -> Vec<ItemId> {
        let counts = matrix.item_counts();
        let mut items: Vec<ItemId> = (1..=matrix.n_item).collect();
        items.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
        items
    }
}

impl Recommender for Popularity {
    fn recommend(
        &self,
        matrix: &InteractionMatrix,
        k: usize,
    ) -> BTreeMap<VirtualId, InteractionVector> {
        let ranking = Self::ranking(matrix);
        matrix
            .rows
            .iter()
            .map(|(vid, row)| {
                let picks: Vec<ItemId> = ranking
                    .iter()
                    .copied()
                    .filter(|&i| !row.contains(i))
                    .take(k)
                    .collect();
                let rec = if picks.is_empty() {
                    InteractionVector::empty()
                } else {
                    InteractionVector::new(picks).expect("ranking has no duplicates")
                };
                (vid.clone(), rec)
            })
            .collect()
    }
}

pub fn recommend(
    matrix: &InteractionMatrix,
    spec: &RecommenderSpec,
) -> BTreeMap<VirtualId, InteractionVector> {
    match spec.kind {
        RecommenderKind::Popularity => Popularity.recommend(matrix, spec.k),
    }
}
