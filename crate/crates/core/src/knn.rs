//! Exact k-nearest-neighbor retrieval over embeddings.
//!
//! Search is a brute-force scan with per-pair Euclidean distances; at the
//! scales this crate targets nothing faster is needed, and the simple kernel
//! is what makes the oracle tests exact (the same arithmetic as a reference
//! double loop, so orderings agree bit-for-bit). Ties break toward the lower
//! id for reproducible runs.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Exact neighbor index; immutable after build, safe for concurrent queries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeighborIndex {
    pub embeddings: EmbeddingMatrix,
    pub k: usize,
    pub include_self: bool,
}

/// A query point: either an indexed record id or an external vector.
#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    Id(usize),
    Vector(ndarray::ArrayView1<'a, f64>),
}

pub fn euclidean(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc.sqrt()
}

/// Build an exact index with a default neighborhood size `k`.
pub fn build_index(
    embeddings: EmbeddingMatrix,
    k: usize,
    include_self: bool,
) -> Result<NeighborIndex> {
    let n = embeddings.len();
    let max_k = if include_self { n } else { n.saturating_sub(1) };
    if k == 0 || k > max_k {
        return Err(Error::KOutOfRange { k, n, include_self });
    }
    Ok(NeighborIndex {
        embeddings,
        k,
        include_self,
    })
}

impl NeighborIndex {
    fn position_of(&self, id: usize) -> Result<usize> {
        self.embeddings
            .ids
            .iter()
            .position(|&i| i == id)
            .ok_or(Error::UnknownId(id))
    }
}

/// The `k` nearest neighbors of `query`, ordered by ascending distance with
/// ties broken by ascending id. Id queries honor the index's `include_self`
/// flag; vector queries rank every indexed point.
pub fn query_knn(index: &NeighborIndex, query: Query<'_>, k: usize) -> Result<Vec<(usize, f64)>> {
    let n = index.embeddings.len();
    let (q_row, exclude) = match query {
        Query::Id(id) => {
            let pos = index.position_of(id)?;
            (
                index.embeddings.values.row(pos),
                (!index.include_self).then_some(pos),
            )
        }
        Query::Vector(v) => {
            if v.len() != index.embeddings.dim() {
                return Err(Error::DimMismatch {
                    what: "query vector".into(),
                    expected: index.embeddings.dim(),
                    actual: v.len(),
                });
            }
            (v, None)
        }
    };
    let candidates = n - usize::from(exclude.is_some());
    if k == 0 || k > candidates {
        return Err(Error::KOutOfRange {
            k,
            n,
            include_self: index.include_self,
        });
    }
    let mut scored: Vec<(usize, f64)> = (0..n)
        .into_par_iter()
        .filter(|&pos| Some(pos) != exclude)
        .map(|pos| {
            (
                index.embeddings.ids[pos],
                euclidean(q_row, index.embeddings.values.row(pos)),
            )
        })
        .collect();
    scored.sort_unstable_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap()
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    Ok(scored)
}

/// Draw uniformly from the `k`-neighborhood of record `x_i`.
pub fn sample_knn_view(index: &NeighborIndex, x_i: usize, rng: &mut RngStream) -> Result<usize> {
    let neighbors = query_knn(index, Query::Id(x_i), index.k)?;
    let pick = rng.random_range(0..neighbors.len());
    Ok(neighbors[pick].0)
}

const INDEX_SCHEMA: &str = "lma-knn-v1";

#[derive(Serialize, Deserialize)]
struct IndexFile {
    schema: String,
    metric: String,
    index: NeighborIndex,
}

pub fn save_index(index: &NeighborIndex, path: &Path) -> Result<()> {
    let file = IndexFile {
        schema: INDEX_SCHEMA.into(),
        metric: "euclidean".into(),
        index: index.clone(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_index(path: &Path) -> Result<NeighborIndex> {
    let raw =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: IndexFile = serde_json::from_str(&raw).map_err(|e| Error::Checkpoint {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if file.schema != INDEX_SCHEMA {
        return Err(Error::Checkpoint {
            path: path.display().to_string(),
            detail: format!("unknown schema `{}`", file.schema),
        });
    }
    Ok(file.index)
}
