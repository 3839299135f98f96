//! Cross-modality retrieval: cosine nearest-neighbor indices and the
//! standard rank-based quality measures (recall at k, median rank, mean
//! reciprocal rank), plus the class-based average precision used for
//! zero-shot settings and a canonical-correlation profile of trained tower
//! representations.

use crate::cca::cca_fit;
use crate::data::PairedDataset;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::net::DualNet;
use std::collections::HashSet;
use std::fmt;

/// Query direction for a paired dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    XToY,
    YToX,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::XToY => write!(f, "x2y"),
            Direction::YToX => write!(f, "y2x"),
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Direction> {
        match s {
            "x2y" => Ok(Direction::XToY),
            "y2x" => Ok(Direction::YToX),
            other => Err(Error::contract(format!(
                "unknown direction '{other}' (expected x2y or y2x)"
            ))),
        }
    }
}

/// Unit-normalized candidate embeddings with their ids. Immutable after
/// construction; concurrent queries are safe.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    embeddings: Mat,
    ids: Vec<u64>,
}

/// Normalize candidate rows and build an index. Candidate order is
/// preserved and breaks score ties.
pub fn build_index(embeddings: &Mat, ids: &[u64]) -> Result<RetrievalIndex> {
    if ids.len() != embeddings.rows() {
        return Err(Error::contract(format!(
            "build_index: {} ids for {} embeddings",
            ids.len(),
            embeddings.rows()
        )));
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(*id) {
            return Err(Error::contract(format!("duplicate candidate id {id}")));
        }
    }
    let mut normalized = embeddings.clone();
    for i in 0..normalized.rows() {
        let n = row_norm(normalized.row(i));
        if n == 0.0 {
            return Err(Error::UndefinedScore {
                view: format!("candidates (id {})", ids[i]),
                row: i,
            });
        }
        for v in normalized.row_mut(i) {
            *v /= n;
        }
    }
    Ok(RetrievalIndex {
        embeddings: normalized,
        ids: ids.to_vec(),
    })
}

impl RetrievalIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn embeddings(&self) -> &Mat {
        &self.embeddings
    }
}

fn row_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// 1-based rank of `target_id` among all candidates when ordered by
/// descending cosine score against `query`; ties are broken by candidate
/// insertion order.
pub fn rank_of(index: &RetrievalIndex, query: &[f64], target_id: u64) -> Result<usize> {
    if query.len() != index.embeddings.cols() {
        return Err(Error::contract(format!(
            "rank_of: query has {} dims, index has {}",
            query.len(),
            index.embeddings.cols()
        )));
    }
    let qn = row_norm(query);
    if qn == 0.0 {
        return Err(Error::UndefinedScore {
            view: "query".into(),
            row: 0,
        });
    }
    let target_pos = index
        .ids
        .iter()
        .position(|&id| id == target_id)
        .ok_or_else(|| Error::contract(format!("target id {target_id} not in index")))?;

    let score = |row: &[f64]| -> f64 {
        row.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / qn
    };
    let target_score = score(index.embeddings.row(target_pos));
    let mut rank = 1usize;
    for j in 0..index.len() {
        if j == target_pos {
            continue;
        }
        let s = score(index.embeddings.row(j));
        if s > target_score || (s == target_score && j < target_pos) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Rank of the true counterpart for every query in a paired embedding batch
/// (query `i` of `queries` against all rows of `candidates`, target row `i`).
pub fn paired_ranks(queries: &Mat, candidates: &Mat) -> Result<Vec<usize>> {
    if queries.shape() != candidates.shape() {
        return Err(Error::contract(format!(
            "paired_ranks: shapes {:?} and {:?} differ",
            queries.shape(),
            candidates.shape()
        )));
    }
    let n = queries.rows();
    let ids: Vec<u64> = (0..n as u64).collect();
    let index = build_index(candidates, &ids)?;
    let mut ranks = Vec::with_capacity(n);
    for i in 0..n {
        ranks.push(rank_of(&index, queries.row(i), i as u64)?);
    }
    Ok(ranks)
}

/// Mean reciprocal rank in percent.
pub fn mrr_percent(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    100.0 * ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

/// Retrieval quality measures for one query direction.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub direction: Direction,
    /// Recall at 1/5/10, in percent.
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    /// Median rank (lower median for even counts).
    pub mr: usize,
    /// Mean reciprocal rank, in percent.
    pub mrr: f64,
    pub n_queries: usize,
}

impl RetrievalReport {
    /// Aggregate rank positions into the report measures.
    pub fn from_ranks(direction: Direction, ranks: &[usize]) -> Result<RetrievalReport> {
        if ranks.is_empty() {
            return Err(Error::contract("no queries to aggregate"));
        }
        let n = ranks.len() as f64;
        let recall =
            |k: usize| -> f64 { 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n };
        let mut sorted = ranks.to_vec();
        sorted.sort_unstable();
        Ok(RetrievalReport {
            direction,
            r1: recall(1),
            r5: recall(5),
            r10: recall(10),
            mr: sorted[(sorted.len() - 1) / 2],
            mrr: mrr_percent(ranks),
            n_queries: ranks.len(),
        })
    }

    /// One delimited report line: direction, then R@1, R@5, R@10, MR, MRR.
    pub fn format_line(&self, model_label: &str) -> String {
        format!(
            "{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{}\t{:.2}",
            model_label, self.direction, self.r1, self.r5, self.r10, self.mr, self.mrr
        )
    }
}

/// Evaluate cross-modality retrieval of a trained model on a paired test
/// set: embed all candidates of the target modality, query with every sample
/// of the source modality, and aggregate the target ranks.
pub fn evaluate(model: &DualNet, test: &PairedDataset, direction: Direction) -> Result<RetrievalReport> {
    let (xe, ye) = model.embed(&test.x, &test.y)?;
    let ranks = match direction {
        Direction::XToY => paired_ranks(&xe, &ye)?,
        Direction::YToX => paired_ranks(&ye, &xe)?,
    };
    RetrievalReport::from_ranks(direction, &ranks)
}

/// Mean average precision at 50: for each query, the fraction of the top-50
/// scoring candidates whose class matches the query's, averaged per class
/// and then over classes. Returned in percent.
pub fn ap_at_50(
    query_emb: &Mat,
    query_classes: &[u32],
    cand_emb: &Mat,
    cand_classes: &[u32],
) -> Result<f64> {
    if query_classes.len() != query_emb.rows() || cand_classes.len() != cand_emb.rows() {
        return Err(Error::contract("class list lengths must match embeddings"));
    }
    if cand_emb.rows() < 50 {
        return Err(Error::contract(format!(
            "ap_at_50 needs at least 50 candidates, got {}",
            cand_emb.rows()
        )));
    }
    if query_emb.cols() != cand_emb.cols() {
        return Err(Error::contract("query and candidate dims differ"));
    }
    let cand_class_set: HashSet<u32> = cand_classes.iter().copied().collect();
    for qc in query_classes {
        if !cand_class_set.contains(qc) {
            return Err(Error::contract(format!(
                "query class {qc} has no candidates"
            )));
        }
    }

    let ids: Vec<u64> = (0..cand_emb.rows() as u64).collect();
    let index = build_index(cand_emb, &ids)?;

    // Per class: mean over its queries of (matching top-50 count) / 50.
    let mut classes: Vec<u32> = query_classes.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut per_class_sum = vec![0.0f64; classes.len()];
    let mut per_class_count = vec![0usize; classes.len()];
    for (qi, &qc) in query_classes.iter().enumerate() {
        let query = query_emb.row(qi);
        let qn = row_norm(query);
        if qn == 0.0 {
            return Err(Error::UndefinedScore {
                view: "queries".into(),
                row: qi,
            });
        }
        // Stable top-50 by descending score, insertion order on ties.
        let mut scored: Vec<(usize, f64)> = (0..index.len())
            .map(|j| {
                let s: f64 = index
                    .embeddings()
                    .row(j)
                    .iter()
                    .zip(query)
                    .map(|(a, b)| a * b)
                    .sum();
                (j, s)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores"));
        let hits = scored
            .iter()
            .take(50)
            .filter(|(j, _)| cand_classes[*j] == qc)
            .count();
        let slot = classes.binary_search(&qc).unwrap();
        per_class_sum[slot] += hits as f64 / 50.0;
        per_class_count[slot] += 1;
    }

    let mut total = 0.0;
    let mut n_classes = 0usize;
    for (slot, &count) in per_class_count.iter().enumerate() {
        if count > 0 {
            total += per_class_sum[slot] / count as f64;
            n_classes += 1;
        }
    }
    Ok(100.0 * total / n_classes as f64)
}

/// Canonical correlation coefficients of the topmost tower representations
/// on a paired batch, descending.
pub fn correlation_profile(
    model: &DualNet,
    x: &Mat,
    y: &Mat,
    reg: f64,
    k: usize,
) -> Result<Vec<f64>> {
    if x.rows() < k + 1 {
        return Err(Error::InsufficientSamples {
            needed: k + 1,
            got: x.rows(),
        });
    }
    let xf = crate::net::mlp_output(&model.tower_f, x)?;
    let yg = crate::net::mlp_output(&model.tower_g, y)?;
    Ok(cca_fit(&xf, &yg, reg, k)?.corr)
}
