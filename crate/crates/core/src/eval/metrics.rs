use crate::error::{Error, Result};
use crate::la::{dot, norm};

/// Full rankings of the references for each query, with relevance flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    /// Reference indices by descending similarity; ties go to the lower index.
    pub rankings: Vec<Vec<usize>>,
    /// `relevance[q][r]` is true when reference `rankings[q][r]` is a positive.
    pub relevance: Vec<Vec<bool>>,
    /// Positive count per query.
    pub positives: Vec<usize>,
}

/// Cosine similarity, treating a zero vector as dissimilar to everything.
pub fn cosine_or_zero(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        (dot(a, b) / d).clamp(-1.0, 1.0)
    }
}

/// Ranks references for each query by cosine similarity.
pub fn retrieve<Q: AsRef<[f64]>, R: AsRef<[f64]>>(
    queries: &[Q],
    query_labels: &[u32],
    references: &[R],
    reference_labels: &[u32],
) -> Result<RetrievalResult> {
    if queries.len() != query_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: queries.len(),
            found: query_labels.len(),
        });
    }
    if references.len() != reference_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: references.len(),
            found: reference_labels.len(),
        });
    }
    let dim = references.first().map_or(0, |r| r.as_ref().len());
    for v in queries
        .iter()
        .map(AsRef::as_ref)
        .chain(references.iter().map(AsRef::as_ref))
    {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
    }
    let ref_norms: Vec<f64> = references.iter().map(|r| norm(r.as_ref())).collect();
    let mut out = RetrievalResult {
        rankings: Vec::with_capacity(queries.len()),
        relevance: Vec::with_capacity(queries.len()),
        positives: Vec::with_capacity(queries.len()),
    };
    for (q, &ql) in queries.iter().zip(query_labels) {
        let q = q.as_ref();
        let qn = norm(q);
        let sims: Vec<f64> = references
            .iter()
            .zip(&ref_norms)
            .map(|(r, &rn)| {
                let d = qn * rn;
                if d == 0.0 {
                    0.0
                } else {
                    dot(q, r.as_ref()) / d
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..references.len()).collect();
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
        out.relevance
            .push(order.iter().map(|&i| reference_labels[i] == ql).collect());
        out.positives
            .push(reference_labels.iter().filter(|&&l| l == ql).count());
        out.rankings.push(order);
    }
    Ok(out)
}

fn check(results: &RetrievalResult, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if results.rankings.is_empty() {
        return Err(Error::invalid("no queries to score"));
    }
    if let Some(q) = results.positives.iter().position(|&p| p == 0) {
        return Err(Error::NoPositives(q));
    }
    Ok(())
}

/// Mean over queries of `(1 / min(R, k)) * sum_{i<=k} precision(i) * rel(i)`.
pub fn map_at_k(results: &RetrievalResult, k: usize) -> Result<f64> {
    check(results, k)?;
    let mut total = 0.0;
    for (rel, &r) in results.relevance.iter().zip(&results.positives) {
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (i, &is_pos) in rel.iter().take(k).enumerate() {
            if is_pos {
                hits += 1;
                ap += hits as f64 / (i + 1) as f64;
            }
        }
        total += ap / r.min(k) as f64;
    }
    Ok(total / results.relevance.len() as f64)
}

/// Fraction of queries with a positive in the top `k`.
pub fn recall_at_k(results: &RetrievalResult, k: usize) -> Result<f64> {
    check(results, k)?;
    let found = results
        .relevance
        .iter()
        .filter(|rel| rel.iter().take(k).any(|&p| p))
        .count();
    Ok(found as f64 / results.relevance.len() as f64)
}
