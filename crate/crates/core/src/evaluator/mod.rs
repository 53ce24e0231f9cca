//! Level-blind retrieval evaluation.
//!
//! Every sample is a query against all other samples. One ranking is built
//! per query from embedding similarity alone; each scale then scores that
//! same ranking with its own relevance labels.

mod report;

pub use report::{report_csv, write_report_csv, write_report_json, ReportMeta, REPORT_SCHEMA};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DymlError, Result};
use crate::geometry::dot;
use crate::taxonomy::Taxonomy;

/// Ranks at which CMC is reported.
pub const CMC_RANKS: [usize; 3] = [1, 10, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Equal similarities are ordered by ascending gallery id.
    AscendingId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingList {
    pub query: usize,
    /// Gallery ids by descending similarity.
    pub order: Vec<usize>,
    pub tie_break: TieBreak,
}

/// Gallery indices sorted by descending similarity, ties by ascending index.
/// `0.0` and `-0.0` count as equal.
pub fn rank_similarities(sims: &[f64]) -> Vec<usize> {
    let key = |i: usize| sims[i] + 0.0;
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)));
    order
}

/// Ranks a gallery against one query embedding.
pub fn rank<E: AsRef<[f64]>>(query: &[f64], gallery: &[E]) -> Result<Vec<usize>> {
    if gallery.is_empty() {
        return Err(DymlError::EmptyGallery);
    }
    let sims = gallery
        .iter()
        .map(|g| {
            let g = g.as_ref();
            if g.len() != query.len() {
                return Err(DymlError::DimensionMismatch { expected: query.len(), got: g.len() });
            }
            Ok(dot(query, g))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_similarities(&sims))
}

/// One ranking per sample against every other sample, in query order.
pub fn rank_all<E: AsRef<[f64]> + Sync>(embeddings: &[E]) -> Result<Vec<RankingList>> {
    if embeddings.len() < 2 {
        return Err(if embeddings.is_empty() { DymlError::EmptyDataset } else { DymlError::EmptyGallery });
    }
    let d = embeddings[0].as_ref().len();
    if let Some(bad) = embeddings.iter().find(|e| e.as_ref().len() != d) {
        return Err(DymlError::DimensionMismatch { expected: d, got: bad.as_ref().len() });
    }
    Ok((0..embeddings.len())
        .into_par_iter()
        .map(|q| {
            let query = embeddings[q].as_ref();
            let mut sims: Vec<f64> = embeddings.iter().map(|g| dot(query, g.as_ref())).collect();
            sims[q] = f64::NEG_INFINITY;
            let mut order = rank_similarities(&sims);
            order.retain(|&g| g != q);
            RankingList { query: q, order, tie_break: TieBreak::AscendingId }
        })
        .collect())
}

/// CMC values at the given ranks, or `None` when the ranking holds no
/// positive.
pub fn query_cmc(relevant: &[bool], ranks: &[usize]) -> Option<Vec<f64>> {
    let first = relevant.iter().position(|&r| r)?;
    Some(ranks.iter().map(|&k| if first < k { 1.0 } else { 0.0 }).collect())
}

/// Average precision of one relevance vector, or `None` without positives.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &rel) in relevant.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Mean score over queries that have at least one positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate<T> {
    pub value: T,
    pub queries: usize,
    pub skipped: usize,
}

fn relevance(ranking: &RankingList, relevant: &dyn Fn(usize, usize) -> bool) -> Vec<bool> {
    ranking.order.iter().map(|&g| relevant(ranking.query, g)).collect()
}

/// CMC curve at `ranks`; `relevant(query, gallery)` decides positives.
pub fn cmc(rankings: &[RankingList], relevant: &dyn Fn(usize, usize) -> bool, ranks: &[usize]) -> Aggregate<Vec<f64>> {
    let mut sum = vec![0.0; ranks.len()];
    let mut queries = 0;
    for r in rankings {
        if let Some(v) = query_cmc(&relevance(r, relevant), ranks) {
            queries += 1;
            sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        }
    }
    let value = sum.into_iter().map(|s| s / queries as f64).collect();
    Aggregate { value, queries, skipped: rankings.len() - queries }
}

pub fn mean_ap(rankings: &[RankingList], relevant: &dyn Fn(usize, usize) -> bool) -> Aggregate<f64> {
    let mut sum = 0.0;
    let mut queries = 0;
    for r in rankings {
        if let Some(ap) = average_precision(&relevance(r, relevant)) {
            queries += 1;
            sum += ap;
        }
    }
    Aggregate { value: sum / queries as f64, queries, skipped: rankings.len() - queries }
}

fn check_permutations(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(DymlError::NotPermutations(format!("lengths {} and {}", a.len(), b.len())));
    }
    let (mut sa, mut sb) = (a.to_vec(), b.to_vec());
    sa.sort_unstable();
    sb.sort_unstable();
    if sa.windows(2).any(|w| w[0] == w[1]) {
        return Err(DymlError::NotPermutations("repeated id".into()));
    }
    if sa != sb {
        return Err(DymlError::NotPermutations("lists hold different ids".into()));
    }
    Ok(())
}

/// `|head_k(a) ∩ head_k(b)| / k`.
pub fn set_intersection(a: &[usize], b: &[usize], k: usize) -> Result<f64> {
    check_permutations(a, b)?;
    if k == 0 || k > a.len() {
        return Err(DymlError::DepthOutOfRange { depth: k, len: a.len() });
    }
    let head: std::collections::HashSet<usize> = a[..k].iter().copied().collect();
    Ok(b[..k].iter().filter(|x| head.contains(x)).count() as f64 / k as f64)
}

/// Mean of `SI(k)` over every depth `k = 1..=N`.
pub fn asi(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    check_permutations(predicted, truth)?;
    if predicted.is_empty() {
        return Err(DymlError::DepthOutOfRange { depth: 1, len: 0 });
    }
    Ok(asi_unchecked(predicted, truth))
}

/// Single pass over both lists; assumes they are permutations of one set.
fn asi_unchecked(a: &[usize], b: &[usize]) -> f64 {
    let size = a.iter().copied().max().map_or(0, |m| m + 1);
    let (mut seen_a, mut seen_b) = (vec![false; size], vec![false; size]);
    let mut common = 0usize;
    let mut total = 0.0;
    for (k, (&x, &y)) in a.iter().zip(b).enumerate() {
        if x == y {
            common += 1;
        } else {
            common += seen_b[x] as usize + seen_a[y] as usize;
        }
        seen_a[x] = true;
        seen_b[y] = true;
        total += common as f64 / (k + 1) as f64;
    }
    total / a.len() as f64
}

/// Relevance tier of a gallery item: the finest scale at which it shares
/// the query's label, or `M` when it shares none.
pub fn relevance_tier(query: &[usize], item: &[usize]) -> usize {
    query.iter().zip(item).position(|(q, g)| q == g).unwrap_or(query.len())
}

/// Label-determined ranking for a query: gallery ids by relevance tier,
/// ascending id within a tier.
pub fn ground_truth_ranking(query: usize, chains: &[Vec<usize>]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..chains.len()).filter(|&g| g != query).collect();
    ids.sort_by_key(|&g| (relevance_tier(&chains[query], &chains[g]), g));
    ids
}

/// The ranking's own order stably sorted by relevance tier: the ideal list
/// that agrees with the prediction inside every tier. ASI against it only
/// penalizes items ranked out of tier order.
pub fn tiered_truth(ranking: &RankingList, chains: &[Vec<usize>]) -> Vec<usize> {
    let mut ids = ranking.order.clone();
    ids.sort_by_key(|&g| relevance_tier(&chains[ranking.query], &chains[g]));
    ids
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub scale: usize,
    pub ranks: Vec<usize>,
    /// CMC at `ranks`; NaN when no query has a positive.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub queries: usize,
    /// Queries without any positive at this scale.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallReport {
    pub scales: Vec<ScaleReport>,
    pub ranks: Vec<usize>,
    /// Mean of the per-scale CMC values.
    pub cmc: Vec<f64>,
    /// Mean of the per-scale mAP values.
    pub map: f64,
    /// Per-query ASI against the tier-sorted ranking, averaged over queries.
    pub asi: f64,
    pub num_queries: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ReportMeta>,
}

impl OverallReport {
    /// CMC value at rank `k` averaged over scales, if `k` was evaluated.
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ranks.iter().position(|&r| r == k).map(|i| self.cmc[i])
    }
}

impl ScaleReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ranks.iter().position(|&r| r == k).map(|i| self.cmc[i])
    }
}

/// Evaluates embeddings with the default CMC ranks.
pub fn evaluate<E: AsRef<[f64]> + Sync>(
    embeddings: &[E],
    chains: &[Vec<usize>],
    taxonomy: &Taxonomy,
) -> Result<OverallReport> {
    evaluate_at(embeddings, chains, taxonomy, &CMC_RANKS)
}

pub fn evaluate_at<E: AsRef<[f64]> + Sync>(
    embeddings: &[E],
    chains: &[Vec<usize>],
    taxonomy: &Taxonomy,
    ranks: &[usize],
) -> Result<OverallReport> {
    if embeddings.is_empty() {
        return Err(DymlError::EmptyDataset);
    }
    if chains.len() != embeddings.len() {
        return Err(DymlError::DimensionMismatch { expected: embeddings.len(), got: chains.len() });
    }
    for c in chains {
        taxonomy.validate_chain(c)?;
    }
    let rankings = rank_all(embeddings)?;
    evaluate_rankings(&rankings, chains, ranks)
}

/// Scores fixed rankings at every scale.
pub fn evaluate_rankings(rankings: &[RankingList], chains: &[Vec<usize>], ranks: &[usize]) -> Result<OverallReport> {
    if rankings.is_empty() {
        return Err(DymlError::EmptyDataset);
    }
    let m = chains[0].len();
    let scales: Vec<ScaleReport> = (0..m)
        .map(|s| {
            let relevant = |q: usize, g: usize| chains[q][s] == chains[g][s];
            let c = cmc(rankings, &relevant, ranks);
            let ap = mean_ap(rankings, &relevant);
            ScaleReport {
                scale: s,
                ranks: ranks.to_vec(),
                cmc: c.value,
                map: ap.value,
                queries: c.queries,
                skipped: c.skipped,
            }
        })
        .collect();
    let per_query: Vec<f64> = rankings.par_iter().map(|r| asi_unchecked(&r.order, &tiered_truth(r, chains))).collect();
    let asi = per_query.iter().sum::<f64>() / per_query.len() as f64;
    let cmc = (0..ranks.len()).map(|k| scales.iter().map(|s| s.cmc[k]).sum::<f64>() / m as f64).collect();
    let map = scales.iter().map(|s| s.map).sum::<f64>() / m as f64;
    Ok(OverallReport { scales, ranks: ranks.to_vec(), cmc, map, asi, num_queries: rankings.len(), meta: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    /// NaN when no pair is accepted.
    pub precision: f64,
    pub recall: f64,
    pub accepted: usize,
    pub true_positives: usize,
}

/// Pairwise precision and recall of "similar iff cosine >= threshold" at
/// one scale, over all unordered pairs.
pub fn threshold_sweep<E: AsRef<[f64]>>(
    embeddings: &[E],
    chains: &[Vec<usize>],
    scale: usize,
    thresholds: &[f64],
) -> Result<Vec<SweepRow>> {
    if chains.len() != embeddings.len() {
        return Err(DymlError::DimensionMismatch { expected: embeddings.len(), got: chains.len() });
    }
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            let s = dot(embeddings[i].as_ref(), embeddings[j].as_ref());
            if chains[i][scale] == chains[j][scale] {
                pos.push(s);
            } else {
                neg.push(s);
            }
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(DymlError::DegenerateScale(format!(
            "scale {scale} has {} positive and {} negative pairs",
            pos.len(),
            neg.len()
        )));
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let at_least = |v: &[f64], t: f64| v.len() - v.partition_point(|&x| x < t);
    Ok(thresholds
        .iter()
        .map(|&t| {
            let tp = at_least(&pos, t);
            let accepted = tp + at_least(&neg, t);
            SweepRow {
                threshold: t,
                precision: if accepted == 0 { f64::NAN } else { tp as f64 / accepted as f64 },
                recall: tp as f64 / pos.len() as f64,
                accepted,
                true_positives: tp,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ranking_examples() {
        assert_eq!(rank(&[1.0], &[vec![0.3]]).unwrap(), vec![0]);
        assert_eq!(rank_similarities(&[0.2, 0.9, 0.9]), vec![1, 2, 0]);
        assert_eq!(rank_similarities(&[-0.0, 0.0]), vec![0, 1]);
        assert_eq!(rank_similarities(&[0.0, -0.0]), vec![0, 1]);
        assert!(matches!(rank::<Vec<f64>>(&[1.0], &[]), Err(DymlError::EmptyGallery)));
    }

    #[test]
    fn cmc_examples() {
        let mut rel = vec![false; 12];
        rel[4] = true;
        assert_eq!(query_cmc(&rel, &[1, 10]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(query_cmc(&[false, false], &[1]), None);
    }

    #[test]
    fn ap_examples() {
        assert_abs_diff_eq!(average_precision(&[true, false, true]).unwrap(), (1.0 + 2.0 / 3.0) / 2.0, epsilon = 1e-15);
        assert_eq!(average_precision(&[true, true, false, false]).unwrap(), 1.0);
    }

    #[test]
    fn si_examples() {
        let (a, b) = ([1, 2, 3], [3, 2, 1]);
        assert_eq!(set_intersection(&a, &b, 1).unwrap(), 0.0);
        assert_eq!(set_intersection(&a, &b, 2).unwrap(), 0.5);
        assert_eq!(set_intersection(&a, &b, 3).unwrap(), 1.0);
        for k in 1..=3 {
            assert_eq!(set_intersection(&a, &a, k).unwrap(), 1.0);
        }
        assert!(matches!(set_intersection(&a, &b, 0), Err(DymlError::DepthOutOfRange { .. })));
        assert!(matches!(set_intersection(&a, &b, 4), Err(DymlError::DepthOutOfRange { .. })));
        assert!(matches!(set_intersection(&a, &[1, 2, 4], 1), Err(DymlError::NotPermutations(_))));
        assert!(matches!(set_intersection(&[1, 1], &[1, 1], 1), Err(DymlError::NotPermutations(_))));
    }

    #[test]
    fn asi_examples() {
        assert_eq!(asi(&[1, 2], &[2, 1]).unwrap(), 0.5);
        assert_eq!(asi(&[4, 0, 9], &[4, 0, 9]).unwrap(), 1.0);
        let v = asi(&[1, 2, 3], &[3, 2, 1]).unwrap();
        assert_abs_diff_eq!(v, (0.0 + 0.5 + 1.0) / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn tiered_ground_truth() {
        let chains = vec![vec![0, 0, 0], vec![2, 1, 0], vec![0, 0, 0], vec![3, 1, 1], vec![1, 0, 0]];
        assert_eq!(ground_truth_ranking(0, &chains), vec![2, 4, 1, 3]);
        let mut chains = chains;
        chains.push(vec![0, 0, 0]);
        assert_eq!(ground_truth_ranking(0, &chains), vec![2, 5, 4, 1, 3]);
        let r = RankingList { query: 0, order: vec![5, 3, 4, 1, 2], tie_break: TieBreak::AscendingId };
        assert_eq!(tiered_truth(&r, &chains), vec![5, 2, 4, 1, 3]);
    }

    #[test]
    fn single_fine_class_is_perfect() {
        let t = Taxonomy::new(vec![1, 1], vec![vec![0]]).unwrap();
        let emb = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        let chains = vec![vec![0, 0]; 3];
        let r = evaluate(&emb, &chains, &t).unwrap();
        for s in &r.scales {
            assert!(s.cmc.iter().all(|&c| c == 1.0));
            assert_eq!(s.map, 1.0);
        }
        assert_eq!(r.asi, 1.0);
    }

    #[test]
    fn separated_classes_are_perfect() {
        let t = Taxonomy::new(vec![2, 2], vec![vec![0, 1]]).unwrap();
        let emb = vec![vec![1.0, 0.0], vec![0.99, 0.141], vec![0.0, 1.0], vec![0.141, 0.99]];
        let chains = vec![vec![0, 0], vec![0, 0], vec![1, 1], vec![1, 1]];
        let r = evaluate(&emb, &chains, &t).unwrap();
        assert_eq!(r.cmc, vec![1.0, 1.0, 1.0]);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn sweep_extremes() {
        let emb = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        let chains = vec![vec![0], vec![0], vec![1]];
        let rows = threshold_sweep(&emb, &chains, 0, &[-1.0, 1.5]).unwrap();
        assert_eq!(rows[0].recall, 1.0);
        assert_eq!(rows[1].recall, 0.0);
        assert!(rows[1].precision.is_nan());
        let same = vec![vec![0], vec![0], vec![0]];
        assert!(matches!(threshold_sweep(&emb, &same, 0, &[0.0]), Err(DymlError::DegenerateScale(_))));
    }
}
