//! Sample-querying strategies: greedy maximum set-cover, ordinal ranking,
//! Borda-count combination, and the dispatcher over all strategy variants.
//!
//! Two-step ("-") variants filter the `n_unc` most uncertain samples and cull
//! them to `n_rep` by set cover; ranking ("+") variants combine uncertainty
//! and representativeness ranks over the whole pool. All tie-breaks go to the
//! smaller sample id, so selection is bit-reproducible.

use crate::affinity::AffinityMatrix;
use crate::error::{Error, Result};
use crate::inference::Descriptor;
use crate::rng;
use crate::synthdata::SampleId;
use crate::tensor::Tensor;
use rand::Rng;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use std::collections::BTreeMap;

/// Which representativeness signal a strategy compares samples with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepMetric {
    /// Cosine similarity of spatially pooled descriptors.
    ImageDescriptor,
    /// Transformed content distance between abstraction responses.
    ContentDistance,
    /// Content distance of a model trained with the entropy regularizer.
    EntropyContentDistance,
}

/// Strategy variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    /// Uniform random batch.
    Rand,
    /// Top uncertainty only.
    Unc,
    /// Uncertainty filter, then greedy set cover.
    TwoStep(RepMetric),
    /// Borda-combined uncertainty and representativeness ranks.
    Ranked(RepMetric),
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Rand => "RAND",
            StrategyKind::Unc => "UNC",
            StrategyKind::TwoStep(RepMetric::ImageDescriptor) => "UNC-ID",
            StrategyKind::TwoStep(RepMetric::ContentDistance) => "UNC-CD",
            StrategyKind::TwoStep(RepMetric::EntropyContentDistance) => "UNC-ECD",
            StrategyKind::Ranked(RepMetric::ImageDescriptor) => "UNC+ID",
            StrategyKind::Ranked(RepMetric::ContentDistance) => "UNC+CD",
            StrategyKind::Ranked(RepMetric::EntropyContentDistance) => "UNC+ECD",
        }
    }

    pub fn parse(s: &str) -> Result<StrategyKind> {
        match s.to_ascii_uppercase().as_str() {
            "RAND" => Ok(StrategyKind::Rand),
            "UNC" => Ok(StrategyKind::Unc),
            "UNC-ID" => Ok(StrategyKind::TwoStep(RepMetric::ImageDescriptor)),
            "UNC-CD" => Ok(StrategyKind::TwoStep(RepMetric::ContentDistance)),
            "UNC-ECD" => Ok(StrategyKind::TwoStep(RepMetric::EntropyContentDistance)),
            "UNC+ID" => Ok(StrategyKind::Ranked(RepMetric::ImageDescriptor)),
            "UNC+CD" => Ok(StrategyKind::Ranked(RepMetric::ContentDistance)),
            "UNC+ECD" => Ok(StrategyKind::Ranked(RepMetric::EntropyContentDistance)),
            other => Err(Error::config(format!("unknown strategy {:?}", other))),
        }
    }

    pub fn rep_metric(&self) -> Option<RepMetric> {
        match self {
            StrategyKind::TwoStep(m) | StrategyKind::Ranked(m) => Some(*m),
            _ => None,
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for StrategyKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

/// A fully specified querying strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Strategy {
    pub kind: StrategyKind,
    /// Uncertainty pre-filter size for two-step variants.
    pub n_unc: usize,
    /// Batch size queried per step.
    pub n_rep: usize,
}

impl Serialize for Strategy {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("Strategy", 3)?;
        s.serialize_field("kind", &self.kind)?;
        s.serialize_field("n_unc", &self.n_unc)?;
        s.serialize_field("n_rep", &self.n_rep)?;
        s.end()
    }
}

impl Strategy {
    /// Check the strategy against the entropy-regularizer weight the scoring
    /// model was trained with: ECD variants require lambda > 0, ID/CD
    /// variants require lambda = 0.
    pub fn check_lambda(&self, trained_lambda: f64) -> Result<()> {
        match self.kind.rep_metric() {
            Some(RepMetric::EntropyContentDistance) if trained_lambda <= 0.0 => {
                Err(Error::config(format!(
                    "{} requires a model trained with lambda > 0",
                    self.kind
                )))
            }
            Some(RepMetric::ImageDescriptor) | Some(RepMetric::ContentDistance)
                if trained_lambda != 0.0 =>
            {
                Err(Error::config(format!(
                    "{} requires a model trained with lambda = 0",
                    self.kind
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Sort direction for [`rank`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

/// 0-based ordinal ranks (0 = best); ties resolve to the lower index.
pub fn rank(scores: &[f64], direction: Direction) -> Result<Vec<usize>> {
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::input("NaN score in rank input"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let cmp = scores[a].partial_cmp(&scores[b]).expect("no NaN");
        match direction {
            Direction::HigherIsBetter => cmp.reverse(),
            Direction::LowerIsBetter => cmp,
        }
        .then(a.cmp(&b))
    });
    let mut ranks = vec![0usize; scores.len()];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = pos;
    }
    Ok(ranks)
}

/// Greedy maximum set-cover over the pool: repeatedly add the candidate with
/// the largest marginal gain in `sum_j max_{i in S} sim(i, j)`; ties go to
/// the smallest sample id. Returns the selection order.
pub fn greedy_max_cover(
    candidates: &[SampleId],
    affinity: &AffinityMatrix,
    k: usize,
) -> Result<Vec<SampleId>> {
    if candidates.is_empty() && k > 0 {
        return Err(Error::input("empty candidate set with k > 0"));
    }
    if k > candidates.len() {
        return Err(Error::input(format!(
            "k = {} exceeds {} candidates",
            k,
            candidates.len()
        )));
    }
    // Scan candidates in ascending id order so equal gains resolve to the
    // smallest id.
    let mut by_id: Vec<SampleId> = candidates.to_vec();
    by_id.sort_unstable();
    let row_idx: Vec<usize> = by_id
        .iter()
        .map(|&id| {
            affinity
                .row_index(id)
                .ok_or_else(|| Error::input(format!("candidate {} missing from affinity", id)))
        })
        .collect::<Result<_>>()?;

    let n_pool = affinity.cols().len();
    let mut best = vec![0.0f64; n_pool];
    let mut taken = vec![false; by_id.len()];
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best_gain = f64::NEG_INFINITY;
        let mut best_ci = usize::MAX;
        for (ci, &ri) in row_idx.iter().enumerate() {
            if taken[ci] {
                continue;
            }
            let row = affinity.row(ri);
            let mut gain = 0.0f64;
            for (j, &sim) in row.iter().enumerate() {
                if sim > best[j] {
                    gain += sim - best[j];
                }
            }
            if gain > best_gain {
                best_gain = gain;
                best_ci = ci;
            }
        }
        taken[best_ci] = true;
        picked.push(by_id[best_ci]);
        let row = affinity.row(row_idx[best_ci]);
        for (b, &sim) in best.iter_mut().zip(row) {
            if sim > *b {
                *b = sim;
            }
        }
    }
    Ok(picked)
}

/// Combined-rank selection: sum the per-metric ranks elementwise and return
/// the `k` candidates with the smallest sums, in ascending combined-rank
/// order; ties go to the lower index.
pub fn borda_select(
    ids: &[SampleId],
    metric_ranks: &[Vec<usize>],
    k: usize,
) -> Result<Vec<SampleId>> {
    if metric_ranks.is_empty() {
        return Err(Error::input("no metric ranks given"));
    }
    for r in metric_ranks {
        if r.len() != ids.len() {
            return Err(Error::shape(format!(
                "rank vector length {} != candidate count {}",
                r.len(),
                ids.len()
            )));
        }
    }
    if k > ids.len() {
        return Err(Error::input(format!(
            "k = {} exceeds {} candidates",
            k,
            ids.len()
        )));
    }
    let sums: Vec<usize> = (0..ids.len())
        .map(|i| metric_ranks.iter().map(|r| r[i]).sum())
        .collect();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| sums[a].cmp(&sums[b]).then(a.cmp(&b)));
    Ok(order[..k].iter().map(|&i| ids[i]).collect())
}

/// Total pool coverage of each candidate alone: the row sum of its
/// similarities. Higher is more representative.
pub fn representativeness_scores(
    candidates: &[SampleId],
    affinity: &AffinityMatrix,
) -> Result<Vec<f64>> {
    candidates
        .iter()
        .map(|&id| {
            let ri = affinity
                .row_index(id)
                .ok_or_else(|| Error::input(format!("candidate {} missing from affinity", id)))?;
            Ok(affinity.row(ri).iter().sum())
        })
        .collect()
}

/// Per-sample features the representativeness metrics draw on.
#[derive(Debug, Clone, Default)]
pub struct PoolFeatures {
    pub descriptors: BTreeMap<SampleId, Descriptor>,
    pub responses: BTreeMap<SampleId, Tensor>,
}

impl PoolFeatures {
    fn descriptor_matrix(&self, rows: &[SampleId], cols: &[SampleId]) -> Result<AffinityMatrix> {
        let fetch = |ids: &[SampleId]| -> Result<Vec<&Descriptor>> {
            ids.iter()
                .map(|id| {
                    self.descriptors
                        .get(id)
                        .ok_or_else(|| Error::input(format!("missing descriptor for sample {}", id)))
                })
                .collect()
        };
        AffinityMatrix::from_descriptors(&fetch(rows)?, &fetch(cols)?)
    }

    fn response_matrix(&self, rows: &[SampleId], cols: &[SampleId]) -> Result<AffinityMatrix> {
        let fetch = |ids: &[SampleId]| -> Result<Vec<(SampleId, &Tensor)>> {
            ids.iter()
                .map(|id| {
                    self.responses
                        .get(id)
                        .map(|t| (*id, t))
                        .ok_or_else(|| Error::input(format!("missing response for sample {}", id)))
                })
                .collect()
        };
        AffinityMatrix::from_responses(&fetch(rows)?, &fetch(cols)?)
    }

    fn matrix(
        &self,
        metric: RepMetric,
        rows: &[SampleId],
        cols: &[SampleId],
    ) -> Result<AffinityMatrix> {
        match metric {
            RepMetric::ImageDescriptor => self.descriptor_matrix(rows, cols),
            RepMetric::ContentDistance | RepMetric::EntropyContentDistance => {
                self.response_matrix(rows, cols)
            }
        }
    }
}

/// Per-sample diagnostics attached to a query batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryDiagnostics {
    pub uncertainty: f64,
    pub uncertainty_rank: usize,
    pub representativeness: Option<f64>,
    pub representativeness_rank: Option<usize>,
    pub combined_rank: Option<usize>,
}

/// The ids selected at one active-learning step, with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryBatch {
    pub ids: Vec<SampleId>,
    pub diagnostics: Vec<QueryDiagnostics>,
}

/// Select the next batch from the pool.
///
/// `pool` and `uncertainty` are parallel, with `pool` in ascending id order.
/// Only RAND consumes `seed`. `trained_lambda` is the entropy weight the
/// scoring model was trained with, checked against the strategy invariant.
pub fn query(
    strategy: &Strategy,
    pool: &[SampleId],
    uncertainty: &[f64],
    features: &PoolFeatures,
    seed: u64,
    trained_lambda: f64,
) -> Result<QueryBatch> {
    if pool.is_empty() {
        return Err(Error::input("pool must be non-empty"));
    }
    if pool.len() != uncertainty.len() {
        return Err(Error::shape("pool and uncertainty lengths differ"));
    }
    if pool.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input("pool ids must be strictly ascending"));
    }
    strategy.check_lambda(trained_lambda)?;
    if strategy.n_rep == 0 {
        return Err(Error::config("n_rep must be positive"));
    }

    let n = pool.len();
    let n_rep = strategy.n_rep.min(n);
    let unc_ranks = rank(uncertainty, Direction::HigherIsBetter)?;
    let index_of = |id: SampleId| pool.binary_search(&id).expect("selected from pool");

    let plain_diag = |id: SampleId| {
        let i = index_of(id);
        QueryDiagnostics {
            uncertainty: uncertainty[i],
            uncertainty_rank: unc_ranks[i],
            representativeness: None,
            representativeness_rank: None,
            combined_rank: None,
        }
    };

    let ids: Vec<SampleId>;
    let mut diagnostics: Vec<QueryDiagnostics> = Vec::new();
    match strategy.kind {
        StrategyKind::Rand => {
            let mut r = rng::seeded_rng(seed);
            let mut shuffled = pool.to_vec();
            for i in 0..n_rep {
                let j = r.gen_range(i..n);
                shuffled.swap(i, j);
            }
            ids = shuffled[..n_rep].to_vec();
            diagnostics.extend(ids.iter().map(|&id| plain_diag(id)));
        }
        StrategyKind::Unc => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| unc_ranks[i]);
            ids = order[..n_rep].iter().map(|&i| pool[i]).collect();
            diagnostics.extend(ids.iter().map(|&id| plain_diag(id)));
        }
        StrategyKind::TwoStep(metric) => {
            if strategy.n_rep > strategy.n_unc {
                return Err(Error::config(format!(
                    "n_rep ({}) exceeds n_unc ({})",
                    strategy.n_rep, strategy.n_unc
                )));
            }
            let n_unc = strategy.n_unc.min(n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| unc_ranks[i]);
            let mut s_unc: Vec<SampleId> = order[..n_unc].iter().map(|&i| pool[i]).collect();
            s_unc.sort_unstable();
            let affinity = features.matrix(metric, &s_unc, pool)?;
            ids = greedy_max_cover(&s_unc, &affinity, n_rep.min(n_unc))?;
            let rep_scores = representativeness_scores(&s_unc, &affinity)?;
            let rep: BTreeMap<SampleId, f64> = s_unc.iter().copied().zip(rep_scores).collect();
            diagnostics.extend(ids.iter().map(|&id| QueryDiagnostics {
                representativeness: rep.get(&id).copied(),
                ..plain_diag(id)
            }));
        }
        StrategyKind::Ranked(metric) => {
            let affinity = features.matrix(metric, pool, pool)?;
            let rep_scores = representativeness_scores(pool, &affinity)?;
            let rep_ranks = rank(&rep_scores, Direction::HigherIsBetter)?;
            ids = borda_select(pool, &[unc_ranks.clone(), rep_ranks.clone()], n_rep)?;
            diagnostics.extend(ids.iter().map(|&id| {
                let i = index_of(id);
                QueryDiagnostics {
                    uncertainty: uncertainty[i],
                    uncertainty_rank: unc_ranks[i],
                    representativeness: Some(rep_scores[i]),
                    representativeness_rank: Some(rep_ranks[i]),
                    combined_rank: Some(unc_ranks[i] + rep_ranks[i]),
                }
            }));
        }
    }

    debug_assert_eq!(ids.len(), diagnostics.len());
    Ok(QueryBatch { ids, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn ids(v: &[u32]) -> Vec<SampleId> {
        v.iter().map(|&i| SampleId(i)).collect()
    }

    fn descriptor(id: u32, vec: Vec<f32>) -> Descriptor {
        Descriptor { sample_id: SampleId(id), vec }
    }

    #[test]
    fn rank_basic_and_ties() {
        let r = rank(&[0.9, 0.1, 0.5], Direction::HigherIsBetter).unwrap();
        assert_eq!(r, vec![0, 2, 1]);
        let r = rank(&[0.3, 0.3, 0.3], Direction::HigherIsBetter).unwrap();
        assert_eq!(r, vec![0, 1, 2]);
        assert!(rank(&[0.1, f64::NAN], Direction::HigherIsBetter).is_err());
    }

    #[test]
    fn rank_directions_agree_with_sort_oracle() {
        let mut r = rng::seeded_rng(3);
        for _ in 0..50 {
            use rand::Rng;
            let n = r.gen_range(1..30);
            let scores: Vec<f64> = (0..n).map(|_| r.gen_range(-5.0..5.0)).collect();
            let hi = rank(&scores, Direction::HigherIsBetter).unwrap();
            let lo = rank(&scores, Direction::LowerIsBetter).unwrap();
            // Sort-based oracle for the higher_is_better direction.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            for (pos, &i) in order.iter().enumerate() {
                assert_eq!(hi[i], pos);
            }
            // Negating scores swaps the direction exactly when there are no ties.
            let neg: Vec<f64> = scores.iter().map(|v| -v).collect();
            let lo_from_neg = rank(&neg, Direction::HigherIsBetter).unwrap();
            let distinct = {
                let mut s = scores.clone();
                s.sort_by(|a, b| a.partial_cmp(b).unwrap());
                s.windows(2).all(|w| w[0] != w[1])
            };
            if distinct {
                assert_eq!(lo, lo_from_neg);
            }
        }
    }

    #[test]
    fn borda_degenerate_single_metric() {
        let r = vec![vec![2usize, 0, 1, 3]];
        let got = borda_select(&ids(&[10, 11, 12, 13]), &r, 2).unwrap();
        assert_eq!(got, ids(&[11, 12]));
    }

    #[test]
    fn borda_tie_breaks_to_lower_index() {
        let ranks = vec![vec![0usize, 1, 2], vec![2usize, 1, 0]];
        let got = borda_select(&ids(&[5, 6, 7]), &ranks, 1).unwrap();
        assert_eq!(got, ids(&[5]));
    }

    #[test]
    fn borda_matches_brute_force() {
        use rand::Rng;
        let mut r = rng::seeded_rng(17);
        for _ in 0..1000 {
            let n = 50usize;
            let id_list = ids(&(0..n as u32).collect::<Vec<_>>());
            let m1: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
            let m2: Vec<f64> = (0..n).map(|_| (r.gen_range(0..10) as f64) / 10.0).collect();
            let r1 = rank(&m1, Direction::HigherIsBetter).unwrap();
            let r2 = rank(&m2, Direction::HigherIsBetter).unwrap();
            let got = borda_select(&id_list, &[r1.clone(), r2.clone()], 10).unwrap();
            // Brute force: sort indices by (rank sum, index).
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| (r1[i] + r2[i], i));
            let want: Vec<SampleId> = order[..10].iter().map(|&i| id_list[i]).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn borda_rejects_length_mismatch() {
        let ranks = vec![vec![0usize, 1], vec![0usize, 1, 2]];
        assert!(borda_select(&ids(&[1, 2]), &ranks, 1).is_err());
    }

    /// Unit descriptor at an angle; cosine similarity between two planar
    /// descriptors is the cosine of their angle difference.
    fn planar(id: u32, angle: f64) -> Descriptor {
        descriptor(id, vec![angle.cos() as f32, angle.sin() as f32])
    }

    #[test]
    fn greedy_returns_all_when_k_equals_candidates() {
        let d: Vec<Descriptor> = (0..3).map(|i| planar(i, 0.3 * f64::from(i))).collect();
        let refs: Vec<&Descriptor> = d.iter().collect();
        let m = AffinityMatrix::from_descriptors(&refs, &refs).unwrap();
        let got = greedy_max_cover(&ids(&[0, 1, 2]), &m, 3).unwrap();
        let mut sorted = got.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, ids(&[0, 1, 2]));
    }

    #[test]
    fn greedy_ties_break_to_smallest_id() {
        // Identity-like similarity: each candidate covers only itself.
        let a = descriptor(0, vec![1.0, 0.0]);
        let b = descriptor(1, vec![0.0, 1.0]);
        let m = AffinityMatrix::from_descriptors(&[&a, &b], &[&a, &b]).unwrap();
        let got = greedy_max_cover(&ids(&[0, 1]), &m, 1).unwrap();
        assert_eq!(got, ids(&[0]));
    }

    #[test]
    fn greedy_meets_submodular_bound_vs_exhaustive() {
        use rand::Rng;
        let mut r = rng::seeded_rng(23);
        for _trial in 0..100 {
            // 10 candidates x 20 pool random similarity matrices via planar
            // descriptors would constrain the geometry, so synthesize rows
            // from random responses instead: random scalars give
            // sim = 1/(1 + (a-b)^2), dense in (0,1].
            let cand_vals: Vec<f64> = (0..10).map(|_| r.gen_range(0.0..3.0)).collect();
            let pool_vals: Vec<f64> = (0..20).map(|_| r.gen_range(0.0..3.0)).collect();
            let cand_resp: Vec<(SampleId, Tensor)> = cand_vals
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    (
                        SampleId(i as u32),
                        Tensor::from_vec(&[1], vec![v as f32]).unwrap(),
                    )
                })
                .collect();
            let pool_resp: Vec<(SampleId, Tensor)> = pool_vals
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    (
                        SampleId(100 + i as u32),
                        Tensor::from_vec(&[1], vec![v as f32]).unwrap(),
                    )
                })
                .collect();
            let rows: Vec<(SampleId, &Tensor)> =
                cand_resp.iter().map(|(i, t)| (*i, t)).collect();
            let cols: Vec<(SampleId, &Tensor)> =
                pool_resp.iter().map(|(i, t)| (*i, t)).collect();
            let m = AffinityMatrix::from_responses(&rows, &cols).unwrap();
            let cand_ids: Vec<SampleId> = rows.iter().map(|(i, _)| *i).collect();

            let coverage = |sel: &[SampleId]| -> f64 {
                (0..20)
                    .map(|j| {
                        sel.iter()
                            .map(|id| m.row(m.row_index(*id).unwrap())[j])
                            .fold(0.0f64, f64::max)
                    })
                    .sum()
            };

            let greedy = greedy_max_cover(&cand_ids, &m, 3).unwrap();
            let greedy_cov = coverage(&greedy);

            let mut best = 0.0f64;
            for a in 0..10 {
                for b in a + 1..10 {
                    for c in b + 1..10 {
                        let cov = coverage(&[cand_ids[a], cand_ids[b], cand_ids[c]]);
                        if cov > best {
                            best = cov;
                        }
                    }
                }
            }
            let bound = (1.0 - (-1.0f64).exp()) * best;
            assert!(
                greedy_cov >= bound - 1e-9,
                "greedy {} below bound {} (optimum {})",
                greedy_cov,
                bound,
                best
            );
        }
    }

    #[test]
    fn greedy_marginal_gains_are_non_increasing() {
        use rand::Rng;
        let mut r = rng::seeded_rng(31);
        let cand_resp: Vec<(SampleId, Tensor)> = (0..8)
            .map(|i| {
                (
                    SampleId(i as u32),
                    Tensor::from_vec(&[2], vec![r.gen_range(0.0..2.0), r.gen_range(0.0..2.0)])
                        .unwrap(),
                )
            })
            .collect();
        let rows: Vec<(SampleId, &Tensor)> = cand_resp.iter().map(|(i, t)| (*i, t)).collect();
        let m = AffinityMatrix::from_responses(&rows, &rows).unwrap();
        let cand_ids: Vec<SampleId> = rows.iter().map(|(i, _)| *i).collect();
        let picked = greedy_max_cover(&cand_ids, &m, 8).unwrap();

        let coverage = |sel: &[SampleId]| -> f64 {
            (0..8)
                .map(|j| {
                    sel.iter()
                        .map(|id| m.row(m.row_index(*id).unwrap())[j])
                        .fold(0.0f64, f64::max)
                })
                .sum()
        };
        let mut gains = Vec::new();
        for i in 0..picked.len() {
            gains.push(coverage(&picked[..=i]) - coverage(&picked[..i]));
        }
        for w in gains.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "gains increased: {:?}", gains);
        }
    }

    #[test]
    fn greedy_rejects_empty_candidates() {
        let a = descriptor(0, vec![1.0]);
        let m = AffinityMatrix::from_descriptors(&[&a], &[&a]).unwrap();
        assert!(greedy_max_cover(&[], &m, 1).is_err());
    }

    #[test]
    fn representativeness_is_row_sums() {
        let a = descriptor(0, vec![1.0, 0.0]);
        let b = descriptor(1, vec![0.0, 1.0]);
        let c = descriptor(2, vec![1.0, 1.0]);
        let refs = [&a, &b, &c];
        let m = AffinityMatrix::from_descriptors(&refs[..2], &refs).unwrap();
        let scores = representativeness_scores(&ids(&[0, 1]), &m).unwrap();
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert!((scores[0] - (1.0 + 0.0 + inv_sqrt2)).abs() < 1e-7);
        assert!((scores[1] - (0.0 + 1.0 + inv_sqrt2)).abs() < 1e-7);
    }

    fn uniform_features(pool: &[SampleId]) -> PoolFeatures {
        let mut f = PoolFeatures::default();
        for (i, &id) in pool.iter().enumerate() {
            f.descriptors.insert(id, planar(id.0, 0.05 * i as f64));
            f.responses.insert(
                id,
                Tensor::from_vec(&[2], vec![i as f32 * 0.1, 1.0]).unwrap(),
            );
        }
        f
    }

    #[test]
    fn query_tiny_pool_returns_everything() {
        let pool = ids(&[3, 5, 9]);
        let unc = vec![0.3, 0.1, 0.2];
        let features = uniform_features(&pool);
        for (kind, lambda) in [
            (StrategyKind::Rand, 0.0),
            (StrategyKind::Unc, 0.0),
            (StrategyKind::TwoStep(RepMetric::ImageDescriptor), 0.0),
            (StrategyKind::Ranked(RepMetric::ContentDistance), 0.0),
            (StrategyKind::Ranked(RepMetric::EntropyContentDistance), 1e-6),
        ] {
            let strategy = Strategy { kind, n_unc: 5, n_rep: 3 };
            let batch = query(&strategy, &pool, &unc, &features, 7, lambda).unwrap();
            let mut got = batch.ids.clone();
            got.sort_unstable();
            assert_eq!(got, pool, "strategy {}", kind.name());
            assert_eq!(batch.diagnostics.len(), 3);
        }
    }

    #[test]
    fn query_unc_takes_top_uncertainty() {
        let pool = ids(&[0, 1, 2, 3]);
        let unc = vec![0.1, 0.9, 0.4, 0.9];
        let features = PoolFeatures::default();
        let strategy = Strategy { kind: StrategyKind::Unc, n_unc: 4, n_rep: 2 };
        let batch = query(&strategy, &pool, &unc, &features, 0, 0.0).unwrap();
        // Ties at 0.9 resolve to the lower index.
        assert_eq!(batch.ids, ids(&[1, 3]));
        assert_eq!(batch.diagnostics[0].uncertainty_rank, 0);
    }

    #[test]
    fn query_rand_is_seeded_and_seed_only() {
        let pool = ids(&[0, 1, 2, 3, 4, 5]);
        let unc = vec![0.0; 6];
        let features = PoolFeatures::default();
        let strategy = Strategy { kind: StrategyKind::Rand, n_unc: 6, n_rep: 3 };
        let a = query(&strategy, &pool, &unc, &features, 42, 0.0).unwrap();
        let b = query(&strategy, &pool, &unc, &features, 42, 0.0).unwrap();
        assert_eq!(a.ids, b.ids);
        let c = query(&strategy, &pool, &unc, &features, 43, 0.0).unwrap();
        // Distinct seeds eventually differ; with 6P3 = 120 orders a collision
        // is possible but not for this pinned pair.
        assert_ne!(a.ids, c.ids);
    }

    #[test]
    fn query_ranked_equals_unc_when_ranks_coincide() {
        let pool = ids(&[0, 1, 2, 3]);
        // Uncertainty strictly decreasing in index; identical descriptors tie
        // every representativeness score, so its ranks fall back to index
        // order and coincide with the uncertainty ranks.
        let unc = vec![0.9, 0.7, 0.5, 0.3];
        let mut features = PoolFeatures::default();
        for &id in &pool {
            features.descriptors.insert(id, planar(id.0, 0.25));
        }
        let rep = representativeness_scores(
            &pool,
            &features.descriptor_matrix(&pool, &pool).unwrap(),
        )
        .unwrap();
        let rep_ranks = rank(&rep, Direction::HigherIsBetter).unwrap();
        let unc_ranks = rank(&unc, Direction::HigherIsBetter).unwrap();
        assert_eq!(rep_ranks, unc_ranks, "fixture must have coinciding ranks");
        let ranked = Strategy {
            kind: StrategyKind::Ranked(RepMetric::ImageDescriptor),
            n_unc: 4,
            n_rep: 2,
        };
        let unc_only = Strategy { kind: StrategyKind::Unc, n_unc: 4, n_rep: 2 };
        let a = query(&ranked, &pool, &unc, &features, 0, 0.0).unwrap();
        let b = query(&unc_only, &pool, &unc, &features, 0, 0.0).unwrap();
        assert_eq!(a.ids, b.ids);
    }

    #[test]
    fn query_two_step_skips_duplicates() {
        // 12 pool samples in 4 duplicate clusters of 3; n_unc covers all,
        // n_rep = 3 <= cluster count, so set cover picks one per cluster.
        let pool = ids(&(0..12).collect::<Vec<_>>());
        let unc: Vec<f64> = (0..12).map(|i| 1.0 - 0.01 * i as f64).collect();
        let mut features = PoolFeatures::default();
        for &id in &pool {
            let cluster = id.0 % 4;
            features.responses.insert(
                id,
                Tensor::from_vec(&[2], vec![cluster as f32 * 10.0, 1.0]).unwrap(),
            );
        }
        let strategy = Strategy {
            kind: StrategyKind::TwoStep(RepMetric::ContentDistance),
            n_unc: 12,
            n_rep: 3,
        };
        let batch = query(&strategy, &pool, &unc, &features, 0, 0.0).unwrap();
        let clusters: Vec<u32> = batch.ids.iter().map(|id| id.0 % 4).collect();
        let mut unique = clusters.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), 3, "duplicate cluster selected: {:?}", batch.ids);
    }

    #[test]
    fn query_two_step_batch_is_subset_of_s_unc() {
        let pool = ids(&(0..20).collect::<Vec<_>>());
        let mut r = rng::seeded_rng(5);
        use rand::Rng;
        let unc: Vec<f64> = (0..20).map(|_| r.gen_range(0.0..0.25)).collect();
        let features = uniform_features(&pool);
        let strategy = Strategy {
            kind: StrategyKind::TwoStep(RepMetric::ImageDescriptor),
            n_unc: 8,
            n_rep: 4,
        };
        let batch = query(&strategy, &pool, &unc, &features, 0, 0.0).unwrap();
        assert_eq!(batch.ids.len(), 4);
        // S_unc = indices of the 8 best uncertainty ranks.
        let ranks = rank(&unc, Direction::HigherIsBetter).unwrap();
        for id in &batch.ids {
            let i = pool.iter().position(|p| p == id).unwrap();
            assert!(ranks[i] < 8, "{} not among the 8 most uncertain", id);
        }
    }

    #[test]
    fn query_lambda_mismatch_is_config_error() {
        let pool = ids(&[0, 1]);
        let unc = vec![0.1, 0.2];
        let features = uniform_features(&pool);
        let ecd = Strategy {
            kind: StrategyKind::Ranked(RepMetric::EntropyContentDistance),
            n_unc: 2,
            n_rep: 1,
        };
        assert!(matches!(
            query(&ecd, &pool, &unc, &features, 0, 0.0),
            Err(Error::Config(_))
        ));
        let id_strategy = Strategy {
            kind: StrategyKind::TwoStep(RepMetric::ImageDescriptor),
            n_unc: 2,
            n_rep: 1,
        };
        assert!(matches!(
            query(&id_strategy, &pool, &unc, &features, 0, 1e-6),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn monotone_transform_leaves_ranked_batches_unchanged() {
        use rand::Rng;
        let mut r = rng::seeded_rng(77);
        let pool = ids(&(0..15).collect::<Vec<_>>());
        let features = uniform_features(&pool);
        for _ in 0..50 {
            let unc: Vec<f64> = (0..15).map(|_| r.gen_range(0.0..0.25)).collect();
            let transformed: Vec<f64> = unc.iter().map(|&u| u * u * u + u).collect();
            for kind in [
                StrategyKind::Ranked(RepMetric::ImageDescriptor),
                StrategyKind::Ranked(RepMetric::ContentDistance),
                StrategyKind::Unc,
            ] {
                let strategy = Strategy { kind, n_unc: 10, n_rep: 5 };
                let a = query(&strategy, &pool, &unc, &features, 3, 0.0).unwrap();
                let b = query(&strategy, &pool, &transformed, &features, 3, 0.0).unwrap();
                assert_eq!(a.ids, b.ids, "strategy {}", kind.name());
            }
        }
    }
}
