//! Vision-side compression: dominant selection plus local cluster merging.
//!
//! 1. Score each token by the self-attention it receives (column sums).
//! 2. Keep the top `k1` tokens verbatim (dominant set `D`).
//! 3. From the residuals `R`, pick the top `k2` as centroids.
//! 4. Each centroid collects its `w` most-attended residuals (by its own
//!    attention row) and contributes their mean as one contextual token.
//! 5. Residuals claimed by no cluster are dropped.
//!
//! Clusters are formed independently, so a residual can belong to several
//! of them; [`ClusterMode::Disjoint`] gives a true partition instead.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{AttentionMap, Matrix, ScoreVector};
use crate::topk::{top_k, top_k_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterMode {
    /// Every centroid ranks the whole residual set; clusters may overlap.
    #[default]
    Overlapping,
    /// Centroids claim themselves first, then take up to `w - 1` members from
    /// residuals no earlier cluster has claimed.
    Disjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompressionConfig {
    /// Dominant tokens kept verbatim.
    pub k1: usize,
    /// Contextual (merged) tokens.
    pub k2: usize,
    /// Cluster width.
    pub w: usize,
    pub mode: ClusterMode,
}

impl CompressionConfig {
    pub fn new(k1: usize, k2: usize, w: usize) -> Self {
        CompressionConfig {
            k1,
            k2,
            w,
            mode: ClusterMode::Overlapping,
        }
    }

    pub fn with_mode(mut self, mode: ClusterMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn output_len(&self) -> usize {
        self.k1 + self.k2
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.w == 0 {
            return Err(Error::Config("cluster width w must be >= 1".into()));
        }
        match self.k1.checked_add(self.k2) {
            Some(total) if total <= n => Ok(()),
            _ => Err(Error::Config(format!(
                "k1 + k2 = {} + {} exceeds token count {n}",
                self.k1, self.k2
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionResult {
    /// Attention received by each input token.
    pub scores: ScoreVector,
    /// Best first.
    pub dominant_indices: Vec<usize>,
    /// Best first.
    pub centroid_indices: Vec<usize>,
    /// One list per centroid, in centroid order.
    pub cluster_members: Vec<Vec<usize>>,
    /// `k2 x d`.
    pub merged_tokens: Matrix,
    /// `(k1 + k2) x d`: dominant rows, then merged rows.
    pub output_tokens: Matrix,
    /// Residuals in no cluster, ascending.
    pub dropped_indices: Vec<usize>,
}

impl CompressionResult {
    /// Input token index each output row stands for: the token itself for
    /// dominant rows and the centroid for merged rows.
    pub fn source_indices(&self) -> Vec<usize> {
        self.dominant_indices
            .iter()
            .chain(&self.centroid_indices)
            .copied()
            .collect()
    }
}

/// Column sums of a square attention map.
pub fn attention_scores(a: &AttentionMap) -> Result<ScoreVector> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "vision attention must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let mut scores = alloc::vec![0.0; a.cols()];
    for j in 0..a.rows() {
        for (s, &v) in scores.iter_mut().zip(a.row(j)) {
            *s += v;
        }
    }
    Ok(ScoreVector(scores))
}

/// The `min(w, |residuals|)` residuals that `centroid` attends to most.
pub fn cluster_neighbors(
    a: &AttentionMap,
    centroid: usize,
    residuals: &[usize],
    w: usize,
) -> Result<Vec<usize>> {
    if !residuals.contains(&centroid) {
        return Err(Error::NotResidual { index: centroid });
    }
    if w == 0 {
        return Err(Error::Config("cluster width w must be >= 1".into()));
    }
    if centroid >= a.rows() {
        return Err(Error::Dimension(format!(
            "centroid {centroid} out of range for {} rows",
            a.rows()
        )));
    }
    top_k(a.row(centroid), w.min(residuals.len()), Some(residuals))
}

/// Arithmetic mean of the member rows.
///
/// Each coordinate is clamped to the members' `[min, max]` so rounding in the
/// sum can never push a merged token outside its cluster's hull (averaging
/// `n` copies of `v` returns `v` exactly).
pub fn merge_cluster(x: &Matrix, members: &[usize]) -> Result<Vec<f64>> {
    if members.is_empty() {
        return Err(Error::Empty("cluster member list"));
    }
    if let Some(&bad) = members.iter().find(|&&i| i >= x.rows()) {
        return Err(Error::Dimension(format!(
            "member {bad} out of range for {} tokens",
            x.rows()
        )));
    }
    let first = x.row(members[0]);
    let mut sum = first.to_vec();
    let mut lo = first.to_vec();
    let mut hi = first.to_vec();
    for &m in &members[1..] {
        for (c, &v) in x.row(m).iter().enumerate() {
            sum[c] += v;
            lo[c] = lo[c].min(v);
            hi[c] = hi[c].max(v);
        }
    }
    let n = members.len() as f64;
    Ok(sum
        .iter()
        .zip(lo.iter().zip(&hi))
        .map(|(&s, (&l, &h))| (s / n).clamp(l, h))
        .collect())
}

/// Runs the full vision-side compression.
pub fn compress_vision(
    x: &Matrix,
    a: &AttentionMap,
    cfg: &CompressionConfig,
) -> Result<CompressionResult> {
    let n = x.rows();
    if a.rows() != n || a.cols() != n {
        return Err(Error::Dimension(format!(
            "attention map is {}x{} but there are {n} tokens",
            a.rows(),
            a.cols()
        )));
    }
    cfg.validate(n)?;

    let scores = attention_scores(a)?;
    let dominant = top_k(scores.as_slice(), cfg.k1, None)?;

    let mut is_dominant = alloc::vec![false; n];
    for &i in &dominant {
        is_dominant[i] = true;
    }
    let residuals: Vec<usize> = (0..n).filter(|&i| !is_dominant[i]).collect();

    let mut centroids = residuals.clone();
    top_k_in_place(scores.as_slice(), cfg.k2, &mut centroids)?;

    let clusters = match cfg.mode {
        ClusterMode::Overlapping => centroids
            .iter()
            .map(|&c| cluster_neighbors(a, c, &residuals, cfg.w))
            .collect::<Result<Vec<_>>>()?,
        ClusterMode::Disjoint => disjoint_clusters(a, &centroids, &residuals, cfg.w)?,
    };

    let d = x.cols();
    let mut merged = Matrix::zeros(clusters.len(), d);
    for (j, members) in clusters.iter().enumerate() {
        merged.row_mut(j).copy_from_slice(&merge_cluster(x, members)?);
    }

    let mut out_data = Vec::with_capacity((cfg.k1 + cfg.k2) * d);
    out_data.extend_from_slice(x.select_rows(&dominant).as_slice());
    out_data.extend_from_slice(merged.as_slice());
    let output = Matrix::new(cfg.k1 + cfg.k2, d, out_data)?;

    let mut claimed = alloc::vec![false; n];
    for &m in clusters.iter().flatten() {
        claimed[m] = true;
    }
    let dropped = residuals.iter().copied().filter(|&i| !claimed[i]).collect();

    Ok(CompressionResult {
        scores,
        dominant_indices: dominant,
        centroid_indices: centroids,
        cluster_members: clusters,
        merged_tokens: merged,
        output_tokens: output,
        dropped_indices: dropped,
    })
}

fn disjoint_clusters(
    a: &AttentionMap,
    centroids: &[usize],
    residuals: &[usize],
    w: usize,
) -> Result<Vec<Vec<usize>>> {
    let mut pool: Vec<usize> = residuals
        .iter()
        .copied()
        .filter(|i| !centroids.contains(i))
        .collect();
    let mut clusters = Vec::with_capacity(centroids.len());
    for &c in centroids {
        let mut picked = pool.clone();
        top_k_in_place(a.row(c), (w - 1).min(pool.len()), &mut picked)?;
        pool.retain(|i| !picked.contains(i));
        let mut members = Vec::with_capacity(picked.len() + 1);
        members.push(c);
        members.extend(picked);
        clusters.push(members);
    }
    Ok(clusters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn identity(n: usize) -> AttentionMap {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.row_mut(i)[i] = 1.0;
        }
        AttentionMap::new(m).unwrap()
    }

    #[test]
    fn scores_of_identity_are_ones() {
        assert_eq!(attention_scores(&identity(3)).unwrap().0, vec![1.0; 3]);
    }

    #[test]
    fn scores_are_column_sums() {
        let a = AttentionMap::from_rows(&[[0.5, 0.5, 0.0], [0.0, 1.0, 0.0], [0.2, 0.3, 0.5]])
            .unwrap();
        let s = attention_scores(&a).unwrap();
        let expect = [0.7, 1.8, 0.5];
        for (g, e) in s.as_slice().iter().zip(expect) {
            assert!((g - e).abs() < 1e-15);
        }
        assert_eq!(top_k(s.as_slice(), 1, None).unwrap(), vec![1]);
    }

    #[test]
    fn uniform_scores_are_one() {
        let n = 4;
        let a = AttentionMap::new(Matrix::new(n, n, vec![0.25; n * n]).unwrap()).unwrap();
        assert_eq!(attention_scores(&a).unwrap().0, vec![1.0; n]);
    }

    #[test]
    fn scores_reject_rectangular() {
        let a = AttentionMap::from_rows(&[[0.5, 0.5]]).unwrap();
        assert!(matches!(attention_scores(&a), Err(Error::Dimension(_))));
    }

    #[test]
    fn neighbors_one_hot_self() {
        let a = identity(4);
        assert_eq!(cluster_neighbors(&a, 2, &[1, 2, 3], 1).unwrap(), vec![2]);
    }

    #[test]
    fn neighbors_restricted_to_residuals() {
        let a = AttentionMap::from_rows(&[
            [0.25, 0.25, 0.25, 0.25],
            [0.25, 0.25, 0.25, 0.25],
            [0.9, 0.05, 0.03, 0.02],
            [0.25, 0.25, 0.25, 0.25],
        ])
        .unwrap();
        assert_eq!(cluster_neighbors(&a, 2, &[1, 2, 3], 2).unwrap(), vec![1, 2]);
        assert_eq!(cluster_neighbors(&a, 2, &[1, 2, 3], 10).unwrap(), vec![1, 2, 3]);
        assert_eq!(
            cluster_neighbors(&a, 0, &[1, 2, 3], 2).unwrap_err(),
            Error::NotResidual { index: 0 }
        );
    }

    #[test]
    fn merge_examples() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [3.0, 5.0], [0.1, 0.1], [0.1, 0.1], [0.1, 0.1]])
            .unwrap();
        assert_eq!(merge_cluster(&x, &[1]).unwrap(), vec![3.0, 5.0]);
        assert_eq!(merge_cluster(&x, &[0, 1]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(merge_cluster(&x, &[2, 3, 4]).unwrap(), vec![0.1, 0.1]);
        assert_eq!(merge_cluster(&x, &[]).unwrap_err(), Error::Empty("cluster member list"));
    }

    #[test]
    fn full_dominant_is_score_ordered_copy() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let a = AttentionMap::from_rows(&[[0.1, 0.1, 0.8], [0.1, 0.1, 0.8], [0.1, 0.5, 0.4]])
            .unwrap();
        let r = compress_vision(&x, &a, &CompressionConfig::new(3, 0, 4)).unwrap();
        assert_eq!(r.dominant_indices, vec![2, 1, 0]);
        assert_eq!(r.output_tokens.as_slice(), &[3.0, 2.0, 1.0]);
        assert!(r.cluster_members.is_empty());
        assert!(r.dropped_indices.is_empty());
    }

    #[test]
    fn single_global_cluster_is_mean() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [2.0, 4.0], [3.0, 8.0], [6.0, 0.0]]).unwrap();
        let a = identity(4);
        let r = compress_vision(&x, &a, &CompressionConfig::new(0, 1, 4)).unwrap();
        assert_eq!(r.output_tokens.as_slice(), &[3.0, 3.0]);
        assert!(r.dropped_indices.is_empty());
    }

    #[test]
    fn rejects_oversized_config() {
        let x = Matrix::zeros(3, 1);
        let a = identity(3);
        assert!(matches!(
            compress_vision(&x, &a, &CompressionConfig::new(2, 2, 1)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            compress_vision(&x, &a, &CompressionConfig::new(1, 1, 0)),
            Err(Error::Config(_))
        ));
        let a4 = identity(4);
        assert!(matches!(
            compress_vision(&x, &a4, &CompressionConfig::new(1, 1, 1)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn wide_clusters_shrink_to_residuals() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let a = identity(3);
        let r = compress_vision(&x, &a, &CompressionConfig::new(1, 2, 8)).unwrap();
        assert!(r.cluster_members.iter().all(|m| m.len() == 2));
    }

    #[test]
    fn disjoint_mode_partitions() {
        let n = 8;
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m.row_mut(i)[j] = 1.0 / (1.0 + (i as f64 - j as f64).abs()) + j as f64 * 0.01;
            }
        }
        let a = AttentionMap::new(m).unwrap();
        let x = Matrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let cfg = CompressionConfig::new(2, 3, 2).with_mode(ClusterMode::Disjoint);
        let r = compress_vision(&x, &a, &cfg).unwrap();
        let mut all: Vec<usize> = r.cluster_members.iter().flatten().copied().collect();
        let total = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), total);
        for (c, members) in r.centroid_indices.iter().zip(&r.cluster_members) {
            assert_eq!(members[0], *c);
            assert!(members.len() <= 2);
        }
        assert_eq!(r.dropped_indices.len(), n - 2 - total);
    }
}
