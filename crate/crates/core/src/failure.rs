//! Sensor damage detection and recovery.
//!
//! Two detectors work off the shared hidden space. Cross-sensor tracking
//! compares one sample's per-modality hidden estimates pairwise and applies
//! a majority rule with a distance threshold. The clustering detector
//! builds an agglomerative merge tree over training hidden estimates once,
//! then scores a test estimate by how deep into the merge ladder it would
//! join: the join level's cut-off distance over the root distance, clipped
//! to `[0, 1]`. Thresholds on that damage probability are calibrated per
//! SNR on the training split. Flagged sensors get their features
//! reconstructed from the surviving modalities' confidence-weighted mean.

use crate::error::{Error, Result};
use crate::nets::{ModelBundle, SelectionMatrix};
use crate::rng::CounterRng;
use crate::simdata::{inject_noise, SensorBatch};
use crate::tensor::Tensor;

/// Cluster dissimilarity update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    /// Minimum pairwise point distance.
    Single,
    /// Mean pairwise point distance.
    Average,
}

impl Linkage {
    pub fn name(&self) -> &'static str {
        match self {
            Linkage::Single => "single",
            Linkage::Average => "average",
        }
    }
}

/// One merge step: clusters are labeled 0..P-1 for leaves and P+k for the
/// cluster created by merge k. Distances are non-decreasing over the list.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub distance: f64,
}

/// Full agglomerative merge history over the training hidden estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    pub linkage: Linkage,
    /// Training points, one row-major `dim`-vector per leaf.
    points: Vec<f64>,
    dim: usize,
    merges: Vec<Merge>,
    /// Centroid of every internal cluster, row-major, merge order.
    centroids: Vec<f64>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl ClusterTree {
    pub fn leaves(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.points.len() / self.dim
        }
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Root merge distance, the largest cut-off in the ladder.
    pub fn max_distance(&self) -> f64 {
        self.merges.last().map(|m| m.distance).unwrap_or(0.0)
    }

    /// Distance from a query to the structure the linkage joins against:
    /// the nearest training point under single linkage, the nearest
    /// internal-cluster centroid under average linkage.
    pub fn join_distance(&self, query: &[f64]) -> f64 {
        debug_assert_eq!(query.len(), self.dim);
        match self.linkage {
            Linkage::Single => (0..self.leaves())
                .map(|i| euclidean(query, self.point(i)))
                .fold(f64::INFINITY, f64::min),
            Linkage::Average => (0..self.merges.len())
                .map(|k| euclidean(query, &self.centroids[k * self.dim..(k + 1) * self.dim]))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Agglomerative merge history for column-points of a `[dim, P]` tensor.
pub fn build_tree(h_train: &Tensor, linkage: Linkage) -> Result<ClusterTree> {
    if h_train.rank() != 2 || h_train.cols() < 2 {
        return Err(Error::Contract(format!(
            "clustering needs at least two points, got shape {:?}",
            h_train.shape()
        )));
    }
    let p = h_train.cols();
    let dim = h_train.rows();
    let mut points = vec![0.0; p * dim];
    for i in 0..p {
        for r in 0..dim {
            points[i * dim + r] = h_train.at(r, i);
        }
    }

    let raw = match linkage {
        Linkage::Single => single_linkage_merges(&points, p, dim),
        Linkage::Average => average_linkage_merges(&points, p, dim),
    };

    // Stable sort by dissimilarity, then relabel through a union-find so
    // merge k creates cluster P + k. Single and average linkage admit no
    // inversions, which keeps the sorted list a valid dendrogram.
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].2.partial_cmp(&raw[b].2).unwrap().then(a.cmp(&b)));

    let mut uf = UnionFind::new(p);
    let mut label: Vec<usize> = (0..p).collect();
    let mut merges = Vec::with_capacity(raw.len());
    for (k, &step) in order.iter().enumerate() {
        let (a, b, d) = raw[step];
        let ra = uf.find(a);
        let rb = uf.find(b);
        let (la, lb) = (label[ra], label[rb]);
        let root = uf.union(ra, rb);
        label[root] = p + k;
        merges.push(Merge {
            cluster_a: la.min(lb),
            cluster_b: la.max(lb),
            distance: d,
        });
    }

    // Member sums per cluster give every internal centroid in one pass.
    let mut sums: Vec<Vec<f64>> = (0..p).map(|i| points[i * dim..(i + 1) * dim].to_vec()).collect();
    let mut counts: Vec<f64> = vec![1.0; p];
    let mut centroids = vec![0.0; merges.len() * dim];
    for (k, merge) in merges.iter().enumerate() {
        let sa = sums[merge.cluster_a].clone();
        let sb = sums[merge.cluster_b].clone();
        let count = counts[merge.cluster_a] + counts[merge.cluster_b];
        let sum: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| x + y).collect();
        for r in 0..dim {
            centroids[k * dim + r] = sum[r] / count;
        }
        sums.push(sum);
        counts.push(count);
    }

    Ok(ClusterTree {
        linkage,
        points,
        dim,
        merges,
        centroids,
    })
}

/// Uniformly subsamples columns down to `cap` before building the tree;
/// returns the tree plus the column indices it used. Keeps the quadratic
/// build affordable at desk scale.
pub fn build_tree_capped(
    h_train: &Tensor,
    linkage: Linkage,
    cap: usize,
    seed: u64,
) -> Result<(ClusterTree, Vec<usize>)> {
    let p = h_train.cols();
    if p <= cap {
        let tree = build_tree(h_train, linkage)?;
        return Ok((tree, (0..p).collect()));
    }
    let mut idx: Vec<usize> = (0..p).collect();
    let mut rng = CounterRng::stream(seed, "tree.subsample", 0);
    rng.shuffle(&mut idx);
    idx.truncate(cap);
    idx.sort_unstable();
    let sub = h_train.select_columns(&idx);
    Ok((build_tree(&sub, linkage)?, idx))
}

/// Prim's minimum spanning tree; its edges sorted by weight are exactly the
/// single-linkage merge distances.
fn single_linkage_merges(points: &[f64], p: usize, dim: usize) -> Vec<(usize, usize, f64)> {
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut in_tree = vec![false; p];
    let mut best_dist = vec![f64::INFINITY; p];
    let mut best_from = vec![0usize; p];
    let mut edges = Vec::with_capacity(p - 1);
    in_tree[0] = true;
    for j in 1..p {
        best_dist[j] = euclidean(pt(0), pt(j));
    }
    for _ in 1..p {
        let mut next = usize::MAX;
        let mut nd = f64::INFINITY;
        for j in 0..p {
            if !in_tree[j] && best_dist[j] < nd {
                nd = best_dist[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((best_from[next], next, nd));
        for j in 0..p {
            if !in_tree[j] {
                let d = euclidean(pt(next), pt(j));
                if d < best_dist[j] {
                    best_dist[j] = d;
                    best_from[j] = next;
                }
            }
        }
    }
    edges
}

/// Nearest-neighbor-chain agglomeration with the average-linkage
/// Lance-Williams update over a condensed distance matrix.
fn average_linkage_merges(points: &[f64], p: usize, dim: usize) -> Vec<(usize, usize, f64)> {
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];
    let idx = |i: usize, j: usize| -> usize {
        debug_assert!(i < j);
        i * p - i * (i + 1) / 2 + (j - i - 1)
    };
    let mut dist = vec![0.0f64; p * (p - 1) / 2];
    for i in 0..p {
        for j in (i + 1)..p {
            dist[idx(i, j)] = euclidean(pt(i), pt(j));
        }
    }
    let d = |dist: &[f64], a: usize, b: usize| -> f64 {
        if a < b {
            dist[idx(a, b)]
        } else {
            dist[idx(b, a)]
        }
    };

    let mut active = vec![true; p];
    let mut size = vec![1.0f64; p];
    let mut chain: Vec<usize> = Vec::new();
    let mut merges = Vec::with_capacity(p - 1);
    let mut remaining = p;

    while remaining > 1 {
        if chain.is_empty() {
            let start = (0..p).find(|&i| active[i]).unwrap();
            chain.push(start);
        }
        loop {
            let a = *chain.last().unwrap();
            let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
            let mut nn = usize::MAX;
            let mut nd = f64::INFINITY;
            for c in 0..p {
                if c == a || !active[c] {
                    continue;
                }
                let dc = d(&dist, a, c);
                // Preferring the predecessor on ties guarantees the chain
                // terminates in a reciprocal pair.
                if dc < nd || (dc == nd && Some(c) == prev) {
                    nd = dc;
                    nn = c;
                }
            }
            if Some(nn) == prev {
                let b = nn;
                merges.push((b.min(a), b.max(a), nd));
                chain.pop();
                chain.pop();
                // Merge a into b; slot a goes inactive.
                let (sa, sb) = (size[a], size[b]);
                for c in 0..p {
                    if c != a && c != b && active[c] {
                        let nd = (sa * d(&dist, a, c) + sb * d(&dist, b, c)) / (sa + sb);
                        if b < c {
                            dist[idx(b, c)] = nd;
                        } else {
                            dist[idx(c, b)] = nd;
                        }
                    }
                }
                size[b] = sa + sb;
                active[a] = false;
                remaining -= 1;
                break;
            }
            chain.push(nn);
        }
    }
    merges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let ra = self.find(a);
        let rb = self.find(b);
        self.parent[ra] = rb;
        rb
    }
}

/// Damage probability of a hidden estimate against a training tree: the
/// cut-off distance of the smallest merge level that would absorb the
/// query, normalized by the root distance and clipped to `[0, 1]`.
pub fn damage_probability(tree: &ClusterTree, query: &[f64]) -> f64 {
    let delta = tree.join_distance(query);
    let d_max = tree.max_distance();
    if d_max <= 0.0 {
        return if delta <= 0.0 { 0.0 } else { 1.0 };
    }
    for merge in tree.merges() {
        if merge.distance >= delta {
            return (merge.distance / d_max).clamp(0.0, 1.0);
        }
    }
    1.0
}

/// Outcome of one cross-sensor tracking evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackOutcome {
    /// The vote produced a definite verdict (possibly "all clean").
    Decided,
    /// Far votes exist but no sensor satisfies the survivor consensus.
    Inconsistent,
    /// Two modalities: the even-L quota degenerates to zero and every
    /// sensor is trivially suspect. Fall back to the clustering detector.
    Indeterminate,
}

/// Per-modality tracking verdicts for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackAssessment {
    pub damaged: Vec<bool>,
    pub outcome: TrackOutcome,
    pub threshold: f64,
    pub far_votes: Vec<usize>,
}

/// Majority-vote damage test on one sample's per-modality hidden estimates.
/// Sensor `m` is damaged when at least `quota` other sensors sit farther
/// than `threshold` (squared distance) from it while at least `quota`
/// surviving pairs sit closer than `threshold` to each other; the quota is
/// `(L-1)/2` for odd `L` and `L/2 - 1` for even `L`.
pub fn track_cross_sensor(estimates: &[Vec<f64>], threshold: f64) -> Result<TrackAssessment> {
    let l_count = estimates.len();
    if l_count < 2 {
        return Err(Error::Contract(format!(
            "tracking needs >= 2 modalities, got {l_count}"
        )));
    }
    let dim = estimates[0].len();
    for e in estimates {
        if e.len() != dim {
            return Err(Error::Contract("hidden estimates must share one dimension".into()));
        }
    }
    let quota = if l_count % 2 == 1 { (l_count - 1) / 2 } else { l_count / 2 - 1 };

    let mut d2 = vec![vec![0.0; l_count]; l_count];
    for a in 0..l_count {
        for b in (a + 1)..l_count {
            let d = estimates[a]
                .iter()
                .zip(&estimates[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
            d2[a][b] = d;
            d2[b][a] = d;
        }
    }

    let mut damaged = vec![false; l_count];
    let mut far_votes = vec![0usize; l_count];
    for m in 0..l_count {
        let far = (0..l_count).filter(|&l| l != m && d2[m][l] > threshold).count();
        far_votes[m] = far;
        let mut close_pairs = 0usize;
        for j in 0..l_count {
            for l in (j + 1)..l_count {
                if j != m && l != m && d2[j][l] < threshold {
                    close_pairs += 1;
                }
            }
        }
        damaged[m] = far >= quota && close_pairs >= quota;
    }

    let outcome = if l_count == 2 {
        TrackOutcome::Indeterminate
    } else if damaged.iter().any(|&d| d) {
        TrackOutcome::Decided
    } else if far_votes.iter().any(|&v| v > 0) {
        TrackOutcome::Inconsistent
    } else {
        TrackOutcome::Decided
    };

    Ok(TrackAssessment {
        damaged,
        outcome,
        threshold,
        far_votes,
    })
}

/// Squared-distance threshold for the tracking detector: a high quantile of
/// the pairwise squared distances between clean aligned training estimates.
pub fn track_threshold_from_train(hidden: &[Tensor], quantile: f64) -> Result<f64> {
    if hidden.len() < 2 {
        return Err(Error::Contract("need >= 2 modalities".into()));
    }
    let cols = hidden[0].cols();
    let mut d2s = Vec::new();
    for a in 0..hidden.len() {
        for b in (a + 1)..hidden.len() {
            for c in 0..cols {
                let mut acc = 0.0;
                for r in 0..hidden[a].rows() {
                    let d = hidden[a].at(r, c) - hidden[b].at(r, c);
                    acc += d * d;
                }
                d2s.push(acc);
            }
        }
    }
    if d2s.is_empty() {
        return Err(Error::Contract("no samples to calibrate on".into()));
    }
    d2s.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let k = ((d2s.len() - 1) as f64 * quantile.clamp(0.0, 1.0)).round() as usize;
    Ok(d2s[k])
}

/// Sensor condition times prior discriminative power; the adaptive degree
/// of confidence.
pub fn adaptive_doc(p_damage: f64, acc_train: f64) -> f64 {
    ((1.0 - p_damage) * acc_train).clamp(0.0, 1.0)
}

/// Representative features for a damaged sensor: the surviving modalities'
/// confidence-weighted mean hidden estimate mapped through the damaged
/// sensor's own selection matrix.
pub fn reconstruct_features(
    s: &SelectionMatrix,
    survivors: &[(&[f64], f64)],
) -> Result<Vec<f64>> {
    if survivors.is_empty() {
        return Err(Error::Contract("cannot reconstruct: no surviving sensors".into()));
    }
    let dim = survivors[0].0.len();
    if dim != s.hidden_dim() {
        return Err(Error::Shape {
            op: "reconstruct_features",
            left: vec![s.hidden_dim()],
            right: vec![dim],
        });
    }
    let total_doc: f64 = survivors.iter().map(|(_, d)| d).sum();
    if total_doc <= 0.0 {
        return Err(Error::Contract(
            "cannot reconstruct: surviving confidence sums to zero".into(),
        ));
    }
    let mut mean = vec![0.0; dim];
    for (h, doc) in survivors {
        for (m, &v) in mean.iter_mut().zip(*h) {
            *m += doc * v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= total_doc);
    let h = Tensor::from_vec(vec![dim, 1], mean)?;
    let f = s.s.matmul(&h)?;
    Ok(f.data().to_vec())
}

/// Signal-to-noise estimate from a raw observation vector: the power of a
/// moving-average trend over the power of the residual, in dB, clamped to
/// `[-60, 60]`.
pub fn estimate_snr_db(signal: &[f64]) -> f64 {
    let n = signal.len();
    if n == 0 {
        return 0.0;
    }
    let half = 2isize;
    let mut trend_power = 0.0;
    let mut resid_power = 0.0;
    for i in 0..n {
        let lo = (i as isize - half).max(0) as usize;
        let hi = ((i as isize + half) as usize).min(n - 1);
        let window = &signal[lo..=hi];
        let trend = window.iter().sum::<f64>() / window.len() as f64;
        let resid = signal[i] - trend;
        trend_power += trend * trend;
        resid_power += resid * resid;
    }
    if resid_power <= 0.0 {
        return 60.0;
    }
    if trend_power <= 0.0 {
        return -60.0;
    }
    (10.0 * (trend_power / resid_power).log10()).clamp(-60.0, 60.0)
}

/// One calibrated operating point of the clustering detector.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationEntry {
    /// Injected SNR this entry was calibrated at.
    pub snr_db: f64,
    /// Mean estimated SNR of the noisy signals; the lookup key at test time.
    pub est_snr_db: f64,
    pub threshold: f64,
    pub youden_j: f64,
    /// Set when the damaged and clean populations were inseparable.
    pub low_confidence: bool,
}

/// SNR-indexed threshold lookup for the clustering detector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Calibration {
    pub entries: Vec<CalibrationEntry>,
}

impl Calibration {
    /// Entry whose estimated-SNR key is nearest to the query.
    pub fn entry_for(&self, est_snr_db: f64) -> Option<&CalibrationEntry> {
        self.entries.iter().min_by(|a, b| {
            (a.est_snr_db - est_snr_db)
                .abs()
                .partial_cmp(&(b.est_snr_db - est_snr_db).abs())
                .unwrap()
        })
    }
}

/// Calibrates per-SNR damage thresholds on the training split.
///
/// For every grid SNR, noise is injected into each modality in turn; the
/// resulting damage probabilities form the positive population and clean
/// estimates (preferably ones left out of the tree) the negative one. The
/// threshold maximizing Youden's J is recorded together with the mean
/// estimated SNR of the noisy signals, which keys the lookup at test time.
pub fn calibrate_threshold(
    bundle: &ModelBundle,
    train: &[SensorBatch],
    tree: &ClusterTree,
    clean_pool: &[usize],
    snr_grid_db: &[f64],
    max_samples: usize,
    seed: u64,
) -> Result<Calibration> {
    if snr_grid_db.is_empty() {
        return Err(Error::Contract("empty SNR grid".into()));
    }
    let modalities = train.len();
    let cap = max_samples.max(8);

    let pool: Vec<usize> = if clean_pool.is_empty() {
        (0..train[0].samples().min(cap)).collect()
    } else {
        clean_pool.iter().copied().take(cap).collect()
    };

    let mut clean_pd = Vec::new();
    for (l, batch) in train.iter().enumerate() {
        let sub = batch.select(&pool);
        let h = bundle.generators[l].forward_raw(&sub.x)?;
        for c in 0..h.cols() {
            clean_pd.push(damage_probability(tree, &h.column(c)));
        }
    }

    let mut entries = Vec::with_capacity(snr_grid_db.len());
    for (gi, &snr) in snr_grid_db.iter().enumerate() {
        let mut damaged_pd = Vec::new();
        let mut est_sum = 0.0;
        let mut est_count = 0usize;
        for (l, batch) in train.iter().enumerate() {
            let sub = batch.select(&pool);
            let noisy = inject_noise(&sub, snr, seed ^ ((gi * modalities + l) as u64))?;
            for c in 0..noisy.x.cols() {
                est_sum += estimate_snr_db(&noisy.x.column(c));
                est_count += 1;
            }
            let h = bundle.generators[l].forward_raw(&noisy.x)?;
            for c in 0..h.cols() {
                damaged_pd.push(damage_probability(tree, &h.column(c)));
            }
        }
        let est_snr = est_sum / est_count.max(1) as f64;
        let (threshold, j, low_confidence) = youden_threshold(&damaged_pd, &clean_pd);
        entries.push(CalibrationEntry {
            snr_db: snr,
            est_snr_db: est_snr,
            threshold,
            youden_j: j,
            low_confidence,
        });
    }
    Ok(Calibration { entries })
}

/// Threshold maximizing TPR - FPR for `p > T` predictions; degenerate
/// populations fall back to the midpoint of the combined range.
fn youden_threshold(positives: &[f64], negatives: &[f64]) -> (f64, f64, bool) {
    let mut all: Vec<f64> = positives.iter().chain(negatives).copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();
    if all.is_empty() {
        return (0.5, 0.0, true);
    }

    let mut candidates = Vec::with_capacity(all.len() + 1);
    candidates.push(all[0] - 1e-9);
    for w in all.windows(2) {
        candidates.push(0.5 * (w[0] + w[1]));
    }
    candidates.push(all[all.len() - 1] + 1e-9);

    let mut best_t = candidates[0];
    let mut best_j = f64::NEG_INFINITY;
    for &t in &candidates {
        let tpr = positives.iter().filter(|&&p| p > t).count() as f64
            / positives.len().max(1) as f64;
        let fpr = negatives.iter().filter(|&&p| p > t).count() as f64
            / negatives.len().max(1) as f64;
        let j = tpr - fpr;
        if j > best_j + 1e-15 {
            best_j = j;
            best_t = t;
        }
    }
    if best_j < 1e-9 {
        let lo = all[0];
        let hi = all[all.len() - 1];
        return (0.5 * (lo + hi), best_j.max(0.0), true);
    }
    (best_t, best_j, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_points(pts: &[&[f64]]) -> Tensor {
        let dim = pts[0].len();
        let n = pts.len();
        let mut data = vec![0.0; dim * n];
        for (c, p) in pts.iter().enumerate() {
            for (r, &v) in p.iter().enumerate() {
                data[r * n + c] = v;
            }
        }
        Tensor::from_vec(vec![dim, n], data).unwrap()
    }

    #[test]
    fn two_points_single_merge() {
        let t = build_tree(&column_points(&[&[0.0], &[1.0]]), Linkage::Single).unwrap();
        assert_eq!(t.merges().len(), 1);
        assert!((t.merges()[0].distance - 1.0).abs() < 1e-12);
        let t2 = build_tree(&column_points(&[&[0.0], &[1.0]]), Linkage::Average).unwrap();
        assert!((t2.merges()[0].distance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_points_single_linkage() {
        let t = build_tree(&column_points(&[&[0.0], &[1.0], &[10.0]]), Linkage::Single).unwrap();
        let d: Vec<f64> = t.merges().iter().map(|m| m.distance).collect();
        assert!((d[0] - 1.0).abs() < 1e-12);
        assert!((d[1] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_points_merge_at_zero() {
        let t = build_tree(&column_points(&[&[2.0], &[2.0], &[5.0]]), Linkage::Average).unwrap();
        assert_eq!(t.merges()[0].distance, 0.0);
    }

    #[test]
    fn rejects_single_point() {
        assert!(build_tree(&column_points(&[&[0.0]]), Linkage::Single).is_err());
    }

    #[test]
    fn merge_distances_are_non_decreasing() {
        let mut rng = CounterRng::stream(3, "tree.pts", 0);
        let pts: Vec<Vec<f64>> = (0..40).map(|_| rng.normal_vec(3)).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        for linkage in [Linkage::Single, Linkage::Average] {
            let t = build_tree(&column_points(&refs), linkage).unwrap();
            assert_eq!(t.merges().len(), 39);
            for w in t.merges().windows(2) {
                assert!(w[0].distance <= w[1].distance + 1e-12);
            }
        }
    }

    #[test]
    fn average_linkage_matches_brute_force_on_small_input() {
        // Brute-force agglomeration: recompute every cluster-pair mean
        // distance from raw points at each step.
        let mut rng = CounterRng::stream(9, "tree.avg", 0);
        let pts: Vec<Vec<f64>> = (0..12).map(|_| rng.normal_vec(2)).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let tree = build_tree(&column_points(&refs), Linkage::Average).unwrap();

        let mut clusters: Vec<Vec<usize>> = (0..pts.len()).map(|i| vec![i]).collect();
        let mut expected = Vec::new();
        while clusters.len() > 1 {
            let mut best = (0, 1, f64::INFINITY);
            for a in 0..clusters.len() {
                for b in (a + 1)..clusters.len() {
                    let mut total = 0.0;
                    for &i in &clusters[a] {
                        for &j in &clusters[b] {
                            total += euclidean(&pts[i], &pts[j]);
                        }
                    }
                    let mean = total / (clusters[a].len() * clusters[b].len()) as f64;
                    if mean < best.2 {
                        best = (a, b, mean);
                    }
                }
            }
            expected.push(best.2);
            let merged: Vec<usize> = clusters[best.0]
                .iter()
                .chain(&clusters[best.1])
                .copied()
                .collect();
            clusters.remove(best.1);
            clusters.remove(best.0);
            clusters.push(merged);
        }
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (m, e) in tree.merges().iter().zip(&expected) {
            assert!((m.distance - e).abs() < 1e-9, "{} vs {}", m.distance, e);
        }
    }

    #[test]
    fn damage_probability_examples() {
        let t = build_tree(&column_points(&[&[0.0], &[1.0], &[10.0]]), Linkage::Single).unwrap();
        // On a training point: joins at the first level.
        let p0 = damage_probability(&t, &[1.0]);
        assert!((p0 - 1.0 / 9.0).abs() < 1e-12);
        // 1.5 away from the {0, 1} pair: only the root level admits it.
        let p1 = damage_probability(&t, &[2.5]);
        assert!((p1 - 1.0).abs() < 1e-12);
        // Farther than the root distance: clipped to one.
        let p2 = damage_probability(&t, &[100.0]);
        assert_eq!(p2, 1.0);
    }

    #[test]
    fn damage_probability_is_monotone_in_distance() {
        let mut rng = CounterRng::stream(5, "tree.mono", 0);
        let pts: Vec<Vec<f64>> = (0..30).map(|_| rng.normal_vec(2)).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let t = build_tree(&column_points(&refs), Linkage::Single).unwrap();
        let mut prev = 0.0;
        for step in 0..20 {
            let q = [10.0 + step as f64, 0.0];
            let p = damage_probability(&t, &q);
            assert!(p >= prev - 1e-12);
            prev = p;
        }
    }

    #[test]
    fn tracking_identical_estimates_are_clean() {
        let e = vec![vec![1.0, 2.0]; 3];
        let a = track_cross_sensor(&e, 0.5).unwrap();
        assert_eq!(a.outcome, TrackOutcome::Decided);
        assert!(a.damaged.iter().all(|&d| !d));
    }

    #[test]
    fn tracking_flags_displaced_sensor() {
        let t = 1.0f64;
        let e = vec![
            vec![(10.0 * t).sqrt(), 0.0], // squared distance ~10T from the others
            vec![0.0, 0.0],
            vec![0.05, 0.0],
        ];
        let a = track_cross_sensor(&e, t).unwrap();
        assert_eq!(a.outcome, TrackOutcome::Decided);
        assert_eq!(a.damaged, vec![true, false, false]);
    }

    #[test]
    fn tracking_mutually_far_is_inconsistent() {
        let e = vec![vec![0.0, 0.0], vec![100.0, 0.0], vec![0.0, 100.0]];
        let a = track_cross_sensor(&e, 1.0).unwrap();
        assert_eq!(a.outcome, TrackOutcome::Inconsistent);
        assert!(a.damaged.iter().all(|&d| !d));
    }

    #[test]
    fn tracking_two_modalities_is_indeterminate() {
        let e = vec![vec![0.0], vec![5.0]];
        let a = track_cross_sensor(&e, 1.0).unwrap();
        assert_eq!(a.outcome, TrackOutcome::Indeterminate);
    }

    #[test]
    fn tracking_is_permutation_equivariant() {
        let e = vec![
            vec![9.0, 1.0],
            vec![0.1, 0.0],
            vec![0.0, 0.2],
        ];
        let a = track_cross_sensor(&e, 1.0).unwrap();
        let permuted = vec![e[2].clone(), e[0].clone(), e[1].clone()];
        let b = track_cross_sensor(&permuted, 1.0).unwrap();
        assert_eq!(a.damaged[0], b.damaged[1]);
        assert_eq!(a.damaged[1], b.damaged[2]);
        assert_eq!(a.damaged[2], b.damaged[0]);
        assert_eq!(a.outcome, b.outcome);
    }

    #[test]
    fn adaptive_doc_endpoints() {
        assert_eq!(adaptive_doc(0.0, 0.9), 0.9);
        assert_eq!(adaptive_doc(1.0, 0.9), 0.0);
        assert!((adaptive_doc(0.3, 0.9) - 0.63).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_examples() {
        let s = SelectionMatrix {
            s: Tensor::identity(3),
        };
        let h1 = [1.0, 0.0, 0.0];
        let h2 = [0.0, 1.0, 0.0];

        let single = reconstruct_features(&s, &[(&h1, 0.7)]).unwrap();
        assert_eq!(single, vec![1.0, 0.0, 0.0]);

        let same = reconstruct_features(&s, &[(&h1, 0.5), (&h1, 0.5)]).unwrap();
        assert_eq!(same, vec![1.0, 0.0, 0.0]);

        let weighted = reconstruct_features(&s, &[(&h1, 0.9), (&h2, 0.1)]).unwrap();
        assert!((weighted[0] - 0.9).abs() < 1e-15);
        assert!((weighted[1] - 0.1).abs() < 1e-15);

        assert!(reconstruct_features(&s, &[(&h1, 0.0)]).is_err());
        assert!(reconstruct_features(&s, &[]).is_err());
    }

    #[test]
    fn reconstruction_is_invariant_to_uniform_doc_scaling() {
        let s = SelectionMatrix {
            s: Tensor::identity(2),
        };
        let h1 = [2.0, -1.0];
        let h2 = [0.0, 3.0];
        let a = reconstruct_features(&s, &[(&h1, 0.8), (&h2, 0.4)]).unwrap();
        let b = reconstruct_features(&s, &[(&h1, 0.4), (&h2, 0.2)]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn youden_threshold_cases() {
        // Perfectly separated populations.
        let (t, j, low) = youden_threshold(&[0.8, 0.9, 0.95], &[0.1, 0.2, 0.3]);
        assert!(j >= 1.0 - 1e-12);
        assert!(t > 0.3 && t < 0.8);
        assert!(!low);

        // Identical populations: midpoint, flagged.
        let (t2, j2, low2) = youden_threshold(&[0.4, 0.5], &[0.4, 0.5]);
        assert!(low2);
        assert!(j2.abs() < 1e-12);
        assert!((t2 - 0.45).abs() < 1e-12);
    }
}
