//! State aggregation: k-means on the rows of the left singular subspace.

use nalgebra::DMatrix;
use rand::Rng;

use crate::chain::TransitionMatrix;
use crate::error::{invalid, Result};
use crate::matops::truncated_svd;
use crate::rng::{seeded_rng, streams, ChainRng};

/// Lloyd iterations stop when the relative inertia change falls below this.
pub const LLOYD_TOL: f64 = 1e-8;
pub const LLOYD_MAX_ITER: usize = 300;
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub labels: Vec<usize>,
    /// `k x d` cluster centers.
    pub centers: DMatrix<f64>,
    pub inertia: f64,
    /// Number of nonempty clusters; below `k` when the points have fewer
    /// than `k` distinct rows.
    pub effective_clusters: usize,
}

impl ClusterResult {
    pub fn degenerate(&self) -> bool {
        self.effective_clusters < self.centers.nrows()
    }
}

/// Clusters the states of `phat` by the rows of its `p x r` left singular vectors.
pub fn aggregate_states(
    phat: &TransitionMatrix,
    r: usize,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusterResult> {
    let u = truncated_svd(phat.matrix(), r)?.u;
    kmeans(&u, k, seed, restarts)
}

/// Best of `restarts` k-means++ seeded Lloyd runs on the rows of `x`, by inertia.
pub fn kmeans(x: &DMatrix<f64>, k: usize, seed: u64, restarts: usize) -> Result<ClusterResult> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(invalid(format!("cluster count {k} must lie in [1, {n}]")));
    }
    if restarts == 0 {
        return Err(invalid("at least one restart is required"));
    }
    let mut rng = seeded_rng(seed, streams::KMEANS);
    let mut best: Option<ClusterResult> = None;
    for _ in 0..restarts {
        let run = lloyd(x, seed_centers(x, k, &mut rng), k);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    (0..x.ncols()).map(|d| (x[(i, d)] - c[(j, d)]).powi(2)).sum()
}

/// k-means++: the first center uniformly, then each next one with probability
/// proportional to the squared distance to the nearest chosen center.
fn seed_centers(x: &DMatrix<f64>, k: usize, rng: &mut ChainRng) -> DMatrix<f64> {
    let n = x.nrows();
    let mut centers = DMatrix::zeros(k, x.ncols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&x.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if acc > u {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from(&x.row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, &centers, c));
        }
    }
    centers
}

fn assign(x: &DMatrix<f64>, centers: &DMatrix<f64>, labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let (best, d) = (0..centers.nrows())
            .map(|j| (j, sq_dist(x, i, centers, j)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("k >= 1");
        *label = best;
        inertia += d;
    }
    inertia
}

fn lloyd(x: &DMatrix<f64>, mut centers: DMatrix<f64>, k: usize) -> ClusterResult {
    let n = x.nrows();
    let mut labels = vec![0; n];
    let mut inertia = assign(x, &centers, &mut labels);
    for _ in 0..LLOYD_MAX_ITER {
        let mut sums = DMatrix::zeros(k, x.ncols());
        let mut sizes = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sizes[l] += 1;
            let mut row = sums.row_mut(l);
            row += x.row(i);
        }
        for j in 0..k {
            if sizes[j] > 0 {
                centers.row_mut(j).copy_from(&(sums.row(j) / sizes[j] as f64));
            }
        }
        let next = assign(x, &centers, &mut labels);
        let change = (inertia - next).abs() / inertia.max(f64::MIN_POSITIVE);
        inertia = next;
        if change < LLOYD_TOL {
            break;
        }
    }
    let mut used = vec![false; k];
    for &l in &labels {
        used[l] = true;
    }
    ClusterResult { labels, centers, inertia, effective_clusters: used.iter().filter(|&&u| u).count() }
}

/// Whether two labelings define the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut map_ab = std::collections::HashMap::new();
    let mut map_ba = std::collections::HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| *map_ab.entry(x).or_insert(y) == y && *map_ba.entry(y).or_insert(x) == x)
}
