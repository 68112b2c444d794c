//! Rounding oracles, K selection and clustering metrics.
//!
//! Every oracle treats the rows of a `d x d` matrix as `d` points in `R^d`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matlin::{trace_inner, SymMatrix};
use crate::problem::{partnership_matrix, Partition};

/// Rounding method used inside the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundingMethod {
    LloydKmeansPP,
    Clink,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundingConfig {
    pub method: RoundingMethod,
    /// Independent kmeans++ restarts; the lowest within-cluster sum of squares wins.
    pub restarts: usize,
    pub max_lloyd_iters: usize,
    pub rng_seed: u64,
}

impl Default for RoundingConfig {
    fn default() -> Self {
        Self {
            method: RoundingMethod::LloydKmeansPP,
            restarts: 1,
            max_lloyd_iters: 100,
            rng_seed: 0,
        }
    }
}

/// Seed of the `i`-th member of the stream starting at `seed`; member 0 is `seed` itself.
pub fn stream_seed(seed: u64, i: u64) -> u64 {
    seed ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn check_k(k: usize, d: usize) -> Result<()> {
    if k == 0 || k > d {
        return Err(Error::InvalidInput(format!(
            "need 1 <= K <= d, got K = {k}, d = {d}"
        )));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn rows(m: &SymMatrix) -> Vec<Vec<f64>> {
    (0..m.dim())
        .map(|i| (0..m.dim()).map(|j| m.get(i, j)).collect())
        .collect()
}

/// One Lloyd run: final partition plus the within-cluster sum of squares after each iteration.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub partition: Partition,
    pub inertia_history: Vec<f64>,
}

fn kmeanspp_seeds(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[idx].clone());
        for (dv, p) in dist.iter_mut().zip(points) {
            *dv = dv.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn assign(points: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (c, ctr) in centers.iter().enumerate() {
                let dv = sq_dist(p, ctr);
                if dv < best.1 {
                    best = (c, dv);
                }
            }
            best
        })
        .unzip()
}

/// Moves far points into empty clusters so that every cluster is nonempty.
fn repair_empty(labels: &mut [usize], dist: &mut [f64], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let far = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&i, &j| dist[i].total_cmp(&dist[j]).then(j.cmp(&i)))
            .expect("k <= d guarantees a cluster with two points");
        labels[far] = empty;
        dist[far] = 0.0;
    }
}

fn centroids(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, c) in sums.iter_mut().zip(counts) {
        for v in s.iter_mut() {
            *v /= c as f64;
        }
    }
    sums
}

fn inertia(points: &[Vec<f64>], labels: &[usize], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum()
}

/// Single kmeans++ seeded Lloyd run on the rows of `m`.
pub fn lloyd_run(m: &SymMatrix, k: usize, max_iters: usize, seed: u64) -> Result<LloydRun> {
    check_k(k, m.dim())?;
    let points = rows(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeanspp_seeds(&points, k, &mut rng);
    let (mut labels, mut dist) = assign(&points, &centers);
    repair_empty(&mut labels, &mut dist, k);
    let mut centers = centroids(&points, &labels, k);
    let mut history = vec![inertia(&points, &labels, &centers)];
    for _ in 0..max_iters {
        let (mut next, mut dist) = assign(&points, &centers);
        repair_empty(&mut next, &mut dist, k);
        if next == labels {
            break;
        }
        labels = next;
        centers = centroids(&points, &labels, k);
        history.push(inertia(&points, &labels, &centers));
    }
    Ok(LloydRun {
        partition: Partition::from_labels(&labels)?,
        inertia_history: history,
    })
}

/// `K(M, K)`: kmeans++ seeded Lloyd on the rows of `m`, best of `config.restarts` runs.
pub fn kmeanspp_lloyd(m: &SymMatrix, k: usize, config: &RoundingConfig) -> Result<Partition> {
    if config.restarts == 0 {
        return Err(Error::InvalidInput("restarts must be >= 1".into()));
    }
    let mut best: Option<(f64, Partition)> = None;
    for r in 0..config.restarts {
        let run = lloyd_run(
            m,
            k,
            config.max_lloyd_iters,
            stream_seed(config.rng_seed, r as u64),
        )?;
        let score = *run.inertia_history.last().expect("history is nonempty");
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, run.partition));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Complete-linkage agglomerative clustering on row distances, cut at `k` clusters.
///
/// Uses the nearest-neighbor chain, so the merge sequence costs `O(d^2)`; merges are then
/// replayed in order of height.
pub fn clink(m: &SymMatrix, k: usize) -> Result<Partition> {
    let d = m.dim();
    check_k(k, d)?;
    let points = rows(m);
    let mut dist = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in (i + 1)..d {
            let v = sq_dist(&points[i], &points[j]).sqrt();
            dist[i][j] = v;
            dist[j][i] = v;
        }
    }
    let mut active = vec![true; d];
    let mut merges: Vec<(f64, usize, usize)> = Vec::with_capacity(d.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = d;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(
                (0..d)
                    .find(|&i| active[i])
                    .expect("an active cluster exists"),
            );
        }
        loop {
            let a = *chain.last().expect("chain is nonempty");
            let prev = if chain.len() >= 2 {
                Some(chain[chain.len() - 2])
            } else {
                None
            };
            // Prefer the previous chain element on ties so that the chain terminates.
            let mut best = prev.unwrap_or(usize::MAX);
            let mut best_d = prev.map_or(f64::INFINITY, |p| dist[a][p]);
            for j in 0..d {
                if active[j]
                    && j != a
                    && (dist[a][j] < best_d || (dist[a][j] == best_d && best == usize::MAX))
                {
                    best = j;
                    best_d = dist[a][j];
                }
            }
            if Some(best) == prev {
                chain.pop();
                chain.pop();
                let (x, y) = (a.min(best), a.max(best));
                merges.push((best_d, x, y));
                for j in 0..d {
                    if active[j] && j != x && j != y {
                        let v = dist[x][j].max(dist[y][j]);
                        dist[x][j] = v;
                        dist[j][x] = v;
                    }
                }
                active[y] = false;
                remaining -= 1;
                break;
            }
            chain.push(best);
        }
    }
    merges.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut parent: Vec<usize> = (0..d).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for &(_, x, y) in merges.iter().take(d - k) {
        let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
        parent[rx.max(ry)] = rx.min(ry);
    }
    let labels: Vec<usize> = (0..d).map(|i| find(&mut parent, i)).collect();
    Partition::from_labels(&labels)
}

/// Dispatches on `config.method`.
pub fn round(m: &SymMatrix, k: usize, config: &RoundingConfig) -> Result<Partition> {
    match config.method {
        RoundingMethod::LloydKmeansPP => kmeanspp_lloyd(m, k, config),
        RoundingMethod::Clink => clink(m, k),
    }
}

/// `round(tr U)` (half away from zero), clamped to `[1, d]`.
pub fn select_k_trace(u: &SymMatrix) -> usize {
    select_k_from_trace(u.trace(), u.dim())
}

pub fn select_k_from_trace(trace: f64, d: usize) -> usize {
    let r = trace.round();
    if !(r >= 1.0) {
        1
    } else if r >= d as f64 {
        d
    } else {
        r as usize
    }
}

/// One recorded trial of [`best_of_n`].
#[derive(Debug, Clone)]
pub struct Trial {
    pub seed: u64,
    pub partition: Partition,
    pub objective: f64,
}

/// `KB(M, K, N)`: `n` single Lloyd runs on `m`, keeping the partition with largest `<-D, B(G)>`.
///
/// Ties keep the earliest trial. Returns the winner and the full trial log.
pub fn best_of_n(
    m: &SymMatrix,
    d: &SymMatrix,
    k: usize,
    n: usize,
    seed: u64,
    max_lloyd_iters: usize,
) -> Result<(Partition, Vec<Trial>)> {
    if n == 0 {
        return Err(Error::InvalidInput("N must be >= 1".into()));
    }
    let mut trials = Vec::with_capacity(n);
    for i in 0..n {
        let s = stream_seed(seed, i as u64);
        let p = lloyd_run(m, k, max_lloyd_iters, s)?.partition;
        let objective = -trace_inner(d, &partnership_matrix(&p))?;
        trials.push(Trial {
            seed: s,
            partition: p,
            objective,
        });
    }
    let mut best = 0;
    for (i, t) in trials.iter().enumerate() {
        if t.objective > trials[best].objective {
            best = i;
        }
    }
    Ok((trials[best].partition.clone(), trials))
}

/// 1 if the partitions coincide up to relabeling, else 0.
pub fn metric_d1(ghat: &Partition, gstar: &Partition) -> Result<f64> {
    if ghat.d() != gstar.d() {
        return Err(Error::DimensionMismatch {
            expected: gstar.d(),
            found: ghat.d(),
        });
    }
    Ok(if ghat == gstar { 1.0 } else { 0.0 })
}

/// `(1/d) sum_i max_j |Ghat_i ∩ Gstar_j|`.
pub fn metric_d2(ghat: &Partition, gstar: &Partition) -> Result<f64> {
    if ghat.d() != gstar.d() {
        return Err(Error::DimensionMismatch {
            expected: gstar.d(),
            found: ghat.d(),
        });
    }
    let star = gstar.labels();
    let mut total = 0usize;
    for g in ghat.groups() {
        let mut counts = vec![0usize; gstar.k()];
        for &i in g {
            counts[star[i]] += 1;
        }
        total += counts.into_iter().max().unwrap_or(0);
    }
    Ok(total as f64 / ghat.d() as f64)
}
