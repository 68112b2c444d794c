//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use force_core::matlin::SymMatrix;
use force_core::problem::Partition;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_sym(d: usize, scale: f64, rng: &mut impl Rng) -> SymMatrix {
    SymMatrix::from_fn(d, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

/// Row-major flattening of a full `d x d` matrix.
pub fn flatten(m: &SymMatrix) -> Vec<f64> {
    let d = m.dim();
    (0..d * d).map(|k| m.get(k / d, k % d)).collect()
}

pub fn unflatten(v: &[f64], d: usize) -> SymMatrix {
    SymMatrix::from_fn(d, |i, j| 0.5 * (v[i * d + j] + v[j * d + i]))
}

/// Orthogonal projection of `x` onto the null space of `n` (rows are constraint normals).
///
/// The normals are orthonormalized by modified Gram-Schmidt with one reorthogonalization
/// pass; rows that become negligible are dependent and dropped.
pub fn nullspace_projection(x: &DVector<f64>, n: &DMatrix<f64>) -> DVector<f64> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for i in 0..n.nrows() {
        let row = n.row(i).transpose();
        let scale = row.norm();
        let mut q = row.clone_owned();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&q);
                q -= b * c;
            }
        }
        let len = q.norm();
        if len > 1e-10 * scale.max(1.0) {
            basis.push(q / len);
        }
    }
    let mut out = x.clone();
    for _ in 0..2 {
        for b in &basis {
            let c = b.dot(&out);
            out -= b * c;
        }
    }
    out
}

/// Normals of the affine hull of the augmented feasible set in `R^{2 d^2}` (V block, then S block).
///
/// Rows: row sums of V, trace of V (if `trace`), `<C, V>`, and `V_ij - S_ij` for every `(i, j)`.
pub fn augmented_normals(objective: &SymMatrix, trace: bool) -> DMatrix<f64> {
    let d = objective.dim();
    let n2 = d * d;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for a in 0..d {
        let mut r = vec![0.0; 2 * n2];
        for j in 0..d {
            r[a * d + j] += 0.5;
            r[j * d + a] += 0.5;
        }
        rows.push(r);
    }
    if trace {
        let mut r = vec![0.0; 2 * n2];
        for a in 0..d {
            r[a * d + a] = 1.0;
        }
        rows.push(r);
    }
    let mut r = vec![0.0; 2 * n2];
    r[..n2].copy_from_slice(&flatten(objective));
    rows.push(r);
    for k in 0..n2 {
        let mut r = vec![0.0; 2 * n2];
        r[k] = 1.0;
        r[n2 + k] = -1.0;
        rows.push(r);
    }
    DMatrix::from_fn(rows.len(), 2 * n2, |i, j| rows[i][j])
}

/// Least-squares projection of the pair `(gv, gs)` onto the tangent space of the augmented constraints.
pub fn gram_projection(
    gv: &SymMatrix,
    gs: &SymMatrix,
    objective: &SymMatrix,
    trace: bool,
) -> (SymMatrix, SymMatrix) {
    let d = gv.dim();
    let n = augmented_normals(objective, trace);
    let mut x = flatten(gv);
    x.extend(flatten(gs));
    let p = nullspace_projection(&DVector::from_vec(x), &n);
    (
        unflatten(&p.as_slice()[..d * d], d),
        unflatten(&p.as_slice()[d * d..], d),
    )
}

fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(0.5 * (m + m.transpose()));
    let vals = e.eigenvalues.map(|v| v.max(0.0));
    &e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose()
}

/// Result of [`admm_sdp`].
pub struct AdmmSolution {
    /// `<-C, U>` at the returned point.
    pub value: f64,
    pub u: SymMatrix,
    /// Largest disagreement between the three copies at exit.
    pub residual: f64,
    pub iterations: usize,
}

/// Dense consensus ADMM for `max <-C, U>` over `U >= 0, U1 = 1, [tr U = K], U PSD`.
///
/// Three copies of `U` (PSD cone, nonnegative orthant, affine set) share one consensus
/// variable; every step is an exact projection.
pub fn admm_sdp(
    objective: &SymMatrix,
    k: Option<usize>,
    max_iters: usize,
    tol: f64,
) -> AdmmSolution {
    let d = objective.dim();
    let n2 = d * d;
    let c = DMatrix::from_fn(d, d, |i, j| objective.get(i, j));
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for a in 0..d {
        let mut r = vec![0.0; n2];
        for j in 0..d {
            r[a * d + j] += 0.5;
            r[j * d + a] += 0.5;
        }
        rows.push(r);
        rhs.push(1.0);
    }
    if let Some(k) = k {
        let mut r = vec![0.0; n2];
        for a in 0..d {
            r[a * d + a] = 1.0;
        }
        rows.push(r);
        rhs.push(k as f64);
    }
    let n = DMatrix::from_fn(rows.len(), n2, |i, j| rows[i][j]);
    let pinv = (&n * n.transpose())
        .try_inverse()
        .expect("independent affine constraints");
    let b = DVector::from_vec(rhs);
    let affine = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let x = DVector::from_iterator(n2, m.transpose().iter().copied());
        let p = &x - n.transpose() * (&pinv * (&n * &x - &b));
        DMatrix::from_row_slice(d, d, p.as_slice())
    };
    let rho = 1.0;
    let mut z = DMatrix::from_element(d, d, 1.0 / d as f64);
    let mut lam = [
        DMatrix::zeros(d, d),
        DMatrix::zeros(d, d),
        DMatrix::zeros(d, d),
    ];
    let mut xs = [z.clone(), z.clone(), z.clone()];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..max_iters {
        iterations = it + 1;
        // The linear term is split evenly: each copy minimizes <C, X>/3 + (rho/2)|X - Z + L|^2.
        let shift = &c / (3.0 * rho);
        xs[0] = project_psd(&(&z - &lam[0] - &shift));
        xs[1] = (&z - &lam[1] - &shift).map(|v| v.max(0.0));
        xs[2] = affine(&(&z - &lam[2] - &shift));
        let z_old = z.clone();
        z = (&xs[0] + &lam[0] + &xs[1] + &lam[1] + &xs[2] + &lam[2]) / 3.0;
        let mut primal: f64 = 0.0;
        for i in 0..3 {
            let r = &xs[i] - &z;
            lam[i] += &r;
            primal = primal.max(r.amax());
        }
        let dual = (&z - &z_old).amax();
        residual = primal.max(dual);
        if residual < tol {
            break;
        }
    }
    // Report the affine copy pushed onto the cone: feasible up to the residual.
    let u = SymMatrix::new(z.clone()).unwrap();
    let value = -(c.dot(&z));
    AdmmSolution {
        value,
        u,
        residual,
        iterations,
    }
}

/// Textbook complete linkage: repeatedly merge the two clusters with smallest maximal
/// pairwise distance (ties to the lexicographically first pair) until `k` remain.
pub fn naive_complete_linkage(points: &[Vec<f64>], k: usize) -> Partition {
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let mut h: f64 = 0.0;
                for &a in &clusters[i] {
                    for &b in &clusters[j] {
                        h = h.max(dist(&points[a], &points[b]));
                    }
                }
                if h < best.0 {
                    best = (h, i, j);
                }
            }
        }
        let merged = clusters.remove(best.2);
        clusters[best.1].extend(merged);
    }
    Partition::new(clusters, points.len()).unwrap()
}

/// Planted difference matrix: small within groups, large across, with symmetric noise.
pub fn planted_instance(
    sizes: &[usize],
    within: f64,
    across: f64,
    noise: f64,
    rng: &mut impl Rng,
) -> (SymMatrix, Partition) {
    let g = Partition::contiguous(sizes).unwrap();
    let l = g.labels();
    let d = SymMatrix::from_fn(g.d(), |i, j| {
        let base = if i == j {
            0.0
        } else if l[i] == l[j] {
            within
        } else {
            across
        };
        base + noise * (2.0 * rng.random::<f64>() - 1.0)
    });
    (d, g)
}
