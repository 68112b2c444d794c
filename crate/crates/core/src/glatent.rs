//! G-Latent simulator: `X = A Z + E` with latent `Z ~ N(0, C*)` and noise `E ~ N(0, gamma I)`.

use std::fs;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::certificate::kappa_hat;
use crate::error::{Error, Result};
use crate::kv::{parse_list, KvMap};
use crate::matlin::{min_eigenvalue, SymMatrix};
use crate::problem::{difference_matrix_variables, Partition, SdpInstance};

/// Minimum group size accepted by a design.
pub const MIN_GROUP_SIZE: usize = 3;

const GRAPH_STREAM: u64 = 0;
const SAMPLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GLatentDesign {
    pub d: usize,
    pub k: usize,
    pub rho: f64,
    pub gamma: f64,
    pub group_sizes: Vec<usize>,
    pub seed: u64,
}

impl GLatentDesign {
    /// Balanced design: group sizes differ by at most one, larger groups first.
    pub fn balanced(d: usize, k: usize, rho: f64, gamma: f64, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("K must be >= 1".into()));
        }
        let sizes = (0..k).map(|i| d / k + usize::from(i < d % k)).collect();
        Self::with_sizes(k, rho, gamma, sizes, seed)
    }

    pub fn with_sizes(
        k: usize,
        rho: f64,
        gamma: f64,
        group_sizes: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let design = Self {
            d: group_sizes.iter().sum(),
            k,
            rho,
            gamma,
            group_sizes,
            seed,
        };
        design.validate()?;
        Ok(design)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidInput(format!(
                "design needs K >= 2, got {}",
                self.k
            )));
        }
        if self.group_sizes.len() != self.k || self.group_sizes.iter().sum::<usize>() != self.d {
            return Err(Error::InvalidInput(
                "group sizes must be K values summing to d".into(),
            ));
        }
        if let Some(&m) = self.group_sizes.iter().min() {
            if m < MIN_GROUP_SIZE {
                return Err(Error::InvalidInput(format!(
                    "group size {m} < {MIN_GROUP_SIZE}"
                )));
            }
        }
        if !(self.rho >= 0.0 && self.rho.is_finite())
            || !(self.gamma >= 0.0 && self.gamma.is_finite())
        {
            return Err(Error::InvalidInput(
                "rho and gamma must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn gstar(&self) -> Partition {
        Partition::contiguous(&self.group_sizes).expect("validated sizes form a partition")
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("d", self.d);
        kv.insert("K", self.k);
        kv.insert("rho", self.rho);
        kv.insert("gamma", self.gamma);
        let sizes: Vec<String> = self.group_sizes.iter().map(usize::to_string).collect();
        kv.insert("sizes", sizes.join(","));
        kv.insert("seed", self.seed);
        kv
    }

    /// Reads `d, K, rho, gamma, seed` and optional `sizes`; missing sizes mean balanced groups.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let k: usize = kv.require("K")?;
        let rho = kv.require("rho")?;
        let gamma = kv.require("gamma")?;
        let seed = kv.get("seed")?.unwrap_or(0);
        let design = match kv.get_str("sizes") {
            Some(s) => Self::with_sizes(k, rho, gamma, parse_list(s)?, seed)?,
            None => Self::balanced(kv.require("d")?, k, rho, gamma, seed)?,
        };
        if let Some(d) = kv.get::<usize>("d")? {
            if d != design.d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: design.d,
                });
            }
        }
        Ok(design)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KvMap::parse(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelTruth {
    pub gstar: Partition,
    pub theta_star: SymMatrix,
    pub c_star: SymMatrix,
    pub gamma_star: Vec<f64>,
    pub delta: f64,
}

/// Observations, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: DMatrix<f64>,
}

impl Sample {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for r in 0..self.x.nrows() {
            let row: Vec<String> = (0..self.x.ncols())
                .map(|c| self.x[(r, c)].to_string())
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Preferential-attachment tree on `k` nodes: a 2-node chain, then each new node links to one
/// existing node with probability proportional to its degree.
pub fn scale_free_graph<R: Rng>(k: usize, rng: &mut R) -> Result<SymMatrix> {
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "scale-free graph needs K >= 2, got {k}"
        )));
    }
    let mut w = DMatrix::zeros(k, k);
    let mut degree = vec![0usize; k];
    w[(0, 1)] = 1.0;
    w[(1, 0)] = 1.0;
    degree[0] = 1;
    degree[1] = 1;
    for s in 2..k {
        let total: usize = degree[..s].iter().sum();
        let mut r = rng.random_range(0..total);
        let mut target = s - 1;
        for (i, &deg) in degree[..s].iter().enumerate() {
            if r < deg {
                target = i;
                break;
            }
            r -= deg;
        }
        w[(s, target)] = 1.0;
        w[(target, s)] = 1.0;
        degree[s] += 1;
        degree[target] += 1;
    }
    SymMatrix::new(w)
}

fn spd_inverse(m: &SymMatrix) -> Result<SymMatrix> {
    let chol = Cholesky::new(m.as_matrix().clone())
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    let inv = chol.inverse();
    Ok(SymMatrix::from_fn(m.dim(), |i, j| {
        0.5 * (inv[(i, j)] + inv[(j, i)])
    }))
}

/// `Theta* = rho W + (|lambda_min(W)| + 0.2) I` and `C* = Theta*^{-1}`.
pub fn latent_covariance(w: &SymMatrix, rho: f64) -> Result<(SymMatrix, SymMatrix)> {
    let shift = min_eigenvalue(w)?.abs() + 0.2;
    let theta = w.scale(rho).shifted(shift);
    let lmin = min_eigenvalue(&theta)?;
    if !(lmin > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "latent precision has lambda_min = {lmin} for rho = {rho}"
        )));
    }
    let c = spd_inverse(&theta)?;
    Ok((theta, c))
}

/// `min_{j<k} C_jj + C_kk - 2 C_jk`.
pub fn delta_cstar(c: &SymMatrix) -> f64 {
    let k = c.dim();
    let mut best = f64::INFINITY;
    for j in 0..k {
        for l in (j + 1)..k {
            best = best.min(c.get(j, j) + c.get(l, l) - 2.0 * c.get(j, l));
        }
    }
    best
}

/// Draws the latent graph and covariance for a design.
pub fn model_truth(design: &GLatentDesign) -> Result<ModelTruth> {
    design.validate()?;
    let mut rng = stream_rng(design.seed, GRAPH_STREAM);
    let w = scale_free_graph(design.k, &mut rng)?;
    let (theta_star, c_star) = latent_covariance(&w, design.rho)?;
    let delta = delta_cstar(&c_star);
    if !(delta > 0.0) {
        return Err(Error::Numerical(format!(
            "latent separation Delta = {delta} is not positive"
        )));
    }
    Ok(ModelTruth {
        gstar: design.gstar(),
        theta_star,
        c_star,
        gamma_star: vec![design.gamma; design.d],
        delta,
    })
}

fn cholesky_with_jitter(c: &SymMatrix) -> Result<DMatrix<f64>> {
    if let Some(ch) = Cholesky::new(c.as_matrix().clone()) {
        return Ok(ch.l());
    }
    log::warn!("Cholesky of C* failed, retrying with 1e-12 diagonal jitter");
    Cholesky::new(c.shifted(1e-12).into_inner())
        .map(|ch| ch.l())
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky of C* failed after jitter".into()))
}

/// Draws `n` observations of `X = A Z + E`.
pub fn sample(design: &GLatentDesign, truth: &ModelTruth, n: usize) -> Result<Sample> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be >= 1".into()));
    }
    let l = cholesky_with_jitter(&truth.c_star)?;
    let labels = truth.gstar.labels();
    let mut rng = stream_rng(design.seed, SAMPLE_STREAM);
    let k = design.k;
    let d = design.d;
    let mut x = DMatrix::zeros(n, d);
    let mut g = vec![0.0; k];
    let mut z = vec![0.0; k];
    for r in 0..n {
        for gi in g.iter_mut() {
            *gi = rng.sample(StandardNormal);
        }
        for i in 0..k {
            z[i] = (0..=i).map(|j| l[(i, j)] * g[j]).sum();
        }
        for c in 0..d {
            let e: f64 = rng.sample(StandardNormal);
            x[(r, c)] = z[labels[c]] + truth.gamma_star[c].sqrt() * e;
        }
    }
    Ok(Sample { x })
}

/// `X'X / n`, no centering.
pub fn sample_cov(x: &DMatrix<f64>) -> Result<SymMatrix> {
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("need at least one observation".into()));
    }
    let s = x.transpose() * x / x.nrows() as f64;
    Ok(SymMatrix::from_fn(s.nrows(), |i, j| {
        0.5 * (s[(i, j)] + s[(j, i)])
    }))
}

/// How the noise diagonal is estimated.
#[derive(Debug, Clone, PartialEq)]
pub enum GammaMode {
    /// The true noise variances (simulation only).
    Oracle(Vec<f64>),
    /// Neighbor-difference estimator.
    Pecok,
}

/// Noise-variance estimate from the sample covariance.
///
/// For each `a`, the two columns `b` minimizing
/// `V(a, b) = max_{c, e not in {a, b}} |<X_a - X_b, (X_c - X_e) / ||X_c - X_e||>|`
/// are taken as neighbors `b1, b2`, and `Gamma_aa = <X_a - X_b1, X_a - X_b2> / n`, floored at 0.
pub fn gamma_estimator_pecok(sigma: &SymMatrix) -> Result<Vec<f64>> {
    let d = sigma.dim();
    if d < 3 {
        return Err(Error::InvalidInput(format!(
            "neighbor estimator needs d >= 3, got {d}"
        )));
    }
    // Normalizers ||X_c - X_e|| / sqrt(n); pairs with zero norm carry no information.
    let mut inv_norm = vec![vec![0.0; d]; d];
    for c in 0..d {
        for e in (c + 1)..d {
            let v = sigma.get(c, c) + sigma.get(e, e) - 2.0 * sigma.get(c, e);
            if v > 1e-14 * (1.0 + sigma.get(c, c).abs() + sigma.get(e, e).abs()) {
                inv_norm[c][e] = 1.0 / v.sqrt();
            }
        }
    }
    let mut v_ab = vec![vec![0.0; d]; d];
    let mut u = vec![0.0; d];
    for a in 0..d {
        for b in (a + 1)..d {
            for (c, uc) in u.iter_mut().enumerate() {
                *uc = sigma.get(a, c) - sigma.get(b, c);
            }
            let mut best: f64 = 0.0;
            for c in 0..d {
                if c == a || c == b {
                    continue;
                }
                for e in (c + 1)..d {
                    if e == a || e == b {
                        continue;
                    }
                    let w = inv_norm[c][e];
                    if w > 0.0 {
                        best = best.max((u[c] - u[e]).abs() * w);
                    }
                }
            }
            v_ab[a][b] = best;
            v_ab[b][a] = best;
        }
    }
    let mut out = Vec::with_capacity(d);
    for a in 0..d {
        let mut order: Vec<usize> = (0..d).filter(|&b| b != a).collect();
        order.sort_by(|&p, &q| v_ab[a][p].total_cmp(&v_ab[a][q]).then(p.cmp(&q)));
        let (b1, b2) = (order[0], order[1]);
        let g = sigma.get(a, a) - sigma.get(a, b1) - sigma.get(a, b2) + sigma.get(b1, b2);
        out.push(g.max(0.0));
    }
    Ok(out)
}

pub fn gamma_estimator(sigma: &SymMatrix, mode: &GammaMode) -> Result<Vec<f64>> {
    match mode {
        GammaMode::Oracle(g) => {
            if g.len() != sigma.dim() {
                return Err(Error::DimensionMismatch {
                    expected: sigma.dim(),
                    found: g.len(),
                });
            }
            Ok(g.clone())
        }
        GammaMode::Pecok => gamma_estimator_pecok(sigma),
    }
}

/// Which noise estimate drives `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaChoice {
    Oracle,
    Pecok,
}

/// A simulated instance with everything needed to score it.
#[derive(Debug, Clone)]
pub struct SimulatedInstance {
    pub instance: SdpInstance,
    pub truth: ModelTruth,
    pub sample: Sample,
    pub sigma_hat: SymMatrix,
    pub gamma_hat: Vec<f64>,
    pub n: usize,
}

/// Simulates `n` observations and builds `D = diag(Gamma_hat) - Sigma_hat`.
///
/// With `k_known` the instance is the fixed-K SDP; otherwise the adaptive SDP with
/// `kappa_hat` computed from `Gamma_hat`.
pub fn build_instance(
    design: &GLatentDesign,
    n: usize,
    k_known: bool,
    gamma: GammaChoice,
) -> Result<SimulatedInstance> {
    let truth = model_truth(design)?;
    let sample = sample(design, &truth, n)?;
    let sigma_hat = sample_cov(&sample.x)?;
    let mode = match gamma {
        GammaChoice::Oracle => GammaMode::Oracle(truth.gamma_star.clone()),
        GammaChoice::Pecok => GammaMode::Pecok,
    };
    let gamma_hat = gamma_estimator(&sigma_hat, &mode)?;
    let d = difference_matrix_variables(&sigma_hat, &gamma_hat)?;
    let instance = if k_known {
        SdpInstance::fixed(d, design.k)?
    } else {
        SdpInstance::adaptive(d, kappa_hat(&gamma_hat, n)?)?
    };
    Ok(SimulatedInstance {
        instance,
        truth,
        sample,
        sigma_hat,
        gamma_hat,
        n,
    })
}
