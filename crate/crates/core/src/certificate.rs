//! Dual certificates of optimality for a candidate partition.
//!
//! Given a partition `G`, the dual variables are pinned down group by group: within-group
//! `y_ab` vanish, `y_G` solves the complementary-slackness system, and cross-group `y_ab`
//! cancel the off-diagonal blocks of the dual slack `Q`. What remains is a PSD test on each
//! diagonal block and a sign test on the cross-group multipliers.

use std::fmt::Write as _;

use crate::error::{check_dim, Error, Result};
use crate::kv::KvMap;
use crate::matlin::{eigenvalues_sym, min_eigenvalue, SymMatrix};
use crate::problem::{
    dual_objective, partnership_matrix, primal_objective, Partition, SdpInstance, SdpKind,
};

/// Absolute tolerance on `min_cross_yab` and `min_block_eig`.
pub const CERT_TOL: f64 = 1e-7;

/// Dual candidate for a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    pub y_a: Vec<f64>,
    /// `y_T` for the fixed SDP, `kappa_hat` for the adaptive one.
    pub y_t: f64,
    pub adaptive: bool,
    pub feasible: bool,
    /// Minimum over cross-group pairs of `y_a + y_b + D_ab`.
    pub min_cross_yab: f64,
    /// Minimum over groups of `lambda_min(Q_i)`.
    pub min_block_eig: f64,
    pub value: f64,
}

impl DualCertificate {
    /// key=value dump of the scalar fields.
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        if self.adaptive {
            kv.insert("kappa_hat", self.y_t);
        } else {
            kv.insert("y_T", self.y_t);
        }
        kv.insert("value", self.value);
        kv.insert("min_cross_yab", self.min_cross_yab);
        kv.insert("min_block_eig", self.min_block_eig);
        kv.insert("feasible", self.feasible);
        kv
    }

    /// `y_a` as a one-column CSV.
    pub fn y_csv(&self) -> String {
        let mut out = String::new();
        for y in &self.y_a {
            let _ = writeln!(out, "{y}");
        }
        out
    }
}

/// `((1/m) I - (1/(2m^2)) 11') v`, the inverse of `mI + 11'` applied to `v`.
pub fn linv_apply(v: &[f64]) -> Vec<f64> {
    let m = v.len() as f64;
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / m - s / (2.0 * m * m)).collect()
}

/// `Q_perp = (1'D1/m^2) 11' - (11'D + D11')/m + D`, i.e. `P D P` with `P = I - 11'/m`.
pub fn q_perp(block: &SymMatrix) -> SymMatrix {
    let m = block.dim() as f64;
    let r = block.row_sums();
    let s: f64 = r.iter().sum();
    SymMatrix::from_fn(block.dim(), |i, j| {
        s / (m * m) - (r[i] + r[j]) / m + block.get(i, j)
    })
}

/// Smallest eigenvalue of `Q_perp` on the complement of `1`; `+inf` for singleton blocks.
pub fn perp_lambda_min(qp: &SymMatrix) -> Result<f64> {
    let m = qp.dim();
    if m == 1 {
        return Ok(f64::INFINITY);
    }
    // Lift the `1` direction (an exact null vector of Q_perp) above the rest of the spectrum.
    let lift = 1.0 + 2.0 * qp.frobenius_norm();
    let shifted = SymMatrix::from_fn(m, |i, j| qp.get(i, j) + lift / m as f64);
    min_eigenvalue(&shifted)
}

/// Per-group data reused across `y_T` values.
#[derive(Debug, Clone)]
pub struct CertificateCache {
    groups: Vec<Vec<usize>>,
    /// `y_a` at `y_T = 0`.
    base_y: Vec<f64>,
    /// `d y_a / d y_T = -1/(2 m)`.
    slope: Vec<f64>,
    perp_min: Vec<f64>,
    d: SymMatrix,
}

impl CertificateCache {
    pub fn new(d: &SymMatrix, g: &Partition) -> Result<Self> {
        check_dim(d.dim(), g.d())?;
        let mut base_y = vec![0.0; d.dim()];
        let mut slope = vec![0.0; d.dim()];
        let mut perp_min = Vec::with_capacity(g.k());
        for grp in g.groups() {
            let block = d.submatrix(grp);
            let rhs: Vec<f64> = block.row_sums().iter().map(|r| -r).collect();
            let y = linv_apply(&rhs);
            let m = grp.len() as f64;
            for (&a, ya) in grp.iter().zip(y) {
                base_y[a] = ya;
                slope[a] = -1.0 / (2.0 * m);
            }
            perp_min.push(perp_lambda_min(&q_perp(&block))?);
        }
        Ok(Self {
            groups: g.groups().to_vec(),
            base_y,
            slope,
            perp_min,
            d: d.clone(),
        })
    }

    pub fn y_at(&self, y_t: f64) -> Vec<f64> {
        self.base_y
            .iter()
            .zip(&self.slope)
            .map(|(b, s)| b + s * y_t)
            .collect()
    }

    /// Smallest `y_T >= 0` making every diagonal block PSD.
    pub fn direct_y_t(&self) -> f64 {
        self.perp_min.iter().fold(0.0, |acc, &p| acc.max(-p))
    }

    pub fn min_block_eig(&self, y_t: f64) -> f64 {
        self.perp_min.iter().fold(0.0, |acc, &p| acc.min(y_t + p))
    }

    pub fn min_cross_yab(&self, y: &[f64]) -> f64 {
        let d = self.d.dim();
        let mut label = vec![0; d];
        for (gi, g) in self.groups.iter().enumerate() {
            for &i in g {
                label[i] = gi;
            }
        }
        let mut best = f64::INFINITY;
        for a in 0..d {
            for b in (a + 1)..d {
                if label[a] != label[b] {
                    best = best.min(y[a] + y[b] + self.d.get(a, b));
                }
            }
        }
        best
    }

    fn certificate(&self, y_t: f64, adaptive: bool, k: usize, tol: f64) -> DualCertificate {
        let y_a = self.y_at(y_t);
        let min_cross_yab = self.min_cross_yab(&y_a);
        let min_block_eig = self.min_block_eig(y_t);
        let s: f64 = y_a.iter().sum();
        let value = if adaptive {
            2.0 * s
        } else {
            2.0 * s + k as f64 * y_t
        };
        DualCertificate {
            y_a,
            y_t,
            adaptive,
            feasible: min_cross_yab >= -tol && min_block_eig >= -tol,
            min_cross_yab,
            min_block_eig,
            value,
        }
    }
}

/// Candidate for the fixed-K SDP at a given `y_T`.
pub fn dual_candidate_fixed(d: &SymMatrix, g: &Partition, y_t: f64) -> Result<DualCertificate> {
    Ok(CertificateCache::new(d, g)?.certificate(y_t, false, g.k(), CERT_TOL))
}

/// Candidate for the adaptive SDP; `kappa_hat` takes the role of `y_T` and drops out of the value.
pub fn dual_candidate_adaptive(
    d: &SymMatrix,
    g: &Partition,
    kappa_hat: f64,
) -> Result<DualCertificate> {
    Ok(CertificateCache::new(d, g)?.certificate(kappa_hat, true, g.k(), CERT_TOL))
}

/// How `y_T` is chosen for the fixed-K certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SearchMode {
    /// Smallest `y_T` making every block PSD, computed from block spectra.
    Direct,
    /// Bisection over `[0, upper]`.
    Binary { upper: f64 },
}

/// Upper end of the `y_T` search interval: `2 ||Gamma_hat||_inf (d/n + sqrt(d/n))`.
pub fn search_upper_bound(gamma_hat: &[f64], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size n must be >= 1".into()));
    }
    let r = gamma_hat.len() as f64 / n as f64;
    Ok(2.0 * gamma_hat.iter().fold(0.0_f64, |m, g| m.max(g.abs())) * (r + r.sqrt()))
}

const BISECTION_STEPS: usize = 100;

/// Searches `y_T` for a feasible fixed-K certificate.
pub fn certificate_search_fixed(
    d: &SymMatrix,
    g: &Partition,
    mode: SearchMode,
    tol: f64,
) -> Result<DualCertificate> {
    let cache = CertificateCache::new(d, g)?;
    let k = g.k();
    match mode {
        SearchMode::Direct => Ok(cache.certificate(cache.direct_y_t(), false, k, tol)),
        SearchMode::Binary { upper } => {
            if !(upper >= 0.0 && upper.is_finite()) {
                return Err(Error::InvalidInput(format!("invalid search bound {upper}")));
            }
            let (mut lo, mut hi) = (0.0, upper);
            let mut last = cache.certificate(0.0, false, k, tol);
            for step in 0..BISECTION_STEPS {
                let y_t = if step == 0 { 0.0 } else { 0.5 * (lo + hi) };
                last = cache.certificate(y_t, false, k, tol);
                if last.feasible {
                    return Ok(last);
                }
                // Block margin grows with y_T, cross margin shrinks.
                if last.min_block_eig < -tol {
                    lo = y_t;
                } else {
                    hi = y_t;
                }
                if step > 0 && hi - lo <= f64::EPSILON * (1.0 + upper) {
                    break;
                }
            }
            Ok(last)
        }
    }
}

/// `kappa_hat = 5 ||Gamma_hat||_inf (d/n + sqrt(d/n))`.
pub fn kappa_hat(gamma_hat: &[f64], n: usize) -> Result<f64> {
    Ok(2.5 * search_upper_bound(gamma_hat, n)?)
}

/// Builds the certificate appropriate for the instance kind.
pub fn certify(
    inst: &SdpInstance,
    g: &Partition,
    mode: SearchMode,
    tol: f64,
) -> Result<DualCertificate> {
    match inst.kind() {
        SdpKind::Fixed { .. } => certificate_search_fixed(inst.d_matrix(), g, mode, tol),
        SdpKind::Adaptive { kappa_hat } => {
            Ok(CertificateCache::new(inst.d_matrix(), g)?.certificate(kappa_hat, true, g.k(), tol))
        }
    }
}

/// Outcome of an independent full-assembly check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyReport {
    /// `lambda_min` of the assembled dual slack `Q`.
    pub min_eig: f64,
    pub min_cross_yab: f64,
    /// `|dual value - <-D, B(G)>|`.
    pub value_gap: f64,
    /// `max_i ||Q_{G_i G_i} 1||_inf`.
    pub slackness_residual: f64,
    pub ok: bool,
}

/// Rebuilds `Q` densely from the certificate and checks every optimality condition.
pub fn verify(
    cert: &DualCertificate,
    inst: &SdpInstance,
    g: &Partition,
    tol: f64,
) -> Result<VerifyReport> {
    let dim = inst.dim();
    check_dim(dim, cert.y_a.len())?;
    check_dim(dim, g.d())?;
    let (fixed_k, shift) = match inst.kind() {
        SdpKind::Fixed { k } => (Some(k), cert.y_t),
        SdpKind::Adaptive { kappa_hat } => (None, kappa_hat),
    };
    if let Some(k) = fixed_k {
        check_dim(k, g.k())?;
    }
    let d = inst.d_matrix();
    let y = &cert.y_a;
    let labels = g.labels();
    let mut min_cross = f64::INFINITY;
    // Q = D + sum_a y_a R_a + shift I - sum_{a<b} y_ab (e_a e_b' + e_b e_a')/2, with cross
    // multipliers y_ab = 2 (y_a + y_b + D_ab) and zero within groups.
    let q = SymMatrix::from_fn(dim, |a, b| {
        let mut v = d.get(a, b) + y[a] + y[b];
        if a == b {
            v += shift;
        } else if labels[a] != labels[b] {
            let y_ab = 2.0 * (y[a] + y[b] + d.get(a, b));
            v -= 0.5 * y_ab;
        }
        v
    });
    for a in 0..dim {
        for b in (a + 1)..dim {
            if labels[a] != labels[b] {
                min_cross = min_cross.min(y[a] + y[b] + d.get(a, b));
            }
        }
    }
    let min_eig = eigenvalues_sym(&q)?[0];
    let mut slackness: f64 = 0.0;
    for grp in g.groups() {
        for &a in grp {
            let r: f64 = grp.iter().map(|&b| q.get(a, b)).sum();
            slackness = slackness.max(r.abs());
        }
    }
    let dual = dual_objective(inst, cert)?;
    let primal = primal_objective(inst, &partnership_matrix(g))?;
    let value_gap = (dual - primal).abs();
    let scale = 1.0 + primal.abs();
    let ok = min_eig >= -tol
        && min_cross >= -tol
        && value_gap <= tol * scale
        && slackness <= tol * (1.0 + d.max_abs());
    Ok(VerifyReport {
        min_eig,
        min_cross_yab: min_cross,
        value_gap,
        slackness_residual: slackness,
        ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matlin::eig_sym;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn planted(sizes: &[usize], within: f64, across: f64) -> (SymMatrix, Partition) {
        let g = Partition::contiguous(sizes).unwrap();
        let l = g.labels();
        let d = SymMatrix::from_fn(g.d(), |i, j| {
            if i == j {
                0.0
            } else if l[i] == l[j] {
                within
            } else {
                across
            }
        });
        (d, g)
    }

    #[test]
    fn linv_examples() {
        let v = linv_apply(&[1.0, 0.0]);
        assert!((v[0] - 0.375).abs() < 1e-15 && (v[1] + 0.125).abs() < 1e-15);
        for m in 1..6 {
            let v = linv_apply(&vec![1.0; m]);
            assert!(v.iter().all(|x| (x - 0.5 / m as f64).abs() < 1e-15));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let l = DMatrix::from_fn(5, 5, |i, j| if i == j { 6.0 } else { 1.0 });
        let x = l
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&v))
            .unwrap();
        for (a, b) in linv_apply(&v).iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn q_perp_examples() {
        assert!(q_perp(&SymMatrix::ones(4).scale(2.5)).max_abs() < 1e-14);
        let q = q_perp(&SymMatrix::identity(3));
        let expected = &SymMatrix::identity(3) - &SymMatrix::ones(3).scale(1.0 / 3.0);
        assert!(q.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn perp_min_ignores_ones_direction() {
        // Q_perp of the identity has spectrum {0 (on 1), 1, 1}; the restricted minimum is 1.
        let qp = q_perp(&SymMatrix::identity(3));
        assert!((perp_lambda_min(&qp).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            perp_lambda_min(&SymMatrix::zeros(1)).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn single_group_value_two_ways() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = SymMatrix::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let g = Partition::new(vec![(0..5).collect()], 5).unwrap();
        let cert = dual_candidate_fixed(&d, &g, 0.0).unwrap();
        let l = DMatrix::from_fn(5, 5, |i, j| if i == j { 6.0 } else { 1.0 });
        let rhs = nalgebra::DVector::from_iterator(5, d.row_sums().into_iter().map(|r| -r));
        let y = l.lu().solve(&rhs).unwrap();
        assert!((cert.value - 2.0 * y.sum()).abs() < 1e-12);
    }

    #[test]
    fn constant_within_blocks_have_zero_q_perp() {
        let (d, g) = planted(&[2, 2], -1.0, 1.0);
        // Off-diagonal constant -1 within blocks with zero diagonal: block = -11' + I.
        for grp in g.groups() {
            let qp = q_perp(&d.submatrix(grp));
            let e = eig_sym(&qp).unwrap();
            assert!((e.values[0]).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
        }
        let cert = certificate_search_fixed(&d, &g, SearchMode::Direct, CERT_TOL).unwrap();
        assert!(cert.feasible);
        assert_eq!(cert.y_t, 0.0);
        let inst = SdpInstance::fixed(d, 2).unwrap();
        let v = primal_objective(&inst, &partnership_matrix(&g)).unwrap();
        assert!((cert.value - v).abs() < 1e-12);
        assert!(verify(&cert, &inst, &g, 1e-9).unwrap().ok);
    }

    #[test]
    fn kappa_hat_examples() {
        assert_eq!(kappa_hat(&[1.0; 5], 5).unwrap(), 10.0);
        assert_eq!(kappa_hat(&[0.0; 5], 5).unwrap(), 0.0);
        assert!((kappa_hat(&[2.0; 100], 400).unwrap() - 7.5).abs() < 1e-12);
        assert!(kappa_hat(&[1.0], 0).is_err());
    }

    #[test]
    fn adaptive_zero_kappa_matches_fixed_zero() {
        let (d, g) = planted(&[3, 3], -1.0, 0.5);
        let a = dual_candidate_adaptive(&d, &g, 0.0).unwrap();
        let f = dual_candidate_fixed(&d, &g, 0.0).unwrap();
        assert_eq!(a.y_a, f.y_a);
        assert_eq!(a.value, f.value);
    }

    #[test]
    fn binary_and_direct_agree_on_feasibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (base, g) = planted(&[3, 4, 3], -1.0, 1.0);
            let d = SymMatrix::from_fn(10, |i, j| {
                base.get(i, j)
                    + if i == j {
                        0.0
                    } else {
                        rng.random_range(-0.3..0.3)
                    }
            });
            let direct = certificate_search_fixed(&d, &g, SearchMode::Direct, CERT_TOL).unwrap();
            let binary =
                certificate_search_fixed(&d, &g, SearchMode::Binary { upper: 10.0 }, CERT_TOL)
                    .unwrap();
            assert_eq!(direct.feasible, binary.feasible);
        }
    }

    #[test]
    fn verify_rejects_perturbed_certificate() {
        let (d, g) = planted(&[3, 3], -0.5, 0.5);
        let inst = SdpInstance::fixed(d.clone(), 2).unwrap();
        let tol = 1e-8;
        let mut cert = certificate_search_fixed(&d, &g, SearchMode::Direct, CERT_TOL).unwrap();
        assert!(verify(&cert, &inst, &g, tol).unwrap().ok);
        cert.y_a[0] -= 10.0 * tol;
        cert.value = dual_objective(&inst, &cert).unwrap();
        assert!(!verify(&cert, &inst, &g, tol).unwrap().ok);
    }

    #[test]
    fn dump_has_expected_keys() {
        let (d, g) = planted(&[2, 2], -1.0, 1.0);
        let cert = dual_candidate_fixed(&d, &g, 0.0).unwrap();
        let kv = cert.to_kv();
        for key in ["y_T", "value", "min_cross_yab", "min_block_eig", "feasible"] {
            assert!(kv.get_str(key).is_some(), "{key}");
        }
        assert_eq!(cert.y_csv().lines().count(), 4);
    }
}
