//! Orthogonal projection of augmented directions onto the tangent space of the level set.
//!
//! The tangent space consists of `(W, W)` with `W` orthogonal to every `R_a = 1e_a' + e_a1'`,
//! to `I` (fixed-K only) and to the objective matrix. Minimizing
//! `||G_V - W||^2 + ||G_S - W||^2` over that space gives `W = P(H)` with `H = (G_V + G_S)/2`,
//! where `P` projects symmetric matrices onto the orthogonal complement of
//! `L = span{R_a, I, C}`. `P` is computed in two stages: the closed-form projection off
//! `span{R_a, I}`, then one Gram-Schmidt step against the reduced objective matrix.

use crate::error::{check_dim, Result};
use crate::matlin::SymMatrix;
use crate::problem::{SdpInstance, SdpKind};
use crate::solver::iterate::AugmentedIterate;

/// Above this ratio `||C||^2 / ||C_perp||^2` the objective constraint is treated as dependent.
pub const DEPENDENCE_RATIO: f64 = 1e12;

/// Multipliers of a projection, written as `W = (G_V + G_S)/2 - sum_a beta_a R_a - beta_T I - c C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub beta: Vec<f64>,
    pub beta_t: f64,
    pub c: f64,
}

#[derive(Debug, Clone)]
pub struct Projector {
    dim: usize,
    trace_constraint: bool,
    /// The objective matrix with its `span{R_a, I}` component removed, or `None` if dependent.
    reduced: Option<SymMatrix>,
    reduced_norm2: f64,
    objective: SymMatrix,
}

impl Projector {
    /// `objective` is `D` (fixed) or `D + kappa I` (adaptive).
    pub fn new(objective: &SymMatrix, trace_constraint: bool) -> Self {
        let dim = objective.dim();
        let mut p = Self {
            dim,
            trace_constraint,
            reduced: None,
            reduced_norm2: 0.0,
            objective: objective.clone(),
        };
        let (reduced, _) = p.split_affine(objective);
        let n2 = reduced.as_matrix().norm_squared();
        let full = objective.as_matrix().norm_squared();
        if n2 > 0.0 && full / n2 <= DEPENDENCE_RATIO {
            p.reduced_norm2 = n2;
            p.reduced = Some(reduced);
        } else {
            log::warn!(
                "objective matrix is (nearly) in span of the linear constraints (ratio {:e}); dropping it",
                if n2 > 0.0 { full / n2 } else { f64::INFINITY }
            );
        }
        p
    }

    pub fn for_instance(inst: &SdpInstance) -> Self {
        Self::new(
            &inst.objective_matrix(),
            matches!(inst.kind(), SdpKind::Fixed { .. }),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether the objective constraint was dropped as dependent.
    pub fn objective_dropped(&self) -> bool {
        self.reduced.is_none()
    }

    pub fn objective(&self) -> &SymMatrix {
        &self.objective
    }

    /// Splits `h` into its component orthogonal to `span{R_a, I}` and the coefficients
    /// `(beta, beta_T)` of the removed part.
    fn split_affine(&self, h: &SymMatrix) -> (SymMatrix, (Vec<f64>, f64)) {
        let d = self.dim as f64;
        let rs = h.row_sums();
        let total: f64 = rs.iter().sum();
        let (sigma, beta_t) = if self.trace_constraint {
            let tr = h.trace();
            let sigma = (total - tr) / (2.0 * (d - 1.0));
            (sigma, (tr - 2.0 * sigma) / d)
        } else {
            (total / (2.0 * d), 0.0)
        };
        let beta: Vec<f64> = rs.iter().map(|r| (r - sigma - beta_t) / d).collect();
        let out = SymMatrix::from_fn(self.dim, |i, j| {
            h.get(i, j) - beta[i] - beta[j] - if i == j { beta_t } else { 0.0 }
        });
        (out, (beta, beta_t))
    }

    /// Projection of a symmetric matrix onto `L^perp`, with multipliers.
    pub fn project_matrix_with_multipliers(&self, h: &SymMatrix) -> (SymMatrix, Multipliers) {
        let (mut out, (mut beta, mut beta_t)) = self.split_affine(h);
        let mut c = 0.0;
        if let Some(r) = &self.reduced {
            c = out.as_matrix().dot(r.as_matrix()) / self.reduced_norm2;
            out.add_scaled(-c, r);
            // r = C - sum beta^C_a R_a - beta^C_T I, so subtracting c r adds back c beta^C.
            let (_, (bc, btc)) = self.split_affine(&self.objective);
            for (b, x) in beta.iter_mut().zip(bc) {
                *b -= c * x;
            }
            beta_t -= c * btc;
        }
        (out, Multipliers { beta, beta_t, c })
    }

    pub fn project_matrix(&self, h: &SymMatrix) -> SymMatrix {
        let (mut out, _) = self.split_affine(h);
        if let Some(r) = &self.reduced {
            let c = out.as_matrix().dot(r.as_matrix()) / self.reduced_norm2;
            out.add_scaled(-c, r);
        }
        out
    }

    /// Projection of an augmented direction onto the tangent space; the result has `S = V`.
    pub fn project(&self, g: &AugmentedIterate) -> Result<AugmentedIterate> {
        check_dim(self.dim, g.dim())?;
        let mut h = g.v.clone();
        h.add_scaled(1.0, &g.slack);
        let w = self.project_matrix(&h.scale(0.5));
        Ok(AugmentedIterate {
            slack: w.clone(),
            v: w,
        })
    }
}

/// Projection for the fixed-K SDP with objective matrix `D`.
pub fn project_gradient_fixed(g: &AugmentedIterate, d: &SymMatrix) -> Result<AugmentedIterate> {
    check_dim(d.dim(), g.dim())?;
    Projector::new(d, true).project(g)
}

/// Projection for the adaptive SDP with objective matrix `D + kappa I`.
pub fn project_gradient_adaptive(
    g: &AugmentedIterate,
    d: &SymMatrix,
    kappa_hat: f64,
) -> Result<AugmentedIterate> {
    check_dim(d.dim(), g.dim())?;
    Projector::new(&d.shifted(kappa_hat), false).project(g)
}

/// Largest violation of the tangent-space conditions by `(V, S)`.
pub fn tangent_residual(
    g: &AugmentedIterate,
    objective: &SymMatrix,
    trace_constraint: bool,
) -> f64 {
    let mut r = g.v.max_abs_diff(&g.slack);
    for s in g.v.row_sums() {
        r = r.max((2.0 * s).abs());
    }
    if trace_constraint {
        r = r.max(g.v.trace().abs());
    }
    r.max(g.v.as_matrix().dot(objective.as_matrix()).abs())
}
