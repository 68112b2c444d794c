//! The augmented iterate `(V, S)`, its spectrum relative to `F`, and the smoothed objective.
//!
//! The slack block of the augmented variable is diagonal with one entry per position
//! `(a, b)`; it is stored as a symmetric `d x d` matrix `S`. Relative to the strictly
//! feasible start, the augmented spectrum is `eig(F^{-1/2} V F^{-1/2})` together with the
//! `d^2` ratios `S_ab / F_ab`.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::matlin::{eig_sym, min_eigenvalue, SpectralShift, SymMatrix};

/// `(V, S)`: the matrix block and the slack block of the augmented variable.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedIterate {
    pub v: SymMatrix,
    pub slack: SymMatrix,
}

impl AugmentedIterate {
    /// A primal point with its slack set to match (`S = U`).
    pub fn from_primal(u: SymMatrix) -> Self {
        Self {
            slack: u.clone(),
            v: u,
        }
    }

    pub fn dim(&self) -> usize {
        self.v.dim()
    }

    /// Augmented inner product `<V1, V2> + <S1, S2>`.
    pub fn inner(&self, other: &AugmentedIterate) -> f64 {
        self.v.as_matrix().dot(other.v.as_matrix())
            + self.slack.as_matrix().dot(other.slack.as_matrix())
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// `self + alpha * dir`.
    pub fn axpy(&self, alpha: f64, dir: &AugmentedIterate) -> AugmentedIterate {
        let mut out = self.clone();
        out.v.add_scaled(alpha, &dir.v);
        out.slack.add_scaled(alpha, &dir.slack);
        out
    }

    /// `(1 - t) self + t other`.
    pub fn lerp(&self, other: &AugmentedIterate, t: f64) -> AugmentedIterate {
        let mut out = self.scale(1.0 - t);
        out.v.add_scaled(t, &other.v);
        out.slack.add_scaled(t, &other.slack);
        out
    }

    pub fn scale(&self, alpha: f64) -> AugmentedIterate {
        AugmentedIterate {
            v: self.v.scale(alpha),
            slack: self.slack.scale(alpha),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.slack.is_finite()
    }
}

/// A strictly feasible start `F = aI + b11'` with its precomputed closed forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartGeometry {
    pub f: SpectralShift,
    pub inverse: SpectralShift,
    pub inv_sqrt: SpectralShift,
}

impl StartGeometry {
    pub fn new(f: SpectralShift) -> Result<Self> {
        if !(f.min_entry() > 0.0) {
            return Err(Error::InvalidInput(
                "start must be entrywise positive".into(),
            ));
        }
        let forms = f.structured_forms()?;
        Ok(Self {
            f,
            inverse: forms.inverse,
            inv_sqrt: forms.inv_sqrt,
        })
    }

    pub fn dim(&self) -> usize {
        self.f.dim
    }

    /// `||F^{-1}||_2`.
    pub fn inverse_norm(&self) -> f64 {
        self.inverse.norm2()
    }

    /// `max_ab 1 / F_ab`, the scale of the slack part of the spectrum.
    pub fn inverse_min_entry(&self) -> f64 {
        1.0 / self.f.min_entry()
    }

    /// `F^{-1/2} U F^{-1/2}`.
    pub fn conjugate(&self, u: &SymMatrix) -> SymMatrix {
        self.inv_sqrt.congruence(u)
    }
}

/// `lambda_min(F^{-1/2} U F^{-1/2})`.
pub fn lambda_min_f(u: &SymMatrix, f: &SpectralShift) -> Result<f64> {
    check_dim(f.dim, u.dim())?;
    let inv_sqrt = f.structured_forms()?.inv_sqrt;
    min_eigenvalue(&inv_sqrt.congruence(u))
}

/// `min_ab S_ab / F_ab`.
pub fn slack_lambda_min(slack: &SymMatrix, f: &SpectralShift) -> f64 {
    let d = slack.dim();
    let mut best = f64::INFINITY;
    for i in 0..d {
        for j in i..d {
            best = best.min(slack.get(i, j) / f.entry(i, j));
        }
    }
    best
}

/// Minimum of the full augmented spectrum.
pub fn lambda_min_augmented(it: &AugmentedIterate, geo: &StartGeometry) -> Result<f64> {
    check_dim(geo.dim(), it.dim())?;
    let mat = min_eigenvalue(&geo.conjugate(&it.v))?;
    Ok(mat.min(slack_lambda_min(&it.slack, &geo.f)))
}

fn radial_step(u: &SymMatrix, f: &SpectralShift, lambda: f64) -> Result<SymMatrix> {
    if !(lambda < 1.0) {
        return Err(Error::DegenerateRay(lambda));
    }
    if lambda == 0.0 {
        return Ok(u.clone());
    }
    let fm = f.materialize();
    let mut out = fm.clone();
    out.add_scaled(1.0 / (1.0 - lambda), &(u - &fm));
    Ok(out)
}

/// `P_F(U) = F + (U - F) / (1 - lambda_min_F(U))`.
pub fn radial_projection(u: &SymMatrix, f: &SpectralShift) -> Result<SymMatrix> {
    radial_step(u, f, lambda_min_f(u, f)?)
}

/// Radial projection of the augmented point; the matrix block of the result is PSD and
/// entrywise nonnegative.
pub fn radial_projection_augmented(
    it: &AugmentedIterate,
    geo: &StartGeometry,
) -> Result<SymMatrix> {
    radial_step(&it.v, &geo.f, lambda_min_augmented(it, geo)?)
}

/// Value, gradient and minimum eigenvalue of the smoothed objective at one point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: AugmentedIterate,
    /// Minimum of the augmented spectrum.
    pub lambda_min: f64,
}

/// Eigen-directions whose normalized weight is at or below this are skipped in the gradient.
const WEIGHT_FLOOR: f64 = 0.0;

/// Evaluates `f_mu = -mu log sum_j exp(-lambda_j / mu)` over the augmented spectrum.
pub fn evaluate(
    it: &AugmentedIterate,
    geo: &StartGeometry,
    mu: f64,
    with_gradient: bool,
) -> Result<Evaluation> {
    if !(mu > 0.0) {
        return Err(Error::InvalidInput(format!(
            "smoothing parameter must be positive, got {mu}"
        )));
    }
    check_dim(geo.dim(), it.dim())?;
    if !it.is_finite() {
        return Err(Error::Numerical("non-finite iterate".into()));
    }
    let d = it.dim();
    let f = &geo.f;
    let eig = eig_sym(&geo.conjugate(&it.v))?;
    let ratios = SymMatrix::from_fn(d, |i, j| it.slack.get(i, j) / f.entry(i, j));
    let lmin = eig.values[0].min(ratios.min_entry());

    let mat_w: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| (-(l - lmin) / mu).exp())
        .collect();
    let slack_w = SymMatrix::from_fn(d, |i, j| (-(ratios.get(i, j) - lmin) / mu).exp());
    let z: f64 = mat_w.iter().sum::<f64>() + slack_w.sum();
    let value = lmin - mu * z.ln();
    if !with_gradient {
        return Ok(Evaluation {
            value,
            gradient: AugmentedIterate::from_primal(SymMatrix::zeros(d)),
            lambda_min: lmin,
        });
    }

    // Q diag(w) Q' over the columns carrying weight.
    let cols: Vec<usize> = (0..d).filter(|&j| mat_w[j] / z > WEIGHT_FLOOR).collect();
    let mut scaled = DMatrix::zeros(d, cols.len());
    for (c, &j) in cols.iter().enumerate() {
        let s = (mat_w[j] / z).sqrt();
        for i in 0..d {
            scaled[(i, c)] = eig.vectors[(i, j)] * s;
        }
    }
    let inner = &scaled * scaled.transpose();
    let inner = SymMatrix::from_fn(d, |i, j| 0.5 * (inner[(i, j)] + inner[(j, i)]));
    let gv = geo.inv_sqrt.congruence(&inner);
    let gs = SymMatrix::from_fn(d, |i, j| slack_w.get(i, j) / (z * f.entry(i, j)));
    Ok(Evaluation {
        value,
        gradient: AugmentedIterate { v: gv, slack: gs },
        lambda_min: lmin,
    })
}

pub fn smoothed_objective(it: &AugmentedIterate, geo: &StartGeometry, mu: f64) -> Result<f64> {
    Ok(evaluate(it, geo, mu, false)?.value)
}

/// Gradient of `f_mu` (an ascent direction).
pub fn smoothed_gradient(
    it: &AugmentedIterate,
    geo: &StartGeometry,
    mu: f64,
) -> Result<AugmentedIterate> {
    Ok(evaluate(it, geo, mu, true)?.gradient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{feasible_start_adaptive, feasible_start_fixed};

    #[test]
    fn lambda_min_f_basics() {
        let f = feasible_start_fixed(6, 2).unwrap();
        assert!((lambda_min_f(&f.materialize(), &f).unwrap() - 1.0).abs() < 1e-12);
        assert!(lambda_min_f(&SymMatrix::zeros(6), &f).unwrap().abs() < 1e-14);
    }

    #[test]
    fn radial_guard() {
        let f = feasible_start_adaptive(4);
        assert!(matches!(
            radial_projection(&f.materialize().scale(2.0), &f),
            Err(Error::DegenerateRay(_))
        ));
        let u = SymMatrix::from_diagonal(&[0.0, 1.0, 1.0, 1.0]);
        assert_eq!(
            radial_projection(&u, &SpectralShift::new(1.0, 0.0, 4)).unwrap(),
            u
        );
    }

    #[test]
    fn uniform_spectrum_value_and_gradient() {
        let f = feasible_start_fixed(5, 2).unwrap();
        let geo = StartGeometry::new(f).unwrap();
        let it = AugmentedIterate::from_primal(f.materialize());
        let mu = 0.1;
        let n: f64 = 30.0;
        let ev = evaluate(&it, &geo, mu, true).unwrap();
        assert!((ev.value - (1.0 - mu * n.ln())).abs() < 1e-12);
        let finv = geo.inverse.materialize().scale(1.0 / n);
        assert!(ev.gradient.v.max_abs_diff(&finv) < 1e-12);
        for i in 0..5 {
            for j in 0..5 {
                assert!((ev.gradient.slack.get(i, j) - 1.0 / (n * f.entry(i, j))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn large_mu_asymptotics() {
        let f = feasible_start_adaptive(3);
        let geo = StartGeometry::new(f).unwrap();
        let u = SymMatrix::from_fn(3, |i, j| if i == j { 0.6 } else { 0.2 });
        let it = AugmentedIterate::from_primal(u);
        let mut spectrum = crate::matlin::eigenvalues_sym(&geo.conjugate(&it.v)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                spectrum.push(it.slack.get(i, j) / f.entry(i, j));
            }
        }
        let n = spectrum.len() as f64;
        let mean = spectrum.iter().sum::<f64>() / n;
        let mu = 1e4;
        let v = smoothed_objective(&it, &geo, mu).unwrap();
        assert!((v - (mean - mu * n.ln())).abs() < 1e-3);
    }
}
