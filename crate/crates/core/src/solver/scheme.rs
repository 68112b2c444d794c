//! Start construction and the outer smoothed scheme.
//!
//! A run maximizes `lambda_min` of the augmented spectrum on the level set
//! `<C, V> = u`. The level comes from a start point whose augmented `lambda_min` is `1/6`;
//! after the main phase the radial projection maps the final iterate back to the feasible set.

use crate::error::{Error, Result};
use crate::matlin::{eigenvalues_sym, trace_inner, SpectralShift, SymMatrix};
use crate::problem::{partnership_matrix, primal_objective, SdpInstance, SdpKind};
use crate::solver::iterate::{
    lambda_min_augmented, radial_projection_augmented, AugmentedIterate, StartGeometry,
};
use crate::solver::pgd::{accelerated_pgd, LevelSet, PgdOutcome, PgdSettings};
use crate::solver::projection::Projector;
use crate::solver::{
    CertificateOracle, LloydRounding, RoundingOracle, SolveResult, SolverConfig, StartRule,
    StepRule, Termination,
};

/// `lambda_min` of the start point of every level.
pub const START_LAMBDA: f64 = 1.0 / 6.0;
/// Outer loop of the subscheme stops once `lambda_min` of the inner result drops to this.
pub const SUBSCHEME_EXIT_LAMBDA: f64 = 1.0 / 3.0;

/// Instance data shared by all phases of a solve.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub geometry: StartGeometry,
    pub projector: Projector,
    pub objective: SymMatrix,
    pub k: Option<usize>,
    pub mu: f64,
    pub beta: f64,
}

impl Prepared {
    pub fn new(inst: &SdpInstance, f: SpectralShift, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        if f.dim != inst.dim() {
            return Err(Error::DimensionMismatch {
                expected: inst.dim(),
                found: f.dim,
            });
        }
        let geometry = StartGeometry::new(f)?;
        let mu = config.mu_for(inst.dim());
        let beta = config.beta_for(&geometry, mu);
        let k = match inst.kind() {
            SdpKind::Fixed { k } => Some(k),
            SdpKind::Adaptive { .. } => None,
        };
        Ok(Self {
            geometry,
            projector: Projector::for_instance(inst),
            objective: inst.objective_matrix(),
            k,
            mu,
            beta,
        })
    }

    pub fn level_set(&self, level: f64) -> LevelSet<'_> {
        LevelSet {
            geometry: &self.geometry,
            projector: &self.projector,
            k: self.k,
            level,
        }
    }

    /// `<C, U>`.
    pub fn level_of(&self, u: &SymMatrix) -> f64 {
        self.objective.as_matrix().dot(u.as_matrix())
    }

    pub fn f_matrix(&self) -> SymMatrix {
        self.geometry.f.materialize()
    }

    /// `F + t (U - F)`.
    pub fn along_ray(&self, u: &SymMatrix, t: f64) -> SymMatrix {
        let fm = self.f_matrix();
        let mut out = fm.clone();
        out.add_scaled(t, &(u - &fm));
        out
    }

    /// The point on the ray from `F` through `u` whose augmented `lambda_min` is `1/6`.
    pub fn recenter(&self, u: &AugmentedIterate) -> Result<AugmentedIterate> {
        let lam = lambda_min_augmented(u, &self.geometry)?;
        if !(lam < 1.0) {
            return Err(Error::DegenerateRay(lam));
        }
        Ok(AugmentedIterate::from_primal(
            self.along_ray(&u.v, (1.0 - START_LAMBDA) / (1.0 - lam)),
        ))
    }

    fn settings(&self, config: &SolverConfig, max_iters: usize, early_stop: bool) -> PgdSettings {
        PgdSettings {
            mu: self.mu,
            beta: self.beta,
            max_iters,
            restart: config.restart,
            early_stop: early_stop.then_some((config.stop_window, config.stop_delta)),
            renorm_period: config.renorm_period,
            record_trace: config.record_trace,
            timing: config.timing,
        }
    }
}

/// A start for the main phase: a point with `lambda_min = 1/6` and its level.
#[derive(Debug, Clone)]
pub struct StartPoint {
    pub iterate: AugmentedIterate,
    pub level: f64,
    /// Gradient steps spent building the start.
    pub iterations: usize,
    pub used_subscheme: bool,
}

/// Picks `K` for the adaptive warm start by maximizing `<-D, B(G_K)> - kappa K` over rounded
/// partitions of `D` with `K` up to `ceil(d/2)`.
fn adaptive_warm_k(inst: &SdpInstance, rounding: &mut dyn RoundingOracle) -> Result<usize> {
    let d = inst.dim();
    let mut best = (f64::NEG_INFINITY, 1);
    for k in 1..=d.div_ceil(2) {
        let g = rounding.round(inst.d_matrix(), k)?;
        let v = primal_objective(inst, &partnership_matrix(&g))?;
        if v > best.0 {
            best = (v, k);
        }
    }
    Ok(best.1)
}

/// `U0 = B(G)/d + (d-1)/d F` with `G` the rounding of `D`, improved by `N` gradient steps and
/// radially projected. Falls back to the subscheme when this does not beat `F`.
pub fn warm_start(
    inst: &SdpInstance,
    prep: &Prepared,
    config: &SolverConfig,
    rounding: &mut dyn RoundingOracle,
) -> Result<StartPoint> {
    let d = inst.dim();
    let k0 = match prep.k {
        Some(k) => k,
        None => adaptive_warm_k(inst, rounding)?,
    };
    let g = rounding.round(inst.d_matrix(), k0)?;
    let b = partnership_matrix(&g);
    let mut u0 = prep.f_matrix().scale((d as f64 - 1.0) / d as f64);
    u0.add_scaled(1.0 / d as f64, &b);
    let start = AugmentedIterate::from_primal(u0);
    let set = prep.level_set(prep.level_of(&start.v));
    let run = accelerated_pgd(
        &start,
        &set,
        &prep.settings(config, config.warmup_iters, false),
        |_, _| Ok(std::ops::ControlFlow::Continue(())),
    )?;
    let u1 = radial_projection_augmented(&run.iterate, &prep.geometry)?;
    let f_level = prep.level_of(&prep.f_matrix());
    let scale = 1.0 + f_level.abs();
    if prep.level_of(&u1) < f_level - 1e-12 * scale {
        let z = prep.recenter(&AugmentedIterate::from_primal(u1))?;
        let level = prep.level_of(&z.v);
        return Ok(StartPoint {
            iterate: z,
            level,
            iterations: run.iterations,
            used_subscheme: false,
        });
    }
    log::warn!("warm start did not improve on F; falling back to the subscheme");
    if !(prep.level_of(&b) < f_level - 1e-12 * scale) {
        return Err(Error::Numerical(
            "no rounded candidate improves on the feasible start".into(),
        ));
    }
    let mut out = smoothed_subscheme(&b, inst, prep, config)?.into_start();
    out.iterations += run.iterations;
    Ok(out)
}

/// Result of the outer subscheme.
#[derive(Debug, Clone)]
pub struct SubschemeOutcome {
    pub iterate: AugmentedIterate,
    pub level: f64,
    /// Levels `<C, U_l>` visited, one per outer iteration.
    pub levels: Vec<f64>,
    pub inner_iterations: usize,
}

impl SubschemeOutcome {
    fn into_start(self) -> StartPoint {
        StartPoint {
            iterate: self.iterate,
            level: self.level,
            iterations: self.inner_iterations,
            used_subscheme: true,
        }
    }
}

/// Inner budget `2 sqrt(log d) ||F^{-1}||^2 R` with `R = sqrt(2) d`.
pub fn subscheme_inner_budget(d: usize, inverse_norm: f64) -> f64 {
    2.0 * (d as f64).ln().sqrt() * inverse_norm * inverse_norm * std::f64::consts::SQRT_2 * d as f64
}

/// Lower bound on `min <C, U>` over the feasible set, from `lambda_min(C)` and the trace range.
fn level_lower_bound(inst: &SdpInstance, c: &SymMatrix) -> Result<f64> {
    let lmin = eigenvalues_sym(c)?[0];
    Ok(match inst.kind() {
        SdpKind::Fixed { k } => k as f64 * lmin,
        SdpKind::Adaptive { .. } => lmin.min(lmin * inst.dim() as f64),
    })
}

/// Outer iterations allowed: `ceil(log_{5/4}((<C,F> - u*) / (<C,F> - u0))) + 1`.
pub fn subscheme_outer_cap(f_level: f64, lower: f64, u0: f64) -> usize {
    let ratio = (f_level - lower) / (f_level - u0);
    if !(ratio > 1.0) || !ratio.is_finite() {
        return 1;
    }
    (ratio.ln() / 1.25f64.ln()).ceil() as usize + 1
}

/// Outer loop over levels: optimize on the level of `U_l`, stop once the result's
/// `lambda_min` is at most `1/3`, otherwise recenter the result to `lambda_min = 1/6`.
///
/// `candidate` must be feasible with `<C, candidate> < <C, F>`.
pub fn smoothed_subscheme(
    candidate: &SymMatrix,
    inst: &SdpInstance,
    prep: &Prepared,
    config: &SolverConfig,
) -> Result<SubschemeOutcome> {
    let f_level = prep.level_of(&prep.f_matrix());
    let mut u = prep.recenter(&AugmentedIterate::from_primal(candidate.clone()))?;
    let u0_level = prep.level_of(&u.v);
    if !(u0_level < f_level) {
        return Err(Error::InvalidInput(
            "subscheme candidate does not improve on F".into(),
        ));
    }
    let cap = subscheme_outer_cap(f_level, level_lower_bound(inst, &prep.objective)?, u0_level);
    let budget = subscheme_inner_budget(inst.dim(), prep.geometry.inverse_norm()).ceil();
    let inner = (budget as usize).min(config.t_max);
    let mut levels = Vec::new();
    let mut total = 0;
    for _ in 0..cap.max(1) {
        let level = prep.level_of(&u.v);
        levels.push(level);
        let run: PgdOutcome = accelerated_pgd(
            &u,
            &prep.level_set(level),
            &prep.settings(config, inner, true),
            |_, _| Ok(std::ops::ControlFlow::Continue(())),
        )?;
        total += run.iterations;
        if run.lambda_min <= SUBSCHEME_EXIT_LAMBDA {
            return Ok(SubschemeOutcome {
                iterate: run.iterate,
                level,
                levels,
                inner_iterations: total,
            });
        }
        u = prep.recenter(&run.iterate)?;
    }
    Err(Error::IterationCap(format!(
        "subscheme exceeded {cap} outer iterations"
    )))
}

fn start_point(
    inst: &SdpInstance,
    prep: &Prepared,
    config: &SolverConfig,
    rounding: &mut dyn RoundingOracle,
) -> Result<StartPoint> {
    match config.start {
        StartRule::WarmStart => warm_start(inst, prep, config, rounding),
        StartRule::Subscheme => {
            let k0 = prep.k.map_or_else(|| adaptive_warm_k(inst, rounding), Ok)?;
            let b = partnership_matrix(&rounding.round(inst.d_matrix(), k0)?);
            Ok(smoothed_subscheme(&b, inst, prep, config)?.into_start())
        }
    }
}

/// Iteration cap of the main phase: `ceil(2 sqrt(log d) ||F^{-1}||^2 R / eps)`, bounded by `t_max`.
pub fn main_phase_budget(d: usize, inverse_norm: f64, config: &SolverConfig) -> usize {
    let t = (subscheme_inner_budget(d, inverse_norm) / config.epsilon).ceil();
    if t >= config.t_max as f64 {
        config.t_max
    } else {
        t as usize
    }
}

/// The primal solver alone: start construction, then the main phase with early stopping.
pub fn solve_sdp(
    inst: &SdpInstance,
    f: SpectralShift,
    config: &SolverConfig,
) -> Result<SolveResult> {
    let mut rounding = LloydRounding::new(config.rounding);
    run_scheme(inst, f, config, &mut rounding, None)
}

/// Shared driver for the primal solver and the certifying loop.
pub(crate) fn run_scheme(
    inst: &SdpInstance,
    f: SpectralShift,
    config: &SolverConfig,
    rounding: &mut dyn RoundingOracle,
    mut certifier: Option<&mut dyn CertificateOracle>,
) -> Result<SolveResult> {
    let prep = Prepared::new(inst, f, config)?;
    let start = start_point(inst, &prep, config, rounding)?;
    let set = prep.level_set(start.level);
    let budget = main_phase_budget(inst.dim(), prep.geometry.inverse_norm(), config);
    let h = config.certificate_period;
    let mut found = None;
    let mut check_error = None;
    let run = accelerated_pgd(
        &start.iterate,
        &set,
        &prep.settings(config, budget, true),
        |t, v| {
            let Some(cert) = certifier.as_deref_mut() else {
                return Ok(std::ops::ControlFlow::Continue(()));
            };
            if t == 0 || t % h != 0 {
                return Ok(std::ops::ControlFlow::Continue(()));
            }
            match super::certify_iterate(inst, &prep, v, config, rounding, cert) {
                Ok(Some(hit)) => {
                    found = Some(hit);
                    Ok(std::ops::ControlFlow::Break(()))
                }
                Ok(None) => Ok(std::ops::ControlFlow::Continue(())),
                Err(e) => {
                    check_error = Some(e);
                    Ok(std::ops::ControlFlow::Break(()))
                }
            }
        },
    )?;
    if let Some(e) = check_error {
        return Err(e);
    }
    let u_final = radial_projection_augmented(&run.iterate, &prep.geometry)?;
    let objective = primal_objective(inst, &u_final)?;
    let iterations = start.iterations + run.iterations;
    let terminated_by = match run.stop {
        crate::solver::pgd::PgdStop::Callback => Termination::Certificate,
        crate::solver::pgd::PgdStop::EarlyStop => Termination::EarlyStop,
        crate::solver::pgd::PgdStop::IterationCap => Termination::IterationCap,
    };
    let mut result = SolveResult {
        u_final,
        objective,
        iterations,
        terminated_by,
        certificate: None,
        rounded: None,
        k_selected: None,
        restarts: run.restarts,
        used_subscheme: start.used_subscheme,
        level: start.level,
        trace: run.trace,
    };
    if let Some(hit) = found {
        result.rounded = Some(hit.partition);
        result.k_selected = Some(hit.k);
        result.certificate = Some(hit.certificate);
        return Ok(result);
    }
    if let Some(cert) = certifier {
        let (k, g) = super::round_projected(inst, &result.u_final, rounding)?;
        let c = cert.certify(inst, &g)?;
        if super::certificate_matches(inst, &g, &c, config.cert_tol)? {
            result.certificate = Some(c);
        }
        result.k_selected = Some(k);
        result.rounded = Some(g);
    }
    Ok(result)
}

/// `<-C, F>`, the objective of the feasible start.
pub fn start_objective(inst: &SdpInstance, f: &SpectralShift) -> Result<f64> {
    Ok(-trace_inner(&inst.objective_matrix(), &f.materialize())?)
}

impl StepRule {
    /// `beta` for smoothing `mu`.
    pub fn beta(self, geo: &StartGeometry, mu: f64) -> f64 {
        let a = geo.inverse_norm();
        match self {
            StepRule::Standard => a * a / mu,
            StepRule::Augmented => {
                let s = geo.inverse_min_entry();
                0.5 * (a * a + s * s) / mu
            }
        }
    }
}
