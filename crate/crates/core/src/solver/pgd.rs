//! Accelerated projected gradient ascent on a level set of the objective.

use std::ops::ControlFlow;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::matlin::SymMatrix;
use crate::solver::iterate::{evaluate, AugmentedIterate, StartGeometry};
use crate::solver::projection::Projector;
use crate::solver::trace::TraceRow;

/// Residual above which a renormalization is refused.
pub const DRIFT_TOL: f64 = 1e-5;

/// `lambda_{t+1} = (1 + sqrt(1 + 4 lambda_t^2)) / 2`.
pub fn next_lambda(lambda: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * lambda * lambda).sqrt())
}

/// `gamma_t = (1 - lambda_t) / lambda_{t+1}`.
pub fn momentum_gamma(lambda: f64) -> f64 {
    (1.0 - lambda) / next_lambda(lambda)
}

/// The affine level set `{V : V1 = 1, tr V = K (fixed), <C, V> = level}` a run lives on.
#[derive(Debug, Clone)]
pub struct LevelSet<'a> {
    pub geometry: &'a StartGeometry,
    pub projector: &'a Projector,
    /// Trace target for the fixed-K SDP.
    pub k: Option<usize>,
    pub level: f64,
}

impl LevelSet<'_> {
    /// Max of `|V1 - 1|_inf`, `|tr V - K|` and `|<C,V> - level| / (1 + |level|)`.
    pub fn residual(&self, v: &SymMatrix) -> f64 {
        let mut r = v
            .row_sums()
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max);
        if let Some(k) = self.k {
            r = r.max((v.trace() - k as f64).abs());
        }
        let lv = v.as_matrix().dot(self.projector.objective().as_matrix());
        r.max((lv - self.level).abs() / (1.0 + self.level.abs()))
    }

    /// Objective `<-C, P_F(V)>` of the radial projection, from `lambda_min` alone.
    pub fn projected_objective(&self, lambda_min: f64) -> f64 {
        let f0 = -self
            .geometry
            .f
            .materialize()
            .as_matrix()
            .dot(self.projector.objective().as_matrix());
        f0 + (-self.level - f0) / (1.0 - lambda_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdSettings {
    pub mu: f64,
    /// Step size is `1 / beta`.
    pub beta: f64,
    pub max_iters: usize,
    pub restart: bool,
    /// `(s, delta)` window rule; `None` disables early stopping.
    pub early_stop: Option<(usize, f64)>,
    /// Iterations between drift checks (0 disables them).
    pub renorm_period: usize,
    pub record_trace: bool,
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgdStop {
    EarlyStop,
    IterationCap,
    Callback,
}

#[derive(Debug, Clone)]
pub struct PgdOutcome {
    /// The last extrapolated point `V_t` (the one whose value is monitored).
    pub iterate: AugmentedIterate,
    pub value: f64,
    pub lambda_min: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub stop: PgdStop,
    /// `f_mu(V_t)` for `t = 0, 1, ..`.
    pub history: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

/// Window rule: stop once no iterate in the last `s` improved on `f(V_{t-s})` by a relative `delta`.
pub fn window_converged(history: &[f64], s: usize, delta: f64) -> bool {
    let t = history.len();
    if s == 0 || t <= s {
        return false;
    }
    let base = history[t - 1 - s];
    let denom = base.abs().max(f64::MIN_POSITIVE);
    let best = history[t - s..]
        .iter()
        .fold(f64::NEG_INFINITY, |m, &f| m.max(f - base));
    best / denom < delta
}

/// Runs accelerated projected gradient ascent from `start`.
///
/// `callback(t, V_t)` is invoked before each step with the current extrapolated point.
pub fn accelerated_pgd(
    start: &AugmentedIterate,
    set: &LevelSet<'_>,
    settings: &PgdSettings,
    mut callback: impl FnMut(usize, &AugmentedIterate) -> Result<ControlFlow<()>>,
) -> Result<PgdOutcome> {
    if !(settings.beta > 0.0 && settings.beta.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "invalid step parameter beta = {}",
            settings.beta
        )));
    }
    let clock = Instant::now();
    let geo = set.geometry;
    let anchor = start.clone();
    let mut u_prev = start.clone();
    let mut v = start.clone();
    let mut ev = evaluate(&v, geo, settings.mu, true)?;
    let mut lambda = 1.0;
    let mut restarts = 0;
    let mut history = Vec::new();
    let mut trace = Vec::new();
    let step = 1.0 / settings.beta;
    let mut stop = PgdStop::IterationCap;
    let mut t = 0;
    loop {
        history.push(ev.value);
        if settings.record_trace {
            trace.push(TraceRow {
                iter: t,
                f_mu: ev.value,
                primal_obj_projected: set.projected_objective(ev.lambda_min),
                constraint_residual: set.residual(&v.v).max(v.v.max_abs_diff(&v.slack)),
                restarts,
                wall_ms: settings.timing.then(|| clock.elapsed().as_secs_f64() * 1e3),
            });
        }
        if callback(t, &v)?.is_break() {
            stop = PgdStop::Callback;
            break;
        }
        if let Some((s, delta)) = settings.early_stop {
            if window_converged(&history, s, delta) {
                stop = PgdStop::EarlyStop;
                break;
            }
        }
        if t >= settings.max_iters {
            break;
        }
        let dir = set.projector.project(&ev.gradient)?;
        let mut u_next = v.axpy(step, &dir);
        let gamma = momentum_gamma(lambda);
        lambda = next_lambda(lambda);
        let mut v_next = u_next.lerp(&u_prev, gamma);
        t += 1;
        if settings.renorm_period > 0 && t % settings.renorm_period == 0 {
            u_next = renormalize(&u_next, &anchor, set)?;
            v_next = renormalize(&v_next, &anchor, set)?;
        }
        let mut ev_next = evaluate(&v_next, geo, settings.mu, true)?;
        if settings.restart && ev_next.value < ev.value {
            restarts += 1;
            lambda = 1.0;
            v_next = u_next.clone();
            ev_next = evaluate(&v_next, geo, settings.mu, true)?;
        }
        u_prev = u_next;
        v = v_next;
        ev = ev_next;
    }
    Ok(PgdOutcome {
        iterate: v,
        value: ev.value,
        lambda_min: ev.lambda_min,
        iterations: t,
        restarts,
        stop,
        history,
        trace,
    })
}

/// Pulls `it` back onto the level set through `anchor + P(it - anchor)` after a drift check.
fn renormalize(
    it: &AugmentedIterate,
    anchor: &AugmentedIterate,
    set: &LevelSet<'_>,
) -> Result<AugmentedIterate> {
    let drift = set.residual(&it.v).max(it.v.max_abs_diff(&it.slack));
    if drift > DRIFT_TOL {
        return Err(Error::ConstraintDrift(drift));
    }
    let delta = set.projector.project_matrix(&(&it.v - &anchor.v));
    let mut v = anchor.v.clone();
    v.add_scaled(1.0, &delta);
    Ok(AugmentedIterate::from_primal(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_sequence() {
        assert_eq!(next_lambda(0.0), 1.0);
        assert!((next_lambda(1.0) - 0.5 * (1.0 + 5f64.sqrt())).abs() < 1e-15);
        assert_eq!(momentum_gamma(1.0), 0.0);
        assert!(momentum_gamma(next_lambda(1.0)) < 0.0);
    }

    #[test]
    fn window_rule() {
        let flat = vec![1.0; 5];
        assert!(!window_converged(&flat, 5, 1e-4));
        let flat = vec![1.0; 6];
        assert!(window_converged(&flat, 5, 1e-4));
        let rising: Vec<f64> = (0..10).map(|i| 1.0 + 0.01 * i as f64).collect();
        assert!(!window_converged(&rising, 5, 1e-4));
    }
}
