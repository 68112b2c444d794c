//! The primal solver and the certifying loop around it.

pub mod iterate;
pub mod pgd;
pub mod projection;
pub mod scheme;
pub mod trace;

use crate::certificate::{certify, DualCertificate, SearchMode, CERT_TOL};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::matlin::{SpectralShift, SymMatrix};
use crate::problem::{partnership_matrix, primal_objective, Partition, SdpInstance, SdpKind};
use crate::rounding::{round, select_k_trace, stream_seed, RoundingConfig, RoundingMethod};

pub use iterate::{
    lambda_min_f, radial_projection, radial_projection_augmented, smoothed_gradient,
    smoothed_objective, AugmentedIterate, StartGeometry,
};
pub use projection::{project_gradient_adaptive, project_gradient_fixed, Projector};
pub use scheme::{smoothed_subscheme, solve_sdp, warm_start};
pub use trace::TraceRow;

/// How the main phase obtains its start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartRule {
    /// Rounded-partition warm start followed by a short run.
    WarmStart,
    /// The outer level-by-level subscheme.
    Subscheme,
}

/// Choice of the smoothness constant `beta` (step size `1/beta`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `||F^{-1}||^2 / mu`.
    Standard,
    /// `(||F^{-1}||^2 + max_ab F_ab^{-2}) / (2 mu)`, a bound that also covers the slack block.
    Augmented,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative accuracy target in `(0, 1)`.
    pub epsilon: f64,
    /// Smoothing parameter; defaults to `epsilon / (6 ln d)`.
    pub mu: Option<f64>,
    pub t_max: usize,
    pub stop_window: usize,
    pub stop_delta: f64,
    /// Iterations between certificate attempts.
    pub certificate_period: usize,
    /// Gradient steps of the warm start.
    pub warmup_iters: usize,
    pub restart: bool,
    pub start: StartRule,
    pub step: StepRule,
    pub rounding: RoundingConfig,
    pub search_mode: SearchMode,
    /// Tolerance for certificate feasibility and for the dual/primal value match.
    pub cert_tol: f64,
    pub renorm_period: usize,
    pub record_trace: bool,
    /// Record wall-clock time in traces (makes them non-reproducible).
    pub timing: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            mu: None,
            t_max: 20_000,
            stop_window: 100,
            stop_delta: 1e-4,
            certificate_period: 10,
            warmup_iters: 50,
            restart: true,
            start: StartRule::WarmStart,
            step: StepRule::Standard,
            rounding: RoundingConfig::default(),
            search_mode: SearchMode::Direct,
            cert_tol: CERT_TOL,
            renorm_period: 50,
            record_trace: false,
            timing: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be in (0,1), got {}",
                self.epsilon
            )));
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "mu must be positive, got {mu}"
                )));
            }
        }
        if self.stop_window == 0 || self.certificate_period == 0 || self.warmup_iters == 0 {
            return Err(Error::InvalidInput(
                "stop window, certificate period and warmup must be >= 1".into(),
            ));
        }
        if self.rounding.restarts == 0 {
            return Err(Error::InvalidInput("rounding restarts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn mu_for(&self, d: usize) -> f64 {
        self.mu
            .unwrap_or_else(|| self.epsilon / (6.0 * (d as f64).ln()))
    }

    pub fn beta_for(&self, geo: &StartGeometry, mu: f64) -> f64 {
        self.step.beta(geo, mu)
    }

    /// Seed of every random choice the solver makes (all of them happen in rounding).
    pub fn seed(&self) -> u64 {
        self.rounding.rng_seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rounding.rng_seed = seed;
        self
    }

    /// Applies the recognized keys of `kv`; unknown keys are left for the caller.
    ///
    /// Keys: `epsilon mu t_max stop_window stop_delta certificate_period warmup_iters restart
    /// seed start step rounding rounding_restarts max_lloyd_iters search search_upper cert_tol
    /// renorm_period trace timing`.
    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        if let Some(v) = kv.get("epsilon")? {
            self.epsilon = v;
        }
        if let Some(v) = kv.get("mu")? {
            self.mu = Some(v);
        }
        if let Some(v) = kv.get("t_max")? {
            self.t_max = v;
        }
        if let Some(v) = kv.get("stop_window")? {
            self.stop_window = v;
        }
        if let Some(v) = kv.get("stop_delta")? {
            self.stop_delta = v;
        }
        if let Some(v) = kv.get("certificate_period")? {
            self.certificate_period = v;
        }
        if let Some(v) = kv.get("warmup_iters")? {
            self.warmup_iters = v;
        }
        if let Some(v) = kv.get("restart")? {
            self.restart = v;
        }
        if let Some(v) = kv.get("seed")? {
            self.rounding.rng_seed = v;
        }
        if let Some(v) = kv.get_str("start") {
            self.start = match v {
                "warm" => StartRule::WarmStart,
                "subscheme" => StartRule::Subscheme,
                _ => {
                    return Err(Error::Parse(format!(
                        "start={v}: expected warm or subscheme"
                    )))
                }
            };
        }
        if let Some(v) = kv.get_str("step") {
            self.step = match v {
                "standard" => StepRule::Standard,
                "augmented" => StepRule::Augmented,
                _ => {
                    return Err(Error::Parse(format!(
                        "step={v}: expected standard or augmented"
                    )))
                }
            };
        }
        if let Some(v) = kv.get_str("rounding") {
            self.rounding.method = match v {
                "lloyd" => RoundingMethod::LloydKmeansPP,
                "clink" => RoundingMethod::Clink,
                _ => {
                    return Err(Error::Parse(format!(
                        "rounding={v}: expected lloyd or clink"
                    )))
                }
            };
        }
        if let Some(v) = kv.get("rounding_restarts")? {
            self.rounding.restarts = v;
        }
        if let Some(v) = kv.get("max_lloyd_iters")? {
            self.rounding.max_lloyd_iters = v;
        }
        if let Some(v) = kv.get_str("search") {
            self.search_mode = match v {
                "direct" => SearchMode::Direct,
                "binary" => SearchMode::Binary {
                    upper: kv.require("search_upper")?,
                },
                _ => {
                    return Err(Error::Parse(format!(
                        "search={v}: expected direct or binary"
                    )))
                }
            };
        }
        if let Some(v) = kv.get("cert_tol")? {
            self.cert_tol = v;
        }
        if let Some(v) = kv.get("renorm_period")? {
            self.renorm_period = v;
        }
        if let Some(v) = kv.get("trace")? {
            self.record_trace = v;
        }
        if let Some(v) = kv.get("timing")? {
            self.timing = v;
        }
        self.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Certificate,
    EarlyStop,
    IterationCap,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Certificate => "certificate",
            Termination::EarlyStop => "early_stop",
            Termination::IterationCap => "iteration_cap",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Radial projection of the final iterate.
    pub u_final: SymMatrix,
    /// Primal objective of `u_final`.
    pub objective: f64,
    /// Gradient steps including the start construction.
    pub iterations: usize,
    pub terminated_by: Termination,
    /// A feasible certificate whose value matches the rounded partition, if one was found.
    pub certificate: Option<DualCertificate>,
    pub rounded: Option<Partition>,
    /// Number of groups the rounding used (from the trace for the adaptive SDP).
    pub k_selected: Option<usize>,
    pub restarts: usize,
    pub used_subscheme: bool,
    /// Level `<C, V>` of the main phase.
    pub level: f64,
    pub trace: Vec<TraceRow>,
}

/// Maps a relaxed solution to a partition with `k` groups.
pub trait RoundingOracle {
    fn round(&mut self, u: &SymMatrix, k: usize) -> Result<Partition>;
}

/// Produces a dual candidate for a partition.
pub trait CertificateOracle {
    fn certify(&mut self, inst: &SdpInstance, g: &Partition) -> Result<DualCertificate>;
}

/// Rounding through [`round`], with a fresh seed per call.
#[derive(Debug, Clone)]
pub struct LloydRounding {
    pub config: RoundingConfig,
    /// Number of rounding calls made so far.
    pub calls: usize,
}

impl LloydRounding {
    pub fn new(config: RoundingConfig) -> Self {
        Self { config, calls: 0 }
    }
}

impl RoundingOracle for LloydRounding {
    fn round(&mut self, u: &SymMatrix, k: usize) -> Result<Partition> {
        let cfg = RoundingConfig {
            rng_seed: stream_seed(self.config.rng_seed, self.calls as u64),
            ..self.config
        };
        self.calls += 1;
        round(u, k, &cfg)
    }
}

/// Certificate construction via [`certify`].
#[derive(Debug, Clone, Copy)]
pub struct SearchCertificate {
    pub mode: SearchMode,
    pub tol: f64,
}

impl CertificateOracle for SearchCertificate {
    fn certify(&mut self, inst: &SdpInstance, g: &Partition) -> Result<DualCertificate> {
        certify(inst, g, self.mode, self.tol)
    }
}

/// Feasible, and the dual value matches `<-C, B(G)>` up to `tol (1 + |value|)`.
pub fn certificate_matches(
    inst: &SdpInstance,
    g: &Partition,
    cert: &DualCertificate,
    tol: f64,
) -> Result<bool> {
    if !cert.feasible {
        return Ok(false);
    }
    let v = primal_objective(inst, &partnership_matrix(g))?;
    Ok((cert.value - v).abs() <= tol * (1.0 + v.abs()))
}

/// Rounds a projected iterate; the adaptive SDP takes `K` from its trace.
pub(crate) fn round_projected(
    inst: &SdpInstance,
    u: &SymMatrix,
    rounding: &mut dyn RoundingOracle,
) -> Result<(usize, Partition)> {
    let k = match inst.kind() {
        SdpKind::Fixed { k } => k,
        SdpKind::Adaptive { .. } => select_k_trace(u),
    };
    Ok((k, rounding.round(u, k)?))
}

pub(crate) struct CertifiedHit {
    pub partition: Partition,
    pub certificate: DualCertificate,
    pub k: usize,
}

pub(crate) fn certify_iterate(
    inst: &SdpInstance,
    prep: &scheme::Prepared,
    v: &AugmentedIterate,
    config: &SolverConfig,
    rounding: &mut dyn RoundingOracle,
    certifier: &mut dyn CertificateOracle,
) -> Result<Option<CertifiedHit>> {
    let u = radial_projection_augmented(v, &prep.geometry)?;
    let (k, g) = round_projected(inst, &u, rounding)?;
    let cert = certifier.certify(inst, &g)?;
    if certificate_matches(inst, &g, &cert, config.cert_tol)? {
        Ok(Some(CertifiedHit {
            partition: g,
            certificate: cert,
            k,
        }))
    } else {
        Ok(None)
    }
}

/// The certifying loop: primal iterations with a rounding and certificate attempt every
/// `certificate_period` steps, stopping at the first certified partition.
pub fn force(
    inst: &SdpInstance,
    f: SpectralShift,
    config: &SolverConfig,
    rounding: &mut dyn RoundingOracle,
    certifier: &mut dyn CertificateOracle,
) -> Result<SolveResult> {
    scheme::run_scheme(inst, f, config, rounding, Some(certifier))
}

/// [`force`] with Lloyd rounding and the configured certificate search.
pub fn force_default(inst: &SdpInstance, config: &SolverConfig) -> Result<SolveResult> {
    let f = inst.feasible_start()?;
    let mut rounding = LloydRounding::new(config.rounding);
    let mut cert = SearchCertificate {
        mode: config.search_mode,
        tol: config.cert_tol,
    };
    force(inst, f, config, &mut rounding, &mut cert)
}
