//! `force`: solve clustering SDP instances, check certificates, simulate G-Latent data and
//! run the experiment families.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use force_core::certificate::{certify, kappa_hat, verify, DualCertificate, SearchMode};
use force_core::experiments::{
    run_bench, run_heuristics, run_phase, write_bench_csv, write_heuristics_csv, write_phase_csv,
    BenchSpec, HeuristicsSpec, PhaseSpec,
};
use force_core::glatent::{build_instance, GLatentDesign, GammaChoice};
use force_core::kv::KvMap;
use force_core::problem::{partnership_matrix, primal_objective, Partition, SdpInstance, SdpKind};
use force_core::rounding::{round, select_k_trace};
use force_core::solver::trace::write_trace;
use force_core::solver::{force_default, solve_sdp, SolveResult, SolverConfig};

#[derive(Parser, Debug)]
#[command(
    name = "force",
    version,
    about = "First-order solver and dual certificates for the K-means SDP"
)]
struct Cli {
    /// Seed for every random choice (rounding, simulation, experiments).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for experiments (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Certificate feasibility tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve an instance, writing the partition, certificate, trace and a summary.
    Solve(SolveArgs),
    /// Build and verify the dual certificate of a given partition.
    Certify(CertifyArgs),
    /// Simulate G-Latent data and write the resulting instance.
    Simulate(SimulateArgs),
    /// Certificate-existence rate over a noise grid.
    Phase(ExperimentArgs),
    /// Compare solvers and heuristics on simulated designs.
    Bench(ExperimentArgs),
    /// Heuristic clusterings of raw and relaxed matrices.
    Heuristics(ExperimentArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    /// Primal iterations with periodic certificate attempts.
    Full,
    /// Primal iterations only.
    PrimalOnly,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum KindArg {
    Fixed,
    Adaptive,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Instance header (key=value file next to the matrix CSV).
    instance: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    mode: Mode,
    /// Override the instance kind.
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    /// Number of groups when switching to the fixed SDP.
    #[arg(long = "k")]
    k: Option<usize>,
    /// Trace penalty when switching to the adaptive SDP.
    #[arg(long)]
    kappa_hat: Option<f64>,
    /// Solver settings as key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    t_max: Option<usize>,
    /// Reference objective value for the relative error in the summary.
    #[arg(long)]
    reference: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "force_out")]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SearchArg {
    Direct,
    Binary,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    instance: PathBuf,
    /// Partition file: one group per line, 1-based comma-separated indices.
    partition: PathBuf,
    #[arg(long, value_enum, default_value = "direct")]
    search: SearchArg,
    /// Upper end of the binary search interval.
    #[arg(long)]
    upper: Option<f64>,
    /// Directory for certificate.txt and certificate_y.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum GammaArg {
    Oracle,
    Pecok,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Design file (d, K, rho, gamma, optional sizes, seed).
    design: PathBuf,
    /// Number of observations.
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "fixed")]
    kind: KindArg,
    #[arg(long, value_enum, default_value = "oracle")]
    gamma_mode: GammaArg,
    #[arg(long, default_value = "force_sim")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Experiment spec as key=value lines.
    spec: PathBuf,
    /// CSV destination (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failures split by exit code.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<force_core::Error> for Failure {
    fn from(e: force_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

type CmdResult = std::result::Result<(), Failure>;

fn read_kv(path: &Path) -> std::result::Result<KvMap, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    KvMap::parse(&text).map_err(|e| Failure::Usage(anyhow!("{}: {e}", path.display())))
}

fn apply_globals(cli: &Cli, config: &mut SolverConfig) {
    if let Some(seed) = cli.seed {
        config.rounding.rng_seed = seed;
    }
    if let Some(tol) = cli.tol {
        config.cert_tol = tol;
    }
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes `<stem>.txt` (scalar fields) and `<stem>_y.csv` (multipliers).
fn write_certificate(dir: &Path, stem: &str, cert: &DualCertificate) -> anyhow::Result<()> {
    write_file(&dir.join(format!("{stem}.txt")), &cert.to_kv().to_text())?;
    write_file(&dir.join(format!("{stem}_y.csv")), &cert.y_csv())
}

fn load_instance(args: &SolveArgs) -> std::result::Result<SdpInstance, Failure> {
    let inst = SdpInstance::read(&args.instance)
        .with_context(|| format!("reading instance {}", args.instance.display()))?;
    let Some(kind) = args.kind else {
        return Ok(inst);
    };
    let d = inst.d_matrix().clone();
    let built = match (kind, inst.kind()) {
        (KindArg::Fixed, SdpKind::Fixed { k }) => SdpInstance::fixed(d, args.k.unwrap_or(k)),
        (KindArg::Fixed, SdpKind::Adaptive { .. }) => {
            let k = args
                .k
                .ok_or_else(|| usage("--kind fixed on an adaptive instance needs --k"))?;
            SdpInstance::fixed(d, k)
        }
        (KindArg::Adaptive, SdpKind::Adaptive { kappa_hat }) => {
            SdpInstance::adaptive(d, args.kappa_hat.unwrap_or(kappa_hat))
        }
        (KindArg::Adaptive, SdpKind::Fixed { .. }) => {
            let kh = args
                .kappa_hat
                .ok_or_else(|| usage("--kind adaptive on a fixed instance needs --kappa-hat"))?;
            SdpInstance::adaptive(d, kh)
        }
    };
    built.map_err(|e| Failure::Usage(e.into()))
}

fn cmd_solve(cli: &Cli, args: &SolveArgs) -> CmdResult {
    let mut config = SolverConfig {
        record_trace: true,
        ..Default::default()
    };
    if let Some(path) = &args.config {
        config
            .apply_kv(&read_kv(path)?)
            .map_err(|e| Failure::Usage(e.into()))?;
    }
    if let Some(eps) = args.epsilon {
        config.epsilon = eps;
    }
    if let Some(t) = args.t_max {
        config.t_max = t;
    }
    apply_globals(cli, &mut config);
    config.validate().map_err(|e| Failure::Usage(e.into()))?;
    let inst = load_instance(args)?;

    let clock = Instant::now();
    let result: SolveResult = match args.mode {
        Mode::Full => force_default(&inst, &config)?,
        Mode::PrimalOnly => solve_sdp(&inst, inst.feasible_start()?, &config)?,
    };
    let wall_ms = clock.elapsed().as_secs_f64() * 1e3;

    let (k, partition) = match (&result.rounded, result.k_selected) {
        (Some(g), Some(k)) => (k, g.clone()),
        _ => {
            let k = match inst.kind() {
                SdpKind::Fixed { k } => k,
                SdpKind::Adaptive { .. } => select_k_trace(&result.u_final),
            };
            (k, round(&result.u_final, k, &config.rounding)?)
        }
    };

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_file(&args.out.join("partition.txt"), &partition.to_text())?;
    let trace_path = args.out.join("trace.csv");
    let file = fs::File::create(&trace_path)
        .with_context(|| format!("writing {}", trace_path.display()))?;
    write_trace(&result.trace, BufWriter::new(file))?;
    match &result.certificate {
        Some(c) => write_certificate(&args.out, "certificate", c)?,
        None => {
            for name in ["certificate.txt", "certificate_y.csv"] {
                let stale = args.out.join(name);
                if stale.exists() {
                    fs::remove_file(&stale)
                        .with_context(|| format!("removing stale {}", stale.display()))?;
                }
            }
        }
    }

    let status = if result.certificate.is_some() {
        "certified"
    } else {
        result.terminated_by.as_str()
    };
    let rounded_objective = primal_objective(&inst, &partnership_matrix(&partition))?;
    // The certified value is exact; otherwise report the relaxed objective.
    let objective = if result.certificate.is_some() {
        rounded_objective
    } else {
        result.objective
    };
    let rel_err = args
        .reference
        .map(|r| {
            format!(
                "{:e}",
                (objective - r).abs() / r.abs().max(f64::MIN_POSITIVE)
            )
        })
        .unwrap_or_default();
    let summary = format!(
        "status={status} objective={objective} rel_err={rel_err} k={k} iterations={} restarts={} wall_ms={wall_ms:.1}",
        result.iterations, result.restarts
    );
    write_file(&args.out.join("summary.txt"), &format!("{summary}\n"))?;
    println!("{summary}");
    Ok(())
}

fn cmd_certify(cli: &Cli, args: &CertifyArgs) -> CmdResult {
    let inst = SdpInstance::read(&args.instance)
        .with_context(|| format!("reading instance {}", args.instance.display()))?;
    let file = fs::File::open(&args.partition)
        .with_context(|| format!("reading {}", args.partition.display()))?;
    let g = Partition::read_from(BufReader::new(file)).map_err(|e| Failure::Usage(e.into()))?;
    let tol = cli.tol.unwrap_or(force_core::certificate::CERT_TOL);
    let mode = match args.search {
        SearchArg::Direct => SearchMode::Direct,
        SearchArg::Binary => SearchMode::Binary {
            upper: args
                .upper
                .ok_or_else(|| usage("--search binary needs --upper"))?,
        },
    };
    let cert = certify(&inst, &g, mode, tol)?;
    let report = verify(&cert, &inst, &g, tol)?;
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        write_certificate(out, "certificate", &cert)?;
    }
    println!(
        "feasible={} value={} primal={} min_eig={:e} min_cross_yab={:e} value_gap={:e} verified={}",
        cert.feasible,
        cert.value,
        primal_objective(&inst, &partnership_matrix(&g))?,
        report.min_eig,
        report.min_cross_yab,
        report.value_gap,
        report.ok
    );
    Ok(())
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> CmdResult {
    let kv = read_kv(&args.design)?;
    let mut design = GLatentDesign::from_kv(&kv).map_err(|e| Failure::Usage(e.into()))?;
    if let Some(seed) = cli.seed {
        design.seed = seed;
    }
    if args.n == 0 {
        return Err(usage("--n must be >= 1"));
    }
    let gamma = match args.gamma_mode {
        GammaArg::Oracle => GammaChoice::Oracle,
        GammaArg::Pecok => GammaChoice::Pecok,
    };
    let sim = build_instance(&design, args.n, args.kind == KindArg::Fixed, gamma)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let sample_path = args.out.join("sample.csv");
    let file = fs::File::create(&sample_path)
        .with_context(|| format!("writing {}", sample_path.display()))?;
    sim.sample.write_csv(BufWriter::new(file))?;
    sim.instance.write(&args.out.join("instance.txt"))?;
    write_file(&args.out.join("truth.txt"), &sim.truth.gstar.to_text())?;
    write_file(&args.out.join("design.txt"), &design.to_kv().to_text())?;
    let vstar = primal_objective(&sim.instance, &partnership_matrix(&sim.truth.gstar))?;
    let mut extra = String::new();
    if args.kind == KindArg::Adaptive {
        extra = format!(" kappa_hat={}", kappa_hat(&sim.gamma_hat, args.n)?);
    }
    println!(
        "wrote {} d={} n={} delta={} reference={vstar}{extra}",
        args.out.display(),
        design.d,
        args.n,
        sim.truth.delta
    );
    Ok(())
}

fn experiment_kv(cli: &Cli, args: &ExperimentArgs) -> std::result::Result<KvMap, Failure> {
    let mut kv = read_kv(&args.spec)?;
    if let Some(seed) = cli.seed {
        kv.insert("seed", seed);
    }
    if let Some(tol) = cli.tol {
        kv.insert("cert_tol", tol);
    }
    Ok(kv)
}

fn emit(
    args: &ExperimentArgs,
    write: impl FnOnce(&mut dyn Write) -> force_core::Result<()>,
) -> CmdResult {
    match &args.out {
        Some(path) => {
            let file =
                fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
            let mut w = BufWriter::new(file);
            write(&mut w)?;
            w.flush().context("flushing CSV")?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
        }
    }
    Ok(())
}

fn cmd_phase(cli: &Cli, args: &ExperimentArgs) -> CmdResult {
    let spec =
        PhaseSpec::from_kv(&experiment_kv(cli, args)?).map_err(|e| Failure::Usage(e.into()))?;
    let rows = run_phase(&spec)?;
    emit(args, |w| write_phase_csv(&rows, w))
}

fn cmd_bench(cli: &Cli, args: &ExperimentArgs) -> CmdResult {
    let spec =
        BenchSpec::from_kv(&experiment_kv(cli, args)?).map_err(|e| Failure::Usage(e.into()))?;
    let rows = run_bench(&spec)?;
    emit(args, |w| write_bench_csv(&rows, w))
}

fn cmd_heuristics(cli: &Cli, args: &ExperimentArgs) -> CmdResult {
    let spec = HeuristicsSpec::from_kv(&experiment_kv(cli, args)?)
        .map_err(|e| Failure::Usage(e.into()))?;
    let rows = run_heuristics(&spec)?;
    emit(args, |w| write_heuristics_csv(&rows, w))
}

fn run(cli: &Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Solve(a) => cmd_solve(cli, a),
        Command::Certify(a) => cmd_certify(cli, a),
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Phase(a) => cmd_phase(cli, a),
        Command::Bench(a) => cmd_bench(cli, a),
        Command::Heuristics(a) => cmd_heuristics(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
