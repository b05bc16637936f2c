//! `tatwave`: synthetic data, reconstruction and diagnostics from the shell.
//!
//! Exit status: 0 success, 1 bad input or violated precondition, 2 numerical
//! failure, 3 iteration did not converge.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tatwave::io::{read_field, read_header, read_trace, write_csv, write_field, write_pgm, write_trace, FileHeader};
use tatwave::medium::resample;
use tatwave::ops::adjoint_check;
use tatwave::phantom::{measure_refined, Blob, RandomBlobs};
use tatwave::solver::energy_history;
use tatwave::*;

#[derive(Parser)]
#[command(name = "tatwave", version, about = "Thermoacoustic reconstruction with an impedance boundary")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate boundary data for a phantom.
    Simulate(SimulateArgs),
    /// Recover the initial field from boundary data.
    Reconstruct(ReconstructArgs),
    /// Ray census: fraction of rays reaching the observed set and the time they need.
    Gcc(GccArgs),
    /// Seeded pairing test of the solution operator and its adjoint.
    AdjointCheck(AdjointArgs),
    /// Energy history of a forward solve.
    EnergyCheck(EnergyArgs),
    /// Write a phantom field.
    MakePhantom(PhantomArgs),
    /// Print the header of an EPF1 or EPT1 file.
    Info { file: PathBuf },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    phantom: PathBuf,
    /// Medium spec (`const:1`, `twolens`, `lens:...`, ...) or an EPF speed field.
    #[arg(long)]
    medium: String,
    /// Impedance spec, e.g. `full:1` or `faces:right,top:1`.
    #[arg(long)]
    lambda: String,
    /// Observed set; defaults to `{λ > 0}`.
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
    /// Relative noise level.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Refinement of the generating grid and time step.
    #[arg(long, default_value_t = 2)]
    fine_factor: usize,
    #[arg(long, default_value_t = 0.5)]
    cfl: f64,
    /// Also write a PGM of the trace (columns: boundary nodes, rows: time).
    #[arg(long)]
    pgm: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Cg,
    Neumann,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(value_enum)]
    method: MethodArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    medium: String,
    /// Checked against the impedance stored in the data file.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// CG iterations or Neumann terms.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Skip the ray estimate of the required observation time.
    #[arg(long)]
    no_gcc_check: bool,
    #[arg(long)]
    pgm: bool,
}

#[derive(Args)]
struct GccArgs {
    #[arg(long)]
    medium: String,
    /// Observed set, e.g. `full` or `faces:right`.
    #[arg(long)]
    gamma_spec: String,
    /// Nodes per axis; ignored when the medium is an EPF file.
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, default_value = "1,1", value_parser = parse_pair)]
    size: [f64; 2],
    /// Start points per axis.
    #[arg(long, default_value_t = 10)]
    points: usize,
    #[arg(long, default_value_t = 72)]
    directions: usize,
    /// `full` or `horizontal:half_width_deg`.
    #[arg(long, default_value = "full")]
    fan: String,
    /// Longest travel time; defaults to 20 diameters at the slowest speed.
    #[arg(long)]
    t_max: Option<f64>,
    /// Arc-length step; defaults to 2e-3 diameters.
    #[arg(long)]
    ds: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Pde,
}

#[derive(Args)]
struct AdjointArgs {
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    grid: usize,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EnergyArgs {
    #[arg(long)]
    phantom: PathBuf,
    #[arg(long)]
    medium: String,
    #[arg(long)]
    lambda: String,
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    cfl: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, default_value = "gaussian_bumps")]
    kind: String,
    /// Explicit blobs `x,y,r,a;x,y,r,a`; `r` is the standard deviation for Gaussians.
    #[arg(long, conflicts_with = "count")]
    blobs: Option<String>,
    /// Number of randomly placed blobs.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Taper half-width for smoothed disks.
    #[arg(long, default_value_t = 0.03)]
    smoothing: f64,
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, default_value = "1,1", value_parser = parse_pair)]
    size: [f64; 2],
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pgm: bool,
}

/// Error carrying its exit status.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let err = e.into();
        let code = match err.downcast_ref::<Error>() {
            Some(e) if e.is_numerical() => 2,
            _ => 1,
        };
        Self { code, err }
    }
}

fn numerical(msg: String) -> Failure {
    Failure { code: 2, err: anyhow!(msg) }
}

type CmdResult = std::result::Result<u8, Failure>;

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
    match v.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err(format!("expected two comma-separated numbers, got '{s}'")),
    }
}

fn is_field_file(arg: &str) -> bool {
    arg.ends_with(".epf") || Path::new(arg).is_file()
}

fn load_medium(arg: &str, grid: Grid2D) -> anyhow::Result<MediumParams> {
    if is_field_file(arg) {
        let c = read_field(arg).with_context(|| format!("reading medium {arg}"))?;
        let c = if *c.grid() == grid { c } else { resample(&c, grid) };
        Ok(MediumParams::new(c, ScalarField::zeros(grid))?)
    } else {
        let spec: MediumSpec = arg.parse()?;
        Ok(make_medium(&spec, grid)?)
    }
}

fn with_ext(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn trace_image(d: &BoundaryTrace) -> anyhow::Result<ScalarField> {
    let (nb, levels) = (d.n_nodes(), d.times().levels());
    let g = Grid2D::new(nb, levels, 1.0, 1.0, [0.0, 0.0])?;
    // Time runs up the image: the PGM writer puts the last level on top.
    Ok(ScalarField::from_fn(g, |x, y| d.get(y as usize, x as usize)))
}

fn simulate(a: SimulateArgs) -> CmdResult {
    let u0 = read_field(&a.phantom).with_context(|| format!("reading phantom {}", a.phantom.display()))?;
    let g = *u0.grid();
    let lambda: LambdaSpec = a.lambda.parse()?;
    let gamma: Option<GammaSpec> = a.gamma.as_deref().map(str::parse).transpose()?;
    if a.fine_factor == 0 {
        return Err(anyhow!("--fine-factor must be at least 1").into());
    }
    if !(a.noise >= 0.0) {
        return Err(anyhow!("--noise must be >= 0").into());
    }
    let bnd = BoundarySpec::from_specs(g, &lambda, gamma.as_ref())?;
    let cfg = WaveRunConfig::for_window(load_medium(&a.medium, g)?, bnd, a.tau, a.cfl)?;
    let d = if a.fine_factor == 1 {
        tatwave::solver::measure(&u0, &cfg)?
    } else {
        let fg = g.refined(a.fine_factor)?;
        let fine_med = load_medium(&a.medium, fg)?;
        measure_refined(&resample(&u0, fg), fine_med, &lambda, gamma.as_ref(), &cfg, a.fine_factor)?
    };
    let d = add_noise(&d, &NoiseSpec { level: a.noise, seed: a.seed }, cfg.bnd())?;
    write_trace(&a.out, &d, cfg.bnd())?;
    if a.pgm {
        write_pgm(with_ext(&a.out, "pgm"), &trace_image(&d)?)?;
    }
    println!("nt={} dt={} boundary_nodes={} observed={}", cfg.times().nt(), cfg.times().dt(), cfg.bnd().len(), cfg.bnd().gamma_count());
    Ok(0)
}

fn reconstruct(a: ReconstructArgs) -> CmdResult {
    let file = read_trace(&a.data).with_context(|| format!("reading data {}", a.data.display()))?;
    let g = *file.bnd.grid();
    if let Some(l) = &a.lambda {
        let spec: LambdaSpec = l.parse()?;
        let expected: Vec<f64> = file.bnd.nodes().iter().map(|n| spec.value_at(&g, n)).collect();
        if expected != file.bnd.lambda() {
            return Err(anyhow!("--lambda '{l}' does not match the impedance stored in {}", a.data.display()).into());
        }
    }
    let med = load_medium(&a.medium, g)?;
    let cfg = WaveRunConfig::with_options(med, file.bnd.clone(), *file.trace.times(), 1.0, AdjointMode::default())?;
    let tau = cfg.times().tau();
    if !a.no_gcc_check {
        let model = GridSpeed::new(cfg.med().c().clone())?;
        let diam = g.diameter();
        let rays = estimate_tau(&model, cfg.bnd(), 8, &DirectionFan::full(36), 20.0 * diam / cfg.med().c_min(), 2e-3 * diam)?;
        match rays.tau_hat {
            Some(t) if rays.fraction_reached < 1.0 => eprintln!(
                "warning: only {:.1}% of rays reach the observed set (tau_hat {t:.4} among those)",
                100.0 * rays.fraction_reached
            ),
            Some(t) if tau < t => eprintln!("warning: tau = {tau:.4} is below the ray estimate {t:.4}"),
            None => eprintln!("warning: no ray reaches the observed set"),
            _ => {}
        }
    }
    let report = match a.method {
        MethodArg::Cg => {
            let opts = CgOptions { rel_tol: a.tol, max_iters: a.max_iter.unwrap_or(200), ..Default::default() };
            reconstruct_cg(&file.trace, &cfg, &opts)?
        }
        MethodArg::Neumann => {
            let opts = NeumannOptions { rel_tol: a.tol, max_terms: a.max_iter.unwrap_or(100), ..Default::default() };
            reconstruct_neumann(&file.trace, &cfg, &opts)?
        }
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !report.estimate.is_finite() {
        return Err(numerical("reconstruction produced non-finite values".into()));
    }
    write_field(&a.out, &report.estimate)?;
    if let Some(h) = &a.history {
        report.write_history_csv(BufWriter::new(File::create(h)?))?;
    }
    if a.pgm {
        write_pgm(with_ext(&a.out, "pgm"), &report.estimate)?;
    }
    println!(
        "iterations={} converged={} rate={:.6e} final={:.6e}",
        report.iterations,
        report.converged,
        report.rate,
        report.history.last().copied().unwrap_or(f64::NAN)
    );
    if report.converged {
        Ok(0)
    } else {
        eprintln!("error: not converged");
        Ok(3)
    }
}

fn parse_fan(s: &str, count: usize) -> anyhow::Result<DirectionFan> {
    match s.split_once(':') {
        None if s == "full" => Ok(DirectionFan::full(count)),
        Some(("horizontal", deg)) => {
            let deg: f64 = deg.parse().with_context(|| format!("bad fan half-width '{deg}'"))?;
            Ok(DirectionFan::horizontal(deg.to_radians(), count))
        }
        _ => bail!("unknown fan '{s}' (expected full or horizontal:deg)"),
    }
}

fn gcc(a: GccArgs) -> CmdResult {
    let gamma: GammaSpec = a.gamma_spec.parse()?;
    let (grid, model, c_min): (Grid2D, Box<dyn SpeedModel>, f64) = if is_field_file(&a.medium) {
        let c = read_field(&a.medium).with_context(|| format!("reading medium {}", a.medium))?;
        let (g, cmin) = (*c.grid(), c.min());
        (g, Box::new(GridSpeed::new(c)?), cmin)
    } else {
        let g = Grid2D::rectangle(a.grid, a.grid, a.size[0], a.size[1])?;
        let spec: MediumSpec = a.medium.parse()?;
        let cmin = make_medium(&spec, g)?.c_min();
        (g, Box::new(spec.profile(&g)?), cmin)
    };
    let bnd = BoundarySpec::from_specs(grid, &LambdaSpec::zero(), Some(&gamma))?;
    let diam = grid.diameter();
    let t_max = a.t_max.unwrap_or(20.0 * diam / c_min);
    let ds = a.ds.unwrap_or(2e-3 * diam);
    let report = estimate_tau(model.as_ref(), &bnd, a.points, &parse_fan(&a.fan, a.directions)?, t_max, ds)?;
    if let Some(path) = &a.report {
        report.write_csv(BufWriter::new(File::create(path)?))?;
    }
    print!("{}", report.summary());
    Ok(0)
}

fn adjoint(a: AdjointArgs) -> CmdResult {
    let g = Grid2D::unit_square(a.grid)?;
    let med = MediumParams::constant(g, 1.0, 0.0)?;
    let bnd = BoundarySpec::uniform(g, 1.0)?;
    let dt = 0.5 * g.hx().min(g.hy());
    let cfg = WaveRunConfig::with_options(med, bnd, TimeAxis::new(dt, a.steps)?, 0.5, AdjointMode::default())?;
    let mut report = adjoint_check(&cfg, a.trials, a.seed)?;
    let (mode, name) = match a.mode {
        ModeArg::Exact => (AdjointMode::ExactDiscrete, "exact_discrete"),
        ModeArg::Pde => (AdjointMode::PdeFaithful, "pde_faithful"),
    };
    report.trials.retain(|t| t.mode == name);
    if let Some(path) = &a.report {
        report.write_csv(BufWriter::new(File::create(path)?))?;
    }
    let worst = report.max_defect(mode);
    println!("mode={name} trials={} max_defect={worst:.3e}", a.trials);
    if matches!(a.mode, ModeArg::Exact) && !(worst < 1e-12) {
        return Err(numerical(format!("adjoint defect {worst:.3e} exceeds 1e-12")));
    }
    Ok(0)
}

fn energy_check(a: EnergyArgs) -> CmdResult {
    let u0 = read_field(&a.phantom).with_context(|| format!("reading phantom {}", a.phantom.display()))?;
    let g = *u0.grid();
    let bnd = BoundarySpec::from_specs(g, &a.lambda.parse()?, None)?;
    let cfg = WaveRunConfig::for_window(load_medium(&a.medium, g)?, bnd, a.tau, a.cfl)?;
    let hist = energy_history(&u0, &cfg)?;
    if let Some(path) = &a.out {
        write_csv(path, &hist)?;
    }
    let e0 = hist.first().map_or(0.0, |s| s.staggered);
    let max_rise = hist.windows(2).map(|w| w[1].staggered - w[0].staggered).fold(0.0f64, f64::max);
    let last = hist.last().map_or(0.0, |s| s.staggered);
    println!("levels={} e0={e0:.6e} e_final={last:.6e} max_rise={max_rise:.3e}", hist.len());
    if !(max_rise <= 1e-12 * e0) || !last.is_finite() {
        return Err(numerical(format!("discrete energy rose by {max_rise:.3e} (E0 = {e0:.3e})")));
    }
    Ok(0)
}

fn parse_blobs(s: &str) -> anyhow::Result<Vec<Blob>> {
    s.split(';')
        .map(str::trim)
        .filter(|b| !b.is_empty())
        .map(|b| {
            let v: Vec<f64> = b
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("bad blob '{b}'"))?;
            match v.as_slice() {
                [x, y, r, amp] => Ok(Blob { center: [*x, *y], radius: *r, amplitude: *amp }),
                _ => bail!("blob '{b}' needs x,y,r,a"),
            }
        })
        .collect()
}

fn make_phantom_cmd(a: PhantomArgs) -> CmdResult {
    let kind: PhantomKind = a.kind.parse()?;
    let g = Grid2D::rectangle(a.grid, a.grid, a.size[0], a.size[1])?;
    let (blobs, random) = match (&a.blobs, a.count) {
        (Some(b), _) => (parse_blobs(b)?, None),
        (None, Some(n)) => (Vec::new(), Some(RandomBlobs::new(n, a.seed))),
        (None, None) => return Err(anyhow!("give either --blobs or --count").into()),
    };
    let spec = PhantomSpec { kind, blobs, smoothing: a.smoothing, random };
    let f = make_phantom(&spec, g)?;
    write_field(&a.out, &f)?;
    if a.pgm {
        write_pgm(with_ext(&a.out, "pgm"), &f)?;
    }
    println!("nx={} ny={} min={:.6e} max={:.6e}", g.nx(), g.ny(), f.min(), f.max());
    Ok(0)
}

fn info(path: &Path) -> CmdResult {
    let header = read_header(path)?;
    // Read the payload too so truncated or inconsistent files are reported.
    match header {
        FileHeader::Field(_) => {
            read_field(path)?;
        }
        FileHeader::Trace(_) => {
            read_trace(path)?;
        }
    }
    println!("{header}");
    Ok(0)
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Gcc(a) => gcc(a),
        Command::AdjointCheck(a) => adjoint(a),
        Command::EnergyCheck(a) => energy_check(a),
        Command::MakePhantom(a) => make_phantom_cmd(a),
        Command::Info { file } => info(&file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{first}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
