//! `gaussbound` command-line driver.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use gaussbound::bounds::{
    check_two_sided, compose_long_time_with, compute_constants, epsilon_upper_constants, BoundConstants,
};
use gaussbound::coeffs::{validate_assumptions, SpdMatrix};
use gaussbound::config::ProblemConfig;
use gaussbound::kernels::GenGaussKernel;
use gaussbound::levi::{
    lemma_sweep, phi_series_with, EnvelopeVariant, LeviOptions, LeviSolution, Majorant, SeriesOptions,
    SolutionCache, StopRule,
};
use gaussbound::oracle::{compare, fd_solve, FdConfig};
use gaussbound::parametrix::check_inverse_inequalities;
use gaussbound::{CoefficientField, Error, KernelQuery, QuadratureScheme, QuerySampler};

const SUCCESS: i32 = 0;
const CHECK_FAILED: i32 = 1;
const USAGE: i32 = 2;

/// Refinement differences below this are treated as converged.
const NOISE_FLOOR: f64 = 1e-13;

#[derive(Parser, Debug)]
#[command(name = "gaussbound", version, about = "Parametrix fundamental solutions and their Gaussian bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate E at query points
    Eval(Common),
    /// Levi iterates and tail diagnostics at one query
    Series(Common),
    /// Print the bound constants
    Constants(Common),
    /// Kernel identities and coefficient assumptions
    CheckIdentities(Common),
    /// Certify lower <= E <= upper at random queries
    CheckBounds(Common),
    /// Compare E with a finite-difference solution
    OracleCompare(Common),
    /// Quadrature validation against the closed-form space-time convolution
    Lemma21(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Largest t - tau sampled (default 1; 0.25 for oracle-compare)
    #[arg(long)]
    horizon: Option<f64>,
    /// Use the epsilon-family upper constants
    #[arg(long)]
    eps: Option<f64>,
    /// Source point, comma separated (default origin)
    #[arg(long, allow_hyphen_values = true)]
    xi: Option<String>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    tau: f64,
    /// Query "x1,...,xn,t"; repeatable
    #[arg(long, allow_hyphen_values = true)]
    at: Vec<String>,
    /// Number of Levi terms for `series`
    #[arg(long, default_value_t = 6)]
    terms: usize,
    /// Largest relative error accepted by oracle-compare
    #[arg(long, default_value_t = 0.05)]
    max_rel: f64,
}

enum Failure {
    Usage(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Runs the CLI with process stdout/stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { SUCCESS };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Eval(c) => eval(c, out),
        Command::Series(c) => series(c, out),
        Command::Constants(c) => constants(c, out),
        Command::CheckIdentities(c) => check_identities(c, out),
        Command::CheckBounds(c) => check_bounds(c, out),
        Command::OracleCompare(c) => oracle_compare(c, out),
        Command::Lemma21(c) => lemma21(c, out),
    };
    match result {
        Ok(()) => SUCCESS,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            USAGE
        }
        Err(Failure::Check(m)) => {
            let _ = writeln!(err, "check failed: {m}");
            CHECK_FAILED
        }
    }
}

struct Problem {
    config: ProblemConfig,
    field: CoefficientField,
}

fn load(c: &Common) -> std::result::Result<Problem, Failure> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config PATH is required".into()))?;
    load_path(path)
}

fn load_path(path: &Path) -> std::result::Result<Problem, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let config = ProblemConfig::parse(&text).map_err(|e| match e {
        Error::Config { line, message } if line > 0 => Failure::Usage(format!("{}:{line}: {message}", path.display())),
        other => Failure::Usage(format!("{}: {other}", path.display())),
    })?;
    let field = config.field().map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(Problem { config, field })
}

fn parse_list(s: &str, what: &str) -> std::result::Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Failure::Usage(format!("{what}: expected comma-separated numbers, got '{s}'")))
}

fn source(c: &Common, n: usize) -> std::result::Result<Vec<f64>, Failure> {
    match &c.xi {
        None => Ok(vec![0.0; n]),
        Some(s) => {
            let v = parse_list(s, "--xi")?;
            if v.len() != n {
                return Err(Failure::Usage(format!("--xi needs {n} coordinates, got {}", v.len())));
            }
            Ok(v)
        }
    }
}

fn horizon(c: &Common, default: f64) -> std::result::Result<f64, Failure> {
    let h = c.horizon.unwrap_or(default);
    if !(h > 0.0 && h.is_finite()) {
        return Err(Failure::Usage(format!("--horizon must be positive, got {h}")));
    }
    Ok(h)
}

/// Explicit `--at` queries, or random ones around the source.
fn queries(c: &Common, n: usize, max_dt: f64, rho_max: f64) -> std::result::Result<Vec<KernelQuery>, Failure> {
    let xi = source(c, n)?;
    if !c.at.is_empty() {
        return c
            .at
            .iter()
            .map(|s| {
                let v = parse_list(s, "--at")?;
                if v.len() != n + 1 {
                    return Err(Failure::Usage(format!("--at needs {} numbers (x and t), got {}", n + 1, v.len())));
                }
                Ok(KernelQuery::new(&v[..n], v[n], &xi, c.tau)?)
            })
            .collect();
    }
    let raw = QuerySampler::new(max_dt, rho_max).draw(n, c.queries, c.seed)?;
    Ok(raw
        .into_iter()
        .map(|q| KernelQuery::from_offsets(&xi, c.tau, q.dx, q.dt))
        .collect::<gaussbound::Result<_>>()?)
}

fn levi_options(p: &Problem, tol: f64) -> LeviOptions {
    LeviOptions {
        tol,
        ..LeviOptions::for_dim(p.field.dim()).with_quad(p.config.quad)
    }
}

/// E at each query: one Levi solution per source for t − τ ≤ 1, slice
/// composition beyond.
fn evaluate_all(p: &Problem, qs: &[KernelQuery], tol: f64) -> std::result::Result<Vec<f64>, Failure> {
    let cache = SolutionCache::new(&p.field, levi_options(p, tol));
    let direct_max = qs.iter().map(|q| q.dt).filter(|&d| d <= 1.0).fold(0.0, f64::max);
    let mut out = Vec::with_capacity(qs.len());
    for q in qs {
        let v = if q.dt <= 1.0 {
            cache.get(&q.xi, q.tau, direct_max)?.evaluate_offset(&q.dx, q.dt)?.value
        } else {
            compose_long_time_with(&cache, q, 1.0)?
        };
        out.push(v);
    }
    Ok(out)
}

#[derive(Serialize)]
struct Row {
    x: Vec<f64>,
    t: f64,
    xi: Vec<f64>,
    tau: f64,
    e: f64,
    lower_env: f64,
    upper_env: f64,
    margin_low: f64,
    margin_high: f64,
}

fn rows(qs: &[KernelQuery], values: &[f64], k: &BoundConstants, upper: &BoundConstants) -> Vec<Row> {
    qs.iter()
        .zip(values)
        .map(|(q, &e)| {
            let (rho, dt) = (q.rho(), q.dt);
            let (ll, lu) = (k.ln_lower(rho, dt), upper.ln_upper(rho, dt));
            let le = if e > 0.0 { e.ln() } else { f64::NEG_INFINITY };
            Row {
                x: q.x(),
                t: q.t(),
                xi: q.xi.clone(),
                tau: q.tau,
                e,
                lower_env: ll.exp(),
                upper_env: lu.exp(),
                margin_low: le - ll,
                margin_high: lu - le,
            }
        })
        .collect()
}

fn write_rows_csv(path: &Path, n: usize, rows: &[Row]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    let xs: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
    let xis: Vec<String> = (1..=n).map(|i| format!("xi_{i}")).collect();
    writeln!(
        f,
        "{},t,{},tau,E,lower_env,upper_env,margin_low,margin_high",
        xs.join(","),
        xis.join(",")
    )?;
    for r in rows {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(",");
        writeln!(
            f,
            "{},{:.17e},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            join(&r.x),
            r.t,
            join(&r.xi),
            r.tau,
            r.e,
            r.lower_env,
            r.upper_env,
            r.margin_low,
            r.margin_high
        )?;
    }
    f.flush()
}

fn upper_constants(c: &Common, p: &Problem, k: &BoundConstants) -> std::result::Result<BoundConstants, Failure> {
    Ok(match c.eps {
        Some(eps) => epsilon_upper_constants(&p.field, eps)?.constants,
        None => *k,
    })
}

fn json<T: Serialize>(out: &mut dyn Write, v: &T) -> Outcome {
    let s = serde_json::to_string_pretty(v).map_err(|e| Failure::Usage(e.to_string()))?;
    writeln!(out, "{s}")?;
    Ok(())
}

fn eval(c: &Common, out: &mut dyn Write) -> Outcome {
    let p = load(c)?;
    let n = p.field.dim();
    let qs = queries(c, n, horizon(c, 1.0)?, 3.0)?;
    let values = evaluate_all(&p, &qs, c.tol)?;
    let k = compute_constants(&p.field);
    let up = upper_constants(c, &p, &k)?;
    let rs = rows(&qs, &values, &k, &up);
    if let Some(path) = &c.csv {
        write_rows_csv(path, n, &rs)?;
    }
    if c.json {
        return json(out, &rs);
    }
    writeln!(out, "{:>14} {:>14} {:>14} {:>14} {:>14}", "t-tau", "|x-xi|", "E", "lower", "upper")?;
    for (q, r) in qs.iter().zip(&rs) {
        writeln!(
            out,
            "{:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
            q.dt,
            q.dist2().sqrt(),
            r.e,
            r.lower_env,
            r.upper_env
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct IterateRow {
    ell: usize,
    value: f64,
    grid_norm: f64,
    envelope_sharp: f64,
    envelope_unit: Option<f64>,
    tail_sharp: f64,
}

#[derive(Serialize)]
struct SeriesReport {
    dt: f64,
    rho: f64,
    iterates: Vec<IterateRow>,
    phi: f64,
    ln_s: f64,
    series: std::result::Result<(f64, f64, usize), String>,
}

fn series(c: &Common, out: &mut dyn Write) -> Outcome {
    let p = load(c)?;
    let n = p.field.dim();
    let mut one = c.clone();
    if one.at.is_empty() {
        one.queries = 1;
    }
    let q = queries(&one, n, horizon(c, 1.0)?, 1.0)?.remove(0);
    let opts = LeviOptions {
        ell_max: c.terms.max(1),
        stop: StopRule::Fixed,
        ..levi_options(&p, c.tol)
    };
    let sol = LeviSolution::build(&p.field, &q.xi, q.tau, q.dt, &opts)?;
    let maj = Majorant::for_field(&p.field);
    let rho = q.rho();
    let mut iterates = Vec::new();
    for ell in 1..=sol.terms_used() {
        iterates.push(IterateRow {
            ell,
            value: sol.phi_ell(ell, &q.dx, q.dt)?,
            grid_norm: sol.norms().get(ell - 1).copied().unwrap_or(0.0),
            envelope_sharp: maj.iterate_bound(ell, rho, q.dt, EnvelopeVariant::Sharp),
            envelope_unit: (q.dt <= 1.0).then(|| maj.iterate_bound(ell, rho, q.dt, EnvelopeVariant::UnitTime)),
            tail_sharp: maj.tail_bound(ell, rho, q.dt, EnvelopeVariant::Sharp),
        });
    }
    let mut sopts = SeriesOptions::for_dim(n);
    sopts.levi = LeviOptions { ..levi_options(&p, c.tol) };
    let series = phi_series_with(&p.field, &q, &sopts)
        .map(|v| (v.value, v.tail_bound, v.terms_used))
        .map_err(|e| e.to_string());
    let report = SeriesReport {
        dt: q.dt,
        rho,
        phi: sol.phi(&q.dx, q.dt)?,
        ln_s: maj.ln_s(),
        iterates,
        series,
    };
    if c.json {
        return json(out, &report);
    }
    writeln!(out, "t-tau = {:.6e}, rho = {:.6e}, ln S = {:.6e}", report.dt, report.rho, report.ln_s)?;
    writeln!(out, "{:>4} {:>14} {:>14} {:>14} {:>14}", "l", "Phi_l", "grid norm", "envelope", "tail after l")?;
    for r in &report.iterates {
        writeln!(
            out,
            "{:>4} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
            r.ell, r.value, r.grid_norm, r.envelope_sharp, r.tail_sharp
        )?;
    }
    writeln!(out, "Phi (sum of {} terms) = {:.10e}", report.iterates.len(), report.phi)?;
    match &report.series {
        Ok((v, tail, terms)) => writeln!(out, "tolerance-driven series: {v:.10e} (tail {tail:.3e}, {terms} terms)")?,
        Err(m) => writeln!(out, "tolerance-driven series: {m}")?,
    }
    Ok(())
}

#[derive(Serialize)]
struct ConstantsReport {
    label: String,
    n1: f64,
    constants: Vec<gaussbound::bounds::ConstantEntry>,
    epsilon: Option<gaussbound::bounds::EpsilonConstants>,
}

fn constants(c: &Common, out: &mut dyn Write) -> Outcome {
    let p = load(c)?;
    let k = compute_constants(&p.field);
    let epsilon = c.eps.map(|e| epsilon_upper_constants(&p.field, e)).transpose()?;
    let report = ConstantsReport {
        label: p.field.label().to_string(),
        n1: p.field.structure().n1,
        constants: k.report(),
        epsilon,
    };
    if c.json {
        return json(out, &report);
    }
    writeln!(out, "field: {} (N1 = {:.6e})", report.label, report.n1)?;
    for e in &report.constants {
        writeln!(out, "{:>10} = {:<24.16e} {}", e.name, e.value, e.formula)?;
    }
    if let Some(e) = &report.epsilon {
        writeln!(
            out,
            "epsilon = {}: c_eps = {:.16e}, aleph2 = {:.16e}, aleph3 = {:.16e}",
            e.eps, e.c_eps, e.aleph2, e.aleph3
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct IdentityReport {
    samples: usize,
    worst_heat_residual: f64,
    worst_derivative_error: f64,
    mass: f64,
    inverse_passed: bool,
    assumptions_passed: bool,
    failures: Vec<String>,
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SpdMatrix {
    // Q diag(λ) Qᵀ with λ ∈ [0.5, 2] and Q from Gram–Schmidt.
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-3 {
            q.push(v.iter().map(|a| a / norm).collect());
        }
    }
    let lambda: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| q[k][i] * lambda[k] * q[k][j]).sum();
        }
    }
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
    SpdMatrix::new(n, &a).expect("constructed SPD")
}

fn check_identities(c: &Common, out: &mut dyn Write) -> Outcome {
    let p = load(c)?;
    let n = p.field.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut worst_res = 0.0f64;
    let mut worst_der = 0.0f64;
    let h = 1e-5;
    for _ in 0..c.queries {
        let k = GenGaussKernel::new(random_spd(&mut rng, n))?;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = rng.gen_range(0.2..2.0);
        let g = k.value(&x, t)?;
        worst_res = worst_res.max(k.heat_residual(&x, t)?.abs() / g);
        let d = k.derivatives(&x, t)?;
        let fd_t = (k.value(&x, t + h)? - k.value(&x, t - h)?) / (2.0 * h);
        let mut errs = vec![(fd_t - d.time).abs() / d.time.abs().max(g)];
        for i in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (k.value(&xp, t)? - k.value(&xm, t)?) / (2.0 * h);
            errs.push((fd - d.gradient[i]).abs() / d.gradient[i].abs().max(g));
        }
        worst_der = worst_der.max(errs.into_iter().fold(0.0, f64::max));
    }
    let kernel = GenGaussKernel::new(SpdMatrix::identity(n))?;
    let mass = kernel.mass(0.5, &QuadratureScheme::default())?.mass;
    let inverse = check_inverse_inequalities(&p.field, c.queries.max(100), c.seed)?;
    let assumptions = validate_assumptions(&p.field, c.queries.max(1000), c.seed);
    let mut failures = Vec::new();
    if worst_res > 1e-10 {
        failures.push(format!("heat residual {worst_res:.3e} > 1e-10"));
    }
    if worst_der > 1e-6 {
        failures.push(format!("derivative mismatch {worst_der:.3e} > 1e-6"));
    }
    let mass_tol = if n == 1 { 1e-6 } else { 1e-5 };
    if (mass - 1.0).abs() > mass_tol {
        failures.push(format!("kernel mass {mass:.12} outside 1 +- {mass_tol:e}"));
    }
    if !inverse.passed {
        failures.push("inverse-matrix inequalities violated".into());
    }
    for chk in assumptions.checks.iter().filter(|c| !c.passed) {
        failures.push(format!("{}: observed {:.4e} vs bound {:.4e}", chk.id, chk.observed, chk.bound));
    }
    let report = IdentityReport {
        samples: c.queries,
        worst_heat_residual: worst_res,
        worst_derivative_error: worst_der,
        mass,
        inverse_passed: inverse.passed,
        assumptions_passed: assumptions.all_passed(),
        failures,
    };
    if c.json {
        json(out, &report)?;
    } else {
        writeln!(out, "heat residual (relative, worst): {:.3e}", report.worst_heat_residual)?;
        writeln!(out, "derivative vs finite difference (worst): {:.3e}", report.worst_derivative_error)?;
        writeln!(out, "kernel mass at t = 0.5: {:.12}", report.mass)?;
        writeln!(out, "inverse-matrix inequalities: {}", if report.inverse_passed { "ok" } else { "FAILED" })?;
        writeln!(out, "coefficient assumptions: {}", if report.assumptions_passed { "ok" } else { "FAILED" })?;
    }
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(report.failures.join("; ")))
    }
}

#[derive(Serialize)]
struct BoundsSummary {
    queries: usize,
    lower_violations: usize,
    upper_violations: usize,
    worst_low: f64,
    worst_high: f64,
}

fn check_bounds(c: &Common, out: &mut dyn Write) -> Outcome {
    let p = load(c)?;
    let n = p.field.dim();
    let qs = queries(c, n, horizon(c, 1.0)?, 4.0)?;
    let values = evaluate_all(&p, &qs, c.tol)?;
    let k = compute_constants(&p.field);
    let up = upper_constants(c, &p, &k)?;
    let pairs: Vec<(KernelQuery, f64)> = qs.iter().cloned().zip(values.iter().copied()).collect();
    let low = check_two_sided(&pairs, &k)?;
    let high = check_two_sided(&pairs, &up)?;
    if let Some(path) = &c.csv {
        write_rows_csv(path, n, &rows(&qs, &values, &k, &up))?;
    }
    let summary = BoundsSummary {
        queries: low.queries,
        lower_violations: low.lower_violations,
        upper_violations: high.upper_violations,
        worst_low: low.worst_low,
        worst_high: high.worst_high,
    };
    if c.json {
        json(out, &summary)?;
    } else {
        writeln!(out, "queries: {}", summary.queries)?;
        writeln!(out, "lower violations: {} (worst log margin {:.6e})", summary.lower_violations, summary.worst_low)?;
        writeln!(out, "upper violations: {} (worst log margin {:.6e})", summary.upper_violations, summary.worst_high)?;
    }
    let bad = summary.lower_violations + summary.upper_violations;
    if bad > 0 {
        return Err(Failure::Check(format!("{bad} envelope violations")));
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleSummary {
    dt: f64,
    compared: usize,
    max_rel: f64,
    mean_rel: f64,
    leakage: f64,
    leakage_flagged: bool,
}

fn oracle_compare(c: &Common, out: &mut dyn Write) -> Outcome {
    let p = load(c)?;
    let s = *p.field.structure();
    let n = s.n;
    if n > 2 {
        return Err(Failure::Usage("oracle-compare supports n = 1 and n = 2".into()));
    }
    let dt = horizon(c, 0.25)?;
    let xi = source(c, n)?;
    let nx = if n == 1 { 2000 } else { 160 };
    let nt = if n == 1 { 400 } else { 100 };
    let cfg = FdConfig::around(&xi, s.big_m, dt, nx, nt);
    let fd = fd_solve(&p.field, (&xi, c.tau), c.tau + dt, &cfg)?;
    let sol = LeviSolution::build(&p.field, &xi, c.tau, dt, &levi_options(&p, c.tol))?;
    let reach = 3.0 * dt.sqrt();
    let per_axis = if n == 1 { 121 } else { 25 };
    let mut pairs = Vec::new();
    let mut reference = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let dx: Vec<f64> = idx
            .iter()
            .map(|&i| -reach + 2.0 * reach * i as f64 / (per_axis - 1) as f64)
            .collect();
        let q = KernelQuery::from_offsets(&xi, c.tau, dx, dt)?;
        pairs.push((q.clone(), sol.evaluate_offset(&q.dx, dt)?.value));
        reference.push(fd.eval(&q.x()));
        let mut k = 0;
        while k < n {
            idx[k] += 1;
            if idx[k] < per_axis {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    let report = compare(&pairs, &reference, 3.0, 2.0 * fd.mollifier_width)?;
    if let Some(path) = &c.csv {
        fd.write_csv(std::io::BufWriter::new(fs::File::create(path)?))?;
    }
    let summary = OracleSummary {
        dt,
        compared: report.compared,
        max_rel: report.max_rel,
        mean_rel: report.mean_rel,
        leakage: fd.leakage,
        leakage_flagged: fd.leakage_flagged,
    };
    if c.json {
        json(out, &summary)?;
    } else {
        writeln!(out, "t - tau = {dt}, points compared: {}", summary.compared)?;
        writeln!(out, "max relative error: {:.6e}", summary.max_rel)?;
        writeln!(out, "mean relative error: {:.6e}", summary.mean_rel)?;
        writeln!(out, "boundary leakage: {:.3e}{}", summary.leakage, if summary.leakage_flagged { " (flagged)" } else { "" })?;
    }
    if summary.max_rel > c.max_rel {
        return Err(Failure::Check(format!("max relative error {:.4e} above {}", summary.max_rel, c.max_rel)));
    }
    Ok(())
}

fn lemma21(c: &Common, out: &mut dyn Write) -> Outcome {
    let (lambda_c, quad) = match &c.config {
        Some(path) => {
            let p = load_path(path)?;
            (1.0 / (8.0 * p.field.structure().big_m), p.config.quad)
        }
        None => (0.125, QuadratureScheme::default()),
    };
    let cases = lemma_sweep(lambda_c, &quad)?;
    let mut failures = 0;
    for case in &cases {
        let ok = case.rel_err <= 1e-3 && case.refined_rel_err <= case.rel_err.max(NOISE_FLOOR);
        if !ok {
            failures += 1;
        }
    }
    if c.json {
        json(out, &cases)?;
    } else {
        writeln!(out, "{:>2} {:>8} {:>6} {:>6} {:>14} {:>12} {:>12}", "n", "lambda", "gamma", "delta", "exact", "rel err", "refined")?;
        for k in &cases {
            writeln!(
                out,
                "{:>2} {:>8.4} {:>6.2} {:>6.2} {:>14.8e} {:>12.3e} {:>12.3e}",
                k.n, k.lambda, k.gamma, k.delta, k.exact, k.rel_err, k.refined_rel_err
            )?;
        }
    }
    if failures > 0 {
        return Err(Failure::Check(format!("{failures} sweep cases out of tolerance")));
    }
    Ok(())
}
