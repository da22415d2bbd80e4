//! Command line front end for `spheregap`.
//!
//! Subcommands: `constants` (closed-form table), `catalog` (members and
//! metadata), `verify` (the check suite), `profile` (level-set profile of a
//! height function) and `xi` (density estimate at an image point).
//!
//! Exit codes: 0 success, 1 a check or profile failed, 2 usage,
//! configuration or output error, 3 skipped checks under `--strict`.
//! Errors print one line `error: <kind>: <reason>` on stderr.

pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use spheregap::catalog::{self, ChartedImmersion};
use spheregap::height;
use spheregap::quad::GridSpec;
use spheregap::specfn::{self, GapKind};
use spheregap::verify::{self, SuiteConfig};

pub use output::{format_number, read_report_summary, sig_digits};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SKIPPED: i32 = 3;

pub const THREADS_ENV: &str = "SPHEREGAP_THREADS";

#[derive(Parser, Debug)]
#[command(name = "spheregap", version, about = "Volume-gap constants and checks for minimal submanifolds of round spheres")]
struct Cli {
    /// Worker threads, or `auto`. Overrides SPHEREGAP_THREADS and the config file.
    #[arg(long, global = true)]
    threads: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Tabulate closed-form constants over a range of dimensions.
    Constants(ConstantsArgs),
    /// List catalog members with their metadata.
    Catalog(CatalogArgs),
    /// Run the check suite and write a report.
    Verify(VerifyArgs),
    /// Level-set profile F(r) of a height function, with its density estimate.
    Profile(ProfileArgs),
    /// Density estimate at an image point.
    Xi(XiArgs),
}

#[derive(Args, Debug)]
struct ConstantsArgs {
    /// Dimension `n` or inclusive range `lo..hi`.
    #[arg(long, default_value = "1..20")]
    n: String,
    /// Pinching parameters for the pinched and rigidity columns.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0")]
    delta: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CatalogArgs {
    /// Members to describe (default: the suite members).
    #[arg(long)]
    manifold: Vec<String>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// TOML configuration; flags take precedence over its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Catalog members to check (repeatable).
    #[arg(long)]
    manifold: Vec<String>,
    /// Check-id glob to run (repeatable; `*` and `?`).
    #[arg(long)]
    suite: Vec<String>,
    /// Grid `member=spec`, or a bare spec for every member (repeatable).
    #[arg(long)]
    grid: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tolerance override `glob=value` (repeatable; the last match wins).
    #[arg(long)]
    tol: Vec<String>,
    /// Report path; with `--format both` the extension is replaced by .json and .csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Exit 3 when any check was skipped.
    #[arg(long)]
    strict: bool,
    /// Record per-task wall time (makes reports non-reproducible).
    #[arg(long)]
    runtime: bool,
    /// Print the planned check ids and exit.
    #[arg(long)]
    list: bool,
}

#[derive(Args, Debug)]
struct MemberArgs {
    /// Catalog member, e.g. `clifford:1,2`.
    #[arg(long)]
    manifold: Option<String>,
    /// Dimension: `equator:n,n+1` alone, `clifford:k,n` with `--k`.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Cover count: `covered-circle:m,2`.
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[command(flatten)]
    member: MemberArgs,
    /// Unit vector `x1,x2,...` (normalised) or `image:u1,u2,...` for a = f(u).
    #[arg(long, allow_hyphen_values = true)]
    a: String,
    /// Levels `lo:hi:count` or a comma list in (-1, 1); default 64 levels.
    #[arg(long, allow_hyphen_values = true)]
    r: Option<String>,
    #[arg(long)]
    grid: Option<String>,
    /// Profile CSV path; the density sequence goes next to it as `<stem>.xi.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct XiArgs {
    #[command(flatten)]
    member: MemberArgs,
    #[arg(long, allow_hyphen_values = true)]
    a: String,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    fn parse(s: &str) -> Result<Format, CliError> {
        Format::from_str(s, false).map_err(|_| CliError::Config(format!("unknown format `{s}`; expected json, csv or both")))
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Config(String),
    Output(String),
    Run(String),
}

impl CliError {
    fn line(&self) -> String {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Config(m) => ("config", m),
            CliError::Output(m) => ("output", m),
            CliError::Run(m) => ("run", m),
        };
        let flat: Vec<&str> = msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        format!("error: {kind}: {}", flat.join(" "))
    }

    fn code(&self) -> i32 {
        match self {
            CliError::Run(_) => EXIT_FAIL,
            _ => EXIT_USAGE,
        }
    }
}

impl From<spheregap::Error> for CliError {
    fn from(e: spheregap::Error) -> Self {
        match e {
            spheregap::Error::Config(m) => CliError::Config(m),
            spheregap::Error::Domain(_) => CliError::Usage(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

/// Runs the tool with `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(stderr, "{}", CliError::Usage(first.to_string()).line());
            return EXIT_USAGE;
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.line());
            e.code()
        }
    }
}

fn thread_count(flag: Option<&str>, file: Option<&config::Threads>) -> Result<Option<usize>, CliError> {
    let env = std::env::var(THREADS_ENV).ok();
    let setting = match (flag, env.as_deref(), file) {
        (Some(f), _, _) => f.to_string(),
        (None, Some(e), _) => e.to_string(),
        (None, None, Some(config::Threads::Count(n))) => n.to_string(),
        (None, None, Some(config::Threads::Named(s))) => s.clone(),
        (None, None, None) => "auto".into(),
    };
    if setting == "auto" {
        return Ok(None);
    }
    match setting.parse::<usize>() {
        Ok(n) if n > 0 => Ok(Some(n)),
        _ => Err(CliError::Usage(format!("thread count must be a positive integer or `auto`, got `{setting}`"))),
    }
}

fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    match cli.cmd {
        Cmd::Constants(a) => constants(a, stdout),
        Cmd::Catalog(a) => catalog_cmd(a, stdout),
        Cmd::Verify(a) => verify_cmd(a, cli.threads.as_deref(), stdout, stderr),
        Cmd::Profile(a) => {
            let threads = thread_count(cli.threads.as_deref(), None)?;
            profile_cmd(a, threads, stdout, stderr)
        }
        Cmd::Xi(a) => {
            let threads = thread_count(cli.threads.as_deref(), None)?;
            xi_cmd(a, threads, stdout)
        }
    }
}

/// Opens `path` for writing, or stdout.
fn sink<'a>(path: Option<&Path>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>, CliError> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| CliError::Output(format!("cannot write {}: {e}", p.display())))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(stdout)),
    }
}

fn io_err(path: Option<&Path>) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| {
        let at = path.map(|p| p.display().to_string()).unwrap_or_else(|| "stdout".into());
        CliError::Output(format!("cannot write {at}: {e}"))
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Output(e.to_string())
}

fn parse_n_range(s: &str) -> Result<(i64, i64), CliError> {
    let bad = || CliError::Usage(format!("bad dimension range `{s}`; expected n or lo..hi with 1 <= lo <= hi"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (a.trim().parse::<i64>().map_err(|_| bad())?, b.trim().parse::<i64>().map_err(|_| bad())?),
        None => {
            let n = s.trim().parse::<i64>().map_err(|_| bad())?;
            (n, n)
        }
    };
    if lo < 1 || hi < lo {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn constants(a: ConstantsArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let (lo, hi) = parse_n_range(&a.n)?;
    if let Some(d) = a.delta.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(CliError::Usage(format!("pinching parameters must be finite and non-negative, got {d}")));
    }
    let path = a.out.as_deref();
    let mut wr = output::csv_writer(sink(path, stdout)?);
    let mut header: Vec<String> = ["n", "vol_sphere", "vol_ball", "p", "non_embedded_gap", "clifford_max", "integral_einstein", "antipodal"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for d in &a.delta {
        header.push(format!("pinched_delta_{d}"));
    }
    for d in &a.delta {
        header.push(format!("rigidity_delta_{d}"));
    }
    wr.write_record(&header).map_err(csv_err)?;
    let f = |x: f64| sig_digits(x, 12);
    let opt = |r: spheregap::Result<f64>| r.map(f).unwrap_or_default();
    for n in lo..=hi {
        let sphere = specfn::sphere_volume(n)?;
        let p = specfn::gap_p(n)?;
        let mut row = vec![
            n.to_string(),
            f(sphere),
            f(specfn::ball_volume(n)?),
            f(p),
            f((1.0 + p) * sphere),
            opt(specfn::clifford_volume_max(n)),
            opt(specfn::hyp_gap(GapKind::IntegralEinstein, n)),
            opt(specfn::hyp_gap(GapKind::Antipodal, n)),
        ];
        for &delta in &a.delta {
            row.push(opt(specfn::hyp_gap(GapKind::Pinched { delta }, n)));
        }
        for &delta in &a.delta {
            row.push(opt(specfn::hyp_gap(GapKind::Rigidity { delta }, n)));
        }
        wr.write_record(&row).map_err(csv_err)?;
    }
    wr.flush().map_err(io_err(path))?;
    Ok(EXIT_OK)
}

fn catalog_cmd(a: CatalogArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let names: Vec<String> = if a.manifold.is_empty() {
        verify::DEFAULT_MEMBERS.iter().map(|s| s.to_string()).collect()
    } else {
        a.manifold.clone()
    };
    let members: Vec<ChartedImmersion> = names.iter().map(|n| catalog::from_name(n)).collect::<spheregap::Result<_>>()?;
    let path = a.out.as_deref();
    let header = [
        "name", "family", "n", "ambient", "volume", "multiplicity", "antipodal", "hypersurface", "default_grid",
    ];
    let rows: Vec<Vec<String>> = members
        .iter()
        .map(|m| {
            vec![
                m.name().to_string(),
                m.name().split(':').next().unwrap_or_default().to_string(),
                m.dim().to_string(),
                m.coord_len().to_string(),
                format_number(m.exact_volume()),
                m.known_multiplicity().map(|k| k.to_string()).unwrap_or_default(),
                m.antipodal_invariant().to_string(),
                m.is_hypersurface().to_string(),
                GridSpec::default_for(m).summary(),
            ]
        })
        .collect();
    match a.format {
        Format::Csv => {
            let mut wr = output::csv_writer(sink(path, stdout)?);
            wr.write_record(header).map_err(csv_err)?;
            for r in &rows {
                wr.write_record(r).map_err(csv_err)?;
            }
            wr.flush().map_err(io_err(path))?;
        }
        Format::Json => {
            let list: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| serde_json::Value::Object(header.iter().zip(r).map(|(k, v)| (k.to_string(), serde_json::json!(v))).collect()))
                .collect();
            let mut w = sink(path, stdout)?;
            writeln!(w, "{}", serde_json::to_string_pretty(&list).expect("serialises")).map_err(io_err(path))?;
            w.flush().map_err(io_err(path))?;
        }
        Format::Both => return Err(CliError::Usage("catalog writes json or csv, not both".into())),
    }
    Ok(EXIT_OK)
}

fn split_assignment<'a>(s: &'a str, what: &str) -> Result<(&'a str, &'a str), CliError> {
    s.rsplit_once('=')
        .filter(|(k, v)| !k.is_empty() && !v.is_empty())
        .ok_or_else(|| CliError::Usage(format!("{what} `{s}` must look like pattern=value")))
}

struct VerifyPlan {
    suite: SuiteConfig,
    out: Option<PathBuf>,
    format: Format,
    strict: bool,
    threads: Option<usize>,
}

fn verify_plan(a: &VerifyArgs, threads_flag: Option<&str>) -> Result<VerifyPlan, CliError> {
    let file = match &a.config {
        Some(p) => config::load(p).map_err(CliError::Config)?,
        None => config::FileConfig::default(),
    };
    let mut suite = SuiteConfig::default();
    if let Some(m) = &file.manifolds {
        suite.manifolds = m.clone();
    }
    if !a.manifold.is_empty() {
        suite.manifolds = a.manifold.clone();
    }
    suite.select = if a.suite.is_empty() { file.suite.clone().unwrap_or_default() } else { a.suite.clone() };
    suite.seed = a.seed.or(file.seed).unwrap_or(0);

    let mut grids: BTreeMap<String, String> = file.grids.clone();
    for g in &a.grid {
        match g.split_once('=') {
            Some((name, spec)) => {
                grids.insert(name.to_string(), spec.to_string());
            }
            None => {
                for name in &suite.manifolds {
                    grids.insert(name.clone(), g.clone());
                }
            }
        }
    }
    for (name, spec) in grids {
        suite.grids.insert(name, GridSpec::parse(&spec)?);
    }

    suite.tolerances = file.tolerances.iter().map(|(k, v)| (k.clone(), *v)).collect();
    for t in &a.tol {
        let (pat, val) = split_assignment(t, "tolerance")?;
        let v: f64 = val.parse().map_err(|_| CliError::Usage(format!("tolerance `{t}` has a non-numeric value")))?;
        suite.tolerances.push((pat.to_string(), v));
    }

    let s = &file.samples;
    let c = &mut suite.samples;
    for (slot, v) in [
        (&mut c.residual_points, s.residual_points),
        (&mut c.directions, s.directions),
        (&mut c.profile_points, s.profile_points),
        (&mut c.density_points, s.density_points),
        (&mut c.audit_points, s.audit_points),
        (&mut c.curvature_points, s.curvature_points),
    ] {
        if let Some(v) = v {
            if v == 0 {
                return Err(CliError::Config("sample counts must be positive".into()));
            }
            *slot = v;
        }
    }
    suite.record_runtime = a.runtime || file.runtime.unwrap_or(false);

    let format = match (a.format, &file.format) {
        (Some(f), _) => f,
        (None, Some(s)) => Format::parse(s)?,
        (None, None) => Format::Json,
    };
    let out = a.out.clone().or(file.out.clone());
    if format == Format::Both && out.is_none() {
        return Err(CliError::Usage("--format both needs --out".into()));
    }
    Ok(VerifyPlan {
        suite,
        out,
        format,
        strict: a.strict || file.strict.unwrap_or(false),
        threads: thread_count(threads_flag, file.threads.as_ref())?,
    })
}

fn verify_cmd(a: VerifyArgs, threads_flag: Option<&str>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let plan = verify_plan(&a, threads_flag)?;
    if a.list {
        for id in verify::list_checks(&plan.suite)? {
            writeln!(stdout, "{id}").map_err(io_err(None))?;
        }
        return Ok(EXIT_OK);
    }

    // Open every output before the suite runs so a bad path fails fast.
    let targets: Vec<(Format, Option<PathBuf>)> = match (plan.format, &plan.out) {
        (Format::Both, Some(p)) => vec![(Format::Json, Some(p.with_extension("json"))), (Format::Csv, Some(p.with_extension("csv")))],
        (f, p) => vec![(f, p.clone())],
    };
    let mut files = Vec::new();
    for (_, p) in &targets {
        if let Some(p) = p {
            let f = File::create(p).map_err(|e| CliError::Output(format!("cannot write {}: {e}", p.display())))?;
            files.push(Some(BufWriter::new(f)));
        } else {
            files.push(None);
        }
    }

    let suite = plan.suite.clone();
    let report = with_threads(plan.threads, move || verify::run_suite(&suite))??;

    for ((fmt, path), file) in targets.iter().zip(files) {
        let mut w: Box<dyn Write> = match file {
            Some(f) => Box::new(f),
            None => Box::new(&mut *stdout),
        };
        match fmt {
            Format::Json => w.write_all(output::report_json(&plan.suite, &report).as_bytes()).map_err(io_err(path.as_deref()))?,
            _ => output::write_report_csv(&mut w, &report).map_err(csv_err)?,
        }
        w.flush().map_err(io_err(path.as_deref()))?;
    }

    let s = report.summary;
    let _ = writeln!(
        stderr,
        "summary: total={} passed={} failed={} skipped={}",
        s.total, s.passed, s.failed, s.skipped
    );
    Ok(if s.failed > 0 {
        EXIT_FAIL
    } else if plan.strict && s.skipped > 0 {
        EXIT_SKIPPED
    } else {
        EXIT_OK
    })
}

fn member(args: &MemberArgs) -> Result<ChartedImmersion, CliError> {
    let name = match (args.manifold.as_deref(), args.n, args.k, args.m) {
        (Some(name), None, None, None) => name.to_string(),
        (None, Some(n), Some(k), None) => format!("clifford:{k},{n}"),
        (None, Some(n), None, None) => format!("equator:{n},{}", n + 1),
        (None, None, None, Some(m)) => format!("covered-circle:{m},2"),
        _ => {
            return Err(CliError::Usage(
                "give --manifold NAME, or --n (equator), --k with --n (clifford), or --m (covered circle)".into(),
            ))
        }
    };
    Ok(catalog::from_name(&name)?)
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad number `{t}` in {what} `{s}`"))))
        .collect()
}

/// `x1,x2,...` normalised to a unit vector, or `image:u1,...` for `f(u)`.
fn direction(m: &ChartedImmersion, spec: &str) -> Result<Vec<f64>, CliError> {
    if let Some(u) = spec.strip_prefix("image:") {
        let u = parse_list(u, "parameter point")?;
        if u.len() != m.dim() {
            return Err(CliError::Usage(format!("{} needs {} parameters, got {}", m.name(), m.dim(), u.len())));
        }
        return Ok(m.eval(&u)?);
    }
    let a = parse_list(spec, "direction")?;
    if a.len() != m.coord_len() {
        return Err(CliError::Usage(format!("{} lives in R^{}, got {} coordinates", m.name(), m.coord_len(), a.len())));
    }
    let len = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(len.is_finite() && len > 1e-12) {
        return Err(CliError::Usage(format!("direction `{spec}` cannot be normalised")));
    }
    Ok(a.into_iter().map(|x| x / len).collect())
}

fn r_grid(spec: Option<&str>) -> Result<Vec<f64>, CliError> {
    let r = match spec {
        None => height::default_r_grid(64),
        Some(s) => match s.split(':').collect::<Vec<_>>()[..] {
            [lo, hi, count] => {
                let bad = || CliError::Usage(format!("bad level range `{s}`; expected lo:hi:count"));
                let lo: f64 = lo.parse().map_err(|_| bad())?;
                let hi: f64 = hi.parse().map_err(|_| bad())?;
                let count: usize = count.parse().map_err(|_| bad())?;
                if count < 2 {
                    return Err(bad());
                }
                (0..count).map(|j| lo + (hi - lo) * j as f64 / (count - 1) as f64).collect()
            }
            _ => parse_list(s, "levels")?,
        },
    };
    if let Some(x) = r.iter().find(|x| !(**x > -1.0 && **x < 1.0)) {
        return Err(CliError::Usage(format!("levels must lie in (-1, 1), got {x}")));
    }
    if r.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(CliError::Usage("levels must increase".into()));
    }
    Ok(r)
}

fn grid_for(m: &ChartedImmersion, spec: Option<&str>) -> Result<GridSpec, CliError> {
    let g = match spec {
        Some(s) => GridSpec::parse(s)?,
        None => GridSpec::default_for(m),
    };
    g.validate(m)?;
    Ok(g)
}

fn xi_rows(x: &height::XiEstimate) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec!["j", "t", "cap_volume", "ratio", "err", "nodes_in_cap", "extrapolated"];
    let rows = x
        .sequence
        .iter()
        .enumerate()
        .map(|(j, t)| {
            vec![
                (j + 1).to_string(),
                format_number(t.t),
                format_number(t.cap_volume),
                format_number(t.ratio),
                format_number(t.err_est),
                t.nodes_in_cap.to_string(),
                x.extrapolated.get(j).map(|v| format_number(*v)).unwrap_or_default(),
            ]
        })
        .collect();
    (header, rows)
}

fn write_csv(w: impl Write, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut wr = output::csv_writer(w);
    wr.write_record(header).map_err(csv_err)?;
    for r in rows {
        wr.write_record(r).map_err(csv_err)?;
    }
    wr.flush().map_err(|e| CliError::Output(e.to_string()))
}

fn profile_cmd(a: ProfileArgs, threads: Option<usize>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let m = member(&a.member)?;
    let dir = direction(&m, &a.a)?;
    let levels = r_grid(a.r.as_deref())?;
    let grid = grid_for(&m, a.grid.as_deref())?;
    if a.format == Format::Both {
        return Err(CliError::Usage("profile writes json or csv, not both".into()));
    }
    let path = a.out.as_deref();
    let xi_path = path.map(|p| p.with_extension("xi.csv"));
    // Fail on unwritable paths before computing.
    let main = sink(path, stdout)?;
    let xi_file = match &xi_path {
        Some(p) if a.format == Format::Csv => {
            Some(BufWriter::new(File::create(p).map_err(|e| CliError::Output(format!("cannot write {}: {e}", p.display())))?))
        }
        _ => None,
    };

    let profile = with_threads(threads, || -> spheregap::Result<_> {
        let mut p = height::monotone_profile(&m, &dir, &levels, &grid)?;
        p.xi = Some(height::xi_estimate(&m, &dir, None, &grid)?);
        Ok(p)
    })??;
    let xi = profile.xi.as_ref().expect("set above");

    match a.format {
        Format::Json => {
            let mut w = main;
            let text = serde_json::to_string_pretty(&profile).map_err(|e| CliError::Output(e.to_string()))?;
            writeln!(w, "{text}").map_err(io_err(path))?;
            w.flush().map_err(io_err(path))?;
        }
        _ => {
            let rows: Vec<Vec<String>> = (0..levels.len())
                .map(|i| {
                    vec![
                        format_number(profile.r_values[i]),
                        format_number(profile.f_values[i]),
                        format_number(profile.cap_volumes[i]),
                        format_number(profile.f_err[i]),
                    ]
                })
                .collect();
            write_csv(main, &["r", "F", "cap_volume", "err"], &rows)?;
            if let Some(w) = xi_file {
                let (header, rows) = xi_rows(xi);
                write_csv(w, &header, &rows)?;
            }
        }
    }
    let _ = writeln!(
        stderr,
        "profile: manifold={} violations={} worst_margin={} xi={} xi_err={} multiplicity={}",
        m.name(),
        profile.violations.len(),
        format_number(profile.worst_margin),
        format_number(xi.estimate),
        format_number(xi.err_est),
        xi.multiplicity
    );
    Ok(if profile.violations.is_empty() { EXIT_OK } else { EXIT_FAIL })
}

fn xi_cmd(a: XiArgs, threads: Option<usize>, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let m = member(&a.member)?;
    let dir = direction(&m, &a.a)?;
    let grid = grid_for(&m, a.grid.as_deref())?;
    let path = a.out.as_deref();
    let w = sink(path, stdout)?;
    let xi = with_threads(threads, || height::xi_estimate(&m, &dir, None, &grid))??;
    match a.format {
        Format::Json => {
            let mut w = w;
            let text = serde_json::to_string_pretty(&xi).map_err(|e| CliError::Output(e.to_string()))?;
            writeln!(w, "{text}").map_err(io_err(path))?;
            w.flush().map_err(io_err(path))?;
        }
        Format::Csv => {
            let (header, rows) = xi_rows(&xi);
            write_csv(w, &header, &rows)?;
        }
        Format::Both => return Err(CliError::Usage("xi writes json or csv, not both".into())),
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("spheregap").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_n_range("2..5").unwrap(), (2, 5));
        assert_eq!(parse_n_range("7").unwrap(), (7, 7));
        for bad in ["", "0..3", "5..2", "a..b", "1...3"] {
            assert!(parse_n_range(bad).is_err(), "{bad}");
        }
        assert_eq!(r_grid(Some("-0.5:0.5:3")).unwrap(), vec![-0.5, 0.0, 0.5]);
        assert!(r_grid(Some("-1:0.5:3")).is_err());
        assert!(r_grid(Some("0.5,0.1")).is_err());
        assert_eq!(r_grid(None).unwrap().len(), 64);
    }

    #[test]
    fn member_flags() {
        let pick = |manifold: Option<&str>, n, k, m| {
            member(&MemberArgs {
                manifold: manifold.map(String::from),
                n,
                k,
                m,
            })
            .map(|c| c.name().to_string())
        };
        assert_eq!(pick(None, Some(2), Some(1), None).unwrap(), "clifford:1,2");
        assert_eq!(pick(None, Some(2), None, None).unwrap(), "equator:2,3");
        assert_eq!(pick(None, None, None, Some(3)).unwrap(), "covered-circle:3,2");
        assert!(pick(Some("clifford:1,2"), Some(2), None, None).is_err());
        assert!(pick(None, None, None, None).is_err());
    }

    #[test]
    fn directions() {
        let m = catalog::from_name("clifford:1,2").unwrap();
        let a = direction(&m, "image:0,0").unwrap();
        assert!((a[0] - 2f64.sqrt().recip()).abs() < 1e-15 && (a[2] - 2f64.sqrt().recip()).abs() < 1e-15);
        let a = direction(&m, "0,0,0,-2").unwrap();
        assert_eq!(a, vec![0.0, 0.0, 0.0, -1.0]);
        assert!(direction(&m, "0,0,0,0").is_err());
        assert!(direction(&m, "1,0").is_err());
        assert!(direction(&m, "image:1").is_err());
    }

    #[test]
    fn errors_are_one_line() {
        let (code, _, err) = run_args(&["verify", "--manifold", "torus:1,2"]);
        assert_eq!(code, EXIT_USAGE);
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with("error: config: "));
        let (code, _, err) = run_args(&["frobnicate"]);
        assert_eq!(code, EXIT_USAGE);
        assert_eq!(err.lines().count(), 1);
        let (code, _, err) = run_args(&["verify", "--suite", "no-such/*"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("constants/sphere-volume-two") && err.lines().count() == 1);
        let (code, _, _) = run_args(&["verify", "--threads", "zero"]);
        assert_eq!(code, EXIT_USAGE);
        let (code, _, _) = run_args(&["--help"]);
        assert_eq!(code, EXIT_OK);
    }

    #[test]
    fn list_is_exhaustive_for_selection() {
        let (code, out, _) = run_args(&["verify", "--manifold", "equator:1,2", "--list"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.lines().any(|l| l == "height/mean-zero/equator:1,2"));
        assert!(out.lines().any(|l| l == "volume-sweep/gap-below-one"));
    }
}
