//! The check suite: every numerically checkable statement, evaluated on the
//! closed-form constants and on each catalog member, as a list of named
//! pass/fail records.
//!
//! A suite is a plan of tasks. Each task owns a fixed list of check ids,
//! known before anything runs, so that selections can be validated up front.
//! A task that errors marks all of its checks as skipped with the reason.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::Serialize;

use crate::catalog::{self, ChartedImmersion, Family};
use crate::compare::Relation;
use crate::curvature::{self, DEFAULT_OUTER_STEP, DEFAULT_STEP};
use crate::height::{self, Branch, HeightProfile};
use crate::linalg::dot;
use crate::quad::{self, Estimate, GridSpec, Sample};
use crate::specfn::{self, GapKind, SStats};
use crate::{Error, Result};

/// Statements the checks are anchored to.
pub mod anchor {
    pub const HEIGHT_IDENTITIES: &str = "height-function identities";
    pub const MONOTONICITY: &str = "level-set monotonicity";
    pub const DENSITY: &str = "density at an image point";
    pub const DENSITY_MULTIPLICITY: &str = "density dominates multiplicity";
    pub const SLAB: &str = "slab volume bound";
    pub const MAIN_BOUND: &str = "main volume bound";
    pub const NON_EMBEDDED: &str = "non-embedded volume gap";
    pub const CLIFFORD_VOLUMES: &str = "Clifford volume comparison";
    pub const EMBEDDEDNESS: &str = "embeddedness threshold";
    pub const MEAN_SQUARE: &str = "mean-square height bound";
    pub const IE_CONDITIONS: &str = "integral-Einstein conditions";
    pub const THETA: &str = "curvature-ratio constants";
    pub const S_RATIO: &str = "S-ratio volume gap";
    pub const PINCHED: &str = "pinched volume gap";
    pub const RIGIDITY: &str = "pinching rigidity";
    pub const SIMONS: &str = "Simons identity";
    pub const IE_GAP: &str = "integral-Einstein volume gap";
    pub const ANTIPODAL_GAP: &str = "antipodal hypersurface volume gap";
    pub const SECOND_FORM: &str = "second fundamental form";
    pub const VOLUMES: &str = "sphere and Clifford volumes";

    /// Anchors the default suite must cover.
    pub const REQUIRED: [&str; 16] = [
        HEIGHT_IDENTITIES,
        MONOTONICITY,
        DENSITY,
        DENSITY_MULTIPLICITY,
        SLAB,
        MAIN_BOUND,
        NON_EMBEDDED,
        CLIFFORD_VOLUMES,
        EMBEDDEDNESS,
        MEAN_SQUARE,
        IE_CONDITIONS,
        THETA,
        S_RATIO,
        PINCHED,
        RIGIDITY,
        SIMONS,
    ];
}

pub const DEFAULT_MEMBERS: [&str; 7] = [
    "equator:1,2",
    "equator:2,3",
    "clifford:1,2",
    "clifford:1,3",
    "covered-circle:2,2",
    "covered-circle:3,2",
    "covered-circle:4,2",
];

/// How a check's numbers were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Confidence {
    ClosedForm,
    Quadrature,
    /// Depends on sampled points or directions (suprema, infima, "for all a").
    Sampled,
}

impl Confidence {
    pub fn name(self) -> &'static str {
        match self {
            Confidence::ClosedForm => "closed-form",
            Confidence::Quadrature => "quadrature",
            Confidence::Sampled => "sampled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub id: String,
    pub anchor: String,
    pub manifold: String,
    pub lhs: f64,
    pub rhs: f64,
    pub relation: Relation,
    pub margin: f64,
    pub tol: f64,
    pub pass: bool,
    pub status: Status,
    pub confidence: Confidence,
    pub grid: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Why a skipped check could not be evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckRecord>,
    pub summary: Summary,
}

impl VerificationReport {
    fn new(checks: Vec<CheckRecord>) -> Self {
        let mut s = Summary {
            total: checks.len(),
            ..Summary::default()
        };
        for c in &checks {
            match c.status {
                Status::Pass => s.passed += 1,
                Status::Fail => s.failed += 1,
                Status::Skipped => s.skipped += 1,
            }
        }
        VerificationReport { checks, summary: s }
    }
}

/// Sample sizes for the randomised checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SampleCounts {
    /// Random parameter points for pointwise residuals.
    pub residual_points: usize,
    /// Random unit directions for integral identities.
    pub directions: usize,
    /// Random image points for profiles.
    pub profile_points: usize,
    /// Random image points for density estimates.
    pub density_points: usize,
    /// Random image points for the half-space audit.
    pub audit_points: usize,
    /// Random parameter points for curvature checks.
    pub curvature_points: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        SampleCounts {
            residual_points: 100,
            directions: 20,
            profile_points: 20,
            density_points: 10,
            audit_points: 10,
            curvature_points: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub manifolds: Vec<String>,
    /// Check-id globs (`*` and `?`); empty selects everything.
    pub select: Vec<String>,
    /// Grid per manifold name; members not listed use [`GridSpec::default_for`].
    pub grids: BTreeMap<String, GridSpec>,
    pub seed: u64,
    /// `(glob, tol)` overrides, applied in order; the last match wins.
    pub tolerances: Vec<(String, f64)>,
    pub samples: SampleCounts,
    pub record_runtime: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            manifolds: DEFAULT_MEMBERS.iter().map(|s| s.to_string()).collect(),
            select: Vec::new(),
            grids: BTreeMap::new(),
            seed: 0,
            tolerances: Vec::new(),
            samples: SampleCounts::default(),
            record_runtime: false,
        }
    }
}

/// Compiles a glob with `*` (any run) and `?` (one character).
pub fn glob_regex(pattern: &str) -> Result<Regex> {
    let mut re = String::from("^");
    let mut lit = String::new();
    for ch in pattern.chars() {
        if ch == '*' || ch == '?' {
            re.push_str(&regex::escape(&lit));
            lit.clear();
            re.push_str(if ch == '*' { ".*" } else { "." });
        } else {
            lit.push(ch);
        }
    }
    re.push_str(&regex::escape(&lit));
    re.push('$');
    Regex::new(&re).map_err(|e| Error::Config(format!("bad pattern `{pattern}`: {e}")))
}

/// `max_k Vol(M_{k,n-k})` and whether a closed minimal hypersurface of that
/// volume must be embedded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmbeddednessGate {
    pub n: i64,
    pub vol: f64,
    pub threshold: f64,
    /// `vol <= threshold`. When false the gate says nothing.
    pub must_be_embedded: bool,
}

pub fn embeddedness_gate(n: i64, vol: f64) -> Result<EmbeddednessGate> {
    if n < 2 {
        return Err(Error::domain(format!("the embeddedness threshold needs n >= 2, got {n}")));
    }
    if !vol.is_finite() || vol < 0.0 {
        return Err(Error::domain(format!("volume must be finite and non-negative, got {vol}")));
    }
    let threshold = specfn::clifford_volume_max(n)?;
    Ok(EmbeddednessGate {
        n,
        vol,
        threshold,
        must_be_embedded: vol <= threshold,
    })
}

struct Planned {
    id: String,
    anchor: &'static str,
    relation: Relation,
    confidence: Confidence,
}

struct Measured {
    lhs: f64,
    rhs: f64,
    tol: f64,
    note: Option<String>,
}

fn measured(lhs: f64, rhs: f64, tol: f64) -> Measured {
    Measured { lhs, rhs, tol, note: None }
}

impl Measured {
    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

type Runner<'a> = Box<dyn Fn() -> Result<Vec<Measured>> + 'a>;

struct Task<'a> {
    manifold: String,
    grid: String,
    checks: Vec<Planned>,
    run: Runner<'a>,
}

struct Plan<'a> {
    tasks: Vec<Task<'a>>,
}

impl<'a> Plan<'a> {
    fn task(&mut self, manifold: &str, grid: &str, checks: Vec<(String, &'static str, Relation, Confidence)>, run: Runner<'a>) {
        self.tasks.push(Task {
            manifold: manifold.to_string(),
            grid: grid.to_string(),
            checks: checks
                .into_iter()
                .map(|(id, anchor, relation, confidence)| Planned {
                    id,
                    anchor,
                    relation,
                    confidence,
                })
                .collect(),
            run,
        });
    }

    fn ids(&self) -> Vec<&str> {
        self.tasks.iter().flat_map(|t| t.checks.iter().map(|c| c.id.as_str())).collect()
    }
}

/// Deterministic generator per (seed, label).
fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    // FNV-1a, stable across platforms and toolchains.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let len = dot(&v, &v).sqrt();
        if len > 0.1 && len <= 1.0 {
            return v.into_iter().map(|x| x / len).collect();
        }
    }
}

/// Builds the plan for `cfg` and lists its check ids.
pub fn list_checks(cfg: &SuiteConfig) -> Result<Vec<String>> {
    let members = load_members(cfg)?;
    let plan = build_plan(cfg, &members)?;
    Ok(plan.ids().into_iter().map(String::from).collect())
}

fn load_members(cfg: &SuiteConfig) -> Result<Vec<(ChartedImmersion, GridSpec)>> {
    for name in cfg.grids.keys() {
        if !cfg.manifolds.contains(name) {
            return Err(Error::Config(format!(
                "grid given for `{name}`, which is not among the selected manifolds: {}",
                cfg.manifolds.join(" ")
            )));
        }
    }
    cfg.manifolds
        .iter()
        .map(|name| {
            let m = catalog::from_name(name)?;
            let grid = cfg.grids.get(name).cloned().unwrap_or_else(|| GridSpec::default_for(&m));
            grid.validate(&m)?;
            Ok((m, grid))
        })
        .collect()
}

/// Runs the suite. Configuration problems (unknown manifolds, selections
/// that match nothing, bad grids) are errors; failures inside checks are
/// recorded as skipped.
pub fn run_suite(cfg: &SuiteConfig) -> Result<VerificationReport> {
    let members = load_members(cfg)?;
    let plan = build_plan(cfg, &members)?;
    execute(&plan, cfg)
}

fn execute(plan: &Plan<'_>, cfg: &SuiteConfig) -> Result<VerificationReport> {
    let ids = plan.ids();
    let select: Vec<Regex> = cfg.select.iter().map(|p| glob_regex(p)).collect::<Result<_>>()?;
    for (pat, re) in cfg.select.iter().zip(&select) {
        if !ids.iter().any(|id| re.is_match(id)) {
            return Err(Error::Config(format!(
                "pattern `{pat}` matches no check; known ids:\n{}",
                ids.join("\n")
            )));
        }
    }
    let tols: Vec<(Regex, f64)> = cfg
        .tolerances
        .iter()
        .map(|(p, t)| {
            if !(*t >= 0.0) {
                return Err(Error::Config(format!("tolerance for `{p}` must be non-negative, got {t}")));
            }
            let re = glob_regex(p)?;
            if !ids.iter().any(|id| re.is_match(id)) {
                return Err(Error::Config(format!("tolerance pattern `{p}` matches no check; known ids:\n{}", ids.join("\n"))));
            }
            Ok((re, *t))
        })
        .collect::<Result<_>>()?;
    let selected = |id: &str| select.is_empty() || select.iter().any(|re| re.is_match(id));

    let mut records = Vec::new();
    for task in &plan.tasks {
        if !task.checks.iter().any(|c| selected(&c.id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = (task.run)().and_then(|v| {
            if v.len() == task.checks.len() {
                Ok(v)
            } else {
                Err(Error::Config(format!("task produced {} values for {} checks", v.len(), task.checks.len())))
            }
        });
        let runtime = cfg.record_runtime.then(|| start.elapsed().as_millis() as u64);
        for (i, planned) in task.checks.iter().enumerate() {
            if !selected(&planned.id) {
                continue;
            }
            let mut rec = CheckRecord {
                id: planned.id.clone(),
                anchor: planned.anchor.to_string(),
                manifold: task.manifold.clone(),
                lhs: f64::NAN,
                rhs: f64::NAN,
                relation: planned.relation,
                margin: f64::NAN,
                tol: f64::NAN,
                pass: false,
                status: Status::Skipped,
                confidence: planned.confidence,
                grid: task.grid.clone(),
                note: None,
                reason: None,
                runtime_ms: runtime,
            };
            match &outcome {
                Ok(values) => {
                    let v = &values[i];
                    let tol = tols.iter().rev().find(|(re, _)| re.is_match(&planned.id)).map(|(_, t)| *t).unwrap_or(v.tol);
                    rec.lhs = v.lhs;
                    rec.rhs = v.rhs;
                    rec.tol = tol;
                    rec.margin = planned.relation.margin(v.lhs, v.rhs);
                    rec.pass = planned.relation.passes(rec.margin, tol);
                    rec.status = if rec.pass { Status::Pass } else { Status::Fail };
                    rec.note = v.note.clone();
                }
                Err(e) => rec.reason = Some(e.to_string()),
            }
            records.push(rec);
        }
    }
    Ok(VerificationReport::new(records))
}

fn build_plan<'a>(cfg: &'a SuiteConfig, members: &'a [(ChartedImmersion, GridSpec)]) -> Result<Plan<'a>> {
    let mut plan = Plan { tasks: Vec::new() };
    closed_form_tasks(&mut plan);
    for (m, grid) in members {
        member_tasks(&mut plan, cfg, m, grid);
    }
    for (m, grid) in members {
        if m.is_hypersurface() && m.dim() >= 2 {
            hypersurface_tasks(&mut plan, cfg, m, grid);
        }
    }
    let ids = plan.ids();
    let mut seen = std::collections::HashSet::new();
    for id in &ids {
        if !seen.insert(*id) {
            return Err(Error::Config(format!("check id `{id}` planned twice (duplicate manifold?)")));
        }
    }
    Ok(plan)
}

const CLOSED: &str = "closed-form";

fn closed_form_tasks(plan: &mut Plan<'_>) {
    use anchor::*;
    use Confidence::ClosedForm as CF;
    let c = |id: &str, anchor: &'static str, rel: Relation| (id.to_string(), anchor, rel, CF);

    plan.task(
        CLOSED,
        "",
        vec![
            c("constants/sphere-volume-two", VOLUMES, Relation::Eq),
            c("constants/clifford-torus-volume", VOLUMES, Relation::Eq),
            c("constants/gap-limit", NON_EMBEDDED, Relation::Eq),
            c("constants/gap-limit-lower-bound", NON_EMBEDDED, Relation::Gt),
            c("constants/gap-forms-agree", NON_EMBEDDED, Relation::Le),
        ],
        Box::new(|| {
            let s2 = specfn::sphere_volume(2)?;
            let torus = specfn::clifford_volume(1, 2)?;
            let limit = 1.0 + specfn::gap_p(1_000_000)?;
            let mut worst: f64 = 0.0;
            for n in 1..=200 {
                let (a, b) = (specfn::gap_p(n)?, specfn::gap_p_from_volumes(n)?);
                worst = worst.max((a - b).abs() / a);
            }
            Ok(vec![
                measured(s2, 4.0 * PI, 1e-12 * 4.0 * PI),
                measured(torus, 2.0 * PI * PI, 1e-12 * 2.0 * PI * PI),
                measured(limit, 1.797_884_6, 1e-3).note("1 + p(n) at n = 10^6 against 1 + sqrt(2/pi)"),
                measured(1.0 + (2.0 / PI).sqrt(), 1.797, 0.0),
                measured(worst, 0.0, 1e-10).note("largest relative gap between the two forms of p(n), n <= 200"),
            ])
        }),
    );

    plan.task(
        CLOSED,
        "",
        vec![
            c("volume-sweep/gap-below-one", NON_EMBEDDED, Relation::Lt),
            c("volume-sweep/clifford-max-at-k1", CLIFFORD_VOLUMES, Relation::Le),
            c("volume-sweep/clifford-below-gap", CLIFFORD_VOLUMES, Relation::Lt),
            c("volume-sweep/chain-above-one", CLIFFORD_VOLUMES, Relation::Gt),
            c("volume-sweep/chain-below-ratio", CLIFFORD_VOLUMES, Relation::Ge),
            c("volume-sweep/integral-einstein-gap", IE_GAP, Relation::Ge),
            c("volume-sweep/antipodal-gap", ANTIPODAL_GAP, Relation::Ge),
        ],
        Box::new(|| {
            let mut p_max = f64::NEG_INFINITY;
            let mut k_ratio = f64::NEG_INFINITY;
            let mut gap_ratio = f64::NEG_INFINITY;
            let mut chain_min = f64::INFINITY;
            let mut chain_slack = f64::INFINITY;
            let mut ie_slack = f64::INFINITY;
            let mut anti_slack = f64::INFINITY;
            for n in 2..=100i64 {
                let sphere = specfn::ln_sphere_volume(n)?;
                let top = specfn::ln_clifford_volume(1, n)?;
                let p = specfn::gap_p(n)?;
                p_max = p_max.max(p);
                for k in 1..n {
                    let v = specfn::ln_clifford_volume(k, n)?;
                    k_ratio = k_ratio.max((v - top).exp());
                    let ratio = (v - sphere).exp();
                    ie_slack = ie_slack.min(ratio - specfn::hyp_gap(GapKind::IntegralEinstein, n)?);
                    anti_slack = anti_slack.min(ratio - specfn::hyp_gap(GapKind::Antipodal, n)?);
                }
                gap_ratio = gap_ratio.max((top - sphere).exp() / (1.0 + p));
                let chain = specfn::clifford_chain_bound(n)?;
                chain_min = chain_min.min(chain);
                let computed = (1.0 + p) * (sphere - top).exp();
                chain_slack = chain_slack.min(computed - chain);
            }
            let range = "over 2 <= n <= 100";
            Ok(vec![
                measured(p_max, 1.0, 0.0).note(format!("max p(n) {range}")),
                measured(k_ratio, 1.0, 1e-12).note(format!("max Vol(M_k,n-k)/Vol(M_1,n-1) {range}, all k")),
                measured(gap_ratio, 1.0, 0.0).note(format!("max Vol(M_1,n-1)/((1+p(n)) Vol(S^n)) {range}")),
                measured(chain_min, 1.0, 0.0).note(format!("min of the chained lower bound {range}")),
                measured(chain_slack, 0.0, 1e-12).note(format!("min of (1+p(n)) Vol(S^n)/Vol(M_1,n-1) minus the chained bound {range}")),
                measured(ie_slack, 0.0, 1e-12).note(format!("min Vol(M_k,n-k)/Vol(S^n) - (n+2)/(n+1) {range}, all k")),
                measured(anti_slack, 0.0, 1e-12).note(format!("min Vol(M_k,n-k)/Vol(S^n) - 2n/(2n-1) {range}, all k")),
            ])
        }),
    );

    plan.task(
        CLOSED,
        "",
        vec![
            c("gap-constants/main-bound-surface", MAIN_BOUND, Relation::Eq),
            c("gap-constants/main-bound-circle-double", MAIN_BOUND, Relation::Eq),
            c("gap-constants/main-bound-below-sphere", MAIN_BOUND, Relation::Lt),
            c("gap-constants/non-embedded-is-double-multiplicity", NON_EMBEDDED, Relation::Le),
            c("gap-constants/integral-einstein-surface", IE_GAP, Relation::Eq),
            c("gap-constants/antipodal-surface", ANTIPODAL_GAP, Relation::Eq),
            c("gap-constants/rigidity-three", RIGIDITY, Relation::Eq),
            c("gap-constants/rigidity-from-eigenvalue-bound", RIGIDITY, Relation::Le),
            c("gap-constants/constant-s-ratio", THETA, Relation::Eq),
        ],
        Box::new(|| {
            let mut below = f64::NEG_INFINITY;
            let mut double = 0.0f64;
            for n in 1..=100i64 {
                let sphere = specfn::sphere_volume(n)?;
                below = below.max(specfn::main_bound(n, 1)? / sphere);
                let ne = (1.0 + specfn::gap_p(n)?) * sphere;
                double = double.max((specfn::main_bound(n, 2)? / ne - 1.0).abs());
            }
            // The rigidity factor is 1/(1 - theta) with theta the lower bound
            // on theta_2 that follows from lambda_1 > FACTOR * n.
            let mut derived = 0.0f64;
            for n in 2..=50i64 {
                let nf = n as f64;
                for step in 0..=8 {
                    let delta = 3.0 * nf / 8.0 * step as f64 / 8.0;
                    let lambda = specfn::FIRST_EIGENVALUE_LOWER_FACTOR * nf;
                    let ratio = 1.0 - 4.0 / 3.0 * delta / lambda;
                    let theta = nf / (4.0 * nf * nf - 3.0 * nf + 1.0) * ratio;
                    let want = 1.0 / (1.0 - theta);
                    let got = specfn::hyp_gap(GapKind::Rigidity { delta }, n)?;
                    derived = derived.max((got - want).abs() / want);
                }
            }
            let constant = SStats {
                s_min: 2.0,
                s_max: 2.0,
                int_s: 2.0,
                int_s2: 4.0,
                vol: 1.0,
            };
            Ok(vec![
                measured(specfn::main_bound(2, 1)?, 2.0 * PI + 3f64.sqrt() * PI, 1e-12),
                measured(specfn::main_bound(1, 2)?, 2.0 * (PI + 2.0 * 2f64.sqrt()), 1e-12),
                measured(below, 1.0, 0.0).note("max main_bound(n, 1)/Vol(S^n) over 1 <= n <= 100"),
                measured(double, 0.0, 1e-12).note("max |main_bound(n, 2)/((1+p(n)) Vol(S^n)) - 1| over 1 <= n <= 100"),
                measured(specfn::hyp_gap(GapKind::IntegralEinstein, 2)?, 4.0 / 3.0, 1e-15),
                measured(specfn::hyp_gap(GapKind::Antipodal, 2)?, 4.0 / 3.0, 1e-15),
                measured(specfn::hyp_gap(GapKind::Rigidity { delta: 0.0 }, 3)?, 1.12, 1e-14),
                measured(derived, 0.0, 1e-13).note("uses the imported first-eigenvalue bound lambda_1 > n/2"),
                measured(specfn::c_n_s(2, &constant)?, 0.25, 1e-15),
            ])
        }),
    );

    plan.task(
        CLOSED,
        "",
        vec![
            c("embeddedness/threshold-surface", EMBEDDEDNESS, Relation::Eq),
            c("embeddedness/gate-below-threshold", EMBEDDEDNESS, Relation::Le),
            c("embeddedness/gate-above-threshold", EMBEDDEDNESS, Relation::Gt),
            c("embeddedness/threshold-below-gap", EMBEDDEDNESS, Relation::Lt),
        ],
        Box::new(|| {
            let g2 = embeddedness_gate(2, 19.0)?;
            let g3 = embeddedness_gate(3, 31.0)?;
            let mut worst = f64::NEG_INFINITY;
            for n in 2..=100 {
                let gate = embeddedness_gate(n, 0.0)?;
                worst = worst.max(gate.threshold / ((1.0 + specfn::gap_p(n)?) * specfn::sphere_volume(n)?));
            }
            Ok(vec![
                measured(g2.threshold, 2.0 * PI * PI, 1e-12),
                measured(g2.vol, g2.threshold, 0.0).note("volume 19 in dimension 2 must be embedded"),
                measured(g3.vol, g3.threshold, 0.0).note("volume 31 in dimension 3: the gate is inconclusive"),
                measured(worst, 1.0, 0.0).note("max threshold/((1+p(n)) Vol(S^n)) over 2 <= n <= 100"),
            ])
        }),
    );
}

fn image_points(m: &ChartedImmersion, rng: &mut ChaCha8Rng, count: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| m.sample_image_point(rng, 0.05).1).collect()
}

fn branch_excess(p: &HeightProfile, branch: Branch) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for j in 0..p.r_values.len().saturating_sub(1) {
        let (r0, r1) = (p.r_values[j], p.r_values[j + 1]);
        let allowance = p.f_err[j] + p.f_err[j + 1];
        let wrong = match branch {
            Branch::Lower if r1 <= 0.0 => p.f_values[j] - p.f_values[j + 1],
            Branch::Upper if r0 > 0.0 => p.f_values[j + 1] - p.f_values[j],
            _ => continue,
        };
        worst = worst.max(wrong - allowance);
    }
    worst
}

/// Aggregate convergence ratio `sum r(2h) / sum r(h)`.
fn order_ratio(coarse: &[f64], fine: &[f64]) -> f64 {
    coarse.iter().sum::<f64>() / fine.iter().sum::<f64>()
}

fn member_tasks<'a>(plan: &mut Plan<'a>, cfg: &'a SuiteConfig, m: &'a ChartedImmersion, grid: &'a GridSpec) {
    use anchor::*;
    use Confidence::{Quadrature as Q, Sampled as S};
    let name = m.name().to_string();
    let gs = grid.summary();
    let id = |group: &str, check: &str| format!("{group}/{check}/{name}");
    let seed = cfg.seed;
    let counts = cfg.samples;
    let n = m.dim() as i64;

    plan.task(
        &name,
        &gs,
        vec![
            (id("quadrature", "volume"), VOLUMES, Relation::Eq, Q),
            (id("height", "mean-zero"), HEIGHT_IDENTITIES, Relation::Le, S),
            (id("height", "tangent-split"), HEIGHT_IDENTITIES, Relation::Le, S),
        ],
        Box::new(move || {
            let mut rng = rng_for(seed, &format!("{}/height", m.name()));
            let dirs: Vec<Vec<f64>> = (0..counts.directions).map(|_| unit_vector(&mut rng, m.coord_len())).collect();
            let k = dirs.len() + 1;
            let ints = quad::integrate_many(
                m,
                |s: &Sample, out: &mut [f64]| {
                    out[0] = 1.0;
                    for (o, a) in out[1..].iter_mut().zip(&dirs) {
                        *o = s.height(a);
                    }
                },
                k,
                grid,
            )?;
            let exact = m.exact_volume();
            let mean = ints[1..].iter().map(|e| e.value.abs()).fold(0.0, f64::max);
            // |a^T|^2 + phi^2 (+ psi^2 on hypersurfaces) against 1.
            let mut split = 0.0f64;
            for _ in 0..counts.residual_points {
                let u = m.sample_param(&mut rng, 0.05);
                let a = unit_vector(&mut rng, m.coord_len());
                let mut total = height::tangent_sq(m, &a, &u)? + height::height(m, &a, &u)?.powi(2);
                if m.is_hypersurface() {
                    total += height::normal_height(m, &a, &u)?.powi(2);
                    split = split.max((total - 1.0).abs());
                } else {
                    split = split.max(total - 1.0);
                }
            }
            Ok(vec![
                measured(ints[0].value, exact, 1e-8 * exact + ints[0].err_est),
                measured(mean, 0.0, 1e-8).note(format!("max |int phi_a| over {} random unit a", dirs.len())),
                if m.is_hypersurface() {
                    measured(split, 0.0, 1e-10).note("max | |a^T|^2 + phi^2 + psi^2 - 1 |")
                } else {
                    measured(split, 0.0, 1e-12).note("max |a^T|^2 + phi^2 - 1")
                },
            ])
        }),
    );

    plan.task(
        &name,
        &gs,
        vec![
            (id("minimality", "residual"), HEIGHT_IDENTITIES, Relation::Le, S),
            (id("minimality", "order"), HEIGHT_IDENTITIES, Relation::Eq, S),
            (id("height", "laplacian-residual"), HEIGHT_IDENTITIES, Relation::Le, S),
            (id("height", "laplacian-order"), HEIGHT_IDENTITIES, Relation::Eq, S),
        ],
        Box::new(move || {
            let mut rng = rng_for(seed, &format!("{}/residuals", m.name()));
            let h = 1e-3;
            let (mut tf, mut tc, mut hf, mut hc) = (vec![], vec![], vec![], vec![]);
            for _ in 0..counts.residual_points {
                let u = m.sample_param(&mut rng, 0.05);
                let a = unit_vector(&mut rng, m.coord_len());
                tf.push(m.minimality_residual(&u, h)?);
                tc.push(m.minimality_residual(&u, 2.0 * h)?);
                hf.push(height::laplace_height_residual(m, &a, &u, h)?);
                hc.push(height::laplace_height_residual(m, &a, &u, 2.0 * h)?);
            }
            let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
            let pts = format!("{} random points, h = 1e-3", tf.len());
            Ok(vec![
                measured(max(&tf), 1e-5, 0.0).note(format!("max |Delta f + n f| over {pts}")),
                measured(order_ratio(&tc, &tf), 4.0, 0.5).note("summed residual ratio r(2h)/r(h)"),
                measured(max(&hf), 1e-5, 0.0).note(format!("max |Delta phi_a + n phi_a| over {pts}")),
                measured(order_ratio(&hc, &hf), 4.0, 0.5).note("summed residual ratio r(2h)/r(h)"),
            ])
        }),
    );

    let is_equator = matches!(m.family(), Family::Equator { .. });
    let mut checks = vec![
        (id("monotonicity", "lower-branch"), MONOTONICITY, Relation::Le, S),
        (id("monotonicity", "upper-branch"), MONOTONICITY, Relation::Le, S),
    ];
    if is_equator {
        checks.push((id("monotonicity", "flat-profile"), MONOTONICITY, Relation::Le, S));
    }
    plan.task(
        &name,
        &gs,
        checks,
        Box::new(move || {
            let mut rng = rng_for(seed, &format!("{}/profile", m.name()));
            let r_grid = height::default_r_grid(64);
            let ball = specfn::ball_volume(n)?;
            let (mut lower, mut upper, mut flat) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for a in image_points(m, &mut rng, counts.profile_points) {
                let p = height::monotone_profile(m, &a, &r_grid, grid)?;
                lower = lower.max(branch_excess(&p, Branch::Lower));
                upper = upper.max(branch_excess(&p, Branch::Upper));
                for ((r, f), e) in p.r_values.iter().zip(&p.f_values).zip(&p.f_err) {
                    if *r > 0.0 {
                        flat = flat.max((f - ball).abs() - e);
                    }
                }
            }
            let note = format!(
                "largest wrong-way step minus its error allowance, {} image points, 64 levels",
                counts.profile_points
            );
            let mut out = vec![measured(lower, 0.0, 0.0).note(note.clone()), measured(upper, 0.0, 0.0).note(note)];
            if is_equator {
                out.push(measured(flat, 0.0, 1e-9).note("max over r > 0 of |F(r) - Vol(B^n)| minus its error estimate"));
            }
            Ok(out)
        }),
    );

    plan.task(
        &name,
        &gs,
        vec![
            (id("density", "matches-multiplicity"), DENSITY, Relation::Le, S),
            (id("density", "dominates-multiplicity"), DENSITY_MULTIPLICITY, Relation::Ge, S),
        ],
        Box::new(move || {
            let mut rng = rng_for(seed, &format!("{}/density", m.name()));
            let (mut dev, mut low) = (0.0f64, f64::INFINITY);
            for a in image_points(m, &mut rng, counts.density_points) {
                let x = height::xi_estimate(m, &a, None, grid)?;
                let mult = x.multiplicity as f64;
                dev = dev.max((x.estimate - mult).abs());
                low = low.min(x.estimate - mult);
            }
            let pts = format!("{} image points", counts.density_points);
            Ok(vec![
                measured(dev, 0.05, 0.0).note(format!("max |xi - m(p)| over {pts}")),
                measured(low, -0.1, 0.0).note(format!("min xi - m(p) over {pts}")),
            ])
        }),
    );

    let slabs = [(0.0, 1.0), (0.2, 0.7), (0.5, 0.5)];
    let caps = [0.5, 0.9, 0.99];
    let mut checks: Vec<_> = slabs
        .iter()
        .map(|(s, r)| (id("slab", &format!("{s}-{r}")), SLAB, Relation::Ge, Q))
        .collect();
    checks.extend(caps.iter().map(|t| (id("slab", &format!("cap-moment-{t}")), SLAB, Relation::Ge, Q)));
    plan.task(
        &name,
        &gs,
        checks,
        Box::new(move || {
            let mut rng = rng_for(seed, &format!("{}/slab", m.name()));
            let a = m.sample_image_point(&mut rng, 0.05).1;
            let xi = height::xi_estimate(m, &a, None, grid)?;
            let xi = Estimate {
                value: xi.estimate,
                err_est: xi.err_est,
            };
            let note = format!("at one image point, xi = {:.6}", xi.value);
            let mut out = Vec::new();
            for (s, r) in slabs {
                let c = height::slab_check(m, &a, s, r, xi, grid)?;
                out.push(measured(c.lhs, c.rhs, c.tol).note(note.clone()));
            }
            let ball = specfn::ball_volume(n)?;
            for t in caps {
                let lhs = quad::integrate_where(m, |s: &Sample| s.height(&a), &a, t, 1.0, grid)?;
                let scale = ball * (1.0 - t * t).powf(n as f64 / 2.0);
                let tol = lhs.err_est + xi.err_est * scale + 1e-10;
                out.push(measured(lhs.value, xi.value * scale, tol).note(format!("int over phi >= {t} of phi against xi Vol(B^n)(1-t^2)^(n/2)")));
            }
            Ok(out)
        }),
    );

    const STEPS: [&str; 7] = [
        "upper-half-volume",
        "upper-first-moment",
        "lower-second-moment",
        "cauchy-schwarz",
        "balance",
        "lower-half-volume",
        "volume-bound",
    ];
    let step_relation = |s: &str| match s {
        "lower-second-moment" => Relation::Le,
        "balance" => Relation::Eq,
        _ => Relation::Ge,
    };
    let mut checks: Vec<_> = STEPS
        .iter()
        .map(|s| (id("halfspace", s), MAIN_BOUND, step_relation(s), S))
        .collect();
    checks.push((id("main-bound", "volume"), MAIN_BOUND, Relation::Ge, Q));
    let antipodal = m.antipodal_invariant();
    if antipodal {
        checks.push((id("main-bound", "antipodal-volume"), MAIN_BOUND, Relation::Ge, Q));
    }
    let multiple = m.known_multiplicity().unwrap_or(1) >= 2;
    if multiple {
        checks.push((id("main-bound", "non-embedded-gap"), NON_EMBEDDED, Relation::Ge, Q));
    }
    if n >= 2 {
        checks.push((id("embeddedness", "gate"), EMBEDDEDNESS, Relation::Le, S));
    }
    plan.task(
        &name,
        &gs,
        checks,
        Box::new(move || {
            let mut rng = rng_for(seed, &format!("{}/halfspace", m.name()));
            let mut worst: Vec<Option<crate::compare::Comparison>> = vec![None; STEPS.len()];
            let mut mult = 0usize;
            let mut volume = Estimate { value: 0.0, err_est: 0.0 };
            for p in image_points(m, &mut rng, counts.audit_points) {
                let audit = height::halfspace_audit(m, &p, grid)?;
                mult = mult.max(audit.multiplicity);
                volume.value = audit.volume;
                for (slot, step) in worst.iter_mut().zip(STEPS) {
                    let c = audit.step(step).ok_or_else(|| Error::Config(format!("audit lacks step {step}")))?;
                    if slot.as_ref().is_none_or(|w| c.margin + c.tol < w.margin + w.tol) {
                        *slot = Some(c.clone());
                    }
                }
            }
            let pts = format!("worst of {} image points", counts.audit_points);
            let mut out: Vec<Measured> = worst
                .into_iter()
                .map(|c| {
                    let c = c.expect("at least one audit point");
                    measured(c.lhs, c.rhs, c.tol).note(pts.clone())
                })
                .collect();
            let total = quad::integrate(m, |_: &Sample| 1.0, grid)?;
            volume.err_est = total.err_est + 1e-9 * total.value;
            let mult = mult as i64;
            out.push(
                measured(total.value, specfn::main_bound(n, mult)?, volume.err_est)
                    .note(format!("largest sampled multiplicity m = {mult}")),
            );
            if antipodal {
                out.push(measured(total.value, specfn::antipodal_bound(n, mult)?, volume.err_est));
            }
            if multiple {
                let gap = (1.0 + specfn::gap_p(n)?) * specfn::sphere_volume(n)?;
                out.push(measured(total.value, gap, volume.err_est).note(format!("multiplicity {mult} >= 2")));
            }
            if n >= 2 {
                let gate = embeddedness_gate(n, (total.value - volume.err_est).max(0.0))?;
                if gate.must_be_embedded {
                    out.push(measured(mult as f64, 1.0, 0.0).note(format!(
                        "volume below the threshold {:.6}: the largest sampled multiplicity must be 1",
                        gate.threshold
                    )));
                } else {
                    out.push(measured(1.0, 1.0, 0.0).note("volume above the threshold: the gate is inconclusive"));
                }
            }
            Ok(out)
        }),
    );
}

/// Closed-form principal curvatures (descending) and `f_3`, for the members
/// where they are known: Clifford tori (for the standard orientation up to
/// sign) and equators.
fn known_curvature(m: &ChartedImmersion) -> Option<(Vec<f64>, f64)> {
    match m.family() {
        Family::Clifford { k, n } => {
            let (kf, nf) = (k as f64, n as f64);
            let (a, b) = (((nf - kf) / kf).sqrt(), -(kf / (nf - kf)).sqrt());
            let mut v = vec![a; k];
            v.extend(vec![b; n - k]);
            Some((v, kf * a.powi(3) + (nf - kf) * b.powi(3)))
        }
        Family::Equator { n, .. } => Some((vec![0.0; n], 0.0)),
        Family::CoveredCircle { .. } => Some((vec![0.0], 0.0)),
    }
}

fn spectrum_error(got: &[f64], want: &[f64]) -> f64 {
    let dist = |w: &[f64]| got.iter().zip(w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut flipped: Vec<f64> = want.iter().map(|v| -v).collect();
    flipped.reverse();
    dist(want).min(dist(&flipped))
}

/// Distance kept from chart singularities for nested differences; near the
/// poles of spherical coordinates rounding swamps the Laplacian of `S`.
const CURVATURE_MARGIN: f64 = 0.25;

fn hypersurface_tasks<'a>(plan: &mut Plan<'a>, cfg: &'a SuiteConfig, m: &'a ChartedImmersion, grid: &'a GridSpec) {
    use anchor::*;
    use Confidence::{Quadrature as Q, Sampled as S};
    let name = m.name().to_string();
    let gs = grid.summary();
    let id = |group: &str, check: &str| format!("{group}/{check}/{name}");
    let seed = cfg.seed;
    let counts = cfg.samples;
    let n = m.dim() as i64;
    let nf = n as f64;
    let clifford = matches!(m.family(), Family::Clifford { .. });
    let equator = matches!(m.family(), Family::Equator { .. });
    let antipodal = m.antipodal_invariant();

    plan.task(
        &name,
        &gs,
        vec![
            (id("curvature", "symmetry"), SECOND_FORM, Relation::Le, S),
            (id("curvature", "trace"), SECOND_FORM, Relation::Le, S),
            (id("curvature", "principal-curvatures"), SECOND_FORM, Relation::Le, S),
            (id("curvature", "squared-norm"), SECOND_FORM, Relation::Le, S),
            (id("curvature", "cubic-trace"), SECOND_FORM, Relation::Le, S),
            (id("simons", "identity-residual"), SIMONS, Relation::Le, S),
            (id("simons", "gradient-slack"), SIMONS, Relation::Ge, S),
        ],
        Box::new(move || {
            let (want, f3) = known_curvature(m).ok_or_else(|| Error::Config("no closed-form curvature".into()))?;
            let s_want: f64 = want.iter().map(|l| l * l).sum();
            let mut rng = rng_for(seed, &format!("{}/curvature", m.name()));
            let (mut asym, mut trace, mut spec, mut s_dev, mut f3_dev) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
            let (mut simons, mut slack) = (0.0f64, f64::INFINITY);
            for _ in 0..counts.curvature_points {
                let u = m.sample_param(&mut rng, CURVATURE_MARGIN);
                let c = curvature::shape_operator(m, &u, DEFAULT_STEP, None)?;
                asym = asym.max(c.asymmetry);
                trace = trace.max(c.trace.abs());
                spec = spec.max(spectrum_error(&c.eigenvalues, &want));
                s_dev = s_dev.max((c.s - s_want).abs());
                f3_dev = f3_dev.max((c.f3.abs() - f3.abs()).abs());
                let r = curvature::simons_residual(m, &u, DEFAULT_OUTER_STEP)?;
                simons = simons.max(r.identity_residual);
                slack = slack.min(r.gradient_bound_slack);
            }
            let pts = format!("{} random points", counts.curvature_points);
            Ok(vec![
                measured(asym, 0.0, 1e-8).note(format!("max |A_ij - A_ji| over {pts}")),
                measured(trace, 0.0, 1e-6).note(format!("max |tr A| over {pts}")),
                measured(spec, 0.0, 1e-6).note(format!("max eigenvalue error against the closed form, {pts}")),
                measured(s_dev, 0.0, 1e-6).note(format!("max |S - {s_want}| over {pts}")),
                measured(f3_dev, 0.0, 1e-6).note(format!("max ||f3| - {:.6}| over {pts}", f3.abs())),
                measured(simons, 1e-4, 0.0).note(format!("max |Delta S/2 - |grad h|^2 - S(n-S)| over {pts}")),
                measured(slack, 0.0, 1e-6).note(format!("min of 4S|grad h|^2 - |grad S|^2 over {pts}")),
            ])
        }),
    );

    // Curvature statistics and the gap theorems built on them.
    let mut checks = Vec::new();
    if clifford {
        checks.push((id("theta", "first-bound"), THETA, Relation::Le, S));
        checks.push((id("theta", "second-bound"), THETA, Relation::Le, S));
        checks.push((id("s-ratio", "constant-s"), S_RATIO, Relation::Eq, Q));
        if antipodal {
            checks.push((id("s-ratio", "volume"), S_RATIO, Relation::Ge, Q));
            checks.push((id("s-ratio", "chain"), S_RATIO, Relation::Ge, Q));
            checks.push((id("pinched", "volume"), PINCHED, Relation::Ge, Q));
            checks.push((id("rigidity", "volume-hypothesis-fails"), RIGIDITY, Relation::Gt, Q));
            checks.push((id("antipodal-gap", "volume"), ANTIPODAL_GAP, Relation::Ge, Q));
        }
        checks.push((id("integral-einstein-gap", "volume"), IE_GAP, Relation::Ge, Q));
    }
    let first_equality = matches!(m.family(), Family::Clifford { k: 1, .. });
    if first_equality {
        checks.push((id("theta", "first-equality"), THETA, Relation::Eq, S));
    }
    if equator {
        checks.push((id("theta", "second-equality"), THETA, Relation::Eq, Q));
        checks.push((id("rigidity", "totally-geodesic"), RIGIDITY, Relation::Le, Q));
    }
    if !checks.is_empty() {
        plan.task(
            &name,
            &gs,
            checks,
            Box::new(move || {
                let st = curvature::s_statistics(m, grid)?;
                let sphere = specfn::sphere_volume(n)?;
                let vol_tol = 1e-9 * st.vol;
                let mut out = Vec::new();
                // Sampled infimum of int phi_a^2 over unit a: coordinate axes
                // plus random directions.
                let mut rng = rng_for(seed, &format!("{}/theta", m.name()));
                let d = m.coord_len();
                let mut dirs: Vec<Vec<f64>> = (0..d)
                    .map(|i| {
                        let mut e = vec![0.0; d];
                        e[i] = 1.0;
                        e
                    })
                    .collect();
                dirs.extend((0..counts.directions).map(|_| unit_vector(&mut rng, d)));
                let sq = quad::integrate_many(
                    m,
                    |s: &Sample, o: &mut [f64]| {
                        for (o, a) in o.iter_mut().zip(&dirs) {
                            *o = s.height(a).powi(2);
                        }
                    },
                    dirs.len(),
                    grid,
                )?;
                let inf = sq.iter().map(|e| e.value).fold(f64::INFINITY, f64::min);
                let inf_note = format!("infimum sampled over {} directions", dirs.len());
                if clifford {
                    let th = specfn::theta_constants(n, &st)?;
                    out.push(measured(th.theta1 * st.vol, inf, 1e-6 * st.vol).note(inf_note.clone()));
                    out.push(measured(th.theta2 * st.vol, inf, 1e-6 * st.vol).note(inf_note.clone()));
                    let c = th.value();
                    out.push(measured(c, 1.0 / (2.0 * nf), 1e-6).note("C(n,S) from measured statistics"));
                    if antipodal {
                        let gap = 1.0 / (1.0 - c);
                        out.push(measured(st.vol, gap * sphere, vol_tol));
                        let ratio = specfn::hyp_gap(
                            GapKind::SRatio {
                                s_min: st.s_min,
                                s_max: st.s_max,
                            },
                            n,
                        )?;
                        out.push(measured(gap, ratio, 1e-9).note("1/(1-C) against 2n S_max/(2n S_max - S_min)"));
                        let delta = (st.s_max - nf).max(0.0);
                        if st.s_min < nf - 1e-6 {
                            return Err(Error::domain(format!("pinching needs S >= n, measured S_min = {}", st.s_min)));
                        }
                        out.push(
                            measured(st.vol, specfn::hyp_gap(GapKind::Pinched { delta }, n)? * sphere, vol_tol)
                                .note(format!("delta = {delta:e} from measured S_max")),
                        );
                        out.push(
                            measured(st.vol, specfn::hyp_gap(GapKind::Rigidity { delta }, n)? * sphere, vol_tol)
                                .note("the volume hypothesis fails, so rigidity is not contradicted"),
                        );
                        out.push(measured(st.vol, specfn::hyp_gap(GapKind::Antipodal, n)? * sphere, vol_tol));
                    }
                    out.push(measured(st.vol, specfn::hyp_gap(GapKind::IntegralEinstein, n)? * sphere, vol_tol));
                }
                if first_equality {
                    let th = specfn::theta_constants(n, &st)?;
                    out.push(
                        measured(th.theta1 * st.vol, inf, 1e-6 * st.vol)
                            .note(format!("equality case of the first bound; {inf_note}")),
                    );
                }
                if equator {
                    let lhs = nf / (4.0 * nf * nf - 3.0 * nf + 1.0) * st.int_s * st.int_s;
                    out.push(measured(lhs, st.int_s2 * inf, 1e-12).note("equality case of the second bound"));
                    out.push(measured(st.s_max, 0.0, 1e-10).note("S vanishes: totally geodesic"));
                }
                Ok(out)
            }),
        );
    }

    if antipodal {
        plan.task(
            &name,
            &gs,
            vec![(id("mean-square-height", "bound"), MEAN_SQUARE, Relation::Ge, S)],
            Box::new(move || {
                let mut rng = rng_for(seed, &format!("{}/mean-square", m.name()));
                let pts = image_points(m, &mut rng, counts.audit_points);
                let r = height::mean_square_height(m, &pts, grid)?;
                let c = r.bound_check.ok_or_else(|| Error::Config("bound applies to antipodal members only".into()))?;
                Ok(vec![measured(c.lhs, c.rhs, c.tol).note(format!("min over {} image points", pts.len()))])
            }),
        );
    }

    let symmetric = matches!(m.family(), Family::Clifford { k, n } if 2 * k == n);
    if symmetric {
        let outside = (n < 3).then_some("outside the stated dimension range n >= 3");
        plan.task(
            &name,
            &gs,
            vec![
                (id("integral-einstein", "phi-square"), IE_CONDITIONS, Relation::Le, S),
                (id("integral-einstein", "psi-square"), IE_CONDITIONS, Relation::Le, S),
                (id("integral-einstein", "phi-psi"), IE_CONDITIONS, Relation::Le, S),
                (id("integral-einstein", "mixed-cubic"), IE_CONDITIONS, Relation::Le, S),
            ],
            Box::new(move || {
                let mut rng = rng_for(seed, &format!("{}/integral-einstein", m.name()));
                let dirs: Vec<Vec<f64>> = (0..counts.directions).map(|_| unit_vector(&mut rng, m.coord_len())).collect();
                let ie = curvature::ie_checks(m, &dirs, grid)?;
                let exact = m.exact_volume() / (nf + 2.0);
                let phi = ie.rows.iter().map(|r| (r.int_phi_sq - exact).abs()).fold(0.0, f64::max);
                let note = |what: &str| {
                    let mut s = format!("{what}, max over {} unit directions", dirs.len());
                    if let Some(o) = outside {
                        s.push_str("; ");
                        s.push_str(o);
                    }
                    s
                };
                let tol = 1e-6 * ie.vol;
                Ok(vec![
                    measured(phi, 0.0, 1e-8).note(note("|int phi_a^2 - Vol/(n+2)| with the closed-form volume")),
                    measured(ie.psi_sq_residual, 0.0, tol).note(note("|int psi_a^2 - Vol/(n+2)|")),
                    measured(ie.phi_psi_residual, 0.0, tol).note(note("|int phi_a^2 - int psi_a^2|")),
                    measured(ie.mixed_residual, 0.0, tol).note(note("|int phi_a psi_a f3|")),
                ])
            }),
        );
    }
    if equator {
        plan.task(
            &name,
            &gs,
            vec![(id("integral-einstein", "hypothesis"), IE_CONDITIONS, Relation::Le, Q)],
            Box::new(move || {
                let ie = curvature::ie_checks(m, &[unit_vector(&mut rng_for(seed, m.name()), m.coord_len())], grid)?;
                let st = curvature::s_statistics(m, grid)?;
                Ok(vec![measured(st.s_max, 0.0, 1e-10).note(if ie.totally_geodesic {
                    "totally geodesic: the integral conditions do not apply"
                } else {
                    "expected a totally geodesic member"
                })])
            }),
        );
    }
}
