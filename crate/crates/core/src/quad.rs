//! Integration over charts.
//!
//! Whole-domain integrals use a tensor rule (periodic trapezoid on periodic
//! coordinates, Gauss–Legendre elsewhere) or seeded Monte Carlo. Every node
//! of a tensor rule owns a cell whose width is its weight, so the cells tile
//! the domain. Region integrals over `{s <= <f, a> <= t}` integrate cells
//! that lie inside with a small per-cell Gauss rule, drop cells outside, and
//! bisect the cells crossing the boundary. Cumulative profiles spread each
//! node's mass over the range a linear model of the height takes on its cell.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{ChartedImmersion, Interval};
use crate::linalg::dot;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// Trapezoid on periodic coordinates, Gauss–Legendre on the others.
    Product,
    PeriodicTrapezoid,
    GaussLegendre,
    MonteCarlo,
}

impl Rule {
    pub fn parse(s: &str) -> Result<Rule> {
        match s {
            "product" => Ok(Rule::Product),
            "periodic-trapezoid" | "trapezoid" => Ok(Rule::PeriodicTrapezoid),
            "gauss-legendre" | "gl" => Ok(Rule::GaussLegendre),
            "monte-carlo" | "mc" => Ok(Rule::MonteCarlo),
            other => Err(Error::Config(format!(
                "unknown rule `{other}` (product | periodic-trapezoid | gauss-legendre | monte-carlo)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Rule::Product => "product",
            Rule::PeriodicTrapezoid => "periodic-trapezoid",
            Rule::GaussLegendre => "gauss-legendre",
            Rule::MonteCarlo => "monte-carlo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorModel {
    None,
    Richardson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nodes_per_dim: Vec<usize>,
    pub rule: Rule,
    pub seed: u64,
    pub boundary_refine_depth: usize,
    pub error_model: ErrorModel,
}

impl GridSpec {
    pub fn new(nodes_per_dim: Vec<usize>, rule: Rule) -> Self {
        GridSpec {
            nodes_per_dim,
            rule,
            seed: 0,
            boundary_refine_depth: 6,
            error_model: ErrorModel::None,
        }
    }

    /// Default grid: 256 nodes per `2 pi` of periodic length and 128
    /// Gauss–Legendre nodes on `[0, pi]` for surfaces and curves; a quarter
    /// of that per coordinate, with shallower refinement, for `n >= 3`.
    pub fn default_for(m: &ChartedImmersion) -> Self {
        let (per_turn, polar, depth) = if m.dim() <= 2 { (256.0, 128, 6) } else { (64.0, 32, 2) };
        let nodes = m
            .domain()
            .iter()
            .map(|iv| {
                if iv.periodic {
                    (per_turn * iv.len() / (2.0 * std::f64::consts::PI)).round().max(4.0) as usize
                } else {
                    polar
                }
            })
            .collect();
        GridSpec {
            nodes_per_dim: nodes,
            rule: Rule::Product,
            seed: 0,
            boundary_refine_depth: depth,
            error_model: ErrorModel::None,
        }
    }

    /// Same grid with every node count multiplied by `factor` (at least 2).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut g = self.clone();
        g.nodes_per_dim = self
            .nodes_per_dim
            .iter()
            .map(|&k| ((k as f64 * factor).round() as usize).max(2))
            .collect();
        g
    }

    pub fn with_error_model(mut self, e: ErrorModel) -> Self {
        self.error_model = e;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.boundary_refine_depth = depth;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn total_nodes(&self) -> usize {
        self.nodes_per_dim.iter().product()
    }

    /// Compact form `NODESxNODES@rule/depth`, as accepted by the CLI.
    pub fn summary(&self) -> String {
        let nodes: Vec<String> = self.nodes_per_dim.iter().map(|k| k.to_string()).collect();
        let mut s = format!("{}@{}/{}", nodes.join("x"), self.rule.name(), self.boundary_refine_depth);
        if self.rule == Rule::MonteCarlo {
            s.push_str(&format!("#{}", self.seed));
        }
        if self.error_model == ErrorModel::Richardson {
            s.push_str("+richardson");
        }
        s
    }

    /// Parses the [`summary`](Self::summary) form. Rule, depth, seed and
    /// error model are optional (`product`, 6, 0, none).
    pub fn parse(s: &str) -> Result<GridSpec> {
        let bad = |why: &str| Error::Config(format!("bad grid `{s}`: {why}"));
        let (rest, richardson) = match s.strip_suffix("+richardson") {
            Some(r) => (r, true),
            None => (s, false),
        };
        let (rest, seed) = match rest.split_once('#') {
            Some((r, seed)) => (r, seed.parse::<u64>().map_err(|_| bad("seed is not an integer"))?),
            None => (rest, 0),
        };
        let (rest, depth) = match rest.split_once('/') {
            Some((r, d)) => (r, d.parse::<usize>().map_err(|_| bad("depth is not an integer"))?),
            None => (rest, 6),
        };
        let (nodes, rule) = match rest.split_once('@') {
            Some((nodes, rule)) => (nodes, Rule::parse(rule)?),
            None => (rest, Rule::Product),
        };
        let nodes_per_dim = nodes
            .split('x')
            .map(|k| k.parse::<usize>().ok().filter(|&k| k > 0))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("node counts must be positive integers separated by `x`"))?;
        Ok(GridSpec {
            nodes_per_dim,
            rule,
            seed,
            boundary_refine_depth: depth,
            error_model: if richardson { ErrorModel::Richardson } else { ErrorModel::None },
        })
    }

    /// Checks that the grid fits `m`: one node count per dimension and a rule
    /// compatible with each coordinate.
    pub fn validate(&self, m: &ChartedImmersion) -> Result<()> {
        if self.nodes_per_dim.len() != m.dim() {
            return Err(Error::Config(format!(
                "grid has {} node counts but {} has dimension {}",
                self.nodes_per_dim.len(),
                m.name(),
                m.dim()
            )));
        }
        if self.nodes_per_dim.iter().any(|&k| k == 0) {
            return Err(Error::Config("node counts must be positive".into()));
        }
        for (c, iv) in m.domain().iter().enumerate() {
            match self.rule {
                Rule::PeriodicTrapezoid if !iv.periodic => {
                    return Err(Error::Config(format!(
                        "periodic-trapezoid on non-periodic coordinate {c} of {}",
                        m.name()
                    )))
                }
                Rule::GaussLegendre if iv.periodic => {
                    return Err(Error::Config(format!(
                        "gauss-legendre on periodic coordinate {c} of {}",
                        m.name()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// A value with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub err_est: f64,
}

/// Everything known at an integration node; fields read what they need.
#[derive(Debug)]
pub struct Sample<'a> {
    pub u: &'a [f64],
    pub x: &'a [f64],
    /// Jacobian columns, column-major (`n` columns of length `N + 1`).
    pub jac: &'a [f64],
}

impl Sample<'_> {
    /// Height `<f(u), a>`.
    pub fn height(&self, a: &[f64]) -> f64 {
        dot(self.x, a)
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, cached per size.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(&k) {
        return (hit.0.clone(), hit.1.clone());
    }
    let rule = Arc::new(compute_gauss_legendre(k));
    cache.lock().unwrap().insert(k, rule.clone());
    (rule.0.clone(), rule.1.clone())
}

fn compute_gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; k];
    let mut w = vec![0.0; k];
    let kf = k as f64;
    for i in 0..(k + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (kf + 0.5)).cos();
        let mut dp = 1.0;
        // Newton from this guess converges in a handful of steps.
        for _ in 0..12 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=k {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            if k == 1 {
                p0 = 1.0;
            }
            dp = kf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() <= 1e-14 {
                break;
            }
        }
        // recompute derivative at the converged root
        let (mut p0, mut p1) = (1.0, z);
        for j in 2..=k {
            let jf = j as f64;
            let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
            p0 = p1;
            p1 = p2;
        }
        if k > 1 {
            dp = kf * (z * p1 - p0) / (z * z - 1.0);
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[k - 1 - i] = z;
        w[i] = wi;
        w[k - 1 - i] = wi;
    }
    if k % 2 == 1 {
        x[k / 2] = 0.0;
    }
    (x, w)
}

/// Nodes of one coordinate with their weights and cell bounds.
#[derive(Debug, Clone)]
pub(crate) struct Axis {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub cell_lo: Vec<f64>,
    pub cell_hi: Vec<f64>,
}

impl Axis {
    fn trapezoid(iv: &Interval, k: usize) -> Axis {
        let h = iv.len() / k as f64;
        let nodes: Vec<f64> = (0..k).map(|i| iv.lo + i as f64 * h).collect();
        Axis {
            cell_lo: nodes.iter().map(|x| x - 0.5 * h).collect(),
            cell_hi: nodes.iter().map(|x| x + 0.5 * h).collect(),
            weights: vec![h; k],
            nodes,
        }
    }

    fn gauss(iv: &Interval, k: usize) -> Axis {
        let (x, w) = gauss_legendre(k);
        let half = 0.5 * iv.len();
        let mid = iv.lo + half;
        let nodes: Vec<f64> = x.iter().map(|t| mid + half * t).collect();
        let weights: Vec<f64> = w.iter().map(|t| half * t).collect();
        let mut cell_lo = Vec::with_capacity(k);
        let mut cell_hi = Vec::with_capacity(k);
        let mut edge = iv.lo;
        for (i, wi) in weights.iter().enumerate() {
            cell_lo.push(edge);
            edge = if i + 1 == k { iv.hi } else { edge + wi };
            cell_hi.push(edge);
        }
        Axis {
            nodes,
            weights,
            cell_lo,
            cell_hi,
        }
    }
}

/// Tensor grid over a chart.
#[derive(Debug, Clone)]
pub(crate) struct TensorGrid {
    pub axes: Vec<Axis>,
}

impl TensorGrid {
    pub fn new(m: &ChartedImmersion, grid: &GridSpec) -> Result<TensorGrid> {
        grid.validate(m)?;
        if grid.rule == Rule::MonteCarlo {
            return Err(Error::Config("Monte Carlo has no tensor grid".into()));
        }
        let axes = m
            .domain()
            .iter()
            .zip(&grid.nodes_per_dim)
            .map(|(iv, &k)| if iv.periodic { Axis::trapezoid(iv, k) } else { Axis::gauss(iv, k) })
            .collect();
        Ok(TensorGrid { axes })
    }

    /// Grid over explicit intervals: trapezoid where `periodic` is set (the
    /// interval must then be a full period), Gauss–Legendre elsewhere.
    pub fn from_intervals(intervals: &[Interval], nodes: &[usize]) -> TensorGrid {
        let axes = intervals
            .iter()
            .zip(nodes)
            .map(|(iv, &k)| if iv.periodic { Axis::trapezoid(iv, k) } else { Axis::gauss(iv, k) })
            .collect();
        TensorGrid { axes }
    }

    /// Parameter of flat node `flat`.
    pub fn node(&self, flat: usize, u: &mut [f64]) {
        let mut rem = flat;
        for (c, ax) in self.axes.iter().enumerate() {
            u[c] = ax.nodes[rem % ax.nodes.len()];
            rem /= ax.nodes.len();
        }
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.nodes.len()).product()
    }

    /// Multi-index of flat node `flat` (first coordinate fastest).
    pub fn index(&self, mut flat: usize, idx: &mut [usize]) {
        for (c, ax) in self.axes.iter().enumerate() {
            idx[c] = flat % ax.nodes.len();
            flat /= ax.nodes.len();
        }
    }
}

struct Workspace {
    x: Vec<f64>,
    jac: Vec<f64>,
    u: Vec<f64>,
}

impl Workspace {
    fn new(m: &ChartedImmersion) -> Self {
        Workspace {
            x: vec![0.0; m.coord_len()],
            jac: vec![0.0; m.coord_len() * m.dim()],
            u: vec![0.0; m.dim()],
        }
    }

    /// Evaluates the chart at `self.u`; returns the area element.
    fn eval(&mut self, m: &ChartedImmersion) -> f64 {
        m.eval_jac_into(&self.u, &mut self.x, &mut self.jac);
        m.area_from_jac(&self.jac)
    }

    fn sample(&self) -> Sample<'_> {
        Sample {
            u: &self.u,
            x: &self.x,
            jac: &self.jac,
        }
    }
}

/// Deterministic parallel sum over `0..len`: chunks run in parallel, each
/// with its own scratch workspace, and are reduced in index order.
fn ordered_sum<F>(m: &ChartedImmersion, len: usize, k: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut Workspace, &mut [f64]) + Sync + Send,
{
    const CHUNK: usize = 1024;
    let chunks = len.div_ceil(CHUNK);
    let partial: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut ws = Workspace::new(m);
            let mut acc = vec![0.0; k];
            for i in c * CHUNK..((c + 1) * CHUNK).min(len) {
                f(i, &mut ws, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; k];
    for p in partial {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

fn check_fields(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("at least one field is required".into()));
    }
    Ok(())
}

fn check_region_fields(k: usize) -> Result<()> {
    check_fields(k)?;
    if k > MAX_REGION_FIELDS {
        return Err(Error::Config(format!(
            "at most {MAX_REGION_FIELDS} fields per region integral, got {k}"
        )));
    }
    Ok(())
}

fn tensor_integrate_many<F>(m: &ChartedImmersion, fields: &F, k: usize, tg: &TensorGrid) -> Vec<f64>
where
    F: Fn(&Sample, &mut [f64]) + Sync,
{
    let n = m.dim();
    ordered_sum(m, tg.len(), k, |flat, ws, acc| {
        let mut idx = vec![0; n];
        tg.index(flat, &mut idx);
        let mut w = 1.0;
        for c in 0..n {
            ws.u[c] = tg.axes[c].nodes[idx[c]];
            w *= tg.axes[c].weights[idx[c]];
        }
        let area = ws.eval(m);
        let mut vals = vec![0.0; k];
        fields(&ws.sample(), &mut vals);
        for (a, v) in acc.iter_mut().zip(vals) {
            *a += w * area * v;
        }
    })
}

fn domain_volume(m: &ChartedImmersion) -> f64 {
    m.domain().iter().map(|iv| iv.len()).product()
}

/// Uniform Monte Carlo samples of the chart domain, in a fixed order.
fn monte_carlo_params(m: &ChartedImmersion, grid: &GridSpec) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    let count = grid.total_nodes();
    let mut out = Vec::with_capacity(count * m.dim());
    for _ in 0..count {
        for iv in m.domain() {
            out.push(rng.gen_range(iv.lo..iv.hi));
        }
    }
    out
}

/// Monte Carlo means and standard errors of `vol * field * area`, where the
/// fields may already carry an indicator.
fn monte_carlo_many<F>(m: &ChartedImmersion, fields: &F, k: usize, grid: &GridSpec) -> Vec<Estimate>
where
    F: Fn(&Sample, &mut [f64]) + Sync,
{
    let n = m.dim();
    let params = monte_carlo_params(m, grid);
    let count = grid.total_nodes();
    let vol = domain_volume(m);
    let sums = ordered_sum(m, count, 2 * k, |i, ws, acc| {
        ws.u.copy_from_slice(&params[i * n..(i + 1) * n]);
        let area = ws.eval(m);
        let mut vals = vec![0.0; k];
        fields(&ws.sample(), &mut vals);
        for (j, v) in vals.iter().enumerate() {
            let y = vol * area * v;
            acc[j] += y;
            acc[k + j] += y * y;
        }
    });
    let nf = count as f64;
    (0..k)
        .map(|j| {
            let mean = sums[j] / nf;
            let var = if count > 1 {
                ((sums[k + j] - nf * mean * mean) / (nf - 1.0)).max(0.0)
            } else {
                f64::INFINITY
            };
            Estimate {
                value: mean,
                err_est: (var / nf).sqrt(),
            }
        })
        .collect()
}

fn halved(grid: &GridSpec) -> GridSpec {
    grid.scaled(0.5)
}

/// Integrates `k` fields at once: `sum_i w_i field(u_i) sqrt(det g(u_i))`.
pub fn integrate_many<F>(m: &ChartedImmersion, fields: F, k: usize, grid: &GridSpec) -> Result<Vec<Estimate>>
where
    F: Fn(&Sample, &mut [f64]) + Sync,
{
    check_fields(k)?;
    grid.validate(m)?;
    if grid.rule == Rule::MonteCarlo {
        return Ok(monte_carlo_many(m, &fields, k, grid));
    }
    let tg = TensorGrid::new(m, grid)?;
    let values = tensor_integrate_many(m, &fields, k, &tg);
    let errs = match grid.error_model {
        ErrorModel::None => vec![0.0; k],
        ErrorModel::Richardson => {
            let coarse = tensor_integrate_many(m, &fields, k, &TensorGrid::new(m, &halved(grid))?);
            values.iter().zip(&coarse).map(|(a, b)| (a - b).abs()).collect()
        }
    };
    Ok(values
        .into_iter()
        .zip(errs)
        .map(|(value, err_est)| Estimate { value, err_est })
        .collect())
}

/// Integral of a scalar field over the whole manifold.
pub fn integrate<F>(m: &ChartedImmersion, field: F, grid: &GridSpec) -> Result<Estimate>
where
    F: Fn(&Sample) -> f64 + Sync,
{
    Ok(integrate_many(m, |s, out| out[0] = field(s), 1, grid)?[0])
}

/// Fraction of `[0, 1]^d`-distributed `base + sum c_d V_d` lying at or above
/// `r`, i.e. `1 - CDF`. Widths must be non-negative.
pub(crate) fn linear_fraction_above(base: f64, widths: &[f64], r: f64) -> f64 {
    let cmax = widths.iter().cloned().fold(0.0, f64::max);
    let mut c = [0.0; 8];
    let mut d = 0;
    for &w in widths {
        if w > 1e-3 * cmax && d < c.len() {
            c[d] = w;
            d += 1;
        }
    }
    let total: f64 = c[..d].iter().sum();
    let x = r - base;
    if x <= 0.0 {
        return 1.0;
    }
    if x >= total {
        return 0.0;
    }
    let cdf = match d {
        0 => return 0.0,
        1 => x / c[0],
        2 => {
            let (a, b) = if c[0] <= c[1] { (c[0], c[1]) } else { (c[1], c[0]) };
            if x <= a {
                x * x / (2.0 * a * b)
            } else if x <= b {
                (x - 0.5 * a) / b
            } else {
                let y = a + b - x;
                1.0 - y * y / (2.0 * a * b)
            }
        }
        _ => {
            // inclusion–exclusion over subsets
            let mut sum = 0.0;
            let mut fact = 1.0;
            for i in 2..=d {
                fact *= i as f64;
            }
            let prod: f64 = c[..d].iter().product();
            for mask in 0u32..(1 << d) {
                let shift: f64 = (0..d).filter(|j| mask >> j & 1 == 1).map(|j| c[j]).sum();
                let y = x - shift;
                if y > 0.0 {
                    let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    sum += sign * y.powi(d as i32);
                }
            }
            (sum / (fact * prod)).clamp(0.0, 1.0)
        }
    };
    1.0 - cdf
}

/// Linear model of the height on a box around `center`: base value and
/// per-coordinate widths, so that the height is `base + sum c_d V_d`.
fn linear_model(phi: f64, grad: &[f64], lo: &[f64], hi: &[f64], widths: &mut [f64]) -> f64 {
    let mut base = phi;
    for d in 0..grad.len() {
        let (a, b) = (grad[d] * lo[d], grad[d] * hi[d]);
        base += a.min(b);
        widths[d] = (b - a).abs();
    }
    base
}

fn fraction_between(base: f64, widths: &[f64], s: f64, t: f64) -> f64 {
    let above_s = if s <= -1.0 { 1.0 } else { linear_fraction_above(base, widths, s) };
    let above_t = if t >= 1.0 { 0.0 } else { linear_fraction_above(base, widths, t) };
    // strictly above t is excluded; the level set itself has measure zero
    (above_s - above_t).clamp(0.0, 1.0)
}

struct Region<'a> {
    a: &'a [f64],
    s: f64,
    t: f64,
    depth: usize,
    /// Gauss points per coordinate inside certified boxes.
    q: usize,
    gl: (Vec<f64>, Vec<f64>),
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Inside,
    Outside,
    Straddle,
}

impl Region<'_> {
    fn classify_range(&self, lo: f64, hi: f64) -> Side {
        let below = self.s > -1.0 && hi < self.s;
        let above = self.t < 1.0 && lo > self.t;
        if below || above {
            return Side::Outside;
        }
        let in_s = self.s <= -1.0 || lo >= self.s;
        let in_t = self.t >= 1.0 || hi <= self.t;
        if in_s && in_t {
            Side::Inside
        } else {
            Side::Straddle
        }
    }
}

/// Fields integrated together over one region are limited to this many.
pub const MAX_REGION_FIELDS: usize = 4;

type FieldVals = [f64; MAX_REGION_FIELDS];

/// Per-box accumulator: fine and one-level-coarser values of each field.
struct BoxResult {
    fine: FieldVals,
    coarse: FieldVals,
    straddle_mass: FieldVals,
    inside: bool,
}

impl BoxResult {
    fn zero() -> Self {
        BoxResult {
            fine: [0.0; MAX_REGION_FIELDS],
            coarse: [0.0; MAX_REGION_FIELDS],
            straddle_mass: [0.0; MAX_REGION_FIELDS],
            inside: false,
        }
    }
}

impl<'a> Region<'a> {
    fn gauss_box<F>(&self, m: &ChartedImmersion, fields: &F, k: usize, lo: &[f64], hi: &[f64], ws: &mut Workspace, out: &mut [f64])
    where
        F: Fn(&Sample, &mut [f64]) + Sync,
    {
        let n = lo.len();
        let q = self.q;
        let total = q.pow(n as u32);
        let mut vals = [0.0; MAX_REGION_FIELDS];
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            for d in 0..n {
                let j = rem % q;
                rem /= q;
                let half = 0.5 * (hi[d] - lo[d]);
                ws.u[d] = lo[d] + half * (1.0 + self.gl.0[j]);
                w *= half * self.gl.1[j];
            }
            let area = ws.eval(m);
            fields(&ws.sample(), &mut vals[..k]);
            for (o, v) in out.iter_mut().zip(&vals[..k]) {
                *o += w * area * v;
            }
        }
    }

    /// Classifies a box from the height and gradient at its centre, using
    /// `|phi(u) - phi(c) - grad . (u - c)| <= (sum_d |u_d - c_d|)^2 / 2`,
    /// valid because second derivatives of every chart have norm at most 1.
    fn box_recurse<F>(&self, m: &ChartedImmersion, fields: &F, k: usize, lo: &[f64], hi: &[f64], level: usize, ws: &mut Workspace) -> BoxResult
    where
        F: Fn(&Sample, &mut [f64]) + Sync,
    {
        let n = lo.len();
        for d in 0..n {
            ws.u[d] = 0.5 * (lo[d] + hi[d]);
        }
        let area = ws.eval(m);
        let phi = dot(&ws.x, self.a);
        let d_len = m.coord_len();
        let mut grad = [0.0; 8];
        let mut spread = 0.0;
        let mut l1 = 0.0;
        for d in 0..n {
            grad[d] = dot(&ws.jac[d * d_len..(d + 1) * d_len], self.a);
            let h = 0.5 * (hi[d] - lo[d]);
            spread += grad[d].abs() * h;
            l1 += h;
        }
        let bound = spread + 0.5 * l1 * l1;
        let mut out = BoxResult::zero();
        match self.classify_range(phi - bound, phi + bound) {
            Side::Outside => return out,
            Side::Inside => {
                self.gauss_box(m, fields, k, lo, hi, ws, &mut out.fine[..k]);
                out.coarse = out.fine;
                out.inside = true;
                return out;
            }
            Side::Straddle => {}
        }

        // Leaf value: linear-model fraction times the centre value.
        let vol: f64 = (0..n).map(|d| hi[d] - lo[d]).product();
        let mut centre = [0.0; MAX_REGION_FIELDS];
        fields(&ws.sample(), &mut centre[..k]);
        let mut offs_lo = [0.0; 8];
        let mut offs_hi = [0.0; 8];
        for d in 0..n {
            offs_lo[d] = -0.5 * (hi[d] - lo[d]);
            offs_hi[d] = 0.5 * (hi[d] - lo[d]);
        }
        let mut widths = [0.0; 8];
        let base = linear_model(phi, &grad[..n], &offs_lo[..n], &offs_hi[..n], &mut widths[..n]);
        let frac = fraction_between(base, &widths[..n], self.s, self.t);
        let mut leaf = [0.0; MAX_REGION_FIELDS];
        for j in 0..k {
            leaf[j] = frac * centre[j] * area * vol;
        }

        if level >= self.depth {
            out.fine = leaf;
            out.coarse = leaf;
            for j in 0..k {
                out.straddle_mass[j] = (centre[j] * area * vol).abs();
            }
            return out;
        }

        let mut clo = [0.0; 8];
        let mut chi = [0.0; 8];
        for child in 0..(1usize << n) {
            for d in 0..n {
                let mid = 0.5 * (lo[d] + hi[d]);
                if child >> d & 1 == 0 {
                    clo[d] = lo[d];
                    chi[d] = mid;
                } else {
                    clo[d] = mid;
                    chi[d] = hi[d];
                }
            }
            let r = self.box_recurse(m, fields, k, &clo[..n], &chi[..n], level + 1, ws);
            for j in 0..k {
                out.fine[j] += r.fine[j];
                out.coarse[j] += r.coarse[j];
                out.straddle_mass[j] += r.straddle_mass[j];
            }
        }
        if level + 1 == self.depth {
            out.coarse = leaf;
        }
        out
    }
}

fn check_region(m: &ChartedImmersion, a: &[f64], s: f64, t: f64) -> Result<()> {
    if a.len() != m.coord_len() {
        return Err(Error::domain(format!(
            "direction has {} coordinates, expected {}",
            a.len(),
            m.coord_len()
        )));
    }
    let len = dot(a, a).sqrt();
    if (len - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("direction must be a unit vector, |a| = {len}")));
    }
    if !(s <= t) || s < -1.0 || t > 1.0 {
        return Err(Error::domain(format!("need -1 <= s <= t <= 1, got s = {s}, t = {t}")));
    }
    Ok(())
}

/// Region integral on a prepared tensor grid. Also reports whether every
/// cell was certified inside the region.
pub(crate) fn where_on_grid<F>(m: &ChartedImmersion, tg: &TensorGrid, fields: &F, k: usize, a: &[f64], s: f64, t: f64, depth: usize) -> (Vec<Estimate>, bool)
where
    F: Fn(&Sample, &mut [f64]) + Sync,
{
    let n = m.dim();
    let q = if n <= 2 { 3 } else { 2 };
    let region = Region {
        a,
        s,
        t,
        depth,
        q,
        gl: gauss_legendre(q),
    };
    // layout: fine, coarse, straddle mass, count of cells not fully inside
    let sums = ordered_sum(m, tg.len(), 3 * k + 1, |flat, ws, acc| {
        let mut idx = vec![0; n];
        tg.index(flat, &mut idx);
        let lo: Vec<f64> = (0..n).map(|c| tg.axes[c].cell_lo[idx[c]]).collect();
        let hi: Vec<f64> = (0..n).map(|c| tg.axes[c].cell_hi[idx[c]]).collect();
        let r = region.box_recurse(m, fields, k, &lo, &hi, 0, ws);
        for j in 0..k {
            acc[j] += r.fine[j];
            acc[k + j] += (r.fine[j] - r.coarse[j]).abs();
            acc[2 * k + j] += r.straddle_mass[j];
        }
        if !r.inside {
            acc[3 * k] += 1.0;
        }
    });
    let est = (0..k)
        .map(|j| {
            let err = if depth == 0 { sums[2 * k + j] } else { sums[k + j] };
            Estimate {
                value: sums[j],
                err_est: err + 1e-13 * sums[j].abs(),
            }
        })
        .collect();
    (est, sums[3 * k] == 0.0)
}

fn tensor_where_many<F>(m: &ChartedImmersion, fields: &F, k: usize, a: &[f64], s: f64, t: f64, grid: &GridSpec) -> Result<Vec<Estimate>>
where
    F: Fn(&Sample, &mut [f64]) + Sync,
{
    let tg = TensorGrid::new(m, grid)?;
    let (est, all_inside) = where_on_grid(m, &tg, fields, k, a, s, t, grid.boundary_refine_depth);
    if all_inside {
        // The region covers the whole manifold: use the node rule itself.
        return integrate_many(m, fields, k, &GridSpec {
            error_model: ErrorModel::None,
            ..grid.clone()
        });
    }
    Ok(est)
}

/// Integrates `k` fields over `{s <= <f, a> <= t}`. `s = -1` and `t = 1`
/// leave that side of the slab open.
pub fn integrate_where_many<F>(m: &ChartedImmersion, fields: F, k: usize, a: &[f64], s: f64, t: f64, grid: &GridSpec) -> Result<Vec<Estimate>>
where
    F: Fn(&Sample, &mut [f64]) + Sync,
{
    check_region_fields(k)?;
    grid.validate(m)?;
    check_region(m, a, s, t)?;
    if grid.rule == Rule::MonteCarlo {
        let masked = |smp: &Sample, out: &mut [f64]| {
            let phi = smp.height(a);
            let inside = (s <= -1.0 || phi >= s) && (t >= 1.0 || phi <= t);
            if inside {
                fields(smp, out);
            } else {
                out.iter_mut().for_each(|o| *o = 0.0);
            }
        };
        return Ok(monte_carlo_many(m, &masked, k, grid));
    }
    let mut est = tensor_where_many(m, &fields, k, a, s, t, grid)?;
    if grid.error_model == ErrorModel::Richardson {
        let coarse = tensor_where_many(m, &fields, k, a, s, t, &halved(grid))?;
        for (e, c) in est.iter_mut().zip(coarse) {
            e.err_est += (e.value - c.value).abs();
        }
    }
    Ok(est)
}

/// Integral of a scalar field over `{s <= <f, a> <= t}`.
pub fn integrate_where<F>(m: &ChartedImmersion, field: F, a: &[f64], s: f64, t: f64, grid: &GridSpec) -> Result<Estimate>
where
    F: Fn(&Sample) -> f64 + Sync,
{
    Ok(integrate_where_many(m, |smp, out| out[0] = field(smp), 1, a, s, t, grid)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub r: f64,
    pub value: f64,
    pub err_est: f64,
}

/// One node's contribution to a cumulative profile: its mass and the range
/// `[base, base + sum widths]` a linear height model sweeps over its cell.
struct Spread {
    base: f64,
    top: f64,
    mass: f64,
    widths: [f64; 8],
}

fn spreads<F>(m: &ChartedImmersion, a: &[f64], field: &F, grid: &GridSpec) -> Result<Vec<Spread>>
where
    F: Fn(&Sample) -> f64 + Sync,
{
    let n = m.dim();
    let d_len = m.coord_len();
    if grid.rule == Rule::MonteCarlo {
        let params = monte_carlo_params(m, grid);
        let w = domain_volume(m) / grid.total_nodes() as f64;
        return Ok((0..grid.total_nodes())
            .into_par_iter()
            .map(|i| {
                let mut ws = Workspace::new(m);
                ws.u.copy_from_slice(&params[i * n..(i + 1) * n]);
                let area = ws.eval(m);
                let phi = dot(&ws.x, a);
                Spread {
                    base: phi,
                    top: phi,
                    mass: w * area * field(&ws.sample()),
                    widths: [0.0; 8],
                }
            })
            .collect());
    }
    let tg = TensorGrid::new(m, grid)?;
    Ok((0..tg.len())
        .into_par_iter()
        .map(|flat| {
            let mut ws = Workspace::new(m);
            let mut idx = vec![0; n];
            tg.index(flat, &mut idx);
            let mut w = 1.0;
            let mut lo = [0.0; 8];
            let mut hi = [0.0; 8];
            for c in 0..n {
                let ax = &tg.axes[c];
                ws.u[c] = ax.nodes[idx[c]];
                w *= ax.weights[idx[c]];
                lo[c] = ax.cell_lo[idx[c]] - ws.u[c];
                hi[c] = ax.cell_hi[idx[c]] - ws.u[c];
            }
            let area = ws.eval(m);
            let mut phi = dot(&ws.x, a);
            let mut grad = [0.0; 8];
            for c in 0..n {
                grad[c] = dot(&ws.jac[c * d_len..(c + 1) * d_len], a);
            }
            // Shift by the cell mean of the diagonal quadratic terms; without
            // it the model is biased by O(h^2) near the height's extrema.
            let mut xs = vec![0.0; d_len];
            let mut u = ws.u.clone();
            for c in 0..n {
                const H: f64 = 1e-4;
                u[c] = ws.u[c] + H;
                m.eval_into(&u, &mut xs);
                let plus = dot(&xs, a);
                u[c] = ws.u[c] - H;
                m.eval_into(&u, &mut xs);
                let minus = dot(&xs, a);
                u[c] = ws.u[c];
                let second = (plus - 2.0 * dot(&ws.x, a) + minus) / (H * H);
                phi += 0.5 * second * (lo[c] * lo[c] + lo[c] * hi[c] + hi[c] * hi[c]) / 3.0;
            }
            let mut widths = [0.0; 8];
            let base = linear_model(phi, &grad[..n], &lo[..n], &hi[..n], &mut widths[..n]);
            Spread {
                base,
                top: base + widths[..n].iter().sum::<f64>(),
                mass: w * area * field(&ws.sample()),
                widths,
            }
        })
        .collect())
}

/// Evaluates `r -> sum of mass above r` for a sorted grid of `r` values.
fn profile_values(mut sp: Vec<Spread>, n: usize, r_grid: &[f64]) -> Vec<f64> {
    sp.sort_by(|x, y| x.base.total_cmp(&y.base).then(x.top.total_cmp(&y.top)));
    let mut suffix = vec![0.0; sp.len() + 1];
    for i in (0..sp.len()).rev() {
        suffix[i] = suffix[i + 1] + sp[i].mass;
    }
    let max_width = sp.iter().map(|s| s.top - s.base).fold(0.0, f64::max);
    r_grid
        .iter()
        .map(|&r| {
            if r <= -1.0 {
                return suffix[0];
            }
            if r >= 1.0 {
                return 0.0;
            }
            // Entries with base >= r count fully; entries with base in
            // [r - max_width, r) may count partially.
            let first_full = sp.partition_point(|s| s.base < r);
            let first_band = sp.partition_point(|s| s.base < r - max_width);
            let mut v = suffix[first_full];
            for s in &sp[first_band..first_full] {
                if s.top > r {
                    v += s.mass * linear_fraction_above(s.base, &s.widths[..n], r);
                }
            }
            v
        })
        .collect()
}

/// `r -> integral of field over {<f, a> >= r}` on a sorted grid of levels.
///
/// Each node's weighted value is spread over its cell using a linear model
/// of the height, then all levels are read off one sorted pass. The error
/// estimate is the difference from the same computation on a halved grid.
pub fn cumulative_profile<F>(m: &ChartedImmersion, a: &[f64], field: F, r_grid: &[f64], grid: &GridSpec) -> Result<Vec<ProfilePoint>>
where
    F: Fn(&Sample) -> f64 + Sync,
{
    grid.validate(m)?;
    check_region(m, a, -1.0, 1.0)?;
    if r_grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::domain("r_grid must be sorted ascending"));
    }
    if let Some(r) = r_grid.iter().find(|r| !r.is_finite()) {
        return Err(Error::domain(format!("non-finite level {r}")));
    }
    let n = m.dim();
    let fine = profile_values(spreads(m, a, &field, grid)?, n, r_grid);
    let errs: Vec<f64> = if grid.rule == Rule::MonteCarlo {
        // binomial-style standard error of each partial sum
        let sp = spreads(m, a, &field, grid)?;
        let count = sp.len() as f64;
        r_grid
            .iter()
            .map(|&r| {
                let (mut s1, mut s2) = (0.0, 0.0);
                for s in &sp {
                    if s.base >= r {
                        let y = s.mass * count;
                        s1 += y;
                        s2 += y * y;
                    }
                }
                let mean = s1 / count;
                ((s2 / count - mean * mean).max(0.0) / count).sqrt()
            })
            .collect()
    } else {
        let coarse = profile_values(spreads(m, a, &field, &halved(grid))?, n, r_grid);
        let scale = fine.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let diff: Vec<f64> = fine.iter().zip(&coarse).map(|(f, c)| (f - c).abs()).collect();
        // The two error curves can cross, and the spread assignment of node
        // masses does not converge cleanly; neighbouring differences and a
        // safety factor of two keep the estimate from collapsing.
        (0..diff.len())
            .map(|j| {
                let lo = j.saturating_sub(2);
                let hi = (j + 3).min(diff.len());
                2.0 * diff[lo..hi].iter().cloned().fold(0.0, f64::max) + 1e-12 * scale
            })
            .collect()
    };
    Ok(r_grid
        .iter()
        .zip(fine)
        .zip(errs)
        .map(|((&r, value), err_est)| ProfilePoint { r, value, err_est })
        .collect())
}
