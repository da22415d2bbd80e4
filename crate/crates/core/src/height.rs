//! Height functions `phi_a = <f, a>` and the estimates built on them: the
//! level-set monotonicity profile, the density `xi(a)`, slab volume bounds and
//! the half-space inequality chain behind the main volume bound.

use serde::Serialize;

use crate::catalog::{ChartedImmersion, Interval};
use crate::compare::{Comparison, Relation};
use crate::linalg::{dot, inverse};
use crate::quad::{self, Estimate, GridSpec, Sample, TensorGrid};
use crate::specfn;
use crate::{Error, Result};

/// Preimage tolerance used when locating cap centres.
pub const PREIMAGE_TOL: f64 = 1e-10;

/// Heights below this everywhere mean the direction sees nothing.
const DEGENERATE_HEIGHT: f64 = 1e-8;

fn check_direction(m: &ChartedImmersion, a: &[f64]) -> Result<()> {
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
    Ok(())
}

/// `phi_a(u) = <f(u), a>`.
pub fn height(m: &ChartedImmersion, a: &[f64], u: &[f64]) -> Result<f64> {
    check_direction(m, a)?;
    Ok(dot(&m.eval(u)?, a))
}

/// `psi_a(u) = <nu(u), a>` on hypersurfaces.
pub fn normal_height(m: &ChartedImmersion, a: &[f64], u: &[f64]) -> Result<f64> {
    check_direction(m, a)?;
    Ok(dot(&m.unit_normal(u)?, a))
}

/// `|a^T|^2`, the squared length of the projection of `a` onto the tangent
/// space `span(J)`.
pub fn tangent_sq(m: &ChartedImmersion, a: &[f64], u: &[f64]) -> Result<f64> {
    check_direction(m, a)?;
    let (g, _) = m.metric_and_area(u)?;
    let jac = m.jacobian(u)?;
    let n = m.dim();
    let d = m.coord_len();
    let b: Vec<f64> = (0..n).map(|c| dot(&jac[c * d..(c + 1) * d], a)).collect();
    let ginv = inverse(&g, n).ok_or_else(|| Error::degenerate(u, "metric not invertible"))?;
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            q += b[i] * ginv[i * n + j] * b[j];
        }
    }
    Ok(q)
}

/// `|Delta phi_a + n phi_a|` at `u` by the finite-difference Laplacian.
pub fn laplace_height_residual(m: &ChartedImmersion, a: &[f64], u: &[f64], h: f64) -> Result<f64> {
    check_direction(m, a)?;
    let lap = m.laplace_beltrami(u, h, |v| {
        let mut x = vec![0.0; m.coord_len()];
        m.eval_into(v, &mut x);
        Ok(vec![dot(&x, a)])
    })?;
    let phi = height(m, a, u)?;
    Ok((lap[0] + m.dim() as f64 * phi).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// `(-1, 0]`, where the profile should not decrease.
    Lower,
    /// `(0, 1)`, where the profile should not increase.
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub branch: Branch,
    pub r_from: f64,
    pub r_to: f64,
    /// Amount by which the wrong-way change exceeds the combined error.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeightProfile {
    pub a: Vec<f64>,
    pub r_values: Vec<f64>,
    /// `F(r) = int_{phi >= r} phi / (1 - r^2)^{n/2}`.
    pub f_values: Vec<f64>,
    pub f_err: Vec<f64>,
    /// `Vol{phi >= r}`.
    pub cap_volumes: Vec<f64>,
    pub cap_err: Vec<f64>,
    pub violations: Vec<Violation>,
    /// Largest wrong-way change relative to its error allowance (negative
    /// when every step is within bounds).
    pub worst_margin: f64,
    pub xi: Option<XiEstimate>,
}

/// Levels `-1 + (2j + 1) / count`, an open grid on `(-1, 1)`.
pub fn default_r_grid(count: usize) -> Vec<f64> {
    (0..count).map(|j| -1.0 + (2.0 * j as f64 + 1.0) / count as f64).collect()
}

fn max_abs_height(m: &ChartedImmersion, a: &[f64], grid: &GridSpec) -> Result<f64> {
    let coarse = GridSpec {
        rule: quad::Rule::Product,
        ..grid.scaled(0.25)
    };
    let tg = TensorGrid::new(m, &coarse)?;
    let mut u = vec![0.0; m.dim()];
    let mut x = vec![0.0; m.coord_len()];
    let mut best = 0.0f64;
    for flat in 0..tg.len() {
        tg.node(flat, &mut u);
        m.eval_into(&u, &mut x);
        best = best.max(dot(&x, a).abs());
    }
    Ok(best)
}

/// Degeneracy guard: errors when `M` lies in `{phi_a = 0}` numerically.
pub fn check_nondegenerate(m: &ChartedImmersion, a: &[f64], grid: &GridSpec) -> Result<()> {
    check_direction(m, a)?;
    let top = max_abs_height(m, a, grid)?;
    if top <= DEGENERATE_HEIGHT {
        return Err(Error::Degenerate {
            location: a.to_vec(),
            reason: format!(
                "{} lies in the hyperplane <x, a> = 0 (max |phi_a| = {top:e})",
                m.name()
            ),
        });
    }
    Ok(())
}

/// The level-set profile `F(r)` on `r_grid` with a check of its monotonicity
/// on both branches.
pub fn monotone_profile(m: &ChartedImmersion, a: &[f64], r_grid: &[f64], grid: &GridSpec) -> Result<HeightProfile> {
    check_nondegenerate(m, a, grid)?;
    if let Some(r) = r_grid.iter().find(|r| !(**r > -1.0 && **r < 1.0)) {
        return Err(Error::domain(format!("profile levels must lie in (-1, 1), got {r}")));
    }
    let n = m.dim() as f64;
    let mass = quad::cumulative_profile(m, a, |s: &Sample| s.height(a), r_grid, grid)?;
    let caps = quad::cumulative_profile(m, a, |_: &Sample| 1.0, r_grid, grid)?;
    let scale: Vec<f64> = r_grid.iter().map(|r| (1.0 - r * r).powf(n / 2.0)).collect();
    let f_values: Vec<f64> = mass.iter().zip(&scale).map(|(p, s)| p.value / s).collect();
    let f_err: Vec<f64> = mass.iter().zip(&scale).map(|(p, s)| p.err_est / s).collect();

    let mut violations = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for j in 0..r_grid.len().saturating_sub(1) {
        let (r0, r1) = (r_grid[j], r_grid[j + 1]);
        let allowance = f_err[j] + f_err[j + 1];
        let (branch, wrong_way) = if r1 <= 0.0 {
            (Branch::Lower, f_values[j] - f_values[j + 1])
        } else if r0 > 0.0 {
            (Branch::Upper, f_values[j + 1] - f_values[j])
        } else {
            continue;
        };
        let excess = wrong_way - allowance;
        worst = worst.max(excess);
        if excess > 0.0 {
            violations.push(Violation {
                branch,
                r_from: r0,
                r_to: r1,
                excess,
            });
        }
    }
    Ok(HeightProfile {
        a: a.to_vec(),
        r_values: r_grid.to_vec(),
        f_values,
        f_err,
        cap_volumes: caps.iter().map(|p| p.value).collect(),
        cap_err: caps.iter().map(|p| p.err_est).collect(),
        violations,
        worst_margin: if worst.is_finite() { worst } else { 0.0 },
        xi: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct XiTerm {
    pub t: f64,
    pub cap_volume: f64,
    pub ratio: f64,
    pub err_est: f64,
    /// Quadrature nodes of the local grids that fall inside the cap.
    pub nodes_in_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiEstimate {
    pub estimate: f64,
    pub err_est: f64,
    pub multiplicity: usize,
    pub sequence: Vec<XiTerm>,
    pub extrapolated: Vec<f64>,
}

/// `t_j = 1 - 4^{-j}`, `j = 1..count`.
pub fn default_t_sequence(count: usize) -> Vec<f64> {
    (1..=count).map(|j| 1.0 - 0.25f64.powi(j as i32)).collect()
}

const MIN_CAP_NODES: usize = 1000;

/// Parameter box around a preimage that contains its whole cap `{phi >= t}`.
fn cap_box(m: &ChartedImmersion, a: &[f64], centre: &[f64], t: f64) -> Result<Vec<Interval>> {
    let (g, _) = match m.metric_and_area(centre) {
        Ok(v) => v,
        // At a coordinate pole the metric degenerates; start from a guess.
        Err(_) => (vec![1.0; m.dim() * m.dim()], 0.0),
    };
    let n = m.dim();
    let rho = t.clamp(-1.0, 1.0).acos();
    let mut half: Vec<f64> = (0..n)
        .map(|d| {
            let gdd = g[d * n + d];
            if gdd > 1e-12 {
                1.5 * rho / gdd.sqrt()
            } else {
                f64::INFINITY
            }
        })
        .collect();
    for _ in 0..30 {
        let ivs: Vec<Interval> = m
            .domain()
            .iter()
            .enumerate()
            .map(|(d, iv)| {
                if iv.periodic {
                    if 2.0 * half[d] >= iv.len() {
                        *iv
                    } else {
                        Interval {
                            lo: centre[d] - half[d],
                            hi: centre[d] + half[d],
                            periodic: false,
                        }
                    }
                } else {
                    Interval {
                        lo: (centre[d] - half[d]).max(iv.lo),
                        hi: (centre[d] + half[d]).min(iv.hi),
                        periodic: false,
                    }
                }
            })
            .collect();
        if boundary_below(m, a, &ivs, t) {
            return Ok(ivs);
        }
        half.iter_mut().for_each(|h| *h *= 1.5);
    }
    Err(Error::Resolution(format!("cannot isolate the cap phi >= {t} around {centre:?}")))
}

/// True when `phi < t` on every face of the box that is not a domain edge.
fn boundary_below(m: &ChartedImmersion, a: &[f64], ivs: &[Interval], t: f64) -> bool {
    let n = m.dim();
    let per_face = if n == 1 { 1 } else { (4096f64.powf(1.0 / (n - 1) as f64)) as usize };
    let mut x = vec![0.0; m.coord_len()];
    let mut u = vec![0.0; n];
    for d in 0..n {
        let dom = m.domain()[d];
        if ivs[d].periodic {
            continue;
        }
        for (value, at_edge) in [(ivs[d].lo, !dom.periodic && ivs[d].lo <= dom.lo), (ivs[d].hi, !dom.periodic && ivs[d].hi >= dom.hi)] {
            if at_edge {
                continue;
            }
            let others = n - 1;
            let total = per_face.pow(others as u32);
            for flat in 0..total {
                let mut rem = flat;
                for c in 0..n {
                    if c == d {
                        u[c] = value;
                        continue;
                    }
                    let i = rem % per_face;
                    rem /= per_face;
                    let iv = ivs[c];
                    u[c] = iv.lo + (i as f64 + 0.5) / per_face as f64 * (iv.hi - iv.lo);
                }
                m.eval_into(&u, &mut x);
                if dot(&x, a) >= t {
                    return false;
                }
            }
        }
    }
    true
}

fn boxes_overlap(m: &ChartedImmersion, a: &[Interval], b: &[Interval]) -> bool {
    a.iter().zip(b).zip(m.domain()).all(|((x, y), dom)| {
        if x.periodic || y.periodic {
            return true;
        }
        if dom.periodic {
            let p = dom.len();
            // compare modulo the period
            let shift = ((y.lo - x.lo) / p).round() * p;
            let (ylo, yhi) = (y.lo - shift, y.hi - shift);
            [-p, 0.0, p].iter().any(|s| x.lo < yhi + s && ylo + s < x.hi)
        } else {
            x.lo < y.hi && y.lo < x.hi
        }
    })
}

/// `Vol{phi >= t}` from local grids around the preimages `centres`.
fn cap_volume(m: &ChartedImmersion, a: &[f64], centres: &[Vec<f64>], t: f64, depth: usize) -> Result<(Estimate, usize)> {
    let boxes: Vec<Vec<Interval>> = centres.iter().map(|c| cap_box(m, a, c, t)).collect::<Result<_>>()?;
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            if boxes_overlap(m, &boxes[i], &boxes[j]) {
                return Err(Error::Resolution(format!(
                    "caps phi >= {t} around distinct preimages overlap; use levels closer to 1"
                )));
            }
        }
    }
    // No part of the superlevel set may lie outside the boxes.
    let axes = m.scan_axes(1 << 16);
    let total: usize = axes.iter().map(|ax| ax.0.len()).product();
    let mut u = vec![0.0; m.dim()];
    let mut x = vec![0.0; m.coord_len()];
    for flat in 0..total {
        let mut rem = flat;
        for (c, ax) in axes.iter().enumerate() {
            u[c] = ax.0[rem % ax.0.len()];
            rem /= ax.0.len();
        }
        m.eval_into(&u, &mut x);
        if dot(&x, a) >= t && !boxes.iter().any(|b| inside_box(m, b, &u)) {
            return Err(Error::Resolution(format!(
                "superlevel set phi >= {t} reaches {u:?}, away from every preimage"
            )));
        }
    }

    let n = m.dim();
    let mut value = 0.0;
    let mut err = 0.0;
    let mut count = 0;
    for b in &boxes {
        let mut k = (2.0 * (MIN_CAP_NODES as f64).powf(1.0 / n as f64)).ceil() as usize;
        loop {
            let nodes = vec![k; n];
            let tg = TensorGrid::from_intervals(b, &nodes);
            let inside = count_above(m, a, &tg, t);
            if inside >= MIN_CAP_NODES / boxes.len().max(1) || k > 1 << 14 {
                let (est, _) = quad::where_on_grid(m, &tg, &|_: &Sample, out: &mut [f64]| out[0] = 1.0, 1, a, t, 1.0, depth);
                value += est[0].value;
                err += est[0].err_est;
                count += inside;
                break;
            }
            k *= 2;
        }
    }
    if count < MIN_CAP_NODES {
        return Err(Error::Resolution(format!("cap phi >= {t} holds only {count} nodes")));
    }
    Ok((Estimate { value, err_est: err }, count))
}

fn inside_box(m: &ChartedImmersion, b: &[Interval], u: &[f64]) -> bool {
    b.iter().zip(u).zip(m.domain()).all(|((iv, &x), dom)| {
        if iv.periodic {
            return true;
        }
        if dom.periodic {
            let p = dom.len();
            [-p, 0.0, p].iter().any(|s| x + s >= iv.lo && x + s <= iv.hi)
        } else {
            x >= iv.lo && x <= iv.hi
        }
    })
}

fn count_above(m: &ChartedImmersion, a: &[f64], tg: &TensorGrid, t: f64) -> usize {
    let mut u = vec![0.0; m.dim()];
    let mut x = vec![0.0; m.coord_len()];
    (0..tg.len())
        .filter(|&flat| {
            tg.node(flat, &mut u);
            m.eval_into(&u, &mut x);
            dot(&x, a) >= t
        })
        .count()
}

/// Estimates `xi(a) = liminf_{t -> 1} Vol{phi_a >= t} / ((1 - t^2)^{n/2} Vol(B^n))`.
///
/// Caps are integrated on local grids around each preimage of `a`. The ratio
/// sequence is Richardson-extrapolated in `1 - t` and the minimum over the
/// last three extrapolants stands in for the liminf; their spread enters the
/// error estimate. Directions off the image give zero.
pub fn xi_estimate(m: &ChartedImmersion, a: &[f64], t_sequence: Option<&[f64]>, grid: &GridSpec) -> Result<XiEstimate> {
    check_direction(m, a)?;
    let ts: Vec<f64> = match t_sequence {
        Some(t) => t.to_vec(),
        None => default_t_sequence(6),
    };
    if ts.len() < 3 {
        return Err(Error::Resolution("xi needs at least three levels".into()));
    }
    if ts.windows(2).any(|w| !(w[0] < w[1])) || ts.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::domain("levels must increase strictly inside (0, 1)"));
    }
    let centres = m.preimages(a, PREIMAGE_TOL)?;
    if centres.is_empty() {
        return Ok(XiEstimate {
            estimate: 0.0,
            err_est: 0.0,
            multiplicity: 0,
            sequence: Vec::new(),
            extrapolated: Vec::new(),
        });
    }
    let n = m.dim() as i64;
    let ball = specfn::ball_volume(n)?;
    let depth = grid.boundary_refine_depth.min(4);
    let mut sequence = Vec::new();
    for &t in &ts {
        let norm = (1.0 - t * t).powf(n as f64 / 2.0) * ball;
        match cap_volume(m, a, &centres, t, depth) {
            Ok((est, count)) => sequence.push(XiTerm {
                t,
                cap_volume: est.value,
                ratio: est.value / norm,
                err_est: est.err_est / norm,
                nodes_in_cap: count,
            }),
            Err(Error::Resolution(_)) if !sequence.is_empty() => break,
            Err(Error::Resolution(msg)) => {
                // Large caps may merge across preimages; start closer to 1.
                if t == *ts.last().unwrap() {
                    return Err(Error::Resolution(msg));
                }
                continue;
            }
            Err(e) => return Err(e),
        }
    }
    if sequence.len() < 3 {
        return Err(Error::Resolution(format!(
            "only {} cap levels resolved; need three to extrapolate",
            sequence.len()
        )));
    }
    let extrapolated: Vec<f64> = sequence
        .windows(2)
        .map(|w| {
            let q = (1.0 - w[0].t) / (1.0 - w[1].t);
            (q * w[1].ratio - w[0].ratio) / (q - 1.0)
        })
        .collect();
    let tail = &extrapolated[extrapolated.len().saturating_sub(3)..];
    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let quad_err = sequence[sequence.len() - 3..].iter().map(|s| s.err_est).fold(0.0, f64::max);
    Ok(XiEstimate {
        estimate: lo,
        err_est: (hi - lo) + 2.0 * quad_err,
        multiplicity: centres.len(),
        sequence,
        extrapolated,
    })
}

/// `n Vol(B^n) int_s^r (1 - t^2)^{(n-2)/2} dt`, via `t = sin(theta)` so that
/// the integrand `cos^{n-1}` stays bounded for `n = 1`. Returns value and the
/// difference between 32- and 64-point Gauss–Legendre.
pub fn slab_profile_integral(n: i64, s: f64, r: f64) -> Result<Estimate> {
    let ball = specfn::ball_volume(n)?;
    let (lo, hi) = (s.clamp(-1.0, 1.0).asin(), r.clamp(-1.0, 1.0).asin());
    let rule = |k: usize| -> f64 {
        let (x, w) = quad::gauss_legendre(k);
        let half = 0.5 * (hi - lo);
        x.iter()
            .zip(&w)
            .map(|(x, w)| w * half * (lo + half * (1.0 + x)).cos().powi(n as i32 - 1))
            .sum()
    };
    let (coarse, fine) = (rule(32), rule(64));
    let scale = n as f64 * ball;
    Ok(Estimate {
        value: scale * fine,
        err_est: scale * (fine - coarse).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlabCheck {
    pub s: f64,
    pub r: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub tol: f64,
    pub pass: bool,
}

/// `Vol{s <= phi_a <= r} >= n xi Vol(B^n) int_s^r (1 - t^2)^{(n-2)/2} dt`.
///
/// `xi` carries its own uncertainty (zero for a known multiplicity).
pub fn slab_check(m: &ChartedImmersion, a: &[f64], s: f64, r: f64, xi: Estimate, grid: &GridSpec) -> Result<SlabCheck> {
    check_direction(m, a)?;
    if !(0.0 <= s && s <= r && r <= 1.0) {
        return Err(Error::domain(format!("need 0 <= s <= r <= 1, got s = {s}, r = {r}")));
    }
    let lhs = quad::integrate_where(m, |_: &Sample| 1.0, a, s, r, grid)?;
    let profile = slab_profile_integral(m.dim() as i64, s, r)?;
    let rhs = xi.value * profile.value;
    let tol = lhs.err_est + xi.value * profile.err_est + xi.err_est * profile.value + 1e-10 * lhs.value.abs().max(1.0);
    let margin = lhs.value - rhs;
    Ok(SlabCheck {
        s,
        r,
        lhs: lhs.value,
        rhs,
        margin,
        tol,
        pass: margin >= -tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalfspaceAudit {
    pub p: Vec<f64>,
    pub multiplicity: usize,
    pub volume: f64,
    pub vol_upper: f64,
    pub vol_lower: f64,
    pub int_phi_upper: f64,
    pub int_phi_lower: f64,
    pub int_phi_sq_lower: f64,
    /// Each inequality of the chain with both sides: upper half-volume,
    /// upper first moment, lower second moment, Cauchy–Schwarz, balance,
    /// lower half-volume, and the final volume bound.
    pub steps: Vec<Comparison>,
}

impl HalfspaceAudit {
    pub fn pass(&self) -> bool {
        self.steps.iter().all(|s| s.pass)
    }

    pub fn step(&self, name: &str) -> Option<&Comparison> {
        self.steps.iter().find(|s| s.name == name)
    }
}

/// Recomputes every quantity in the half-space argument at the image point
/// `p`, which lower-bounds `Vol(M)` by `main_bound(n, m(p))`.
pub fn halfspace_audit(m: &ChartedImmersion, p: &[f64], grid: &GridSpec) -> Result<HalfspaceAudit> {
    check_direction(m, p)?;
    let mult = m.preimage_count(p, PREIMAGE_TOL)?;
    if mult == 0 {
        return Err(Error::domain(format!("point {p:?} is not on the image of {}", m.name())));
    }
    let fields = |s: &Sample, out: &mut [f64]| {
        let phi = s.height(p);
        out[0] = 1.0;
        out[1] = phi;
        out[2] = phi * phi;
    };
    let upper = quad::integrate_where_many(m, fields, 3, p, 0.0, 1.0, grid)?;
    let lower = quad::integrate_where_many(m, fields, 3, p, -1.0, 0.0, grid)?;
    let total = quad::integrate(m, |_: &Sample| 1.0, grid)?;

    let n = m.dim() as i64;
    let nf = n as f64;
    let mf = mult as f64;
    let sphere = specfn::sphere_volume(n)?;
    let ball = specfn::ball_volume(n)?;
    let floor = 1e-9;

    let (vu, vl) = (upper[0], lower[0]);
    let (iu, il) = (upper[1], lower[1]);
    let ql = lower[2];
    let mut steps = vec![
        Comparison::new("upper-half-volume", vu.value, Relation::Ge, 0.5 * mf * sphere, vu.err_est + floor),
        Comparison::new("upper-first-moment", iu.value, Relation::Ge, mf * ball, iu.err_est + floor),
        Comparison::new(
            "lower-second-moment",
            (nf + 1.0) * ql.value,
            Relation::Le,
            vl.value,
            (nf + 1.0) * ql.err_est + vl.err_est + floor,
        ),
    ];
    let cs_tol = vl.value * ql.err_est + ql.value * vl.err_est + 2.0 * il.value.abs() * il.err_est + floor;
    steps.push(Comparison::new(
        "cauchy-schwarz",
        vl.value * ql.value,
        Relation::Ge,
        il.value * il.value,
        cs_tol,
    ));
    steps.push(Comparison::new("balance", iu.value, Relation::Eq, -il.value, iu.err_est + il.err_est + floor));
    steps.push(Comparison::new(
        "lower-half-volume",
        vl.value,
        Relation::Ge,
        (nf + 1.0).sqrt() * mf * ball,
        vl.err_est + floor,
    ));
    let bound = specfn::main_bound(n, mult as i64)?;
    steps.push(Comparison::new("volume-bound", total.value, Relation::Ge, bound, total.err_est + floor));

    Ok(HalfspaceAudit {
        p: p.to_vec(),
        multiplicity: mult,
        volume: total.value,
        vol_upper: vu.value,
        vol_lower: vl.value,
        int_phi_upper: iu.value,
        int_phi_lower: il.value,
        int_phi_sq_lower: ql.value,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanSquareHeight {
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
    /// `Vol(S^n) / (n + 1)`.
    pub bound: f64,
    /// Present when the member is antipodally invariant, so the bound
    /// applies to every direction.
    pub bound_check: Option<Comparison>,
}

/// `int phi_a^2` for each sampled direction, compared with `Vol(S^n)/(n+1)`
/// for antipodally invariant hypersurfaces.
pub fn mean_square_height(m: &ChartedImmersion, a_samples: &[Vec<f64>], grid: &GridSpec) -> Result<MeanSquareHeight> {
    if !m.is_hypersurface() {
        return Err(Error::domain(format!("{} is not a hypersurface", m.name())));
    }
    if a_samples.is_empty() {
        return Err(Error::domain("no directions supplied"));
    }
    let mut values = Vec::with_capacity(a_samples.len());
    let mut worst_err: f64 = 0.0;
    for a in a_samples {
        check_direction(m, a)?;
        let est = quad::integrate(m, |s: &Sample| s.height(a).powi(2), grid)?;
        worst_err = worst_err.max(est.err_est);
        values.push(est.value);
    }
    let n = m.dim() as i64;
    let bound = specfn::sphere_volume(n)? / (n as f64 + 1.0);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bound_check = m
        .antipodal_invariant()
        .then(|| Comparison::new("mean-square-height", min, Relation::Ge, bound, worst_err + 1e-9));
    Ok(MeanSquareHeight {
        values,
        min,
        max,
        bound,
        bound_check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{make_clifford, make_covered_circle, make_equator};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn pointwise_heights() {
        let m = make_clifford(1, 2).unwrap();
        let u = [0.4, 2.2];
        let a = m.eval(&u).unwrap();
        assert_relative_eq!(height(&m, &a, &u).unwrap(), 1.0, max_relative = 1e-15);
        assert!(tangent_sq(&m, &a, &u).unwrap().abs() < 1e-15);
        let b = [0.5, -0.5, 0.5, 0.5];
        let sum = tangent_sq(&m, &b, &u).unwrap() + height(&m, &b, &u).unwrap().powi(2) + normal_height(&m, &b, &u).unwrap().powi(2);
        assert!((sum - 1.0).abs() < 1e-12);
        let eq = make_equator(2, 4).unwrap();
        assert!(normal_height(&eq, &[1.0, 0.0, 0.0, 0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(height(&m, &[1.0, 1.0, 0.0, 0.0], &u).is_err());
    }

    #[test]
    fn height_laplacian_residual() {
        let m = make_equator(2, 3).unwrap();
        let off = [0.0, 0.0, 0.0, 1.0];
        assert_eq!(laplace_height_residual(&m, &off, &[1.0, 1.0], 1e-3).unwrap(), 0.0);
        let a = [0.6, 0.0, 0.8, 0.0];
        assert!(laplace_height_residual(&m, &a, &[1.0, 1.0], 1e-3).unwrap() < 1e-5);
    }

    #[test]
    fn equator_profile_is_flat() {
        let m = make_equator(2, 3).unwrap();
        let a = [1.0, 0.0, 0.0, 0.0];
        let p = monotone_profile(&m, &a, &default_r_grid(64), &GridSpec::default_for(&m)).unwrap();
        assert!(p.violations.is_empty());
        for (f, e) in p.f_values.iter().zip(&p.f_err) {
            assert!((f - PI).abs() <= e + 1e-9, "{f} vs pi (err {e})");
        }
    }

    #[test]
    fn degenerate_direction_is_rejected() {
        let m = make_equator(2, 3).unwrap();
        let a = [0.0, 0.0, 0.0, 1.0];
        let err = monotone_profile(&m, &a, &[0.0], &GridSpec::default_for(&m)).unwrap_err();
        assert!(matches!(err, Error::Degenerate { .. }));
    }

    #[test]
    fn xi_on_equator_and_covered_circle() {
        let eq = make_equator(2, 3).unwrap();
        let g = GridSpec::default_for(&eq);
        let x = xi_estimate(&eq, &[0.0, 0.6, 0.8, 0.0], None, &g).unwrap();
        assert!((x.estimate - 1.0).abs() < 0.05, "{x:?}");
        assert_eq!(x.multiplicity, 1);
        // centre at the coordinate pole
        let x = xi_estimate(&eq, &[1.0, 0.0, 0.0, 0.0], None, &g).unwrap();
        assert!((x.estimate - 1.0).abs() < 0.05, "{x:?}");
        let c = make_covered_circle(3, 2).unwrap();
        let x = xi_estimate(&c, &[1.0, 0.0, 0.0], None, &GridSpec::default_for(&c)).unwrap();
        assert!((x.estimate - 3.0).abs() < 0.05, "{x:?}");
        let off = xi_estimate(&eq, &[0.0, 0.0, 0.0, 1.0], None, &g).unwrap();
        assert_eq!(off.estimate, 0.0);
    }

    #[test]
    fn slab_integral_closed_forms() {
        // n = 2: 2 pi (r - s)
        let e = slab_profile_integral(2, 0.1, 0.7).unwrap();
        assert_relative_eq!(e.value, 2.0 * PI * 0.6, max_relative = 1e-13);
        // n = 1: 2 (asin r - asin s)
        let e = slab_profile_integral(1, 0.0, 1.0).unwrap();
        assert_relative_eq!(e.value, PI, max_relative = 1e-13);
    }

    #[test]
    fn slab_examples() {
        let eq = make_equator(2, 3).unwrap();
        let g = GridSpec::default_for(&eq);
        let one = Estimate { value: 1.0, err_est: 0.0 };
        let c = slab_check(&eq, &[1.0, 0.0, 0.0, 0.0], 0.0, 1.0, one, &g).unwrap();
        assert!(c.pass && (c.lhs - 2.0 * PI).abs() < 1e-6 && (c.rhs - 2.0 * PI).abs() < 1e-12);
        let z = slab_check(&eq, &[1.0, 0.0, 0.0, 0.0], 0.5, 0.5, one, &g).unwrap();
        assert!(z.pass && z.lhs.abs() < 1e-12 && z.rhs == 0.0);
        let cc = make_covered_circle(2, 2).unwrap();
        let two = Estimate { value: 2.0, err_est: 0.0 };
        let c = slab_check(&cc, &[1.0, 0.0, 0.0], 0.0, 1.0, two, &GridSpec::default_for(&cc)).unwrap();
        assert!(c.pass && (c.lhs - 2.0 * PI).abs() < 1e-6 && (c.rhs - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn covered_circle_audit() {
        let m = make_covered_circle(2, 2).unwrap();
        let audit = halfspace_audit(&m, &[1.0, 0.0, 0.0], &GridSpec::default_for(&m)).unwrap();
        assert!(audit.pass(), "{:#?}", audit.steps);
        let v = audit.step("volume-bound").unwrap();
        assert!((v.lhs - 4.0 * PI).abs() < 1e-10);
        assert!((v.rhs - 2.0 * (PI + 2.0 * 2f64.sqrt())).abs() < 1e-12);
        assert!((v.margin - 0.626).abs() < 0.01);
    }

    #[test]
    fn clifford_audit_and_mean_square() {
        let m = make_clifford(1, 2).unwrap();
        let g = GridSpec::default_for(&m);
        let p = m.eval(&[0.0, 0.0]).unwrap();
        let audit = halfspace_audit(&m, &p, &g).unwrap();
        assert!(audit.pass(), "{:#?}", audit.steps);
        assert!(audit.step("balance").unwrap().margin.abs() < 1e-8);
        let ms = mean_square_height(&m, &[p.clone()], &g).unwrap();
        assert!((ms.values[0] - PI * PI / 2.0).abs() < 1e-8);
        assert!(ms.bound_check.unwrap().pass);
    }
}
