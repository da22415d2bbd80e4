//! Explicit minimal immersions into unit spheres.
//!
//! Every member is a product of round-sphere factors written in
//! hyperspherical angles `(a_1, ..., a_k)`:
//!
//! ```text
//! x_0 = cos a_1
//! x_1 = sin a_1 cos a_2
//! ...
//! x_k = sin a_1 ... sin a_{k-1} sin a_k
//! ```
//!
//! with `a_1..a_{k-1}` in `[0, pi]` and `a_k` periodic. Equators use one
//! factor of radius one, Clifford tori two factors of radii `sqrt(k/n)` and
//! `sqrt((n-k)/n)`, and the covered circle runs the one-dimensional factor
//! over `[0, 2 pi m)`.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use serde::Serialize;

use crate::linalg::{det_in_place, dot, inverse, norm, solve_in_place};
use crate::specfn;
use crate::{Error, Result};

/// Width of the band next to coordinate poles that random sampling avoids.
pub const POLE_BAND: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub periodic: bool,
}

impl Interval {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    fn wrap(&self, t: f64) -> f64 {
        if !self.periodic {
            return t;
        }
        let p = self.len();
        let w = (t - self.lo).rem_euclid(p) + self.lo;
        if w >= self.hi {
            self.lo
        } else {
            w
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum JacobianMode {
    Analytic,
    CentralDifference { step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    Equator { n: usize, ambient: usize },
    Clifford { k: usize, n: usize },
    CoveredCircle { m: usize, ambient: usize },
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Equator { n, ambient } => write!(f, "equator:{n},{ambient}"),
            Family::Clifford { k, n } => write!(f, "clifford:{k},{n}"),
            Family::CoveredCircle { m, ambient } => write!(f, "covered-circle:{m},{ambient}"),
        }
    }
}

/// One round-sphere factor `S^k(radius)` of a product chart.
#[derive(Debug, Clone, Copy)]
struct Factor {
    k: usize,
    radius: f64,
    param_off: usize,
    coord_off: usize,
}

impl Factor {
    /// Writes `radius * x(a)` into `x` and, if given, the `k` Jacobian columns
    /// into `jac` (column `d` of the full chart lives at `jac[d * stride..]`).
    fn eval(&self, u: &[f64], x: &mut [f64], jac: Option<(&mut [f64], usize)>) {
        let k = self.k;
        let a = &u[self.param_off..self.param_off + k];
        let mut s = [0.0; 8];
        let mut c = [0.0; 8];
        for j in 0..k {
            let (sj, cj) = a[j].sin_cos();
            s[j] = sj;
            c[j] = cj;
        }
        let mut prefix = 1.0;
        for i in 0..=k {
            let xi = if i < k { prefix * c[i] } else { prefix };
            x[self.coord_off + i] = self.radius * xi;
            if i < k {
                prefix *= s[i];
            }
        }
        if let Some((jac, stride)) = jac {
            for l in 0..k {
                let col = &mut jac[(self.param_off + l) * stride..(self.param_off + l + 1) * stride];
                for i in 0..=k {
                    let v = if l > i {
                        0.0
                    } else if l == i {
                        // i < k here because l < k.
                        let mut p = 1.0;
                        for sj in &s[..i] {
                            p *= sj;
                        }
                        -p * s[i]
                    } else {
                        let mut p = c[l];
                        for (j, sj) in s[..i].iter().enumerate() {
                            if j != l {
                                p *= sj;
                            }
                        }
                        if i < k {
                            p * c[i]
                        } else {
                            p
                        }
                    };
                    col[self.coord_off + i] = self.radius * v;
                }
            }
        }
    }
}

/// A parametrised closed minimal submanifold of `S^N`.
#[derive(Debug, Clone)]
pub struct ChartedImmersion {
    family: Family,
    n: usize,
    ambient: usize,
    domain: Vec<Interval>,
    factors: Vec<Factor>,
    jacobian_mode: JacobianMode,
    antipodal_invariant: bool,
    known_multiplicity: Option<usize>,
    name: String,
    /// Row-major `(N+1) x (N+1)` orthogonal matrix applied after the chart.
    rotation: Option<Vec<f64>>,
}

/// Catalog metadata, as listed by the command line tool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogEntry {
    pub name: String,
    pub n: usize,
    pub ambient: usize,
    pub hypersurface: bool,
    pub antipodal_invariant: bool,
    pub known_multiplicity: Option<usize>,
    pub volume: f64,
}

fn sphere_domain(k: usize) -> Vec<Interval> {
    let mut d = vec![
        Interval {
            lo: 0.0,
            hi: PI,
            periodic: false
        };
        k.saturating_sub(1)
    ];
    d.push(Interval {
        lo: 0.0,
        hi: 2.0 * PI,
        periodic: true,
    });
    d
}

/// Totally geodesic `S^n` in the first `n+1` coordinates of `S^N`.
pub fn make_equator(n: usize, ambient: usize) -> Result<ChartedImmersion> {
    if n < 1 || n >= ambient {
        return Err(Error::domain(format!(
            "equator needs 1 <= n < N, got n = {n}, N = {ambient}"
        )));
    }
    if n > 7 {
        return Err(Error::domain(format!("charts support n <= 7, got {n}")));
    }
    Ok(ChartedImmersion {
        family: Family::Equator { n, ambient },
        n,
        ambient,
        domain: sphere_domain(n),
        factors: vec![Factor {
            k: n,
            radius: 1.0,
            param_off: 0,
            coord_off: 0,
        }],
        jacobian_mode: JacobianMode::Analytic,
        antipodal_invariant: true,
        known_multiplicity: Some(1),
        name: format!("equator:{n},{ambient}"),
        rotation: None,
    })
}

/// Minimal Clifford torus `S^k(sqrt(k/n)) x S^{n-k}(sqrt((n-k)/n))` in `S^{n+1}`.
pub fn make_clifford(k: usize, n: usize) -> Result<ChartedImmersion> {
    if n < 2 || k < 1 || k + 1 > n {
        return Err(Error::domain(format!(
            "Clifford torus needs 1 <= k <= n-1, got k = {k}, n = {n}"
        )));
    }
    if n > 7 {
        return Err(Error::domain(format!("charts support n <= 7, got {n}")));
    }
    let (kf, nf) = (k as f64, n as f64);
    let mut domain = sphere_domain(k);
    domain.extend(sphere_domain(n - k));
    Ok(ChartedImmersion {
        family: Family::Clifford { k, n },
        n,
        ambient: n + 1,
        domain,
        factors: vec![
            Factor {
                k,
                radius: (kf / nf).sqrt(),
                param_off: 0,
                coord_off: 0,
            },
            Factor {
                k: n - k,
                radius: ((nf - kf) / nf).sqrt(),
                param_off: k,
                coord_off: k + 1,
            },
        ],
        jacobian_mode: JacobianMode::Analytic,
        antipodal_invariant: true,
        known_multiplicity: Some(1),
        name: format!("clifford:{k},{n}"),
        rotation: None,
    })
}

/// Great circle traversed `m` times: a non-embedded closed geodesic.
pub fn make_covered_circle(m: usize, ambient: usize) -> Result<ChartedImmersion> {
    if m < 2 || ambient < 2 {
        return Err(Error::domain(format!(
            "covered circle needs m >= 2 and N >= 2, got m = {m}, N = {ambient}"
        )));
    }
    Ok(ChartedImmersion {
        family: Family::CoveredCircle { m, ambient },
        n: 1,
        ambient,
        domain: vec![Interval {
            lo: 0.0,
            hi: 2.0 * PI * m as f64,
            periodic: true,
        }],
        factors: vec![Factor {
            k: 1,
            radius: 1.0,
            param_off: 0,
            coord_off: 0,
        }],
        jacobian_mode: JacobianMode::Analytic,
        antipodal_invariant: true,
        known_multiplicity: Some(m),
        name: format!("covered-circle:{m},{ambient}"),
        rotation: None,
    })
}

/// Parses `equator:n,N`, `clifford:k,n` or `covered-circle:m,N`.
pub fn from_name(name: &str) -> Result<ChartedImmersion> {
    let (kind, args) = name
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("manifold name `{name}` lacks `:`; {}", NAME_HELP)))?;
    let nums: Vec<usize> = args
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad integers in manifold name `{name}`; {}", NAME_HELP)))?;
    if nums.len() != 2 {
        return Err(Error::Config(format!(
            "manifold name `{name}` needs two integers; {}",
            NAME_HELP
        )));
    }
    match kind.trim() {
        "equator" => make_equator(nums[0], nums[1]),
        "clifford" => make_clifford(nums[0], nums[1]),
        "covered-circle" => make_covered_circle(nums[0], nums[1]),
        other => Err(Error::Config(format!(
            "unknown manifold family `{other}`; {}",
            NAME_HELP
        ))),
    }
}

const NAME_HELP: &str = "expected one of equator:n,N | clifford:k,n | covered-circle:m,N";

impl ChartedImmersion {
    /// Intrinsic dimension `n`.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Ambient sphere dimension `N`.
    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    /// Length of image vectors, `N + 1`.
    pub fn coord_len(&self) -> usize {
        self.ambient + 1
    }

    pub fn domain(&self) -> &[Interval] {
        &self.domain
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn antipodal_invariant(&self) -> bool {
        self.antipodal_invariant
    }

    pub fn known_multiplicity(&self) -> Option<usize> {
        self.known_multiplicity
    }

    pub fn jacobian_mode(&self) -> JacobianMode {
        self.jacobian_mode
    }

    pub fn is_hypersurface(&self) -> bool {
        self.ambient == self.n + 1
    }

    /// Closed-form volume of the member.
    pub fn exact_volume(&self) -> f64 {
        match self.family {
            Family::Equator { n, .. } => specfn::sphere_volume(n as i64).unwrap_or(f64::NAN),
            Family::Clifford { k, n } => specfn::clifford_volume(k as i64, n as i64).unwrap_or(f64::NAN),
            Family::CoveredCircle { m, .. } => 2.0 * PI * m as f64,
        }
    }

    pub fn entry(&self) -> CatalogEntry {
        CatalogEntry {
            name: self.name.clone(),
            n: self.n,
            ambient: self.ambient,
            hypersurface: self.is_hypersurface(),
            antipodal_invariant: self.antipodal_invariant,
            known_multiplicity: self.known_multiplicity,
            volume: self.exact_volume(),
        }
    }

    pub fn with_jacobian_mode(mut self, mode: JacobianMode) -> Self {
        self.jacobian_mode = mode;
        self
    }

    /// Composes the chart with an orthogonal map of `R^{N+1}` (row-major).
    pub fn with_rotation(mut self, q: &[f64]) -> Result<Self> {
        let d = self.coord_len();
        if q.len() != d * d {
            return Err(Error::domain(format!(
                "rotation must be {d}x{d}, got {} entries",
                q.len()
            )));
        }
        for i in 0..d {
            for j in 0..d {
                let qq: f64 = (0..d).map(|r| q[r * d + i] * q[r * d + j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (qq - want).abs() > 1e-10 {
                    return Err(Error::domain("rotation matrix is not orthogonal"));
                }
            }
        }
        let composed = match &self.rotation {
            None => q.to_vec(),
            Some(r) => {
                let mut out = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = (0..d).map(|l| q[i * d + l] * r[l * d + j]).sum();
                    }
                }
                out
            }
        };
        self.rotation = Some(composed);
        Ok(self)
    }

    fn rotate(&self, v: &mut [f64], scratch: &mut [f64]) {
        if let Some(q) = &self.rotation {
            let d = v.len();
            scratch[..d].copy_from_slice(v);
            for i in 0..d {
                v[i] = dot(&q[i * d..(i + 1) * d], &scratch[..d]);
            }
        }
    }

    /// Checks that `u` has the right length and lies in the non-periodic
    /// intervals; returns the wrapped parameter.
    pub fn normalize_param(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.n {
            return Err(Error::domain(format!(
                "parameter has {} coordinates, manifold has dimension {}",
                u.len(),
                self.n
            )));
        }
        let mut out = Vec::with_capacity(self.n);
        for (t, iv) in u.iter().zip(&self.domain) {
            if !t.is_finite() {
                return Err(Error::domain(format!("non-finite parameter {u:?}")));
            }
            if !iv.periodic && (*t < iv.lo || *t > iv.hi) {
                return Err(Error::domain(format!(
                    "parameter {t} outside [{}, {}] in {:?}",
                    iv.lo, iv.hi, u
                )));
            }
            out.push(iv.wrap(*t));
        }
        Ok(out)
    }

    /// `f(u)` without domain checks. `x` has length `N + 1`.
    pub(crate) fn eval_into(&self, u: &[f64], x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = 0.0);
        for fac in &self.factors {
            fac.eval(u, x, None);
        }
        if self.rotation.is_some() {
            let mut scratch = [0.0; 16];
            self.rotate(x, &mut scratch);
        }
    }

    /// `f(u)` and the analytic Jacobian (column-major, `n` columns of length
    /// `N + 1`) without domain checks.
    pub(crate) fn eval_jac_into(&self, u: &[f64], x: &mut [f64], jac: &mut [f64]) {
        let d = self.coord_len();
        x.iter_mut().for_each(|v| *v = 0.0);
        jac.iter_mut().for_each(|v| *v = 0.0);
        for fac in &self.factors {
            fac.eval(u, x, Some((jac, d)));
        }
        if self.rotation.is_some() {
            let mut scratch = [0.0; 16];
            self.rotate(x, &mut scratch);
            for c in 0..self.n {
                self.rotate(&mut jac[c * d..(c + 1) * d], &mut scratch);
            }
        }
    }

    /// Jacobian honouring [`JacobianMode`], without domain checks.
    pub(crate) fn jacobian_unchecked(&self, u: &[f64]) -> Vec<f64> {
        let d = self.coord_len();
        let mut x = vec![0.0; d];
        let mut jac = vec![0.0; d * self.n];
        match self.jacobian_mode {
            JacobianMode::Analytic => self.eval_jac_into(u, &mut x, &mut jac),
            JacobianMode::CentralDifference { step } => {
                self.fd_jacobian_into(u, step, &mut jac);
            }
        }
        jac
    }

    pub(crate) fn fd_jacobian_into(&self, u: &[f64], h: f64, jac: &mut [f64]) {
        let d = self.coord_len();
        let mut up = u.to_vec();
        let mut xp = vec![0.0; d];
        let mut xm = vec![0.0; d];
        for c in 0..self.n {
            up[c] = u[c] + h;
            self.eval_into(&up, &mut xp);
            up[c] = u[c] - h;
            self.eval_into(&up, &mut xm);
            up[c] = u[c];
            for i in 0..d {
                jac[c * d + i] = (xp[i] - xm[i]) / (2.0 * h);
            }
        }
    }

    /// `f(u)` as a point of `S^N`.
    pub fn eval(&self, u: &[f64]) -> Result<Vec<f64>> {
        let u = self.normalize_param(u)?;
        let mut x = vec![0.0; self.coord_len()];
        self.eval_into(&u, &mut x);
        Ok(x)
    }

    /// Jacobian columns `df/du_d`, column-major.
    pub fn jacobian(&self, u: &[f64]) -> Result<Vec<f64>> {
        let u = self.normalize_param(u)?;
        Ok(self.jacobian_unchecked(&u))
    }

    /// Induced metric `g = J^T J` (row-major) and area element `sqrt(det g)`.
    pub fn metric_and_area(&self, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        let u = self.normalize_param(u)?;
        let jac = self.jacobian_unchecked(&u);
        let g = gram(&jac, self.n, self.coord_len());
        let scale = (0..self.n).map(|i| g[i * self.n + i]).fold(0.0f64, f64::max);
        let det = det_in_place(&mut g.clone(), self.n);
        // Normalised determinant check, equivalent to the smallest singular
        // value of J / |J| exceeding 1e-8 up to dimension factors.
        if !(scale > 0.0) || det / scale.powi(self.n as i32) <= 1e-16 {
            return Err(Error::degenerate(&u, "Jacobian is rank deficient"));
        }
        Ok((g, det.sqrt()))
    }

    /// Area element without the degeneracy check; zero at coordinate poles.
    pub(crate) fn area_from_jac(&self, jac: &[f64]) -> f64 {
        let mut g = gram(jac, self.n, self.coord_len());
        det_in_place(&mut g, self.n).max(0.0).sqrt()
    }

    fn require_hypersurface(&self, what: &str) -> Result<()> {
        if !self.is_hypersurface() {
            return Err(Error::domain(format!(
                "{what} needs a hypersurface (N = n + 1); {} has n = {}, N = {}",
                self.name, self.n, self.ambient
            )));
        }
        Ok(())
    }

    /// Unit normal with `det[f, J_1, ..., J_n, nu] > 0`.
    pub fn unit_normal(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.require_hypersurface("unit_normal")?;
        let u = self.normalize_param(u)?;
        self.normal_unchecked(&u)
    }

    pub(crate) fn normal_unchecked(&self, u: &[f64]) -> Result<Vec<f64>> {
        let d = self.coord_len();
        let mut x = vec![0.0; d];
        let mut jac = vec![0.0; d * self.n];
        self.eval_jac_into(u, &mut x, &mut jac);
        normal_from_frame(&x, &jac, self.n).ok_or_else(|| Error::degenerate(u, "normal undefined (Jacobian rank deficient)"))
    }

    /// Parameter of the antipodal image `-f(u)` under the chart's symmetry.
    fn antipodal_guess(&self, u: &[f64]) -> Vec<f64> {
        let mut v = u.to_vec();
        for fac in &self.factors {
            for j in 0..fac.k {
                let idx = fac.param_off + j;
                if j + 1 < fac.k {
                    v[idx] = PI - u[idx];
                } else {
                    v[idx] = u[idx] + PI;
                }
            }
        }
        for (t, iv) in v.iter_mut().zip(&self.domain) {
            *t = iv.wrap(*t);
        }
        v
    }

    /// Finds `u'` with `f(u') = -f(u)`, starting from the chart's analytic
    /// antipodal shift and refining by least squares.
    pub fn antipodal_partner(&self, u: &[f64]) -> Result<Vec<f64>> {
        let u = self.normalize_param(u)?;
        let mut target = vec![0.0; self.coord_len()];
        self.eval_into(&u, &mut target);
        target.iter_mut().for_each(|t| *t = -*t);
        let (v, dist) = self.least_squares(&self.antipodal_guess(&u), &target);
        if dist > 1e-8 {
            return Err(Error::degenerate(&u, format!("no antipodal partner found (distance {dist:e})")));
        }
        Ok(v)
    }

    /// Levenberg–Marquardt on `|f(u) - p|^2`. Returns the final parameter and
    /// distance.
    fn least_squares(&self, start: &[f64], p: &[f64]) -> (Vec<f64>, f64) {
        let n = self.n;
        let d = self.coord_len();
        let mut u = start.to_vec();
        let mut x = vec![0.0; d];
        let mut jac = vec![0.0; d * n];
        self.eval_jac_into(&u, &mut x, &mut jac);
        let mut res: Vec<f64> = x.iter().zip(p).map(|(a, b)| a - b).collect();
        let mut dist = norm(&res);
        let mut mu = 1e-6;
        let mut trial = vec![0.0; n];
        let mut xt = vec![0.0; d];
        for _ in 0..200 {
            if dist < 1e-15 {
                break;
            }
            let mut a = gram(&jac, n, d);
            let mut b: Vec<f64> = (0..n).map(|c| -dot(&jac[c * d..(c + 1) * d], &res)).collect();
            for i in 0..n {
                a[i * n + i] += mu;
            }
            if !solve_in_place(&mut a, &mut b, n) {
                mu *= 10.0;
                continue;
            }
            for i in 0..n {
                let iv = self.domain[i];
                let t = u[i] + b[i];
                trial[i] = if iv.periodic { iv.wrap(t) } else { t.clamp(iv.lo, iv.hi) };
            }
            self.eval_into(&trial, &mut xt);
            let dt = xt.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dt < dist {
                let step = norm(&b);
                u.copy_from_slice(&trial);
                self.eval_jac_into(&u, &mut x, &mut jac);
                res = x.iter().zip(p).map(|(a, b)| a - b).collect();
                dist = dt;
                mu = (mu * 0.1).max(1e-15);
                if step < 1e-15 {
                    break;
                }
            } else {
                mu *= 10.0;
                if mu > 1e8 {
                    break;
                }
            }
        }
        (u, dist)
    }

    /// Canonical representative of a parameter for comparing preimages:
    /// periodic coordinates wrapped, angles beyond a coordinate pole zeroed.
    fn canonical(&self, u: &[f64], pole_tol: f64) -> Vec<f64> {
        let mut v: Vec<f64> = u.iter().zip(&self.domain).map(|(t, iv)| iv.wrap(*t)).collect();
        for fac in &self.factors {
            for j in 0..fac.k.saturating_sub(1) {
                if v[fac.param_off + j].sin().abs() < pole_tol {
                    for l in j + 1..fac.k {
                        v[fac.param_off + l] = 0.0;
                    }
                    break;
                }
            }
        }
        v
    }

    /// Parameter distance with periodic wrap-around.
    pub fn param_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.domain)
            .map(|((x, y), iv)| {
                let mut d = (x - y).abs();
                if iv.periodic {
                    d = d.rem_euclid(iv.len());
                    d = d.min(iv.len() - d);
                }
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Distinct preimages of `p`, one representative per cluster.
    ///
    /// A dense scan selects candidate nodes, each is refined by least
    /// squares, and converged points within `10 sqrt(tol)` in parameter space
    /// are merged.
    pub fn preimages(&self, p: &[f64], tol: f64) -> Result<Vec<Vec<f64>>> {
        if p.len() != self.coord_len() {
            return Err(Error::domain(format!(
                "point has {} coordinates, expected {}",
                p.len(),
                self.coord_len()
            )));
        }
        if !(tol > 0.0) {
            return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
        }
        let radius = 10.0 * tol.sqrt();
        let axes = self.scan_axes(1 << 16);
        let spacing: f64 = axes.iter().map(|a| a.1 * a.1).sum::<f64>().sqrt();
        let threshold = spacing + tol;

        let mut candidates = Vec::new();
        let total: usize = axes.iter().map(|a| a.0.len()).product();
        let d = self.coord_len();
        let mut x = vec![0.0; d];
        let mut u = vec![0.0; self.n];
        for flat in 0..total {
            let mut rem = flat;
            for (c, ax) in axes.iter().enumerate() {
                u[c] = ax.0[rem % ax.0.len()];
                rem /= ax.0.len();
            }
            self.eval_into(&u, &mut x);
            let dist = x.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dist < threshold {
                candidates.push((dist, u.clone()));
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut clusters: Vec<Vec<f64>> = Vec::new();
        for (_, start) in candidates {
            // Skip starts already inside a found cluster's basin.
            let cs = self.canonical(&start, radius);
            if clusters.iter().any(|c| self.param_distance(c, &cs) < 0.25 * spacing) {
                continue;
            }
            let (v, dist) = self.least_squares(&start, p);
            if dist >= tol {
                continue;
            }
            let cv = self.canonical(&v, radius);
            if clusters.iter().all(|c| self.param_distance(c, &cv) >= radius) {
                clusters.push(cv);
            }
        }
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let dij = self.param_distance(&clusters[i], &clusters[j]);
                if dij < 2.0 * radius {
                    return Err(Error::Resolution(format!(
                        "preimage clusters {:?} and {:?} are {dij:e} apart (merge radius {radius:e}); use a finer grid or tolerance",
                        clusters[i], clusters[j]
                    )));
                }
            }
        }
        Ok(clusters)
    }

    /// Number of distinct preimages `m(p)`; zero when `p` is off the image.
    pub fn preimage_count(&self, p: &[f64], tol: f64) -> Result<usize> {
        self.preimages(p, tol).map(|c| c.len())
    }

    /// Node coordinates and spacing per axis for scans with about `budget`
    /// points in total, spread in proportion to interval lengths.
    pub(crate) fn scan_axes(&self, budget: usize) -> Vec<(Vec<f64>, f64)> {
        let vol: f64 = self.domain.iter().map(|iv| iv.len()).product();
        let h = (vol / budget as f64).powf(1.0 / self.n as f64);
        self.domain
            .iter()
            .map(|iv| {
                let count = ((iv.len() / h).round() as usize).max(8);
                let step = iv.len() / count as f64;
                let nodes = (0..count)
                    .map(|i| {
                        if iv.periodic {
                            iv.lo + i as f64 * step
                        } else {
                            iv.lo + (i as f64 + 0.5) * step
                        }
                    })
                    .collect();
                (nodes, step)
            })
            .collect()
    }

    /// Checks that a central stencil of half-width `reach` around `u` stays
    /// inside the chart.
    pub(crate) fn check_stencil(&self, u: &[f64], reach: f64) -> Result<()> {
        for (t, iv) in u.iter().zip(&self.domain) {
            if !iv.periodic && (t - reach < iv.lo || t + reach > iv.hi) {
                return Err(Error::domain(format!(
                    "stencil of reach {reach} around {u:?} leaves [{}, {}]",
                    iv.lo, iv.hi
                )));
            }
        }
        Ok(())
    }

    /// Laplace–Beltrami operator of a vector-valued function, by central
    /// differences of step `h`:
    ///
    /// `Delta G = g^{ij} d_i d_j G + (1/sqrt g) d_i(sqrt g g^{ij}) d_j G`,
    ///
    /// where the metric at `u +- h e_i` comes from central differences of `f`
    /// too, so the whole stencil uses only chart evaluations.
    pub fn laplace_beltrami<F>(&self, u: &[f64], h: f64, field: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>>,
    {
        let u = self.normalize_param(u)?;
        if !(h > 0.0) {
            return Err(Error::domain(format!("step must be positive, got {h}")));
        }
        self.check_stencil(&u, 2.0 * h)?;
        let n = self.n;
        let d = self.coord_len();

        let metric_term = |v: &[f64]| -> Result<(Vec<f64>, f64)> {
            let mut jac = vec![0.0; d * n];
            self.fd_jacobian_into(v, h, &mut jac);
            let g = gram(&jac, n, d);
            let det = det_in_place(&mut g.clone(), n);
            if !(det > 0.0) {
                return Err(Error::degenerate(v, "metric degenerate inside Laplacian stencil"));
            }
            let ginv = inverse(&g, n).ok_or_else(|| Error::degenerate(v, "metric not invertible"))?;
            Ok((ginv, det.sqrt()))
        };

        let (ginv, sqrt_g) = metric_term(&u)?;
        let center = field(&u)?;
        let k = center.len();

        let mut shifted = u.clone();
        let mut plus = Vec::with_capacity(n);
        let mut minus = Vec::with_capacity(n);
        // coefficient b^j = (1/sqrt g) sum_i d_i (sqrt g g^{ij})
        let mut b = vec![0.0; n];
        for i in 0..n {
            shifted[i] = u[i] + h;
            let fp = field(&shifted)?;
            let (gp, sp) = metric_term(&shifted)?;
            shifted[i] = u[i] - h;
            let fm = field(&shifted)?;
            let (gm, sm) = metric_term(&shifted)?;
            shifted[i] = u[i];
            for j in 0..n {
                b[j] += (sp * gp[i * n + j] - sm * gm[i * n + j]) / (2.0 * h * sqrt_g);
            }
            plus.push(fp);
            minus.push(fm);
        }

        let mut out = vec![0.0; k];
        for j in 0..n {
            for c in 0..k {
                let dj = (plus[j][c] - minus[j][c]) / (2.0 * h);
                let djj = (plus[j][c] - 2.0 * center[c] + minus[j][c]) / (h * h);
                out[c] += b[j] * dj + ginv[j * n + j] * djj;
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let mut corner = |si: f64, sj: f64| -> Result<Vec<f64>> {
                    shifted[i] = u[i] + si * h;
                    shifted[j] = u[j] + sj * h;
                    let r = field(&shifted);
                    shifted[i] = u[i];
                    shifted[j] = u[j];
                    r
                };
                let pp = corner(1.0, 1.0)?;
                let pm = corner(1.0, -1.0)?;
                let mp = corner(-1.0, 1.0)?;
                let mm = corner(-1.0, -1.0)?;
                for c in 0..k {
                    let dij = (pp[c] - pm[c] - mp[c] + mm[c]) / (4.0 * h * h);
                    out[c] += 2.0 * ginv[i * n + j] * dij;
                }
            }
        }
        Ok(out)
    }

    /// `|Delta_M f + n f|` at `u`; vanishes exactly for minimal immersions.
    pub fn minimality_residual(&self, u: &[f64], h: f64) -> Result<f64> {
        let lap = self.laplace_beltrami(u, h, |v| {
            let mut x = vec![0.0; self.coord_len()];
            self.eval_into(v, &mut x);
            Ok(x)
        })?;
        let x = self.eval(u)?;
        let nf = self.n as f64;
        Ok(lap.iter().zip(&x).map(|(l, f)| (l + nf * f).powi(2)).sum::<f64>().sqrt())
    }

    /// Uniform random parameter, keeping non-periodic coordinates at least
    /// `margin` away from the interval ends.
    pub fn sample_param<R: Rng + ?Sized>(&self, rng: &mut R, margin: f64) -> Vec<f64> {
        self.domain
            .iter()
            .map(|iv| {
                if iv.periodic {
                    rng.gen_range(iv.lo..iv.hi)
                } else {
                    let m = margin.max(POLE_BAND);
                    rng.gen_range(iv.lo + m..iv.hi - m)
                }
            })
            .collect()
    }

    /// A random point of the image together with its parameter.
    pub fn sample_image_point<R: Rng + ?Sized>(&self, rng: &mut R, margin: f64) -> (Vec<f64>, Vec<f64>) {
        let u = self.sample_param(rng, margin);
        let mut x = vec![0.0; self.coord_len()];
        self.eval_into(&u, &mut x);
        (u, x)
    }
}

/// `J^T J`, row-major `n x n`.
pub(crate) fn gram(jac: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = dot(&jac[i * d..(i + 1) * d], &jac[j * d..(j + 1) * d]);
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

/// Generalised cross product of the `n + 1` vectors `f, J_1..J_n` in
/// `R^{n+2}`, normalised; `None` when they are linearly dependent.
pub(crate) fn normal_from_frame(x: &[f64], jac: &[f64], n: usize) -> Option<Vec<f64>> {
    let d = n + 2;
    debug_assert_eq!(x.len(), d);
    let cols = n + 1;
    let column = |c: usize, r: usize| if c == 0 { x[r] } else { jac[(c - 1) * d + r] };
    let mut cof = vec![0.0; d];
    let mut minor = vec![0.0; cols * cols];
    for (i, out) in cof.iter_mut().enumerate() {
        let mut rr = 0;
        for r in 0..d {
            if r == i {
                continue;
            }
            for c in 0..cols {
                minor[rr * cols + c] = column(c, r);
            }
            rr += 1;
        }
        let sign = if (i + cols) % 2 == 0 { 1.0 } else { -1.0 };
        *out = sign * det_in_place(&mut minor, cols);
    }
    let len = norm(&cof);
    let scale: f64 = (0..n).map(|c| norm(&jac[c * d..(c + 1) * d])).product();
    if !(len > 1e-12 * scale.max(1e-300)) || len == 0.0 {
        return None;
    }
    Some(cof.into_iter().map(|v| v / len).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn all_members() -> Vec<ChartedImmersion> {
        vec![
            make_equator(1, 2).unwrap(),
            make_equator(2, 3).unwrap(),
            make_equator(3, 5).unwrap(),
            make_clifford(1, 2).unwrap(),
            make_clifford(1, 3).unwrap(),
            make_clifford(2, 4).unwrap(),
            make_covered_circle(2, 2).unwrap(),
            make_covered_circle(3, 4).unwrap(),
        ]
    }

    #[test]
    fn constructors_reject_bad_ranges() {
        assert!(make_equator(2, 2).is_err());
        assert!(make_equator(0, 2).is_err());
        assert!(make_clifford(0, 2).is_err());
        assert!(make_clifford(2, 2).is_err());
        assert!(make_covered_circle(1, 2).is_err());
        assert!(make_covered_circle(2, 1).is_err());
    }

    #[test]
    fn names_round_trip() {
        for m in all_members() {
            let again = from_name(m.name()).unwrap();
            assert_eq!(again.family(), m.family());
        }
        assert!(matches!(from_name("torus:1,2"), Err(Error::Config(_))));
        assert!(matches!(from_name("clifford:1"), Err(Error::Config(_))));
        assert!(matches!(from_name("clifford"), Err(Error::Config(_))));
    }

    #[test]
    fn equator_circle_values() {
        let m = make_equator(1, 2).unwrap();
        for u in [0.0, 0.3, 2.0] {
            assert!(close(&m.eval(&[u]).unwrap(), &[u.cos(), u.sin(), 0.0], 1e-15));
        }
        assert!(close(&m.eval(&[PI]).unwrap(), &[-1.0, 0.0, 0.0], 1e-15));
        assert!(m.domain()[0].periodic);
    }

    #[test]
    fn clifford_values_and_metric() {
        let m = make_clifford(1, 2).unwrap();
        let r = 0.5f64.sqrt();
        assert!(close(&m.eval(&[0.0, 0.0]).unwrap(), &[r, 0.0, r, 0.0], 1e-15));
        let (u, v) = (0.7, -2.1);
        assert!(close(
            &m.eval(&[u, v]).unwrap(),
            &[r * u.cos(), r * u.sin(), r * v.cos(), r * v.sin()],
            1e-15
        ));
        let (g, area) = m.metric_and_area(&[u, v]).unwrap();
        assert!(close(&g, &[0.5, 0.0, 0.0, 0.5], 1e-15));
        assert!((area - 0.5).abs() < 1e-15);
    }

    #[test]
    fn covered_circle_metric_and_periodicity() {
        let m = make_covered_circle(2, 3).unwrap();
        assert!(close(&m.eval(&[2.0 * PI]).unwrap(), &m.eval(&[0.0]).unwrap(), 1e-15));
        let (g, area) = m.metric_and_area(&[1.3]).unwrap();
        assert!(close(&g, &[1.0], 1e-15));
        assert!((area - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equator_area_element_is_sin_colatitude() {
        let m = make_equator(2, 3).unwrap();
        for theta in [0.1, 1.0, 2.5] {
            let (_, area) = m.metric_and_area(&[theta, 0.4]).unwrap();
            assert!((area - theta.sin()).abs() < 1e-14);
        }
        assert!(matches!(m.metric_and_area(&[0.0, 0.4]), Err(Error::Degenerate { .. })));
        assert!(matches!(m.eval(&[-0.1, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn analytic_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in all_members() {
            let fd = m.clone().with_jacobian_mode(JacobianMode::CentralDifference { step: 1e-5 });
            for _ in 0..20 {
                let u = m.sample_param(&mut rng, 0.05);
                let ja = m.jacobian(&u).unwrap();
                let jf = fd.jacobian(&u).unwrap();
                assert!(close(&ja, &jf, 1e-9), "{}", m.name());
            }
        }
    }

    #[test]
    fn image_lies_on_unit_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in all_members() {
            for _ in 0..10_000 {
                let (_, x) = m.sample_image_point(&mut rng, 0.0);
                assert!((norm(&x) - 1.0).abs() < 1e-12, "{}", m.name());
            }
        }
    }

    #[test]
    fn clifford_normal() {
        let m = make_clifford(1, 2).unwrap();
        let r = 0.5f64.sqrt();
        for (u, v) in [(0.0, 0.0), (0.4, 1.9), (3.0, -1.0)] {
            let nu = m.unit_normal(&[u, v]).unwrap();
            let want = [r * u.cos(), r * u.sin(), -r * v.cos(), -r * v.sin()];
            let neg: Vec<f64> = want.iter().map(|w| -w).collect();
            assert!(close(&nu, &want, 1e-14) || close(&nu, &neg, 1e-14), "{nu:?}");
        }
    }

    #[test]
    fn equator_normal_is_last_axis() {
        let m = make_equator(2, 3).unwrap();
        let nu = m.unit_normal(&[0.8, 2.0]).unwrap();
        assert!(close(&nu, &[0.0, 0.0, 0.0, 1.0], 1e-14) || close(&nu, &[0.0, 0.0, 0.0, -1.0], 1e-14));
        assert!(make_equator(2, 4).unwrap().unit_normal(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn normal_is_orthogonal_and_positively_oriented() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in all_members().into_iter().filter(|m| m.is_hypersurface()) {
            for _ in 0..50 {
                let u = m.sample_param(&mut rng, 0.05);
                let nu = m.unit_normal(&u).unwrap();
                let x = m.eval(&u).unwrap();
                let jac = m.jacobian(&u).unwrap();
                let d = m.coord_len();
                assert!(dot(&nu, &x).abs() < 1e-12);
                for c in 0..m.dim() {
                    assert!(dot(&nu, &jac[c * d..(c + 1) * d]).abs() < 1e-12);
                }
                let mut mat = vec![0.0; d * d];
                for r in 0..d {
                    mat[r * d] = x[r];
                    for c in 0..m.dim() {
                        mat[r * d + c + 1] = jac[c * d + r];
                    }
                    mat[r * d + d - 1] = nu[r];
                }
                assert!(det_in_place(&mut mat, d) > 0.0);
            }
        }
    }

    #[test]
    fn normal_has_no_sign_flips_along_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in [make_clifford(1, 2).unwrap(), make_clifford(1, 3).unwrap(), make_equator(2, 3).unwrap()] {
            let start = m.sample_param(&mut rng, 0.3);
            let dir: Vec<f64> = (0..m.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut prev = m.unit_normal(&start).unwrap();
            for s in 1..2000 {
                let u: Vec<f64> = start.iter().zip(&dir).map(|(a, b)| a + 1e-3 * s as f64 * b).collect();
                let u: Vec<f64> = u
                    .iter()
                    .zip(m.domain())
                    .map(|(t, iv)| if iv.periodic { *t } else { t.clamp(0.2, PI - 0.2) })
                    .collect();
                let nu = m.unit_normal(&u).unwrap();
                assert!(dot(&nu, &prev) > 0.9, "{} flipped at step {s}", m.name());
                prev = nu;
            }
        }
    }

    #[test]
    fn preimage_counts() {
        let c3 = make_covered_circle(3, 2).unwrap();
        assert_eq!(c3.preimage_count(&[1.0, 0.0, 0.0], 1e-10).unwrap(), 3);
        let cl = make_clifford(1, 2).unwrap();
        let p = cl.eval(&[1.0, 2.0]).unwrap();
        assert_eq!(cl.preimage_count(&p, 1e-10).unwrap(), 1);
        let eq = make_equator(2, 3).unwrap();
        assert_eq!(eq.preimage_count(&[0.0, 0.0, 0.0, 1.0], 1e-10).unwrap(), 0);
        // A coordinate pole has a whole circle of parameters but one preimage.
        assert_eq!(eq.preimage_count(&[1.0, 0.0, 0.0, 0.0], 1e-10).unwrap(), 1);
    }

    #[test]
    fn covered_circle_preimages_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for m in 2..=6 {
            let c = make_covered_circle(m, 3).unwrap();
            for _ in 0..100 {
                let (_, p) = c.sample_image_point(&mut rng, 0.0);
                assert_eq!(c.preimage_count(&p, 1e-10).unwrap(), m);
            }
        }
    }

    #[test]
    fn antipodal_metadata_is_honest() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for m in all_members() {
            assert!(m.antipodal_invariant());
            for _ in 0..1000 {
                let u = m.sample_param(&mut rng, 0.0);
                let v = m.antipodal_partner(&u).unwrap();
                let (a, b) = (m.eval(&u).unwrap(), m.eval(&v).unwrap());
                assert!(a.iter().zip(&b).all(|(x, y)| (x + y).abs() < 1e-8));
            }
        }
    }

    #[test]
    fn minimality_residual_is_small_with_second_order_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for m in [make_clifford(1, 2).unwrap(), make_equator(2, 3).unwrap(), make_clifford(1, 3).unwrap()] {
            let (mut coarse, mut fine) = (0.0, 0.0);
            for _ in 0..20 {
                let u = m.sample_param(&mut rng, 0.2);
                let r1 = m.minimality_residual(&u, 1e-3).unwrap();
                let r2 = m.minimality_residual(&u, 5e-4).unwrap();
                assert!(r1 <= 1e-5, "{}: {r1}", m.name());
                coarse += r1;
                fine += r2;
            }
            let ratio = coarse / fine;
            assert!((3.5..=4.5).contains(&ratio), "{}: ratio {ratio}", m.name());
        }
    }

    #[test]
    fn laplacian_stencil_must_stay_in_chart() {
        let m = make_equator(2, 3).unwrap();
        assert!(matches!(m.minimality_residual(&[1e-4, 0.3], 1e-3), Err(Error::Domain(_))));
    }

    #[test]
    fn rotation_is_applied() {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        // rotation mixing coordinates 0 and 2
        let q = vec![c, 0.0, -c, 0.0, 1.0, 0.0, c, 0.0, c];
        let m = make_equator(1, 2).unwrap().with_rotation(&q).unwrap();
        assert!(close(&m.eval(&[0.0]).unwrap(), &[c, 0.0, c], 1e-15));
        assert!(make_equator(1, 2).unwrap().with_rotation(&[1.0; 9]).is_err());
    }
}
