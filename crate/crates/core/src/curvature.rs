//! Second fundamental form of hypersurfaces `M^n -> S^{n+1}`: the shape
//! operator, `S = |A|^2`, `f_3 = tr A^3`, the integral conditions that
//! characterise integral-Einstein hypersurfaces, and Simons' identity.
//!
//! Everything is computed from the chart: the normal comes from the analytic
//! Jacobian and is differentiated by central differences.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::ChartedImmersion;
use crate::linalg::{dot, inverse};
use crate::quad::{self, GridSpec, Sample, TensorGrid};
use crate::specfn::SStats;
use crate::{Error, Result};

/// Step for first differences of the normal.
pub const DEFAULT_STEP: f64 = 1e-4;
/// Step for the outer differences in [`simons_residual`].
pub const DEFAULT_OUTER_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Orientation {
    /// `det[f, J_1, ..., J_n, nu] > 0`.
    Standard,
    Reversed,
}

impl Orientation {
    fn sign(self) -> f64 {
        match self {
            Orientation::Standard => 1.0,
            Orientation::Reversed => -1.0,
        }
    }
}

/// Shape operator and its invariants at one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvatureSample {
    pub u: Vec<f64>,
    /// `A` in the Gram–Schmidt frame of the Jacobian columns, row-major,
    /// before symmetrisation.
    pub shape: Vec<f64>,
    /// Eigenvalues of the symmetrised `A`, descending.
    pub eigenvalues: Vec<f64>,
    /// `max |A_ij - A_ji|`.
    pub asymmetry: f64,
    pub trace: f64,
    pub s: f64,
    pub f3: f64,
    pub psi_a: Option<f64>,
    /// Scalar curvature `n(n-1) - S` from the Gauss equation.
    pub r_scalar: f64,
}

impl CurvatureSample {
    pub fn csv_header(n: usize) -> Vec<String> {
        let mut h: Vec<String> = (0..n).map(|i| format!("u{}", i + 1)).collect();
        h.extend(["S", "f3", "psi_a", "R", "trace", "asymmetry"].map(String::from));
        h.extend((0..n).map(|i| format!("lambda{}", i + 1)));
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let mut r: Vec<String> = self.u.iter().map(|v| v.to_string()).collect();
        r.push(self.s.to_string());
        r.push(self.f3.to_string());
        r.push(self.psi_a.map(|v| v.to_string()).unwrap_or_default());
        r.push(self.r_scalar.to_string());
        r.push(self.trace.to_string());
        r.push(self.asymmetry.to_string());
        r.extend(self.eigenvalues.iter().map(|v| v.to_string()));
        r
    }
}

fn require_hypersurface(m: &ChartedImmersion) -> Result<()> {
    if m.is_hypersurface() {
        Ok(())
    } else {
        Err(Error::domain(format!("{} is not a hypersurface", m.name())))
    }
}

/// Position, Jacobian and oriented normal at `u` (no domain checks).
fn frame_at(m: &ChartedImmersion, u: &[f64], sign: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let d = m.coord_len();
    let mut x = vec![0.0; d];
    let mut jac = vec![0.0; d * m.dim()];
    m.eval_jac_into(u, &mut x, &mut jac);
    let mut nu = crate::catalog::normal_from_frame(&x, &jac, m.dim())
        .ok_or_else(|| Error::degenerate(u, "normal undefined (Jacobian rank deficient)"))?;
    nu.iter_mut().for_each(|v| *v *= sign);
    Ok((x, jac, nu))
}

/// Coordinate second fundamental form `b_ab = -<d_a f, d_b nu>`, the
/// Jacobian and the normal at `u`.
fn coordinate_form(m: &ChartedImmersion, u: &[f64], h: f64, sign: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = m.dim();
    let d = m.coord_len();
    let (_, jac, nu) = frame_at(m, u, sign)?;
    let mut dnu = vec![0.0; n * d];
    let mut v = u.to_vec();
    for b in 0..n {
        v[b] = u[b] + h;
        let (_, _, np) = frame_at(m, &v, sign)?;
        v[b] = u[b] - h;
        let (_, _, nm) = frame_at(m, &v, sign)?;
        v[b] = u[b];
        for r in 0..d {
            dnu[b * d + r] = (np[r] - nm[r]) / (2.0 * h);
        }
    }
    let mut form = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            form[a * n + b] = -dot(&jac[a * d..(a + 1) * d], &dnu[b * d..(b + 1) * d]);
        }
    }
    Ok((form, jac, nu))
}

/// [`coordinate_form`] with the five-point fourth-order difference of `nu`,
/// for nested differencing where rounding noise in `b` must stay small.
fn coordinate_form4(m: &ChartedImmersion, u: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = m.dim();
    let d = m.coord_len();
    let (_, jac, _) = frame_at(m, u, 1.0)?;
    let mut dnu = vec![0.0; n * d];
    let mut v = u.to_vec();
    for b in 0..n {
        let mut at = |t: f64| -> Result<Vec<f64>> {
            v[b] = u[b] + t;
            let nu = frame_at(m, &v, 1.0)?.2;
            v[b] = u[b];
            Ok(nu)
        };
        let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
        for r in 0..d {
            dnu[b * d + r] = (m2[r] - 8.0 * m1[r] + 8.0 * p1[r] - p2[r]) / (12.0 * h);
        }
    }
    let mut form = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            form[a * n + b] = -dot(&jac[a * d..(a + 1) * d], &dnu[b * d..(b + 1) * d]);
        }
    }
    Ok((form, jac))
}

/// Coefficients `C` with `E_i = sum_d C[d][i] J_d` orthonormal, by
/// Gram–Schmidt in column order. Row-major `n x n`, upper triangular.
fn gram_schmidt(jac: &[f64], n: usize, d: usize, u: &[f64]) -> Result<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut coef = vec![0.0; n * n];
    for i in 0..n {
        let col = &jac[i * d..(i + 1) * d];
        let scale = dot(col, col).sqrt();
        let mut e = col.to_vec();
        let mut c = vec![0.0; n];
        c[i] = 1.0;
        for (j, prev) in frame.iter().enumerate() {
            let p = dot(&e, prev);
            for (ev, pv) in e.iter_mut().zip(prev) {
                *ev -= p * pv;
            }
            for dd in 0..n {
                c[dd] -= p * coef[dd * n + j];
            }
        }
        let len = dot(&e, &e).sqrt();
        if !(len > 1e-8 * scale) {
            return Err(Error::degenerate(u, "tangent frame degenerate"));
        }
        e.iter_mut().for_each(|v| *v /= len);
        for dd in 0..n {
            coef[dd * n + i] = c[dd] / len;
        }
        frame.push(e);
    }
    Ok(coef)
}

fn invariants(shape: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut asym: f64 = 0.0;
    let sym = DMatrix::from_fn(n, n, |i, j| {
        asym = asym.max((shape[i * n + j] - shape[j * n + i]).abs());
        0.5 * (shape[i * n + j] + shape[j * n + i])
    });
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().cloned().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    (eig, asym)
}

/// Shrinks `h` so that a stencil of reach `factor * h` stays in the chart.
fn fit_step(m: &ChartedImmersion, u: &[f64], h: f64, factor: f64) -> f64 {
    let mut h = h;
    for (t, iv) in u.iter().zip(m.domain()) {
        if !iv.periodic {
            let room = (t - iv.lo).min(iv.hi - t);
            h = h.min(0.5 * room / factor);
        }
    }
    h
}

/// Shape operator at `u` from central differences of the normal with step
/// `h`, expressed in the Gram–Schmidt frame of the Jacobian columns.
pub fn shape_operator(m: &ChartedImmersion, u: &[f64], h: f64, a: Option<&[f64]>) -> Result<CurvatureSample> {
    shape_operator_oriented(m, u, h, a, Orientation::Standard)
}

pub fn shape_operator_oriented(
    m: &ChartedImmersion,
    u: &[f64],
    h: f64,
    a: Option<&[f64]>,
    orientation: Orientation,
) -> Result<CurvatureSample> {
    require_hypersurface(m)?;
    if !(h > 0.0) {
        return Err(Error::domain(format!("step must be positive, got {h}")));
    }
    let u = m.normalize_param(u)?;
    m.check_stencil(&u, h)?;
    if let Some(a) = a {
        if a.len() != m.coord_len() {
            return Err(Error::domain(format!("direction has {} coordinates, expected {}", a.len(), m.coord_len())));
        }
    }
    sample_at(m, &u, h, a, orientation.sign())
}

fn sample_at(m: &ChartedImmersion, u: &[f64], h: f64, a: Option<&[f64]>, sign: f64) -> Result<CurvatureSample> {
    let n = m.dim();
    let d = m.coord_len();
    let (form, jac, nu) = coordinate_form(m, u, h, sign)?;
    let c = gram_schmidt(&jac, n, d, u)?;
    // A_ij = sum_ab C_ai C_bj b_ab
    let mut shape = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..n {
                for q in 0..n {
                    s += c[p * n + i] * c[q * n + j] * form[p * n + q];
                }
            }
            shape[i * n + j] = s;
        }
    }
    let (eigenvalues, asymmetry) = invariants(&shape, n);
    let s: f64 = eigenvalues.iter().map(|l| l * l).sum();
    let f3: f64 = eigenvalues.iter().map(|l| l * l * l).sum();
    let trace = (0..n).map(|i| shape[i * n + i]).sum();
    let nf = n as f64;
    Ok(CurvatureSample {
        u: u.to_vec(),
        shape,
        eigenvalues,
        asymmetry,
        trace,
        s,
        f3,
        psi_a: a.map(|a| dot(&nu, a)),
        r_scalar: nf * (nf - 1.0) - s,
    })
}

/// `S` and `f_3` at a quadrature node, shrinking the step near chart edges.
fn node_invariants(m: &ChartedImmersion, u: &[f64]) -> Result<(f64, f64)> {
    let h = fit_step(m, u, DEFAULT_STEP, 1.0);
    let c = sample_at(m, u, h, None, 1.0)?;
    Ok((c.s, c.f3))
}

/// Grid extrema and integrals of `S` and `S^2`. The extrema are refined once
/// on a `5^n` lattice spanning the cells around the extremal nodes.
pub fn s_statistics(m: &ChartedImmersion, grid: &GridSpec) -> Result<SStats> {
    require_hypersurface(m)?;
    let ints = quad::integrate_many(
        m,
        |s: &Sample, out: &mut [f64]| {
            let v = node_invariants(m, s.u).map(|c| c.0).unwrap_or(f64::NAN);
            out[0] = 1.0;
            out[1] = v;
            out[2] = v * v;
        },
        3,
        grid,
    )?;
    if ints.iter().any(|e| !e.value.is_finite()) {
        return Err(Error::degenerate(&[], "shape operator undefined at a quadrature node"));
    }

    let n = m.dim();
    let tg = TensorGrid::from_intervals(m.domain(), &grid.nodes_per_dim);
    let values: Vec<f64> = (0..tg.len())
        .into_par_iter()
        .map(|flat| {
            let mut u = vec![0.0; n];
            tg.node(flat, &mut u);
            node_invariants(m, &u).map(|c| c.0)
        })
        .collect::<Result<_>>()?;
    let arg = |better: fn(f64, f64) -> bool| {
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if better(*v, values[best]) {
                best = i;
            }
        }
        best
    };
    let refine = |flat: usize, better: fn(f64, f64) -> bool| -> Result<f64> {
        let mut idx = vec![0; n];
        tg.index(flat, &mut idx);
        let mut centre = vec![0.0; n];
        tg.node(flat, &mut centre);
        let mut best = values[flat];
        let mut u = vec![0.0; n];
        for k in 0..5usize.pow(n as u32) {
            let mut rem = k;
            for dd in 0..n {
                let step = rem % 5;
                rem /= 5;
                let ax = &tg.axes[dd];
                let (lo, hi) = (ax.cell_lo[idx[dd]], ax.cell_hi[idx[dd]]);
                u[dd] = lo + (step as f64 + 0.5) / 5.0 * (hi - lo);
            }
            let v = node_invariants(m, &u)?.0;
            if better(v, best) {
                best = v;
            }
        }
        Ok(best)
    };
    let s_max = refine(arg(|a, b| a > b), |a, b| a > b)?;
    let s_min = refine(arg(|a, b| a < b), |a, b| a < b)?;
    Ok(SStats {
        s_min,
        s_max,
        int_s: ints[1].value,
        int_s2: ints[2].value,
        vol: ints[0].value,
    })
}

/// The four integral conditions at one direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IeRow {
    pub a: Vec<f64>,
    pub int_phi_sq: f64,
    pub int_psi_sq: f64,
    pub int_phi_psi_f3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IeChecks {
    pub vol: f64,
    /// `Vol / (n + 2)`.
    pub target: f64,
    pub rows: Vec<IeRow>,
    /// `max_a |int phi_a^2 - Vol/(n+2)|`.
    pub phi_sq_residual: f64,
    /// `max_a |int psi_a^2 - Vol/(n+2)|`.
    pub psi_sq_residual: f64,
    /// `max_a |int phi_a^2 - int psi_a^2|`.
    pub phi_psi_residual: f64,
    /// `max_a |int phi_a psi_a f_3|`.
    pub mixed_residual: f64,
    /// `S` vanishes on the grid, so the conditions do not apply.
    pub totally_geodesic: bool,
    /// The integral-Einstein notion is defined for `n >= 3`.
    pub in_definition_range: bool,
}

/// Integrals of `phi_a^2`, `psi_a^2` and `phi_a psi_a f_3` for each sampled
/// direction, with their deviations from the integral-Einstein values.
pub fn ie_checks(m: &ChartedImmersion, a_samples: &[Vec<f64>], grid: &GridSpec) -> Result<IeChecks> {
    require_hypersurface(m)?;
    if a_samples.is_empty() {
        return Err(Error::domain("no directions supplied"));
    }
    for a in a_samples {
        if a.len() != m.coord_len() || (dot(a, a).sqrt() - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("direction {a:?} is not a unit vector in R^{}", m.coord_len())));
        }
    }
    let k = a_samples.len();
    let ints = quad::integrate_many(
        m,
        |s: &Sample, out: &mut [f64]| {
            let nu = crate::catalog::normal_from_frame(s.x, s.jac, m.dim());
            let f3 = node_invariants(m, s.u).map(|c| c.1);
            let (nu, f3) = match (nu, f3) {
                (Some(nu), Ok(f3)) => (nu, f3),
                _ => {
                    out.iter_mut().for_each(|v| *v = f64::NAN);
                    return;
                }
            };
            out[0] = 1.0;
            for (i, a) in a_samples.iter().enumerate() {
                let phi = dot(s.x, a);
                let psi = dot(&nu, a);
                out[1 + 3 * i] = phi * phi;
                out[2 + 3 * i] = psi * psi;
                out[3 + 3 * i] = phi * psi * f3;
            }
        },
        1 + 3 * k,
        grid,
    )?;
    if ints.iter().any(|e| !e.value.is_finite()) {
        return Err(Error::degenerate(&[], "normal undefined at a quadrature node"));
    }
    let vol = ints[0].value;
    let n = m.dim();
    let target = vol / (n as f64 + 2.0);
    let rows: Vec<IeRow> = a_samples
        .iter()
        .enumerate()
        .map(|(i, a)| IeRow {
            a: a.clone(),
            int_phi_sq: ints[1 + 3 * i].value,
            int_psi_sq: ints[2 + 3 * i].value,
            int_phi_psi_f3: ints[3 + 3 * i].value,
        })
        .collect();
    let max = |f: &dyn Fn(&IeRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let stats = s_statistics(m, grid)?;
    Ok(IeChecks {
        vol,
        target,
        phi_sq_residual: max(&|r| (r.int_phi_sq - target).abs()),
        psi_sq_residual: max(&|r| (r.int_psi_sq - target).abs()),
        phi_psi_residual: max(&|r| (r.int_phi_sq - r.int_psi_sq).abs()),
        mixed_residual: max(&|r| r.int_phi_psi_f3.abs()),
        rows,
        totally_geodesic: stats.s_max < 1e-8,
        in_definition_range: n >= 3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimonsResidual {
    pub h: f64,
    pub s: f64,
    pub lap_s: f64,
    pub grad_h_sq: f64,
    pub grad_s_sq: f64,
    /// `|Delta S / 2 - |grad h|^2 - S (n - S)|` at step `h`.
    pub identity_residual: f64,
    /// The same residual at step `2h`, used for the step-size check.
    pub coarse_residual: f64,
    /// `4 S |grad h|^2 - |grad S|^2`.
    pub gradient_bound_slack: f64,
}

/// Absolute noise floor of the nested stencil, relative to `1 + S`.
const SIMONS_NOISE_FLOOR: f64 = 1e-5;

struct SimonsTerms {
    s: f64,
    lap_s: f64,
    grad_h_sq: f64,
    grad_s_sq: f64,
}

/// `S = g^{aa'} g^{bb'} b_ab b_a'b'` from the coordinate form.
fn s_from_form(form: &[f64], ginv: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            for a2 in 0..n {
                for b2 in 0..n {
                    s += ginv[a * n + a2] * ginv[b * n + b2] * form[a * n + b] * form[a2 * n + b2];
                }
            }
        }
    }
    s
}

fn metric_inverse(jac: &[f64], n: usize, d: usize, u: &[f64]) -> Result<Vec<f64>> {
    let g = crate::catalog::gram(jac, n, d);
    inverse(&g, n).ok_or_else(|| Error::degenerate(u, "metric not invertible"))
}

/// Step of the inner differences of `nu` and `J` under outer step `h`.
fn simons_inner_step(h: f64) -> f64 {
    (0.5 * h).min(DEFAULT_OUTER_STEP)
}

fn simons_terms(m: &ChartedImmersion, u: &[f64], h: f64) -> Result<SimonsTerms> {
    let n = m.dim();
    let d = m.coord_len();
    let hi = simons_inner_step(h);
    let s_at = |v: &[f64]| -> Result<f64> {
        let (form, jac) = coordinate_form4(m, v, hi)?;
        let ginv = metric_inverse(&jac, n, d, v)?;
        Ok(s_from_form(&form, &ginv, n))
    };

    let lap_s = m.laplace_beltrami(u, h, |v| Ok(vec![s_at(v)?]))?[0];

    let (form, jac) = coordinate_form4(m, u, hi)?;
    let ginv = metric_inverse(&jac, n, d, u)?;
    let s = s_from_form(&form, &ginv, n);

    // d_c b_ab, d_c S and d_c J_a by central differences.
    let mut dform = vec![0.0; n * n * n];
    let mut ds = vec![0.0; n];
    let mut djac = vec![0.0; n * n * d];
    let mut v = u.to_vec();
    for c in 0..n {
        v[c] = u[c] + h;
        let (fp, jp) = coordinate_form4(m, &v, hi)?;
        let sp = s_from_form(&fp, &metric_inverse(&jp, n, d, &v)?, n);
        v[c] = u[c] - h;
        let (fm, jm) = coordinate_form4(m, &v, hi)?;
        let sm = s_from_form(&fm, &metric_inverse(&jm, n, d, &v)?, n);
        v[c] = u[c];
        for ab in 0..n * n {
            dform[c * n * n + ab] = (fp[ab] - fm[ab]) / (2.0 * h);
        }
        ds[c] = (sp - sm) / (2.0 * h);

        let mut x = vec![0.0; d];
        let mut js = [vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]];
        for (j, t) in js.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
            v[c] = u[c] + t * hi;
            m.eval_jac_into(&v, &mut x, j);
        }
        v[c] = u[c];
        for r in 0..n * d {
            djac[c * n * d + r] = (js[3][r] - 8.0 * js[2][r] + 8.0 * js[1][r] - js[0][r]) / (12.0 * hi);
        }
    }

    // Christoffel symbols Gamma^e_{ca} = g^{ed} <J_d, d_c J_a>.
    let mut gamma = vec![0.0; n * n * n];
    for c in 0..n {
        for a in 0..n {
            let dja = &djac[c * n * d + a * d..c * n * d + (a + 1) * d];
            for e in 0..n {
                gamma[e * n * n + c * n + a] = (0..n).map(|dd| ginv[e * n + dd] * dot(&jac[dd * d..(dd + 1) * d], dja)).sum();
            }
        }
    }
    // nabla_c b_ab
    let mut cov = vec![0.0; n * n * n];
    for c in 0..n {
        for a in 0..n {
            for b in 0..n {
                let mut t = dform[c * n * n + a * n + b];
                for e in 0..n {
                    t -= gamma[e * n * n + c * n + a] * form[e * n + b];
                    t -= gamma[e * n * n + c * n + b] * form[a * n + e];
                }
                cov[c * n * n + a * n + b] = t;
            }
        }
    }
    let mut grad_h_sq = 0.0;
    for c in 0..n {
        for a in 0..n {
            for b in 0..n {
                let t = cov[c * n * n + a * n + b];
                if t == 0.0 {
                    continue;
                }
                for c2 in 0..n {
                    for a2 in 0..n {
                        for b2 in 0..n {
                            grad_h_sq += ginv[c * n + c2] * ginv[a * n + a2] * ginv[b * n + b2] * t * cov[c2 * n * n + a2 * n + b2];
                        }
                    }
                }
            }
        }
    }
    let mut grad_s_sq = 0.0;
    for c in 0..n {
        for c2 in 0..n {
            grad_s_sq += ginv[c * n + c2] * ds[c] * ds[c2];
        }
    }
    Ok(SimonsTerms {
        s,
        lap_s,
        grad_h_sq,
        grad_s_sq,
    })
}

/// Residual of `Delta S / 2 = |grad h|^2 + S (n - S)` and the slack in
/// `|grad S|^2 <= 4 S |grad h|^2` at `u`, with outer step `h`.
///
/// The residual is recomputed at `2h, 4h, ...` up to the default outer step
/// (at least once); if any halving of the step makes it grow by more than a
/// factor of two above the noise floor, rounding dominates and a step-size
/// error is returned.
pub fn simons_residual(m: &ChartedImmersion, u: &[f64], h: f64) -> Result<SimonsResidual> {
    require_hypersurface(m)?;
    if !(h > 0.0) {
        return Err(Error::domain(format!("step must be positive, got {h}")));
    }
    let u = m.normalize_param(u)?;
    let mut steps = vec![h, 2.0 * h];
    while *steps.last().unwrap() < DEFAULT_OUTER_STEP {
        steps.push(2.0 * steps.last().unwrap());
    }
    let widest = *steps.last().unwrap();
    m.check_stencil(&u, 4.0 * widest + 2.0 * simons_inner_step(widest))?;
    let nf = m.dim() as f64;
    let residual = |t: &SimonsTerms| (0.5 * t.lap_s - t.grad_h_sq - t.s * (nf - t.s)).abs();
    let fine = simons_terms(m, &u, h)?;
    let mut finer = (h, residual(&fine));
    let mut coarse_residual = f64::NAN;
    for &step in &steps[1..] {
        let rc = residual(&simons_terms(m, &u, step)?);
        if step == 2.0 * h {
            coarse_residual = rc;
        }
        let (hf, rf) = finer;
        if rf > 2.0 * rc + SIMONS_NOISE_FLOOR * (1.0 + fine.s) {
            return Err(Error::StepSize(format!(
                "residual grows from {rc:e} to {rf:e} when the step shrinks to {hf:e}; rounding dominates"
            )));
        }
        finer = (step, rc);
    }
    let (rf, rc) = (residual(&fine), coarse_residual);
    Ok(SimonsResidual {
        h,
        s: fine.s,
        lap_s: fine.lap_s,
        grad_h_sq: fine.grad_h_sq,
        grad_s_sq: fine.grad_s_sq,
        identity_residual: rf,
        coarse_residual: rc,
        gradient_bound_slack: 4.0 * fine.s * fine.grad_h_sq - fine.grad_s_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{make_clifford, make_equator};
    use crate::specfn;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn clifford_eigenvalues(k: usize, n: usize) -> Vec<f64> {
        let (kf, nf) = (k as f64, n as f64);
        let mut v = vec![((nf - kf) / kf).sqrt(); k];
        v.extend(vec![-(kf / (nf - kf)).sqrt(); n - k]);
        v
    }

    /// Distance between descending spectra, up to the sign fixed by the
    /// orientation.
    fn spectrum_error(got: &[f64], want: &[f64]) -> f64 {
        let mut flipped: Vec<f64> = want.iter().map(|v| -v).collect();
        flipped.reverse();
        let dist = |w: &[f64]| got.iter().zip(w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        dist(want).min(dist(&flipped))
    }

    #[test]
    fn clifford_principal_curvatures() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=6 {
            for k in 1..n {
                let m = make_clifford(k, n).unwrap();
                let want = clifford_eigenvalues(k, n);
                for _ in 0..5 {
                    let u = m.sample_param(&mut rng, 0.05);
                    let c = shape_operator(&m, &u, DEFAULT_STEP, None).unwrap();
                    let e = spectrum_error(&c.eigenvalues, &want);
                    assert!(e < 1e-6, "clifford({k},{n}) {:?} vs {want:?}", c.eigenvalues);
                    assert!(c.asymmetry < 1e-8);
                    assert!(c.trace.abs() < 1e-6);
                    assert_relative_eq!(c.s, n as f64, epsilon = 1e-6);
                    assert_relative_eq!(c.r_scalar, (n * (n - 1)) as f64 - n as f64, epsilon = 1e-6);
                    let frob: f64 = c.shape.iter().map(|v| v * v).sum();
                    assert!((frob - c.s).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn equator_is_flat() {
        let m = make_equator(2, 3).unwrap();
        let c = shape_operator(&m, &[1.0, 2.0], DEFAULT_STEP, None).unwrap();
        assert!(c.s.abs() < 1e-12 && c.f3.abs() < 1e-12);
        assert!(shape_operator(&make_equator(1, 3).unwrap(), &[1.0], DEFAULT_STEP, None).is_err());
    }

    #[test]
    fn clifford_normal_height_and_f3() {
        let m = make_clifford(1, 2).unwrap();
        let (u, v) = (0.3, 1.9);
        let a = [0.0, 0.0, 1.0, 0.0];
        let c = shape_operator(&m, &[u, v], DEFAULT_STEP, Some(&a)).unwrap();
        assert!(c.f3.abs() < 1e-6);
        // nu = +-(cos u, sin u, -cos v, -sin v)/sqrt 2
        assert_relative_eq!(c.psi_a.unwrap().abs(), v.cos().abs() / 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn orientation_flip_negates_shape() {
        let m = make_clifford(2, 5).unwrap();
        let u = [0.7, 1.1, 2.0, 0.4, 0.9];
        let a = shape_operator_oriented(&m, &u, DEFAULT_STEP, None, Orientation::Standard).unwrap();
        let b = shape_operator_oriented(&m, &u, DEFAULT_STEP, None, Orientation::Reversed).unwrap();
        for (x, y) in a.shape.iter().zip(&b.shape) {
            assert!((x + y).abs() < 1e-12);
        }
        assert!((a.f3 + b.f3).abs() < 1e-9);
        assert!((a.s - b.s).abs() < 1e-12);
    }

    #[test]
    fn shape_operator_converges_at_second_order() {
        let m = make_clifford(1, 3).unwrap();
        let u = [0.5, 1.2, 2.3];
        let want = clifford_eigenvalues(1, 3);
        let err = |h: f64| {
            let c = shape_operator(&m, &u, h, None).unwrap();
            spectrum_error(&c.eigenvalues, &want)
        };
        let ratio = err(0.02) / err(0.01);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn clifford_statistics() {
        let m = make_clifford(1, 2).unwrap();
        let st = s_statistics(&m, &GridSpec::default_for(&m)).unwrap();
        let vol = 2.0 * PI * PI;
        assert!((st.s_min - 2.0).abs() < 1e-6 && (st.s_max - 2.0).abs() < 1e-6);
        assert_relative_eq!(st.vol, vol, max_relative = 1e-12);
        assert_relative_eq!(st.int_s, 2.0 * vol, max_relative = 1e-6);
        assert_relative_eq!(st.int_s2, 4.0 * vol, max_relative = 1e-6);
        assert_relative_eq!(specfn::c_n_s(2, &st).unwrap(), 0.25, max_relative = 1e-6);
    }

    #[test]
    fn clifford_integral_conditions() {
        let m = make_clifford(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<Vec<f64>> = (0..4).map(|_| m.sample_image_point(&mut rng, 0.0).1).collect();
        let ie = ie_checks(&m, &a, &GridSpec::default_for(&m)).unwrap();
        assert!(!ie.totally_geodesic && !ie.in_definition_range);
        for r in &ie.rows {
            assert!((r.int_phi_sq - PI * PI / 2.0).abs() < 1e-8);
        }
        assert!(ie.phi_sq_residual < 1e-8);
        assert!(ie.psi_sq_residual < 1e-6 * ie.vol);
        assert!(ie.phi_psi_residual < 1e-6 * ie.vol);
        assert!(ie.mixed_residual < 1e-6 * ie.vol);

        let eq = make_equator(2, 3).unwrap();
        let ie = ie_checks(&eq, &[vec![0.0, 0.0, 0.6, 0.8]], &GridSpec::default_for(&eq)).unwrap();
        assert!(ie.totally_geodesic);
    }

    #[test]
    fn simons_on_clifford_and_equator() {
        let m = make_clifford(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let u = m.sample_param(&mut rng, 0.0);
            let r = simons_residual(&m, &u, DEFAULT_OUTER_STEP).unwrap();
            assert!(r.identity_residual <= 1e-4, "{r:?}");
            assert!(r.gradient_bound_slack >= -1e-6, "{r:?}");
        }
        let eq = make_equator(2, 3).unwrap();
        let r = simons_residual(&eq, &[1.0, 2.0], DEFAULT_OUTER_STEP).unwrap();
        assert!(r.identity_residual < 1e-6 && r.s.abs() < 1e-12);
        let c3 = make_clifford(1, 3).unwrap();
        let r = simons_residual(&c3, &[0.4, 1.0, 2.0], DEFAULT_OUTER_STEP).unwrap();
        assert!(r.identity_residual <= 1e-4, "{r:?}");
    }

    #[test]
    fn simons_rejects_tiny_steps() {
        let m = make_clifford(1, 2).unwrap();
        let err = simons_residual(&m, &[0.3, 0.8], 1e-7).unwrap_err();
        assert!(matches!(err, Error::StepSize(_)), "{err:?}");
    }
}
