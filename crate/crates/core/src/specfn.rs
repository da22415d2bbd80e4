//! Closed-form special functions and gap constants.
//!
//! Everything here is a pure function of its arguments. Volumes are evaluated
//! in log space so that ratios stay finite for dimensions in the millions.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::Serialize;

use crate::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_6;

/// `zeta(k) - 1` for `k = 2..=40`.
const ZETA_MINUS_ONE: [f64; 39] = [
    0.644_934_066_848_226_436_47,
    0.202_056_903_159_594_285_4,
    0.082_323_233_711_138_191_516,
    0.036_927_755_143_369_926_331,
    0.017_343_061_984_449_139_715,
    0.008_349_277_381_922_826_839_8,
    0.004_077_356_197_944_339_378_7,
    0.002_008_392_826_082_214_417_9,
    0.000_994_575_127_818_085_337_15,
    0.000_494_188_604_119_464_558_7,
    0.000_246_086_553_308_048_298_64,
    0.000_122_713_347_578_489_146_75,
    6.124_813_505_870_482_925_9e-5,
    3.058_823_630_702_049_355_2e-5,
    1.528_225_940_865_187_173_3e-5,
    7.637_197_637_899_762_273_6e-6,
    3.817_293_264_999_839_856_5e-6,
    1.908_212_716_553_938_925_7e-6,
    9.539_620_338_727_961_131_5e-7,
    4.769_329_867_878_064_631_2e-7,
    2.384_505_027_277_329_9e-7,
    1.192_199_259_653_110_730_7e-7,
    5.960_818_905_125_947_961_2e-8,
    2.980_350_351_465_228_018_6e-8,
    1.490_155_482_836_504_123_5e-8,
    7.450_711_789_835_429_492e-9,
    3.725_334_024_788_457_054_8e-9,
    1.862_659_723_513_049_006_4e-9,
    9.313_274_324_196_681_828_7e-10,
    4.656_629_065_033_784_073e-10,
    2.328_311_833_676_505_492e-10,
    1.164_155_017_270_051_977_6e-10,
    5.820_772_087_902_700_889_2e-11,
    2.910_385_044_497_099_686_9e-11,
    1.455_192_189_104_198_423_6e-11,
    7.275_959_835_057_481_014_5e-12,
    3.637_979_547_378_651_190_2e-12,
    1.818_989_650_307_065_947_6e-12,
    9.094_947_840_263_889_282_5e-13,
];

/// Lower bound factor for the first positive Laplace eigenvalue of an
/// embedded minimal hypersurface of `S^{n+1}`: `lambda_1 > FACTOR * n`
/// (Choi–Wang, with the strict inequality). Imported as a constant.
pub const FIRST_EIGENVALUE_LOWER_FACTOR: f64 = 0.5;

/// `ln Gamma(x)` for `x > 0`.
///
/// A Lanczos sum (`g = 7`, nine terms) is used for `x > 2.5`. On
/// `[0.5, 2.5]` the Taylor series of `ln Gamma(2 + z)` is used instead so that
/// the relative error stays small near the zeros at `x = 1` and `x = 2`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::domain(format!(
            "log_gamma requires a finite positive argument, got {x}"
        )));
    }
    Ok(ln_gamma_positive(x))
}

fn ln_gamma_positive(x: f64) -> f64 {
    if x < 0.5 {
        // Gamma(x) = Gamma(x + 1) / x
        return ln_gamma_positive(x + 1.0) - x.ln();
    }
    if x < 1.5 {
        let z = x - 1.0;
        return ln_gamma_two_plus(z) - z.ln_1p();
    }
    if x <= 2.5 {
        return ln_gamma_two_plus(x - 2.0);
    }
    ln_gamma_lanczos(x)
}

/// `ln Gamma(2 + z)` for `|z| <= 0.5`.
fn ln_gamma_two_plus(z: f64) -> f64 {
    // ln Gamma(2 + z) = (1 - gamma) z + sum_{k>=2} (-1)^k (zeta(k) - 1) z^k / k
    let mut sum = 0.0;
    let mut power = z;
    for (i, c) in ZETA_MINUS_ONE.iter().enumerate() {
        power *= -z;
        let k = (i + 2) as f64;
        sum += c * power / k;
    }
    // The loop accumulated (-1)^{k-1} terms; flip the sign once.
    (1.0 - EULER_GAMMA) * z - sum
}

fn ln_gamma_lanczos(x: f64) -> f64 {
    let y = x - 1.0;
    let mut series = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        series += c / (y + i as f64);
    }
    let t = y + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (y + 0.5) * t.ln() - t + series.ln()
}

/// `ln Gamma(a) - ln Gamma(b)`.
pub fn ln_gamma_ratio(a: f64, b: f64) -> Result<f64> {
    Ok(log_gamma(a)? - log_gamma(b)?)
}

/// `ln Vol(S^k)` where `S^k` is the unit sphere in `R^{k+1}`.
pub fn ln_sphere_volume(k: i64) -> Result<f64> {
    if k < 0 {
        return Err(Error::domain(format!("sphere dimension must be >= 0, got {k}")));
    }
    let kf = k as f64;
    Ok((kf + 1.0).ln() + 0.5 * (kf + 1.0) * PI.ln() - ln_gamma_positive(0.5 * (kf + 3.0)))
}

/// `Vol(S^k) = (k+1) pi^{(k+1)/2} / Gamma((k+3)/2)`.
pub fn sphere_volume(k: i64) -> Result<f64> {
    ln_sphere_volume(k).map(f64::exp)
}

/// `ln Vol(B^n)` for the unit ball of `R^n`.
pub fn ln_ball_volume(n: i64) -> Result<f64> {
    if n < 1 {
        return Err(Error::domain(format!("ball dimension must be >= 1, got {n}")));
    }
    let nf = n as f64;
    Ok(0.5 * nf * PI.ln() - ln_gamma_positive(0.5 * nf + 1.0))
}

/// `Vol(B^n) = pi^{n/2} / Gamma(n/2 + 1)`.
pub fn ball_volume(n: i64) -> Result<f64> {
    ln_ball_volume(n).map(f64::exp)
}

/// Gap constant `p(n) = 2 sqrt(n+1)/n * Vol(S^{n-1}) / Vol(S^n)`, evaluated in
/// the Gamma-ratio form `2 / sqrt(pi (n+1)) * Gamma((n+3)/2) / Gamma((n+2)/2)`.
pub fn gap_p(n: i64) -> Result<f64> {
    if n < 1 {
        return Err(Error::domain(format!("gap_p requires n >= 1, got {n}")));
    }
    let nf = n as f64;
    let ln_ratio = ln_gamma_positive(0.5 * (nf + 3.0)) - ln_gamma_positive(0.5 * (nf + 2.0));
    Ok(2.0 / (PI * (nf + 1.0)).sqrt() * ln_ratio.exp())
}

/// `p(n)` from the volume-ratio form; kept as an independent cross-check of
/// [`gap_p`].
pub fn gap_p_from_volumes(n: i64) -> Result<f64> {
    if n < 1 {
        return Err(Error::domain(format!("gap_p requires n >= 1, got {n}")));
    }
    let nf = n as f64;
    let ln_ratio = ln_sphere_volume(n - 1)? - ln_sphere_volume(n)?;
    Ok(2.0 * (nf + 1.0).sqrt() / nf * ln_ratio.exp())
}

/// `ln Vol(M_{k,n-k})` for the minimal Clifford torus
/// `S^k(sqrt(k/n)) x S^{n-k}(sqrt((n-k)/n))`.
pub fn ln_clifford_volume(k: i64, n: i64) -> Result<f64> {
    if n < 2 || k < 1 || k > n - 1 {
        return Err(Error::domain(format!(
            "Clifford torus needs 1 <= k <= n-1, got k = {k}, n = {n}"
        )));
    }
    let (kf, nf) = (k as f64, n as f64);
    let lf = nf - kf;
    Ok(0.5 * kf * (kf / nf).ln()
        + 0.5 * lf * (lf / nf).ln()
        + ln_sphere_volume(k)?
        + ln_sphere_volume(n - k)?)
}

pub fn clifford_volume(k: i64, n: i64) -> Result<f64> {
    ln_clifford_volume(k, n).map(f64::exp)
}

/// `max_k Vol(M_{k,n-k})` by direct enumeration.
pub fn clifford_volume_max(n: i64) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain(format!("Clifford tori need n >= 2, got {n}")));
    }
    let mut best = f64::NEG_INFINITY;
    for k in 1..n {
        best = best.max(ln_clifford_volume(k, n)?);
    }
    Ok(best.exp())
}

fn check_dim_mult(n: i64, m: i64) -> Result<()> {
    if n < 1 {
        return Err(Error::domain(format!("dimension must be >= 1, got {n}")));
    }
    if m < 1 {
        return Err(Error::domain(format!("multiplicity must be >= 1, got {m}")));
    }
    Ok(())
}

/// Main volume lower bound `m/2 Vol(S^n) + m sqrt(n+1)/n Vol(S^{n-1})` for a
/// closed minimal immersion with a point of multiplicity `m`.
pub fn main_bound(n: i64, m: i64) -> Result<f64> {
    check_dim_mult(n, m)?;
    let (nf, mf) = (n as f64, m as f64);
    Ok(0.5 * mf * sphere_volume(n)? + mf * (nf + 1.0).sqrt() / nf * sphere_volume(n - 1)?)
}

/// Bound `m Vol(S^n)` for immersions invariant under the antipodal map.
pub fn antipodal_bound(n: i64, m: i64) -> Result<f64> {
    check_dim_mult(n, m)?;
    Ok(m as f64 * sphere_volume(n)?)
}

/// Volume-gap factors for minimal hypersurfaces, each multiplying `Vol(S^n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GapKind {
    /// Constant scalar curvature and integral-Einstein: `(n+2)/(n+1)`.
    IntegralEinstein,
    /// Constant scalar curvature and antipodally symmetric: `2n/(2n-1)`.
    Antipodal,
    /// Antipodal with `n <= S <= n + delta`: `2(n+delta)/(2(n+delta)-1)`.
    Pinched { delta: f64 },
    /// Rigidity threshold `3(4n^2-3n+1)/(3(4n^2-4n+1)+8 delta)`, `delta <= 3n/8`.
    Rigidity { delta: f64 },
    /// Antipodal with curvature range `[s_min, s_max]`: `2n s_max/(2n s_max - s_min)`.
    SRatio { s_min: f64, s_max: f64 },
}

impl GapKind {
    pub fn name(&self) -> &'static str {
        match self {
            GapKind::IntegralEinstein => "ie",
            GapKind::Antipodal => "antipodal",
            GapKind::Pinched { .. } => "pinched",
            GapKind::Rigidity { .. } => "rigidity",
            GapKind::SRatio { .. } => "s-ratio",
        }
    }
}

pub fn hyp_gap(kind: GapKind, n: i64) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain(format!(
            "hypersurface gaps need n >= 2, got {n}"
        )));
    }
    let nf = n as f64;
    match kind {
        GapKind::IntegralEinstein => Ok((nf + 2.0) / (nf + 1.0)),
        GapKind::Antipodal => Ok(2.0 * nf / (2.0 * nf - 1.0)),
        GapKind::Pinched { delta } => {
            if !(delta >= 0.0) || !delta.is_finite() {
                return Err(Error::domain(format!(
                    "pinched gap needs finite delta >= 0 (hypothesis n <= S <= n + delta), got {delta}"
                )));
            }
            let q = 2.0 * (nf + delta);
            Ok(q / (q - 1.0))
        }
        GapKind::Rigidity { delta } => {
            if !delta.is_finite() || delta > 3.0 * nf / 8.0 {
                return Err(Error::domain(format!(
                    "rigidity gap needs delta <= 3n/8 = {} , got {delta}",
                    3.0 * nf / 8.0
                )));
            }
            if delta < -nf {
                return Err(Error::domain(format!(
                    "rigidity gap needs n + delta >= 0 (S <= n + delta with S >= 0), got delta = {delta}"
                )));
            }
            let num = 3.0 * (4.0 * nf * nf - 3.0 * nf + 1.0);
            let den = 3.0 * (4.0 * nf * nf - 4.0 * nf + 1.0) + 8.0 * delta;
            Ok(num / den)
        }
        GapKind::SRatio { s_min, s_max } => {
            if !(s_min > 0.0 && s_min <= s_max && s_max.is_finite()) {
                return Err(Error::domain(format!(
                    "s-ratio gap needs 0 < S_min <= S_max, got S_min = {s_min}, S_max = {s_max}"
                )));
            }
            let q = 2.0 * nf * s_max;
            Ok(q / (q - s_min))
        }
    }
}

/// Integral statistics of `S = |A|^2` over a hypersurface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SStats {
    pub s_min: f64,
    pub s_max: f64,
    pub int_s: f64,
    pub int_s2: f64,
    pub vol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaConstants {
    pub theta1: f64,
    pub theta2: f64,
}

impl ThetaConstants {
    pub fn value(&self) -> f64 {
        self.theta1.max(self.theta2)
    }
}

/// Both branches of `C(n, S) = max{theta_1, theta_2}`.
pub fn theta_constants(n: i64, s: &SStats) -> Result<ThetaConstants> {
    if n < 1 {
        return Err(Error::domain(format!("dimension must be >= 1, got {n}")));
    }
    if s.int_s == 0.0 && s.s_max == 0.0 {
        return Err(Error::domain(
            "S vanishes identically: the hypotheses require a non-totally-geodesic hypersurface",
        ));
    }
    if !(s.s_max > 0.0 && s.vol > 0.0 && s.int_s2 > 0.0) {
        return Err(Error::domain(format!(
            "C(n,S) needs S_max > 0, vol > 0, int S^2 > 0; got {s:?}"
        )));
    }
    let nf = n as f64;
    let theta1 = s.int_s / (2.0 * nf * s.s_max * s.vol);
    let theta2 = nf / (4.0 * nf * nf - 3.0 * nf + 1.0) * s.int_s * s.int_s / (s.vol * s.int_s2);
    Ok(ThetaConstants { theta1, theta2 })
}

/// `C(n, S)`.
pub fn c_n_s(n: i64, s: &SStats) -> Result<f64> {
    theta_constants(n, s).map(|t| t.value())
}

/// `(2/pi) sqrt((n+1)/n) (n/(n-1))^{(n-1)/2}`, the final lower bound in the
/// chain showing `(1+p(n)) Vol(S^n) > Vol(M_{1,n-1})`.
pub fn clifford_chain_bound(n: i64) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain(format!("need n >= 2, got {n}")));
    }
    let nf = n as f64;
    Ok(2.0 / PI * ((nf + 1.0) / nf).sqrt() * (0.5 * (nf - 1.0) * (nf / (nf - 1.0)).ln()).exp())
}

/// `(1/pi) sqrt((n+1)/n) (n/(n-1))^{(n-1)/2} (1 + 1/p(n))`, which equals
/// `(1+p(n)) Vol(S^n) / Vol(M_{1,n-1})`.
pub fn clifford_ratio_closed_form(n: i64) -> Result<f64> {
    let p = gap_p(n)?;
    Ok(0.5 * clifford_chain_bound(n)? * (1.0 + 1.0 / p))
}

/// Everything closed-form for one intrinsic dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapConstants {
    pub n: i64,
    pub vol_sn: f64,
    pub vol_bn: f64,
    pub p_n: f64,
    pub hyp_gaps: BTreeMap<String, f64>,
}

impl GapConstants {
    pub fn new(n: i64) -> Result<Self> {
        if n < 1 {
            return Err(Error::domain(format!("dimension must be >= 1, got {n}")));
        }
        let mut hyp_gaps = BTreeMap::new();
        if n >= 2 {
            for kind in [
                GapKind::IntegralEinstein,
                GapKind::Antipodal,
                GapKind::Pinched { delta: 0.0 },
                GapKind::Rigidity { delta: 0.0 },
            ] {
                hyp_gaps.insert(kind.name().to_string(), hyp_gap(kind, n)?);
            }
        }
        Ok(Self {
            n,
            vol_sn: sphere_volume(n)?,
            vol_bn: ball_volume(n)?,
            p_n: gap_p(n)?,
            hyp_gaps,
        })
    }

    pub fn main_bound(&self, m: i64) -> Result<f64> {
        main_bound(self.n, m)
    }

    /// `(1 + p(n)) Vol(S^n)`, the non-embedded gap.
    pub fn non_embedded_bound(&self) -> f64 {
        (1.0 + self.p_n) * self.vol_sn
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn log_gamma_special_values() {
        assert_eq!(log_gamma(1.0).unwrap(), 0.0);
        assert_eq!(log_gamma(2.0).unwrap(), 0.0);
        assert_relative_eq!(log_gamma(0.5).unwrap(), PI.sqrt().ln(), max_relative = 1e-14);
        // Gamma(2.5) = 1.5 * 0.5 * Gamma(0.5)
        assert_relative_eq!(
            log_gamma(2.5).unwrap(),
            (0.75 * PI.sqrt()).ln(),
            max_relative = 1e-14
        );
        assert!((log_gamma(2.5).unwrap() - 0.284_682_870_5).abs() < 1e-10);
    }

    #[test]
    fn log_gamma_matches_high_precision_reference() {
        // Reference values from a 40-digit evaluation.
        let table = [
            (0.5, 0.572_364_942_924_700_087_07),
            (0.75, 0.203_280_951_431_295_371_48),
            (1.25, -0.098_271_836_421_813_161_464),
            (1.5, -0.120_782_237_635_245_222_35),
            (2.5, 0.284_682_870_472_919_159_63),
            (3.7, 1.428_072_326_665_387_921_9),
            (7.25, 7.052_185_450_738_539_444_9),
            (10.0, 12.801_827_480_081_469_611),
            (33.3, 82.603_723_581_652_952_928),
            (123.456, 469.605_547_129_929_468_73),
            (1000.5, 5_908.674_175_848_677_488_7),
            (54_321.125, 537_919.559_540_686_749_42),
            (1e6, 12_815_504.569_147_611_66),
            (9_999_999.5, 151_180_941.310_426_125_96),
        ];
        for (x, want) in table {
            let got = log_gamma(x).unwrap();
            assert!(rel(got, want) <= 1e-13, "x = {x}: {got} vs {want}");
        }
    }

    #[test]
    fn log_gamma_rejects_bad_input() {
        for x in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(log_gamma(x), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn sphere_and_ball_volumes() {
        assert_relative_eq!(sphere_volume(0).unwrap(), 2.0, max_relative = 1e-14);
        assert_relative_eq!(sphere_volume(1).unwrap(), 2.0 * PI, max_relative = 1e-13);
        assert_relative_eq!(sphere_volume(2).unwrap(), 4.0 * PI, max_relative = 1e-13);
        assert_relative_eq!(sphere_volume(3).unwrap(), 2.0 * PI * PI, max_relative = 1e-13);
        assert_relative_eq!(ball_volume(1).unwrap(), 2.0, max_relative = 1e-14);
        assert_relative_eq!(ball_volume(2).unwrap(), PI, max_relative = 1e-14);
        assert_relative_eq!(
            ball_volume(5).unwrap(),
            sphere_volume(4).unwrap() / 5.0,
            max_relative = 1e-12
        );
        assert!(sphere_volume(-1).is_err());
        assert!(ball_volume(0).is_err());
    }

    #[test]
    fn sphere_volume_closed_form_agrees_with_recurrence() {
        // Vol(S^{k+2}) = 2 pi / (k+1) Vol(S^k), an independent route.
        let mut even = 2.0;
        let mut odd = 2.0 * PI;
        for k in (0..60).step_by(2) {
            assert!(rel(sphere_volume(k).unwrap(), even) < 1e-12, "k = {k}");
            assert!(rel(sphere_volume(k + 1).unwrap(), odd) < 1e-12, "k = {}", k + 1);
            even *= 2.0 * PI / (k as f64 + 1.0);
            odd *= 2.0 * PI / (k as f64 + 2.0);
        }
    }

    #[test]
    fn gap_p_values() {
        assert_relative_eq!(gap_p(2).unwrap(), 3f64.sqrt() / 2.0, max_relative = 1e-13);
        assert_relative_eq!(gap_p(1).unwrap(), 2.0 * 2f64.sqrt() / PI, max_relative = 1e-13);
        for n in 2..=200 {
            let p = gap_p(n).unwrap();
            assert!(p < 1.0, "n = {n}");
            assert!(rel(p, gap_p_from_volumes(n).unwrap()) < 1e-10);
        }
        let limit = 1.0 + (2.0 / PI).sqrt();
        assert!((1.0 + gap_p(1_000_000).unwrap() - limit).abs() < 1e-3);
        assert!((limit - 1.797_884_6).abs() < 1e-7);
    }

    #[test]
    fn clifford_volumes() {
        assert_relative_eq!(clifford_volume(1, 2).unwrap(), 2.0 * PI * PI, max_relative = 1e-13);
        assert_relative_eq!(
            clifford_volume(1, 3).unwrap(),
            16.0 * PI * PI / (3.0 * 3f64.sqrt()),
            max_relative = 1e-13
        );
        for k in 1..6 {
            assert_relative_eq!(
                clifford_volume(k, 2 * k + 3).unwrap(),
                clifford_volume(k + 3, 2 * k + 3).unwrap(),
                max_relative = 1e-13
            );
        }
        assert!(clifford_volume(0, 3).is_err());
        assert!(clifford_volume(3, 3).is_err());
    }

    #[test]
    fn main_bound_values() {
        assert_relative_eq!(
            main_bound(2, 1).unwrap(),
            2.0 * PI + 3f64.sqrt() * PI,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            main_bound(1, 2).unwrap(),
            2.0 * (PI + 2.0 * 2f64.sqrt()),
            max_relative = 1e-13
        );
        assert_relative_eq!(
            main_bound(2, 2).unwrap(),
            2.0 * main_bound(2, 1).unwrap(),
            max_relative = 1e-15
        );
        assert_relative_eq!(antipodal_bound(2, 3).unwrap(), 12.0 * PI, max_relative = 1e-13);
        for n in 1..=200 {
            assert!(main_bound(n, 1).unwrap() < sphere_volume(n).unwrap());
        }
        assert!(main_bound(2, 0).is_err());
    }

    #[test]
    fn hypersurface_gaps() {
        assert_relative_eq!(hyp_gap(GapKind::IntegralEinstein, 2).unwrap(), 4.0 / 3.0);
        assert_relative_eq!(hyp_gap(GapKind::Antipodal, 2).unwrap(), 4.0 / 3.0);
        assert_relative_eq!(
            hyp_gap(GapKind::Rigidity { delta: 0.0 }, 3).unwrap(),
            1.12,
            max_relative = 1e-14
        );
        assert_relative_eq!(hyp_gap(GapKind::Pinched { delta: 0.0 }, 2).unwrap(), 4.0 / 3.0);
        assert_relative_eq!(
            hyp_gap(GapKind::SRatio { s_min: 2.0, s_max: 2.0 }, 2).unwrap(),
            4.0 / 3.0
        );
        for n in 2..=50 {
            let nf = n as f64;
            let d = 3.0 * nf / 8.0;
            let g = hyp_gap(GapKind::Rigidity { delta: d }, n).unwrap();
            let want = 3.0 * (4.0 * nf * nf - 3.0 * nf + 1.0)
                / (3.0 * (4.0 * nf * nf - 4.0 * nf + 1.0) + 3.0 * nf);
            assert_relative_eq!(g, want, max_relative = 1e-14);
            // The upper end of the range collapses the ratio to exactly one.
            assert_relative_eq!(g, 1.0, max_relative = 1e-14);
            let inside = hyp_gap(GapKind::Rigidity { delta: d - 0.01 }, n).unwrap();
            assert!(inside.is_finite() && inside > 1.0);
        }
        assert!(hyp_gap(GapKind::Rigidity { delta: 1.2 }, 3).is_err());
        assert!(hyp_gap(GapKind::Pinched { delta: -0.1 }, 3).is_err());
        assert!(hyp_gap(GapKind::SRatio { s_min: 0.0, s_max: 1.0 }, 3).is_err());
        assert!(hyp_gap(GapKind::IntegralEinstein, 1).is_err());
    }

    #[test]
    fn theta_constants_constant_s() {
        for s in [0.3, 2.0, 17.0] {
            let vol = 2.0 * PI * PI;
            let stats = SStats { s_min: s, s_max: s, int_s: s * vol, int_s2: s * s * vol, vol };
            let t = theta_constants(2, &stats).unwrap();
            assert_relative_eq!(t.theta1, 0.25, max_relative = 1e-14);
            assert_relative_eq!(t.theta2, 2.0 / 11.0, max_relative = 1e-14);
            assert_relative_eq!(c_n_s(2, &stats).unwrap(), 0.25, max_relative = 1e-14);
        }
        let zero = SStats { s_min: 0.0, s_max: 0.0, int_s: 0.0, int_s2: 0.0, vol: 1.0 };
        assert!(theta_constants(2, &zero).is_err());
    }

    #[test]
    fn clifford_ratio_identity_and_chain() {
        for n in 2..=100 {
            let direct = (1.0 + gap_p(n).unwrap()) * sphere_volume(n).unwrap()
                / clifford_volume(1, n).unwrap();
            assert!(rel(clifford_ratio_closed_form(n).unwrap(), direct) < 1e-11, "n = {n}");
            let chain = clifford_chain_bound(n).unwrap();
            assert!(chain > 1.0 && chain <= direct);
        }
    }

    #[test]
    fn gap_constants_bundle() {
        let c = GapConstants::new(2).unwrap();
        assert_relative_eq!(c.vol_sn, 4.0 * PI, max_relative = 1e-13);
        assert_relative_eq!(c.vol_bn, PI, max_relative = 1e-13);
        assert_eq!(c.hyp_gaps.len(), 4);
        assert!(GapConstants::new(1).unwrap().hyp_gaps.is_empty());
    }
}
