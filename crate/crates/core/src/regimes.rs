//! Asymptotic parameters `(k, κ, γ^(p))` of a scaling family and the
//! effective model they select.
//!
//! `k_ε = l_ε r_ε² |S| / ε²`, `κ_ε = r_ε^p k_ε`, and `γ_ε = r^{2−p}/ε²`
//! (`1/(ε²|log r|)` when `p = 2`). Limits are exact for families given as
//! [`AsymptoticLaw`]s and detected by ratio tests for tabulated ones.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

const EXPONENT_EPS: f64 = 1e-12;

/// `X(ε) = C · ε^a · |log ε|^b · exp(Σ cⱼ ε^{−dⱼ})` with `C > 0`, `dⱼ > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticLaw {
    pub coef: f64,
    #[serde(default)]
    pub eps_pow: f64,
    #[serde(default)]
    pub log_pow: f64,
    /// Pairs `(c, d)` of `exp(c ε^{−d})`.
    #[serde(default)]
    pub exp_terms: Vec<(f64, f64)>,
}

impl AsymptoticLaw {
    pub fn constant(c: f64) -> Self {
        Self { coef: c, eps_pow: 0.0, log_pow: 0.0, exp_terms: Vec::new() }
    }

    pub fn power(coef: f64, eps_pow: f64) -> Self {
        Self { coef, eps_pow, log_pow: 0.0, exp_terms: Vec::new() }
    }

    /// `exp(c ε^{−d})`.
    pub fn exponential(c: f64, d: f64) -> Self {
        Self { coef: 1.0, eps_pow: 0.0, log_pow: 0.0, exp_terms: vec![(c, d)] }
    }

    pub fn mul(&self, o: &AsymptoticLaw) -> Self {
        let mut exp_terms = self.exp_terms.clone();
        exp_terms.extend_from_slice(&o.exp_terms);
        Self {
            coef: self.coef * o.coef,
            eps_pow: self.eps_pow + o.eps_pow,
            log_pow: self.log_pow + o.log_pow,
            exp_terms,
        }
        .simplified()
    }

    pub fn powf(&self, t: f64) -> Self {
        Self {
            coef: self.coef.powf(t),
            eps_pow: self.eps_pow * t,
            log_pow: self.log_pow * t,
            exp_terms: self.exp_terms.iter().map(|&(c, d)| (c * t, d)).collect(),
        }
        .simplified()
    }

    /// Merges equal decay orders and drops exponents lost to rounding.
    fn simplified(mut self) -> Self {
        let clean = |x: f64| if x.abs() < EXPONENT_EPS { 0.0 } else { x };
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (c, d) in self.exp_terms.drain(..) {
            match merged.iter_mut().find(|m| (m.1 - d).abs() < EXPONENT_EPS) {
                Some(m) => m.0 += c,
                None => merged.push((c, d)),
            }
        }
        merged.retain(|m| clean(m.0) != 0.0);
        self.eps_pow = clean(self.eps_pow);
        self.log_pow = clean(self.log_pow);
        merged.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
        self.exp_terms = merged;
        self
    }

    /// `log X(ε)`.
    pub fn ln_at(&self, eps: f64) -> f64 {
        let le = eps.ln();
        let mut s = self.coef.ln() + self.eps_pow * le;
        if self.log_pow != 0.0 {
            s += self.log_pow * le.abs().ln();
        }
        s + self.exp_terms.iter().map(|&(c, d)| c * eps.powf(-d)).sum::<f64>()
    }

    pub fn at(&self, eps: f64) -> f64 {
        self.ln_at(eps).exp()
    }

    /// `lim_{ε→0} X(ε)` in `[0, +∞]`.
    pub fn limit(&self) -> f64 {
        let s = self.simplified_ref();
        if let Some(&(c, _)) = s.exp_terms.first() {
            return if c > 0.0 { f64::INFINITY } else { 0.0 };
        }
        // log ε → −∞
        if s.eps_pow != 0.0 {
            return if s.eps_pow < 0.0 { f64::INFINITY } else { 0.0 };
        }
        if s.log_pow != 0.0 {
            return if s.log_pow > 0.0 { f64::INFINITY } else { 0.0 };
        }
        s.coef
    }

    fn simplified_ref(&self) -> Self {
        self.clone().simplified()
    }

    /// A law asymptotically equivalent to `|log X(ε)|`, for `X → 0` or `∞`.
    pub fn abs_log(&self) -> Result<Self> {
        let s = self.simplified_ref();
        if let Some(&(c, d)) = s.exp_terms.first() {
            return Ok(AsymptoticLaw::power(c.abs(), -d));
        }
        if s.eps_pow != 0.0 {
            return Ok(Self { coef: s.eps_pow.abs(), eps_pow: 0.0, log_pow: 1.0, exp_terms: Vec::new() });
        }
        if s.log_pow != 0.0 {
            // log |log ε|^b = b log log(1/ε)
            return Err(Error::Unsupported("|log X| of a pure log-power law".into()));
        }
        Err(Error::InvalidParameter("|log X| of a law with a finite positive limit".into()))
    }
}

/// `l_ε = law(ε) · r_ε^{r_pow}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StiffnessLaw {
    pub law: AsymptoticLaw,
    #[serde(default)]
    pub r_pow: f64,
}

impl StiffnessLaw {
    pub fn resolve(&self, r: &AsymptoticLaw) -> AsymptoticLaw {
        self.law.mul(&r.powf(self.r_pow))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalingFamily {
    Symbolic { p: f64, area: f64, r: AsymptoticLaw, l: StiffnessLaw },
    /// Samples `(ε, r_ε, l_ε)`; the ladder should decrease in `ε`.
    Tabulated { p: f64, area: f64, samples: Vec<[f64; 3]> },
}

impl ScalingFamily {
    pub fn symbolic(p: f64, area: f64, r: AsymptoticLaw, l: StiffnessLaw) -> Self {
        ScalingFamily::Symbolic { p, area, r, l }
    }

    /// The family with `r` chosen so that `γ_ε^{(p)}(r_ε) = γ` for every ε.
    pub fn gamma_normalized(p: f64, area: f64, gamma: f64, l: StiffnessLaw) -> Result<Self> {
        check_gamma_args(p, gamma)?;
        let r = if p == 2.0 {
            AsymptoticLaw::exponential(-1.0 / gamma, 2.0)
        } else {
            AsymptoticLaw::power(gamma.powf(1.0 / (2.0 - p)), 2.0 / (2.0 - p))
        };
        Ok(ScalingFamily::Symbolic { p, area, r, l })
    }

    pub fn p(&self) -> f64 {
        match self {
            ScalingFamily::Symbolic { p, .. } | ScalingFamily::Tabulated { p, .. } => *p,
        }
    }

    /// `(r_ε, l_ε)` at one ε (symbolic families only).
    pub fn at(&self, eps: f64) -> Result<(f64, f64)> {
        match self {
            ScalingFamily::Symbolic { r, l, .. } => Ok((r.at(eps), l.resolve(r).at(eps))),
            ScalingFamily::Tabulated { samples, .. } => samples
                .iter()
                .find(|s| (s[0] - eps).abs() <= 1e-12 * eps)
                .map(|s| (s[1], s[2]))
                .ok_or_else(|| Error::InvalidParameter(format!("ε = {eps} is not a sample of the tabulated family"))),
        }
    }
}

/// The set `𝒟` of admissible limit fiber kinematics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitDomain {
    /// `k = 0`: fibers decouple.
    Decoupled,
    /// `0 < k < ∞`: `v₃, θ ∈ W^{1,p}(0, L)` vanishing at `x₃ = 0`.
    FiniteK,
    /// `(k, κ) = (∞, 0)`: `v₃ = θ = 0`.
    Inextensible,
    /// `0 < κ < ∞`: clamped `(v, θ, w, δ)` with `v₃ = θ = 0`.
    FiniteKappa,
    /// `k = κ = ∞`: `𝒟 = {0}`.
    Rigid,
}

impl LimitDomain {
    /// Pure function of `(k, κ)`; inconsistent pairs are rejected.
    pub fn from_limits(k: f64, kappa: f64) -> Result<Self> {
        let cls = |x: f64| -> u8 {
            if x == 0.0 {
                0
            } else if x.is_finite() {
                1
            } else {
                2
            }
        };
        match (cls(k), cls(kappa)) {
            (0, 0) => Ok(LimitDomain::Decoupled),
            (1, 0) => Ok(LimitDomain::FiniteK),
            (2, 0) => Ok(LimitDomain::Inextensible),
            (2, 1) => Ok(LimitDomain::FiniteKappa),
            (2, 2) => Ok(LimitDomain::Rigid),
            _ => Err(Error::Inconsistent(format!("κ = lim r^p k_ε = {kappa} is incompatible with k = {k} as r → 0"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LimitDomain::Decoupled => "decoupled (k = 0)",
            LimitDomain::FiniteK => "v3 = theta = 0 at x3 = 0",
            LimitDomain::Inextensible => "v3 = theta = 0",
            LimitDomain::FiniteKappa => "clamped (v, theta, w, delta)",
            LimitDomain::Rigid => "{0}",
        }
    }
}

/// Branch of the capacity density `c^f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityBranch {
    /// `γ = 0`: no coupling term.
    Vanishing,
    /// `1 < p < 2`, finite `γ`: `γ cap^{f^{∞,p}}(a, ζe₃; S, ℝ²)`.
    PlaneCapacity,
    /// `p = 2`, finite `γ`: quadratic in `a`, `θ = 0` forced.
    TranslationOnly,
    /// `γ = ∞` or `p > 2`: forces `u = v`, `θ = 0`.
    Indicator,
}

impl DensityBranch {
    pub fn select(p: f64, gamma: f64) -> Self {
        if gamma == 0.0 {
            DensityBranch::Vanishing
        } else if p > 2.0 || gamma.is_infinite() {
            DensityBranch::Indicator
        } else if p == 2.0 {
            DensityBranch::TranslationOnly
        } else {
            DensityBranch::PlaneCapacity
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DensityBranch::Vanishing => "c^f = 0",
            DensityBranch::PlaneCapacity => "gamma cap(a, zeta e3; S, R^2)",
            DensityBranch::TranslationOnly => "c0(a), theta = 0",
            DensityBranch::Indicator => "u = v, theta = 0",
        }
    }
}

fn ser_extended<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegimeReport {
    pub p: f64,
    #[serde(serialize_with = "ser_extended")]
    pub k: f64,
    #[serde(serialize_with = "ser_extended")]
    pub kappa: f64,
    #[serde(serialize_with = "ser_extended")]
    pub gamma_p: f64,
    pub domain: LimitDomain,
    pub domain_label: &'static str,
    pub branch: DensityBranch,
    pub branch_label: &'static str,
    /// `k = 0` or `γ = 0`: the fibers do not change the limit.
    pub degenerate: bool,
}

impl RegimeReport {
    pub fn from_limits(p: f64, k: f64, kappa: f64, gamma_p: f64) -> Result<Self> {
        let domain = LimitDomain::from_limits(k, kappa)?;
        let branch = DensityBranch::select(p, gamma_p);
        Ok(Self {
            p,
            k,
            kappa,
            gamma_p,
            domain,
            domain_label: domain.label(),
            branch,
            branch_label: branch.label(),
            degenerate: k == 0.0 || gamma_p == 0.0,
        })
    }
}

/// Ratio band of the three-point limit test.
pub const RATIO_TOLERANCE: f64 = 0.1;

/// Limit of a positive sequence sampled along a decreasing ε ladder.
pub fn detect_limit(values: &[f64]) -> Result<f64> {
    if values.len() < 3 {
        return Err(Error::InvalidParameter("limit detection needs at least three samples".into()));
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter("tabulated family produced a negative or non-finite value".into()));
    }
    let n = values.len();
    let (x0, x1, x2) = (values[n - 3], values[n - 2], values[n - 1]);
    if x2 == 0.0 {
        return Ok(0.0);
    }
    if x0 == 0.0 || x1 == 0.0 {
        return Err(Error::IndeterminateRegime("sequence returns from zero".into()));
    }
    let (q1, q2) = (x1 / x0, x2 / x1);
    let near = |q: f64| (q - 1.0).abs() <= RATIO_TOLERANCE;
    if near(q1) && near(q2) {
        Ok(x2)
    } else if q1 < 1.0 - RATIO_TOLERANCE && q2 < 1.0 - RATIO_TOLERANCE {
        Ok(0.0)
    } else if q1 > 1.0 + RATIO_TOLERANCE && q2 > 1.0 + RATIO_TOLERANCE {
        Ok(f64::INFINITY)
    } else {
        Err(Error::IndeterminateRegime(format!("no consistent trend in the last samples {x0:e}, {x1:e}, {x2:e}")))
    }
}

fn gamma_at(p: f64, eps: f64, r: f64) -> f64 {
    if p == 2.0 {
        1.0 / (eps * eps * r.ln().abs())
    } else {
        r.powf(2.0 - p) / (eps * eps)
    }
}

pub fn classify(fam: &ScalingFamily) -> Result<RegimeReport> {
    let p = fam.p();
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("exponent must exceed 1, got {p}")));
    }
    match fam {
        ScalingFamily::Symbolic { area, r, l, .. } => {
            if *area <= 0.0 {
                return Err(Error::InvalidParameter("cross-section area must be positive".into()));
            }
            if r.mul(&AsymptoticLaw::power(1.0, -1.0)).limit() != 0.0 {
                return Err(Error::InvalidParameter("the family violates r_ε ≪ ε".into()));
            }
            let l = l.resolve(r);
            let k = l.mul(&r.powf(2.0)).mul(&AsymptoticLaw::power(*area, -2.0));
            let kappa = k.mul(&r.powf(p));
            let gamma = if p == 2.0 {
                r.abs_log()?.powf(-1.0).mul(&AsymptoticLaw::power(1.0, -2.0))
            } else {
                r.powf(2.0 - p).mul(&AsymptoticLaw::power(1.0, -2.0))
            };
            RegimeReport::from_limits(p, k.limit(), kappa.limit(), gamma.limit())
        }
        ScalingFamily::Tabulated { area, samples, .. } => {
            let mut s = samples.clone();
            s.sort_by(|a, b| b[0].partial_cmp(&a[0]).unwrap());
            if s.iter().any(|x| !(x[1] > 0.0 && x[1] < x[0])) {
                return Err(Error::InvalidParameter("tabulated family violates 0 < r_ε < ε".into()));
            }
            let k: Vec<f64> = s.iter().map(|x| x[2] * x[1] * x[1] * area / (x[0] * x[0])).collect();
            let kappa: Vec<f64> = s.iter().zip(&k).map(|(x, k)| x[1].powf(p) * k).collect();
            let gamma: Vec<f64> = s.iter().map(|x| gamma_at(p, x[0], x[1])).collect();
            RegimeReport::from_limits(p, detect_limit(&k)?, detect_limit(&kappa)?, detect_limit(&gamma)?)
        }
    }
}

/// Factor below which `x ≪ y` is accepted numerically (`x/y ≤` this).
pub const ADMISSIBLE_RATIO: f64 = 0.1;

#[derive(Clone, Debug, Serialize)]
pub struct RadiusBand {
    pub eps: f64,
    pub r: f64,
    /// `r_ε`.
    pub lower: f64,
    /// `min(ε, r^{2−p}, 1/√|log r|)`.
    pub upper: f64,
    pub active_upper: &'static str,
    /// Geometric mean of the bounds.
    pub default_r: f64,
}

impl RadiusBand {
    /// `(lower/R, R/upper)`; both below [`ADMISSIBLE_RATIO`] means admissible.
    pub fn ratios(&self, big_r: f64) -> (f64, f64) {
        (self.lower / big_r, big_r / self.upper)
    }

    pub fn admits(&self, big_r: f64) -> bool {
        let (a, b) = self.ratios(big_r);
        a <= ADMISSIBLE_RATIO && b <= ADMISSIBLE_RATIO
    }
}

/// The band `r_ε ≪ R_ε ≪ min(ε, r_ε^{2−p})` (and `≪ 1/√|log r_ε|` at `p = 2`).
pub fn admissible_r(fam: &ScalingFamily, eps: f64) -> Result<RadiusBand> {
    let p = fam.p();
    let (r, _) = fam.at(eps)?;
    let mut bounds = vec![(eps, "eps")];
    if p != 2.0 {
        bounds.push((r.powf(2.0 - p), "r^(2-p)"));
    } else {
        bounds.push((1.0 / r.ln().abs().sqrt(), "1/sqrt|log r|"));
    }
    let (upper, active_upper) = bounds.into_iter().fold((f64::INFINITY, ""), |acc, b| if b.0 < acc.0 { b } else { acc });
    if upper <= r {
        return Err(Error::InvalidParameter(format!("empty radius band at ε = {eps}: r = {r:e} ≥ {upper:e}")));
    }
    Ok(RadiusBand { eps, r, lower: r, upper, active_upper, default_r: (r * upper).sqrt() })
}

fn check_gamma_args(p: f64, gamma: f64) -> Result<()> {
    if p > 2.0 {
        return Err(Error::Unsupported("γ^(p) is infinite for every family when p > 2".into()));
    }
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("exponent must exceed 1, got {p}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("target γ must be positive and finite, got {gamma}")));
    }
    Ok(())
}

/// `ε_r` with `γ_{ε_r}^{(p)}(r) = γ`.
pub fn gamma_normalized_epsilon(r: f64, p: f64, gamma: f64) -> Result<f64> {
    check_gamma_args(p, gamma)?;
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParameter(format!("r must lie in (0, 1), got {r}")));
    }
    Ok(if p == 2.0 { 1.0 / (gamma * r.ln().abs()).sqrt() } else { r.powf((2.0 - p) / 2.0) / gamma.sqrt() })
}

/// `γ_ε^{(p)}(r)`.
pub fn gamma_epsilon(p: f64, eps: f64, r: f64) -> f64 {
    gamma_at(p, eps, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r_exp() -> AsymptoticLaw {
        AsymptoticLaw::exponential(-1.0, 2.0)
    }

    #[test]
    fn fibre_rescaling_family() {
        // r = exp(−1/ε²), l = ε²/r⁵
        let l = StiffnessLaw { law: AsymptoticLaw::power(1.0, 2.0), r_pow: -5.0 };
        let rep = classify(&ScalingFamily::symbolic(2.0, std::f64::consts::PI, r_exp(), l)).unwrap();
        assert_eq!(rep.kappa, f64::INFINITY);
        assert_eq!(rep.gamma_p, 1.0);
        assert_eq!(rep.domain, LimitDomain::Rigid);
    }

    #[test]
    fn unit_stiffness_family() {
        let area = 2.5;
        let l = StiffnessLaw { law: AsymptoticLaw::power(1.0 / area, 2.0), r_pow: -2.0 };
        let rep = classify(&ScalingFamily::symbolic(2.0, area, AsymptoticLaw::power(1.0, 3.0), l)).unwrap();
        assert!((rep.k - 1.0).abs() < 1e-14);
        assert_eq!(rep.kappa, 0.0);
        assert_eq!(rep.domain, LimitDomain::FiniteK);
    }

    #[test]
    fn large_exponent_is_always_indicator() {
        let l = StiffnessLaw { law: AsymptoticLaw::constant(1.0), r_pow: 0.0 };
        let rep = classify(&ScalingFamily::symbolic(3.0, 1.0, AsymptoticLaw::power(1.0, 1.5), l)).unwrap();
        assert_eq!(rep.gamma_p, f64::INFINITY);
        assert_eq!(rep.branch, DensityBranch::Indicator);
    }

    #[test]
    fn gamma_normalized_examples() {
        let e = gamma_normalized_epsilon((-100f64).exp(), 2.0, 1.0).unwrap();
        assert!((e - 0.1).abs() < 1e-14);
        let e = gamma_normalized_epsilon(1e-4, 1.5, 4.0).unwrap();
        assert!((e - 0.05).abs() < 1e-14);
        assert!(matches!(gamma_normalized_epsilon(0.1, 3.0, 1.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn radius_band_examples() {
        let l = StiffnessLaw { law: AsymptoticLaw::constant(1.0), r_pow: 0.0 };
        // r = 2^{−1/ε²}
        let fam = ScalingFamily::symbolic(2.0, 1.0, AsymptoticLaw::exponential(-std::f64::consts::LN_2, 2.0), l.clone());
        let mut prev = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05] {
            let b = admissible_r(&fam, eps).unwrap();
            let (lo, hi) = b.ratios(b.default_r);
            assert!(lo < prev && hi < prev);
            prev = lo.max(hi);
            assert!(!b.admits(eps));
        }
        let fam = ScalingFamily::symbolic(1.5, 1.0, AsymptoticLaw::power(1.0, 3.0), l);
        assert_eq!(admissible_r(&fam, 0.1).unwrap().active_upper, "r^(2-p)");
    }

    #[test]
    fn tabulated_detection() {
        let samples: Vec<[f64; 3]> = [0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&e: &f64| {
                let r = e * e * e;
                [e, r, e * e / (r * r)]
            })
            .collect();
        let rep = classify(&ScalingFamily::Tabulated { p: 2.0, area: 1.0, samples }).unwrap();
        assert!((rep.k - 1.0).abs() < 1e-12);
        assert_eq!(rep.domain, LimitDomain::FiniteK);
        assert!(matches!(detect_limit(&[1.0, 3.0, 1.0]), Err(Error::IndeterminateRegime(_))));
    }

    #[test]
    fn inconsistent_pairs_rejected() {
        assert!(LimitDomain::from_limits(1.0, 1.0).is_err());
        assert!(LimitDomain::from_limits(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn report_serializes_infinity() {
        let rep = RegimeReport::from_limits(3.0, f64::INFINITY, f64::INFINITY, f64::INFINITY).unwrap();
        let s = serde_json::to_string(&rep).unwrap();
        assert!(s.contains("\"k\":\"inf\""), "{s}");
    }

    proptest! {
        #[test]
        fn stiffness_scaling(c in 0.1f64..10.0, a in 2.5f64..4.0, e in -6.0f64..0.0) {
            let r = AsymptoticLaw::power(1.0, a);
            let l = StiffnessLaw { law: AsymptoticLaw::power(1.0, e), r_pow: -2.0 };
            let lc = StiffnessLaw { law: AsymptoticLaw::power(c, e), r_pow: -2.0 };
            let r1 = classify(&ScalingFamily::symbolic(1.5, 1.0, r.clone(), l)).unwrap();
            let r2 = classify(&ScalingFamily::symbolic(1.5, 1.0, r, lc)).unwrap();
            let same = |x: f64, y: f64| (x == y) || ((x * c - y).abs() <= 1e-12 * y.abs());
            prop_assert!(same(r1.k, r2.k));
            prop_assert!(same(r1.kappa, r2.kappa));
            prop_assert_eq!(r1.gamma_p, r2.gamma_p);
        }

        #[test]
        fn gamma_round_trip(p in 1.1f64..2.0, g in 0.1f64..10.0, use_two in any::<bool>()) {
            let p = if use_two { 2.0 } else { p };
            let l = StiffnessLaw { law: AsymptoticLaw::constant(1.0), r_pow: 0.0 };
            let fam = ScalingFamily::gamma_normalized(p, 1.0, g, l).unwrap();
            let rep = classify(&fam).unwrap();
            prop_assert!((rep.gamma_p - g).abs() <= 1e-12 * g);
            if let ScalingFamily::Symbolic { r, .. } = &fam {
                let eps = 0.2;
                prop_assert!((gamma_epsilon(p, eps, r.at(eps)) - g).abs() <= 1e-9 * g);
            }
        }
    }
}
