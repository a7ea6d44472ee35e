//! Convex energy densities on symmetric 3×3 matrices.
//!
//! Matrices are stored by their six independent entries in the order
//! `(11, 22, 33, 12, 13, 23)`. Derivatives come in two flavors:
//!
//! * matrix derivatives ([`EnergyDensity::gradient`], [`EnergyDensity::hessian_action`])
//!   are Fréchet derivatives with respect to the Frobenius product `M:N`;
//! * coordinate derivatives ([`EnergyDensity::coord_gradient`], [`EnergyDensity::coord_hessian`])
//!   differentiate with respect to the six stored entries. An off-diagonal
//!   coordinate appears twice in the matrix, so `∂f/∂x_k = w_k G_k` with
//!   `w = (1, 1, 1, 2, 2, 2)`.
//!
//! Quadratic tables use engineering Voigt notation: with
//! `γ = (M11, M22, M33, 2M12, 2M13, 2M23)` the density is `f(M) = ½ γᵀ T γ`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Shift used to regularize `|M|^p` when `p ≠ 2`.
pub const REGULARIZATION_DELTA: f64 = 1e-8;

const WEIGHTS: [f64; 6] = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0];

pub type Mat6 = [[f64; 6]; 6];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SymMat3 {
    pub m: [f64; 6],
}

impl SymMat3 {
    pub const ZERO: SymMat3 = SymMat3 { m: [0.0; 6] };

    pub fn new(m11: f64, m22: f64, m33: f64, m12: f64, m13: f64, m23: f64) -> Self {
        Self { m: [m11, m22, m33, m12, m13, m23] }
    }

    pub fn from_coords(m: [f64; 6]) -> Self {
        Self { m }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0)
    }

    pub fn from_full(a: [[f64; 3]; 3]) -> Self {
        Self::new(
            a[0][0],
            a[1][1],
            a[2][2],
            0.5 * (a[0][1] + a[1][0]),
            0.5 * (a[0][2] + a[2][0]),
            0.5 * (a[1][2] + a[2][1]),
        )
    }

    pub fn to_full(&self) -> [[f64; 3]; 3] {
        let m = &self.m;
        [[m[0], m[3], m[4]], [m[3], m[1], m[5]], [m[4], m[5], m[2]]]
    }

    pub fn trace(&self) -> f64 {
        self.m[0] + self.m[1] + self.m[2]
    }

    /// Frobenius product `M:N`.
    pub fn ddot(&self, other: &SymMat3) -> f64 {
        (0..6).map(|k| WEIGHTS[k] * self.m[k] * other.m[k]).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.ddot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, t: f64) -> SymMat3 {
        SymMat3 { m: self.m.map(|x| x * t) }
    }

    pub fn add(&self, o: &SymMat3) -> SymMat3 {
        SymMat3 { m: std::array::from_fn(|k| self.m[k] + o.m[k]) }
    }

    pub fn sub(&self, o: &SymMat3) -> SymMat3 {
        SymMat3 { m: std::array::from_fn(|k| self.m[k] - o.m[k]) }
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|x| x.is_finite())
    }
}

/// The planar symmetrized gradient `e_y(ψ)` of a field `ψ: ℝ² → ℝ³`.
///
/// `jac[i][α] = ∂ψ_i/∂y_α`. The value of `ψ` does not enter; it is accepted so
/// that callers can pass local field data as-is.
pub fn planar_sym_gradient(_value: [f64; 3], jac: [[f64; 2]; 3]) -> SymMat3 {
    SymMat3::new(
        jac[0][0],
        jac[1][1],
        0.0,
        0.5 * (jac[0][1] + jac[1][0]),
        0.5 * jac[2][0],
        0.5 * jac[2][1],
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum DensityKind {
    /// `λ/2 (tr M)² + μ M:M`.
    Isotropic { lambda: f64, mu: f64 },
    /// `c |M|^p`.
    PNorm { c: f64, p: f64 },
    /// `½ γᵀ T γ` in engineering Voigt notation.
    QuadraticForm { table: Mat6 },
    /// `Σ_{α,β≤2} M_αβ² + M13² + M33² + M13 M33 + M23²`.
    AnisoExample,
    /// `c |M|^p + b ((1 + |M|²)^{q/2} − 1)` with `1 ≤ q < p`: p-growth but not
    /// p-homogeneous, recession density `c |M|^p`.
    Blended { c: f64, p: f64, b: f64, q: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyDensity {
    pub kind: DensityKind,
    p: f64,
    /// Coordinate Hessian `Q` with `f = ½ xᵀ Q x` for quadratic kinds.
    #[serde(skip)]
    quad: Option<Mat6>,
    positive_definite: bool,
}

/// Engineering table of [`DensityKind::AnisoExample`].
pub fn aniso_example_table() -> Mat6 {
    let mut t = [[0.0; 6]; 6];
    t[0][0] = 2.0;
    t[1][1] = 2.0;
    t[2][2] = 2.0;
    t[3][3] = 1.0;
    t[4][4] = 0.5;
    t[5][5] = 0.5;
    t[2][4] = 0.5;
    t[4][2] = 0.5;
    t
}

impl EnergyDensity {
    pub fn isotropic(lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda.is_finite() && mu.is_finite() && lambda >= 0.0 && mu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "isotropic density needs λ ≥ 0, μ > 0 (got λ={lambda}, μ={mu})"
            )));
        }
        let mut q = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                q[i][j] = lambda;
            }
            q[i][i] += 2.0 * mu;
            q[i + 3][i + 3] = 4.0 * mu;
        }
        Ok(Self { kind: DensityKind::Isotropic { lambda, mu }, p: 2.0, quad: Some(q), positive_definite: true })
    }

    pub fn p_norm(c: f64, p: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParameter(format!("p_norm weight must be positive, got {c}")));
        }
        check_exponent(p)?;
        let quad = (p == 2.0).then(|| {
            let mut q = [[0.0; 6]; 6];
            for k in 0..6 {
                q[k][k] = 2.0 * c * WEIGHTS[k];
            }
            q
        });
        Ok(Self { kind: DensityKind::PNorm { c, p }, p, quad, positive_definite: true })
    }

    /// Quadratic density from an engineering Voigt table; rejected unless positive semi-definite.
    pub fn quadratic_form(table: Mat6) -> Result<Self> {
        let (q, pd) = quadratic_from_table(&table)?;
        Ok(Self { kind: DensityKind::QuadraticForm { table }, p: 2.0, quad: Some(q), positive_definite: pd })
    }

    /// Quadratic density from the 21 upper-triangle entries, row by row.
    pub fn quadratic_form_upper(entries: &[f64]) -> Result<Self> {
        if entries.len() != 21 {
            return Err(Error::InvalidParameter(format!(
                "quadratic table needs 21 upper-triangle entries, got {}",
                entries.len()
            )));
        }
        let mut t = [[0.0; 6]; 6];
        let mut k = 0;
        for i in 0..6 {
            for j in i..6 {
                t[i][j] = entries[k];
                t[j][i] = entries[k];
                k += 1;
            }
        }
        Self::quadratic_form(t)
    }

    pub fn aniso_example() -> Self {
        let (q, pd) = quadratic_from_table(&aniso_example_table()).expect("table is positive definite");
        Self { kind: DensityKind::AnisoExample, p: 2.0, quad: Some(q), positive_definite: pd }
    }

    pub fn blended(c: f64, p: f64, b: f64, q: f64) -> Result<Self> {
        check_exponent(p)?;
        if !(c > 0.0 && b >= 0.0 && c.is_finite() && b.is_finite()) {
            return Err(Error::InvalidParameter(format!("blended density needs c > 0, b ≥ 0 (got c={c}, b={b})")));
        }
        if !(q >= 1.0 && q < p) {
            return Err(Error::InvalidParameter(format!("blended density needs 1 ≤ q < p (got q={q}, p={p})")));
        }
        Ok(Self { kind: DensityKind::Blended { c, p, b, q }, p, quad: None, positive_definite: true })
    }

    pub fn exponent(&self) -> f64 {
        self.p
    }

    pub fn is_quadratic(&self) -> bool {
        self.quad.is_some()
    }

    pub fn is_strictly_convex(&self) -> bool {
        self.positive_definite
    }

    /// `f(tM) = t^p f(M)` for all `t > 0`.
    pub fn is_homogeneous(&self) -> bool {
        !matches!(self.kind, DensityKind::Blended { b, .. } if b > 0.0)
    }

    /// Coordinate Hessian of a quadratic density.
    pub fn quadratic_matrix(&self) -> Option<&Mat6> {
        self.quad.as_ref()
    }

    /// Engineering Voigt table of a quadratic density.
    pub fn voigt_table(&self) -> Option<Mat6> {
        self.quad.map(|q| {
            let mut t = [[0.0; 6]; 6];
            for i in 0..6 {
                for j in 0..6 {
                    t[i][j] = q[i][j] / (WEIGHTS[i] * WEIGHTS[j]);
                }
            }
            t
        })
    }

    pub fn eval(&self, m: &SymMat3) -> f64 {
        if let Some(q) = &self.quad {
            return 0.5 * quad_form(q, &m.m);
        }
        match self.kind {
            DensityKind::PNorm { c, p } => c * m.norm_sq().powf(0.5 * p),
            DensityKind::Blended { c, p, b, q } => {
                let s = m.norm_sq();
                c * s.powf(0.5 * p) + b * ((1.0 + s).powf(0.5 * q) - 1.0)
            }
            _ => unreachable!("quadratic kinds handled above"),
        }
    }

    /// Value of the regularized density minimized by the Newton solver.
    pub fn eval_reg(&self, m: &SymMat3) -> f64 {
        if self.quad.is_some() {
            return self.eval(m);
        }
        let s = m.norm_sq();
        match self.kind {
            DensityKind::PNorm { c, p } => reg_power(c, p, s),
            DensityKind::Blended { c, p, b, q } => reg_power(c, p, s) + b * ((1.0 + s).powf(0.5 * q) - 1.0),
            _ => unreachable!(),
        }
    }

    pub fn coord_gradient(&self, x: &[f64; 6]) -> [f64; 6] {
        if let Some(q) = &self.quad {
            return mat_vec(q, x);
        }
        let s = SymMat3::from_coords(*x).norm_sq();
        let factor = self.radial_first(s);
        std::array::from_fn(|k| factor * WEIGHTS[k] * x[k])
    }

    pub fn coord_hessian(&self, x: &[f64; 6]) -> Mat6 {
        if let Some(q) = &self.quad {
            return *q;
        }
        let s = SymMat3::from_coords(*x).norm_sq();
        let (a, b) = (self.radial_first(s), self.radial_second(s));
        let wx: [f64; 6] = std::array::from_fn(|k| WEIGHTS[k] * x[k]);
        let mut h = [[0.0; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                h[i][j] = b * wx[i] * wx[j];
            }
            h[i][i] += a * WEIGHTS[i];
        }
        h
    }

    /// Coordinate Hessian with the concave parts of `φ(|M|²)` linearized.
    ///
    /// For `p < 2` the quadratic model built from it majorizes the energy,
    /// so a full step never increases it (lagged-diffusivity iteration).
    pub fn coord_majorant_hessian(&self, x: &[f64; 6]) -> Mat6 {
        if self.quad.is_some() {
            return self.coord_hessian(x);
        }
        let s = SymMat3::from_coords(*x).norm_sq();
        let d2 = REGULARIZATION_DELTA * REGULARIZATION_DELTA;
        let b = match self.kind {
            DensityKind::PNorm { c, p } => (c * p * (p - 2.0)).max(0.0) * (d2 + s).powf(0.5 * p - 2.0),
            DensityKind::Blended { c, p, b, q } => {
                (c * p * (p - 2.0)).max(0.0) * (d2 + s).powf(0.5 * p - 2.0)
                    + (b * q * (q - 2.0)).max(0.0) * (1.0 + s).powf(0.5 * q - 2.0)
            }
            _ => unreachable!(),
        };
        let a = self.radial_first(s);
        let wx: [f64; 6] = std::array::from_fn(|k| WEIGHTS[k] * x[k]);
        let mut h = [[0.0; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                h[i][j] = b * wx[i] * wx[j];
            }
            h[i][i] += a * WEIGHTS[i];
        }
        h
    }

    /// Whether some part of the density grows slower than quadratically.
    pub fn is_subquadratic(&self) -> bool {
        match self.kind {
            DensityKind::PNorm { p, .. } => p < 2.0,
            DensityKind::Blended { p, q, .. } => p < 2.0 || q < 2.0,
            _ => false,
        }
    }

    /// Fréchet gradient (regularized for non-quadratic kinds).
    pub fn gradient(&self, m: &SymMat3) -> SymMat3 {
        let g = self.coord_gradient(&m.m);
        SymMat3 { m: std::array::from_fn(|k| g[k] / WEIGHTS[k]) }
    }

    /// Second Fréchet derivative at `m` applied to `h`.
    pub fn hessian_action(&self, m: &SymMat3, h: &SymMat3) -> SymMat3 {
        let hm = self.coord_hessian(&m.m);
        let v = mat_vec(&hm, &h.m);
        SymMat3 { m: std::array::from_fn(|k| v[k] / WEIGHTS[k]) }
    }

    /// For radial kinds `f = φ(|M|²)`: `2φ'(s)` (coordinate gradient is `2φ' W x`).
    fn radial_first(&self, s: f64) -> f64 {
        let d2 = REGULARIZATION_DELTA * REGULARIZATION_DELTA;
        match self.kind {
            DensityKind::PNorm { c, p } => c * p * (d2 + s).powf(0.5 * p - 1.0),
            DensityKind::Blended { c, p, b, q } => {
                c * p * (d2 + s).powf(0.5 * p - 1.0) + b * q * (1.0 + s).powf(0.5 * q - 1.0)
            }
            _ => unreachable!(),
        }
    }

    /// `4φ''(s)`, the coefficient of `(Wx)(Wx)ᵀ` in the coordinate Hessian.
    fn radial_second(&self, s: f64) -> f64 {
        let d2 = REGULARIZATION_DELTA * REGULARIZATION_DELTA;
        match self.kind {
            DensityKind::PNorm { c, p } => c * p * (p - 2.0) * (d2 + s).powf(0.5 * p - 2.0),
            DensityKind::Blended { c, p, b, q } => {
                c * p * (p - 2.0) * (d2 + s).powf(0.5 * p - 2.0) + b * q * (q - 2.0) * (1.0 + s).powf(0.5 * q - 2.0)
            }
            _ => unreachable!(),
        }
    }

    /// `f^{∞,p}(M) = limsup_{t→∞} f(tM)/t^p`, computed symbolically.
    pub fn recession(&self) -> Result<EnergyDensity> {
        match self.kind {
            DensityKind::Blended { c, p, .. } => EnergyDensity::p_norm(c, p),
            _ => Ok(self.clone()),
        }
    }

    /// `g^{0,p}(M) = liminf_{t→0⁺} g(tM)/t^p`, computed symbolically.
    pub fn tangent_at_zero(&self) -> Result<EnergyDensity> {
        match self.kind {
            DensityKind::Blended { c, p, b, q } => {
                if b == 0.0 || p < 2.0 {
                    EnergyDensity::p_norm(c, p)
                } else if p == 2.0 {
                    // (1+s)^{q/2} − 1 = (q/2) s + o(s)
                    EnergyDensity::p_norm(c + 0.5 * b * q, 2.0)
                } else {
                    Err(Error::Unsupported(format!(
                        "blended density with p={p} > 2 has an infinite tangent density at zero"
                    )))
                }
            }
            _ => Ok(self.clone()),
        }
    }

    /// `t·f`.
    pub fn scaled(&self, t: f64) -> Result<EnergyDensity> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidParameter(format!("density scale must be positive, got {t}")));
        }
        match &self.kind {
            DensityKind::Isotropic { lambda, mu } => EnergyDensity::isotropic(lambda * t, mu * t),
            DensityKind::PNorm { c, p } => EnergyDensity::p_norm(c * t, *p),
            DensityKind::Blended { c, p, b, q } => EnergyDensity::blended(c * t, *p, b * t, *q),
            DensityKind::QuadraticForm { .. } | DensityKind::AnisoExample => {
                let table = self.voigt_table().unwrap().map(|r| r.map(|v| v * t));
                EnergyDensity::quadratic_form(table)
            }
        }
    }

    /// Constants `(c, C)` with `c|M|^p ≤ f(M) ≤ C(1 + |M|^p)`; for
    /// homogeneous kinds the upper bound holds without the `1`.
    pub fn growth_constants(&self) -> (f64, f64) {
        if let Some(q) = &self.quad {
            let e = orthonormal_eigenvalues(q);
            return (0.5 * e[0], 0.5 * e[5]);
        }
        match self.kind {
            DensityKind::PNorm { c, .. } => (c, c),
            DensityKind::Blended { c, p, b, q } => {
                // sup_s ((1+s²)^{q/2} − 1)/(1 + s^p) over a logarithmic grid
                let sup = (0..=400)
                    .map(|i| 10f64.powf(-4.0 + 8.0 * i as f64 / 400.0))
                    .map(|s: f64| ((1.0 + s * s).powf(0.5 * q) - 1.0) / (1.0 + s.powf(p)))
                    .fold(0.0, f64::max);
                (c, c + b * sup * 1.01)
            }
            _ => unreachable!(),
        }
    }

    pub fn label(&self) -> String {
        match &self.kind {
            DensityKind::Isotropic { lambda, mu } => format!("isotropic(lambda={lambda}, mu={mu})"),
            DensityKind::PNorm { c, p } => format!("p_norm(c={c}, p={p})"),
            DensityKind::QuadraticForm { .. } => "quadratic_form".to_string(),
            DensityKind::AnisoExample => "aniso_example".to_string(),
            DensityKind::Blended { c, p, b, q } => format!("blended(c={c}, p={p}, b={b}, q={q})"),
        }
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p.is_finite() && p > 1.0) {
        return Err(Error::InvalidParameter(format!("exponent p must lie in (1, ∞), got {p}")));
    }
    Ok(())
}

fn reg_power(c: f64, p: f64, s: f64) -> f64 {
    if p == 2.0 {
        return c * s;
    }
    let d2 = REGULARIZATION_DELTA * REGULARIZATION_DELTA;
    c * ((d2 + s).powf(0.5 * p) - REGULARIZATION_DELTA.powf(p))
}

fn quadratic_from_table(table: &Mat6) -> Result<(Mat6, bool)> {
    if table.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("quadratic table has non-finite entries".into()));
    }
    for i in 0..6 {
        for j in 0..i {
            let (a, b) = (table[i][j], table[j][i]);
            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::InvalidParameter(format!("quadratic table is not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut q = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            q[i][j] = 0.5 * (table[i][j] + table[j][i]) * WEIGHTS[i] * WEIGHTS[j];
        }
    }
    let e = orthonormal_eigenvalues(&q);
    let scale = e.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    if e[0] < -1e-12 * scale {
        return Err(Error::NonConvex(format!("quadratic table has negative eigenvalue {:.3e}", e[0])));
    }
    Ok((q, e[0] > 1e-12 * scale))
}

/// Eigenvalues (ascending) of the quadratic form `xᵀ Q x` measured in the
/// Frobenius norm, i.e. of `D⁻¹ Q D⁻¹` with `D = diag(√w)`.
fn orthonormal_eigenvalues(q: &Mat6) -> Vec<f64> {
    let m = faer::Mat::<f64>::from_fn(6, 6, |i, j| q[i][j] / (WEIGHTS[i] * WEIGHTS[j]).sqrt());
    m.self_adjoint_eigenvalues(faer::Side::Lower).expect("6×6 symmetric eigenvalue problem")
}

fn quad_form(q: &Mat6, x: &[f64; 6]) -> f64 {
    let mut s = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            s += x[i] * q[i][j] * x[j];
        }
    }
    s
}

fn mat_vec(q: &Mat6, x: &[f64; 6]) -> [f64; 6] {
    std::array::from_fn(|i| (0..6).map(|j| q[i][j] * x[j]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, scale: f64) -> SymMat3 {
        SymMat3 { m: std::array::from_fn(|_| scale * rng.gen_range(-1.0..1.0)) }
    }

    fn all_kinds() -> Vec<EnergyDensity> {
        let mut t = [[0.0; 6]; 6];
        for i in 0..6 {
            t[i][i] = 1.0 + i as f64;
        }
        t[0][1] = 0.5;
        t[1][0] = 0.5;
        vec![
            EnergyDensity::isotropic(1.0, 1.0).unwrap(),
            EnergyDensity::isotropic(0.3, 2.0).unwrap(),
            EnergyDensity::p_norm(1.0, 3.0).unwrap(),
            EnergyDensity::p_norm(2.0, 1.5).unwrap(),
            EnergyDensity::p_norm(1.0, 2.0).unwrap(),
            EnergyDensity::quadratic_form(t).unwrap(),
            EnergyDensity::aniso_example(),
            EnergyDensity::blended(1.0, 1.5, 0.5, 1.2).unwrap(),
            EnergyDensity::blended(1.0, 2.0, 0.5, 1.5).unwrap(),
        ]
    }

    #[test]
    fn isotropic_at_identity() {
        let f = EnergyDensity::isotropic(1.0, 1.0).unwrap();
        assert!((f.eval(&SymMat3::identity()) - 7.5).abs() < 1e-14);
    }

    #[test]
    fn isotropic_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = EnergyDensity::isotropic(0.7, 1.3).unwrap();
        for _ in 0..100 {
            let m = random_mat(&mut rng, 2.0);
            let a = m.to_full();
            let frob: f64 = a.iter().flatten().map(|v| v * v).sum();
            let expect = 0.35 * m.trace().powi(2) + 1.3 * frob;
            assert!((f.eval(&m) - expect).abs() < 1e-12 * (1.0 + expect));
        }
    }

    #[test]
    fn aniso_example_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = EnergyDensity::aniso_example();
        assert!(g.is_strictly_convex());
        for _ in 0..100 {
            let m = random_mat(&mut rng, 3.0);
            let [m11, m22, m33, m12, m13, m23] = m.m;
            let expect = m11 * m11 + m22 * m22 + 2.0 * m12 * m12 + m13 * m13 + m33 * m33 + m13 * m33 + m23 * m23;
            assert!((g.eval(&m) - expect).abs() < 1e-12 * (1.0 + expect));
        }
    }

    #[test]
    fn zero_matrix() {
        let f = EnergyDensity::p_norm(1.0, 3.0).unwrap();
        assert_eq!(f.eval(&SymMat3::ZERO), 0.0);
        assert!(f.gradient(&SymMat3::ZERO).norm() < 1e-20);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for f in all_kinds() {
            for _ in 0..50 {
                let m = random_mat(&mut rng, 1.5);
                let h = random_mat(&mut rng, 1.0);
                let step = 1e-5;
                let fd = (f.eval(&m.add(&h.scale(step))) - f.eval(&m.sub(&h.scale(step)))) / (2.0 * step);
                let an = f.gradient(&m).ddot(&h);
                assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "{} fd={fd} an={an}", f.label());
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for f in all_kinds() {
            for _ in 0..50 {
                let m = random_mat(&mut rng, 1.5);
                let h = random_mat(&mut rng, 1.0);
                let step = 1e-5;
                let gp = f.gradient(&m.add(&h.scale(step)));
                let gm = f.gradient(&m.sub(&h.scale(step)));
                let fd = gp.sub(&gm).scale(0.5 / step);
                let an = f.hessian_action(&m, &h);
                assert!(fd.sub(&an).norm() <= 1e-5 * (1.0 + an.norm()), "{}", f.label());
            }
        }
    }

    #[test]
    fn coordinate_gradient_is_weighted() {
        let f = EnergyDensity::isotropic(1.0, 1.0).unwrap();
        let m = SymMat3::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        // f = 2 M12², derivative in the stored coordinate is 4 M12
        assert!((f.coord_gradient(&m.m)[3] - 4.0).abs() < 1e-14);
        assert!((f.gradient(&m).m[3] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn sampled_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for f in all_kinds() {
            for _ in 0..1000 {
                let a = random_mat(&mut rng, 3.0);
                let b = random_mat(&mut rng, 3.0);
                let mid = f.eval(&a.add(&b).scale(0.5));
                let avg = 0.5 * (f.eval(&a) + f.eval(&b));
                assert!(mid <= avg + 1e-12 * (1.0 + avg), "{}", f.label());
            }
        }
    }

    #[test]
    fn homogeneity_of_p_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for p in [1.5, 2.0, 3.0] {
            let f = EnergyDensity::p_norm(1.7, p).unwrap();
            let m = random_mat(&mut rng, 1.0);
            for t in [0.5, 2.0, 10.0] {
                let lhs = f.eval(&m.scale(t));
                let rhs = t.powf(p) * f.eval(&m);
                assert!((lhs - rhs).abs() < 1e-12 * rhs);
            }
        }
    }

    #[test]
    fn growth_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for f in all_kinds() {
            let (c, cc) = f.growth_constants();
            assert!(c > 0.0 && cc >= c, "{}", f.label());
            for _ in 0..1000 {
                let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
                let m = random_mat(&mut rng, scale);
                let n = m.norm().powf(f.exponent());
                let v = f.eval(&m);
                assert!(v >= c * n * (1.0 - 1e-12), "{} lower", f.label());
                let upper = if f.is_homogeneous() { cc * n } else { cc * (1.0 + n) };
                assert!(v <= upper * (1.0 + 1e-12), "{} upper", f.label());
            }
        }
    }

    #[test]
    fn non_convex_table_rejected() {
        let mut t = [[0.0; 6]; 6];
        for i in 0..6 {
            t[i][i] = 1.0;
        }
        t[0][0] = -0.1;
        assert!(matches!(EnergyDensity::quadratic_form(t), Err(Error::NonConvex(_))));
        t[0][0] = 1.0;
        t[0][1] = 0.3;
        assert!(EnergyDensity::quadratic_form(t).is_err());
    }

    #[test]
    fn upper_triangle_table() {
        let mut e = vec![0.0; 21];
        // diagonal positions in row-by-row upper storage
        for (i, pos) in [0usize, 6, 11, 15, 18, 20].iter().enumerate() {
            e[*pos] = 1.0 + i as f64;
        }
        let f = EnergyDensity::quadratic_form_upper(&e).unwrap();
        let t = f.voigt_table().unwrap();
        assert!((t[5][5] - 6.0).abs() < 1e-14 && (t[3][3] - 4.0).abs() < 1e-14);
        assert!(EnergyDensity::quadratic_form_upper(&e[..20]).is_err());
    }

    #[test]
    fn recession_and_tangent() {
        let p = EnergyDensity::p_norm(1.0, 1.5).unwrap();
        assert_eq!(p.recession().unwrap(), p);
        assert_eq!(p.tangent_at_zero().unwrap(), p);
        let iso = EnergyDensity::isotropic(1.0, 2.0).unwrap();
        assert_eq!(iso.recession().unwrap(), iso);
        let g = EnergyDensity::aniso_example();
        assert_eq!(g.tangent_at_zero().unwrap(), g);
        let b = EnergyDensity::blended(1.0, 2.0, 1.0, 1.5).unwrap();
        assert_eq!(b.tangent_at_zero().unwrap(), EnergyDensity::p_norm(1.75, 2.0).unwrap());
        assert!(EnergyDensity::blended(1.0, 3.0, 1.0, 1.5).unwrap().tangent_at_zero().is_err());
    }

    #[test]
    fn numeric_recession_trend() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = EnergyDensity::blended(1.0, 1.8, 2.0, 1.3).unwrap();
        let r = f.recession().unwrap();
        for _ in 0..20 {
            let m = random_mat(&mut rng, 1.0);
            let errs: Vec<f64> = [1e2, 1e3, 1e4]
                .iter()
                .map(|t: &f64| (f.eval(&m.scale(*t)) / t.powf(1.8) - r.eval(&m)).abs())
                .collect();
            assert!(errs[0] > errs[1] && errs[1] > errs[2]);
            assert!(errs[2] < 0.2 * errs[0]);
        }
    }

    #[test]
    fn numeric_tangent_trend() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = EnergyDensity::blended(1.0, 2.0, 2.0, 1.3).unwrap();
        let g = f.tangent_at_zero().unwrap();
        for _ in 0..20 {
            let m = random_mat(&mut rng, 1.0);
            let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
                .iter()
                .map(|t: &f64| (f.eval(&m.scale(*t)) / (t * t) - g.eval(&m)).abs())
                .collect();
            assert!(errs[0] > errs[1] && errs[1] > errs[2]);
        }
    }

    #[test]
    fn lipschitz_constant_is_stable() {
        // |f(M) − f(M')| ≤ C |M − M'| (1 + |M|^{p−1} + |M'|^{p−1})
        for f in all_kinds() {
            let p = f.exponent();
            let fitted = |n: usize, seed: u64| -> f64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n)
                    .map(|_| {
                        let s = 10f64.powf(rng.gen_range(-2.0..2.0));
                        let a = random_mat(&mut rng, s);
                        let t = s * rng.gen_range(0.01..1.0);
                        let b = a.add(&random_mat(&mut rng, t));
                        (f.eval(&a) - f.eval(&b)).abs()
                            / (a.sub(&b).norm() * (1.0 + a.norm().powf(p - 1.0) + b.norm().powf(p - 1.0)))
                    })
                    .fold(0.0, f64::max)
            };
            let c1 = fitted(1_000, 10);
            let c2 = fitted(10_000, 11);
            assert!(c1.is_finite() && c2.is_finite());
            assert!(c2 <= 1.5 * c1 && c1 <= 1.5 * c2, "{}: {c1} vs {c2}", f.label());
        }
    }

    #[test]
    fn planar_gradient_examples() {
        let z = planar_sym_gradient([1.0, 2.0, 3.0], [[0.0; 2]; 3]);
        assert_eq!(z, SymMat3::ZERO);
        // ψ = e3 ∧ y = (−y2, y1, 0)
        let rot = planar_sym_gradient([0.0; 3], [[0.0, -1.0], [1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(rot, SymMat3::ZERO);
        let e = planar_sym_gradient([0.0; 3], [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(e, SymMat3::new(0.0, 0.0, 0.0, 0.0, 0.5, 0.0));
    }

    #[test]
    fn scaled_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for f in all_kinds() {
            let g = f.scaled(2.5).unwrap();
            let m = random_mat(&mut rng, 1.0);
            assert!((g.eval(&m) - 2.5 * f.eval(&m)).abs() < 1e-12 * (1.0 + g.eval(&m)));
        }
    }
}
