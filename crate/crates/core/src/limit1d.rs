//! The homogenized fiber problem along one fiber line `x₃ ∈ (0, L)`.
//!
//! Given the matrix velocity `u` along the line, minimizes
//! `∫₀^L c^f(v − u, θ) + g^hom(𝔇 v^tuple) dx₃ − L(v^tuple)` over the tuples
//! admissible for the regime. `v_α` uses cubic Hermite elements in the finite
//! `κ` regime (second derivatives enter `g^hom`); every other field is P1.
//! Both `c^f` and `g^hom` are represented as [`PowerForm`]s
//! `(xᵀ K x)^{p/2}`, exact for quadratic densities.

use rand::Rng;
use serde::Serialize;

use crate::capacity::{CapacityDensity, DensityValue};
use crate::cell::{aniso_cell_matrix, CellResult};
use crate::energy::REGULARIZATION_DELTA;
use crate::error::{ConvergenceFailure, Error, Result};
use crate::fem::linalg::{from_triplets, Factorization};
use crate::geometry::CrossSection;
use crate::regimes::{LimitDomain, RegimeReport};

/// Gauss–Legendre points and weights on `[0, 1]`.
const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// `x ↦ (xᵀ K x)^{p/2}` with `K` symmetric positive semi-definite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerForm {
    pub matrix: Vec<Vec<f64>>,
    pub p: f64,
}

impl PowerForm {
    pub fn quadratic(matrix: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(matrix, 2.0)
    }

    pub fn new(matrix: Vec<Vec<f64>>, p: f64) -> Result<Self> {
        let n = matrix.len();
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::InvalidParameter(format!("exponent must exceed 1, got {p}")));
        }
        if n == 0 || matrix.iter().any(|r| r.len() != n || r.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidParameter("form matrix must be square and finite".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (matrix[i][j] - matrix[j][i]).abs() > 1e-9 * (1.0 + matrix[i][j].abs()) {
                    return Err(Error::InvalidParameter("form matrix must be symmetric".into()));
                }
            }
        }
        Ok(Self { matrix, p })
    }

    /// Form of a cell energy, from its assembled quadratic form.
    pub fn from_cell(r: &CellResult) -> Result<Self> {
        match &r.quadratic_form {
            Some(q) => Self::quadratic(q.clone()),
            None => Err(Error::Unsupported("cell energy has no quadratic form; fit a power form instead".into())),
        }
    }

    /// Fits a `p`-homogeneous function `φ` by polarizing `φ^{2/p}` (exact when
    /// `φ^{2/p}` is quadratic).
    pub fn fit(dim: usize, p: f64, mut value: impl FnMut(&[f64]) -> Result<f64>) -> Result<Self> {
        let m = crate::cell::polarize(dim, |x| Ok(value(x)?.max(0.0).powf(2.0 / p)))?;
        Self::new(m, p)
    }

    pub fn dim(&self) -> usize {
        self.matrix.len()
    }

    fn kx(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let s: f64 = self.kx(x).iter().zip(x).map(|(a, b)| a * b).sum::<f64>().max(0.0);
        if self.p == 2.0 {
            s
        } else {
            s.powf(0.5 * self.p)
        }
    }

    fn value_reg(&self, x: &[f64]) -> f64 {
        if self.p == 2.0 {
            return self.value(x);
        }
        let d = REGULARIZATION_DELTA;
        let s: f64 = self.kx(x).iter().zip(x).map(|(a, b)| a * b).sum::<f64>().max(0.0);
        (d * d + s).powf(0.5 * self.p) - d.powf(self.p)
    }

    /// Gradient and (majorant, for `p < 2`) Hessian of the regularized form.
    fn derivatives(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let kx = self.kx(x);
        let n = x.len();
        if self.p == 2.0 {
            let g = kx.iter().map(|v| 2.0 * v).collect();
            let h = self.matrix.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
            return (g, h);
        }
        let d = REGULARIZATION_DELTA;
        let s = d * d + kx.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().max(0.0);
        let a = self.p * s.powf(0.5 * self.p - 1.0);
        let b = if self.p > 2.0 { self.p * (self.p - 2.0) * s.powf(0.5 * self.p - 2.0) } else { 0.0 };
        let g = kx.iter().map(|v| a * v).collect();
        let h = (0..n).map(|i| (0..n).map(|j| a * self.matrix[i][j] + b * kx[i] * kx[j]).collect()).collect();
        (g, h)
    }
}

/// The coupling density `c^f(v − u, θ)` along the line.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Coupling {
    /// Finite for every `(a, ζ)`: a form over `(a₁, a₂, a₃, ζ)`.
    Full(PowerForm),
    /// Finite only for `ζ = 0`: a form over `a`, and `θ ≡ 0`.
    TranslationOnly(PowerForm),
    /// Finite only at `(0, 0)`: `v = u` and `θ ≡ 0`.
    Indicator,
}

impl Coupling {
    /// Builds the coupling from a capacity density. For `1 < p < 2` the form
    /// is fitted from ten evaluations (each a plane-limit ladder).
    pub fn from_density(cfd: &CapacityDensity) -> Result<Self> {
        match cfd {
            CapacityDensity::QuadraticTranslation { gamma, matrix } => Ok(Coupling::TranslationOnly(
                PowerForm::quadratic(matrix.iter().map(|r| r.iter().map(|x| gamma * x).collect()).collect())?,
            )),
            CapacityDensity::Indicator => Ok(Coupling::Indicator),
            CapacityDensity::PlaneCapacity { recession, .. } => {
                let p = recession.exponent();
                let form = PowerForm::fit(4, p, |x| match cfd.eval([x[0], x[1], x[2]], x[3])? {
                    DensityValue::Finite(v) => Ok(v),
                    DensityValue::Infinite => Err(Error::Inconsistent("plane capacity density is infinite".into())),
                })?;
                Ok(Coupling::Full(form))
            }
        }
    }

    fn allows_theta(&self) -> bool {
        matches!(self, Coupling::Full(_))
    }
}

/// Closed form of the isotropic `p = 2` density per unit `γ`:
/// `πμ (2(λ+2μ)/(λ+3μ)(e₁⊗e₁ + e₂⊗e₂) + e₃⊗e₃)`.
pub fn isotropic_translation_matrix(lambda: f64, mu: f64) -> [[f64; 3]; 3] {
    let t = std::f64::consts::PI * mu * 2.0 * (lambda + 2.0 * mu) / (lambda + 3.0 * mu);
    [[t, 0.0, 0.0], [0.0, t, 0.0], [0.0, 0.0, std::f64::consts::PI * mu]]
}

/// Cross-section averages of the fiber loads at one node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ForceTerms {
    /// `⨍_S g₀ dy`.
    pub g0: [f64; 3],
    /// `⨍_S g₀ · (2/diam S) e₃∧y dy`.
    pub g0_torque: f64,
    /// `⨍_S a₀ dy`.
    pub a0: f64,
    /// `⨍_S a₀ y_α dy`.
    pub a0_moment: [f64; 2],
    /// `⨍_S β₀ dy`.
    pub beta0: f64,
}

impl ForceTerms {
    fn lerp(a: &Self, b: &Self, t: f64) -> Self {
        let l = |x: f64, y: f64| (1.0 - t) * x + t * y;
        Self {
            g0: std::array::from_fn(|i| l(a.g0[i], b.g0[i])),
            g0_torque: l(a.g0_torque, b.g0_torque),
            a0: l(a.a0, b.a0),
            a0_moment: std::array::from_fn(|i| l(a.a0_moment[i], b.a0_moment[i])),
            beta0: l(a.beta0, b.beta0),
        }
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            g0: self.g0.map(|x| s * x),
            g0_torque: s * self.g0_torque,
            a0: s * self.a0,
            a0_moment: self.a0_moment.map(|x| s * x),
            beta0: s * self.beta0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiberSolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FiberSolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500 }
    }
}

/// `n` equispaced nodes on `[0, L]`.
pub fn uniform_grid(length: f64, n: usize) -> Result<Vec<f64>> {
    if !(length.is_finite() && length > 0.0) || n < 2 {
        return Err(Error::InvalidParameter("grid needs L > 0 and at least two nodes".into()));
    }
    Ok((0..n).map(|i| length * i as f64 / (n - 1) as f64).collect())
}

/// Fiber subproblem on one line.
#[derive(Clone, Debug, Serialize)]
pub struct FiberProblem {
    pub domain: LimitDomain,
    pub nodes: Vec<f64>,
    /// `g^hom` over `𝔇 v^tuple` (`(∂v₃, ∂θ)` or `(∂²v₁, ∂²v₂, ∂w, ∂δ)`).
    pub ghom: Option<PowerForm>,
    pub coupling: Coupling,
    pub u_line: Vec<[f64; 3]>,
    pub forces: Vec<ForceTerms>,
    /// `τ = 2 ⨍_S |y|² / diam S`.
    pub tau: f64,
    #[serde(skip)]
    pub solver: FiberSolverOptions,
}

/// Nodal values of `(v, θ, w, δ)` on the grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TupleField {
    pub x: Vec<f64>,
    pub v: Vec<[f64; 3]>,
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    pub delta: Vec<f64>,
    /// `∂v_α/∂x₃` at the nodes (Hermite slopes; finite `κ` only, zero otherwise).
    pub v_slope: Vec<[f64; 2]>,
}

impl TupleField {
    pub fn zeros(x: &[f64]) -> Self {
        let n = x.len();
        Self {
            x: x.to_vec(),
            v: vec![[0.0; 3]; n],
            theta: vec![0.0; n],
            w: vec![0.0; n],
            delta: vec![0.0; n],
            v_slope: vec![[0.0; 2]; n],
        }
    }
}

/// Result of [`solve_fiber`].
#[derive(Clone, Debug, Serialize)]
pub struct FiberSolution {
    pub tuple: TupleField,
    pub energy: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Field {
    V1,
    V2,
    V3,
    Theta,
    W,
    Delta,
}

/// Linear map from the full coefficient vector to a local quantity.
#[derive(Clone, Debug, Default)]
struct Lin {
    terms: Vec<(usize, f64)>,
    shift: f64,
}

impl Lin {
    fn eval(&self, z: &[f64]) -> f64 {
        self.shift + self.terms.iter().map(|(k, c)| c * z[*k]).sum::<f64>()
    }
}

struct QPoint {
    weight: f64,
    coupling: Vec<Lin>,
    ghom: Vec<Lin>,
}

/// Discrete fiber problem: coefficient layout, constraints, quadrature data.
struct Discrete {
    n: usize,
    hermite: bool,
    base: [usize; 6],
    len: usize,
    /// `Some(value)` for constrained coefficients.
    fixed: Vec<Option<f64>>,
    free_index: Vec<Option<usize>>,
    nfree: usize,
    qpoints: Vec<QPoint>,
    load: Vec<f64>,
}

impl FiberProblem {
    pub fn new(
        report: &RegimeReport,
        nodes: Vec<f64>,
        ghom: Option<PowerForm>,
        coupling: Coupling,
        u_line: Vec<[f64; 3]>,
        forces: Vec<ForceTerms>,
        tau: f64,
    ) -> Result<Self> {
        let fp = Self { domain: report.domain, nodes, ghom, coupling, u_line, forces, tau, solver: Default::default() };
        fp.validate()?;
        Ok(fp)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if n < 2 || self.nodes[0] != 0.0 || self.nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("nodes must start at 0 and increase strictly".into()));
        }
        if self.u_line.len() != n || self.forces.len() != n {
            return Err(Error::InvalidParameter("u_line and forces need one entry per node".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidParameter("τ must be positive".into()));
        }
        let need = match self.domain {
            LimitDomain::FiniteK => Some(2),
            LimitDomain::FiniteKappa => Some(4),
            _ => None,
        };
        match (need, &self.ghom) {
            (Some(d), Some(g)) if g.dim() == d => {}
            (Some(d), _) => {
                return Err(Error::InvalidParameter(format!("the {:?} regime needs a g^hom form of dimension {d}", self.domain)))
            }
            _ => {}
        }
        match &self.coupling {
            Coupling::Full(f) if f.dim() != 4 => {
                return Err(Error::InvalidParameter("full coupling form must be 4-dimensional".into()))
            }
            Coupling::TranslationOnly(f) if f.dim() != 3 => {
                return Err(Error::InvalidParameter("translation coupling form must be 3-dimensional".into()))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    fn discretize(&self) -> Result<Discrete> {
        self.validate()?;
        let n = self.nodes.len();
        let hermite = self.domain == LimitDomain::FiniteKappa;
        let vlen = if hermite { 2 * n } else { n };
        let sizes = [vlen, vlen, n, n, if hermite { n } else { 0 }, if hermite { n } else { 0 }];
        let mut base = [0; 6];
        let mut acc = 0;
        for (b, s) in base.iter_mut().zip(sizes) {
            *b = acc;
            acc += s;
        }
        let len = acc;
        let mut fixed: Vec<Option<f64>> = vec![None; len];
        let p1 = |f: Field, i: usize| base[f as usize] + i;
        let fix_all = |fixed: &mut Vec<Option<f64>>, f: Field| {
            for i in 0..sizes[f as usize] {
                fixed[base[f as usize] + i] = Some(0.0);
            }
        };
        match self.domain {
            LimitDomain::Decoupled => {
                return Err(Error::Unsupported("fibers decouple from the matrix; there is no fiber problem".into()))
            }
            LimitDomain::Rigid => {
                for k in 0..len {
                    fixed[k] = Some(0.0);
                }
            }
            LimitDomain::FiniteK => {
                fixed[p1(Field::V3, 0)] = Some(0.0);
                fixed[p1(Field::Theta, 0)] = Some(0.0);
            }
            LimitDomain::Inextensible => {
                fix_all(&mut fixed, Field::V3);
                fix_all(&mut fixed, Field::Theta);
            }
            LimitDomain::FiniteKappa => {
                fix_all(&mut fixed, Field::V3);
                fix_all(&mut fixed, Field::Theta);
                for f in [Field::V1, Field::V2] {
                    fixed[base[f as usize]] = Some(0.0);
                    fixed[base[f as usize] + 1] = Some(0.0);
                }
                fixed[p1(Field::W, 0)] = Some(0.0);
                fixed[p1(Field::Delta, 0)] = Some(0.0);
            }
        }
        if !self.coupling.allows_theta() {
            fix_all(&mut fixed, Field::Theta);
        }
        if self.coupling == Coupling::Indicator && self.domain != LimitDomain::Rigid {
            if hermite {
                return Err(Error::Unsupported("an indicator coupling is not supported with bending fibers".into()));
            }
            for i in 0..n {
                for (c, f) in [Field::V1, Field::V2, Field::V3].into_iter().enumerate() {
                    let k = base[f as usize] + i;
                    let u = self.u_line[i][c];
                    if let Some(val) = fixed[k] {
                        if (val - u).abs() > 1e-12 {
                            return Err(Error::Constraint(format!(
                                "v = u is required by the coupling but conflicts with the clamped value at node {i}"
                            )));
                        }
                    }
                    fixed[k] = Some(u);
                }
            }
        }
        let mut free_index = vec![None; len];
        let mut nfree = 0;
        for k in 0..len {
            if fixed[k].is_none() {
                free_index[k] = Some(nfree);
                nfree += 1;
            }
        }

        let mut qpoints = Vec::with_capacity(3 * (n - 1));
        let mut load = vec![0.0; len];
        for e in 0..n - 1 {
            let h = self.nodes[e + 1] - self.nodes[e];
            for &(xi, wq) in &GAUSS3 {
                let weight = wq * h;
                let l0 = 1.0 - xi;
                let lin_p1 = |f: Field| Lin { terms: vec![(p1(f, e), l0), (p1(f, e + 1), xi)], shift: 0.0 };
                let dlin_p1 = |f: Field| Lin { terms: vec![(p1(f, e), -1.0 / h), (p1(f, e + 1), 1.0 / h)], shift: 0.0 };
                // Hermite shape functions and derivatives on the element
                let hv = [1.0 - 3.0 * xi * xi + 2.0 * xi.powi(3), h * (xi - 2.0 * xi * xi + xi.powi(3)), 3.0 * xi * xi - 2.0 * xi.powi(3), h * (-xi * xi + xi.powi(3))];
                let hd = [(-6.0 * xi + 6.0 * xi * xi) / h, 1.0 - 4.0 * xi + 3.0 * xi * xi, (6.0 * xi - 6.0 * xi * xi) / h, -2.0 * xi + 3.0 * xi * xi];
                let hdd = [(-6.0 + 12.0 * xi) / (h * h), (-4.0 + 6.0 * xi) / h, (6.0 - 12.0 * xi) / (h * h), (-2.0 + 6.0 * xi) / h];
                let herm = |f: Field, shape: &[f64; 4]| {
                    let b = base[f as usize];
                    Lin { terms: (0..4).map(|j| (b + 2 * e + j, shape[j])).collect(), shift: 0.0 }
                };
                let vval = |f: Field| if hermite { herm(f, &hv) } else { lin_p1(f) };
                let u: [f64; 3] = std::array::from_fn(|c| l0 * self.u_line[e][c] + xi * self.u_line[e + 1][c]);
                let forces = ForceTerms::lerp(&self.forces[e], &self.forces[e + 1], xi);

                let mut coupling = Vec::new();
                if !matches!(self.coupling, Coupling::Indicator) {
                    for (c, f) in [Field::V1, Field::V2, Field::V3].into_iter().enumerate() {
                        let mut l = vval(f);
                        l.shift = -u[c];
                        coupling.push(l);
                    }
                    if self.coupling.allows_theta() {
                        coupling.push(lin_p1(Field::Theta));
                    }
                }
                let ghom = match self.domain {
                    LimitDomain::FiniteK => vec![dlin_p1(Field::V3), dlin_p1(Field::Theta)],
                    LimitDomain::FiniteKappa => {
                        vec![herm(Field::V1, &hdd), herm(Field::V2, &hdd), dlin_p1(Field::W), dlin_p1(Field::Delta)]
                    }
                    _ => Vec::new(),
                };
                // linear load functional
                let mut add = |l: Lin, c: f64| {
                    for (k, a) in l.terms {
                        load[k] += weight * c * a;
                    }
                };
                for (c, f) in [Field::V1, Field::V2, Field::V3].into_iter().enumerate() {
                    add(vval(f), forces.g0[c]);
                }
                if hermite {
                    add(lin_p1(Field::Delta), self.tau * forces.beta0);
                    add(lin_p1(Field::W), forces.a0);
                    add(herm(Field::V1, &hd), -forces.a0_moment[0]);
                    add(herm(Field::V2, &hd), -forces.a0_moment[1]);
                } else {
                    add(lin_p1(Field::Theta), forces.g0_torque);
                }
                qpoints.push(QPoint { weight, coupling, ghom });
            }
        }
        Ok(Discrete { n, hermite, base, len, fixed, free_index, nfree, qpoints, load })
    }

    /// Copy with all forces multiplied by `s`.
    pub fn with_scaled_forces(&self, s: f64) -> Self {
        let mut fp = self.clone();
        fp.forces = self.forces.iter().map(|f| f.scaled(s)).collect();
        fp
    }

    /// A random tuple satisfying the constraints of the domain.
    pub fn random_admissible<R: Rng>(&self, rng: &mut R, scale: f64) -> Result<TupleField> {
        let d = self.discretize()?;
        let z: Vec<f64> = d.fixed.iter().map(|f| f.unwrap_or_else(|| scale * rng.gen_range(-1.0..1.0))).collect();
        Ok(d.to_tuple(&self.nodes, &z))
    }
}

impl Discrete {
    fn to_tuple(&self, x: &[f64], z: &[f64]) -> TupleField {
        let mut t = TupleField::zeros(x);
        let b = self.base;
        for i in 0..self.n {
            for (c, f) in [Field::V1, Field::V2].into_iter().enumerate() {
                if self.hermite {
                    t.v[i][c] = z[b[f as usize] + 2 * i];
                    t.v_slope[i][c] = z[b[f as usize] + 2 * i + 1];
                } else {
                    t.v[i][c] = z[b[f as usize] + i];
                }
            }
            t.v[i][2] = z[b[Field::V3 as usize] + i];
            t.theta[i] = z[b[Field::Theta as usize] + i];
            if self.hermite {
                t.w[i] = z[b[Field::W as usize] + i];
                t.delta[i] = z[b[Field::Delta as usize] + i];
            }
        }
        t
    }

    fn from_tuple(&self, t: &TupleField) -> Result<Vec<f64>> {
        let n = self.n;
        if t.v.len() != n || t.theta.len() != n || t.w.len() != n || t.delta.len() != n || t.v_slope.len() != n {
            return Err(Error::InvalidParameter("tuple does not match the grid".into()));
        }
        let mut z = vec![0.0; self.len];
        let b = self.base;
        for i in 0..n {
            for (c, f) in [Field::V1, Field::V2].into_iter().enumerate() {
                if self.hermite {
                    z[b[f as usize] + 2 * i] = t.v[i][c];
                    z[b[f as usize] + 2 * i + 1] = t.v_slope[i][c];
                } else {
                    z[b[f as usize] + i] = t.v[i][c];
                }
            }
            z[b[Field::V3 as usize] + i] = t.v[i][2];
            z[b[Field::Theta as usize] + i] = t.theta[i];
            if self.hermite {
                z[b[Field::W as usize] + i] = t.w[i];
                z[b[Field::Delta as usize] + i] = t.delta[i];
            }
        }
        // fields absent from the layout must vanish
        let absent = !self.hermite && (t.w.iter().chain(&t.delta).any(|x| *x != 0.0) || t.v_slope.iter().flatten().any(|x| *x != 0.0));
        if absent {
            return Err(Error::Constraint("w, δ and slopes only exist in the finite κ regime".into()));
        }
        for (k, f) in self.fixed.iter().enumerate() {
            if let Some(v) = f {
                if (z[k] - v).abs() > 1e-12 * (1.0 + v.abs()) {
                    return Err(Error::Constraint(format!("tuple violates a constraint of the limit domain (coefficient {k})")));
                }
            }
        }
        Ok(z)
    }

    fn objective(&self, fp: &FiberProblem, z: &[f64], regularized: bool) -> f64 {
        let mut e = 0.0;
        let form_value = |f: &PowerForm, x: &[f64]| if regularized { f.value_reg(x) } else { f.value(x) };
        for q in &self.qpoints {
            if let Coupling::Full(f) | Coupling::TranslationOnly(f) = &fp.coupling {
                let x: Vec<f64> = q.coupling.iter().map(|l| l.eval(z)).collect();
                e += q.weight * form_value(f, &x);
            }
            if let Some(g) = &fp.ghom {
                if !q.ghom.is_empty() {
                    let y: Vec<f64> = q.ghom.iter().map(|l| l.eval(z)).collect();
                    e += q.weight * form_value(g, &y);
                }
            }
        }
        e - self.load.iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Free-coefficient gradient and Hessian triplets.
    fn derivatives(&self, fp: &FiberProblem, z: &[f64]) -> (Vec<f64>, Vec<(usize, usize, f64)>) {
        let mut g = vec![0.0; self.nfree];
        let mut trip = Vec::new();
        for (k, l) in self.load.iter().enumerate() {
            if let Some(i) = self.free_index[k] {
                g[i] -= l;
            }
        }
        let mut add = |lins: &[Lin], form: &PowerForm, w: f64| {
            let x: Vec<f64> = lins.iter().map(|l| l.eval(z)).collect();
            let (gx, hx) = form.derivatives(&x);
            for (a, la) in lins.iter().enumerate() {
                for &(ka, ca) in &la.terms {
                    let Some(ia) = self.free_index[ka] else { continue };
                    g[ia] += w * gx[a] * ca;
                    for (b, lb) in lins.iter().enumerate() {
                        for &(kb, cb) in &lb.terms {
                            if let Some(ib) = self.free_index[kb] {
                                trip.push((ia, ib, w * hx[a][b] * ca * cb));
                            }
                        }
                    }
                }
            }
        };
        for q in &self.qpoints {
            if let Coupling::Full(f) | Coupling::TranslationOnly(f) = &fp.coupling {
                add(&q.coupling, f, q.weight);
            }
            if let Some(gf) = &fp.ghom {
                if !q.ghom.is_empty() {
                    add(&q.ghom, gf, q.weight);
                }
            }
        }
        (g, trip)
    }

    fn start(&self) -> Vec<f64> {
        self.fixed.iter().map(|f| f.unwrap_or(0.0)).collect()
    }

    fn with_free(&self, z: &[f64], dz: &[f64], t: f64) -> Vec<f64> {
        let mut out = z.to_vec();
        for (k, i) in self.free_index.iter().enumerate() {
            if let Some(i) = i {
                out[k] += t * dz[*i];
            }
        }
        out
    }
}

fn is_quadratic(fp: &FiberProblem) -> bool {
    let c = match &fp.coupling {
        Coupling::Full(f) | Coupling::TranslationOnly(f) => f.p == 2.0,
        Coupling::Indicator => true,
    };
    c && fp.ghom.as_ref().is_none_or(|g| g.p == 2.0)
}

/// Minimizes the fiber functional over the admissible tuples.
pub fn solve_fiber(fp: &FiberProblem) -> Result<FiberSolution> {
    let d = fp.discretize()?;
    let mut z = d.start();
    if d.nfree == 0 {
        let energy = d.objective(fp, &z, false);
        return Ok(FiberSolution { tuple: d.to_tuple(&fp.nodes, &z), energy, iterations: 0, grad_norm: 0.0 });
    }
    let quadratic = is_quadratic(fp);
    let f0 = d.objective(fp, &z, true).abs();
    let scale = 1.0 + f0 + d.load.iter().map(|x| x.abs()).sum::<f64>();
    let mut iterations = 0;
    let mut gn;
    loop {
        let (g, trip) = d.derivatives(fp, &z);
        gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gn <= fp.solver.tol * scale || (quadratic && iterations == 1) {
            break;
        }
        if iterations >= fp.solver.max_iter {
            return Err(Error::Convergence(Box::new(ConvergenceFailure {
                iterations,
                grad_norm: gn,
                history: Vec::new(),
                last_iterate: z,
            })));
        }
        let h = from_triplets(d.nfree, &trip)?;
        let fact = Factorization::new(&h, None)?;
        let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
        let dz = fact.solve(&rhs)?;
        iterations += 1;
        if quadratic {
            z = d.with_free(&z, &dz, 1.0);
            continue;
        }
        let e0 = d.objective(fp, &z, true);
        let slope: f64 = g.iter().zip(&dz).map(|(a, b)| a * b).sum();
        let mut t = 1.0;
        loop {
            let trial = d.with_free(&z, &dz, t);
            let e = d.objective(fp, &trial, true);
            if e <= e0 + 1e-4 * t * slope || t < 1e-12 {
                z = trial;
                break;
            }
            t *= 0.5;
        }
        if -slope <= 1e-15 * (1.0 + e0.abs()) {
            break;
        }
    }
    let energy = d.objective(fp, &z, false);
    Ok(FiberSolution { tuple: d.to_tuple(&fp.nodes, &z), energy, iterations, grad_norm: gn })
}

/// The discrete fiber objective at an admissible tuple.
pub fn fiber_energy(fp: &FiberProblem, t: &TupleField) -> Result<f64> {
    let d = fp.discretize()?;
    let z = d.from_tuple(t)?;
    Ok(d.objective(fp, &z, false))
}

/// The load functional `L(v^tuple)` alone.
pub fn load_term(fp: &FiberProblem, t: &TupleField) -> Result<f64> {
    let d = fp.discretize()?;
    let z = d.from_tuple(t)?;
    Ok(d.load.iter().zip(&z).map(|(a, b)| a * b).sum())
}

/// Minimizer of the finite `κ` twist and stretch problem for isotropic fibers
/// under constant `⨍β₀` and `⨍a₀`: `δ = A_δ (L x₃ − x₃²/2)`,
/// `w = A_w (L x₃ − x₃²/2)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct IsotropicKappaProfile {
    pub delta_amplitude: f64,
    pub w_amplitude: f64,
}

impl IsotropicKappaProfile {
    /// `g^hom` contains `κμ₁·2m/diam²·|∂δ|²` and `κμ₁(3λ₁+2μ₁)/(2(λ₁+μ₁))·|∂w|²`.
    pub fn new(lambda1: f64, mu1: f64, kappa: f64, m: f64, diam: f64, tau: f64, beta0: f64, a0: f64) -> Self {
        let c_delta = kappa * mu1 * 2.0 * m / (diam * diam);
        let c_w = kappa * mu1 * (3.0 * lambda1 + 2.0 * mu1) / (2.0 * (lambda1 + mu1));
        Self { delta_amplitude: tau * beta0 / (2.0 * c_delta), w_amplitude: a0 / (2.0 * c_w) }
    }

    pub fn shape(length: f64, x: f64) -> f64 {
        length * x - 0.5 * x * x
    }
}

/// Check of `δ = ratio · diam S · ∂v₂/∂x₃` on the disc for the anisotropic example.
#[derive(Clone, Debug, Serialize)]
pub struct DeltaRelation {
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    pub v2_slope: Vec<f64>,
    pub diam: f64,
    /// `−(C₂₄C₃₃ − C₂₃C₃₄)/(C₃₃C₄₄ − C₃₄²)` from the cell matrix.
    pub cell_ratio: f64,
    /// Least-squares `δ / (diam · ∂v₂)` of the fiber solution.
    pub observed_ratio: f64,
    /// `max_i |δ_i − ratio·diam·∂v₂(x_i)| / max_i |ratio·diam·∂v₂(x_i)|` for the ratio tested.
    pub tested_ratio: f64,
    pub max_relative_residual: f64,
    pub holds: bool,
}

/// Solves the clamped bending problem with the anisotropic cell matrix on the
/// disc and compares `δ` with `tested_ratio · diam · ∂v₂/∂x₃` nodewise (tolerance 1%).
pub fn aniso_delta_relation(
    section: &CrossSection,
    kappa: f64,
    nodes: Vec<f64>,
    u_line: Vec<[f64; 3]>,
    cell_h: f64,
    tested_ratio: f64,
) -> Result<DeltaRelation> {
    let diam = section.diameter;
    let cell = aniso_cell_matrix(section, kappa, cell_h)?;
    // C acts on (ζ₁, ζ₂, a, β̃) with β̃ = β/diam; the fiber uses β = ∂δ
    let s = [1.0, 1.0, 1.0, 1.0 / diam];
    let q: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| cell.c_direct[i][j] * s[i] * s[j]).collect()).collect();
    let coupling = Coupling::TranslationOnly(PowerForm::quadratic(
        isotropic_translation_matrix(1.0, 1.0).iter().map(|r| r.to_vec()).collect(),
    )?);
    let n = nodes.len();
    let fp = FiberProblem {
        domain: LimitDomain::FiniteKappa,
        nodes,
        ghom: Some(PowerForm::quadratic(q)?),
        coupling,
        u_line,
        forces: vec![ForceTerms::default(); n],
        tau: section.tau,
        solver: Default::default(),
    };
    let sol = solve_fiber(&fp)?;
    let t = &sol.tuple;
    let v2: Vec<f64> = t.v_slope.iter().map(|s| s[1]).collect();
    let num: f64 = t.delta.iter().zip(&v2).map(|(d, v)| d * diam * v).sum();
    let den: f64 = v2.iter().map(|v| (diam * v).powi(2)).sum();
    let observed_ratio = if den > 0.0 { num / den } else { 0.0 };
    let pred: Vec<f64> = v2.iter().map(|v| tested_ratio * diam * v).collect();
    let scale = pred.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let max_res = t.delta.iter().zip(&pred).map(|(d, p)| (d - p).abs()).fold(0.0, f64::max);
    let max_relative_residual = if scale > 0.0 {
        max_res / scale
    } else if max_res == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(DeltaRelation {
        x: t.x.clone(),
        delta: t.delta.clone(),
        v2_slope: v2,
        diam,
        cell_ratio: cell.delta_ratio(),
        observed_ratio,
        tested_ratio,
        max_relative_residual,
        holds: max_relative_residual <= 0.01,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regimes::RegimeReport;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kappa_problem(n: usize, beta0: f64, a0: f64) -> FiberProblem {
        let report = RegimeReport::from_limits(2.0, f64::INFINITY, 1.0, 1.0).unwrap();
        let (l1, m1, kappa, m, diam) = (1.0, 1.0, 2.0, 0.5, 2.0);
        let c_ab = kappa * m1 * (3.0 * l1 + 2.0 * m1) / (2.0 * (l1 + m1));
        let ghom = vec![
            vec![c_ab * 0.25, 0.0, 0.0, 0.0],
            vec![0.0, c_ab * 0.25, 0.0, 0.0],
            vec![0.0, 0.0, c_ab, 0.0],
            vec![0.0, 0.0, 0.0, kappa * m1 * 2.0 * m / (diam * diam)],
        ];
        let nodes = uniform_grid(1.5, n).unwrap();
        let forces = vec![ForceTerms { beta0, a0, ..Default::default() }; n];
        FiberProblem::new(
            &report,
            nodes,
            Some(PowerForm::quadratic(ghom).unwrap()),
            Coupling::TranslationOnly(PowerForm::quadratic(isotropic_translation_matrix(1.0, 1.0).iter().map(|r| r.to_vec()).collect()).unwrap()),
            vec![[0.0; 3]; n],
            forces,
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn no_forces_gives_zero() {
        let fp = kappa_problem(20, 0.0, 0.0);
        let s = solve_fiber(&fp).unwrap();
        assert!(s.tuple.delta.iter().chain(&s.tuple.w).all(|x| x.abs() < 1e-14));
        assert_eq!(fiber_energy(&fp, &TupleField::zeros(&fp.nodes)).unwrap(), 0.0);
    }

    #[test]
    fn twist_profile_is_nodally_exact() {
        let fp = kappa_problem(41, 0.7, -0.3);
        let s = solve_fiber(&fp).unwrap();
        let prof = IsotropicKappaProfile::new(1.0, 1.0, 2.0, 0.5, 2.0, 0.5, 0.7, -0.3);
        for (i, x) in fp.nodes.iter().enumerate() {
            let sh = IsotropicKappaProfile::shape(1.5, *x);
            assert!((s.tuple.delta[i] - prof.delta_amplitude * sh).abs() < 1e-10);
            assert!((s.tuple.w[i] - prof.w_amplitude * sh).abs() < 1e-10);
        }
    }

    #[test]
    fn solution_beats_random_tuples() {
        let mut fp = kappa_problem(15, 0.4, 0.2);
        fp.u_line = fp.nodes.iter().map(|x| [x.sin(), 0.5 * x * x, 0.1]).collect();
        let s = solve_fiber(&fp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let t = fp.random_admissible(&mut rng, 1.0).unwrap();
            assert!(fiber_energy(&fp, &t).unwrap() >= s.energy);
        }
    }

    #[test]
    fn load_term_is_linear() {
        let fp = kappa_problem(10, 0.4, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = fp.random_admissible(&mut rng, 1.0).unwrap();
        let l1 = load_term(&fp, &t).unwrap();
        let l2 = load_term(&fp.with_scaled_forces(2.0), &t).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12 * (1.0 + l1.abs()));
    }

    #[test]
    fn constraint_violation_rejected() {
        let fp = kappa_problem(10, 0.0, 0.0);
        let mut t = TupleField::zeros(&fp.nodes);
        t.delta[0] = 1.0;
        assert!(matches!(fiber_energy(&fp, &t), Err(Error::Constraint(_))));
    }

    #[test]
    fn power_form_fit_is_exact_for_norms() {
        let k = vec![vec![2.0, 0.3], vec![0.3, 1.0]];
        let f = PowerForm::new(k.clone(), 1.5).unwrap();
        let fit = PowerForm::fit(2, 1.5, |x| Ok(f.value(x))).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((fit.matrix[i][j] - k[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nonquadratic_coupling_converges() {
        let mut fp = kappa_problem(12, 0.3, 0.1);
        fp.coupling = Coupling::TranslationOnly(PowerForm::new(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]], 1.5).unwrap());
        fp.u_line = fp.nodes.iter().map(|x| [0.2 * x, -0.1 * x * x, 0.0]).collect();
        let s = solve_fiber(&fp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let t = fp.random_admissible(&mut rng, 0.3).unwrap();
            assert!(fiber_energy(&fp, &t).unwrap() >= s.energy - 1e-10);
        }
    }
}
