//! Cell problems on the fiber cross-section.
//!
//! The homogenized fiber energy `g^hom` minimizes the average of `g` over
//! correctors `q: S → ℝ³` for a strain of the form
//! `e_y(q) + (2/diam S) β (−y₂ e₁⊙e₃ + y₁ e₂⊙e₃) + (a − ζ·y) e₃⊗e₃`
//! (`ζ = 0` in the finite `k` regime, where the full density `g` is used;
//! the finite `κ` regime uses the tangent density at zero). The module also
//! computes the torsion constant `m`, the stiffness matrix of the anisotropic
//! example built from four scalar Neumann problems, and the periodic
//! soft-matrix density.

use std::sync::Arc;

use serde::Serialize;

use crate::capacity::rigid_value;
use crate::energy::EnergyDensity;
use crate::error::{Error, Result};
use crate::fem::linalg::Factorization;
use crate::fem::{
    self, boundary_load, remove_mean, volume_load, Constraint, Diagnostics, DiscreteField, DofMap, EnergyFunctional,
    Kinematics, LinearConstraint, Offset, ScalarPower, SolverOptions,
};
use crate::geometry::{mesh_cell, mesh_periodic_cell, CrossSection, Mesh2D, Point, VertexTag};

/// Default mesh size of cell problems.
pub const DEFAULT_CELL_H: f64 = 0.02;
/// Default mesh size of the periodic soft-matrix cell.
pub const DEFAULT_SOFT_H: f64 = 0.03;
/// Tolerance on `|∫ source − ∫ flux|` of the Neumann problems, relative to
/// the size of the data.
pub const COMPATIBILITY_TOL: f64 = 1e-10;
/// Relative gap above which an entry formula is reported as a discrepancy.
pub const DISCREPANCY_TOL: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CellRegime {
    FiniteK,
    FiniteKappa,
}

impl CellRegime {
    /// Number of load scalars.
    pub fn dim(self) -> usize {
        match self {
            CellRegime::FiniteK => 2,
            CellRegime::FiniteKappa => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CellRegime::FiniteK => "finite_k",
            CellRegime::FiniteKappa => "finite_kappa",
        }
    }

    pub fn load_names(self) -> &'static [&'static str] {
        match self {
            CellRegime::FiniteK => &["a", "beta"],
            CellRegime::FiniteKappa => &["zeta1", "zeta2", "a", "beta"],
        }
    }

    /// The density whose cell average is minimized.
    pub fn effective_density(self, g: &EnergyDensity) -> Result<EnergyDensity> {
        match self {
            CellRegime::FiniteK => Ok(g.clone()),
            CellRegime::FiniteKappa => g.tangent_at_zero(),
        }
    }
}

/// Axial derivatives entering a cell problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum CellLoad {
    /// `a = ∂v₃/∂x₃`, `β = ∂θ/∂x₃`.
    FiniteK { a: f64, beta: f64 },
    /// `ζ_α = ∂²v_α/∂x₃²`, `a = ∂w/∂x₃`, `β = ∂δ/∂x₃`.
    FiniteKappa { zeta1: f64, zeta2: f64, a: f64, beta: f64 },
}

impl CellLoad {
    pub fn regime(&self) -> CellRegime {
        match self {
            CellLoad::FiniteK { .. } => CellRegime::FiniteK,
            CellLoad::FiniteKappa { .. } => CellRegime::FiniteKappa,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            CellLoad::FiniteK { a, beta } => vec![a, beta],
            CellLoad::FiniteKappa { zeta1, zeta2, a, beta } => vec![zeta1, zeta2, a, beta],
        }
    }

    pub fn from_slice(regime: CellRegime, x: &[f64]) -> Result<Self> {
        if x.len() != regime.dim() {
            return Err(Error::InvalidParameter(format!(
                "{} load needs {} entries, got {}",
                regime.label(),
                regime.dim(),
                x.len()
            )));
        }
        let load = match regime {
            CellRegime::FiniteK => CellLoad::FiniteK { a: x[0], beta: x[1] },
            CellRegime::FiniteKappa => CellLoad::FiniteKappa { zeta1: x[0], zeta2: x[1], a: x[2], beta: x[3] },
        };
        load.validate()?;
        Ok(load)
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_vec().iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("cell load entries must be finite".into()))
        }
    }

    pub fn is_zero(&self) -> bool {
        self.to_vec().iter().all(|&x| x == 0.0)
    }

    /// Strain coordinates `(M11, M22, M33, M12, M13, M23)` added to `e_y(q)` at `y`.
    pub fn strain(&self, diam: f64, y: Point) -> [f64; 6] {
        let (zeta, a, beta) = match *self {
            CellLoad::FiniteK { a, beta } => ([0.0, 0.0], a, beta),
            CellLoad::FiniteKappa { zeta1, zeta2, a, beta } => ([zeta1, zeta2], a, beta),
        };
        let k = beta / diam;
        [0.0, 0.0, a - zeta[0] * y[0] - zeta[1] * y[1], 0.0, -k * y[1], k * y[0]]
    }

    fn offset(&self, diam: f64) -> Offset {
        let load = *self;
        Arc::new(move |y| load.strain(diam, y))
    }
}

/// Mesh size and solver settings of cell problems.
#[derive(Clone, Copy, Debug)]
pub struct CellSettings {
    pub h: f64,
    pub solver: SolverOptions,
}

impl Default for CellSettings {
    fn default() -> Self {
        Self { h: DEFAULT_CELL_H, solver: SolverOptions { tol: 1e-10, max_iter: 200 } }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    pub regime: CellRegime,
    /// `k` or `κ`.
    pub coefficient: f64,
    pub load: CellLoad,
    pub ghom_value: f64,
    /// Mean-zero minimizer `q`.
    pub minimizer: DiscreteField,
    /// `Q` with `g^hom(ℓ) = ℓᵀ Q ℓ` when the effective density is quadratic.
    pub quadratic_form: Option<Vec<Vec<f64>>>,
    pub mesh_h: f64,
    pub num_vertices: usize,
    pub diagnostics: Diagnostics,
}

/// Pins the rigid motions of a free corrector: all components at the first
/// vertex and the second in-plane component at the vertex farthest along
/// `y₁` (this removes the in-plane rotation).
fn gauge_dofs(mesh: &Mesh2D, ncomp: usize) -> DofMap {
    let far = (0..mesh.num_vertices())
        .max_by(|&i, &j| {
            let di = (mesh.vertices[i][0] - mesh.vertices[0][0]).abs();
            let dj = (mesh.vertices[j][0] - mesh.vertices[0][0]).abs();
            di.total_cmp(&dj)
        })
        .unwrap_or(0);
    DofMap::build(mesh, ncomp, |v, c| {
        if v == 0 || (ncomp == 3 && v == far && c == 1) {
            Constraint::Fixed(0.0)
        } else {
            Constraint::Free
        }
    })
}

fn check_coefficient(coef: f64) -> Result<()> {
    if coef.is_finite() && coef > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("cell coefficient must be positive and finite, got {coef}")))
    }
}

/// Reusable factorization of a quadratic cell problem; loads only change the
/// linear term.
pub struct CellSolver<'m> {
    mesh: &'m Mesh2D,
    density: &'m EnergyDensity,
    diam: f64,
    coefficient: f64,
    regime: CellRegime,
    dofs: DofMap,
    factorization: Factorization,
}

impl<'m> CellSolver<'m> {
    /// `density` is the effective density of the regime (see
    /// [`CellRegime::effective_density`]).
    pub fn new(
        density: &'m EnergyDensity,
        mesh: &'m Mesh2D,
        diam: f64,
        coefficient: f64,
        regime: CellRegime,
    ) -> Result<Self> {
        check_coefficient(coefficient)?;
        if !density.is_quadratic() {
            return Err(Error::Unsupported("a reusable cell factorization needs a quadratic density".into()));
        }
        let dofs = gauge_dofs(mesh, 3);
        let f = EnergyFunctional::new(mesh, density, Kinematics::PlanarSym, dofs.clone())?;
        let factorization = f.factorize(&vec![0.0; f.nfree()])?;
        Ok(Self { mesh, density, diam, coefficient, regime, dofs, factorization })
    }

    pub fn regime(&self) -> CellRegime {
        self.regime
    }

    /// `g^hom` and the mean-zero minimizer for one load.
    pub fn solve(&self, load: &CellLoad) -> Result<(f64, DiscreteField, Diagnostics)> {
        if load.regime() != self.regime {
            return Err(Error::InvalidParameter("load regime does not match the cell solver".into()));
        }
        load.validate()?;
        let f = EnergyFunctional::new(self.mesh, self.density, Kinematics::PlanarSym, self.dofs.clone())?
            .with_offset(load.offset(self.diam));
        let m = fem::minimize_quadratic_with(&f, &self.factorization)?;
        let mut field = m.field;
        remove_mean(self.mesh, &mut field);
        Ok((self.coefficient * m.energy / self.mesh.area(), field, m.diagnostics))
    }

    pub fn value(&self, load: &[f64]) -> Result<f64> {
        Ok(self.solve(&CellLoad::from_slice(self.regime, load)?)?.0)
    }

    /// Symmetric `Q` with `g^hom(ℓ) = ℓᵀ Q ℓ`, by polarization.
    pub fn quadratic_form(&self) -> Result<Vec<Vec<f64>>> {
        polarize(self.regime.dim(), |x| self.value(x))
    }
}

/// Symmetric matrix of a quadratic function of `n` variables from `n(n+1)/2` values.
pub fn polarize(n: usize, mut value: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<Vec<f64>>> {
    let unit = |i: usize| -> Vec<f64> { (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect() };
    let mut diag = vec![0.0; n];
    for (i, d) in diag.iter_mut().enumerate() {
        *d = value(&unit(i))?;
    }
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        q[i][i] = diag[i];
        for j in 0..i {
            let x: Vec<f64> = (0..n).map(|k| if k == i || k == j { 1.0 } else { 0.0 }).collect();
            let s = value(&x)?;
            q[i][j] = 0.5 * (s - diag[i] - diag[j]);
            q[j][i] = q[i][j];
        }
    }
    Ok(q)
}

/// `xᵀ Q x`.
pub fn quadratic_value(q: &[Vec<f64>], x: &[f64]) -> f64 {
    q.iter().zip(x).map(|(row, xi)| xi * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).sum()
}

/// `g^hom` with default settings.
pub fn ghom(g: &EnergyDensity, section: &CrossSection, coefficient: f64, load: CellLoad) -> Result<CellResult> {
    ghom_with(g, section, coefficient, load, &CellSettings::default())
}

pub fn ghom_with(
    g: &EnergyDensity,
    section: &CrossSection,
    coefficient: f64,
    load: CellLoad,
    settings: &CellSettings,
) -> Result<CellResult> {
    let mesh = mesh_cell(section, settings.h)?;
    let mut r = ghom_on_mesh(g, &mesh, section.diameter, coefficient, load, settings.solver)?;
    r.mesh_h = settings.h;
    Ok(r)
}

/// `g^hom` on a given triangulation of `S`.
pub fn ghom_on_mesh(
    g: &EnergyDensity,
    mesh: &Mesh2D,
    diam: f64,
    coefficient: f64,
    load: CellLoad,
    solver: SolverOptions,
) -> Result<CellResult> {
    check_coefficient(coefficient)?;
    load.validate()?;
    let regime = load.regime();
    let density = regime.effective_density(g)?;
    let (value, minimizer, diagnostics, form) = if density.is_quadratic() {
        let s = CellSolver::new(&density, mesh, diam, coefficient, regime)?;
        let (v, q, d) = s.solve(&load)?;
        (v, q, d, Some(s.quadratic_form()?))
    } else {
        let dofs = gauge_dofs(mesh, 3);
        let f = EnergyFunctional::new(mesh, &density, Kinematics::PlanarSym, dofs)?.with_offset(load.offset(diam));
        let m = if load.is_zero() {
            fem::Minimum {
                field: DiscreteField::from_free(&f.dofs, vec![0.0; f.nfree()]),
                energy: 0.0,
                diagnostics: Diagnostics {
                    iterations: 0,
                    converged: true,
                    grad_norm: 0.0,
                    regularized_energy: 0.0,
                    history: Vec::new(),
                    ndofs: f.nfree(),
                },
            }
        } else {
            fem::minimize(&f, solver, None)?
        };
        let mut q = m.field;
        remove_mean(mesh, &mut q);
        (coefficient * m.energy / mesh.area(), q, m.diagnostics, None)
    };
    Ok(CellResult {
        regime,
        coefficient,
        load,
        ghom_value: value,
        minimizer,
        quadratic_form: form,
        mesh_h: f64::NAN,
        num_vertices: mesh.num_vertices(),
        diagnostics,
    })
}

/// Cell energy of a given corrector (all nodal values prescribed).
pub fn cell_energy_of(
    g: &EnergyDensity,
    mesh: &Mesh2D,
    diam: f64,
    coefficient: f64,
    load: CellLoad,
    q: &DiscreteField,
) -> Result<f64> {
    if q.ncomp != 3 || q.values.len() != 3 * mesh.num_vertices() {
        return Err(Error::InvalidParameter("corrector must be an ℝ³ field on the cell mesh".into()));
    }
    let density = load.regime().effective_density(g)?;
    let dofs = DofMap::build(mesh, 3, |v, c| Constraint::Fixed(q.values[3 * v + c]));
    let f = EnergyFunctional::new(mesh, &density, Kinematics::PlanarSym, dofs)?.with_offset(load.offset(diam));
    Ok(coefficient * f.value(&[]) / mesh.area())
}

#[derive(Clone, Debug, Serialize)]
pub struct TorsionConstant {
    pub m: f64,
    /// Mean-zero warping function `φ`.
    pub warping: DiscreteField,
    pub mesh_h: f64,
    pub num_vertices: usize,
}

/// `m = inf_φ ⨍_S (∂₁φ − y₂)² + (∂₂φ + y₁)²`.
pub fn torsion_constant(section: &CrossSection, h: f64) -> Result<TorsionConstant> {
    let mesh = mesh_cell(section, h)?;
    let mut t = torsion_constant_on_mesh(&mesh)?;
    t.mesh_h = h;
    Ok(t)
}

pub fn torsion_constant_on_mesh(mesh: &Mesh2D) -> Result<TorsionConstant> {
    let density = ScalarPower { c: 1.0, p: 2.0 };
    let f = EnergyFunctional::new(mesh, &density, Kinematics::Gradient, gauge_dofs(mesh, 1))?
        .with_offset(Arc::new(|y: Point| [-y[1], y[0], 0.0, 0.0, 0.0, 0.0]));
    let m = fem::minimize(&f, SolverOptions::default(), None)?;
    let mut warping = m.field;
    remove_mean(mesh, &mut warping);
    Ok(TorsionConstant { m: m.energy / mesh.area(), warping, mesh_h: f64::NAN, num_vertices: mesh.num_vertices() })
}

/// Solution of `Δφ = s` in `S`, `∇φ·n = b` on `∂S`, with mean zero.
#[derive(Clone, Debug, Serialize)]
pub struct NeumannSolution {
    pub field: DiscreteField,
    /// `∫_S s − ∫_{∂S} b` (zero for a solvable problem).
    pub compatibility_residual: f64,
    pub l2_norm: f64,
}

/// Right-hand side of the weak form `∫∇φ·∇η = −∫ s η + ∫_{∂S} b η`.
fn neumann_rhs(mesh: &Mesh2D, source: &dyn Fn(Point) -> f64, flux: &dyn Fn(Point, Point) -> f64) -> Vec<f64> {
    let vol = volume_load(mesh, source);
    let bnd = boundary_load(mesh, VertexTag::InnerS, flux);
    vol.iter().zip(&bnd).map(|(v, b)| b - v).collect()
}

/// `|∫_S s − ∫_{∂S} b|` relative to `|S| + ∫|b|`-type data size.
pub fn neumann_compatibility(
    mesh: &Mesh2D,
    source: &dyn Fn(Point) -> f64,
    flux: &dyn Fn(Point, Point) -> f64,
) -> (f64, f64) {
    let rhs = neumann_rhs(mesh, source, flux);
    let scale: f64 = volume_load(mesh, |p| source(p).abs()).iter().sum::<f64>()
        + boundary_load(mesh, VertexTag::InnerS, |p, n| flux(p, n).abs()).iter().sum::<f64>();
    (-rhs.iter().sum::<f64>(), scale)
}

pub fn solve_neumann(
    mesh: &Mesh2D,
    source: &dyn Fn(Point) -> f64,
    flux: &dyn Fn(Point, Point) -> f64,
) -> Result<NeumannSolution> {
    let (residual, scale) = neumann_compatibility(mesh, source, flux);
    if residual.abs() > COMPATIBILITY_TOL * scale.max(1.0) {
        return Err(Error::Geometry(format!(
            "Neumann data incompatible: ∫ source − ∫ flux = {residual:.3e}"
        )));
    }
    let density = ScalarPower { c: 0.5, p: 2.0 };
    let f = EnergyFunctional::new(mesh, &density, Kinematics::Gradient, gauge_dofs(mesh, 1))?
        .with_load(neumann_rhs(mesh, source, flux));
    let m = fem::minimize(&f, SolverOptions::default(), None)?;
    let mut field = m.field;
    remove_mean(mesh, &mut field);
    let l2_norm = field.l2_norm(mesh);
    Ok(NeumannSolution { field, compatibility_residual: residual, l2_norm })
}

/// A stiffness entry whose closed formula disagrees with the direct solve.
#[derive(Clone, Debug, Serialize)]
pub struct EntryDiscrepancy {
    pub i: usize,
    pub j: usize,
    pub formula: f64,
    pub direct: f64,
    /// `|formula − direct| / ‖C‖`.
    pub relative_gap: f64,
}

/// Stiffness matrix of the anisotropic example density in the variables
/// `(ζ₁, ζ₂, a, β̃)` with `β̃ = β / diam S`.
#[derive(Clone, Debug, Serialize)]
pub struct AnisoCell {
    pub kappa: f64,
    /// From cell solves with the vector corrector (the reference values).
    pub c_direct: [[f64; 4]; 4],
    /// Energy of the scalar corrector `q = (ζ₁φ¹ + ζ₂φ² + aφ³ + β̃φ⁴) e₃`.
    pub c_fields: [[f64; 4]; 4],
    /// Closed entry formulas in terms of averages of `φ`; `None` where no
    /// formula exists (the `(ζ₁, ζ₂)` block).
    pub c_formula: [[Option<f64>; 4]; 4],
    pub phi: Vec<NeumannSolution>,
    /// `∫_S 0 − ∫_{∂S} y₂ n₂ = −|S|`: the flux `y₂n₂` for the second problem is
    /// not solvable; `y₂n₁` is the flux of the Euler–Lagrange equation.
    pub literal_second_flux_residual: f64,
    pub discrepancies: Vec<EntryDiscrepancy>,
    /// Largest relative gap between `c_fields` and `c_direct`.
    pub fields_gap: f64,
    pub mesh_h: f64,
}

impl AnisoCell {
    pub fn norm(&self) -> f64 {
        frobenius(&self.c_direct)
    }

    /// `δ = ratio · diam S · ∂v₂/∂x₃` from the fiber equilibrium of `(w, δ)`
    /// without forces: `ratio = −(C₂₄C₃₃ − C₂₃C₃₄) / (C₃₃C₄₄ − C₃₄²)`.
    pub fn delta_ratio(&self) -> f64 {
        let c = &self.c_direct;
        -(c[1][3] * c[2][2] - c[1][2] * c[2][3]) / (c[2][2] * c[3][3] - c[2][3] * c[2][3])
    }
}

fn frobenius(c: &[[f64; 4]; 4]) -> f64 {
    c.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

fn to4(q: &[Vec<f64>]) -> [[f64; 4]; 4] {
    std::array::from_fn(|i| std::array::from_fn(|j| q[i][j]))
}

/// Averages `⨍_S ∂₁φ` and `⨍_S y_α ∂₁φ` of a scalar P1 field.
fn gradient_moments(mesh: &Mesh2D, phi: &DiscreteField) -> (f64, [f64; 2]) {
    let mut d1 = 0.0;
    let mut yd1 = [0.0; 2];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let a = mesh.signed_area(t);
        let p = tri.map(|v| mesh.vertices[v]);
        let dn = fem::shape_gradients(&p, a);
        let g: f64 = (0..3).map(|i| dn[i][0] * phi.values[tri[i]]).sum();
        let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
        d1 += a * g;
        yd1[0] += a * g * c[0];
        yd1[1] += a * g * c[1];
    }
    let area = mesh.area();
    (d1 / area, [yd1[0] / area, yd1[1] / area])
}

/// Second moments `⨍ y_α y_β` of the discrete domain.
fn mesh_second_moments(mesh: &Mesh2D) -> [[f64; 2]; 2] {
    let mut m = [[0.0; 2]; 2];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let a = mesh.signed_area(t);
        let p = tri.map(|v| mesh.vertices[v]);
        // exact for quadratics: edge midpoints
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            let x = [0.5 * (p[i][0] + p[j][0]), 0.5 * (p[i][1] + p[j][1])];
            for r in 0..2 {
                for s in 0..2 {
                    m[r][s] += a / 3.0 * x[r] * x[s];
                }
            }
        }
    }
    let area = mesh.area();
    m.map(|row| row.map(|x| x / area))
}

/// Builds the stiffness matrix of the anisotropic example on `S`.
pub fn aniso_cell_matrix(section: &CrossSection, kappa: f64, h: f64) -> Result<AnisoCell> {
    check_coefficient(kappa)?;
    let mesh = mesh_cell(section, h)?;
    let diam = section.diameter;
    let g = EnergyDensity::aniso_example();

    // direct: κ-regime cell solves, converted from β to β̃ = β/diam
    let solver = CellSolver::new(&g, &mesh, diam, kappa, CellRegime::FiniteKappa)?;
    let q = solver.quadratic_form()?;
    let scale = [1.0, 1.0, 1.0, diam];
    let c_direct: [[f64; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| q[i][j] * scale[i] * scale[j]));

    let zero = |_: Point| 0.0;
    let problems: [(Box<dyn Fn(Point) -> f64>, Box<dyn Fn(Point, Point) -> f64>); 4] = [
        (Box::new(|_| 1.0), Box::new(|y, n| y[0] * n[0])),
        (Box::new(zero), Box::new(|y, n| y[1] * n[0])),
        (Box::new(zero), Box::new(|_, n| -n[0])),
        (Box::new(zero), Box::new(|y, n| 2.0 * (y[1] * n[0] - y[0] * n[1]))),
    ];
    let phi: Vec<NeumannSolution> =
        problems.iter().map(|(s, b)| solve_neumann(&mesh, s.as_ref(), b.as_ref())).collect::<Result<_>>()?;
    let (literal_second_flux_residual, _) = neumann_compatibility(&mesh, &zero, &|y, n| y[1] * n[1]);

    // the scalar corrector built from the four fields
    let c_fields = to4(&polarize(4, |l| {
        let mut field = DiscreteField::zeros(mesh.num_vertices(), 3);
        for v in 0..mesh.num_vertices() {
            field.values[3 * v + 2] = (0..4).map(|i| l[i] * phi[i].field.values[v]).sum();
        }
        let load = CellLoad::FiniteKappa { zeta1: l[0], zeta2: l[1], a: l[2], beta: l[3] * diam };
        cell_energy_of(&g, &mesh, diam, kappa, load, &field)
    })?);

    let mom = mesh_second_moments(&mesh);
    let d1: Vec<(f64, [f64; 2])> = phi.iter().map(|s| gradient_moments(&mesh, &s.field)).collect();
    let mut c_formula = [[None; 4]; 4];
    let mut set = |i: usize, j: usize, v: f64| {
        c_formula[i][j] = Some(v);
        c_formula[j][i] = Some(v);
    };
    set(2, 2, kappa);
    set(3, 3, kappa * (mom[0][0] + mom[1][1]));
    set(2, 3, 0.5 * kappa * 0.5 * d1[3].0);
    for al in 0..2 {
        set(al, 2, 0.5 * kappa * 0.5 * d1[al].0);
        // ⨍ −y_α (½∂₁φ⁴ − y₂)
        let v = -0.5 * d1[3].1[al] + mom[al][1];
        set(al, 3, 0.5 * kappa * v);
    }

    let norm = frobenius(&c_direct);
    let mut discrepancies = Vec::new();
    for i in 0..4 {
        for j in i..4 {
            if let Some(f) = c_formula[i][j] {
                let gap = (f - c_direct[i][j]).abs() / norm;
                if gap > DISCREPANCY_TOL {
                    discrepancies.push(EntryDiscrepancy { i, j, formula: f, direct: c_direct[i][j], relative_gap: gap });
                }
            }
        }
    }
    let mut fields_gap: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            fields_gap = fields_gap.max((c_fields[i][j] - c_direct[i][j]).abs() / norm);
        }
    }
    Ok(AnisoCell {
        kappa,
        c_direct,
        c_fields,
        c_formula,
        phi,
        literal_second_flux_residual,
        discrepancies,
        fields_gap,
        mesh_h: h,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SoftResult {
    pub value: f64,
    pub minimizer: DiscreteField,
    pub mesh_h: f64,
    pub num_vertices: usize,
    pub diagnostics: Diagnostics,
}

/// Mean-zero constraints over `Y` per component, with the rigid values on `S`.
fn soft_mean_constraints(mesh: &Mesh2D, a: [f64; 3], zeta: f64, diam: f64) -> Vec<LinearConstraint> {
    let nv = mesh.num_vertices();
    let mut w = vec![0.0; nv];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let ar = mesh.signed_area(t);
        for &v in tri {
            w[v] += ar / 3.0;
        }
    }
    let s_area = mesh.hole_area();
    let mom = mesh.hole_first_moment();
    let k = 2.0 / diam;
    let rigid = [a[0] * s_area - k * zeta * mom[1], a[1] * s_area + k * zeta * mom[0], a[2] * s_area];
    (0..3)
        .map(|c| LinearConstraint { coeffs: (0..nv).map(|v| (3 * v + c, w[v])).collect(), rhs: -rigid[c] })
        .collect()
}

/// `c^f_soft(a, ζ)` on a given periodic mesh of `Y∖S`.
pub fn soft_density_on_mesh(
    f: &EnergyDensity,
    mesh: &Mesh2D,
    diam: f64,
    a: [f64; 3],
    zeta: f64,
    solver: SolverOptions,
) -> Result<SoftResult> {
    if !(a.iter().all(|x| x.is_finite()) && zeta.is_finite()) {
        return Err(Error::InvalidParameter("soft-cell data must be finite".into()));
    }
    if !mesh.is_periodic() {
        return Err(Error::Geometry("soft-cell density needs a periodic cell mesh".into()));
    }
    let density = f.recession()?;
    let alpha = [0.0, 0.0, zeta];
    let dofs = DofMap::build(mesh, 3, |v, c| match mesh.tags[v] {
        VertexTag::InnerS => Constraint::Fixed(rigid_value(a, alpha, diam, mesh.vertices[v])[c]),
        _ => Constraint::Free,
    });
    let fun = EnergyFunctional::new(mesh, &density, Kinematics::PlanarSym, dofs)?
        .with_constraints(soft_mean_constraints(mesh, a, zeta, diam));
    let m = fem::minimize(&fun, solver, None)?;
    Ok(SoftResult {
        value: m.energy,
        minimizer: m.field,
        mesh_h: f64::NAN,
        num_vertices: mesh.num_vertices(),
        diagnostics: m.diagnostics,
    })
}

/// Periodic soft-matrix density `c^f_soft(a, ζ)` with `Y = [−½, ½)²`.
pub fn soft_density(f: &EnergyDensity, section: &CrossSection, a: [f64; 3], zeta: f64, h: f64) -> Result<SoftResult> {
    let mesh = mesh_periodic_cell(section, h)?;
    let mut r = soft_density_on_mesh(f, &mesh, section.diameter, a, zeta, SolverOptions { tol: 1e-10, max_iter: 200 })?;
    r.mesh_h = h;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iso() -> EnergyDensity {
        EnergyDensity::isotropic(1.0, 1.0).unwrap()
    }

    #[test]
    fn zero_load_gives_zero() {
        let r = ghom_with(&iso(), &CrossSection::unit_disc(), 1.0, CellLoad::FiniteK { a: 0.0, beta: 0.0 }, &CellSettings {
            h: 0.2,
            ..Default::default()
        })
        .unwrap();
        assert!(r.ghom_value.abs() < 1e-14);
        assert!(r.minimizer.max_abs() < 1e-12);
    }

    #[test]
    fn axial_stretch_uses_young_modulus() {
        let (l, m) = (1.3, 0.7);
        let g = EnergyDensity::isotropic(l, m).unwrap();
        let r = ghom_with(&g, &CrossSection::unit_disc(), 2.0, CellLoad::FiniteK { a: 1.0, beta: 0.0 }, &CellSettings {
            h: 0.1,
            ..Default::default()
        })
        .unwrap();
        let expect = 2.0 * m * (3.0 * l + 2.0 * m) / (2.0 * (l + m));
        // constant lateral contraction is exactly representable
        assert!((r.ghom_value - expect).abs() < 1e-8 * expect, "{} vs {expect}", r.ghom_value);
    }

    #[test]
    fn disc_torsion_constant_is_one_half() {
        let t = torsion_constant(&CrossSection::unit_disc(), 0.05).unwrap();
        assert!((t.m - 0.5).abs() < 2e-3, "{}", t.m);
        assert!(t.warping.max_abs() < 1e-8);
    }

    #[test]
    fn square_torsion_has_warping() {
        let sq = CrossSection::square(1.0).unwrap();
        let t = torsion_constant(&sq, 0.05).unwrap();
        let bound = sq.second_moments[0][0] + sq.second_moments[1][1];
        assert!(t.m > 0.0 && t.m < bound - 1e-3, "{} vs {bound}", t.m);
        // Saint-Venant: J = 0.1406 a⁴ for the unit square
        assert!((t.m - 0.1406).abs() < 2e-3, "{}", t.m);
    }

    #[test]
    fn disc_aniso_matrix_matches_closed_form() {
        let c = aniso_cell_matrix(&CrossSection::unit_disc(), 1.0, 0.05).unwrap();
        let expect = [
            [3.0 / 16.0, 0.0, 0.0, 0.0],
            [0.0, 7.0 / 32.0, 0.0, 1.0 / 8.0],
            [0.0, 0.0, 0.75, 0.0],
            [0.0, 1.0 / 8.0, 0.0, 0.5],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((c.c_direct[i][j] - expect[i][j]).abs() < 5e-3, "C{}{} = {}", i + 1, j + 1, c.c_direct[i][j]);
            }
        }
        assert!(c.phi[3].l2_norm < 1e-8);
        assert!(c.fields_gap < 5e-3);
        assert!((c.literal_second_flux_residual + std::f64::consts::PI).abs() < 1e-2);
        assert!((c.delta_ratio() + 0.25).abs() < 1e-2);
    }

    #[test]
    fn gauge_invariance() {
        let sq = CrossSection::square(1.0).unwrap();
        let mesh = mesh_cell(&sq, 0.1).unwrap();
        let load = CellLoad::FiniteK { a: 0.4, beta: -0.8 };
        let r = ghom_on_mesh(&iso(), &mesh, sq.diameter, 1.5, load, SolverOptions::default()).unwrap();
        let mut q = r.minimizer.clone();
        q.add_constant(&[0.3, -1.2, 2.5]);
        let e = cell_energy_of(&iso(), &mesh, sq.diameter, 1.5, load, &q).unwrap();
        assert!((e - r.ghom_value).abs() <= 1e-12 * r.ghom_value);
    }

    #[test]
    fn soft_density_zero_and_homogeneity() {
        let s = CrossSection::disc(0.25).unwrap();
        let mesh = mesh_periodic_cell(&s, 0.08).unwrap();
        let opts = SolverOptions::default();
        let z = soft_density_on_mesh(&iso(), &mesh, s.diameter, [0.0; 3], 0.0, opts).unwrap();
        assert!(z.value.abs() < 1e-14);
        let a = [0.3, -0.2, 0.5];
        let v1 = soft_density_on_mesh(&iso(), &mesh, s.diameter, a, 0.7, opts).unwrap().value;
        let v2 = soft_density_on_mesh(&iso(), &mesh, s.diameter, a.map(|x| 2.5 * x), 1.75, opts).unwrap().value;
        assert!(v1 > 0.0);
        assert!((v2 - 6.25 * v1).abs() < 1e-10 * v2, "{v1} {v2}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn cell_form_is_symmetric_psd(l in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let sq = CrossSection::square(1.0).unwrap();
            let mesh = mesh_cell(&sq, 0.2).unwrap();
            let g = iso();
            let s = CellSolver::new(&g, &mesh, sq.diameter, 1.0, CellRegime::FiniteKappa).unwrap();
            let q = s.quadratic_form().unwrap();
            for i in 0..4 { for j in 0..4 { prop_assert!((q[i][j] - q[j][i]).abs() < 1e-12); } }
            let direct = s.value(&l).unwrap();
            let via = quadratic_value(&q, &l);
            prop_assert!(direct >= -1e-12);
            prop_assert!((direct - via).abs() < 1e-9 * (1.0 + direct));
        }
    }
}
