//! Capacities `cap^f(a, α; S, V)` and the capacity densities built from them.
//!
//! The capacity is the minimal energy `∫_V f(e_y(ψ))` over fields vanishing
//! on `∂V` and equal to the rigid motion `a + (2/diam S) α∧y` on `S`. It is
//! computed on annulus meshes of `V = R·D ∖ S`; inside `S` the rigid motion
//! has constant strain, whose energy is added analytically.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::energy::{EnergyDensity, SymMat3};
use crate::error::{Error, Result};
use crate::fem::{
    self, Constraint, Diagnostics, DiscreteField, DofMap, EnergyFunctional, Kinematics, ScalarPower, SolverOptions,
};
use crate::geometry::{self, mesh_annulus, mesh_annulus_nested, CrossSection, Grading, Mesh2D, Point, VertexTag};
use crate::regimes::RegimeReport;

/// Default mesh size relative to the reference cross-section.
pub const DEFAULT_H: f64 = 0.05;

/// Default exponents `k` of the `p = 2` sequence `r = 2^{-k}`.
pub const DEFAULT_P2_LADDER: [u32; 9] = [6, 7, 8, 9, 10, 11, 12, 13, 14];

/// Default outer radii of plane-limit ladders.
pub const DEFAULT_PLANE_LADDER: [f64; 4] = [4.0, 8.0, 16.0, 32.0];

#[derive(Clone, Debug)]
pub struct CapacityQuery {
    pub density: EnergyDensity,
    pub section: CrossSection,
    pub a: [f64; 3],
    /// Rescaled angular velocity `α`; the theory only uses `α = ζ e₃`.
    pub alpha: [f64; 3],
    pub outer_radius: f64,
    pub h: f64,
    pub grading: Grading,
    pub solver: SolverOptions,
}

impl CapacityQuery {
    pub fn new(density: EnergyDensity, section: CrossSection, a: [f64; 3], zeta: f64, outer_radius: f64) -> Self {
        Self {
            density,
            section,
            a,
            alpha: [0.0, 0.0, zeta],
            outer_radius,
            h: DEFAULT_H,
            grading: Grading::log(),
            solver: SolverOptions::default(),
        }
    }

    pub fn with_mesh_size(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn with_grading(mut self, grading: Grading) -> Self {
        self.grading = grading;
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CapacityResult {
    pub value: f64,
    /// Energy of the rigid motion inside `S` (zero when `α ∥ e₃`).
    pub rigid_energy: f64,
    pub minimizer: DiscreteField,
    pub mesh_h: f64,
    pub domain_r: f64,
    pub num_vertices: usize,
    pub num_triangles: usize,
    pub diagnostics: Diagnostics,
}

/// `a + (2/diam) α∧y` at a planar point `y`.
pub fn rigid_value(a: [f64; 3], alpha: [f64; 3], diam: f64, y: Point) -> [f64; 3] {
    let k = 2.0 / diam;
    [a[0] - k * alpha[2] * y[1], a[1] + k * alpha[2] * y[0], a[2] + k * (alpha[0] * y[1] - alpha[1] * y[0])]
}

/// Constant strain of the rigid motion `a + (2/diam) α∧y`.
pub fn rigid_strain(alpha: [f64; 3], diam: f64) -> SymMat3 {
    let k = 2.0 / diam;
    SymMat3::new(0.0, 0.0, 0.0, 0.0, -0.5 * k * alpha[1], 0.5 * k * alpha[0])
}

/// Extra constraints for capacity solves on a fixed mesh.
#[derive(Clone, Default)]
pub struct MeshConstraints {
    /// Vertices with `|y| ≥ R` are clamped to zero (`V = R·D` on a larger mesh).
    pub outer_cutoff: Option<f64>,
    /// Vertices in this region follow the rigid motion (enlarged rigid inclusion).
    pub rigid_region: Option<Arc<dyn Fn(Point) -> bool + Send + Sync>>,
}

fn capacity_dofs(mesh: &Mesh2D, diam: f64, a: [f64; 3], alpha: [f64; 3], extra: &MeshConstraints) -> DofMap {
    DofMap::build(mesh, 3, |v, c| {
        let y = mesh.vertices[v];
        let rigid = mesh.tags[v] == VertexTag::InnerS || extra.rigid_region.as_ref().is_some_and(|r| r(y));
        let outer = mesh.tags[v] == VertexTag::OuterV
            || extra.outer_cutoff.is_some_and(|r| geometry::norm(y) >= r * (1.0 - 1e-9));
        if outer {
            Constraint::Fixed(0.0)
        } else if rigid {
            Constraint::Fixed(rigid_value(a, alpha, diam, y)[c])
        } else {
            Constraint::Free
        }
    })
}

/// Capacity on a prepared annulus-type mesh whose hole is the discretized `S`.
pub fn capacity_on_mesh(
    density: &EnergyDensity,
    mesh: &Mesh2D,
    diam: f64,
    a: [f64; 3],
    alpha: [f64; 3],
    extra: &MeshConstraints,
    solver: SolverOptions,
) -> Result<CapacityResult> {
    let dofs = capacity_dofs(mesh, diam, a, alpha, extra);
    let fun = EnergyFunctional::new(mesh, density, Kinematics::PlanarSym, dofs)?;
    let min = if a == [0.0; 3] && alpha == [0.0; 3] {
        // zero is admissible and optimal
        let u = vec![0.0; fun.nfree()];
        fem::Minimum {
            energy: 0.0,
            field: DiscreteField::from_free(&fun.dofs, u),
            diagnostics: Diagnostics {
                iterations: 0,
                converged: true,
                grad_norm: 0.0,
                regularized_energy: 0.0,
                history: Vec::new(),
                ndofs: fun.nfree(),
            },
        }
    } else {
        fem::minimize(&fun, solver, None)?
    };
    let rigid_energy = mesh.hole_area() * density.eval(&rigid_strain(alpha, diam));
    Ok(CapacityResult {
        value: min.energy + rigid_energy,
        rigid_energy,
        minimizer: min.field,
        mesh_h: max_edge(mesh),
        domain_r: extra.outer_cutoff.unwrap_or_else(|| outer_radius(mesh)),
        num_vertices: mesh.num_vertices(),
        num_triangles: mesh.num_triangles(),
        diagnostics: min.diagnostics,
    })
}

/// `cap^f(a, α; S, R·D)`.
pub fn capacity(q: &CapacityQuery) -> Result<CapacityResult> {
    let mesh = mesh_annulus(&q.section, q.outer_radius, q.h, q.grading)?;
    let mut r = capacity_on_mesh(
        &q.density,
        &mesh,
        q.section.diameter,
        q.a,
        q.alpha,
        &MeshConstraints::default(),
        q.solver,
    )?;
    r.domain_r = q.outer_radius;
    Ok(r)
}

fn max_edge(mesh: &Mesh2D) -> f64 {
    mesh.triangles
        .iter()
        .flat_map(|t| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
        .map(|(a, b)| geometry::dist(mesh.vertices[a], mesh.vertices[b]))
        .fold(0.0, f64::max)
}

fn outer_radius(mesh: &Mesh2D) -> f64 {
    mesh.vertices.iter().map(|p| geometry::norm(*p)).fold(0.0, f64::max)
}

/// Quadratic capacity solver: one factorization serves every `(a, ζ)`.
pub struct CapacitySolver<'m> {
    mesh: &'m Mesh2D,
    diam: f64,
    density: EnergyDensity,
    functional: EnergyFunctional<'m>,
    factorization: fem::linalg::Factorization,
}

impl<'m> CapacitySolver<'m> {
    pub fn new(density: &'m EnergyDensity, mesh: &'m Mesh2D, diam: f64) -> Result<Self> {
        if !density.is_quadratic() {
            return Err(Error::Unsupported("a reusable capacity factorization needs a quadratic density".into()));
        }
        let dofs = capacity_dofs(mesh, diam, [0.0; 3], [0.0; 3], &MeshConstraints::default());
        let functional = EnergyFunctional::new(mesh, density, Kinematics::PlanarSym, dofs)?;
        let factorization = functional.factorize(&vec![0.0; functional.nfree()])?;
        Ok(Self { mesh, diam, density: density.clone(), functional, factorization })
    }

    pub fn solve(&self, a: [f64; 3], zeta: f64) -> Result<f64> {
        let alpha = [0.0, 0.0, zeta];
        let dofs = capacity_dofs(self.mesh, self.diam, a, alpha, &MeshConstraints::default());
        let f = self.functional.with_dofs(dofs);
        let m = fem::minimize_quadratic_with(&f, &self.factorization)?;
        Ok(m.energy + self.mesh.hole_area() * self.density.eval(&rigid_strain(alpha, self.diam)))
    }

    /// Symmetric matrix `K` with `cap(a, ζ) = (a, ζ)ᵀ K (a, ζ)`, by polarization.
    pub fn quadratic_form(&self) -> Result<[[f64; 4]; 4]> {
        let unit = |i: usize| -> ([f64; 3], f64) {
            let mut a = [0.0; 3];
            if i < 3 {
                a[i] = 1.0;
                (a, 0.0)
            } else {
                (a, 1.0)
            }
        };
        let mut diag = [0.0; 4];
        for (i, d) in diag.iter_mut().enumerate() {
            let (a, z) = unit(i);
            *d = self.solve(a, z)?;
        }
        let mut k = [[0.0; 4]; 4];
        for i in 0..4 {
            k[i][i] = diag[i];
            for j in 0..i {
                let (ai, zi) = unit(i);
                let (aj, zj) = unit(j);
                let s = self.solve(std::array::from_fn(|c| ai[c] + aj[c]), zi + zj)?;
                k[i][j] = 0.5 * (s - diag[i] - diag[j]);
                k[j][i] = k[i][j];
            }
        }
        Ok(k)
    }
}

/// `c^{f,S}_{r,R}(a) = |log r| · cap^f(a, 0; rS, R·D)` for one `(r, R)`.
#[derive(Clone, Debug, Serialize)]
pub struct ScaledCapacity {
    pub r: f64,
    pub big_r: f64,
    pub h: f64,
    /// `cap^f(a, 0; rS, R·D)`.
    pub value: f64,
    pub scaled_value: f64,
    /// `r < R` and `R·√|log r| < 1`.
    pub admissible: bool,
    pub num_vertices: usize,
}

/// `R_r = 1/log(1/r)`.
pub fn default_outer_radius(r: f64) -> f64 {
    1.0 / (1.0 / r).ln()
}

/// Computed on the reference annulus `S ⊂ (R/r)·D`; the 2-homogeneous energy
/// makes the capacity invariant under the similarity `y ↦ y/r`.
pub fn scaled_capacity_p2(f: &EnergyDensity, section: &CrossSection, r: f64, big_r: f64, a: [f64; 3], h: f64) -> Result<ScaledCapacity> {
    if f.exponent() != 2.0 {
        return Err(Error::InvalidParameter(format!("scaled capacity needs p = 2, got p = {}", f.exponent())));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParameter(format!("r must lie in (0, 1), got {r}")));
    }
    let q = CapacityQuery::new(f.recession()?, section.clone(), a, 0.0, big_r / r).with_mesh_size(h);
    let res = capacity(&q)?;
    let log_r = r.ln().abs();
    Ok(ScaledCapacity {
        r,
        big_r,
        h,
        value: res.value,
        scaled_value: log_r * res.value,
        admissible: r < big_r && big_r * log_r.sqrt() < 1.0,
        num_vertices: res.num_vertices,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct P2Ladder {
    pub points: Vec<ScaledCapacity>,
    /// `lim |log r| cap` from the fit `1/cap = A·log(R/r) + B` (limit `1/A`).
    pub extrapolated: f64,
    /// Change of the extrapolated limit when the coarsest point is dropped.
    pub error_estimate: f64,
}

/// The sequence `r = 2^{-k}`, `R = 1/log(1/r)`, solved concurrently.
pub fn p2_ladder(f: &EnergyDensity, section: &CrossSection, a: [f64; 3], ks: &[u32], h: f64) -> Result<P2Ladder> {
    let mut points: Vec<ScaledCapacity> = ks
        .par_iter()
        .map(|&k| {
            let r = 2f64.powi(-(k as i32));
            scaled_capacity_p2(f, section, r, default_outer_radius(r), a, h)
        })
        .collect::<Result<_>>()?;
    points.sort_by(|x, y| y.r.partial_cmp(&x.r).unwrap());
    let fit = |pts: &[ScaledCapacity]| -> f64 {
        let xs: Vec<f64> = pts.iter().map(|p| (p.big_r / p.r).ln()).collect();
        let ys: Vec<f64> = pts.iter().map(|p| 1.0 / p.value).collect();
        1.0 / linear_fit(&xs, &ys).0
    };
    let (extrapolated, error_estimate) = if points.len() >= 3 {
        let all = fit(&points);
        let tail = fit(&points[1..]);
        (all, (all - tail).abs())
    } else {
        let last = points.last().map_or(f64::NAN, |p| p.scaled_value);
        (last, f64::NAN)
    };
    Ok(P2Ladder { points, extrapolated, error_estimate })
}

/// Least-squares line `y = slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_fit(&lx, &ly).0
}

/// Extrapolants `(2^q v_{i+1} − v_i)/(2^q − 1)` of a sequence on radii
/// doubling at each step, with errors `∝ R^{-q}`.
pub fn richardson(values: &[f64], ratio: f64, q: f64) -> Vec<f64> {
    let w = ratio.powf(q);
    values.windows(2).map(|v| (w * v[1] - v[0]) / (w - 1.0)).collect()
}

/// Capacities on `R·D` for every radius of a ladder, on one nested mesh.
///
/// The mesh contains the circle of every ladder radius; the problem on
/// `R·D` clamps all vertices outside it. The discrete spaces are therefore
/// nested and the values are exactly non-increasing in `R`.
pub fn capacity_ladder(
    f: &EnergyDensity,
    section: &CrossSection,
    a: [f64; 3],
    zeta: f64,
    radii: &[f64],
    h: f64,
    solver: SolverOptions,
) -> Result<Vec<(f64, CapacityResult)>> {
    let mut radii = radii.to_vec();
    radii.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mesh = mesh_annulus_nested(section, &radii, h, Grading::log())?;
    let mut out: Vec<(f64, CapacityResult)> = radii
        .par_iter()
        .map(|&r| {
            let extra = MeshConstraints { outer_cutoff: Some(r), rigid_region: None };
            capacity_on_mesh(f, &mesh, section.diameter, a, [0.0, 0.0, zeta], &extra, solver).map(|c| (r, c))
        })
        .collect::<Result<_>>()?;
    out.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct PlaneLimit {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// Richardson extrapolants of successive pairs.
    pub extrapolants: Vec<f64>,
    pub limit: f64,
    /// `|E_last − E_prev|` of the last two extrapolants.
    pub error_estimate: f64,
    pub last_decrement: f64,
    /// Decay exponent `q = (2−p)/(p−1)` of the truncation error.
    pub exponent_q: f64,
}

/// `cap^{f^{∞,p}}(a, ζe₃; S, ℝ²)` for `1 < p < 2` from a radius ladder.
pub fn capacity_plane_limit(
    f: &EnergyDensity,
    section: &CrossSection,
    a: [f64; 3],
    zeta: f64,
    radii: &[f64],
    h: f64,
) -> Result<PlaneLimit> {
    let p = f.exponent();
    if p >= 2.0 {
        return Err(Error::InvalidParameter(format!("plane capacity limit needs p < 2, got {p}")));
    }
    if radii.len() < 3 {
        return Err(Error::InvalidParameter("plane limit needs at least three radii".into()));
    }
    let finf = f.recession()?;
    let solver = SolverOptions { tol: 1e-10, max_iter: 200 };
    let ladder = capacity_ladder(&finf, section, a, zeta, radii, h, solver)?;
    let radii: Vec<f64> = ladder.iter().map(|l| l.0).collect();
    let values: Vec<f64> = ladder.iter().map(|l| l.1.value).collect();
    let slack = 1e-8 * values[0].abs().max(1e-300);
    if values.windows(2).any(|w| w[1] > w[0] + slack) {
        return Err(Error::Inconsistent(format!("capacities increase along the radius ladder: {values:?}")));
    }
    let ratio = radii[1] / radii[0];
    let q = (2.0 - p) / (p - 1.0);
    let extrapolants = richardson(&values, ratio, q);
    let n = extrapolants.len();
    let limit = extrapolants[n - 1];
    let error_estimate = if n >= 2 { (extrapolants[n - 1] - extrapolants[n - 2]).abs() } else { f64::NAN };
    let last_decrement = values[values.len() - 2] - values[values.len() - 1];
    Ok(PlaneLimit { radii, values, extrapolants, limit, error_estimate, last_decrement, exponent_q: q })
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub p: f64,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub monotone: bool,
    /// Slope of `log cap` against `log (R^s − 1)^{p−1}`, `s = (p−2)/(p−1)`.
    pub slope: f64,
    /// Same fit applied to the scalar radial closed form.
    pub radial_slope: f64,
    /// `cap(0, e₃; D, R·D)` on the same ladder (reported, no contract).
    pub torsion_values: Vec<f64>,
}

/// Decay of `cap(a, 0; D, R·D)` for `p > 2`.
pub fn capacity_decay_p_gt2(f: &EnergyDensity, a: [f64; 3], radii: &[f64], h: f64) -> Result<DecayReport> {
    let p = f.exponent();
    if p <= 2.0 {
        return Err(Error::InvalidParameter(format!("decay study needs p > 2, got {p}")));
    }
    let disc = CrossSection::unit_disc();
    let solver = SolverOptions { tol: 1e-10, max_iter: 200 };
    let trans = capacity_ladder(f, &disc, a, 0.0, radii, h, solver)?;
    let tors = capacity_ladder(f, &disc, [0.0; 3], 1.0, radii, h, solver)?;
    let radii: Vec<f64> = trans.iter().map(|t| t.0).collect();
    let values: Vec<f64> = trans.iter().map(|t| t.1.value).collect();
    let s = (p - 2.0) / (p - 1.0);
    let xs: Vec<f64> = radii.iter().map(|r| (r.powf(s) - 1.0).powf(p - 1.0)).collect();
    let radial: Vec<f64> = radii.iter().map(|r| radial_closed_form(p, 1.0, *r)).collect();
    Ok(DecayReport {
        p,
        monotone: values.windows(2).all(|w| w[1] < w[0]),
        slope: loglog_slope(&xs, &values),
        radial_slope: loglog_slope(&xs, &radial),
        torsion_values: tors.iter().map(|t| t.1.value).collect(),
        radii,
        values,
    })
}

/// `(s/(R₂^s − R₁^s))^{p−1}`, `s = (p−2)/(p−1)`: the radial `p`-capacity of
/// the annulus divided by `2π` (`log(R₂/R₁)^{-1}` at `p = 2`).
pub fn radial_closed_form(p: f64, r1: f64, r2: f64) -> f64 {
    if p == 2.0 {
        return 1.0 / (r2 / r1).ln();
    }
    let s = (p - 2.0) / (p - 1.0);
    (s / (r2.powf(s) - r1.powf(s))).powf(p - 1.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct RadialCheck {
    pub p: f64,
    /// `∫ |∇η|^p / 2π` for the discrete minimizer.
    pub fem: f64,
    pub closed_form: f64,
    pub iterations: usize,
}

/// Scalar capacity of the annulus `R₁ < |y| < R₂` for `|∇η|^p`.
pub fn radial_scalar_capacity(p: f64, r1: f64, r2: f64, h: f64) -> Result<RadialCheck> {
    let section = CrossSection::disc(r1)?;
    let mesh = mesh_annulus(&section, r2, h, Grading::log())?;
    let dens = ScalarPower { c: 1.0, p };
    let dofs = DofMap::build(&mesh, 1, |v, _| match mesh.tags[v] {
        VertexTag::InnerS => Constraint::Fixed(1.0),
        VertexTag::OuterV => Constraint::Fixed(0.0),
        _ => Constraint::Free,
    });
    let fun = EnergyFunctional::new(&mesh, &dens, Kinematics::Gradient, dofs)?;
    let m = fem::minimize(&fun, SolverOptions { tol: 1e-10, max_iter: 200 }, None)?;
    Ok(RadialCheck {
        p,
        fem: m.energy / (2.0 * std::f64::consts::PI),
        closed_form: radial_closed_form(p, r1, r2),
        iterations: m.diagnostics.iterations,
    })
}

/// Value of a capacity density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum DensityValue {
    Finite(f64),
    Infinite,
}

impl DensityValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            DensityValue::Finite(v) => Some(v),
            DensityValue::Infinite => None,
        }
    }
}

/// Numerical settings of capacity densities.
#[derive(Clone, Debug, Serialize)]
pub struct DensitySettings {
    pub h: f64,
    pub p2_ladder: Vec<u32>,
    pub plane_ladder: Vec<f64>,
}

impl Default for DensitySettings {
    fn default() -> Self {
        Self { h: DEFAULT_H, p2_ladder: DEFAULT_P2_LADDER.to_vec(), plane_ladder: DEFAULT_PLANE_LADDER.to_vec() }
    }
}

/// The limit capacity density `c^f(a, ζ)`.
#[derive(Clone, Debug)]
pub enum CapacityDensity {
    /// `1 < p < 2`: `γ cap^{f^{∞,p}}(a, ζe₃; S, ℝ²)`, evaluated on demand.
    PlaneCapacity { gamma: f64, recession: EnergyDensity, section: CrossSection, settings: DensitySettings },
    /// `p = 2`: `γ aᵀ K a` for `ζ = 0`, `+∞` otherwise.
    QuadraticTranslation { gamma: f64, matrix: [[f64; 3]; 3] },
    /// `p > 2`: indicator of `(0, 0)`.
    Indicator,
}

impl CapacityDensity {
    pub fn eval(&self, a: [f64; 3], zeta: f64) -> Result<DensityValue> {
        match self {
            CapacityDensity::PlaneCapacity { gamma, recession, section, settings } => {
                if a == [0.0; 3] && zeta == 0.0 {
                    return Ok(DensityValue::Finite(0.0));
                }
                let lim = capacity_plane_limit(recession, section, a, zeta, &settings.plane_ladder, settings.h)?;
                Ok(DensityValue::Finite(gamma * lim.limit))
            }
            CapacityDensity::QuadraticTranslation { gamma, matrix } => {
                if zeta != 0.0 {
                    return Ok(DensityValue::Infinite);
                }
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += a[i] * matrix[i][j] * a[j];
                    }
                }
                Ok(DensityValue::Finite(gamma * s))
            }
            CapacityDensity::Indicator => Ok(if a == [0.0; 3] && zeta == 0.0 {
                DensityValue::Finite(0.0)
            } else {
                DensityValue::Infinite
            }),
        }
    }
}

/// Builds `c^f` for the exponent and `γ^{(p)}` of a regime.
pub fn capacity_density(
    f: &EnergyDensity,
    section: &CrossSection,
    regime: &RegimeReport,
    settings: &DensitySettings,
) -> Result<CapacityDensity> {
    let p = f.exponent();
    if p > 2.0 {
        return Ok(CapacityDensity::Indicator);
    }
    let gamma = regime.gamma_p;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("capacity density needs 0 < γ < ∞, got γ = {gamma}")));
    }
    if p < 2.0 {
        return Ok(CapacityDensity::PlaneCapacity {
            gamma,
            recession: f.recession()?,
            section: section.clone(),
            settings: settings.clone(),
        });
    }
    let finf = f.recession()?;
    if !finf.is_quadratic() {
        return Err(Error::Unsupported("p = 2 capacity density needs a quadratic recession density".into()));
    }
    // the limit is a quadratic form in a: polarize the extrapolated values
    let eval = |a: [f64; 3]| p2_ladder(&finf, section, a, &settings.p2_ladder, settings.h).map(|l| l.extrapolated);
    let e = |i: usize| -> [f64; 3] { std::array::from_fn(|c| if c == i { 1.0 } else { 0.0 }) };
    let diag: Vec<f64> = (0..3).map(|i| eval(e(i))).collect::<Result<_>>()?;
    let mut matrix = [[0.0; 3]; 3];
    for i in 0..3 {
        matrix[i][i] = diag[i];
        for j in 0..i {
            let s = eval(std::array::from_fn(|c| e(i)[c] + e(j)[c]))?;
            matrix[i][j] = 0.5 * (s - diag[i] - diag[j]);
            matrix[j][i] = matrix[i][j];
        }
    }
    Ok(CapacityDensity::QuadraticTranslation { gamma, matrix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_data_gives_zero() {
        let f = EnergyDensity::isotropic(1.0, 1.0).unwrap();
        let q = CapacityQuery::new(f, CrossSection::unit_disc(), [0.0; 3], 0.0, 3.0).with_mesh_size(0.3);
        let r = capacity(&q).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.minimizer.max_abs(), 0.0);
    }

    #[test]
    fn rigid_motion_helpers() {
        let v = rigid_value([1.0, 2.0, 3.0], [0.0, 0.0, 0.5], 2.0, [1.0, 0.0]);
        assert_eq!(v, [1.0, 2.5, 3.0]);
        assert_eq!(rigid_strain([0.0, 0.0, 1.0], 2.0), SymMat3::ZERO);
    }

    #[test]
    fn antiplane_capacity_matches_logarithm() {
        // ψ = (0, 0, u): f = μ/2 |∇u|², so cap = π μ / log(R/r)
        let mu = 1.7;
        let f = EnergyDensity::isotropic(0.4, mu).unwrap();
        let q = CapacityQuery::new(f, CrossSection::unit_disc(), [0.0, 0.0, 1.0], 0.0, 8.0).with_mesh_size(0.05);
        let r = capacity(&q).unwrap();
        let exact = PI * mu / 8f64.ln();
        assert!((r.value - exact).abs() < 5e-3 * exact, "{} vs {exact}", r.value);
        assert!(r.value >= exact * (1.0 - 1e-3));
    }

    #[test]
    fn torsion_capacity_matches_rotation_field() {
        // g(ρ) = Aρ + B/ρ, energy 2πμζ² R²/(R² − 1)
        let mu = 1.0;
        let f = EnergyDensity::isotropic(2.0, mu).unwrap();
        let q = CapacityQuery::new(f, CrossSection::unit_disc(), [0.0; 3], 0.8, 4.0).with_mesh_size(0.05);
        let r = capacity(&q).unwrap();
        let exact = 2.0 * PI * mu * 0.64 * 16.0 / 15.0;
        assert!((r.value - exact).abs() < 5e-3 * exact, "{} vs {exact}", r.value);
    }

    #[test]
    fn quadratic_form_is_diagonal_for_isotropic_disc() {
        let f = EnergyDensity::isotropic(1.0, 1.0).unwrap();
        let mesh = mesh_annulus(&CrossSection::unit_disc(), 6.0, 0.1, Grading::log()).unwrap();
        let s = CapacitySolver::new(&f, &mesh, 2.0).unwrap();
        let k = s.quadratic_form().unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(k[i][j].abs() < 1e-3 * k[i][i].min(k[j][j]), "K[{i}][{j}] = {}", k[i][j]);
                }
            }
        }
        assert!((k[0][0] - k[1][1]).abs() < 1e-2 * k[0][0]);
    }

    #[test]
    fn solver_reuse_matches_direct_solve() {
        let f = EnergyDensity::isotropic(0.5, 1.0).unwrap();
        let sec = CrossSection::square(1.5).unwrap();
        let mesh = mesh_annulus(&sec, 4.0, 0.2, Grading::log()).unwrap();
        let s = CapacitySolver::new(&f, &mesh, sec.diameter).unwrap();
        let direct = capacity_on_mesh(
            &f,
            &mesh,
            sec.diameter,
            [0.3, -0.2, 0.5],
            [0.0, 0.0, 0.7],
            &MeshConstraints::default(),
            SolverOptions::default(),
        )
        .unwrap();
        let reused = s.solve([0.3, -0.2, 0.5], 0.7).unwrap();
        assert!((direct.value - reused).abs() < 1e-10 * direct.value);
    }

    #[test]
    fn radial_closed_form_values() {
        assert!((radial_closed_form(3.0, 1.0, 2.0) - 1.4571).abs() < 1e-4);
        assert!((radial_closed_form(1.5, 1.0, 2.0) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn radial_fem_is_close_on_coarse_mesh() {
        let r = radial_scalar_capacity(3.0, 1.0, 2.0, 0.1).unwrap();
        assert!((r.fem - r.closed_form).abs() < 0.03 * r.closed_form);
    }

    #[test]
    fn richardson_removes_leading_term() {
        let vals: Vec<f64> = [4.0, 8.0, 16.0].iter().map(|r: &f64| 2.0 + 3.0 / r).collect();
        let e = richardson(&vals, 2.0, 1.0);
        assert!(e.iter().all(|x| (x - 2.0).abs() < 1e-12));
    }

    #[test]
    fn ladder_values_are_monotone() {
        let f = EnergyDensity::p_norm(1.0, 1.5).unwrap();
        let l = capacity_ladder(&f, &CrossSection::unit_disc(), [1.0, 0.0, 0.0], 0.0, &[2.0, 4.0, 8.0], 0.3, SolverOptions::default())
            .unwrap();
        assert!(l.windows(2).all(|w| w[1].1.value <= w[0].1.value + 1e-12));
    }

    #[test]
    fn general_alpha_adds_rigid_strain_energy() {
        let f = EnergyDensity::isotropic(1.0, 1.0).unwrap();
        let mesh = mesh_annulus(&CrossSection::unit_disc(), 3.0, 0.3, Grading::log()).unwrap();
        let r = capacity_on_mesh(&f, &mesh, 2.0, [0.0; 3], [1.0, 0.0, 0.0], &MeshConstraints::default(), SolverOptions::default())
            .unwrap();
        // M23 = 1/2 inside S: f = 2μ·(1/2)² = 1/2 per unit area
        assert!((r.rigid_energy - 0.5 * mesh.hole_area()).abs() < 1e-12);
        assert!(r.value > r.rigid_energy);
    }
}
