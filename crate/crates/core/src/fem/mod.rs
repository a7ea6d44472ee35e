//! Linear finite elements on triangulations and convex minimization.
//!
//! A problem is described by an [`EnergyFunctional`]: a mesh, a local
//! density, a kinematic map from nodal values to the density argument, a
//! [`DofMap`] eliminating constrained values, optional affine offsets of the
//! density argument (loads of cell problems) and optional linear terms.
//! [`minimize`] solves quadratic problems with one linear solve and the rest
//! with a damped Newton method.

pub mod linalg;

use std::sync::{Arc, OnceLock};

use serde::Serialize;

use crate::energy::{EnergyDensity, Mat6};
use crate::error::{ConvergenceFailure, Error, Result};
use crate::geometry::{Mesh2D, Point, VertexTag};
use linalg::{Factorization, SparseMat};

/// Density of the local argument `x` (strain coordinates or a gradient).
pub trait LocalDensity: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Regularized value, the objective actually minimized.
    fn value_reg(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], g: &mut [f64]);
    /// Row-major `dim × dim` Hessian.
    fn hessian(&self, x: &[f64], h: &mut [f64]);
    /// Hessian with concave radial parts linearized (equal to `hessian`
    /// unless the density is sub-quadratic somewhere).
    fn majorant_hessian(&self, x: &[f64], h: &mut [f64]) {
        self.hessian(x, h)
    }
    fn has_majorant(&self) -> bool {
        false
    }
    fn is_quadratic(&self) -> bool;
    /// Quadratic density used to build the initial guess of Newton iterations.
    fn quadratic_companion(&self) -> Option<Box<dyn LocalDensity>>;
}

impl LocalDensity for EnergyDensity {
    fn dim(&self) -> usize {
        6
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(&crate::energy::SymMat3::from_coords(to6(x)))
    }
    fn value_reg(&self, x: &[f64]) -> f64 {
        self.eval_reg(&crate::energy::SymMat3::from_coords(to6(x)))
    }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        g.copy_from_slice(&self.coord_gradient(&to6(x)));
    }
    fn hessian(&self, x: &[f64], h: &mut [f64]) {
        let m: Mat6 = self.coord_hessian(&to6(x));
        for i in 0..6 {
            h[6 * i..6 * i + 6].copy_from_slice(&m[i]);
        }
    }
    fn majorant_hessian(&self, x: &[f64], h: &mut [f64]) {
        let m: Mat6 = self.coord_majorant_hessian(&to6(x));
        for i in 0..6 {
            h[6 * i..6 * i + 6].copy_from_slice(&m[i]);
        }
    }
    fn has_majorant(&self) -> bool {
        self.is_subquadratic()
    }
    fn is_quadratic(&self) -> bool {
        EnergyDensity::is_quadratic(self)
    }
    fn quadratic_companion(&self) -> Option<Box<dyn LocalDensity>> {
        use crate::energy::DensityKind;
        match self.kind {
            DensityKind::PNorm { c, .. } | DensityKind::Blended { c, .. } => {
                Some(Box::new(EnergyDensity::p_norm(c, 2.0).expect("valid weight")))
            }
            _ => None,
        }
    }
}

fn to6(x: &[f64]) -> [f64; 6] {
    [x[0], x[1], x[2], x[3], x[4], x[5]]
}

/// `c |g|^p` on gradients of scalar fields, regularized like [`EnergyDensity`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarPower {
    pub c: f64,
    pub p: f64,
}

impl LocalDensity for ScalarPower {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.c * (x[0] * x[0] + x[1] * x[1]).powf(0.5 * self.p)
    }
    fn value_reg(&self, x: &[f64]) -> f64 {
        let s = x[0] * x[0] + x[1] * x[1];
        if self.p == 2.0 {
            return self.c * s;
        }
        let d = crate::energy::REGULARIZATION_DELTA;
        self.c * ((d * d + s).powf(0.5 * self.p) - d.powf(self.p))
    }
    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let d = crate::energy::REGULARIZATION_DELTA;
        let s = x[0] * x[0] + x[1] * x[1] + if self.p == 2.0 { 0.0 } else { d * d };
        let a = self.c * self.p * s.powf(0.5 * self.p - 1.0);
        g[0] = a * x[0];
        g[1] = a * x[1];
    }
    fn hessian(&self, x: &[f64], h: &mut [f64]) {
        let d = crate::energy::REGULARIZATION_DELTA;
        let s = x[0] * x[0] + x[1] * x[1] + if self.p == 2.0 { 0.0 } else { d * d };
        let a = self.c * self.p * s.powf(0.5 * self.p - 1.0);
        let b = if self.p == 2.0 { 0.0 } else { self.c * self.p * (self.p - 2.0) * s.powf(0.5 * self.p - 2.0) };
        h[0] = a + b * x[0] * x[0];
        h[1] = b * x[0] * x[1];
        h[2] = h[1];
        h[3] = a + b * x[1] * x[1];
    }
    fn majorant_hessian(&self, x: &[f64], h: &mut [f64]) {
        self.hessian(x, h);
        if self.p < 2.0 {
            let d = crate::energy::REGULARIZATION_DELTA;
            let s = x[0] * x[0] + x[1] * x[1] + d * d;
            let a = self.c * self.p * s.powf(0.5 * self.p - 1.0);
            h.copy_from_slice(&[a, 0.0, 0.0, a]);
        }
    }
    fn has_majorant(&self) -> bool {
        self.p < 2.0
    }
    fn is_quadratic(&self) -> bool {
        self.p == 2.0
    }
    fn quadratic_companion(&self) -> Option<Box<dyn LocalDensity>> {
        Some(Box::new(ScalarPower { c: self.c, p: 2.0 }))
    }
}

/// Map from nodal values to the density argument.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Kinematics {
    /// `ℝ³`-valued field, argument `e_y(ψ)` in strain coordinates.
    PlanarSym,
    /// Scalar field, argument `∇φ`.
    Gradient,
}

impl Kinematics {
    pub fn ncomp(self) -> usize {
        match self {
            Kinematics::PlanarSym => 3,
            Kinematics::Gradient => 1,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Kinematics::PlanarSym => 6,
            Kinematics::Gradient => 2,
        }
    }

    /// Row-major `dim × (3·ncomp)` matrix for shape gradients `dn[i] = ∇N_i`.
    fn element_matrix(self, dn: &[[f64; 2]; 3]) -> Vec<f64> {
        let nc = self.ncomp();
        let cols = 3 * nc;
        let mut b = vec![0.0; self.dim() * cols];
        match self {
            Kinematics::PlanarSym => {
                for (i, g) in dn.iter().enumerate() {
                    let (c1, c2, c3) = (3 * i, 3 * i + 1, 3 * i + 2);
                    b[c1] = g[0];
                    b[cols + c2] = g[1];
                    b[3 * cols + c1] = 0.5 * g[1];
                    b[3 * cols + c2] = 0.5 * g[0];
                    b[4 * cols + c3] = 0.5 * g[0];
                    b[5 * cols + c3] = 0.5 * g[1];
                }
            }
            Kinematics::Gradient => {
                for (i, g) in dn.iter().enumerate() {
                    b[i] = g[0];
                    b[cols + i] = g[1];
                }
            }
        }
        b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Slot {
    Free(usize),
    Fixed(f64),
}

/// What a vertex component is constrained to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Constraint {
    Free,
    Fixed(f64),
}

/// Elimination of constrained nodal values. Periodic slaves share the slot
/// of their master.
#[derive(Clone, Debug, Serialize)]
pub struct DofMap {
    pub ncomp: usize,
    pub slots: Vec<Slot>,
    pub nfree: usize,
}

impl DofMap {
    pub fn build(mesh: &Mesh2D, ncomp: usize, mut rule: impl FnMut(usize, usize) -> Constraint) -> Self {
        let nv = mesh.num_vertices();
        let mut slots = vec![Slot::Fixed(0.0); nv * ncomp];
        let mut nfree = 0;
        for v in 0..nv {
            if mesh.periodic_master(v).is_some() {
                continue;
            }
            for c in 0..ncomp {
                slots[v * ncomp + c] = match rule(v, c) {
                    Constraint::Free => {
                        nfree += 1;
                        Slot::Free(nfree - 1)
                    }
                    Constraint::Fixed(x) => Slot::Fixed(x),
                };
            }
        }
        for v in 0..nv {
            if let Some(m) = mesh.periodic_master(v) {
                for c in 0..ncomp {
                    slots[v * ncomp + c] = slots[m * ncomp + c];
                }
            }
        }
        Self { ncomp, slots, nfree }
    }

    /// Every component free (subject to periodic pairing).
    pub fn all_free(mesh: &Mesh2D, ncomp: usize) -> Self {
        Self::build(mesh, ncomp, |_, _| Constraint::Free)
    }

    pub fn has_fixed(&self) -> bool {
        self.slots.iter().any(|s| matches!(s, Slot::Fixed(_)))
    }

    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Free(i) => free[*i],
                Slot::Fixed(x) => *x,
            })
            .collect()
    }

    /// Same elimination pattern with every fixed value replaced.
    pub fn with_fixed_values(&self, mut value: impl FnMut(usize) -> f64) -> Self {
        let slots = self
            .slots
            .iter()
            .enumerate()
            .map(|(k, s)| match s {
                Slot::Fixed(_) => Slot::Fixed(value(k)),
                free => *free,
            })
            .collect();
        Self { ncomp: self.ncomp, slots, nfree: self.nfree }
    }
}

/// A field with `ncomp` values per vertex.
#[derive(Clone, Debug, Serialize)]
pub struct DiscreteField {
    pub ncomp: usize,
    /// All vertex values, `values[v * ncomp + c]`.
    pub values: Vec<f64>,
    /// Values of the free DOFs.
    pub dof_values: Vec<f64>,
}

impl DiscreteField {
    pub fn from_free(dofs: &DofMap, free: Vec<f64>) -> Self {
        Self { ncomp: dofs.ncomp, values: dofs.expand(&free), dof_values: free }
    }

    pub fn zeros(nv: usize, ncomp: usize) -> Self {
        Self { ncomp, values: vec![0.0; nv * ncomp], dof_values: Vec::new() }
    }

    pub fn at(&self, v: usize) -> &[f64] {
        &self.values[v * self.ncomp..(v + 1) * self.ncomp]
    }

    /// Area average of each component.
    pub fn mean(&self, mesh: &Mesh2D) -> Vec<f64> {
        let mut acc = vec![0.0; self.ncomp];
        let mut area = 0.0;
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let a = mesh.signed_area(t);
            area += a;
            for &v in tri {
                for c in 0..self.ncomp {
                    acc[c] += a / 3.0 * self.values[v * self.ncomp + c];
                }
            }
        }
        acc.iter().map(|x| x / area).collect()
    }

    /// `(∫ |field|²)^{1/2}` with the exact P1 mass matrix.
    pub fn l2_norm(&self, mesh: &Mesh2D) -> f64 {
        let mut s = 0.0;
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let a = mesh.signed_area(t);
            for c in 0..self.ncomp {
                let u: Vec<f64> = tri.iter().map(|&v| self.values[v * self.ncomp + c]).collect();
                let sum_sq: f64 = u.iter().map(|x| x * x).sum();
                let sum: f64 = u.iter().sum();
                s += a / 12.0 * (sum_sq + sum * sum);
            }
        }
        s.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    pub fn add_constant(&mut self, shift: &[f64]) {
        for (k, v) in self.values.iter_mut().enumerate() {
            *v += shift[k % self.ncomp];
        }
    }
}

pub type Offset = Arc<dyn Fn(Point) -> [f64; 6] + Send + Sync>;

/// Linear equality `Σ coeff_k · value_k = rhs` over full nodal indices.
#[derive(Clone, Debug)]
pub struct LinearConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub energy: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub regularized_energy: f64,
    pub history: Vec<IterationRecord>,
    pub ndofs: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 100 }
    }
}

struct Element {
    area: f64,
    dofs: Vec<usize>,
    b: Vec<f64>,
    qp: Vec<Point>,
}

/// Discrete energy `∫ W(B u + offset) − ⟨load, u⟩` over a mesh.
pub struct EnergyFunctional<'a> {
    pub mesh: &'a Mesh2D,
    pub density: &'a dyn LocalDensity,
    pub kinematics: Kinematics,
    pub dofs: DofMap,
    offset: Option<Offset>,
    load: Option<Vec<f64>>,
    constraints: Vec<LinearConstraint>,
    elements: Vec<Element>,
    symbolic: OnceLock<faer::sparse::linalg::solvers::SymbolicLlt<usize>>,
}

impl<'a> EnergyFunctional<'a> {
    pub fn new(mesh: &'a Mesh2D, density: &'a dyn LocalDensity, kinematics: Kinematics, dofs: DofMap) -> Result<Self> {
        if density.dim() != kinematics.dim() {
            return Err(Error::InvalidParameter(format!(
                "density of dimension {} does not match kinematics of dimension {}",
                density.dim(),
                kinematics.dim()
            )));
        }
        if dofs.ncomp != kinematics.ncomp() || dofs.slots.len() != mesh.num_vertices() * dofs.ncomp {
            return Err(Error::InvalidParameter("DOF map does not match mesh and kinematics".into()));
        }
        let mut f = Self {
            mesh,
            density,
            kinematics,
            dofs,
            offset: None,
            load: None,
            constraints: Vec::new(),
            elements: Vec::new(),
            symbolic: OnceLock::new(),
        };
        f.build_elements();
        Ok(f)
    }

    /// Adds a position-dependent term to the density argument.
    pub fn with_offset(mut self, offset: Offset) -> Self {
        self.offset = Some(offset);
        self.build_elements();
        self
    }

    /// Subtracts `⟨load, u⟩` (full nodal indexing) from the energy.
    pub fn with_load(mut self, load: Vec<f64>) -> Self {
        self.load = Some(load);
        self
    }

    pub fn with_constraints(mut self, constraints: Vec<LinearConstraint>) -> Self {
        self.constraints = constraints;
        self
    }

    /// Same problem with different fixed values (the Hessian pattern is shared).
    pub fn with_dofs(&self, dofs: DofMap) -> Self {
        let mut f = Self {
            mesh: self.mesh,
            density: self.density,
            kinematics: self.kinematics,
            dofs,
            offset: self.offset.clone(),
            load: self.load.clone(),
            constraints: self.constraints.clone(),
            elements: Vec::new(),
            symbolic: OnceLock::new(),
        };
        if let Some(s) = self.symbolic.get() {
            let _ = f.symbolic.set(s.clone());
        }
        f.build_elements();
        f
    }

    pub fn nfree(&self) -> usize {
        self.dofs.nfree
    }

    fn build_elements(&mut self) {
        let nc = self.kinematics.ncomp();
        let with_offset = self.offset.is_some();
        self.elements = self
            .mesh
            .triangles
            .iter()
            .enumerate()
            .map(|(t, tri)| {
                let p = tri.map(|v| self.mesh.vertices[v]);
                let area = self.mesh.signed_area(t);
                let dn = shape_gradients(&p, area);
                let dofs = tri.iter().flat_map(|&v| (0..nc).map(move |c| v * nc + c)).collect();
                let qp = if with_offset {
                    vec![mid(p[0], p[1]), mid(p[1], p[2]), mid(p[2], p[0])]
                } else {
                    vec![[(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]]
                };
                Element { area, dofs, b: self.kinematics.element_matrix(&dn), qp }
            })
            .collect();
    }

    fn local_args(&self, e: &Element, full: &[f64]) -> Vec<Vec<f64>> {
        let dim = self.kinematics.dim();
        let cols = e.dofs.len();
        let mut base = vec![0.0; dim];
        for r in 0..dim {
            base[r] = (0..cols).map(|c| e.b[r * cols + c] * full[e.dofs[c]]).sum();
        }
        e.qp
            .iter()
            .map(|q| {
                let mut x = base.clone();
                if let Some(o) = &self.offset {
                    let off = o(*q);
                    for r in 0..dim {
                        x[r] += off[r];
                    }
                }
                x
            })
            .collect()
    }

    fn load_term(&self, full: &[f64]) -> f64 {
        self.load.as_ref().map_or(0.0, |l| l.iter().zip(full).map(|(a, b)| a * b).sum())
    }

    /// Unregularized energy of the field with free values `u`.
    pub fn value(&self, u: &[f64]) -> f64 {
        self.value_full(&self.dofs.expand(u))
    }

    pub fn value_full(&self, full: &[f64]) -> f64 {
        let mut s = 0.0;
        for e in &self.elements {
            let w = e.area / e.qp.len() as f64;
            for x in self.local_args(e, full) {
                s += w * self.density.value(&x);
            }
        }
        s - self.load_term(full)
    }

    /// Energy restricted to a set of triangles, without the linear term.
    pub fn element_energy(&self, u: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
        let full = self.dofs.expand(u);
        let mut s = 0.0;
        for (t, e) in self.elements.iter().enumerate() {
            if !keep(t) {
                continue;
            }
            let w = e.area / e.qp.len() as f64;
            for x in self.local_args(e, &full) {
                s += w * self.density.value(&x);
            }
        }
        s
    }

    pub fn value_reg(&self, u: &[f64]) -> f64 {
        let full = self.dofs.expand(u);
        let mut s = 0.0;
        for e in &self.elements {
            let w = e.area / e.qp.len() as f64;
            for x in self.local_args(e, &full) {
                s += w * self.density.value_reg(&x);
            }
        }
        s - self.load_term(&full)
    }

    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let full = self.dofs.expand(u);
        let dim = self.kinematics.dim();
        let mut g = vec![0.0; self.dofs.nfree];
        let mut gl = vec![0.0; dim];
        for e in &self.elements {
            let cols = e.dofs.len();
            let w = e.area / e.qp.len() as f64;
            for x in self.local_args(e, &full) {
                self.density.gradient(&x, &mut gl);
                for c in 0..cols {
                    if let Slot::Free(i) = self.dofs.slots[e.dofs[c]] {
                        g[i] += w * (0..dim).map(|r| e.b[r * cols + c] * gl[r]).sum::<f64>();
                    }
                }
            }
        }
        if let Some(l) = &self.load {
            for (k, s) in self.dofs.slots.iter().enumerate() {
                if let Slot::Free(i) = s {
                    g[*i] -= l[k];
                }
            }
        }
        g
    }

    pub fn hessian(&self, u: &[f64]) -> Result<SparseMat> {
        self.hessian_with(u, false)
    }

    /// Hessian assembled from [`LocalDensity::majorant_hessian`] when `majorant`.
    pub fn hessian_with(&self, u: &[f64], majorant: bool) -> Result<SparseMat> {
        let full = self.dofs.expand(u);
        let dim = self.kinematics.dim();
        let mut hl = vec![0.0; dim * dim];
        let mut trip = Vec::with_capacity(self.elements.len() * 81);
        for e in &self.elements {
            let cols = e.dofs.len();
            let w = e.area / e.qp.len() as f64;
            let mut ke = vec![0.0; cols * cols];
            for x in self.local_args(e, &full) {
                if majorant {
                    self.density.majorant_hessian(&x, &mut hl);
                } else {
                    self.density.hessian(&x, &mut hl);
                }
                // ke += w Bᵀ H B
                let mut hb = vec![0.0; dim * cols];
                for r in 0..dim {
                    for c in 0..cols {
                        hb[r * cols + c] = (0..dim).map(|k| hl[r * dim + k] * e.b[k * cols + c]).sum();
                    }
                }
                for a in 0..cols {
                    for c in 0..cols {
                        ke[a * cols + c] += w * (0..dim).map(|r| e.b[r * cols + a] * hb[r * cols + c]).sum::<f64>();
                    }
                }
            }
            for a in 0..cols {
                let Slot::Free(i) = self.dofs.slots[e.dofs[a]] else { continue };
                for c in 0..cols {
                    let Slot::Free(j) = self.dofs.slots[e.dofs[c]] else { continue };
                    trip.push((i, j, ke[a * cols + c]));
                }
            }
        }
        linalg::from_triplets(self.dofs.nfree, &trip)
    }

    pub fn factorize(&self, u: &[f64]) -> Result<Factorization> {
        self.factorize_with(u, false)
    }

    pub fn factorize_with(&self, u: &[f64], majorant: bool) -> Result<Factorization> {
        let h = self.hessian_with(u, majorant)?;
        if h.nrows() < linalg::DIRECT_SOLVER_MAX_DOFS && self.symbolic.get().is_none() {
            let _ = self.symbolic.set(linalg::symbolic(&h)?);
        }
        Factorization::new(&h, self.symbolic.get())
    }

    fn free_constraints(&self) -> Vec<(Vec<(usize, f64)>, f64)> {
        self.constraints
            .iter()
            .map(|c| {
                let mut rhs = c.rhs;
                let mut row: Vec<(usize, f64)> = Vec::new();
                for &(k, a) in &c.coeffs {
                    match self.dofs.slots[k] {
                        Slot::Free(i) => row.push((i, a)),
                        Slot::Fixed(x) => rhs -= a * x,
                    }
                }
                (merge_row(row), rhs)
            })
            .collect()
    }
}

fn merge_row(mut row: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    row.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for (i, a) in row {
        match out.last_mut() {
            Some(last) if last.0 == i => last.1 += a,
            _ => out.push((i, a)),
        }
    }
    out
}

fn mid(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

/// Gradients of the three barycentric shape functions.
pub fn shape_gradients(p: &[Point; 3], area: f64) -> [[f64; 2]; 3] {
    let s = 0.5 / area;
    [
        [(p[1][1] - p[2][1]) * s, (p[2][0] - p[1][0]) * s],
        [(p[2][1] - p[0][1]) * s, (p[0][0] - p[2][0]) * s],
        [(p[0][1] - p[1][1]) * s, (p[1][0] - p[0][0]) * s],
    ]
}

/// Result of [`minimize`].
#[derive(Clone, Debug)]
pub struct Minimum {
    pub field: DiscreteField,
    /// Unregularized energy of the minimizer.
    pub energy: f64,
    pub diagnostics: Diagnostics,
}

/// Minimizes `F` subject to its linear constraints.
///
/// Quadratic densities take one Newton step from a feasible point. Other
/// densities start from the minimizer of the quadratic companion density (or
/// from `initial`) and run Newton iterations with Armijo backtracking on the
/// regularized energy.
pub fn minimize(f: &EnergyFunctional, opts: SolverOptions, initial: Option<&[f64]>) -> Result<Minimum> {
    check_well_posed(f)?;
    let cons = f.free_constraints();
    if f.density.is_quadratic() {
        let u0 = initial.map(|u| u.to_vec()).unwrap_or_else(|| vec![0.0; f.nfree()]);
        let fact = f.factorize(&u0)?;
        return quadratic_solve(f, &fact, &cons, u0);
    }
    let start = match initial {
        Some(u) => u.to_vec(),
        None => match f.density.quadratic_companion() {
            Some(q) => {
                let fq = EnergyFunctional {
                    mesh: f.mesh,
                    density: q.as_ref(),
                    kinematics: f.kinematics,
                    dofs: f.dofs.clone(),
                    offset: f.offset.clone(),
                    load: f.load.clone(),
                    constraints: f.constraints.clone(),
                    elements: Vec::new(),
                    symbolic: OnceLock::new(),
                };
                let mut fq = fq;
                fq.build_elements();
                let fact = fq.factorize(&vec![0.0; f.nfree()])?;
                if let Some(s) = fq.symbolic.get() {
                    let _ = f.symbolic.set(s.clone());
                }
                quadratic_solve(&fq, &fact, &cons, vec![0.0; f.nfree()])?.field.dof_values
            }
            None => vec![0.0; f.nfree()],
        },
    };
    newton(f, opts, &cons, start)
}

/// Solves a quadratic problem with an existing factorization of its Hessian.
pub fn minimize_quadratic_with(f: &EnergyFunctional, fact: &Factorization) -> Result<Minimum> {
    let cons = f.free_constraints();
    quadratic_solve(f, fact, &cons, vec![0.0; f.nfree()])
}

fn check_well_posed(f: &EnergyFunctional) -> Result<()> {
    if f.nfree() == 0 {
        return Ok(());
    }
    if !f.dofs.has_fixed() && f.constraints.is_empty() {
        return Err(Error::Singular(
            "no Dirichlet, rigid or mean constraint: rigid motions leave the energy unchanged".into(),
        ));
    }
    Ok(())
}

fn invert_small(s: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let m = s.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mat = faer::Mat::<f64>::from_fn(m, m, |i, j| s[i][j]);
    let scale = (0..m).map(|i| s[i][i].abs()).fold(0.0, f64::max);
    let lu = mat.partial_piv_lu();
    let inv = faer::linalg::solvers::DenseSolveCore::inverse(&lu);
    let out: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| inv[(i, j)]).collect()).collect();
    if out.iter().flatten().any(|v| !v.is_finite()) || scale == 0.0 {
        return Err(Error::Singular("linear constraints are dependent".into()));
    }
    Ok(out)
}

fn residual(rows: &[(Vec<(usize, f64)>, f64)], u: &[f64]) -> Vec<f64> {
    rows.iter().map(|(row, rhs)| rhs - row.iter().map(|&(i, a)| a * u[i]).sum::<f64>()).collect()
}

/// Euclidean norm of the gradient projected onto the constraint null space.
fn projected_norm(rows: &[(Vec<(usize, f64)>, f64)], g: &[f64]) -> f64 {
    if rows.is_empty() {
        return g.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let m = rows.len();
    let mut gram = vec![vec![0.0; m]; m];
    let dense: Vec<Vec<f64>> = rows
        .iter()
        .map(|(r, _)| {
            let mut c = vec![0.0; g.len()];
            for &(i, a) in r {
                c[i] += a;
            }
            c
        })
        .collect();
    for a in 0..m {
        for b in 0..m {
            gram[a][b] = dense[a].iter().zip(&dense[b]).map(|(x, y)| x * y).sum();
        }
    }
    let Ok(inv) = invert_small(&gram) else { return g.iter().map(|v| v * v).sum::<f64>().sqrt() };
    let cg: Vec<f64> = dense.iter().map(|c| c.iter().zip(g).map(|(x, y)| x * y).sum()).collect();
    let coef: Vec<f64> = (0..m).map(|a| (0..m).map(|b| inv[a][b] * cg[b]).sum()).collect();
    let mut p = g.to_vec();
    for a in 0..m {
        for (pi, ci) in p.iter_mut().zip(&dense[a]) {
            *pi -= coef[a] * ci;
        }
    }
    p.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn quadratic_solve(
    f: &EnergyFunctional,
    fact: &Factorization,
    rows: &[(Vec<(usize, f64)>, f64)],
    u0: Vec<f64>,
) -> Result<Minimum> {
    let g = f.gradient(&u0);
    let r = residual(rows, &u0);
    let du = SchurView::new(fact, rows, u0.len())?.direction(&g, &r)?;
    let u: Vec<f64> = u0.iter().zip(&du).map(|(a, b)| a + b).collect();
    let gn = projected_norm(rows, &f.gradient(&u));
    let energy = f.value(&u);
    let e0 = f.value(&u0);
    Ok(Minimum {
        diagnostics: Diagnostics {
            iterations: 1,
            converged: true,
            grad_norm: gn,
            regularized_energy: energy,
            history: vec![
                IterationRecord { iter: 0, energy: e0, grad_norm: projected_norm(rows, &g), step: 0.0 },
                IterationRecord { iter: 1, energy, grad_norm: gn, step: 1.0 },
            ],
            ndofs: f.nfree(),
        },
        field: DiscreteField::from_free(&f.dofs, u),
        energy,
    })
}

/// Newton direction under linear equality constraints `C du = r`, via the
/// Schur complement `C H⁻¹ Cᵀ` of the factorized Hessian.
struct SchurView<'f, 'c> {
    fact: &'f Factorization,
    rows: &'c [(Vec<(usize, f64)>, f64)],
    y: Vec<Vec<f64>>,
    schur_inv: Vec<Vec<f64>>,
}

impl<'f, 'c> SchurView<'f, 'c> {
    fn new(fact: &'f Factorization, rows: &'c [(Vec<(usize, f64)>, f64)], n: usize) -> Result<Self> {
        let m = rows.len();
        let mut y = Vec::with_capacity(m);
        for (row, _) in rows {
            let mut c = vec![0.0; n];
            for &(i, a) in row {
                c[i] += a;
            }
            y.push(fact.solve(&c)?);
        }
        let mut s = vec![vec![0.0; m]; m];
        for a in 0..m {
            for b in 0..m {
                s[a][b] = rows[a].0.iter().map(|&(i, c)| c * y[b][i]).sum();
            }
        }
        Ok(Self { fact, rows, y, schur_inv: invert_small(&s)? })
    }

    fn direction(&self, g: &[f64], r: &[f64]) -> Result<Vec<f64>> {
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut z = self.fact.solve(&neg)?;
        let m = self.rows.len();
        if m == 0 {
            return Ok(z);
        }
        let cz: Vec<f64> = (0..m).map(|a| self.rows[a].0.iter().map(|&(i, c)| c * z[i]).sum::<f64>() - r[a]).collect();
        let lambda: Vec<f64> = (0..m).map(|a| (0..m).map(|b| self.schur_inv[a][b] * cz[b]).sum()).collect();
        for a in 0..m {
            for (zi, yi) in z.iter_mut().zip(&self.y[a]) {
                *zi -= lambda[a] * yi;
            }
        }
        Ok(z)
    }
}

/// Relative size of a Newton decrement that round-off cannot resolve.
const ROUNDOFF_DECREMENT: f64 = 1e-13;

/// Damped Newton iteration with Armijo backtracking.
///
/// Sub-quadratic densities start with the majorant Hessian, whose full steps
/// never increase the energy; exact Newton steps take over once the energy
/// has settled and are kept only while they contract the gradient.
fn newton(f: &EnergyFunctional, opts: SolverOptions, rows: &[(Vec<(usize, f64)>, f64)], start: Vec<f64>) -> Result<Minimum> {
    let mut u = start;
    let mut energy = f.value_reg(&u);
    let f0 = f.value_reg(&vec![0.0; f.nfree()]).abs();
    let gtol = opts.tol * (1.0 + f0);
    let mut history = Vec::new();
    let mut rel_decrease = f64::INFINITY;
    let has_majorant = f.density.has_majorant();
    let mut majorant = has_majorant;
    let mut exact_allowed = true;
    let mut last = (f64::INFINITY, 1.0, false);
    for iter in 0..=opts.max_iter {
        let g = f.gradient(&u);
        let gn = projected_norm(rows, &g);
        history.push(IterationRecord { iter, energy, grad_norm: gn, step: if iter == 0 { 0.0 } else { 1.0 } });
        if gn < gtol && (rel_decrease < opts.tol || iter > 0 && gn < 1e-3 * gtol) {
            return Ok(finish(f, u, energy, gn, true, history));
        }
        if iter == opts.max_iter {
            break;
        }
        let (prev_gn, prev_t, prev_exact) = last;
        if has_majorant && prev_exact && (prev_t < 1.0 || gn > 0.5 * prev_gn) {
            majorant = true;
            exact_allowed = false;
        } else if majorant && exact_allowed && rel_decrease < 1e-6 {
            majorant = false;
        }
        let r = residual(rows, &u);
        let fact = f.factorize_with(&u, majorant)?;
        let mut du = SchurView::new(&fact, rows, u.len())?.direction(&g, &r)?;
        let mut slope: f64 = g.iter().zip(&du).map(|(a, b)| a * b).sum();
        if -slope <= ROUNDOFF_DECREMENT * (1.0 + energy.abs()) && gn < 1e3 * gtol {
            // remaining decrease below the resolution of the energy
            return Ok(finish(f, u, energy, gn, true, history));
        }
        if !(slope < 0.0) {
            du = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-14 {
            let trial: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + t * b).collect();
            let e = f.value_reg(&trial);
            if e <= energy + 1e-4 * t * slope {
                accepted = Some((trial, e));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, e)) = accepted else {
            // no decrease representable: accept if already near stationarity
            if gn < 1e3 * gtol {
                return Ok(finish(f, u, energy, gn, true, history));
            }
            break;
        };
        debug_assert!(e <= energy + 1e-12 * (1.0 + energy.abs()), "energy increased");
        rel_decrease = (energy - e).abs() / e.abs().max(1e-300);
        u = trial;
        energy = e;
        last = (gn, t, !majorant);
        if let Some(last) = history.last_mut() {
            last.step = t;
        }
    }
    let gn = projected_norm(rows, &f.gradient(&u));
    Err(Error::Convergence(Box::new(ConvergenceFailure {
        iterations: history.len().saturating_sub(1),
        grad_norm: gn,
        history,
        last_iterate: u,
    })))
}

fn finish(f: &EnergyFunctional, u: Vec<f64>, reg: f64, gn: f64, converged: bool, history: Vec<IterationRecord>) -> Minimum {
    let energy = f.value(&u);
    Minimum {
        diagnostics: Diagnostics {
            iterations: history.len().saturating_sub(1),
            converged,
            grad_norm: gn,
            regularized_energy: reg,
            history,
            ndofs: f.nfree(),
        },
        field: DiscreteField::from_free(&f.dofs, u),
        energy,
    }
}

/// `∫ s N_k` for a scalar source `s`, one entry per vertex (scalar fields).
pub fn volume_load(mesh: &Mesh2D, source: impl Fn(Point) -> f64) -> Vec<f64> {
    let mut l = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let a = mesh.signed_area(t);
        let p = tri.map(|v| mesh.vertices[v]);
        // edge-midpoint rule: N_i is ½ at the two midpoints adjacent to vertex i
        let m = [mid(p[0], p[1]), mid(p[1], p[2]), mid(p[2], p[0])];
        let s = m.map(&source);
        l[tri[0]] += a / 3.0 * 0.5 * (s[0] + s[2]);
        l[tri[1]] += a / 3.0 * 0.5 * (s[0] + s[1]);
        l[tri[2]] += a / 3.0 * 0.5 * (s[1] + s[2]);
    }
    l
}

/// `∫_Γ g N_k` over boundary edges whose endpoints carry `tag`; `g` receives
/// the point and the outward unit normal. Two-point Gauss rule per edge.
pub fn boundary_load(mesh: &Mesh2D, tag: VertexTag, g: impl Fn(Point, Point) -> f64) -> Vec<f64> {
    let mut l = vec![0.0; mesh.num_vertices()];
    let gp = 0.5 / 3f64.sqrt();
    for e in mesh.boundary_edges() {
        if mesh.tags[e[0]] != tag || mesh.tags[e[1]] != tag {
            continue;
        }
        let (a, b) = (mesh.vertices[e[0]], mesh.vertices[e[1]]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = d[0].hypot(d[1]);
        // the domain lies to the left of the edge, so the outward normal points right
        let n = [d[1] / len, -d[0] / len];
        for s in [0.5 - gp, 0.5 + gp] {
            let x = [a[0] + s * d[0], a[1] + s * d[1]];
            let v = g(x, n) * 0.5 * len;
            l[e[0]] += (1.0 - s) * v;
            l[e[1]] += s * v;
        }
    }
    l
}

/// Projects a field of the cell gauge family onto mean-zero components.
pub fn remove_mean(mesh: &Mesh2D, field: &mut DiscreteField) {
    let m = field.mean(mesh);
    let neg: Vec<f64> = m.iter().map(|x| -x).collect();
    field.add_constant(&neg);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::SymMat3;
    use crate::geometry::{mesh_annulus, mesh_cell, CrossSection, Grading};

    fn disc_mesh() -> Mesh2D {
        mesh_cell(&CrossSection::unit_disc(), 0.2).unwrap()
    }

    #[test]
    fn manufactured_linear_field_energy() {
        // ψ = (0, 0, y1): e_y = e1⊙e3 and f = μ·2·(1/2)² per unit area
        let mesh = disc_mesh();
        let f = EnergyDensity::isotropic(1.3, 0.7).unwrap();
        let dofs = DofMap::build(&mesh, 3, |v, c| Constraint::Fixed(if c == 2 { mesh.vertices[v][0] } else { 0.0 }));
        let fun = EnergyFunctional::new(&mesh, &f, Kinematics::PlanarSym, dofs).unwrap();
        let e = fun.value(&[]);
        assert!((e - 0.7 * mesh.area() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rigid_motion_has_zero_energy() {
        let mesh = disc_mesh();
        let f = EnergyDensity::isotropic(1.0, 1.0).unwrap();
        let (a, z) = ([0.3, -0.2, 0.9], 0.7);
        let dofs = DofMap::build(&mesh, 3, |v, c| {
            let y = mesh.vertices[v];
            Constraint::Fixed([a[0] - z * y[1], a[1] + z * y[0], a[2]][c])
        });
        let fun = EnergyFunctional::new(&mesh, &f, Kinematics::PlanarSym, dofs).unwrap();
        assert!(fun.value(&[]).abs() < 1e-24);
    }

    #[test]
    fn zero_field_zero_energy_and_gradient() {
        let mesh = disc_mesh();
        let f = EnergyDensity::p_norm(1.0, 1.5).unwrap();
        let dofs = DofMap::build(&mesh, 3, |v, _| {
            if mesh.tags[v] == VertexTag::InnerS {
                Constraint::Fixed(0.0)
            } else {
                Constraint::Free
            }
        });
        let fun = EnergyFunctional::new(&mesh, &f, Kinematics::PlanarSym, dofs).unwrap();
        let u = vec![0.0; fun.nfree()];
        assert_eq!(fun.value(&u), 0.0);
        assert!(fun.gradient(&u).iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let mesh = mesh_annulus(&CrossSection::unit_disc(), 2.0, 0.5, Grading::Uniform).unwrap();
        for f in [EnergyDensity::p_norm(1.0, 1.5).unwrap(), EnergyDensity::p_norm(1.0, 3.0).unwrap()] {
            let dofs = DofMap::build(&mesh, 3, |v, c| match mesh.tags[v] {
                VertexTag::InnerS => Constraint::Fixed(if c == 0 { 1.0 } else { 0.0 }),
                VertexTag::OuterV => Constraint::Fixed(0.0),
                _ => Constraint::Free,
            });
            let fun = EnergyFunctional::new(&mesh, &f, Kinematics::PlanarSym, dofs).unwrap();
            let u: Vec<f64> = (0..fun.nfree()).map(|i| 0.1 * ((i as f64) * 0.37).sin()).collect();
            let g = fun.gradient(&u);
            let h = fun.hessian(&u).unwrap();
            let dir: Vec<f64> = (0..fun.nfree()).map(|i| ((i as f64) * 1.3).cos()).collect();
            let step = 1e-6;
            let up: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let um: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a - step * b).collect();
            let fd = (fun.value_reg(&up) - fun.value_reg(&um)) / (2.0 * step);
            let an: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "fd {fd} an {an}");
            let gp = fun.gradient(&up);
            let gm = fun.gradient(&um);
            let hd = linalg::mat_vec(&h, &dir);
            for i in 0..fun.nfree() {
                let fdi = (gp[i] - gm[i]) / (2.0 * step);
                assert!((fdi - hd[i]).abs() < 1e-4 * (1.0 + hd[i].abs()));
            }
        }
    }

    #[test]
    fn quadratic_problem_one_step() {
        let mesh = mesh_annulus(&CrossSection::unit_disc(), 3.0, 0.3, Grading::log()).unwrap();
        let f = EnergyDensity::isotropic(1.0, 1.0).unwrap();
        let dofs = DofMap::build(&mesh, 3, |v, c| match mesh.tags[v] {
            VertexTag::InnerS => Constraint::Fixed(if c == 2 { 1.0 } else { 0.0 }),
            VertexTag::OuterV => Constraint::Fixed(0.0),
            _ => Constraint::Free,
        });
        let fun = EnergyFunctional::new(&mesh, &f, Kinematics::PlanarSym, dofs).unwrap();
        let m = minimize(&fun, SolverOptions::default(), None).unwrap();
        assert!(m.diagnostics.grad_norm < 1e-10);
        assert_eq!(m.diagnostics.iterations, 1);
    }

    #[test]
    fn unconstrained_problem_rejected() {
        let mesh = disc_mesh();
        let f = EnergyDensity::isotropic(1.0, 1.0).unwrap();
        let fun = EnergyFunctional::new(&mesh, &f, Kinematics::PlanarSym, DofMap::all_free(&mesh, 3)).unwrap();
        assert!(matches!(minimize(&fun, SolverOptions::default(), None), Err(Error::Singular(_))));
    }

    #[test]
    fn newton_energy_decreases_monotonically() {
        let mesh = mesh_annulus(&CrossSection::unit_disc(), 2.0, 0.1, Grading::Uniform).unwrap();
        let dens = ScalarPower { c: 1.0, p: 1.5 };
        let dofs = DofMap::build(&mesh, 1, |v, _| match mesh.tags[v] {
            VertexTag::InnerS => Constraint::Fixed(1.0),
            VertexTag::OuterV => Constraint::Fixed(0.0),
            _ => Constraint::Free,
        });
        let fun = EnergyFunctional::new(&mesh, &dens, Kinematics::Gradient, dofs).unwrap();
        let m = minimize(&fun, SolverOptions::default(), None).unwrap();
        assert!(m.diagnostics.converged);
        assert!(m.diagnostics.iterations < 40);
        for w in m.diagnostics.history.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-12);
        }
    }

    #[test]
    fn different_initial_guesses_agree() {
        let mesh = mesh_annulus(&CrossSection::unit_disc(), 2.0, 0.2, Grading::Uniform).unwrap();
        let f = EnergyDensity::p_norm(1.0, 3.0).unwrap();
        let dofs = DofMap::build(&mesh, 3, |v, c| match mesh.tags[v] {
            VertexTag::InnerS => Constraint::Fixed(if c == 0 { 1.0 } else { 0.0 }),
            VertexTag::OuterV => Constraint::Fixed(0.0),
            _ => Constraint::Free,
        });
        let fun = EnergyFunctional::new(&mesh, &f, Kinematics::PlanarSym, dofs).unwrap();
        let a = minimize(&fun, SolverOptions::default(), None).unwrap();
        let u1: Vec<f64> = (0..fun.nfree()).map(|i| 0.2 * (i as f64).sin()).collect();
        let b = minimize(&fun, SolverOptions::default(), Some(&u1)).unwrap();
        assert!((a.energy - b.energy).abs() < 1e-10 * a.energy);
    }

    #[test]
    fn neumann_problem_with_pinned_gauge() {
        let mesh = disc_mesh();
        let dens = ScalarPower { c: 0.5, p: 2.0 };
        // Δφ = 1 with ∇φ·n = 1/2 on the unit circle: φ = |y|²/4 + const
        let load_v = volume_load(&mesh, |_| 1.0);
        let load_b = boundary_load(&mesh, VertexTag::InnerS, |_, _| 0.5);
        let load: Vec<f64> = load_v.iter().zip(&load_b).map(|(a, b)| -a + b).collect();
        let dofs = DofMap::build(&mesh, 1, |v, _| if v == 0 { Constraint::Fixed(0.0) } else { Constraint::Free });
        let fun = EnergyFunctional::new(&mesh, &dens, Kinematics::Gradient, dofs).unwrap().with_load(load);
        let mut m = minimize(&fun, SolverOptions::default(), None).unwrap();
        remove_mean(&mesh, &mut m.field);
        assert!(m.field.mean(&mesh)[0].abs() < 1e-12);
        // mean of |y|²/4 over the discretized disc
        let exact_mean = {
            let mut f = DiscreteField::zeros(mesh.num_vertices(), 1);
            for (v, p) in mesh.vertices.iter().enumerate() {
                f.values[v] = (p[0] * p[0] + p[1] * p[1]) / 4.0;
            }
            f.mean(&mesh)[0]
        };
        for (v, p) in mesh.vertices.iter().enumerate() {
            let exact = (p[0] * p[0] + p[1] * p[1]) / 4.0 - exact_mean;
            assert!((m.field.values[v] - exact).abs() < 2e-2);
        }
    }

    #[test]
    fn mean_constraint_is_enforced() {
        let mesh = disc_mesh();
        let dens = ScalarPower { c: 0.5, p: 2.0 };
        let dofs = DofMap::build(&mesh, 1, |v, _| {
            if mesh.tags[v] == VertexTag::InnerS {
                Constraint::Fixed(0.0)
            } else {
                Constraint::Free
            }
        });
        let mass = volume_load(&mesh, |_| 1.0);
        let cons = LinearConstraint { coeffs: mass.iter().copied().enumerate().collect(), rhs: 1.0 };
        let fun = EnergyFunctional::new(&mesh, &dens, Kinematics::Gradient, dofs).unwrap().with_constraints(vec![cons]);
        let m = minimize(&fun, SolverOptions::default(), None).unwrap();
        assert!((m.field.mean(&mesh)[0] * mesh.area() - 1.0).abs() < 1e-10);
        assert!(m.diagnostics.grad_norm < 1e-10);
        let p = ScalarPower { c: 0.5, p: 1.5 };
        let fun = fun.with_dofs(fun.dofs.clone());
        let fun = EnergyFunctional { density: &p, ..fun };
        let m = minimize(&fun, SolverOptions::default(), None).unwrap();
        assert!((m.field.mean(&mesh)[0] * mesh.area() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn offsets_shift_the_argument() {
        // constant offset M33 = 1 with zero field: f = (λ/2 + μ)·area
        let mesh = disc_mesh();
        let f = EnergyDensity::isotropic(2.0, 1.0).unwrap();
        let dofs = DofMap::build(&mesh, 3, |_, _| Constraint::Fixed(0.0));
        let fun = EnergyFunctional::new(&mesh, &f, Kinematics::PlanarSym, dofs)
            .unwrap()
            .with_offset(Arc::new(|_| [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]));
        assert!((fun.value(&[]) - 2.0 * mesh.area()).abs() < 1e-12);
        let _ = SymMat3::ZERO;
    }
}
