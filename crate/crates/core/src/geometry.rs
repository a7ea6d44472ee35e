//! Fiber cross-sections, computational domains and their triangulations.
//!
//! Every mesh produced here is a "ray mesh": vertices sit on rays leaving the
//! centroid of the cross-section, which requires the cross-section to be
//! star-shaped with respect to its centroid. Discs are replaced by inscribed
//! regular polygons whose vertex count scales like `1/h`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::Serialize;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

const GEOM_TOL: f64 = 1e-12;

/// Requested shape before normalization.
#[derive(Clone, Debug)]
pub enum Shape {
    Polygon(Vec<Point>),
    UnitDisc,
    ScaledDisc(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Boundary {
    Disc { radius: f64 },
    /// Counter-clockwise vertices, centroid at the origin.
    Polygon { vertices: Vec<Point> },
}

/// A fiber cross-section `S`, shifted so that its centroid is the origin.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossSection {
    pub boundary: Boundary,
    pub area: f64,
    pub centroid: Point,
    /// Translation that was applied to the input to center it.
    pub shift: Point,
    pub diameter: f64,
    /// Averaged second moments `⨍_S y_i y_j dy`.
    pub second_moments: [[f64; 2]; 2],
    /// `2 ⨍_S |y|^2 dy / diam S`.
    pub tau: f64,
}

impl CrossSection {
    pub fn new(shape: Shape) -> Result<Self> {
        match shape {
            Shape::UnitDisc => Self::disc(1.0),
            Shape::ScaledDisc(t) => Self::disc(t),
            Shape::Polygon(v) => Self::polygon(v),
        }
    }

    pub fn unit_disc() -> Self {
        Self::disc(1.0).expect("unit disc is valid")
    }

    pub fn disc(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > GEOM_TOL) {
            return Err(Error::Geometry(format!("disc radius must be positive, got {radius}")));
        }
        let m = radius * radius / 4.0;
        Ok(Self {
            boundary: Boundary::Disc { radius },
            area: PI * radius * radius,
            centroid: [0.0, 0.0],
            shift: [0.0, 0.0],
            diameter: 2.0 * radius,
            second_moments: [[m, 0.0], [0.0, m]],
            tau: radius / 2.0,
        })
    }

    /// Axis-aligned square of the given side, centered at the origin.
    pub fn square(side: f64) -> Result<Self> {
        let h = side / 2.0;
        Self::polygon(vec![[-h, -h], [h, -h], [h, h], [-h, h]])
    }

    pub fn polygon(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Geometry("polygon needs at least three vertices".into()));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Geometry("polygon has non-finite coordinates".into()));
        }
        let mut v = vertices;
        let mut signed = polygon_signed_area(&v);
        let scale = bounding_scale(&v);
        if signed.abs() < GEOM_TOL * scale * scale.max(1.0) {
            return Err(Error::Geometry(format!("degenerate polygon (area {signed:e})")));
        }
        if signed < 0.0 {
            v.reverse();
            signed = -signed;
        }
        if !polygon_is_simple(&v) {
            return Err(Error::Geometry("polygon edges intersect".into()));
        }
        let c = polygon_centroid(&v, signed);
        for p in v.iter_mut() {
            p[0] -= c[0];
            p[1] -= c[1];
        }
        let raw = polygon_second_moments(&v);
        let second_moments = [
            [raw[0][0] / signed, raw[0][1] / signed],
            [raw[1][0] / signed, raw[1][1] / signed],
        ];
        let mut diameter: f64 = 0.0;
        for (i, a) in v.iter().enumerate() {
            for b in &v[i + 1..] {
                diameter = diameter.max(dist(*a, *b));
            }
        }
        let tau = 2.0 * (second_moments[0][0] + second_moments[1][1]) / diameter;
        Ok(Self {
            boundary: Boundary::Polygon { vertices: v },
            area: signed,
            centroid: [0.0, 0.0],
            shift: [-c[0], -c[1]],
            diameter,
            second_moments,
            tau,
        })
    }

    /// Re-runs the centroid normalization on an already normalized section.
    pub fn renormalized(&self) -> Result<Self> {
        match &self.boundary {
            Boundary::Disc { radius } => Self::disc(*radius),
            Boundary::Polygon { vertices } => Self::polygon(vertices.clone()),
        }
    }

    pub fn is_disc(&self) -> bool {
        matches!(self.boundary, Boundary::Disc { .. })
    }

    /// `⨍_S |y|^2 dy`.
    pub fn mean_square_radius(&self) -> f64 {
        self.second_moments[0][0] + self.second_moments[1][1]
    }

    /// Similar copy `λ S`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        match &self.boundary {
            Boundary::Disc { radius } => Self::disc(radius * lambda),
            Boundary::Polygon { vertices } => {
                Self::polygon(vertices.iter().map(|p| [p[0] * lambda, p[1] * lambda]).collect())
            }
        }
    }

    /// Largest distance from the centroid to the boundary.
    pub fn max_radius(&self) -> f64 {
        match &self.boundary {
            Boundary::Disc { radius } => *radius,
            Boundary::Polygon { vertices } => vertices.iter().map(|p| norm(*p)).fold(0.0, f64::max),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        match &self.boundary {
            Boundary::Disc { radius } => norm(p) <= *radius * (1.0 + 1e-12),
            Boundary::Polygon { vertices } => point_in_polygon(vertices, p),
        }
    }

    /// The origin lies strictly on the inner side of every edge.
    pub fn is_star_shaped(&self) -> bool {
        match &self.boundary {
            Boundary::Disc { .. } => true,
            Boundary::Polygon { vertices } => {
                let n = vertices.len();
                (0..n).all(|i| {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    cross(sub(b, a), sub([0.0, 0.0], a)) > GEOM_TOL * dist(a, b)
                })
            }
        }
    }

    /// Distance from the origin to the boundary along direction `theta`.
    pub fn radial_extent(&self, theta: f64) -> f64 {
        match &self.boundary {
            Boundary::Disc { radius } => *radius,
            Boundary::Polygon { vertices } => {
                let d = [theta.cos(), theta.sin()];
                let n = vertices.len();
                let mut best = f64::INFINITY;
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    if let Some(t) = ray_segment(d, a, b) {
                        best = best.min(t);
                    }
                }
                best
            }
        }
    }

    /// Boundary samples in counter-clockwise order with spacing at most `h`,
    /// polygon corners included.
    pub fn boundary_samples(&self, h: f64) -> Vec<Point> {
        match &self.boundary {
            Boundary::Disc { radius } => {
                let n = ((2.0 * PI * radius / h).ceil() as usize).max(12);
                (0..n)
                    .map(|i| {
                        let t = 2.0 * PI * i as f64 / n as f64;
                        [radius * t.cos(), radius * t.sin()]
                    })
                    .collect()
            }
            Boundary::Polygon { vertices } => {
                let n = vertices.len();
                let mut out = Vec::new();
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    let m = ((dist(a, b) / h).ceil() as usize).max(1);
                    for k in 0..m {
                        let t = k as f64 / m as f64;
                        out.push(lerp(a, b, t));
                    }
                }
                out
            }
        }
    }

    /// Boundary point at normalized arclength `s ∈ [0, 1)` (angle for discs).
    pub fn point_at(&self, s: f64) -> Point {
        match &self.boundary {
            Boundary::Disc { radius } => {
                let t = 2.0 * PI * s;
                [radius * t.cos(), radius * t.sin()]
            }
            Boundary::Polygon { vertices } => {
                let n = vertices.len();
                let perimeter: f64 = (0..n).map(|i| dist(vertices[i], vertices[(i + 1) % n])).sum();
                let mut target = s.rem_euclid(1.0) * perimeter;
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    let len = dist(a, b);
                    if target <= len || i == n - 1 {
                        return lerp(a, b, (target / len).min(1.0));
                    }
                    target -= len;
                }
                unreachable!()
            }
        }
    }

    /// Normalized arclength parameter of a boundary point (inverse of `point_at`).
    fn parameter_of(&self, p: Point) -> f64 {
        match &self.boundary {
            Boundary::Disc { .. } => (p[1].atan2(p[0]) / (2.0 * PI)).rem_euclid(1.0),
            Boundary::Polygon { vertices } => {
                let n = vertices.len();
                let perimeter: f64 = (0..n).map(|i| dist(vertices[i], vertices[(i + 1) % n])).sum();
                let mut acc = 0.0;
                let mut best = (f64::INFINITY, 0.0);
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    let len = dist(a, b);
                    let t = (dot(sub(p, a), sub(b, a)) / (len * len)).clamp(0.0, 1.0);
                    let d = dist(p, lerp(a, b, t));
                    if d < best.0 {
                        best = (d, (acc + t * len) / perimeter);
                    }
                    acc += len;
                }
                best.1.rem_euclid(1.0)
            }
        }
    }
}

/// Computational domains built around a cross-section.
#[derive(Clone, Debug)]
pub enum DomainSpec {
    /// `V = R·D` with `S̄ ⊂ V`.
    Annulus { section: CrossSection, radius: f64 },
    /// A ladder of annuli approximating `ℝ²`.
    TruncatedPlane { section: CrossSection, radii: Vec<f64> },
    Cell { section: CrossSection },
    /// `Y∖S` with `Y = [-1/2, 1/2)²`.
    PeriodicCell { section: CrossSection },
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DomainSpec::Annulus { section, radius } => check_inside_disc(section, *radius),
            DomainSpec::TruncatedPlane { section, radii } => {
                if radii.is_empty() {
                    return Err(Error::Geometry("empty radius ladder".into()));
                }
                radii.iter().try_for_each(|r| check_inside_disc(section, *r))
            }
            DomainSpec::Cell { .. } => Ok(()),
            DomainSpec::PeriodicCell { section } => check_inside_cell(section),
        }
    }
}

fn check_inside_disc(section: &CrossSection, radius: f64) -> Result<()> {
    if !(radius.is_finite() && radius > section.max_radius() * (1.0 + 1e-9)) {
        return Err(Error::Geometry(format!(
            "outer radius {radius} does not strictly contain the cross-section (max radius {})",
            section.max_radius()
        )));
    }
    Ok(())
}

fn check_inside_cell(section: &CrossSection) -> Result<()> {
    let inside = match &section.boundary {
        Boundary::Disc { radius } => *radius < 0.5 - 1e-9,
        Boundary::Polygon { vertices } => vertices.iter().all(|p| p[0].abs() < 0.5 - 1e-9 && p[1].abs() < 0.5 - 1e-9),
    };
    if inside {
        Ok(())
    } else {
        Err(Error::Geometry("cross-section touches the boundary of the unit cell".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum VertexTag {
    InnerS,
    OuterV,
    Interior,
    PeriodicMaster,
    PeriodicSlave,
}

impl VertexTag {
    pub fn name(self) -> &'static str {
        match self {
            VertexTag::InnerS => "inner_S",
            VertexTag::OuterV => "outer_V",
            VertexTag::Interior => "interior",
            VertexTag::PeriodicMaster => "periodic_master",
            VertexTag::PeriodicSlave => "periodic_slave",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "inner_S" => VertexTag::InnerS,
            "outer_V" => VertexTag::OuterV,
            "interior" => VertexTag::Interior,
            "periodic_master" => VertexTag::PeriodicMaster,
            "periodic_slave" => VertexTag::PeriodicSlave,
            _ => return None,
        })
    }
}

/// Radial layer distribution of annulus meshes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Grading {
    Uniform,
    /// Geometric layers `r·ρ^k`. `None` picks `ρ = min(1.3, 1 + h/r_S)`.
    Log { ratio: Option<f64> },
}

impl Grading {
    pub const DEFAULT_LOG_RATIO: f64 = 1.3;

    pub fn log() -> Self {
        Grading::Log { ratio: None }
    }

    fn ratio_for(&self, h: f64, inner_radius: f64) -> f64 {
        match self {
            Grading::Log { ratio: Some(r) } => *r,
            _ => (1.0 + h / inner_radius).min(Self::DEFAULT_LOG_RATIO),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

impl Circle {
    fn project(&self, p: Point) -> Point {
        let d = sub(p, self.center);
        let n = norm(d);
        [self.center[0] + d[0] * self.radius / n, self.center[1] + d[1] * self.radius / n]
    }
}

/// Conforming triangulation with per-vertex boundary tags.
#[derive(Clone, Debug, Serialize)]
pub struct Mesh2D {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub tags: Vec<VertexTag>,
    pub grading: Grading,
    /// Curved boundaries the refinement projects new vertices onto.
    pub inner_circle: Option<Circle>,
    pub outer_circle: Option<Circle>,
    /// Radii of the circular layers (annulus meshes beyond the first segment).
    pub layer_radii: Vec<f64>,
    periodic: Vec<Option<usize>>,
}

impl Mesh2D {
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, tags: Vec<VertexTag>) -> Result<Self> {
        if tags.len() != vertices.len() {
            return Err(Error::Geometry("one tag per vertex required".into()));
        }
        let mut mesh = Self {
            vertices,
            triangles,
            tags,
            grading: Grading::Uniform,
            inner_circle: None,
            outer_circle: None,
            layer_radii: Vec::new(),
            periodic: Vec::new(),
        };
        mesh.orient()?;
        mesh.rebuild_periodic()?;
        Ok(mesh)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * cross(sub(self.vertices[b], self.vertices[a]), sub(self.vertices[c], self.vertices[a]))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    /// Master vertex of a periodic slave.
    pub fn periodic_master(&self, v: usize) -> Option<usize> {
        self.periodic.get(v).copied().flatten()
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic.iter().any(|m| m.is_some())
    }

    /// Edges owned by exactly one triangle, oriented counter-clockwise
    /// with respect to the domain.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        let mut count: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let e = [tri[k], tri[(k + 1) % 3]];
                let key = (e[0].min(e[1]), e[0].max(e[1]));
                count.entry(key).and_modify(|c| c.0 += 1).or_insert((1, e));
            }
        }
        let mut edges: Vec<[usize; 2]> = count.into_values().filter(|c| c.0 == 1).map(|c| c.1).collect();
        edges.sort_unstable();
        edges
    }

    /// Ordered vertex loop of the inner (`inner_S`) boundary, if any.
    pub fn inner_loop(&self) -> Vec<usize> {
        let edges: Vec<[usize; 2]> = self
            .boundary_edges()
            .into_iter()
            .filter(|e| self.tags[e[0]] == VertexTag::InnerS && self.tags[e[1]] == VertexTag::InnerS)
            .collect();
        if edges.is_empty() {
            return Vec::new();
        }
        let next: HashMap<usize, usize> = edges.iter().map(|e| (e[0], e[1])).collect();
        let start = edges[0][0];
        let mut out = vec![start];
        let mut cur = next[&start];
        while cur != start && out.len() <= edges.len() {
            out.push(cur);
            cur = match next.get(&cur) {
                Some(n) => *n,
                None => break,
            };
        }
        out
    }

    /// Area enclosed by the inner boundary loop (the discretized `S` of an annulus mesh).
    pub fn hole_area(&self) -> f64 {
        // the domain is on the left of its boundary, so the hole loop runs clockwise
        let pts: Vec<Point> = self.inner_loop().iter().map(|&v| self.vertices[v]).collect();
        if pts.len() < 3 {
            return 0.0;
        }
        polygon_signed_area(&pts).abs()
    }

    /// First moment `∫ y dy` of the hole polygon.
    pub fn hole_first_moment(&self) -> Point {
        let mut pts: Vec<Point> = self.inner_loop().iter().map(|&v| self.vertices[v]).collect();
        if pts.len() < 3 {
            return [0.0, 0.0];
        }
        let mut a = polygon_signed_area(&pts);
        if a < 0.0 {
            pts.reverse();
            a = -a;
        }
        let c = polygon_centroid(&pts, a);
        [c[0] * a, c[1] * a]
    }

    pub fn translated(&self, t: Point) -> Self {
        let mut m = self.clone();
        for p in m.vertices.iter_mut() {
            p[0] += t[0];
            p[1] += t[1];
        }
        for c in [&mut m.inner_circle, &mut m.outer_circle].into_iter().flatten() {
            c.center = [c.center[0] + t[0], c.center[1] + t[1]];
        }
        m
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        let mut m = self.clone();
        for p in m.vertices.iter_mut() {
            p[0] *= lambda;
            p[1] *= lambda;
        }
        for c in [&mut m.inner_circle, &mut m.outer_circle].into_iter().flatten() {
            c.center = [c.center[0] * lambda, c.center[1] * lambda];
            c.radius *= lambda;
        }
        for r in m.layer_radii.iter_mut() {
            *r *= lambda;
        }
        m
    }

    /// Uniform red refinement. Boundary midpoints keep their tag and are
    /// projected back onto circular boundaries.
    pub fn refine(&self) -> Result<Self> {
        let boundary: std::collections::HashSet<(usize, usize)> = self
            .boundary_edges()
            .iter()
            .map(|e| (e[0].min(e[1]), e[0].max(e[1])))
            .collect();
        let mut vertices = self.vertices.clone();
        let mut tags = self.tags.clone();
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for tri in &self.triangles {
            let mut m = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                m[k] = *mid.entry(key).or_insert_with(|| {
                    let mut p = lerp(self.vertices[a], self.vertices[b], 0.5);
                    let on_boundary = boundary.contains(&key);
                    let tag = if on_boundary && self.tags[a] == self.tags[b] {
                        self.tags[a]
                    } else if on_boundary && is_periodic_tag(self.tags[a]) && is_periodic_tag(self.tags[b]) {
                        VertexTag::PeriodicMaster
                    } else {
                        VertexTag::Interior
                    };
                    match tag {
                        VertexTag::InnerS => {
                            if let Some(c) = &self.inner_circle {
                                p = c.project(p);
                            }
                        }
                        VertexTag::OuterV => {
                            if let Some(c) = &self.outer_circle {
                                p = c.project(p);
                            }
                        }
                        _ => {}
                    }
                    let tag = if is_periodic_tag(tag) { periodic_tag_of(p) } else { tag };
                    vertices.push(p);
                    tags.push(tag);
                    vertices.len() - 1
                });
            }
            let [a, b, c] = *tri;
            triangles.push([a, m[0], m[2]]);
            triangles.push([m[0], b, m[1]]);
            triangles.push([m[2], m[1], c]);
            triangles.push([m[0], m[1], m[2]]);
        }
        let mut out = Mesh2D::new(vertices, triangles, tags)?;
        out.grading = self.grading;
        out.inner_circle = self.inner_circle;
        out.outer_circle = self.outer_circle;
        out.layer_radii = self.layer_radii.clone();
        Ok(out)
    }

    /// Plain-text export: header `V T`, then `x y tag` lines, then `i j k` lines.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.vertices.len(), self.triangles.len())?;
        for (p, t) in self.vertices.iter().zip(&self.tags) {
            writeln!(w, "{:.17e} {:.17e} {}", p[0], p[1], t.name())?;
        }
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let mut next = || -> Result<(usize, String)> {
            loop {
                match lines.next() {
                    Some((i, l)) => {
                        let l = l?;
                        if !l.trim().is_empty() {
                            return Ok((i + 1, l));
                        }
                    }
                    None => return Err(Error::Parse { line: 0, msg: "unexpected end of file".into() }),
                }
            }
        };
        let (ln, header) = next()?;
        let counts: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Parse { line: ln, msg: format!("bad header {header:?}") }))
            .collect::<Result<_>>()?;
        if counts.len() != 2 {
            return Err(Error::Parse { line: ln, msg: "header must be `V T`".into() });
        }
        let mut vertices = Vec::with_capacity(counts[0]);
        let mut tags = Vec::with_capacity(counts[0]);
        for _ in 0..counts[0] {
            let (ln, l) = next()?;
            let f: Vec<&str> = l.split_whitespace().collect();
            let bad = || Error::Parse { line: ln, msg: format!("bad vertex line {l:?}") };
            if f.len() != 3 {
                return Err(bad());
            }
            let x: f64 = f[0].parse().map_err(|_| bad())?;
            let y: f64 = f[1].parse().map_err(|_| bad())?;
            vertices.push([x, y]);
            tags.push(VertexTag::from_name(f[2]).ok_or_else(bad)?);
        }
        let mut triangles = Vec::with_capacity(counts[1]);
        for _ in 0..counts[1] {
            let (ln, l) = next()?;
            let bad = || Error::Parse { line: ln, msg: format!("bad triangle line {l:?}") };
            let idx: Vec<usize> = l.split_whitespace().map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
            if idx.len() != 3 || idx.iter().any(|&i| i >= counts[0]) {
                return Err(bad());
            }
            triangles.push([idx[0], idx[1], idx[2]]);
        }
        Mesh2D::new(vertices, triangles, tags)
    }

    fn orient(&mut self) -> Result<()> {
        for t in 0..self.triangles.len() {
            let a = self.signed_area(t);
            if a.abs() <= 1e-300 {
                return Err(Error::Geometry(format!("triangle {t} is degenerate")));
            }
            if a < 0.0 {
                self.triangles[t].swap(1, 2);
            }
        }
        Ok(())
    }

    /// Pairs periodic slaves with their masters by translation over the unit cell.
    fn rebuild_periodic(&mut self) -> Result<()> {
        if !self.tags.iter().any(|t| is_periodic_tag(*t)) {
            self.periodic = Vec::new();
            return Ok(());
        }
        let key = |p: Point| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
        let masters: HashMap<(i64, i64), usize> = self
            .tags
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == VertexTag::PeriodicMaster)
            .map(|(i, _)| (key(self.vertices[i]), i))
            .collect();
        let mut periodic = vec![None; self.vertices.len()];
        for (i, t) in self.tags.iter().enumerate() {
            if *t != VertexTag::PeriodicSlave {
                continue;
            }
            let p = self.vertices[i];
            let image = [
                if (p[0] - 0.5).abs() < 1e-9 { -0.5 } else { p[0] },
                if (p[1] - 0.5).abs() < 1e-9 { -0.5 } else { p[1] },
            ];
            let m = masters
                .get(&key(image))
                .ok_or_else(|| Error::Geometry(format!("periodic slave at {p:?} has no master")))?;
            periodic[i] = Some(*m);
        }
        self.periodic = periodic;
        Ok(())
    }
}

fn is_periodic_tag(t: VertexTag) -> bool {
    matches!(t, VertexTag::PeriodicMaster | VertexTag::PeriodicSlave)
}

fn periodic_tag_of(p: Point) -> VertexTag {
    if (p[0] - 0.5).abs() < 1e-9 || (p[1] - 0.5).abs() < 1e-9 {
        VertexTag::PeriodicSlave
    } else {
        VertexTag::PeriodicMaster
    }
}

/// Annulus mesh of `R·D ∖ S`.
pub fn mesh_annulus(section: &CrossSection, radius: f64, h: f64, grading: Grading) -> Result<Mesh2D> {
    mesh_annulus_nested(section, &[radius], h, grading)
}

/// Annulus mesh whose layers include the circles of every radius in `radii`
/// (sorted ascending). Cutting the mesh at any of these circles yields the
/// mesh of the smaller annulus, so discrete spaces on the ladder are nested.
pub fn mesh_annulus_nested(section: &CrossSection, radii: &[f64], h: f64, grading: Grading) -> Result<Mesh2D> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter(format!("mesh size must be positive, got {h}")));
    }
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("radii must be non-empty and strictly increasing".into()));
    }
    check_inside_disc(section, radii[0])?;
    if !section.is_star_shaped() {
        return Err(Error::Geometry("cross-section must be star-shaped with respect to its centroid".into()));
    }
    let inner = section.boundary_samples(h);
    let n = inner.len();
    let r_mean = inner.iter().map(|p| norm(*p)).sum::<f64>() / n as f64;
    let rho = grading.ratio_for(h, r_mean);
    if matches!(grading, Grading::Log { .. }) && rho <= 1.0 {
        return Err(Error::InvalidParameter(format!("log grading ratio must exceed 1, got {rho}")));
    }
    let layers = |r0: f64, r1: f64| -> usize {
        match grading {
            Grading::Uniform => (((r1 - r0) / h).ceil() as usize).max(1),
            Grading::Log { .. } => (((r1 / r0).ln() / rho.ln()).ceil() as usize).max(1),
        }
    };
    let interp = |r0: f64, r1: f64, t: f64| -> f64 {
        match grading {
            Grading::Uniform => r0 + (r1 - r0) * t,
            Grading::Log { .. } => r0 * (r1 / r0).powf(t),
        }
    };

    // radial node positions per ray: ray j has radius list rs[j]
    let k0 = layers(r_mean, radii[0]);
    let mut seg_layers = vec![k0];
    for w in radii.windows(2) {
        seg_layers.push(layers(w[0], w[1]));
    }
    let total: usize = seg_layers.iter().sum();
    let mut layer_radii = vec![radii[0]];
    for (i, w) in radii.windows(2).enumerate() {
        let k = seg_layers[i + 1];
        for l in 1..=k {
            layer_radii.push(if l == k { w[1] } else { interp(w[0], w[1], l as f64 / k as f64) });
        }
    }

    let mut vertices = Vec::with_capacity(n * (total + 1));
    let mut tags = Vec::with_capacity(n * (total + 1));
    for layer in 0..=total {
        for b in &inner {
            let rb = norm(*b);
            let dir = [b[0] / rb, b[1] / rb];
            let r = if layer <= k0 {
                if layer == 0 {
                    rb
                } else if layer == k0 {
                    radii[0]
                } else {
                    interp(rb, radii[0], layer as f64 / k0 as f64)
                }
            } else {
                layer_radii[layer - k0]
            };
            vertices.push(if layer == 0 { *b } else { [r * dir[0], r * dir[1]] });
            tags.push(if layer == 0 {
                VertexTag::InnerS
            } else if layer == total {
                VertexTag::OuterV
            } else {
                VertexTag::Interior
            });
        }
    }
    let id = |layer: usize, j: usize| layer * n + (j % n);
    let mut triangles = Vec::with_capacity(2 * n * total);
    for layer in 0..total {
        for j in 0..n {
            quad_split(
                &vertices,
                [id(layer, j), id(layer, j + 1), id(layer + 1, j + 1), id(layer + 1, j)],
                &mut triangles,
            );
        }
    }
    let mut mesh = Mesh2D::new(vertices, triangles, tags)?;
    mesh.grading = grading;
    if section.is_disc() {
        mesh.inner_circle = Some(Circle { center: [0.0, 0.0], radius: section.max_radius() });
    }
    mesh.outer_circle = Some(Circle { center: [0.0, 0.0], radius: *radii.last().unwrap() });
    mesh.layer_radii = layer_radii;
    Ok(mesh)
}

/// Triangulation of `S` itself by rings of scaled boundary copies.
pub fn mesh_cell(section: &CrossSection, h: f64) -> Result<Mesh2D> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter(format!("mesh size must be positive, got {h}")));
    }
    if !section.is_star_shaped() {
        return Err(Error::Geometry("cross-section must be star-shaped with respect to its centroid".into()));
    }
    let outer = section.boundary_samples(h);
    let n_out = outer.len();
    let r_mean = outer.iter().map(|p| norm(*p)).sum::<f64>() / n_out as f64;
    let rings = ((r_mean / h).ceil() as usize).max(1);

    let mut vertices = vec![[0.0, 0.0]];
    let mut tags = vec![VertexTag::Interior];
    // each ring: (vertex ids, parameters)
    let mut ring_data: Vec<(Vec<usize>, Vec<f64>)> = Vec::with_capacity(rings);
    for k in 1..=rings {
        if k == rings {
            let params: Vec<f64> = outer.iter().map(|p| section.parameter_of(*p)).collect();
            let ids: Vec<usize> = (0..n_out).map(|i| vertices.len() + i).collect();
            vertices.extend_from_slice(&outer);
            tags.extend(std::iter::repeat(VertexTag::InnerS).take(n_out));
            ring_data.push((ids, params));
        } else {
            let t = k as f64 / rings as f64;
            let m = ((n_out as f64 * t).round() as usize).max(6);
            let params: Vec<f64> = (0..m).map(|i| i as f64 / m as f64).collect();
            let ids: Vec<usize> = (0..m).map(|i| vertices.len() + i).collect();
            for s in &params {
                let p = section.point_at(*s);
                vertices.push([p[0] * t, p[1] * t]);
                tags.push(VertexTag::Interior);
            }
            ring_data.push((ids, params));
        }
    }
    let mut triangles = Vec::new();
    let first = &ring_data[0].0;
    for i in 0..first.len() {
        triangles.push([0, first[i], first[(i + 1) % first.len()]]);
    }
    for k in 0..rings - 1 {
        merge_rings(&ring_data[k], &ring_data[k + 1], &mut triangles);
    }
    let mut mesh = Mesh2D::new(vertices, triangles, tags)?;
    if section.is_disc() {
        mesh.inner_circle = Some(Circle { center: [0.0, 0.0], radius: section.max_radius() });
    }
    Ok(mesh)
}

/// Triangulation of `Y∖S` with periodic pairing on `∂Y`.
pub fn mesh_periodic_cell(section: &CrossSection, h: f64) -> Result<Mesh2D> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter(format!("mesh size must be positive, got {h}")));
    }
    check_inside_cell(section)?;
    if !section.is_star_shaped() {
        return Err(Error::Geometry("cross-section must be star-shaped with respect to its centroid".into()));
    }
    // boundary points of Y, symmetric under both reflections so that periodic pairs exist
    let per_side = ((1.0 / h).ceil() as usize).max(2);
    let mut square: Vec<Point> = Vec::new();
    for i in 0..per_side {
        let u = -0.5 + i as f64 / per_side as f64;
        square.push([u, -0.5]);
        square.push([0.5, u]);
        square.push([-u, 0.5]);
        square.push([-0.5, -u]);
    }
    // the inner boundary must be fine enough as well
    let inner_need = section.boundary_samples(h);
    let extra: Vec<Point> = match &section.boundary {
        Boundary::Polygon { vertices } => vertices.clone(),
        Boundary::Disc { .. } => {
            if inner_need.len() > square.len() {
                inner_need.clone()
            } else {
                Vec::new()
            }
        }
    };
    for c in &extra {
        let q = square_hit(c[1].atan2(c[0]));
        for s in [[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]] {
            square.push([q[0] * s[0], q[1] * s[1]]);
        }
    }
    let mut angles: Vec<(f64, Point)> = square.iter().map(|p| (p[1].atan2(p[0]), *p)).collect();
    angles.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    angles.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-10);
    let n = angles.len();

    let mean_gap = angles
        .iter()
        .map(|(th, q)| norm(*q) - section.radial_extent(*th))
        .sum::<f64>()
        / n as f64;
    let layers = ((mean_gap / h).ceil() as usize).max(1);
    let mut vertices = Vec::with_capacity(n * (layers + 1));
    let mut tags = Vec::with_capacity(n * (layers + 1));
    for layer in 0..=layers {
        let t = layer as f64 / layers as f64;
        for (th, q) in &angles {
            let r_in = section.radial_extent(*th);
            let dir = [th.cos(), th.sin()];
            let p = if layer == layers {
                *q
            } else {
                let r = r_in + (norm(*q) - r_in) * t;
                [r * dir[0], r * dir[1]]
            };
            vertices.push(p);
            tags.push(if layer == 0 {
                VertexTag::InnerS
            } else if layer == layers {
                periodic_tag_of(p)
            } else {
                VertexTag::Interior
            });
        }
    }
    let id = |layer: usize, j: usize| layer * n + (j % n);
    let mut triangles = Vec::new();
    for layer in 0..layers {
        for j in 0..n {
            quad_split(
                &vertices,
                [id(layer, j), id(layer, j + 1), id(layer + 1, j + 1), id(layer + 1, j)],
                &mut triangles,
            );
        }
    }
    let mut mesh = Mesh2D::new(vertices, triangles, tags)?;
    if section.is_disc() {
        mesh.inner_circle = Some(Circle { center: [0.0, 0.0], radius: section.max_radius() });
    }
    Ok(mesh)
}

fn square_hit(theta: f64) -> Point {
    let d = [theta.cos(), theta.sin()];
    let s = 0.5 / d[0].abs().max(d[1].abs());
    let mut p = [d[0] * s, d[1] * s];
    for c in p.iter_mut() {
        if (c.abs() - 0.5).abs() < 1e-12 {
            *c = 0.5 * c.signum();
        }
    }
    p
}

fn quad_split(vertices: &[Point], q: [usize; 4], out: &mut Vec<[usize; 3]>) {
    let d02 = dist(vertices[q[0]], vertices[q[2]]);
    let d13 = dist(vertices[q[1]], vertices[q[3]]);
    let (t1, t2) = if d02 <= d13 {
        ([q[0], q[1], q[2]], [q[0], q[2], q[3]])
    } else {
        ([q[0], q[1], q[3]], [q[1], q[2], q[3]])
    };
    out.push(t1);
    out.push(t2);
}

/// Triangulates the strip between two closed rings using their boundary parameters.
fn merge_rings(inner: &(Vec<usize>, Vec<f64>), outer: &(Vec<usize>, Vec<f64>), out: &mut Vec<[usize; 3]>) {
    let (ai, ap) = inner;
    let (bi, bp) = outer;
    let (na, nb) = (ai.len(), bi.len());
    let param = |p: &[f64], i: usize| -> f64 { p[i % p.len()] + (i / p.len()) as f64 };
    let (mut i, mut j) = (0usize, 0usize);
    while i < na || j < nb {
        let advance_a = if i >= na {
            false
        } else if j >= nb {
            true
        } else {
            param(ap, i + 1) <= param(bp, j + 1)
        };
        if advance_a {
            out.push([ai[i % na], ai[(i + 1) % na], bi[j % nb]]);
            i += 1;
        } else {
            out.push([ai[i % na], bi[(j + 1) % nb], bi[j % nb]]);
            j += 1;
        }
    }
}

pub(crate) fn polygon_signed_area(v: &[Point]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| cross(v[i], v[(i + 1) % n])).sum::<f64>()
}

fn polygon_centroid(v: &[Point], area: f64) -> Point {
    let n = v.len();
    let mut c = [0.0, 0.0];
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        let w = cross(a, b);
        c[0] += (a[0] + b[0]) * w;
        c[1] += (a[1] + b[1]) * w;
    }
    [c[0] / (6.0 * area), c[1] / (6.0 * area)]
}

/// Unnormalized `∫ y_i y_j dy` of a counter-clockwise polygon.
fn polygon_second_moments(v: &[Point]) -> [[f64; 2]; 2] {
    let n = v.len();
    let (mut ixx, mut iyy, mut ixy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        let w = cross(a, b);
        ixx += (a[0] * a[0] + a[0] * b[0] + b[0] * b[0]) * w;
        iyy += (a[1] * a[1] + a[1] * b[1] + b[1] * b[1]) * w;
        ixy += (a[0] * b[1] + 2.0 * a[0] * a[1] + 2.0 * b[0] * b[1] + b[0] * a[1]) * w;
    }
    [[ixx / 12.0, ixy / 24.0], [ixy / 24.0, iyy / 12.0]]
}

fn polygon_is_simple(v: &[Point]) -> bool {
    let n = v.len();
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        for j in i + 1..n {
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (c, d) = (v[j], v[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = cross(sub(b, a), sub(c, a));
    let o2 = cross(sub(b, a), sub(d, a));
    let o3 = cross(sub(d, c), sub(a, c));
    let o4 = cross(sub(d, c), sub(b, c));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

fn point_in_polygon(v: &[Point], p: Point) -> bool {
    let n = v.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        // points on an edge count as inside
        let e = sub(b, a);
        let len2 = dot(e, e);
        let t = (dot(sub(p, a), e) / len2).clamp(0.0, 1.0);
        if dist(p, lerp(a, b, t)) < 1e-12 * len2.sqrt().max(1.0) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Parameter `t ≥ 0` where the ray `t·d` meets segment `[a, b]`.
fn ray_segment(d: Point, a: Point, b: Point) -> Option<f64> {
    let e = sub(b, a);
    let den = cross(d, e);
    if den.abs() < 1e-300 {
        return None;
    }
    let t = cross(a, e) / den;
    let s = cross(a, d) / den;
    (t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&s)).then_some(t)
}

fn bounding_scale(v: &[Point]) -> f64 {
    v.iter().map(|p| p[0].abs().max(p[1].abs())).fold(0.0, f64::max).max(1e-300)
}

#[inline]
pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}
#[inline]
pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}
#[inline]
pub(crate) fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}
#[inline]
pub(crate) fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}
#[inline]
pub(crate) fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}
#[inline]
fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_disc_geometry() {
        let s = CrossSection::new(Shape::UnitDisc).unwrap();
        assert_eq!(s.diameter, 2.0);
        assert!((s.area - PI).abs() < 1e-15);
        assert_eq!(s.centroid, [0.0, 0.0]);
        assert!((s.tau - 0.5).abs() < 1e-15);
        assert!((s.mean_square_radius() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn square_is_centered() {
        let s = CrossSection::polygon(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        assert!(s.shift[0] + 0.5 < 1e-15 && s.shift[1] + 0.5 < 1e-15);
        assert!((s.diameter - 2f64.sqrt()).abs() < 1e-14);
        assert!((s.second_moments[0][0] - 1.0 / 12.0).abs() < 1e-14);
        assert!(s.second_moments[0][1].abs() < 1e-14);
        let Boundary::Polygon { vertices } = &s.boundary else { panic!() };
        assert!((vertices[0][0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn clockwise_input_is_reoriented() {
        let s = CrossSection::polygon(vec![[0.0, 0.0], [0.0, 1.0], [2.0, 1.0], [2.0, 0.0]]).unwrap();
        assert!((s.area - 2.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_polygons_rejected() {
        assert!(CrossSection::polygon(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).is_err());
        assert!(CrossSection::polygon(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]).is_err());
        assert!(CrossSection::disc(0.0).is_err());
    }

    #[test]
    fn normalization_is_idempotent() {
        let s = CrossSection::polygon(vec![[1.0, 2.0], [4.0, 2.5], [3.0, 5.0], [0.5, 4.0]]).unwrap();
        let t = s.renormalized().unwrap();
        assert!(t.shift[0].abs() < 1e-14 && t.shift[1].abs() < 1e-14);
        assert!((t.area - s.area).abs() < 1e-14);
        assert!((t.tau - s.tau).abs() < 1e-14);
    }

    #[test]
    fn radial_extent_of_square() {
        let s = CrossSection::square(1.0).unwrap();
        assert!((s.radial_extent(0.0) - 0.5).abs() < 1e-14);
        assert!((s.radial_extent(PI / 4.0) - 0.5 * 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn annulus_mesh_containment_and_tags() {
        let s = CrossSection::unit_disc();
        let m = mesh_annulus(&s, 4.0, 0.2, Grading::Uniform).unwrap();
        assert!(m.vertices.iter().all(|p| norm(*p) <= 4.0 + 1e-12));
        for (p, t) in m.vertices.iter().zip(&m.tags) {
            if *t == VertexTag::InnerS {
                assert!((norm(*p) - 1.0).abs() < 1e-12);
            }
            if *t == VertexTag::OuterV {
                assert!((norm(*p) - 4.0).abs() < 1e-12);
            }
        }
        assert!((0..m.num_triangles()).all(|t| m.signed_area(t) > 0.0));
        let n = s.boundary_samples(0.2).len() as f64;
        let exact = 0.5 * n * (16.0 - 1.0) * (2.0 * PI / n).sin();
        assert!((m.area() - exact).abs() < 1e-10);
    }

    #[test]
    fn annulus_too_small_rejected() {
        let s = CrossSection::unit_disc();
        assert!(mesh_annulus(&s, 1.0, 0.2, Grading::log()).is_err());
        let sq = CrossSection::square(2.0).unwrap();
        assert!(mesh_annulus(&sq, 1.2, 0.2, Grading::log()).is_err());
    }

    #[test]
    fn log_grading_concentrates_near_inner_boundary() {
        let s = CrossSection::unit_disc();
        let m = mesh_annulus(&s, 4.0, 0.2, Grading::log()).unwrap();
        let mut inner_min = f64::INFINITY;
        let mut outer_max: f64 = 0.0;
        for t in &m.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let l = dist(m.vertices[a], m.vertices[b]);
                if m.tags[a] == VertexTag::InnerS || m.tags[b] == VertexTag::InnerS {
                    inner_min = inner_min.min(l);
                }
                if m.tags[a] == VertexTag::OuterV || m.tags[b] == VertexTag::OuterV {
                    outer_max = outer_max.max(l);
                }
            }
        }
        assert!(inner_min < outer_max);
    }

    #[test]
    fn nested_annulus_has_ladder_circles() {
        let s = CrossSection::unit_disc();
        let m = mesh_annulus_nested(&s, &[2.0, 4.0, 8.0], 0.3, Grading::log()).unwrap();
        for r in [2.0, 4.0, 8.0] {
            assert!(m.layer_radii.iter().any(|x| (x - r).abs() < 1e-14));
            assert!(m.vertices.iter().any(|p| (norm(*p) - r).abs() < 1e-12));
        }
    }

    #[test]
    fn refinement_quadruples_and_keeps_boundaries() {
        let s = CrossSection::unit_disc();
        let m0 = mesh_annulus(&s, 4.0, 0.4, Grading::log()).unwrap();
        let m1 = m0.refine().unwrap();
        let m2 = m1.refine().unwrap();
        for (a, b) in [(&m0, &m1), (&m1, &m2)] {
            let ratio = b.num_vertices() as f64 / a.num_vertices() as f64;
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
            assert_eq!(b.num_triangles(), 4 * a.num_triangles());
        }
        for (p, t) in m2.vertices.iter().zip(&m2.tags) {
            match t {
                VertexTag::InnerS => assert!((norm(*p) - 1.0).abs() < 1e-12),
                VertexTag::OuterV => assert!((norm(*p) - 4.0).abs() < 1e-12),
                _ => {}
            }
        }
    }

    #[test]
    fn polygon_refinement_keeps_boundary_on_edges() {
        let s = CrossSection::square(1.0).unwrap();
        let m = mesh_cell(&s, 0.2).unwrap().refine().unwrap();
        for (p, t) in m.vertices.iter().zip(&m.tags) {
            if *t == VertexTag::InnerS {
                assert!(((p[0].abs() - 0.5).abs() < 1e-12) || ((p[1].abs() - 0.5).abs() < 1e-12));
            }
        }
        assert!((m.area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cell_mesh_of_disc() {
        let s = CrossSection::unit_disc();
        let m = mesh_cell(&s, 0.1).unwrap();
        assert!(!m.tags.contains(&VertexTag::OuterV));
        assert!((0..m.num_triangles()).all(|t| m.signed_area(t) > 0.0));
        assert!((m.area() - PI).abs() < 0.01);
    }

    #[test]
    fn cell_mesh_of_polygon_is_exact() {
        let s = CrossSection::polygon(vec![[0.0, 0.0], [2.0, 0.0], [2.5, 1.0], [1.0, 2.0], [-0.5, 1.0]]).unwrap();
        let m = mesh_cell(&s, 0.15).unwrap();
        assert!((m.area() - s.area).abs() < 1e-12);
        assert!((0..m.num_triangles()).all(|t| m.signed_area(t) > 0.0));
    }

    #[test]
    fn periodic_cell_pairs() {
        let s = CrossSection::disc(0.3).unwrap();
        let m = mesh_periodic_cell(&s, 0.05).unwrap();
        for v in 0..m.num_vertices() {
            if m.tags[v] != VertexTag::PeriodicMaster {
                continue;
            }
            let p = m.vertices[v];
            if (p[0] + 0.5).abs() < 1e-12 && (p[1] + 0.5).abs() < 1e-12 {
                continue;
            }
            let slaves: Vec<usize> = (0..m.num_vertices()).filter(|&w| m.periodic_master(w) == Some(v)).collect();
            assert_eq!(slaves.len(), 1, "master at {p:?}");
            let d = sub(m.vertices[slaves[0]], p);
            assert!(((d[0] - 1.0).abs() < 1e-12 && d[1].abs() < 1e-12) || (d[0].abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn periodic_cell_area() {
        let s = CrossSection::disc(0.3).unwrap();
        let m = mesh_periodic_cell(&s, 0.02).unwrap();
        assert!((m.area() - (1.0 - PI * 0.09)).abs() < 1e-3);
        assert!((m.hole_area() + m.area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_cell_rejects_touching_section() {
        let s = CrossSection::disc(0.5).unwrap();
        assert!(mesh_periodic_cell(&s, 0.05).is_err());
        let sq = CrossSection::square(1.0).unwrap();
        assert!(mesh_periodic_cell(&sq, 0.05).is_err());
    }

    #[test]
    fn periodic_cell_refines() {
        let s = CrossSection::square(0.4).unwrap();
        let m = mesh_periodic_cell(&s, 0.1).unwrap();
        let r = m.refine().unwrap();
        assert!(r.is_periodic());
        assert!((r.area() - (1.0 - 0.16)).abs() < 1e-12);
    }

    #[test]
    fn text_roundtrip() {
        let s = CrossSection::disc(0.3).unwrap();
        let m = mesh_periodic_cell(&s, 0.1).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let back = Mesh2D::read_text(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.tags, m.tags);
        assert_eq!(back.vertices, m.vertices);
        assert!(back.is_periodic());
    }

    #[test]
    fn inner_loop_area_matches_polygon() {
        let s = CrossSection::square(1.0).unwrap();
        let m = mesh_annulus(&s, 3.0, 0.25, Grading::log()).unwrap();
        assert!((m.hole_area() - 1.0).abs() < 1e-12);
        let c = m.hole_first_moment();
        assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12);
    }
}
