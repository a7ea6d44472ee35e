use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fiberhom::capacity::{
    capacity, capacity_decay_p_gt2, capacity_density, capacity_ladder, capacity_plane_limit, p2_ladder, CapacityQuery,
    DensitySettings, DEFAULT_H, DEFAULT_P2_LADDER, DEFAULT_PLANE_LADDER,
};
use fiberhom::cell::{ghom_on_mesh, soft_density_on_mesh, CellLoad, CellRegime, CellSolver};
use fiberhom::fem::{IterationRecord, SolverOptions};
use fiberhom::geometry::{mesh_cell, mesh_periodic_cell};
use fiberhom::limit1d::{solve_fiber, uniform_grid, Coupling, FiberProblem, ForceTerms, PowerForm};
use fiberhom::regimes::{admissible_r, classify, DensityBranch, LimitDomain, RegimeReport};
use rayon::prelude::*;
use serde_json::{json, Value as Json};

use crate::config::{resolve, set_path, CapMode, Resolved, RunConfig};

const SOLVER: SolverOptions = SolverOptions { tol: 1e-10, max_iter: 200 };

/// What a command produced, before it is written out.
#[derive(Debug, Default)]
pub struct Artifact {
    /// CSV rows including the column line, or a JSON document.
    pub body: String,
    pub json: Option<Json>,
    /// Comment lines placed before the rows.
    pub notes: Vec<String>,
    /// Comment lines placed after the rows.
    pub trailer: Vec<String>,
    pub histories: Vec<(String, Vec<IterationRecord>)>,
    pub exit_code: i32,
}

impl Artifact {
    fn csv(columns: &[&str]) -> Self {
        Self { body: format!("{}\n", columns.join(",")), ..Default::default() }
    }

    fn row(&mut self, cells: &[String]) {
        self.body.push_str(&cells.join(","));
        self.body.push('\n');
    }
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Finite numbers as JSON numbers, the rest as strings (`inf`, `NaN`).
fn jnum(x: f64) -> Json {
    if x.is_finite() {
        json!(x)
    } else {
        json!(format!("{x}"))
    }
}

/// Runs the configured command and renders its output.
pub fn run(resolved: &Resolved) -> Result<Artifact> {
    let c = &resolved.config;
    match c.command.as_str() {
        "cap" => run_cap(c),
        "cell" => run_cell(c),
        "soft-cell" => run_soft_cell(c),
        "regime" => run_regime(c),
        "limit1d" => run_limit1d(c),
        "sweep" => run_sweep(resolved),
        "verify" => run_verify(c),
        other => bail!("command: unknown command `{other}`"),
    }
}

/// Renders the artifact with its provenance header.
pub fn render(resolved: &Resolved, a: &Artifact) -> String {
    if let Some(j) = &a.json {
        let config: Json = serde_json::from_str(&resolved.json()).expect("config is JSON");
        let doc = json!({
            "command": resolved.config.command,
            "config_sha256": resolved.hash(),
            "config": config,
            "result": j,
        });
        return serde_json::to_string_pretty(&doc).expect("serializable") + "\n";
    }
    let mut s = String::new();
    let _ = writeln!(s, "# fiberhom {}", resolved.config.command);
    let _ = writeln!(s, "# config_sha256: {}", resolved.hash());
    let _ = writeln!(s, "# config: {}", resolved.json());
    for n in &a.notes {
        let _ = writeln!(s, "# {n}");
    }
    s.push_str(&a.body);
    for n in &a.trailer {
        let _ = writeln!(s, "# {n}");
    }
    s
}

pub fn render_histories(histories: &[(String, Vec<IterationRecord>)]) -> String {
    let mut s = String::from("run,iteration,energy,grad_norm,step\n");
    for (name, h) in histories {
        for r in h {
            let _ = writeln!(s, "{name},{},{:?},{:?},{:?}", r.iter, r.energy, r.grad_norm, r.step);
        }
    }
    s
}

/// Runs, writes the output and diagnostics files, and returns the exit code.
pub fn execute(resolved: &Resolved) -> Result<i32> {
    let c = &resolved.config;
    let artifact = match run(resolved) {
        Ok(a) => a,
        Err(e) => {
            if let Some(fiberhom::Error::Convergence(fail)) = e.downcast_ref::<fiberhom::Error>() {
                let path = diagnostics_path(c).unwrap_or_else(|| PathBuf::from("fiberhom-diagnostics.csv"));
                std::fs::write(&path, render_histories(&[("failed".into(), fail.history.clone())]))
                    .with_context(|| format!("writing {}", path.display()))?;
                return Err(e.context(format!("solver history written to {}", path.display())));
            }
            return Err(e);
        }
    };
    let text = render(resolved, &artifact);
    match &c.output {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
        }
        None => print!("{text}"),
    }
    if c.verbose && !artifact.histories.is_empty() {
        let hist = render_histories(&artifact.histories);
        match diagnostics_path(c) {
            Some(p) => std::fs::write(&p, hist).with_context(|| format!("writing {}", p.display()))?,
            None => eprint!("{hist}"),
        }
    }
    Ok(artifact.exit_code)
}

fn diagnostics_path(c: &RunConfig) -> Option<PathBuf> {
    c.diagnostics.clone().or_else(|| c.output.as_ref().map(|p| p.with_extension("diag.csv")))
}

fn run_cap(c: &RunConfig) -> Result<Artifact> {
    let f = c.density.build()?;
    let s = c.section.build()?;
    let h = c.mesh.h_or(DEFAULT_H);
    let cap = &c.cap;
    let r_s = s.max_radius();
    let mut out = Artifact::csv(&["r", "R", "h", "value", "scaled_value", "error_estimate"]);
    match cap.mode {
        CapMode::Single => {
            let q = CapacityQuery::new(f, s, cap.a, cap.zeta, cap.outer_radius)
                .with_mesh_size(h)
                .with_grading(c.mesh.grading());
            let r = capacity(&q)?;
            out.notes.push(format!("mesh: vertices={}, triangles={}, h={h}", r.num_vertices, r.num_triangles));
            out.row(&[num(r_s), num(cap.outer_radius), num(h), num(r.value), num(r.value), String::new()]);
            out.histories.push(("cap".into(), r.diagnostics.history));
        }
        CapMode::P2Ladder => {
            let ks: Vec<u32> = match &cap.ladder {
                Some(l) => l.iter().map(|k| *k as u32).collect(),
                None => DEFAULT_P2_LADDER.to_vec(),
            };
            let lad = p2_ladder(&f, &s, cap.a, &ks, h)?;
            for p in &lad.points {
                out.row(&[num(p.r), num(p.big_r), num(p.h), num(p.value), num(p.scaled_value), num(lad.error_estimate)]);
            }
            out.notes.push(format!(
                "mesh: finest vertices={}",
                lad.points.iter().map(|p| p.num_vertices).max().unwrap_or(0)
            ));
            out.trailer.push(format!("extrapolated = {}, error_estimate = {}", lad.extrapolated, lad.error_estimate));
        }
        CapMode::RadiusLadder => {
            let radii = cap.ladder.clone().unwrap_or_else(|| vec![2.0, 4.0, 8.0]);
            let lad = capacity_ladder(&f, &s, cap.a, cap.zeta, &radii, h, SOLVER)?;
            for (big_r, r) in &lad {
                out.row(&[num(r_s), num(*big_r), num(h), num(r.value), num(r.value), String::new()]);
            }
            if let Some((_, r)) = lad.last() {
                out.notes.push(format!("mesh: vertices={}, triangles={}, h={}", r.num_vertices, r.num_triangles, h));
            }
            for (big_r, r) in lad {
                out.histories.push((format!("R={big_r}"), r.diagnostics.history));
            }
        }
        CapMode::PlaneLimit => {
            let radii = cap.ladder.clone().unwrap_or_else(|| DEFAULT_PLANE_LADDER.to_vec());
            let lim = capacity_plane_limit(&f, &s, cap.a, cap.zeta, &radii, h)?;
            for (i, (big_r, v)) in lim.radii.iter().zip(&lim.values).enumerate() {
                let extrap = if i == 0 { f64::NAN } else { lim.extrapolants[i - 1] };
                out.row(&[num(r_s), num(*big_r), num(h), num(*v), num(extrap), num(lim.error_estimate)]);
            }
            out.trailer.push(format!(
                "limit = {}, error_estimate = {}, exponent_q = {}",
                lim.limit, lim.error_estimate, lim.exponent_q
            ));
        }
        CapMode::Decay => {
            let radii = cap.ladder.clone().unwrap_or_else(|| vec![2.0, 4.0, 8.0, 16.0, 32.0]);
            let d = capacity_decay_p_gt2(&f, cap.a, &radii, h)?;
            for (big_r, v) in d.radii.iter().zip(&d.values) {
                out.row(&[num(r_s), num(*big_r), num(h), num(*v), num(*v), String::new()]);
            }
            out.trailer.push(format!("monotone = {}, slope = {}, radial_slope = {}", d.monotone, d.slope, d.radial_slope));
        }
    }
    Ok(out)
}

fn cell_regime(name: &str) -> Result<CellRegime> {
    match name {
        "finite_k" => Ok(CellRegime::FiniteK),
        "finite_kappa" => Ok(CellRegime::FiniteKappa),
        r => bail!("cell.regime: unknown regime `{r}`"),
    }
}

fn unit_loads(dim: usize) -> Vec<Vec<f64>> {
    (0..dim).map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn matrix_block(name: &str, q: &[Vec<f64>]) -> Vec<String> {
    let mut lines = vec![format!("{name}:")];
    for (i, row) in q.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|x| num(*x)).collect();
        let open = if i == 0 { "[[" } else { " [" };
        let close = if i + 1 == q.len() { "]]" } else { "]," };
        lines.push(format!("{open}{}{close}", cells.join(", ")));
    }
    lines
}

fn run_cell(c: &RunConfig) -> Result<Artifact> {
    let g = c.fiber.build()?;
    let s = c.section.build()?;
    let regime = cell_regime(&c.cell.regime)?;
    let h = c.mesh.h_or(fiberhom::cell::DEFAULT_CELL_H);
    let mesh = mesh_cell(&s, h)?;
    let loads = if c.cell.loads.is_empty() { unit_loads(regime.dim()) } else { c.cell.loads.clone() };
    let mut cols: Vec<&str> = regime.load_names().to_vec();
    cols.push("value");
    let mut out = Artifact::csv(&cols);
    out.notes.push(format!("mesh: vertices={}, triangles={}, h={h}", mesh.num_vertices(), mesh.num_triangles()));
    out.notes.push(format!("regime: {}, coefficient = {}", regime.label(), c.cell.coefficient));
    if regime.effective_density(&g)?.is_quadratic() {
        let solver = CellSolver::new(&g, &mesh, s.diameter, c.cell.coefficient, regime)?;
        for l in &loads {
            let (v, _, d) = solver.solve(&CellLoad::from_slice(regime, l)?)?;
            let mut row: Vec<String> = l.iter().map(|x| num(*x)).collect();
            row.push(num(v));
            out.row(&row);
            out.histories.push((format!("{l:?}"), d.history));
        }
        out.trailer.extend(matrix_block("quadratic_form", &solver.quadratic_form()?));
    } else {
        for l in &loads {
            let r = ghom_on_mesh(&g, &mesh, s.diameter, c.cell.coefficient, CellLoad::from_slice(regime, l)?, SOLVER)?;
            let mut row: Vec<String> = l.iter().map(|x| num(*x)).collect();
            row.push(num(r.ghom_value));
            out.row(&row);
            out.histories.push((format!("{l:?}"), r.diagnostics.history));
        }
        out.trailer.push("quadratic_form: none (non-quadratic density)".into());
    }
    Ok(out)
}

fn run_soft_cell(c: &RunConfig) -> Result<Artifact> {
    let f = c.density.build()?;
    let hole = c.soft_cell.hole.build()?;
    let h = c.mesh.h_or(fiberhom::cell::DEFAULT_SOFT_H);
    let mesh = mesh_periodic_cell(&hole, h)?;
    let loads: Vec<[f64; 4]> = if c.soft_cell.loads.is_empty() {
        unit_loads(4).into_iter().map(|l| [l[0], l[1], l[2], l[3]]).collect()
    } else {
        c.soft_cell.loads.clone()
    };
    let mut out = Artifact::csv(&["a1", "a2", "a3", "zeta", "value"]);
    out.notes.push(format!("mesh: vertices={}, triangles={}, h={h}", mesh.num_vertices(), mesh.num_triangles()));
    let mut values = Vec::new();
    for l in &loads {
        let r = soft_density_on_mesh(&f, &mesh, hole.diameter, [l[0], l[1], l[2]], l[3], SOLVER)?;
        out.row(&[num(l[0]), num(l[1]), num(l[2]), num(l[3]), num(r.value)]);
        out.histories.push((format!("{l:?}"), r.diagnostics.history));
        values.push(r.value);
    }
    if f.is_quadratic() {
        let q = fiberhom::cell::polarize(4, |x| {
            soft_density_on_mesh(&f, &mesh, hole.diameter, [x[0], x[1], x[2]], x[3], SOLVER).map(|r| r.value)
        })?;
        out.trailer.extend(matrix_block("quadratic_form", &q));
    }
    Ok(out)
}

fn report_json(r: &RegimeReport) -> Json {
    json!({
        "p": jnum(r.p),
        "k": jnum(r.k),
        "kappa": jnum(r.kappa),
        "gamma_p": jnum(r.gamma_p),
        "domain": r.domain_label,
        "branch": r.branch_label,
        "degenerate": r.degenerate,
    })
}

fn run_regime(c: &RunConfig) -> Result<Artifact> {
    let fam = c.regime.family.as_ref().ok_or_else(|| anyhow!("regime.family: missing"))?;
    let rep = classify(fam)?;
    let mut result = json!({ "report": report_json(&rep) });
    if let Some(eps) = c.regime.eps {
        let band = admissible_r(fam, eps)?;
        result["radius_band"] = json!({
            "eps": jnum(band.eps),
            "r": jnum(band.r),
            "lower": jnum(band.lower),
            "upper": jnum(band.upper),
            "active_upper": band.active_upper,
            "default_r": jnum(band.default_r),
        });
    }
    Ok(Artifact { json: Some(result), ..Default::default() })
}

fn interpolate(samples: &[[f64; 4]], x: f64) -> [f64; 3] {
    if samples.is_empty() {
        return [0.0; 3];
    }
    let i = samples.partition_point(|s| s[0] <= x);
    if i == 0 {
        return [samples[0][1], samples[0][2], samples[0][3]];
    }
    if i == samples.len() {
        let s = samples[i - 1];
        return [s[1], s[2], s[3]];
    }
    let (a, b) = (samples[i - 1], samples[i]);
    let t = (x - a[0]) / (b[0] - a[0]);
    std::array::from_fn(|k| a[k + 1] + t * (b[k + 1] - a[k + 1]))
}

fn run_limit1d(c: &RunConfig) -> Result<Artifact> {
    let l = &c.limit1d;
    let report = match &l.limits {
        Some(m) => RegimeReport::from_limits(m.p, m.k, m.kappa, m.gamma)?,
        None => classify(c.regime.family.as_ref().expect("validated"))?,
    };
    let f = c.density.build()?;
    let g = c.fiber.build()?;
    let s = c.section.build()?;
    if report.branch == DensityBranch::Vanishing {
        bail!("limit1d: γ = 0 leaves the fibers without coupling to the matrix");
    }
    let settings = DensitySettings { h: c.mesh.h_or(DEFAULT_H), ..Default::default() };
    let coupling = Coupling::from_density(&capacity_density(&f, &s, &report, &settings)?)?;
    let cell = match report.domain {
        LimitDomain::FiniteK => Some((CellRegime::FiniteK, report.k)),
        LimitDomain::FiniteKappa => Some((CellRegime::FiniteKappa, report.kappa)),
        _ => None,
    };
    let ghom = match cell {
        None => None,
        Some((regime, coef)) => {
            let mesh = mesh_cell(&s, l.cell_h)?;
            if regime.effective_density(&g)?.is_quadratic() {
                Some(PowerForm::quadratic(CellSolver::new(&g, &mesh, s.diameter, coef, regime)?.quadratic_form()?)?)
            } else {
                Some(PowerForm::fit(regime.dim(), g.exponent(), |x| {
                    ghom_on_mesh(&g, &mesh, s.diameter, coef, CellLoad::from_slice(regime, x)?, SOLVER).map(|r| r.ghom_value)
                })?)
            }
        }
    };
    let x = uniform_grid(l.length, l.nodes)?;
    let u = x.iter().map(|t| interpolate(&l.u, *t)).collect();
    let fc = &l.forces;
    let forces = vec![
        ForceTerms { g0: fc.g0, g0_torque: fc.g0_torque, a0: fc.a0, a0_moment: fc.a0_moment, beta0: fc.beta0 };
        x.len()
    ];
    let fp = FiberProblem::new(&report, x, ghom, coupling, u, forces, s.tau)?;
    let sol = solve_fiber(&fp)?;
    let mut out = Artifact::csv(&["x3", "v1", "v2", "v3", "theta", "w", "delta"]);
    out.notes.push(format!("domain: {}, branch: {}", report.domain_label, report.branch_label));
    out.notes.push(format!("nodes: {}, energy = {}, iterations = {}", fp.nodes.len(), sol.energy, sol.iterations));
    let t = &sol.tuple;
    for i in 0..t.x.len() {
        out.row(&[
            num(t.x[i]),
            num(t.v[i][0]),
            num(t.v[i][1]),
            num(t.v[i][2]),
            num(t.theta[i]),
            num(t.w[i]),
            num(t.delta[i]),
        ]);
    }
    Ok(out)
}

fn file_stem(value: &toml::Value) -> String {
    let raw = match value {
        toml::Value::String(s) => s.clone(),
        v => v.to_string(),
    };
    raw.chars().map(|ch| if ch.is_ascii_alphanumeric() || "+-.".contains(ch) { ch } else { '_' }).collect()
}

fn run_sweep(resolved: &Resolved) -> Result<Artifact> {
    let c = &resolved.config;
    let sw = &c.sweep;
    let command = sw.command.clone().expect("validated");
    let param = sw.parameter.clone().expect("validated");
    let points: Vec<(toml::Value, PathBuf)> = sw
        .values
        .iter()
        .map(|v| (v.clone(), sw.out_dir.join(format!("{command}_{param}={}.csv", file_stem(v)))))
        .collect();
    let configs = points
        .iter()
        .map(|(v, path)| {
            let mut doc = resolved.document.clone();
            doc.remove("sweep");
            doc.remove("output");
            doc.remove("diagnostics");
            set_path(&mut doc, "command", toml::Value::String(command.clone()))?;
            set_path(&mut doc, &param, v.clone())?;
            set_path(&mut doc, "output", toml::Value::String(path.to_string_lossy().into_owned()))?;
            resolve(doc).with_context(|| format!("sweep point {param} = {v}"))
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(&sw.out_dir).with_context(|| format!("creating {}", sw.out_dir.display()))?;
    let statuses: Vec<String> = configs
        .par_iter()
        .map(|r| match execute(r) {
            Ok(0) => "ok".to_string(),
            Ok(code) => format!("exit {code}"),
            Err(e) => format!("error: {}", e.to_string().replace(',', ";")),
        })
        .collect();
    let mut out = Artifact::csv(&["parameter", "value", "file", "status"]);
    let mut failed = false;
    for ((v, path), st) in points.iter().zip(&statuses) {
        failed |= st != "ok";
        out.row(&[param.clone(), file_stem(v), display(path), st.clone()]);
    }
    out.exit_code = if failed { 1 } else { 0 };
    Ok(out)
}

fn display(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn run_verify(c: &RunConfig) -> Result<Artifact> {
    let ids = c.verify.ids()?;
    let mut out = Artifact::csv(&["id", "status", "title"]);
    let mut all = true;
    for id in ids {
        let r = fiberhom::verify::run(id, c.seed)?;
        all &= r.passed;
        out.row(&[format!("C{id}"), if r.passed { "PASS" } else { "FAIL" }.into(), r.title.to_string()]);
        out.trailer.push(format!("C{id}"));
        out.trailer.extend(r.lines.iter().map(|l| format!("  {l}")));
    }
    out.exit_code = if all { 0 } else { 2 };
    Ok(out)
}
