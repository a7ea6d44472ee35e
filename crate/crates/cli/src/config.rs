//! Run configuration: a TOML document with one section per module, merged
//! with command-line overrides and validated before any solve.
//!
//! ```toml
//! command = "cap"
//! seed = 7
//!
//! [density]            # matrix density f
//! kind = "isotropic"   # isotropic | p_norm | quadratic_form | aniso_example | blended
//! lambda = 1.0
//! mu = 1.0
//!
//! [section]            # fiber cross-section S
//! shape = "disc"       # disc | square | polygon
//! radius = 1.0
//!
//! [mesh]
//! h = 0.05
//!
//! [cap]
//! mode = "single"      # single | p2_ladder | radius_ladder | plane_limit | decay
//! a = [0.0, 0.0, 1.0]
//! zeta = 0.0
//! outer_radius = 4.0
//! ```
//!
//! The remaining sections (`fiber`, `cell`, `soft_cell`, `regime`,
//! `limit1d`, `sweep`, `verify`) are described on their types below.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use fiberhom::energy::EnergyDensity;
use fiberhom::geometry::{CrossSection, Grading};
use fiberhom::regimes::ScalingFamily;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

pub const COMMANDS: [&str; 7] = ["cap", "cell", "soft-cell", "regime", "limit1d", "sweep", "verify"];

pub const DEFAULT_SEED: u64 = 20240611;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub jobs: Option<usize>,
    /// Output file; standard output when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Solver history file (written with `verbose` or on solver failure).
    #[serde(default)]
    pub diagnostics: Option<PathBuf>,
    #[serde(default)]
    pub verbose: bool,
    #[serde(default)]
    pub density: DensityConfig,
    /// Fiber density `g` of the cell problems and the 1D limit.
    #[serde(default)]
    pub fiber: DensityConfig,
    #[serde(default)]
    pub section: SectionConfig,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub cap: CapConfig,
    #[serde(default)]
    pub cell: CellConfig,
    #[serde(default)]
    pub soft_cell: SoftCellConfig,
    #[serde(default)]
    pub regime: RegimeConfig,
    #[serde(default)]
    pub limit1d: Limit1dConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    Isotropic { lambda: f64, mu: f64 },
    PNorm { #[serde(default = "one")] c: f64, p: f64 },
    /// 21 upper-triangle entries of the 6×6 table, row by row.
    QuadraticForm { table: Vec<f64> },
    AnisoExample,
    Blended { c: f64, p: f64, b: f64, q: f64 },
}

fn one() -> f64 {
    1.0
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig::Isotropic { lambda: 1.0, mu: 1.0 }
    }
}

impl DensityConfig {
    pub fn build(&self) -> fiberhom::Result<EnergyDensity> {
        match self {
            DensityConfig::Isotropic { lambda, mu } => EnergyDensity::isotropic(*lambda, *mu),
            DensityConfig::PNorm { c, p } => EnergyDensity::p_norm(*c, *p),
            DensityConfig::QuadraticForm { table } => EnergyDensity::quadratic_form_upper(table),
            DensityConfig::AnisoExample => Ok(EnergyDensity::aniso_example()),
            DensityConfig::Blended { c, p, b, q } => EnergyDensity::blended(*c, *p, *b, *q),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum SectionConfig {
    Disc { #[serde(default = "one")] radius: f64 },
    Square { side: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl Default for SectionConfig {
    fn default() -> Self {
        SectionConfig::Disc { radius: 1.0 }
    }
}

impl SectionConfig {
    pub fn build(&self) -> fiberhom::Result<CrossSection> {
        match self {
            SectionConfig::Disc { radius } => CrossSection::disc(*radius),
            SectionConfig::Square { side } => CrossSection::square(*side),
            SectionConfig::Polygon { vertices } => CrossSection::polygon(vertices.clone()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Mesh size; each command has its own default.
    pub h: Option<f64>,
    /// `log` (geometric layers around the hole) or `uniform`.
    #[serde(default = "default_grading")]
    pub grading: String,
    pub log_ratio: Option<f64>,
}

fn default_grading() -> String {
    "log".into()
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { h: None, grading: default_grading(), log_ratio: None }
    }
}

impl MeshConfig {
    pub fn grading(&self) -> Grading {
        match self.grading.as_str() {
            "uniform" => Grading::Uniform,
            _ => Grading::Log { ratio: self.log_ratio },
        }
    }

    pub fn h_or(&self, default: f64) -> f64 {
        self.h.unwrap_or(default)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapMode {
    /// One capacity on the annulus `B_R \ S`.
    Single,
    /// `|log r| cap(a, 0; rS, D)` for `r = 2^{-k}`, p = 2.
    P2Ladder,
    /// Capacities on nested radii.
    RadiusLadder,
    /// Plane limit `R → ∞` for `1 < p < 2`.
    PlaneLimit,
    /// Decay in `R` for `p > 2`.
    Decay,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapConfig {
    #[serde(default = "default_mode")]
    pub mode: CapMode,
    #[serde(default)]
    pub a: [f64; 3],
    #[serde(default)]
    pub zeta: f64,
    #[serde(default = "default_outer")]
    pub outer_radius: f64,
    /// Radii, or the exponents `k` for `p2_ladder`.
    pub ladder: Option<Vec<f64>>,
}

fn default_mode() -> CapMode {
    CapMode::Single
}

fn default_outer() -> f64 {
    4.0
}

impl Default for CapConfig {
    fn default() -> Self {
        Self { mode: CapMode::Single, a: [0.0; 3], zeta: 0.0, outer_radius: 4.0, ladder: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    /// `finite_k` (loads `[a, β]`) or `finite_kappa` (loads `[ζ₁, ζ₂, a, β]`).
    #[serde(default = "default_regime")]
    pub regime: String,
    /// `k` or `κ`.
    #[serde(default = "one")]
    pub coefficient: f64,
    /// Load vectors; the unit vectors when empty.
    #[serde(default)]
    pub loads: Vec<Vec<f64>>,
}

fn default_regime() -> String {
    "finite_k".into()
}

impl Default for CellConfig {
    fn default() -> Self {
        Self { regime: default_regime(), coefficient: 1.0, loads: Vec::new() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftCellConfig {
    /// The fiber inside the unit periodic cell.
    #[serde(default = "default_hole")]
    pub hole: SectionConfig,
    /// Loads `[a₁, a₂, a₃, ζ]`; the unit vectors when empty.
    #[serde(default)]
    pub loads: Vec<[f64; 4]>,
}

fn default_hole() -> SectionConfig {
    SectionConfig::Disc { radius: 0.25 }
}

impl Default for SoftCellConfig {
    fn default() -> Self {
        Self { hole: default_hole(), loads: Vec::new() }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub family: Option<ScalingFamily>,
    /// Optional ε at which the admissible outer-radius band is reported.
    pub eps: Option<f64>,
}

/// Limits `(p, k, κ, γ)` given directly instead of through a family.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub p: f64,
    pub k: f64,
    pub kappa: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceConfig {
    #[serde(default)]
    pub g0: [f64; 3],
    #[serde(default)]
    pub g0_torque: f64,
    #[serde(default)]
    pub a0: f64,
    #[serde(default)]
    pub a0_moment: [f64; 2],
    #[serde(default)]
    pub beta0: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limit1dConfig {
    #[serde(default = "one")]
    pub length: f64,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    /// Overrides the classification of `regime.family`.
    pub limits: Option<Limits>,
    #[serde(default = "default_cell_h")]
    pub cell_h: f64,
    /// Samples `[x₃, u₁, u₂, u₃]` of the matrix displacement on the line,
    /// interpolated linearly; zero when empty.
    #[serde(default)]
    pub u: Vec<[f64; 4]>,
    /// Constant line forces.
    #[serde(default)]
    pub forces: ForceConfig,
}

fn default_nodes() -> usize {
    101
}

fn default_cell_h() -> f64 {
    fiberhom::cell::DEFAULT_CELL_H
}

impl Default for Limit1dConfig {
    fn default() -> Self {
        Self {
            length: 1.0,
            nodes: default_nodes(),
            limits: None,
            cell_h: default_cell_h(),
            u: Vec::new(),
            forces: ForceConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// The command run at each point.
    pub command: Option<String>,
    /// Dotted key replaced at each point, for example `cap.zeta`.
    pub parameter: Option<String>,
    #[serde(default)]
    pub values: Vec<Value>,
    /// Directory of the per-point result files.
    #[serde(default = "default_sweep_dir")]
    pub out_dir: PathBuf,
}

fn default_sweep_dir() -> PathBuf {
    PathBuf::from("sweep")
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { command: None, parameter: None, values: Vec::new(), out_dir: default_sweep_dir() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// `all`, `isotropic`, `capacity`, `cell`, `fiber` or `regime`.
    #[serde(default = "default_suite")]
    pub suite: String,
    /// Explicit check ids; overrides `suite`.
    pub checks: Option<Vec<u32>>,
}

fn default_suite() -> String {
    "all".into()
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { suite: default_suite(), checks: None }
    }
}

impl VerifyConfig {
    pub fn ids(&self) -> Result<Vec<u32>> {
        if let Some(c) = &self.checks {
            return Ok(c.clone());
        }
        Ok(match self.suite.as_str() {
            "all" => fiberhom::verify::CRITERIA.to_vec(),
            "isotropic" => vec![1, 2, 7, 8],
            "capacity" => vec![1, 2, 3, 4, 5, 10, 11],
            "cell" => vec![6, 7, 8, 9],
            "fiber" => vec![9, 12],
            "regime" => vec![13],
            s => bail!("verify.suite: unknown suite `{s}`"),
        })
    }
}

/// A validated configuration together with the merged document it came from.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub document: Table,
}

impl Resolved {
    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.config).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn json(&self) -> String {
        serde_json::to_string(&self.config).expect("config serializes")
    }
}

/// Parses `value` as a TOML value, falling back to a plain string.
pub fn parse_value(value: &str) -> Value {
    match format!("v = {value}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(value.to_string()),
    }
}

/// Sets the dotted `path` in `doc`, creating intermediate tables.
pub fn set_path(doc: &mut Table, path: &str, value: Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("malformed key `{path}`");
    }
    let mut cur = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| anyhow!("`{path}`: `{k}` is not a section"))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `KEY=VALUE`.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("override `{s}` is not of the form KEY=VALUE"))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

pub fn load_document(path: Option<&std::path::Path>) -> Result<Table> {
    match path {
        None => Ok(Table::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            text.parse::<Table>().with_context(|| format!("parsing {}", p.display()))
        }
    }
}

/// Deserializes and validates a merged document.
pub fn resolve(document: Table) -> Result<Resolved> {
    let value = Value::Table(document.clone());
    let config: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("invalid configuration at `{path}`: {}", e.into_inner())
    })?;
    validate(&config)?;
    Ok(Resolved { config, document })
}

fn positive(key: &str, x: f64) -> Result<()> {
    if !(x.is_finite() && x > 0.0) {
        bail!("{key}: must be positive and finite, got {x}");
    }
    Ok(())
}

fn finite(key: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        bail!("{key}: entries must be finite");
    }
    Ok(())
}

pub fn validate(c: &RunConfig) -> Result<()> {
    if !COMMANDS.contains(&c.command.as_str()) {
        bail!("command: unknown command `{}` (expected one of {})", c.command, COMMANDS.join(", "));
    }
    if let Some(j) = c.jobs {
        if j == 0 {
            bail!("jobs: must be at least 1");
        }
    }
    c.density.build().map_err(|e| anyhow!("density: {e}"))?;
    c.fiber.build().map_err(|e| anyhow!("fiber: {e}"))?;
    c.section.build().map_err(|e| anyhow!("section: {e}"))?;
    if let Some(h) = c.mesh.h {
        positive("mesh.h", h)?;
    }
    if !["log", "uniform"].contains(&c.mesh.grading.as_str()) {
        bail!("mesh.grading: expected `log` or `uniform`, got `{}`", c.mesh.grading);
    }
    match c.command.as_str() {
        "cap" => {
            finite("cap.a", &c.cap.a)?;
            finite("cap.zeta", &[c.cap.zeta])?;
            positive("cap.outer_radius", c.cap.outer_radius)?;
            if let Some(l) = &c.cap.ladder {
                if l.is_empty() {
                    bail!("cap.ladder: must not be empty");
                }
                finite("cap.ladder", l)?;
                if c.cap.mode == CapMode::P2Ladder && l.iter().any(|k| k.fract() != 0.0 || *k < 1.0) {
                    bail!("cap.ladder: p2_ladder takes positive integer exponents k");
                }
            }
        }
        "cell" => {
            let dim = match c.cell.regime.as_str() {
                "finite_k" => 2,
                "finite_kappa" => 4,
                r => bail!("cell.regime: expected `finite_k` or `finite_kappa`, got `{r}`"),
            };
            positive("cell.coefficient", c.cell.coefficient)?;
            for (i, l) in c.cell.loads.iter().enumerate() {
                if l.len() != dim {
                    bail!("cell.loads[{i}]: expected {dim} entries, got {}", l.len());
                }
                finite(&format!("cell.loads[{i}]"), l)?;
            }
        }
        "soft-cell" => {
            c.soft_cell.hole.build().map_err(|e| anyhow!("soft_cell.hole: {e}"))?;
            for (i, l) in c.soft_cell.loads.iter().enumerate() {
                finite(&format!("soft_cell.loads[{i}]"), l)?;
            }
        }
        "regime" => {
            if c.regime.family.is_none() {
                bail!("regime.family: missing");
            }
        }
        "limit1d" => {
            positive("limit1d.length", c.limit1d.length)?;
            positive("limit1d.cell_h", c.limit1d.cell_h)?;
            if c.limit1d.nodes < 2 {
                bail!("limit1d.nodes: need at least 2");
            }
            if c.limit1d.limits.is_none() && c.regime.family.is_none() {
                bail!("limit1d.limits: missing (or give regime.family)");
            }
            if c.limit1d.u.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                bail!("limit1d.u: sample abscissae must increase");
            }
        }
        "sweep" => {
            let cmd = c.sweep.command.as_deref().ok_or_else(|| anyhow!("sweep.command: missing"))?;
            if !["cap", "cell", "soft-cell", "limit1d"].contains(&cmd) {
                bail!("sweep.command: cannot sweep `{cmd}`");
            }
            if c.sweep.parameter.is_none() {
                bail!("sweep.parameter: missing");
            }
            if c.sweep.values.is_empty() {
                bail!("sweep.values: must not be empty");
            }
        }
        "verify" => {
            let ids = c.verify.ids()?;
            if let Some(bad) = ids.iter().find(|i| !fiberhom::verify::CRITERIA.contains(i)) {
                bail!("verify.checks: no check with id {bad}");
            }
        }
        _ => {}
    }
    Ok(())
}
