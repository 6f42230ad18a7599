//! Experiment harness: JSON configs for the benchmark examples, sweep
//! execution against cached reference solves, and CSV/SVG emission.

use crate::coefficient::{
    self, hybrid, Coefficient, CoefficientField, PresetParams, RhoMode,
};
use crate::error::{Error, Result};
use crate::fem::{
    backward_euler_march, project_initial, FeFunction, ParabolicProblem, SourceTerm,
};
use crate::homogenize::{
    assemble_effective_field, e_hmm_report, solve_cell_problem, CellBc, CellProblemSpec,
    EffectivePolicy, SamplingPolicy,
};
use crate::linalg::SolverOptions;
use crate::mesh::{
    build_locally_refined_mesh, build_structured_mesh, build_uniform_refined, tag_regions,
    DefectGeometry, Mesh, MeshSpec, Region, Shape, DEFAULT_VERTEX_CAP,
};
use crate::metrics::{convergence_orders, eta_k, region_relative_errors, transfer_to_fine, ErrorRegion};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

/// Named benchmark experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleId {
    TwoScaleWell,
    TwoScaleLshape,
    TwoScalePorous,
    NoScaleSepWell,
    Custom,
}

impl std::fmt::Display for ExampleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExampleId::TwoScaleWell => "two_scale_well",
            ExampleId::TwoScaleLshape => "two_scale_lshape",
            ExampleId::TwoScalePorous => "two_scale_porous",
            ExampleId::NoScaleSepWell => "no_scale_sep_well",
            ExampleId::Custom => "custom",
        };
        write!(f, "{s}")
    }
}

/// Which mesh-size parameter the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "H")]
    CoarseH,
    #[serde(rename = "h")]
    FineH,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub h_ref: f64,
    pub dt_ref: f64,
}

fn default_cell_n() -> usize {
    32
}

fn default_sampling() -> SamplingPolicy {
    SamplingPolicy::PatchGrid(32)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmmConfig {
    pub delta: f64,
    pub bc: CellBc,
    #[serde(default = "default_cell_n")]
    pub cell_n: usize,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingPolicy,
}

impl HmmConfig {
    fn policy(&self, sampling: SamplingPolicy) -> EffectivePolicy {
        EffectivePolicy {
            delta: self.delta,
            bc: self.bc,
            cell_n: self.cell_n,
            sampling,
        }
    }
}

/// Effective data source: the analytic tensor, or HMM cell problems.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectiveMode {
    Analytic,
    Hmm(HmmConfig),
}

/// Explicit defect shapes for custom experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectSpec {
    pub k0_shapes: Vec<Shape>,
    #[serde(default)]
    pub k_shapes: Option<Vec<Shape>>,
}

fn default_dt() -> f64 {
    0.02
}

fn default_source() -> f64 {
    1.0
}

fn default_r1() -> f64 {
    2.5
}

fn default_r2() -> f64 {
    1.5
}

/// A full experiment description; unknown JSON keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub example: ExampleId,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_r1", rename = "R1")]
    pub r1: f64,
    #[serde(default = "default_r2", rename = "R2")]
    pub r2: f64,
    /// Custom-mode defect shapes.
    #[serde(default)]
    pub defect: Option<DefectSpec>,
    /// Custom-mode microscale coefficient preset.
    #[serde(default)]
    pub coefficient: Option<String>,
    /// Custom-mode analytic effective coefficient preset.
    #[serde(default)]
    pub macro_coefficient: Option<String>,
    #[serde(rename = "T")]
    pub end_time: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_source")]
    pub source: f64,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub fixed_h: Option<f64>,
    #[serde(default, rename = "fixed_H")]
    pub fixed_big_h: Option<f64>,
    pub effective_mode: EffectiveMode,
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub rho_mode: RhoMode,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        for w in self.sweep.values.windows(2) {
            if !(w[1] > 0.0 && w[1] < w[0]) {
                return Err(Error::Config(format!(
                    "sweep values must be strictly decreasing and positive: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let divides = |whole: f64, part: f64| {
            let m = whole / part;
            part > 0.0 && (m - m.round()).abs() <= 1e-9 * m.round().max(1.0) && m.round() >= 1.0
        };
        if !divides(self.end_time, self.dt) {
            return Err(Error::Config(format!(
                "dt = {} must divide T = {}",
                self.dt, self.end_time
            )));
        }
        if !divides(self.end_time, self.reference.dt_ref) {
            return Err(Error::Config(format!(
                "dt_ref = {} must divide T = {}",
                self.reference.dt_ref, self.end_time
            )));
        }
        match self.sweep.axis {
            SweepAxis::CoarseH => {
                if self.fixed_big_h.is_some() {
                    return Err(Error::Config(
                        "fixed_H has no meaning when the sweep axis is H".into(),
                    ));
                }
            }
            SweepAxis::FineH => {
                let big_h = self.fixed_big_h.ok_or_else(|| {
                    Error::Config("an h sweep needs fixed_H".into())
                })?;
                if self.fixed_h.is_some() {
                    return Err(Error::Config(
                        "fixed_h has no meaning when the sweep axis is h".into(),
                    ));
                }
                if self.sweep.values[0] >= big_h {
                    return Err(Error::Config(
                        "swept h values must stay below fixed_H".into(),
                    ));
                }
                let min_h = *self.sweep.values.last().unwrap();
                if self.reference.h_ref >= min_h {
                    return Err(Error::Config(format!(
                        "h_ref = {} must be finer than the smallest swept h = {min_h}",
                        self.reference.h_ref
                    )));
                }
            }
        }
        if let Some(h) = self.fixed_h {
            if self.reference.h_ref > h {
                return Err(Error::Config(format!(
                    "h_ref = {} must not exceed the fixed fine size h = {h}",
                    self.reference.h_ref
                )));
            }
        }
        match self.example {
            ExampleId::Custom => {
                if self.defect.is_none() {
                    return Err(Error::Config("custom example needs defect shapes".into()));
                }
                if self.coefficient.is_none() {
                    return Err(Error::Config(
                        "custom example needs a coefficient preset".into(),
                    ));
                }
                if matches!(self.effective_mode, EffectiveMode::Analytic)
                    && self.macro_coefficient.is_none()
                {
                    return Err(Error::Config(
                        "custom example with analytic effective data needs macro_coefficient"
                            .into(),
                    ));
                }
            }
            ExampleId::NoScaleSepWell => {
                if matches!(self.effective_mode, EffectiveMode::Analytic) {
                    return Err(Error::Config(
                        "no_scale_sep_well has no analytic effective coefficient; use hmm mode"
                            .into(),
                    ));
                }
                if self.eps.is_none() {
                    return Err(Error::Config("no_scale_sep_well needs eps".into()));
                }
                if self.defect.is_some() || self.coefficient.is_some() {
                    return Err(Error::Config(
                        "defect/coefficient overrides are only valid for custom examples".into(),
                    ));
                }
            }
            _ => {
                if self.eps.is_none() {
                    return Err(Error::Config(format!("{} needs eps", self.example)));
                }
                if self.defect.is_some() || self.coefficient.is_some() {
                    return Err(Error::Config(
                        "defect/coefficient overrides are only valid for custom examples".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// (H, h) for one sweep level.
    pub fn level_sizes(&self, level: usize) -> (f64, f64) {
        let v = self.sweep.values[level];
        match self.sweep.axis {
            SweepAxis::CoarseH => (v, self.fixed_h.unwrap_or(v)),
            SweepAxis::FineH => (self.fixed_big_h.unwrap(), v),
        }
    }
}

/// Everything an experiment needs besides per-level meshes.
pub struct ExampleSetup {
    pub config: ExperimentConfig,
    pub defect: DefectGeometry,
    pub micro: Arc<CoefficientField>,
    pub analytic_macro: Option<Arc<CoefficientField>>,
}

impl ExampleSetup {
    /// Locally refined mesh for one sweep level.
    pub fn mesh_for_level(&self, level: usize) -> Result<Arc<Mesh>> {
        let (big_h, h) = self.config.level_sizes(level);
        let spec = MeshSpec::new(big_h, h, self.defect.clone());
        Ok(Arc::new(build_locally_refined_mesh(&spec)?))
    }

    fn bubble_initial() -> (
        Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>,
        Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>,
    ) {
        (
            Arc::new(|x: [f64; 2]| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])),
            Arc::new(|x: [f64; 2]| {
                [
                    (1.0 - 2.0 * x[0]) * x[1] * (1.0 - x[1]),
                    x[0] * (1.0 - x[0]) * (1.0 - 2.0 * x[1]),
                ]
            }),
        )
    }

    fn problem(
        &self,
        mesh: Arc<Mesh>,
        coefficient: Arc<dyn Coefficient>,
        dt: f64,
    ) -> ParabolicProblem {
        let (u0, grad) = Self::bubble_initial();
        ParabolicProblem {
            mesh,
            coefficient,
            source: SourceTerm::Constant(self.config.source),
            initial: u0,
            initial_grad: Some(grad),
            end_time: self.config.end_time,
            dt,
        }
    }
}

/// Builds geometry and coefficients for a validated config. The paper
/// examples carry their exact published defect coordinates.
pub fn build_example(config: &ExperimentConfig) -> Result<ExampleSetup> {
    config.validate()?;
    let defect = match config.example {
        ExampleId::TwoScaleWell | ExampleId::NoScaleSepWell => DefectGeometry::well(),
        ExampleId::TwoScaleLshape => DefectGeometry::l_shape(),
        ExampleId::TwoScalePorous => DefectGeometry::porous(),
        ExampleId::Custom => {
            let spec = config.defect.as_ref().unwrap();
            DefectGeometry::custom(spec.k0_shapes.clone(), spec.k_shapes.clone())?
        }
    };
    defect.validate()?;

    let params = PresetParams {
        eps: config.eps,
        r1: Some(config.r1),
        r2: Some(config.r2),
        defect: Some(defect.clone()),
    };
    let (micro, analytic): (CoefficientField, Option<CoefficientField>) = match config.example {
        ExampleId::TwoScaleWell | ExampleId::TwoScaleLshape | ExampleId::TwoScalePorous => (
            coefficient::from_preset("two_scale", &params)?,
            Some(coefficient::from_preset("two_scale_effective", &params)?),
        ),
        ExampleId::NoScaleSepWell => (coefficient::from_preset("no_scale_sep", &params)?, None),
        ExampleId::Custom => {
            let micro = coefficient::from_preset(config.coefficient.as_ref().unwrap(), &params)?;
            let analytic = match &config.macro_coefficient {
                Some(id) => Some(coefficient::from_preset(id, &params)?),
                None => None,
            };
            (micro, analytic)
        }
    };
    Ok(ExampleSetup {
        config: config.clone(),
        defect,
        micro: Arc::new(micro),
        analytic_macro: analytic.map(Arc::new),
    })
}

/// Execution options for [`run_experiment`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output directory for CSV/SVG/caches; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 1 is the bit-exact reference mode.
    pub threads: usize,
    pub plots: bool,
    /// Dump per-step nodal trajectories of each level solve.
    pub dump: bool,
}

/// Successful per-level metrics.
#[derive(Debug, Clone)]
pub struct LevelData {
    pub e0_global: f64,
    pub e1_global: f64,
    pub e0_defect: f64,
    pub e1_defect: f64,
    pub e_hmm: Option<f64>,
    pub eta_k: f64,
    pub seconds: f64,
    /// Fitted orders for (e0_global, e1_global, e0_defect, e1_defect),
    /// absent on the first level.
    pub orders: [Option<f64>; 4],
}

/// One sweep level: metrics or a recorded failure.
#[derive(Debug, Clone)]
pub struct LevelRow {
    pub level: usize,
    pub param: f64,
    pub big_h: f64,
    pub h: f64,
    pub dt: f64,
    pub data: Option<LevelData>,
    pub failure: Option<String>,
}

/// Error metric column of a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricColumn {
    E0Global,
    E1Global,
    E0Defect,
    E1Defect,
}

/// Sweep results, one row per level.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub example: ExampleId,
    pub rows: Vec<LevelRow>,
}

impl ErrorReport {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.data.is_some())
    }

    /// (parameter, error) pairs of the successful rows for one column.
    pub fn column_pairs(&self, col: MetricColumn) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| {
                r.data.as_ref().map(|d| {
                    let e = match col {
                        MetricColumn::E0Global => d.e0_global,
                        MetricColumn::E1Global => d.e1_global,
                        MetricColumn::E0Defect => d.e0_defect,
                        MetricColumn::E1Defect => d.e1_defect,
                    };
                    (r.param, e)
                })
            })
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let mut line = format!("{},{},{},{},{}", r.level, r.param, r.big_h, r.h, r.dt);
            match &r.data {
                Some(d) => {
                    let ord = |o: Option<f64>| o.map(|v| format!("{v:.4}")).unwrap_or_default();
                    let _ = write!(
                        line,
                        ",{:.6e},{},{:.6e},{},{:.6e},{},{:.6e},{},{},{:.6},{:.3}",
                        d.e0_global,
                        ord(d.orders[0]),
                        d.e1_global,
                        ord(d.orders[1]),
                        d.e0_defect,
                        ord(d.orders[2]),
                        d.e1_defect,
                        ord(d.orders[3]),
                        d.e_hmm.map(|v| format!("{v:.6e}")).unwrap_or_default(),
                        d.eta_k,
                        d.seconds
                    );
                }
                None => line.push_str(",,,,,,,,,,,"),
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

pub const CSV_HEADER: &str = "level,param,H,h,dt,e0_global,ord_e0_global,e1_global,\
ord_e1_global,e0_defect,ord_e0_defect,e1_defect,ord_e1_defect,e_hmm,eta_K,seconds";

fn fnv1a64(data: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in data.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)
            .map_err(|e| Error::io(tmp.display().to_string(), e))?;
        f.write_all(contents.as_bytes())
            .map_err(|e| Error::io(tmp.display().to_string(), e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Final-time nodal values of a reference solve, cached on disk keyed by the
/// full parameter string.
fn reference_solve(
    setup: &ExampleSetup,
    mesh: &Arc<Mesh>,
    coefficient: Arc<dyn Coefficient>,
    coeff_key: &str,
    mesh_key: &str,
    cache_dir: Option<&Path>,
) -> Result<FeFunction> {
    let cfg = &setup.config;
    let key = format!(
        "{}|coeff={coeff_key}|mesh={mesh_key}|h_ref={}|dt_ref={}|T={}|source={}|u0=bubble",
        cfg.example, cfg.reference.h_ref, cfg.reference.dt_ref, cfg.end_time, cfg.source
    );
    if let Some(dir) = cache_dir {
        let path = dir.join(format!("ref_{:016x}.txt", fnv1a64(&key)));
        if path.exists() {
            match load_reference_cache(&path, &key, mesh) {
                Ok(f) => {
                    log::info!("reference cache hit: {}", path.display());
                    return Ok(f);
                }
                Err(e) => log::warn!("ignoring stale reference cache {}: {e}", path.display()),
            }
        }
    }

    let problem = setup.problem(mesh.clone(), coefficient, cfg.reference.dt_ref);
    let opts = SolverOptions::default();
    let u0 = project_initial(&problem, &opts)?;
    let um = backward_euler_march(&problem, &u0, &opts, None)?;

    if let Some(dir) = cache_dir {
        let path = dir.join(format!("ref_{:016x}.txt", fnv1a64(&key)));
        let mut text = String::new();
        let _ = writeln!(text, "# reference cache");
        let _ = writeln!(text, "key {key}");
        let _ = writeln!(text, "nv {}", um.values.len());
        for v in &um.values {
            let _ = writeln!(text, "{v}");
        }
        atomic_write(&path, &text)?;
    }
    Ok(um)
}

fn load_reference_cache(path: &Path, key: &str, mesh: &Arc<Mesh>) -> Result<FeFunction> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let _banner = lines.next();
    let key_line = lines
        .next()
        .ok_or_else(|| Error::Input("cache missing key line".into()))?;
    if key_line.strip_prefix("key ") != Some(key) {
        return Err(Error::Input("cache key mismatch".into()));
    }
    let nv_line = lines
        .next()
        .and_then(|l| l.strip_prefix("nv "))
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::Input("cache missing vertex count".into()))?;
    if nv_line != mesh.num_vertices() {
        return Err(Error::Input(format!(
            "cache holds {nv_line} values but the mesh has {} vertices",
            mesh.num_vertices()
        )));
    }
    let values: Vec<f64> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Input("unparsable cache value".into()))?;
    FeFunction::from_values(mesh.clone(), values, None)
}

/// The reference mesh: plain structured for H sweeps (it refines every
/// uniform base grid whose subdivision divides n_ref), uniform NVB descent
/// from the fixed base grid for h sweeps (it refines every locally refined
/// level mesh grown from that base). Nested transfers keep the measured
/// errors free of re-interpolation energy.
fn build_reference_mesh(config: &ExperimentConfig, defect: &DefectGeometry) -> Result<(Arc<Mesh>, String)> {
    let h_ref = config.reference.h_ref;
    match config.sweep.axis {
        SweepAxis::CoarseH => {
            let n = (1.0 / h_ref).round();
            if !(n >= 1.0 && (1.0 / h_ref - n).abs() <= 1e-9 * n) {
                return Err(Error::Config(format!(
                    "h_ref = {h_ref} must be the reciprocal of an integer"
                )));
            }
            let mesh = build_structured_mesh(n as usize)?;
            let mesh = tag_regions(mesh, defect)?;
            Ok((Arc::new(mesh), format!("structured:{}", n as usize)))
        }
        SweepAxis::FineH => {
            let base = (1.0 / config.fixed_big_h.unwrap()).ceil() as usize;
            let mesh = build_uniform_refined(base, h_ref, DEFAULT_VERTEX_CAP)?;
            let mesh = tag_regions(mesh, defect)?;
            Ok((Arc::new(mesh), format!("nvb:{base}:{h_ref}")))
        }
    }
}

struct MacroData {
    /// Coefficient used outside K on level meshes (patch-mode HMM or
    /// analytic); per-element HMM fields are built per level instead.
    shared: Option<Arc<dyn Coefficient>>,
    /// Coefficient for the homogenized reference solve.
    reference: Arc<dyn Coefficient>,
    reference_key: String,
    per_element: Option<HmmConfig>,
}

fn build_macro_data(setup: &ExampleSetup) -> Result<MacroData> {
    match setup.config.effective_mode {
        EffectiveMode::Analytic => {
            let analytic = setup.analytic_macro.clone().ok_or_else(|| {
                Error::Config("analytic effective mode without an analytic coefficient".into())
            })?;
            Ok(MacroData {
                shared: Some(analytic.clone() as Arc<dyn Coefficient>),
                reference: analytic.clone(),
                reference_key: analytic.description().to_string(),
                per_element: None,
            })
        }
        EffectiveMode::Hmm(hmm) => match hmm.sampling {
            SamplingPolicy::PatchGrid(n) => {
                let policy = hmm.policy(SamplingPolicy::PatchGrid(n));
                // The patch field only depends on positions, so one field
                // serves every level and the reference solve.
                let dummy = build_structured_mesh(4)?;
                let field = Arc::new(assemble_effective_field(&dummy, &setup.micro, &policy)?);
                let key = format!(
                    "hmm(delta={},bc={},cell_n={},patch={n},micro={})",
                    hmm.delta,
                    hmm.bc,
                    hmm.cell_n,
                    setup.micro.description()
                );
                Ok(MacroData {
                    shared: Some(field.clone() as Arc<dyn Coefficient>),
                    reference: field,
                    reference_key: key,
                    per_element: None,
                })
            }
            SamplingPolicy::PerElement => {
                // Per-element sampling is tied to each level mesh; the
                // reference solve falls back to a patch field.
                log::info!(
                    "per-element HMM sampling: the homogenized reference uses a 32x32 patch field"
                );
                let policy = hmm.policy(SamplingPolicy::PatchGrid(32));
                let dummy = build_structured_mesh(4)?;
                let field = Arc::new(assemble_effective_field(&dummy, &setup.micro, &policy)?);
                let key = format!(
                    "hmm(delta={},bc={},cell_n={},patch=32,micro={})",
                    hmm.delta,
                    hmm.bc,
                    hmm.cell_n,
                    setup.micro.description()
                );
                Ok(MacroData {
                    shared: None,
                    reference: field,
                    reference_key: key,
                    per_element: Some(hmm),
                })
            }
        },
    }
}

/// Runs the full sweep: reference solves (cached), one hybrid solve per
/// level, region errors at the end time, fitted orders and optional CSV/SVG
/// output. A failing level is recorded and the sweep continues.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<ErrorReport> {
    config.validate()?;
    let threads = opts.threads.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment_inner(config, opts))
}

fn run_experiment_inner(config: &ExperimentConfig, opts: &RunOptions) -> Result<ErrorReport> {
    let setup = build_example(config)?;
    let cache_dir = match &opts.out_dir {
        Some(dir) => {
            let cache = dir.join("cache");
            std::fs::create_dir_all(&cache)
                .map_err(|e| Error::io(cache.display().to_string(), e))?;
            Some(cache)
        }
        None => None,
    };

    let macro_data = build_macro_data(&setup)?;
    let (ref_mesh, ref_mesh_key) = build_reference_mesh(config, &setup.defect)?;
    log::info!(
        "reference mesh: {} elements, {} vertices ({ref_mesh_key})",
        ref_mesh.num_elements(),
        ref_mesh.num_vertices()
    );

    // The homogenized and microscale references are independent solves.
    let (homog_ref, micro_ref) = rayon::join(
        || {
            reference_solve(
                &setup,
                &ref_mesh,
                macro_data.reference.clone(),
                &macro_data.reference_key,
                &ref_mesh_key,
                cache_dir.as_deref(),
            )
        },
        || {
            reference_solve(
                &setup,
                &ref_mesh,
                setup.micro.clone() as Arc<dyn Coefficient>,
                setup.micro.description(),
                &ref_mesh_key,
                cache_dir.as_deref(),
            )
        },
    );
    let homog_ref = homog_ref?;
    let micro_ref = micro_ref?;

    let mut rows = Vec::with_capacity(config.sweep.values.len());
    for (level, &param) in config.sweep.values.iter().enumerate() {
        let (big_h, h) = config.level_sizes(level);
        let started = Instant::now();
        let outcome = run_level(
            &setup,
            &macro_data,
            &ref_mesh,
            &homog_ref,
            &micro_ref,
            level,
            opts,
        );
        let mut row = LevelRow {
            level,
            param,
            big_h,
            h,
            dt: config.dt,
            data: None,
            failure: None,
        };
        match outcome {
            Ok(mut data) => {
                data.seconds = started.elapsed().as_secs_f64();
                row.data = Some(data);
            }
            Err(e) => {
                log::error!("level {level} (param {param}) failed: {e}");
                row.failure = Some(e.to_string());
            }
        }
        rows.push(row);
    }

    // Fitted orders between consecutive successful levels.
    let columns = [
        MetricColumn::E0Global,
        MetricColumn::E1Global,
        MetricColumn::E0Defect,
        MetricColumn::E1Defect,
    ];
    for i in 1..rows.len() {
        if rows[i].data.is_none() || rows[i - 1].data.is_none() {
            continue;
        }
        for (c, col) in columns.iter().enumerate() {
            let value = |row: &LevelRow| -> f64 {
                let d = row.data.as_ref().unwrap();
                match col {
                    MetricColumn::E0Global => d.e0_global,
                    MetricColumn::E1Global => d.e1_global,
                    MetricColumn::E0Defect => d.e0_defect,
                    MetricColumn::E1Defect => d.e1_defect,
                }
            };
            let pairs = [
                (rows[i - 1].param, value(&rows[i - 1])),
                (rows[i].param, value(&rows[i])),
            ];
            if pairs.iter().all(|&(_, e)| e > 0.0) {
                let table = convergence_orders(&pairs)?;
                rows[i].data.as_mut().unwrap().orders[c] = table.last_order();
            }
        }
    }

    let report = ErrorReport {
        example: config.example,
        rows,
    };
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        emit_csv(&report, &dir.join("results.csv"))?;
        if opts.plots {
            emit_svg(&report, &dir.join("convergence.svg"))?;
        }
    }
    Ok(report)
}

fn run_level(
    setup: &ExampleSetup,
    macro_data: &MacroData,
    ref_mesh: &Arc<Mesh>,
    homog_ref: &FeFunction,
    micro_ref: &FeFunction,
    level: usize,
    opts: &RunOptions,
) -> Result<LevelData> {
    let config = &setup.config;
    let mesh = setup.mesh_for_level(level)?;
    log::info!(
        "level {level}: {} elements, {} vertices",
        mesh.num_elements(),
        mesh.num_vertices()
    );

    // Effective data outside K, and the e(HMM) diagnostic when an analytic
    // effective coefficient exists.
    let (macro_coeff, e_hmm): (Arc<dyn Coefficient>, Option<f64>) = match &macro_data.per_element {
        Some(hmm) => {
            let policy = hmm.policy(SamplingPolicy::PerElement);
            let field = Arc::new(assemble_effective_field(&mesh, &setup.micro, &policy)?);
            let e = setup
                .analytic_macro
                .as_ref()
                .map(|a| e_hmm_report(&field, a, &mesh));
            (field, e)
        }
        None => {
            let shared = macro_data.shared.clone().unwrap();
            let e = match config.effective_mode {
                EffectiveMode::Analytic => Some(0.0),
                EffectiveMode::Hmm(_) => setup.analytic_macro.as_ref().map(|a| {
                    // Worst deviation of the shared field over this mesh's
                    // exterior barycenters.
                    let mut worst = 0.0f64;
                    for e in 0..mesh.num_elements() {
                        if mesh.region(e) != Region::Exterior {
                            continue;
                        }
                        let x = mesh.barycenter(e);
                        let diff = a.value(x).sub(&shared.eval(e, x));
                        worst = worst.max(diff.spectral_norm());
                    }
                    worst
                }),
            };
            (shared, e)
        }
    };

    let hybrid_coeff: Arc<dyn Coefficient> = Arc::new(hybrid(
        setup.micro.clone() as Arc<dyn Coefficient>,
        macro_coeff,
        &mesh,
        &setup.defect,
        config.rho_mode,
    )?);

    let problem = setup.problem(mesh.clone(), hybrid_coeff, config.dt);
    let solver = SolverOptions::default();
    let u0 = project_initial(&problem, &solver)?;

    let mut dump_file = match (&opts.out_dir, opts.dump) {
        (Some(dir), true) => {
            let path = dir.join(format!("trajectory_level{level}.txt"));
            let mut f = std::fs::File::create(&path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            let mut line = format!("0 0");
            for v in &u0.values {
                let _ = write!(line, " {v}");
            }
            let _ = writeln!(f, "{line}");
            Some((f, path))
        }
        _ => {
            if opts.dump {
                log::warn!("--dump requested without an output directory; skipping");
            }
            None
        }
    };
    let mut sink = |k: usize, t: f64, values: &[f64]| {
        if let Some((f, path)) = dump_file.as_mut() {
            let mut line = format!("{k} {t}");
            for v in values {
                let _ = write!(line, " {v}");
            }
            if let Err(e) = writeln!(f, "{line}") {
                log::warn!("trajectory dump to {} failed: {e}", path.display());
            }
        }
    };
    let um = backward_euler_march(&problem, &u0, &solver, Some(&mut sink))?;

    let transferred = transfer_to_fine(&um, ref_mesh)?;
    let global = region_relative_errors(homog_ref, &transferred, ErrorRegion::GlobalMinusK)?;
    let defect = region_relative_errors(micro_ref, &transferred, ErrorRegion::Defect)?;

    let k_area = mesh.region_area(Region::Defect) + mesh.region_area(Region::Layer);
    Ok(LevelData {
        e0_global: global.e0,
        e1_global: global.e1,
        e0_defect: defect.e0,
        e1_defect: defect.e1,
        e_hmm,
        eta_k: eta_k(k_area)?,
        seconds: 0.0,
        orders: [None; 4],
    })
}

pub fn emit_csv(report: &ErrorReport, path: &Path) -> Result<()> {
    atomic_write(path, &report.to_csv_string())
}

/// Log-log convergence plot: one polyline per error column plus a slope-1
/// guide.
pub fn emit_svg(report: &ErrorReport, path: &Path) -> Result<()> {
    let series = [
        (MetricColumn::E0Global, "e0 global", "#1f77b4"),
        (MetricColumn::E1Global, "e1 global", "#d62728"),
        (MetricColumn::E0Defect, "e0 defect", "#2ca02c"),
        (MetricColumn::E1Defect, "e1 defect", "#9467bd"),
    ];
    let (w, h, ml, mb, mt, mr) = (640.0, 480.0, 70.0, 50.0, 20.0, 20.0);

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (col, _, _) in &series {
        for (p, e) in report.column_pairs(*col) {
            if e > 0.0 {
                xs.push(p.log10());
                ys.push(e.log10());
            }
        }
    }
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    if xs.is_empty() {
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">no data</text>",
            w / 2.0,
            h / 2.0
        );
        let _ = writeln!(svg, "</svg>");
        return atomic_write(path, &svg);
    }
    let pad = 0.2;
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min) - pad,
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + pad,
    );
    let (y0, y1) = (
        ys.iter().cloned().fold(f64::INFINITY, f64::min) - pad,
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + pad,
    );
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mb - mt);

    // Decade grid lines and labels.
    for d in (x0.floor() as i64)..=(x1.ceil() as i64) {
        let x = sx(d as f64);
        if x >= ml && x <= w - mr {
            let _ = writeln!(
                svg,
                "<line x1=\"{x:.1}\" y1=\"{mt}\" x2=\"{x:.1}\" y2=\"{:.1}\" \
                 stroke=\"#ddd\"/><text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"11\" \
                 text-anchor=\"middle\">1e{d}</text>",
                h - mb,
                h - mb + 16.0
            );
        }
    }
    for d in (y0.floor() as i64)..=(y1.ceil() as i64) {
        let y = sy(d as f64);
        if y >= mt && y <= h - mb {
            let _ = writeln!(
                svg,
                "<line x1=\"{ml}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
                 stroke=\"#ddd\"/><text x=\"{:.1}\" y=\"{y:.1}\" font-size=\"11\" \
                 text-anchor=\"end\">1e{d}</text>",
                w - mr,
                ml - 6.0
            );
        }
    }
    let _ = writeln!(
        svg,
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" \
         stroke=\"black\"/>",
        w - ml - mr,
        h - mb - mt
    );

    // Slope-1 reference through the data corner.
    let c = y0 + pad - (x0 + pad);
    let _ = writeln!(
        svg,
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#999\" \
         stroke-dasharray=\"6 4\"/><text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" \
         fill=\"#666\">slope 1</text>",
        sx(x0 + pad / 2.0),
        sy(x0 + pad / 2.0 + c),
        sx(x1 - pad / 2.0),
        sy(x1 - pad / 2.0 + c),
        sx(x1 - pad / 2.0) - 50.0,
        sy(x1 - pad / 2.0 + c) - 6.0
    );

    for (i, (col, label, color)) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = report
            .column_pairs(*col)
            .into_iter()
            .filter(|&(_, e)| e > 0.0)
            .map(|(p, e)| (sx(p.log10()), sy(e.log10())))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let path_attr: String = pts
            .iter()
            .map(|(x, y)| format!("{x:.1},{y:.1}"))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            svg,
            "<polyline points=\"{path_attr}\" fill=\"none\" stroke=\"{color}\" \
             stroke-width=\"1.5\"/>"
        );
        for (x, y) in &pts {
            let _ = writeln!(svg, "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3\" fill=\"{color}\"/>");
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"{color}\">{label}</text>",
            w - mr - 110.0,
            mt + 16.0 * (i as f64 + 1.0)
        );
    }
    let _ = writeln!(svg, "</svg>");
    atomic_write(path, &svg)
}

/// Recomputes the order columns of a results CSV from its error columns and
/// renders a plain-text table.
pub fn recompute_orders_from_csv(path: &Path) -> Result<String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != CSV_HEADER {
        return Err(Error::Input(format!(
            "unrecognized CSV header; expected `{CSV_HEADER}`"
        )));
    }
    let mut rows: Vec<(f64, [Option<f64>; 4])> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 16 {
            return Err(Error::Input(format!("short CSV row: {line}")));
        }
        let param: f64 = cells[1]
            .parse()
            .map_err(|_| Error::Input(format!("bad param cell {}", cells[1])))?;
        let grab = |i: usize| -> Option<f64> { cells[i].parse().ok() };
        rows.push((param, [grab(5), grab(7), grab(9), grab(11)]));
    }
    let names = ["e0_global", "e1_global", "e0_defect", "e1_defect"];
    let mut out = String::new();
    let _ = writeln!(out, "{:>12} {:>14} {:>8}", "param", "error", "order");
    for (c, name) in names.iter().enumerate() {
        let pairs: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|(p, es)| es[c].map(|e| (*p, e)))
            .collect();
        if pairs.len() < 2 {
            continue;
        }
        let _ = writeln!(out, "{name}:");
        let table = convergence_orders(&pairs)?;
        for row in &table.rows {
            match row.order {
                Some(o) => {
                    let _ = writeln!(out, "{:>12} {:>14.6e} {:>8.4}", row.parameter, row.error, o);
                }
                None => {
                    let _ = writeln!(out, "{:>12} {:>14.6e} {:>8}", row.parameter, row.error, "");
                }
            }
        }
        if let Some(ls) = table.least_squares_order() {
            let _ = writeln!(out, "{:>12} least-squares slope {ls:.4}", "");
        }
    }
    Ok(out)
}

/// Report of a single probed cell problem.
#[derive(Debug, Clone)]
pub struct CellProbeReport {
    pub tensor: crate::coefficient::SymTensor2,
    pub analytic: Option<crate::coefficient::SymTensor2>,
    pub relative_deviation: Option<f64>,
}

/// Solves one cell problem at a point using the config's HMM policy (or the
/// periodic default when the config uses analytic effective data).
pub fn cell_probe(config: &ExperimentConfig, at: [f64; 2]) -> Result<CellProbeReport> {
    let setup = build_example(config)?;
    let (delta, bc, cell_n) = match config.effective_mode {
        EffectiveMode::Hmm(hmm) => (hmm.delta, hmm.bc, hmm.cell_n),
        EffectiveMode::Analytic => {
            let eps = setup.micro.epsilon().unwrap_or(0.04);
            (eps, CellBc::Periodic, default_cell_n())
        }
    };
    let spec = CellProblemSpec {
        center: at,
        delta,
        bc,
        cell_n,
    };
    let tensor = solve_cell_problem(&spec, &setup.micro)?;
    let analytic = setup.analytic_macro.as_ref().map(|a| a.value(at));
    let relative_deviation =
        analytic.map(|a| tensor.sub(&a).spectral_norm() / a.spectral_norm());
    Ok(CellProbeReport {
        tensor,
        analytic,
        relative_deviation,
    })
}

/// Human-readable statistics of one sweep level's mesh.
pub fn mesh_info(config: &ExperimentConfig, level: usize) -> Result<String> {
    if level >= config.sweep.values.len() {
        return Err(Error::Input(format!(
            "level {level} out of range; the sweep has {} values",
            config.sweep.values.len()
        )));
    }
    let setup = build_example(config)?;
    let mesh = setup.mesh_for_level(level)?;
    mesh.validate_unit_square()?;
    let (big_h, h) = config.level_sizes(level);
    let mut counts = [0usize; 3];
    for e in 0..mesh.num_elements() {
        counts[mesh.region(e).to_index() as usize] += 1;
    }
    let k_shapes = setup.defect.refinement_shapes();
    let fine_diam = mesh.max_diameter_where(|e| {
        let tri = mesh.element_coords(e);
        k_shapes.iter().any(|s| s.intersects_triangle(&tri))
    });
    let mut out = String::new();
    let _ = writeln!(out, "level {level}: H_target = {big_h}, h_target = {h}");
    let _ = writeln!(
        out,
        "vertices {}  elements {}",
        mesh.num_vertices(),
        mesh.num_elements()
    );
    let _ = writeln!(
        out,
        "regions: exterior {} layer {} defect {}",
        counts[0], counts[1], counts[2]
    );
    let _ = writeln!(
        out,
        "max diameter {:.6} (global), {:.6} (elements meeting K)",
        mesh.max_diameter(),
        fine_diam
    );
    let _ = writeln!(
        out,
        "area: total {:.12}, K {:.6}, K0 {:.6}",
        mesh.total_area(),
        mesh.region_area(Region::Defect) + mesh.region_area(Region::Layer),
        mesh.region_area(Region::Defect)
    );
    let _ = writeln!(
        out,
        "neighbor diameter ratio {:.4}; conforming and shape-regular",
        mesh.max_neighbor_diameter_ratio()
    );
    Ok(out)
}
