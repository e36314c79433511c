//! Run orchestration: JSON config ingestion, mode dispatch
//! (flow | newton | sweep | bisect | probe | diagnose), and serialization of
//! traces, field snapshots, and run summaries.
//!
//! File formats:
//! - trace CSV: header `t,dt,sup_u,l2_u,sup_ut,energy,residual_sup,monitor_flags`,
//!   floats printed with 17 significant digits;
//! - field snapshots: magic `CYF1`, u32-LE axis count, u32-LE sizes, then
//!   row-major f64-LE values;
//! - `summary.json`: fixed key order, written for every exit code except
//!   config errors.
//!
//! Exit codes: 0 success, 2 config error, 3 solver non-convergence,
//! 4 monitor violation.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::background::{conformal_exp, Background};
use crate::continuation::{
    bisect_lambda_star, probe_lambda_star, solvable, ContinuationError, ContinuationParams,
    LambdaProbe, ProbeReport,
};
use crate::elliptic::{newton_solve, NewtonParams, SolveOutcome};
use crate::flow::{
    monitor_dissipation, monitor_exponential_decay, monitor_time_derivative_bound, run_flow,
    FlowParams, FlowRun, FlowStatus, FlowTrace, MonitorOutcome,
};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::variational::{diagnostics, DiagnosticSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_MONITOR: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config validation error at `{key}`: {msg}")]
    Validation { key: String, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Run(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Flow,
    Newton,
    Sweep,
    Bisect,
    Probe,
    Diagnose,
}

impl RunMode {
    pub fn label(&self) -> &'static str {
        match self {
            RunMode::Flow => "flow",
            RunMode::Newton => "newton",
            RunMode::Sweep => "sweep",
            RunMode::Bisect => "bisect",
            RunMode::Probe => "probe",
            RunMode::Diagnose => "diagnose",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicTerm {
    pub amplitude: f64,
    pub wave: Vec<i64>,
    #[serde(default)]
    pub phase: f64,
}

/// Recipe for a scalar field: a constant, a sum of cosine harmonics, or a
/// snapshot file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum FieldSpec {
    #[serde(rename = "constant")]
    Constant { value: f64 },
    #[serde(rename = "harmonic-sum")]
    HarmonicSum { terms: Vec<HarmonicTerm> },
    #[serde(rename = "file")]
    File { path: PathBuf },
}

/// Drift specification: a 2-D stream function (rotated into an exactly
/// divergence-free field) or explicit components.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaSpec {
    #[serde(default)]
    pub stream: Option<FieldSpec>,
    #[serde(default)]
    pub components: Option<Vec<FieldSpec>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonOverrides {
    pub tol_residual: Option<f64>,
    pub max_iter: Option<usize>,
    pub linear_tol: Option<f64>,
    pub max_linear_iter: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowOverrides {
    pub dt_init: Option<f64>,
    pub dt_max: Option<f64>,
    pub dt_growth: Option<f64>,
    pub eps_stop: Option<f64>,
    pub t_max: Option<f64>,
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationOverrides {
    pub width_tol: Option<f64>,
    pub margin_factor: Option<f64>,
    pub ladder_len: Option<usize>,
    pub fallback_max_steps: Option<usize>,
}

/// Parsed and validated run configuration.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    pub grid: Vec<usize>,
    pub n: u32,
    pub s0: FieldSpec,
    #[serde(default)]
    pub theta: Option<ThetaSpec>,
    #[serde(default)]
    pub g: Option<FieldSpec>,
    #[serde(default)]
    pub g0: Option<FieldSpec>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub u: Option<FieldSpec>,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub newton: Option<NewtonOverrides>,
    #[serde(default)]
    pub flow: Option<FlowOverrides>,
    #[serde(default)]
    pub continuation: Option<ContinuationOverrides>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn invalid(key: &str, msg: impl Into<String>) -> CliError {
    CliError::Validation {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn check_field_spec(spec: &FieldSpec, key: &str, dims: usize, base: &Path) -> Result<(), CliError> {
    match spec {
        FieldSpec::Constant { value } => {
            if !value.is_finite() {
                return Err(invalid(key, "constant value must be finite"));
            }
        }
        FieldSpec::HarmonicSum { terms } => {
            for (i, term) in terms.iter().enumerate() {
                if term.wave.len() != dims {
                    return Err(invalid(
                        &format!("{key}.terms[{i}].wave"),
                        format!("wave vector must have {dims} entries"),
                    ));
                }
                if !term.amplitude.is_finite() || !term.phase.is_finite() {
                    return Err(invalid(
                        &format!("{key}.terms[{i}]"),
                        "amplitude and phase must be finite",
                    ));
                }
            }
        }
        FieldSpec::File { path } => {
            let resolved = if path.is_absolute() {
                path.clone()
            } else {
                base.join(path)
            };
            if !resolved.exists() {
                return Err(invalid(
                    key,
                    format!("referenced file {} does not exist", resolved.display()),
                ));
            }
        }
    }
    Ok(())
}

fn resolve_field_paths(spec: &mut FieldSpec, base: &Path) {
    if let FieldSpec::File { path } = spec {
        if !path.is_absolute() {
            *path = base.join(&*path);
        }
    }
}

/// Reads, parses, and validates a JSON run configuration.
///
/// Relative snapshot paths are resolved against the config file's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
    let mut config: RunConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Parse(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    if config.grid.is_empty() || config.grid.len() > 4 {
        return Err(invalid("grid", "expected 1 to 4 axis sizes"));
    }
    for &s in &config.grid {
        if s < 4 || s % 2 != 0 {
            return Err(invalid("grid", format!("axis size {s} must be even and >= 4")));
        }
    }
    if config.n < 2 {
        return Err(invalid("n", "must be at least 2"));
    }
    let dims = config.grid.len();
    check_field_spec(&config.s0, "s0", dims, &base)?;
    resolve_field_paths(&mut config.s0, &base);

    if let Some(theta) = &mut config.theta {
        match (&mut theta.stream, &mut theta.components) {
            (Some(stream), None) => {
                if dims != 2 {
                    return Err(invalid("theta.stream", "stream functions require a 2-D grid"));
                }
                check_field_spec(stream, "theta.stream", dims, &base)?;
                resolve_field_paths(stream, &base);
            }
            (None, Some(components)) => {
                if components.len() != dims {
                    return Err(invalid(
                        "theta.components",
                        format!("expected {dims} components"),
                    ));
                }
                for (i, c) in components.iter_mut().enumerate() {
                    check_field_spec(c, &format!("theta.components[{i}]"), dims, &base)?;
                    resolve_field_paths(c, &base);
                }
            }
            _ => {
                return Err(invalid(
                    "theta",
                    "provide exactly one of `stream` or `components`",
                ))
            }
        }
    }

    let needs_g0 = matches!(config.mode, RunMode::Sweep | RunMode::Bisect | RunMode::Probe);
    if needs_g0 {
        if config.g0.is_none() {
            return Err(invalid("g0", format!("required by mode {}", config.mode.label())));
        }
        if config.g.is_some() {
            return Err(invalid("g", format!("not used by mode {}", config.mode.label())));
        }
        if config.lambda.is_some() {
            return Err(invalid(
                "lambda",
                format!("not used by mode {}", config.mode.label()),
            ));
        }
    } else {
        let has_g = config.g.is_some();
        let has_pair = config.g0.is_some() && config.lambda.is_some();
        if has_g && config.g0.is_some() {
            return Err(invalid("g", "provide either g or (g0, lambda), not both"));
        }
        if !has_g && !has_pair {
            return Err(invalid("g", "provide g, or g0 together with lambda"));
        }
    }
    if config.mode == RunMode::Sweep {
        match &config.lambdas {
            None => return Err(invalid("lambdas", "required by mode sweep")),
            Some(ls) if ls.is_empty() => {
                return Err(invalid("lambdas", "must contain at least one value"))
            }
            Some(ls) if ls.iter().any(|v| !v.is_finite()) => {
                return Err(invalid("lambdas", "values must be finite"))
            }
            _ => {}
        }
    } else if config.lambdas.is_some() {
        return Err(invalid(
            "lambdas",
            format!("not used by mode {}", config.mode.label()),
        ));
    }
    if config.u.is_some() && config.mode != RunMode::Diagnose {
        return Err(invalid(
            "u",
            format!("not used by mode {}", config.mode.label()),
        ));
    }
    if let Some(g) = &mut config.g {
        check_field_spec(g, "g", dims, &base)?;
        resolve_field_paths(g, &base);
    }
    if let Some(g0) = &mut config.g0 {
        check_field_spec(g0, "g0", dims, &base)?;
        resolve_field_paths(g0, &base);
    }
    if let Some(u) = &mut config.u {
        check_field_spec(u, "u", dims, &base)?;
        resolve_field_paths(u, &base);
    }
    Ok(config)
}

// ---------------------------------------------------------------------------
// Field snapshot and trace serialization
// ---------------------------------------------------------------------------

const SNAPSHOT_MAGIC: &[u8; 4] = b"CYF1";

/// Writes a field snapshot: magic, u32-LE axis count, u32-LE sizes, f64-LE values.
pub fn write_field_snapshot(path: &Path, field: &ScalarField) -> Result<(), CliError> {
    let grid = field.grid();
    let mut bytes =
        Vec::with_capacity(4 + 4 + 4 * grid.dims() + 8 * field.values().len());
    bytes.extend_from_slice(SNAPSHOT_MAGIC);
    bytes.extend_from_slice(&(grid.dims() as u32).to_le_bytes());
    for &s in grid.sizes() {
        bytes.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for &v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a field snapshot back into sizes and row-major values.
pub fn read_field_snapshot(path: &Path) -> Result<(Vec<usize>, Vec<f64>), CliError> {
    let bytes = fs::read(path)?;
    let fail = |msg: &str| CliError::Run(format!("snapshot {}: {msg}", path.display()));
    if bytes.len() < 8 || &bytes[0..4] != SNAPSHOT_MAGIC {
        return Err(fail("bad magic"));
    }
    let dims = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if dims == 0 || dims > 4 || bytes.len() < 8 + 4 * dims {
        return Err(fail("bad header"));
    }
    let mut sizes = Vec::with_capacity(dims);
    for a in 0..dims {
        let off = 8 + 4 * a;
        sizes.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
    }
    let count: usize = sizes.iter().product();
    let data_off = 8 + 4 * dims;
    if bytes.len() != data_off + 8 * count {
        return Err(fail("payload size mismatch"));
    }
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let off = data_off + 8 * i;
        values.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
    }
    Ok((sizes, values))
}

/// 17 significant digits, round-trippable.
fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the trace CSV with the fixed header and 17-digit floats.
pub fn write_trace_csv(path: &Path, trace: &FlowTrace) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str("t,dt,sup_u,l2_u,sup_ut,energy,residual_sup,monitor_flags\n");
    for r in &trace.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt17(r.t),
            fmt17(r.dt),
            fmt17(r.sup_u),
            fmt17(r.l2_u),
            fmt17(r.sup_ut),
            fmt17(r.energy),
            fmt17(r.residual_sup),
            r.monitor_flags
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct MonitorSummary {
    pub time_derivative_bound: String,
    pub dissipation: String,
    pub exponential_decay: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BracketSummary {
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub estimate: f64,
    pub upper_bound: f64,
    pub width: f64,
    pub probes: Vec<LambdaProbe>,
}

/// Stable-key-order run summary; always written on exit codes 0, 3, and 4.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub mode: String,
    pub grid: Vec<usize>,
    pub n: u32,
    pub gamma: f64,
    pub balanced: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub status: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_sup: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sup_u_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integral_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blow_up: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monitors: Option<MonitorSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_star: Option<BracketSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticSet>,
    pub outputs: Vec<String>,
}

impl Summary {
    fn new(config: &RunConfig, bg: &Background) -> Summary {
        Summary {
            mode: config.mode.label().to_string(),
            grid: config.grid.clone(),
            n: config.n,
            gamma: bg.gamma(),
            balanced: bg.is_balanced(),
            seed: config.seed,
            lambda: config.lambda,
            status: String::new(),
            exit_code: EXIT_OK,
            residual_sup: None,
            sup_u_final: None,
            integral_gap: None,
            iterations: None,
            t_final: None,
            steps: None,
            blow_up: None,
            monitors: None,
            lambda_star: None,
            probe: None,
            diagnostics: None,
            outputs: Vec::new(),
        }
    }
}

fn write_summary(dir: &Path, summary: &Summary) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| CliError::Run(format!("summary serialization: {e}")))?;
    let mut f = fs::File::create(dir.join("summary.json"))?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Building runtime objects from the config
// ---------------------------------------------------------------------------

fn build_field(spec: &FieldSpec, grid: &Grid) -> Result<ScalarField, CliError> {
    match spec {
        FieldSpec::Constant { value } => Ok(ScalarField::constant(grid, *value)),
        FieldSpec::HarmonicSum { terms } => Ok(ScalarField::from_fn(grid, |x| {
            terms
                .iter()
                .map(|t| {
                    let arg: f64 = t
                        .wave
                        .iter()
                        .zip(x)
                        .map(|(&k, &xi)| k as f64 * xi)
                        .sum::<f64>()
                        * std::f64::consts::TAU
                        + t.phase;
                    t.amplitude * arg.cos()
                })
                .sum()
        })),
        FieldSpec::File { path } => {
            let (sizes, values) = read_field_snapshot(path)?;
            if sizes != grid.sizes() {
                return Err(CliError::Run(format!(
                    "snapshot {} has sizes {:?}, grid is {:?}",
                    path.display(),
                    sizes,
                    grid.sizes()
                )));
            }
            ScalarField::from_values(grid, values)
                .map_err(|e| CliError::Run(format!("snapshot {}: {e}", path.display())))
        }
    }
}

/// Rotated backward-difference gradient of the stream function; exactly
/// divergence-free for the discrete backward divergence.
fn rotate_stream(grid: &Grid, psi: &ScalarField) -> VectorField {
    let n0 = grid.sizes()[0];
    let n1 = grid.sizes()[1];
    let h0 = grid.spacing()[0];
    let h1 = grid.spacing()[1];
    let at = |i: usize, j: usize| psi.values()[i * n1 + j];
    let mut c0 = vec![0.0; grid.len()];
    let mut c1 = vec![0.0; grid.len()];
    for i in 0..n0 {
        for j in 0..n1 {
            let im = (i + n0 - 1) % n0;
            let jm = (j + n1 - 1) % n1;
            c0[i * n1 + j] = (at(i, j) - at(i, jm)) / h1;
            c1[i * n1 + j] = -(at(i, j) - at(im, j)) / h0;
        }
    }
    VectorField::from_components(vec![
        ScalarField::from_values_unchecked(grid, c0),
        ScalarField::from_values_unchecked(grid, c1),
    ])
    .expect("components share the grid")
}

fn build_theta(spec: Option<&ThetaSpec>, grid: &Grid) -> Result<VectorField, CliError> {
    match spec {
        None => Ok(VectorField::zeros(grid)),
        Some(ThetaSpec {
            stream: Some(stream),
            components: None,
        }) => {
            let psi = build_field(stream, grid)?;
            Ok(rotate_stream(grid, &psi))
        }
        Some(ThetaSpec {
            stream: None,
            components: Some(components),
        }) => {
            let comps = components
                .iter()
                .map(|c| build_field(c, grid))
                .collect::<Result<Vec<_>, _>>()?;
            VectorField::from_components(comps)
                .map_err(|e| CliError::Run(format!("theta components: {e}")))
        }
        _ => Err(invalid("theta", "provide exactly one of stream or components")),
    }
}

fn newton_params(config: &RunConfig) -> NewtonParams {
    let mut p = NewtonParams::default();
    if let Some(o) = &config.newton {
        if let Some(v) = o.tol_residual {
            p.tol_residual = v;
        }
        if let Some(v) = o.max_iter {
            p.max_iter = v;
        }
        if let Some(v) = o.linear_tol {
            p.linear_tol = v;
        }
        if let Some(v) = o.max_linear_iter {
            p.max_linear_iter = v;
        }
    }
    p
}

fn flow_params(config: &RunConfig) -> FlowParams {
    let mut p = FlowParams::default();
    if let Some(o) = &config.flow {
        if let Some(v) = o.dt_init {
            p.dt_init = v;
        }
        if let Some(v) = o.dt_max {
            p.dt_max = v;
        }
        if let Some(v) = o.dt_growth {
            p.dt_growth = v;
        }
        if let Some(v) = o.eps_stop {
            p.eps_stop = v;
        }
        if let Some(v) = o.t_max {
            p.t_max = v;
        }
        if let Some(v) = o.max_steps {
            p.max_steps = v;
        }
    }
    p
}

fn continuation_params(config: &RunConfig) -> ContinuationParams {
    let mut p = ContinuationParams {
        newton: newton_params(config),
        flow: flow_params(config),
        ..ContinuationParams::default()
    };
    if let Some(o) = &config.continuation {
        if let Some(v) = o.width_tol {
            p.width_tol = v;
        }
        if let Some(v) = o.margin_factor {
            p.margin_factor = v;
        }
        if let Some(v) = o.ladder_len {
            p.ladder_len = v;
        }
        if let Some(v) = o.fallback_max_steps {
            p.fallback_max_steps = v;
        }
    }
    p
}

struct Instance {
    bg: Background,
    /// Candidate curvature for flow/newton/diagnose modes.
    g: Option<ScalarField>,
    /// Base candidate for continuation modes.
    g0: Option<ScalarField>,
}

fn build_instance(config: &RunConfig) -> Result<Instance, CliError> {
    let grid = Grid::new(&config.grid).map_err(|e| invalid("grid", e.to_string()))?;
    let s0 = build_field(&config.s0, &grid)?;
    let theta = build_theta(config.theta.as_ref(), &grid)?;
    let bg = Background::new(&grid, config.n, s0, theta)
        .map_err(|e| CliError::Run(format!("background: {e}")))?;
    let g0 = config
        .g0
        .as_ref()
        .map(|spec| build_field(spec, &grid))
        .transpose()?;
    let g = match (&config.g, &g0, config.lambda) {
        (Some(spec), _, _) => Some(build_field(spec, &grid)?),
        (None, Some(base), Some(lambda)) => Some(base.shift(lambda)),
        _ => None,
    };
    Ok(Instance { bg, g, g0 })
}

// ---------------------------------------------------------------------------
// Mode execution
// ---------------------------------------------------------------------------

fn monitor_label(outcome: Option<MonitorOutcome>) -> String {
    match outcome {
        None => "not_applicable".to_string(),
        Some(MonitorOutcome::Pass) => "pass".to_string(),
        Some(MonitorOutcome::Fail { record, .. }) => format!("fail@{record}"),
    }
}

fn integral_gap(u: &ScalarField, g: &ScalarField, bg: &Background) -> Option<f64> {
    conformal_exp(u, bg.n_f(), 1.0)
        .ok()
        .map(|e| (bg.gamma() - g.inner(&e)).abs())
}

fn run_mode_flow(
    config: &RunConfig,
    inst: &Instance,
    out_dir: &Path,
    summary: &mut Summary,
) -> Result<i32, CliError> {
    let g = inst.g.as_ref().expect("validated");
    let run: FlowRun = run_flow(g, &inst.bg, &flow_params(config));
    write_trace_csv(&out_dir.join("trace.csv"), &run.trace)?;
    write_field_snapshot(&out_dir.join("u_final.cyf"), &run.u_final)?;
    summary.outputs = vec!["trace.csv".into(), "u_final.cyf".into()];

    let td = if g.max() <= 0.0 {
        Some(monitor_time_derivative_bound(&run.trace, g, &inst.bg))
    } else {
        None
    };
    let diss = if inst.bg.is_balanced() {
        Some(monitor_dissipation(&run.trace))
    } else {
        None
    };
    let decay = if g.max() < 0.0 {
        monitor_exponential_decay(&run.trace, g, &inst.bg).ok()
    } else {
        None
    };
    summary.monitors = Some(MonitorSummary {
        time_derivative_bound: monitor_label(td),
        dissipation: monitor_label(diss),
        exponential_decay: monitor_label(decay),
    });

    let last = run.trace.records.last().expect("trace has records");
    summary.status = run.status.label();
    summary.residual_sup = Some(last.residual_sup);
    summary.sup_u_final = Some(last.sup_u);
    summary.integral_gap = integral_gap(&run.u_final, g, &inst.bg);
    summary.t_final = Some(last.t);
    summary.steps = Some(run.trace.records.len() - 1);
    summary.blow_up = Some(run.trace.blow_up);

    Ok(match run.status {
        FlowStatus::Converged => EXIT_OK,
        FlowStatus::TimedOut => EXIT_SOLVER,
        FlowStatus::MonitorViolation { .. } => EXIT_MONITOR,
    })
}

fn run_mode_newton(
    config: &RunConfig,
    inst: &Instance,
    out_dir: &Path,
    summary: &mut Summary,
) -> Result<i32, CliError> {
    let g = inst.g.as_ref().expect("validated");
    let out: SolveOutcome = newton_solve(
        g,
        &inst.bg,
        &ScalarField::zeros(inst.bg.grid()),
        &newton_params(config),
    );
    if let Some(u) = out.solution() {
        write_field_snapshot(&out_dir.join("u.cyf"), u)?;
        summary.outputs = vec!["u.cyf".into()];
        summary.sup_u_final = Some(u.sup_norm());
        if out.is_converged() {
            summary.integral_gap = integral_gap(u, g, &inst.bg);
        }
    }
    summary.status = out.status_label();
    summary.residual_sup = Some(out.residual_sup);
    summary.iterations = Some(out.iterations);
    Ok(if out.is_converged() { EXIT_OK } else { EXIT_SOLVER })
}

fn map_continuation_error(e: ContinuationError) -> (i32, String) {
    match &e {
        ContinuationError::BadCandidate(_) | ContinuationError::RequiresNegativeDegree(_) => {
            (EXIT_CONFIG, e.to_string())
        }
        _ => (EXIT_SOLVER, e.to_string()),
    }
}

fn run_mode_sweep(
    config: &RunConfig,
    inst: &Instance,
    out_dir: &Path,
    summary: &mut Summary,
) -> Result<i32, CliError> {
    let g0 = inst.g0.as_ref().expect("validated");
    let params = continuation_params(config);
    let lambdas = config.lambdas.clone().expect("validated");
    let mut probes = Vec::new();
    let mut seed: Option<ScalarField> = None;
    for &lambda in &lambdas {
        match solvable(lambda, g0, &inst.bg, seed.as_ref(), &params) {
            Ok(out) => {
                let probe = probe_from_solve(lambda, &out, &inst.bg);
                if out.is_converged() {
                    seed = out.u;
                }
                probes.push(probe);
            }
            Err(e) => {
                let (code, msg) = map_continuation_error(e);
                if code == EXIT_CONFIG {
                    return Err(CliError::Run(msg));
                }
                summary.status = msg;
                summary.exit_code = code;
                return Ok(code);
            }
        }
    }
    let mut csv = String::from("lambda,status,residual_sup,iterations,sup_u,exp_mass,exp_grad\n");
    for p in &probes {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt17(p.lambda),
            p.status,
            fmt17(p.residual_sup),
            p.iterations,
            p.sup_u.map_or("".into(), fmt17),
            p.exp_mass.map_or("".into(), fmt17),
            p.exp_grad.map_or("".into(), fmt17),
        ));
    }
    fs::write(out_dir.join("sweep.csv"), csv)?;
    summary.outputs = vec!["sweep.csv".into()];
    summary.status = "completed".into();
    summary.lambda_star = Some(BracketSummary {
        bracket_lo: f64::NAN,
        bracket_hi: f64::NAN,
        estimate: f64::NAN,
        upper_bound: -g0.min(),
        width: f64::NAN,
        probes,
    });
    Ok(EXIT_OK)
}

fn probe_from_solve(lambda: f64, out: &SolveOutcome, bg: &Background) -> LambdaProbe {
    use crate::background::half_conformal_exp;
    let (sup_u, exp_mass, exp_grad) = match (out.is_converged(), out.solution()) {
        (true, Some(u)) => {
            let mass = conformal_exp(u, bg.n_f(), 1.0).ok().map(|e| e.integrate());
            let grad = half_conformal_exp(u, bg.n_f()).ok().map(|h| {
                h.gradient().components().iter().map(|c| c.inner(c)).sum()
            });
            (Some(u.sup_norm()), mass, grad)
        }
        _ => (None, None, None),
    };
    LambdaProbe {
        lambda,
        converged: out.is_converged(),
        status: out.status_label(),
        residual_sup: out.residual_sup,
        iterations: out.iterations,
        sup_u,
        exp_mass,
        exp_grad,
    }
}

fn run_mode_bisect(
    config: &RunConfig,
    inst: &Instance,
    _out_dir: &Path,
    summary: &mut Summary,
) -> Result<i32, CliError> {
    let g0 = inst.g0.as_ref().expect("validated");
    let params = continuation_params(config);
    match bisect_lambda_star(g0, &inst.bg, &params) {
        Ok(report) => {
            summary.status = "completed".into();
            summary.lambda_star = Some(BracketSummary {
                bracket_lo: report.bracket.0,
                bracket_hi: report.bracket.1,
                estimate: report.lambda_star_estimate,
                upper_bound: report.upper_bound,
                width: report.bracket.1 - report.bracket.0,
                probes: report.outcomes.clone(),
            });
            Ok(EXIT_OK)
        }
        Err(e) => {
            let (code, msg) = map_continuation_error(e);
            if code == EXIT_CONFIG {
                return Err(CliError::Run(msg));
            }
            summary.status = msg;
            Ok(code)
        }
    }
}

fn run_mode_probe(
    config: &RunConfig,
    inst: &Instance,
    _out_dir: &Path,
    summary: &mut Summary,
) -> Result<i32, CliError> {
    let g0 = inst.g0.as_ref().expect("validated");
    let params = continuation_params(config);
    let report = match bisect_lambda_star(g0, &inst.bg, &params) {
        Ok(r) => r,
        Err(e) => {
            let (code, msg) = map_continuation_error(e);
            if code == EXIT_CONFIG {
                return Err(CliError::Run(msg));
            }
            summary.status = msg;
            return Ok(code);
        }
    };
    summary.lambda_star = Some(BracketSummary {
        bracket_lo: report.bracket.0,
        bracket_hi: report.bracket.1,
        estimate: report.lambda_star_estimate,
        upper_bound: report.upper_bound,
        width: report.bracket.1 - report.bracket.0,
        probes: report.outcomes.clone(),
    });
    match probe_lambda_star(g0, &inst.bg, &report, &params) {
        Ok(probe) => {
            let ok = probe.midpoint_converged || !probe.in_hypothesis;
            summary.status = if ok { "completed".into() } else { "midpoint_diverged".into() };
            summary.probe = Some(probe);
            Ok(if ok { EXIT_OK } else { EXIT_SOLVER })
        }
        Err(e) => {
            let (code, msg) = map_continuation_error(e);
            if code == EXIT_CONFIG {
                return Err(CliError::Run(msg));
            }
            summary.status = msg;
            Ok(code)
        }
    }
}

fn run_mode_diagnose(
    config: &RunConfig,
    inst: &Instance,
    out_dir: &Path,
    summary: &mut Summary,
) -> Result<i32, CliError> {
    let g = inst.g.as_ref().expect("validated");
    let (u, code) = match &config.u {
        Some(spec) => (build_field(spec, inst.bg.grid())?, EXIT_OK),
        None => {
            let out = newton_solve(
                g,
                &inst.bg,
                &ScalarField::zeros(inst.bg.grid()),
                &newton_params(config),
            );
            summary.iterations = Some(out.iterations);
            summary.residual_sup = Some(out.residual_sup);
            if !out.is_converged() {
                summary.status = out.status_label();
                return Ok(EXIT_SOLVER);
            }
            (out.u.expect("converged"), EXIT_OK)
        }
    };
    let diag = diagnostics(&u, g, &inst.bg)
        .map_err(|e| CliError::Run(format!("diagnostics: {e}")))?;
    write_field_snapshot(&out_dir.join("u.cyf"), &u)?;
    summary.outputs = vec!["u.cyf".into()];
    summary.sup_u_final = Some(u.sup_norm());
    summary.diagnostics = Some(diag);
    summary.status = "completed".into();
    Ok(code)
}

/// Runs a validated configuration, writing outputs under `out_dir`.
///
/// Returns the process exit code; a summary is written for every code except
/// configuration errors.
pub fn execute(config: &RunConfig, out_dir: &Path, quiet: bool) -> i32 {
    if let Err(e) = fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return EXIT_CONFIG;
    }
    let inst = match build_instance(config) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if !quiet {
        println!(
            "cyflow {} | grid {:?} | n = {} | gamma = {:.6}",
            config.mode.label(),
            config.grid,
            config.n,
            inst.bg.gamma()
        );
    }
    let mut summary = Summary::new(config, &inst.bg);
    let result = match config.mode {
        RunMode::Flow => run_mode_flow(config, &inst, out_dir, &mut summary),
        RunMode::Newton => run_mode_newton(config, &inst, out_dir, &mut summary),
        RunMode::Sweep => run_mode_sweep(config, &inst, out_dir, &mut summary),
        RunMode::Bisect => run_mode_bisect(config, &inst, out_dir, &mut summary),
        RunMode::Probe => run_mode_probe(config, &inst, out_dir, &mut summary),
        RunMode::Diagnose => run_mode_diagnose(config, &inst, out_dir, &mut summary),
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    summary.exit_code = code;
    if let Err(e) = write_summary(out_dir, &summary) {
        eprintln!("error: cannot write summary: {e}");
        return EXIT_CONFIG;
    }
    if !quiet {
        println!("status: {} (exit {code})", summary.status);
    }
    code
}
