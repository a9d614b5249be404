//! Deterministic phase-transition experiments over (n, m) grids, plus CSV
//! persistence and SVG heatmap rendering.
//!
//! Every trial derives its seed as `derive_seed(master_seed, [n, m, t])`,
//! so cell results do not depend on execution order or worker count and a
//! grid can be reproduced cell by cell. Signals are rebuilt per trial:
//! the discretized and dense-jump classes are deterministic in `n`, so
//! only the measurement matrix varies across trials; the equidistant
//! class additionally redraws its levels from a per-trial seed.

use crate::conegeom::ConeError;
use crate::linops::{derive_seed, LinopError, MeasurementEnsemble};
use crate::signals::{
    discretize_pc, make_dense_jump, make_equidistant, LevelSource, PiecewiseConstantSpec, Signal,
    SignalError,
};
use crate::solver::{check_recovery, solve_tv, SolveStatus, SolverConfig};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhaseError {
    #[error("experiment spec invalid: {0}")]
    BadSpec(String),
    #[error("spec parse error at entry {entry}: {msg}")]
    Parse { entry: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed grid csv: {0}")]
    MalformedCsv(String),
    #[error("spec echo checksum mismatch (file edited or truncated)")]
    ChecksumMismatch,
    #[error("grid has no column at n = {0}")]
    MissingColumn(usize),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error(transparent)]
    Cone(#[from] ConeError),
}

/// The signal family an experiment sweeps over.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalClass {
    DiscretizedPc(PiecewiseConstantSpec),
    Equidistant { s: usize },
    DenseJump { s: usize },
}

impl SignalClass {
    pub fn name(&self) -> &'static str {
        match self {
            Self::DiscretizedPc(_) => "pc",
            Self::Equidistant { .. } => "equidistant",
            Self::DenseJump { .. } => "dense-jump",
        }
    }
}

/// Measurement-count rule for one column.
#[derive(Debug, Clone, PartialEq)]
pub enum MRule {
    List(Vec<usize>),
    /// Inclusive `start..=stop` with the given stride.
    Range { start: usize, stop: usize, stride: usize },
}

impl MRule {
    fn resolve(&self) -> Vec<usize> {
        match self {
            Self::List(ms) => ms.clone(),
            Self::Range { start, stop, stride } => {
                (*start..=*stop).step_by(*stride).collect()
            }
        }
    }

    fn format(&self) -> String {
        match self {
            Self::List(ms) => ms
                .iter()
                .map(|m| m.to_string())
                .collect::<Vec<_>>()
                .join(","),
            Self::Range { start, stop, stride } => format!("{start}:{stop}:{stride}"),
        }
    }
}

/// Full description of a phase-transition experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub class: SignalClass,
    pub n_list: Vec<usize>,
    pub default_m: MRule,
    pub m_overrides: BTreeMap<usize, MRule>,
    pub trials_per_cell: usize,
    pub master_seed: u64,
    pub solver: SolverConfig,
    pub success_tolerance: f64,
}

impl ExperimentSpec {
    pub fn new(class: SignalClass, n_list: Vec<usize>, default_m: MRule) -> Self {
        Self {
            class,
            n_list,
            default_m,
            m_overrides: BTreeMap::new(),
            trials_per_cell: 50,
            master_seed: 0,
            solver: SolverConfig::default(),
            success_tolerance: 1e-3,
        }
    }

    pub fn m_list(&self, n: usize) -> Vec<usize> {
        self.m_overrides
            .get(&n)
            .unwrap_or(&self.default_m)
            .resolve()
    }

    /// Build the class signal at resolution `n`. `level_seed` only matters
    /// for the equidistant class, whose levels are randomized.
    pub fn build_signal(&self, n: usize, level_seed: u64) -> Result<Signal, SignalError> {
        match &self.class {
            SignalClass::DiscretizedPc(spec) => discretize_pc(spec, n),
            SignalClass::Equidistant { s } => {
                make_equidistant(n, *s, LevelSource::Seeded(level_seed))
            }
            SignalClass::DenseJump { s } => make_dense_jump(n, *s),
        }
    }

    pub fn validate(&self) -> Result<(), PhaseError> {
        if self.trials_per_cell < 1 {
            return Err(PhaseError::BadSpec("trials_per_cell must be >= 1".into()));
        }
        if self.n_list.is_empty() {
            return Err(PhaseError::BadSpec("n list is empty".into()));
        }
        if self.success_tolerance.is_nan() || self.success_tolerance <= 0.0 {
            return Err(PhaseError::BadSpec("success_tol must be positive".into()));
        }
        for &n in &self.n_list {
            if n < 2 {
                return Err(PhaseError::BadSpec(format!("n must be >= 2, got {n}")));
            }
            let ms = self.m_list(n);
            if ms.is_empty() {
                return Err(PhaseError::BadSpec(format!("no m values for n = {n}")));
            }
            if ms.iter().any(|&m| m < 1) {
                return Err(PhaseError::BadSpec(format!("m must be >= 1 in column n = {n}")));
            }
            // Probe signal construction so class/s inconsistencies surface
            // before any solving starts.
            self.build_signal(n, derive_seed(self.master_seed, &[n as u64]))?;
        }
        Ok(())
    }

    /// Canonical single-line echo of the spec; embedded in grid CSV files
    /// and parseable by [`ExperimentSpec::parse`].
    pub fn canonical_echo(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        parts.push(format!("class={}", self.class.name()));
        match &self.class {
            SignalClass::DiscretizedPc(spec) => {
                parts.push(format!("breakpoints={}", join_f64(spec.breakpoints())));
                parts.push(format!("levels={}", join_f64(spec.levels())));
            }
            SignalClass::Equidistant { s } | SignalClass::DenseJump { s } => {
                parts.push(format!("s={s}"));
            }
        }
        parts.push(format!(
            "n={}",
            self.n_list
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        parts.push(format!("m={}", self.default_m.format()));
        parts.push(format!("trials={}", self.trials_per_cell));
        parts.push(format!("master_seed={}", self.master_seed));
        parts.push(format!("success_tol={}", self.success_tolerance));
        parts.push(format!("max_iterations={}", self.solver.max_iterations));
        parts.push(format!("convergence_tol={}", self.solver.convergence_tolerance));
        parts.push(format!("feasibility_tol={}", self.solver.feasibility_tolerance));
        parts.push(format!("step_scale={}", self.solver.step_scale));
        parts.push(format!("step_ratio={}", self.solver.step_ratio));
        for (n, rule) in &self.m_overrides {
            parts.push(format!("[n {n}]"));
            parts.push(format!("m={}", rule.format()));
        }
        parts.join("; ")
    }

    /// Parse the flat key=value + sections format. Entries are separated
    /// by newlines or semicolons; `#` starts a comment; `[n <value>]`
    /// opens a per-column override section.
    pub fn parse(text: &str) -> Result<Self, PhaseError> {
        let mut class_name: Option<String> = None;
        let mut s: Option<usize> = None;
        let mut breakpoints: Option<Vec<f64>> = None;
        let mut levels: Option<Vec<f64>> = None;
        let mut n_list: Option<Vec<usize>> = None;
        let mut default_m: Option<MRule> = None;
        let mut overrides: BTreeMap<usize, MRule> = BTreeMap::new();
        let mut trials = 50usize;
        let mut master_seed = 0u64;
        let mut solver = SolverConfig::default();
        let mut success_tol = 1e-3f64;
        let mut section: Option<usize> = None;

        for (idx, raw) in text.split(['\n', ';']).enumerate() {
            let entry = raw.trim();
            let entry = match entry.find('#') {
                Some(pos) => entry[..pos].trim(),
                None => entry,
            };
            if entry.is_empty() {
                continue;
            }
            let fail = |msg: String| PhaseError::Parse {
                entry: idx + 1,
                msg,
            };
            if let Some(rest) = entry.strip_prefix('[') {
                let rest = rest
                    .strip_suffix(']')
                    .ok_or_else(|| fail("unterminated section header".into()))?;
                let mut it = rest.split_whitespace();
                match (it.next(), it.next(), it.next()) {
                    (Some("n"), Some(v), None) => {
                        let n: usize = v
                            .parse()
                            .map_err(|e| fail(format!("bad section n: {e}")))?;
                        section = Some(n);
                    }
                    _ => return Err(fail(format!("unknown section {entry:?}"))),
                }
                continue;
            }
            let (key, value) = entry
                .split_once('=')
                .ok_or_else(|| fail(format!("expected key=value, got {entry:?}")))?;
            let key = key.trim();
            let value = value.trim();
            if let Some(n) = section {
                match key {
                    "m" => {
                        overrides.insert(n, parse_m_rule(value).map_err(fail)?);
                    }
                    _ => return Err(fail(format!("unknown key {key:?} in [n {n}] section"))),
                }
                continue;
            }
            match key {
                "class" => class_name = Some(value.to_string()),
                "s" => s = Some(value.parse().map_err(|e| fail(format!("bad s: {e}")))?),
                "breakpoints" => breakpoints = Some(parse_f64_list(value).map_err(fail)?),
                "levels" => levels = Some(parse_f64_list(value).map_err(fail)?),
                "n" => n_list = Some(parse_usize_list(value).map_err(fail)?),
                "m" => default_m = Some(parse_m_rule(value).map_err(fail)?),
                "trials" => {
                    trials = value.parse().map_err(|e| fail(format!("bad trials: {e}")))?
                }
                "master_seed" => {
                    master_seed = value
                        .parse()
                        .map_err(|e| fail(format!("bad master_seed: {e}")))?
                }
                "success_tol" => {
                    success_tol = value
                        .parse()
                        .map_err(|e| fail(format!("bad success_tol: {e}")))?
                }
                "max_iterations" => {
                    solver.max_iterations = value
                        .parse()
                        .map_err(|e| fail(format!("bad max_iterations: {e}")))?
                }
                "convergence_tol" => {
                    solver.convergence_tolerance = value
                        .parse()
                        .map_err(|e| fail(format!("bad convergence_tol: {e}")))?
                }
                "feasibility_tol" => {
                    solver.feasibility_tolerance = value
                        .parse()
                        .map_err(|e| fail(format!("bad feasibility_tol: {e}")))?
                }
                "step_scale" => {
                    solver.step_scale = value
                        .parse()
                        .map_err(|e| fail(format!("bad step_scale: {e}")))?
                }
                "step_ratio" => {
                    solver.step_ratio = value
                        .parse()
                        .map_err(|e| fail(format!("bad step_ratio: {e}")))?
                }
                _ => return Err(fail(format!("unknown key {key:?}"))),
            }
        }

        let class_name =
            class_name.ok_or_else(|| PhaseError::BadSpec("missing `class`".into()))?;
        let class = match class_name.as_str() {
            "equidistant" => SignalClass::Equidistant {
                s: s.ok_or_else(|| PhaseError::BadSpec("equidistant class needs `s`".into()))?,
            },
            "dense-jump" => SignalClass::DenseJump {
                s: s.ok_or_else(|| PhaseError::BadSpec("dense-jump class needs `s`".into()))?,
            },
            "pc" => {
                let breakpoints = breakpoints
                    .ok_or_else(|| PhaseError::BadSpec("pc class needs `breakpoints`".into()))?;
                let levels =
                    levels.ok_or_else(|| PhaseError::BadSpec("pc class needs `levels`".into()))?;
                SignalClass::DiscretizedPc(PiecewiseConstantSpec::new(breakpoints, levels)?)
            }
            other => {
                return Err(PhaseError::BadSpec(format!(
                    "unknown class {other:?} (expected equidistant, dense-jump, or pc)"
                )))
            }
        };
        let spec = Self {
            class,
            n_list: n_list.ok_or_else(|| PhaseError::BadSpec("missing `n`".into()))?,
            default_m: default_m.ok_or_else(|| PhaseError::BadSpec("missing `m`".into()))?,
            m_overrides: overrides,
            trials_per_cell: trials,
            master_seed,
            solver,
            success_tolerance: success_tol,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn join_f64(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad float {t:?}: {e}")))
        .collect()
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("bad integer {t:?}: {e}")))
        .collect()
}

fn parse_m_rule(s: &str) -> Result<MRule, String> {
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("range rule must be start:stop:stride, got {s:?}"));
        }
        let start = parts[0].trim().parse().map_err(|e| format!("bad start: {e}"))?;
        let stop = parts[1].trim().parse().map_err(|e| format!("bad stop: {e}"))?;
        let stride: usize = parts[2].trim().parse().map_err(|e| format!("bad stride: {e}"))?;
        if stride == 0 {
            return Err("stride must be positive".into());
        }
        if stop < start {
            return Err(format!("empty range {s:?}"));
        }
        Ok(MRule::Range { start, stop, stride })
    } else {
        Ok(MRule::List(parse_usize_list(s)?))
    }
}

/// One grid cell: trial and success counts at a fixed (n, m).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseCell {
    pub n: usize,
    pub m: usize,
    pub trials: u32,
    pub successes: u32,
}

impl PhaseCell {
    pub fn success_fraction(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }

    /// Binomial standard error of the success fraction.
    pub fn fraction_std_error(&self) -> f64 {
        let p = self.success_fraction();
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

/// Results of a grid run, sorted by (n, m), with the canonical spec echo
/// and the tally of solver numerical failures.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    cells: Vec<PhaseCell>,
    spec_echo: String,
    numerical_failures: u64,
}

impl PhaseGrid {
    pub fn new(mut cells: Vec<PhaseCell>, spec_echo: String, numerical_failures: u64) -> Self {
        cells.sort_by_key(|c| (c.n, c.m));
        Self {
            cells,
            spec_echo,
            numerical_failures,
        }
    }

    pub fn cells(&self) -> &[PhaseCell] {
        &self.cells
    }

    pub fn spec_echo(&self) -> &str {
        &self.spec_echo
    }

    pub fn numerical_failures(&self) -> u64 {
        self.numerical_failures
    }

    pub fn total_trials(&self) -> u64 {
        self.cells.iter().map(|c| c.trials as u64).sum()
    }

    /// Cells of the column at `n`, in increasing m order.
    pub fn column(&self, n: usize) -> Vec<&PhaseCell> {
        self.cells.iter().filter(|c| c.n == n).collect()
    }

    pub fn n_values(&self) -> Vec<usize> {
        let mut ns: Vec<usize> = self.cells.iter().map(|c| c.n).collect();
        ns.dedup();
        ns
    }
}

/// Run every (cell, trial) of the spec. Work items are distributed over
/// the ambient rayon pool; the outcome is independent of worker count.
pub fn run_phase_grid(spec: &ExperimentSpec) -> Result<PhaseGrid, PhaseError> {
    spec.validate()?;
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for &n in &spec.n_list {
        for m in spec.m_list(n) {
            cells.push((n, m));
        }
    }
    cells.sort();
    cells.dedup();

    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|ci| (0..spec.trials_per_cell as u64).map(move |t| (ci, t)))
        .collect();
    let outcomes: Vec<(bool, bool)> = jobs
        .par_iter()
        .map(|&(ci, trial)| {
            let (n, m) = cells[ci];
            let trial_seed = derive_seed(spec.master_seed, &[n as u64, m as u64, trial]);
            let matrix_seed = derive_seed(trial_seed, &[0]);
            let level_seed = derive_seed(trial_seed, &[1]);
            let signal = spec
                .build_signal(n, level_seed)
                .expect("validated during spec.validate()");
            let ensemble = MeasurementEnsemble::sample(m, n, matrix_seed)
                .expect("validated dimensions");
            let y = ensemble.apply(signal.values()).expect("length n by construction");
            let result = solve_tv(&ensemble, y.view(), &spec.solver)
                .expect("dimensions are consistent by construction");
            let numerical_failure = result.status == SolveStatus::NumericalFailure;
            let success = result.status == SolveStatus::Converged
                && check_recovery(result.x_hat.view(), signal.values(), spec.success_tolerance);
            (success, numerical_failure)
        })
        .collect();

    let mut successes = vec![0u32; cells.len()];
    let mut numerical_failures = 0u64;
    for (&(ci, _), &(success, numfail)) in jobs.iter().zip(outcomes.iter()) {
        if success {
            successes[ci] += 1;
        }
        if numfail {
            numerical_failures += 1;
        }
    }
    let cells = cells
        .into_iter()
        .zip(successes)
        .map(|((n, m), s)| PhaseCell {
            n,
            m,
            trials: spec.trials_per_cell as u32,
            successes: s,
        })
        .collect();
    Ok(PhaseGrid::new(cells, spec.canonical_echo(), numerical_failures))
}

/// 50%-crossing summary of one grid column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransitionLocation {
    /// Linear interpolation of the first upward 0.5 crossing.
    Interpolated(f64),
    /// The column starts at or above 0.5; the smallest m is reported.
    AtBoundary(f64),
    /// The column never reaches 0.5.
    Undetermined,
}

impl TransitionLocation {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Interpolated(m) | Self::AtBoundary(m) => Some(*m),
            Self::Undetermined => None,
        }
    }
}

pub fn transition_location(grid: &PhaseGrid, n: usize) -> Result<TransitionLocation, PhaseError> {
    let column = grid.column(n);
    if column.is_empty() {
        return Err(PhaseError::MissingColumn(n));
    }
    let fractions: Vec<f64> = column.iter().map(|c| c.success_fraction()).collect();
    let Some(first) = fractions.iter().position(|&f| f >= 0.5) else {
        return Ok(TransitionLocation::Undetermined);
    };
    if first == 0 {
        return Ok(TransitionLocation::AtBoundary(column[0].m as f64));
    }
    let (m0, f0) = (column[first - 1].m as f64, fractions[first - 1]);
    let (m1, f1) = (column[first].m as f64, fractions[first]);
    Ok(TransitionLocation::Interpolated(
        m0 + (0.5 - f0) * (m1 - m0) / (f1 - f0),
    ))
}

const CSV_HEADER: &str = "n,m,trials,successes";

fn fnv1a64(data: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in data.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Serialize a grid: optional `#` metadata lines (spec echo, its FNV-1a
/// checksum, numerical-failure tally), the fixed header row, one row per
/// cell sorted by (n, m), trailing newline. Byte-identical for identical
/// grids.
pub fn grid_to_csv_string(grid: &PhaseGrid) -> String {
    let mut out = String::new();
    if !grid.spec_echo().is_empty() {
        let _ = writeln!(out, "# spec_echo: {}", grid.spec_echo());
        let _ = writeln!(out, "# spec_checksum: {:016x}", fnv1a64(grid.spec_echo()));
    }
    let _ = writeln!(out, "# numerical_failures: {}", grid.numerical_failures());
    let _ = writeln!(out, "{CSV_HEADER}");
    for c in grid.cells() {
        let _ = writeln!(out, "{},{},{},{}", c.n, c.m, c.trials, c.successes);
    }
    out
}

pub fn write_grid_csv(grid: &PhaseGrid, path: impl AsRef<Path>) -> Result<(), PhaseError> {
    std::fs::write(path, grid_to_csv_string(grid))?;
    Ok(())
}

pub fn grid_from_csv_str(text: &str) -> Result<PhaseGrid, PhaseError> {
    let mut spec_echo = String::new();
    let mut checksum: Option<u64> = None;
    let mut numerical_failures = 0u64;
    let mut header_seen = false;
    let mut cells = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim_start();
            if let Some(v) = rest.strip_prefix("spec_echo:") {
                spec_echo = v.trim().to_string();
            } else if let Some(v) = rest.strip_prefix("spec_checksum:") {
                checksum = Some(
                    u64::from_str_radix(v.trim(), 16)
                        .map_err(|e| PhaseError::MalformedCsv(format!("bad checksum: {e}")))?,
                );
            } else if let Some(v) = rest.strip_prefix("numerical_failures:") {
                numerical_failures = v
                    .trim()
                    .parse()
                    .map_err(|e| PhaseError::MalformedCsv(format!("bad failure tally: {e}")))?;
            }
            continue;
        }
        if !header_seen {
            if line != CSV_HEADER {
                return Err(PhaseError::MalformedCsv(format!(
                    "missing header {CSV_HEADER:?}, found {line:?}"
                )));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(PhaseError::MalformedCsv(format!(
                "line {}: expected 4 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |i: usize| -> Result<u64, PhaseError> {
            fields[i].trim().parse().map_err(|e| {
                PhaseError::MalformedCsv(format!("line {}: {e}", lineno + 1))
            })
        };
        let (n, m, trials, successes) = (parse(0)?, parse(1)?, parse(2)?, parse(3)?);
        if successes > trials {
            return Err(PhaseError::MalformedCsv(format!(
                "line {}: successes {successes} exceed trials {trials}",
                lineno + 1
            )));
        }
        cells.push(PhaseCell {
            n: n as usize,
            m: m as usize,
            trials: trials as u32,
            successes: successes as u32,
        });
    }
    if !header_seen {
        return Err(PhaseError::MalformedCsv("missing header row".into()));
    }
    if !spec_echo.is_empty() {
        match checksum {
            Some(sum) if sum == fnv1a64(&spec_echo) => {}
            _ => return Err(PhaseError::ChecksumMismatch),
        }
    }
    Ok(PhaseGrid::new(cells, spec_echo, numerical_failures))
}

pub fn read_grid_csv(path: impl AsRef<Path>) -> Result<PhaseGrid, PhaseError> {
    grid_from_csv_str(&std::fs::read_to_string(path)?)
}

/// Optional overlay curves for the heatmap: per-n width estimates and the
/// per-n measurement bound, both drawn over the success-probability cells.
#[derive(Debug, Clone, Default)]
pub struct HeatmapOverlays {
    pub width_curve: Option<Vec<(usize, f64)>>,
    pub bound_curve: Option<Vec<(usize, f64)>>,
}

struct PlotFrame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    ln_min: f64,
    ln_max: f64,
    m_min: f64,
    m_max: f64,
}

impl PlotFrame {
    fn x(&self, n: f64) -> f64 {
        self.left + (n.ln() - self.ln_min) / (self.ln_max - self.ln_min) * self.width
    }

    fn y(&self, m: f64) -> f64 {
        self.top + (self.m_max - m) / (self.m_max - self.m_min) * self.height
    }
}

/// Render the grid as an SVG 1.1 heatmap: one grayscale rectangle per
/// cell (black = certain failure, white = certain success), n on a
/// log-scaled horizontal axis, m on a linear vertical axis.
pub fn render_heatmap_svg_string(grid: &PhaseGrid, overlays: &HeatmapOverlays) -> Result<String, PhaseError> {
    if grid.cells().is_empty() {
        return Err(PhaseError::MalformedCsv("cannot render an empty grid".into()));
    }
    let ns = grid.n_values();
    // Horizontal cell boundaries: geometric midpoints on the log axis,
    // edges extended by the neighboring ratio (sqrt(2) for a single column).
    let mut x_bounds = Vec::with_capacity(ns.len() + 1);
    let edge_ratio = if ns.len() > 1 {
        (ns[1] as f64 / ns[0] as f64).sqrt()
    } else {
        std::f64::consts::SQRT_2
    };
    x_bounds.push(ns[0] as f64 / edge_ratio);
    for w in ns.windows(2) {
        x_bounds.push((w[0] as f64 * w[1] as f64).sqrt());
    }
    let last_ratio = if ns.len() > 1 {
        (ns[ns.len() - 1] as f64 / ns[ns.len() - 2] as f64).sqrt()
    } else {
        std::f64::consts::SQRT_2
    };
    x_bounds.push(ns[ns.len() - 1] as f64 * last_ratio);

    // Vertical boundaries are per column (columns may have ragged m sets).
    let mut col_bounds: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut m_min = f64::INFINITY;
    let mut m_max = f64::NEG_INFINITY;
    for &n in &ns {
        let ms: Vec<f64> = grid.column(n).iter().map(|c| c.m as f64).collect();
        let mut bounds = Vec::with_capacity(ms.len() + 1);
        let first_gap = if ms.len() > 1 { ms[1] - ms[0] } else { 1.0 };
        bounds.push(ms[0] - 0.5 * first_gap);
        for w in ms.windows(2) {
            bounds.push(0.5 * (w[0] + w[1]));
        }
        let last_gap = if ms.len() > 1 {
            ms[ms.len() - 1] - ms[ms.len() - 2]
        } else {
            1.0
        };
        bounds.push(ms[ms.len() - 1] + 0.5 * last_gap);
        m_min = m_min.min(bounds[0]);
        m_max = m_max.max(*bounds.last().unwrap());
        col_bounds.insert(n, bounds);
    }

    let frame = PlotFrame {
        left: 70.0,
        top: 40.0,
        width: 800.0,
        height: 520.0,
        ln_min: x_bounds[0].ln(),
        ln_max: x_bounds.last().unwrap().ln(),
        m_min,
        m_max,
    };
    let total_w = frame.left + frame.width + 30.0;
    let total_h = frame.top + frame.height + 60.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{total_w}" height="{total_h}" viewBox="0 0 {total_w} {total_h}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{total_w}" height="{total_h}" fill="white"/>"#
    );

    for (ci, &n) in ns.iter().enumerate() {
        let bounds = &col_bounds[&n];
        let x0 = frame.x(x_bounds[ci]);
        let x1 = frame.x(x_bounds[ci + 1]);
        for (cell, w) in grid.column(n).iter().zip(bounds.windows(2)) {
            let y1 = frame.y(w[0]);
            let y0 = frame.y(w[1]);
            let level = (cell.success_fraction() * 255.0).round() as u8;
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({level},{level},{level})"/>"#,
                x0,
                y0,
                x1 - x0,
                y1 - y0,
            );
        }
    }

    // Axes.
    let axis_y = frame.top + frame.height;
    let _ = writeln!(
        svg,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black" stroke-width="1"/>"#,
        frame.left, frame.top, frame.width, frame.height
    );
    for (ci, &n) in ns.iter().enumerate() {
        let cx = 0.5 * (frame.x(x_bounds[ci]) + frame.x(x_bounds[ci + 1]));
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{:.2}" font-size="12" text-anchor="middle">{n}</text>"#,
            axis_y + 16.0
        );
    }
    let m_ticks = 6usize;
    for k in 0..=m_ticks {
        let m = m_min + (m_max - m_min) * k as f64 / m_ticks as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{:.0}</text>"#,
            frame.left - 6.0,
            frame.y(m) + 4.0,
            m
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">n (log scale)</text>"#,
        frame.left + 0.5 * frame.width,
        axis_y + 40.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">m</text>"#,
        frame.top + 0.5 * frame.height,
        frame.top + 0.5 * frame.height
    );

    let mut draw_curve = |points: &[(usize, f64)], color: &str, label: &str, slot: usize| {
        let clamped: Vec<(f64, f64)> = points
            .iter()
            .map(|&(n, v)| (n as f64, v.clamp(m_min, m_max)))
            .collect();
        if clamped.is_empty() {
            return;
        }
        let path: Vec<String> = clamped
            .iter()
            .map(|&(n, v)| format!("{:.2},{:.2}", frame.x(n), frame.y(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        let ly = frame.top + 18.0 + 18.0 * slot as f64;
        let lx = frame.left + frame.width - 8.0;
        let _ = writeln!(
            svg,
            r#"<text x="{lx:.2}" y="{ly:.2}" font-size="12" text-anchor="end" fill="{color}">{label}</text>"#
        );
    };
    if let Some(curve) = &overlays.width_curve {
        draw_curve(curve, "#d95f02", "width estimate", 0);
    }
    if let Some(curve) = &overlays.bound_curve {
        draw_curve(curve, "#1b9e77", "rate bound", 1);
    }

    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

pub fn render_heatmap_svg(
    grid: &PhaseGrid,
    overlays: &HeatmapOverlays,
    path: impl AsRef<Path>,
) -> Result<(), PhaseError> {
    let svg = render_heatmap_svg_string(grid, overlays)?;
    std::fs::write(path, svg)?;
    Ok(())
}
