//! Configuration-driven experiment runner.
//!
//! A run reads one TOML file, performs a single experiment kind and writes
//! `manifest.json`, `<kind>.csv` and `plot.py` into the output directory.
//! Numbers in the CSVs depend only on the config and its seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{basic_decay_check, calc_inequality_check, fit_decay_exponent, FitWindow};
use crate::discretization::{build_grid, AngularRule, MomentumGrid};
use crate::kernel_ops::{
    assemble_operator_matrices, AssemblyOptions, KernelModel, OperatorMatrices, PotentialKind,
    DEFAULT_CHI_EPSILON,
};
use crate::macro_moments::{balance_residuals, DerivativeMode, MacroOps};
use crate::mode_dynamics::{
    collect_lyapunov_samples, evolve_mode, fit_lyapunov_constants_from_samples, max_norm_growth,
    run_mode_sweep, synthesize_norm, DataClass, Integrator, LyapunovSampleSpec, ModeState, RateSpec,
};
use crate::nonlinear_dynamics::{
    calibrate_smallness, entropy, moment_matched_sample, picard_iterate, positivity_iterate,
    slab_decay_rates, Cadence, NonlinearOperator, PicardOptions, SlabField,
};
use crate::semigroup_vidav::{poly_e_check, supnorm_series, vidav_expand, VidavSystem};
use crate::{par, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LinearDecay,
    LyapunovVerify,
    VidavCheck,
    NonlinearSlab,
    HomogeneousRelax,
    InequalitySuite,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::LinearDecay => "linear_decay",
            Self::LyapunovVerify => "lyapunov_verify",
            Self::VidavCheck => "vidav_check",
            Self::NonlinearSlab => "nonlinear_slab",
            Self::HomogeneousRelax => "homogeneous_relax",
            Self::InequalitySuite => "inequality_suite",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub kind: PotentialKind,
    pub b: f64,
    pub a: f64,
    pub gamma: f64,
    pub chi_epsilon: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { kind: PotentialKind::Soft, b: 1.0, a: 0.0, gamma: 0.0, chi_epsilon: DEFAULT_CHI_EPSILON }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub p_max: f64,
    pub n_per_axis: usize,
    /// Gauss–Jacobi nodes in the scattering angle.
    pub theta_nodes: usize,
    pub phi_nodes: usize,
    pub max_defect: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { p_max: 8.0, n_per_axis: 9, theta_nodes: 6, phi_nodes: 12, max_defect: 0.25 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencySection {
    pub count: usize,
    pub min: f64,
    pub max: f64,
}

impl Default for FrequencySection {
    fn default() -> Self {
        Self { count: 40, min: 1e-2, max: 10.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub horizon: f64,
    /// Snapshot spacing; propagation is exact between snapshots.
    pub dt: f64,
    pub fit_t_lo: f64,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self { horizon: 100.0, dt: 1.0, fit_t_lo: 10.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSection {
    pub r: f64,
    pub m: f64,
    pub ell: f64,
    pub decay_order: f64,
}

impl Default for RateSection {
    fn default() -> Self {
        Self { r: 1.0, m: 0.0, ell: 0.0, decay_order: 0.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub cutoff: f64,
    /// Integrability margin of the `r = 2` surrogate.
    pub epsilon: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { cutoff: 1.0, epsilon: 0.1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovSection {
    pub states_per_freq: usize,
    pub horizon: f64,
    pub snapshot_dt: f64,
    pub ell: f64,
    pub free_lambda: f64,
    pub safety: f64,
    pub include_zero: bool,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        Self { states_per_freq: 20, horizon: 50.0, snapshot_dt: 1.0, ell: 1.0, free_lambda: 1.0, safety: 0.5, include_zero: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VidavSection {
    pub freqs: Vec<f64>,
    pub times: Vec<f64>,
    /// Quadrature steps per unit time; each level should double the last.
    pub steps_per_unit: Vec<usize>,
}

impl Default for VidavSection {
    fn default() -> Self {
        Self { freqs: vec![0.1, 1.0, 5.0], times: vec![1.0, 10.0], steps_per_unit: vec![20, 40, 80] }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearSection {
    pub p_max: f64,
    pub n_per_axis: usize,
    pub max_defect: f64,
    pub kappa: f64,
    pub modes: usize,
    pub horizon: f64,
    pub dt: f64,
    pub iterations: usize,
    pub ell: f64,
    /// Upper end of the amplitude bisection.
    pub amplitude_max: f64,
    pub bisections: usize,
    /// Run amplitude as a fraction of the calibrated one.
    pub amplitude_fraction: f64,
    pub fit_t_lo: f64,
}

impl Default for NonlinearSection {
    fn default() -> Self {
        Self {
            p_max: 4.0,
            n_per_axis: 5,
            max_defect: 0.5,
            kappa: 0.5,
            modes: 3,
            horizon: 20.0,
            dt: 0.25,
            iterations: 6,
            ell: 1.0,
            amplitude_max: 1.0,
            bisections: 4,
            amplitude_fraction: 0.5,
            fit_t_lo: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CadenceKind {
    PerStep,
    Full,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomogeneousSection {
    pub p_max: f64,
    pub n_per_axis: usize,
    pub max_defect: f64,
    pub dt: f64,
    pub horizon: f64,
    pub cadence: CadenceKind,
    pub max_outer: usize,
    pub outer_tol: f64,
    pub entropy_trials: usize,
    pub fill: f64,
}

impl Default for HomogeneousSection {
    fn default() -> Self {
        Self {
            p_max: 4.0,
            n_per_axis: 5,
            max_defect: 0.5,
            dt: 0.1,
            horizon: 10.0,
            cadence: CadenceKind::PerStep,
            max_outer: 12,
            outer_tol: 1e-14,
            entropy_trials: 100,
            fill: 0.9,
        }
    }
}

/// Tolerance overrides; every value actually used is echoed in the manifest.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceSection {
    pub exponent_rel_band: Option<f64>,
    pub exponent_abs_band: Option<f64>,
    pub supnorm_fraction: Option<f64>,
    pub margin_floor: Option<f64>,
    pub norm_growth: Option<f64>,
    pub vidav_min_order: Option<f64>,
    pub slab_rate_rel: Option<f64>,
    pub stationarity: Option<f64>,
    pub entropy_slack: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub frequencies: FrequencySection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub rate: RateSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub lyapunov: LyapunovSection,
    #[serde(default)]
    pub vidav: VidavSection,
    #[serde(default)]
    pub nonlinear: NonlinearSection,
    #[serde(default)]
    pub homogeneous: HomogeneousSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Line of `key = ...` inside `[section]` (top level for an empty section),
/// falling back to the section header.
fn locate(src: &str, section: &str, key: &str) -> Option<(usize, usize)> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some((i + 1, 1));
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    let col = raw.len() - raw.trim_start().len() + 1;
                    return Some((i + 1, col));
                }
            }
        }
    }
    header
}

fn config_error(origin: &str, pos: Option<(usize, usize)>, msg: impl std::fmt::Display) -> Error {
    match pos {
        Some((l, c)) => Error::Config(format!("{origin}:{l}:{c}: {msg}")),
        None => Error::Config(format!("{origin}: {msg}")),
    }
}

/// Which `[kernel]` key a model validation message refers to.
fn kernel_key(msg: &str) -> &'static str {
    if msg.contains("angular exponent") {
        "gamma"
    } else if msg.contains("0 ≤ a") {
        "a"
    } else if msg.contains("chi_epsilon") {
        "chi_epsilon"
    } else {
        "b"
    }
}

impl ExperimentConfig {
    /// Parses and validates; `origin` names the source in messages.
    pub fn parse(src: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| {
            let pos = e.span().map(|s| line_col(src, s.start));
            config_error(origin, pos, e.message().trim())
        })?;
        cfg.validate().map_err(|(section, key, msg)| config_error(origin, locate(src, section, key), msg))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&src, &path.display().to_string())
    }

    pub fn kernel_model(&self) -> Result<KernelModel> {
        let k = &self.kernel;
        let m = match k.kind {
            PotentialKind::Soft => KernelModel::soft(k.b, k.gamma)?,
            PotentialKind::Hard => KernelModel::hard(k.a, k.b, k.gamma)?,
        };
        m.with_chi_epsilon(k.chi_epsilon)
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, &'static str, String)> {
        if let Err(e) = self.kernel_model() {
            let msg = match e {
                Error::InvalidArgument(s) => s,
                other => other.to_string(),
            };
            return Err(("kernel", kernel_key(&msg), msg));
        }
        let g = &self.grid;
        check(g.p_max.is_finite() && g.p_max > 0.0, "grid", "p_max", "p_max must be positive")?;
        check(g.n_per_axis >= 5 && g.n_per_axis % 2 == 1, "grid", "n_per_axis", "n_per_axis must be odd and at least 5")?;
        check(g.theta_nodes >= 1, "grid", "theta_nodes", "theta_nodes must be positive")?;
        check(g.phi_nodes >= 1, "grid", "phi_nodes", "phi_nodes must be positive")?;
        check(g.max_defect > 0.0, "grid", "max_defect", "max_defect must be positive")?;
        let f = &self.frequencies;
        check(f.count >= 2, "frequencies", "count", "need at least two frequencies")?;
        check(f.min > 0.0 && f.min.is_finite(), "frequencies", "min", "min must be positive")?;
        check(f.max > f.min && f.max.is_finite(), "frequencies", "max", "max must exceed min")?;
        let t = &self.time;
        check_steps(t.horizon, t.dt, "time")?;
        check(t.fit_t_lo >= 0.0 && t.fit_t_lo < t.horizon, "time", "fit_t_lo", "fit_t_lo must lie in [0, horizon)")?;
        let r = &self.rate;
        check((1.0..=2.0).contains(&r.r), "rate", "r", "r must lie in [1, 2]")?;
        check(r.r == 1.0 || r.r == 2.0, "rate", "r", "surrogate data exist only for r = 1 and r = 2")?;
        check(r.m >= 0.0, "rate", "m", "m must be nonnegative")?;
        check(r.ell >= 0.0, "rate", "ell", "ell must be nonnegative")?;
        let sigma0 = 1.5 * (1.0 / r.r - 0.5);
        check(
            (0.0..=sigma0 + 1e-12).contains(&r.decay_order),
            "rate",
            "decay_order",
            format!("decay_order must lie in [0, {sigma0}]"),
        )?;
        let d = &self.data;
        check(d.cutoff > 0.0, "data", "cutoff", "cutoff must be positive")?;
        check(d.epsilon > 0.0, "data", "epsilon", "epsilon must be positive")?;
        let l = &self.lyapunov;
        check(l.states_per_freq >= 1, "lyapunov", "states_per_freq", "states_per_freq must be positive")?;
        check_steps(l.horizon, l.snapshot_dt, "lyapunov").map_err(|(s, k, m)| (s, if k == "dt" { "snapshot_dt" } else { k }, m))?;
        check(l.safety > 0.0 && l.safety <= 1.0, "lyapunov", "safety", "safety must lie in (0, 1]")?;
        check(l.free_lambda > 0.0, "lyapunov", "free_lambda", "free_lambda must be positive")?;
        let v = &self.vidav;
        check(!v.freqs.is_empty() && v.freqs.iter().all(|x| *x >= 0.0), "vidav", "freqs", "freqs must be nonnegative")?;
        check(!v.times.is_empty() && v.times.iter().all(|x| *x > 0.0), "vidav", "times", "times must be positive")?;
        check(
            v.steps_per_unit.len() >= 2 && v.steps_per_unit.windows(2).all(|w| w[1] == 2 * w[0]) && v.steps_per_unit[0] >= 4,
            "vidav",
            "steps_per_unit",
            "steps_per_unit needs at least two levels, each double the previous, starting at ≥ 4",
        )?;
        let n = &self.nonlinear;
        check(n.n_per_axis >= 5 && n.n_per_axis % 2 == 1, "nonlinear", "n_per_axis", "n_per_axis must be odd and at least 5")?;
        check(n.kappa > 0.0, "nonlinear", "kappa", "kappa must be positive")?;
        check(n.modes >= 1, "nonlinear", "modes", "modes must be positive")?;
        check_steps(n.horizon, n.dt, "nonlinear")?;
        check(n.fit_t_lo < n.horizon, "nonlinear", "fit_t_lo", "fit_t_lo must be below the horizon")?;
        check(n.iterations >= 2, "nonlinear", "iterations", "need at least two iterations for a ratio")?;
        check(n.amplitude_max > 0.0, "nonlinear", "amplitude_max", "amplitude_max must be positive")?;
        check(
            n.amplitude_fraction > 0.0 && n.amplitude_fraction <= 1.0,
            "nonlinear",
            "amplitude_fraction",
            "amplitude_fraction must lie in (0, 1]",
        )?;
        let h = &self.homogeneous;
        check(h.n_per_axis >= 5 && h.n_per_axis % 2 == 1, "homogeneous", "n_per_axis", "n_per_axis must be odd and at least 5")?;
        check_steps(h.horizon, h.dt, "homogeneous")?;
        check(h.fill > 0.0 && h.fill <= 1.0, "homogeneous", "fill", "fill must lie in (0, 1]")?;
        Ok(())
    }

    /// Tolerances actually applied, with the names of overridden ones.
    pub fn tolerances(&self) -> (Tolerances, Vec<&'static str>) {
        let o = &self.tolerances;
        let d = Tolerances::defaults(self.rate.m);
        let mut over = Vec::new();
        let mut pick = |v: Option<f64>, dflt: f64, name: &'static str| match v {
            Some(x) => {
                over.push(name);
                x
            }
            None => dflt,
        };
        let t = Tolerances {
            exponent_rel_band: pick(o.exponent_rel_band, d.exponent_rel_band, "exponent_rel_band"),
            exponent_abs_band: pick(o.exponent_abs_band, d.exponent_abs_band, "exponent_abs_band"),
            supnorm_fraction: pick(o.supnorm_fraction, d.supnorm_fraction, "supnorm_fraction"),
            margin_floor: pick(o.margin_floor, d.margin_floor, "margin_floor"),
            norm_growth: pick(o.norm_growth, d.norm_growth, "norm_growth"),
            vidav_min_order: pick(o.vidav_min_order, d.vidav_min_order, "vidav_min_order"),
            slab_rate_rel: pick(o.slab_rate_rel, d.slab_rate_rel, "slab_rate_rel"),
            stationarity: pick(o.stationarity, d.stationarity, "stationarity"),
            entropy_slack: pick(o.entropy_slack, d.entropy_slack, "entropy_slack"),
        };
        (t, over)
    }
}

fn check(ok: bool, s: &'static str, k: &'static str, msg: impl Into<String>) -> std::result::Result<(), (&'static str, &'static str, String)> {
    if ok {
        Ok(())
    } else {
        Err((s, k, msg.into()))
    }
}

fn check_steps(horizon: f64, dt: f64, s: &'static str) -> std::result::Result<(), (&'static str, &'static str, String)> {
    check(horizon.is_finite() && horizon > 0.0, s, "horizon", "horizon must be positive")?;
    check(dt.is_finite() && dt > 0.0 && dt <= horizon, s, "dt", "dt must lie in (0, horizon]")?;
    let n = (horizon / dt).round();
    check((n * dt - horizon).abs() <= 1e-9 * horizon, s, "dt", format!("horizon {horizon} is not a multiple of dt {dt}"))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative half-width of the accepted decay-exponent band.
    pub exponent_rel_band: f64,
    /// Absolute half-width floor of the same band.
    pub exponent_abs_band: f64,
    /// Sup-norm exponent must reach this fraction of its target.
    pub supnorm_fraction: f64,
    /// Lowest accepted normalized inequality margin.
    pub margin_floor: f64,
    /// Largest accepted relative norm increase between snapshots.
    pub norm_growth: f64,
    pub vidav_min_order: f64,
    /// Relative gap allowed between nonlinear and linear slab rates.
    pub slab_rate_rel: f64,
    pub stationarity: f64,
    /// Entropy decrease per step tolerated (relative to |H|).
    pub entropy_slack: f64,
}

impl Tolerances {
    pub fn defaults(m: f64) -> Self {
        Self {
            exponent_rel_band: if m > 0.0 { 0.2 } else { 0.15 },
            exponent_abs_band: 0.1,
            supnorm_fraction: 0.8,
            margin_floor: -1e-12,
            norm_growth: 1e-12,
            vidav_min_order: 3.5,
            slab_rate_rel: 0.2,
            stationarity: 1e-10,
            entropy_slack: 1e-12,
        }
    }
}

/// Columnar numeric table written as CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format_g17(*v)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// C `%.17g`.
pub fn format_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let strip = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..17).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip(mant), exp.abs())
    } else {
        strip(&format!("{:.*}", (16 - exp) as usize, x))
    }
}

/// Outcome of one experiment: the manifest and the CSV time series.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub kind: ExperimentKind,
    pub manifest: Value,
    pub table: Table,
    pub passed: bool,
}

/// Initial profile of the linear experiments.
pub fn linear_profile(grid: &MomentumGrid) -> Vec<C64> {
    grid.coords()
        .iter()
        .zip(grid.energies())
        .zip(grid.sqrt_maxwellian())
        .map(|((c, e), s)| C64::new((1.0 + 0.5 * c[0] + 0.3 * c[1] + 0.2 * e) * s + 0.5 * (-e / 2.0).exp(), 0.0))
        .collect()
}

/// Slab profile for the Picard runs (mode 0 purely imaginary-odd).
pub fn slab_profile(grid: &MomentumGrid, kappa: f64, modes: usize) -> Result<SlabField> {
    let sj = grid.sqrt_maxwellian();
    let half: Vec<Vec<C64>> = (0..=modes)
        .map(|k| {
            grid.coords()
                .iter()
                .zip(sj)
                .map(|(c, s)| C64::new(if k == 0 { 0.0 } else { s * (1.0 + c[0]) / k as f64 }, 0.3 * s * c[1] * k as f64))
                .collect()
        })
        .collect();
    SlabField::from_nonnegative(kappa, half)
}

/// Smooth perturbation of `J` for homogeneous relaxation.
pub fn homogeneous_profile(grid: &MomentumGrid) -> Vec<f64> {
    grid.coords()
        .iter()
        .zip(grid.energies())
        .zip(grid.maxwellian())
        .map(|((c, e), j)| j * (1.0 + 0.4 * c[0] / e + 0.3 * (c[1] * c[1] - c[2] * c[2]) / (e * e)))
        .collect()
}

fn assemble(model: &KernelModel, p_max: f64, n: usize, g: &GridSection, max_defect: f64) -> Result<OperatorMatrices> {
    let grid = Arc::new(build_grid(p_max, n)?);
    let rule = AngularRule::new(g.theta_nodes, g.phi_nodes, model.angular_exponent)?;
    assemble_operator_matrices(model, grid, rule, AssemblyOptions { max_defect, ..Default::default() })
}

fn assembly_json(m: &OperatorMatrices) -> Value {
    let sp = m.l_spectrum();
    json!({
        "report": m.report,
        "coercivity_delta0": m.coercivity_constant(),
        "lowest_eigenvalues": &sp[..sp.len().min(7)],
        "nu_min": m.nu.iter().copied().fold(f64::INFINITY, f64::min),
        "nu_max": m.nu.iter().copied().fold(0.0, f64::max),
    })
}

/// Runs the configured experiment in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (tol, overrides) = cfg.tolerances();
    let model = cfg.kernel_model()?;
    let (results, table, passed) = match cfg.kind {
        ExperimentKind::LinearDecay => linear_decay(cfg, &model, &tol)?,
        ExperimentKind::LyapunovVerify => lyapunov_verify(cfg, &model, &tol)?,
        ExperimentKind::VidavCheck => vidav_check(cfg, &model, &tol)?,
        ExperimentKind::NonlinearSlab => nonlinear_slab(cfg, &model, &tol)?,
        ExperimentKind::HomogeneousRelax => homogeneous_relax(cfg, &model, &tol)?,
        ExperimentKind::InequalitySuite => inequality_suite(cfg, &model)?,
    };
    let manifest = json!({
        "kind": cfg.kind.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "tolerances": tol,
        "tolerance_overrides": overrides,
        "parallel": par::is_parallel(),
        "passed": passed,
        "csv": format!("{}.csv", cfg.kind.name()),
        "csv_columns": table.columns,
        "results": results,
    });
    Ok(RunOutput { kind: cfg.kind, manifest, table, passed })
}

fn linear_decay(cfg: &ExperimentConfig, model: &KernelModel, tol: &Tolerances) -> Result<(Value, Table, bool)> {
    let m = assemble(model, cfg.grid.p_max, cfg.grid.n_per_axis, &cfg.grid, cfg.grid.max_defect)?;
    let grid = m.grid().clone();
    let freqs = LyapunovSampleSpec::log_spaced(cfg.frequencies.count, cfg.frequencies.min, cfg.frequencies.max);
    let data = if cfg.rate.r == 1.0 {
        DataClass::Flat { cutoff: cfg.data.cutoff }
    } else {
        DataClass::Critical { cutoff: cfg.data.cutoff, epsilon: cfg.data.epsilon }
    };
    let rate = RateSpec::new(cfg.rate.r, cfg.rate.m)?;
    let sweep = run_mode_sweep(&m, &freqs, data, &linear_profile(&grid), cfg.time.horizon, cfg.time.dt)?;
    let b = model.b_exponent;
    let norm = synthesize_norm(&sweep, &rate, cfg.rate.ell, b, &grid)?;
    let sup = supnorm_series(&sweep, &grid, cfg.rate.ell, b)?;
    let window = FitWindow::new(cfg.time.fit_t_lo, cfg.time.horizon)?;
    let fit = fit_decay_exponent(&norm, window)?;
    let sup_fit = fit_decay_exponent(&sup, window)?;
    let target = 2.0 * rate.sigma_rm;
    let band = (tol.exponent_rel_band * target).max(tol.exponent_abs_band);
    let in_band = (fit.exponent - target).abs() <= band;
    let sup_target = 1.5 * (1.0 / rate.r - 0.5);
    let sup_ok = sup_fit.exponent >= tol.supnorm_fraction * sup_target;
    let mut table = Table::new(vec!["t", "norm2", "supnorm"]);
    for (a, s) in norm.iter().zip(&sup) {
        table.push(vec![a.0, a.1, s.1]);
    }
    let results = json!({
        "assembly": assembly_json(&m),
        "data": data,
        "sigma_rm": rate.sigma_rm,
        "target_exponent": target,
        "band": [target - band, target + band],
        "fit": fit,
        "supnorm_target": sup_target,
        "supnorm_fit": sup_fit,
        "exponent_in_band": in_band,
        "supnorm_ok": sup_ok,
    });
    Ok((results, table, in_band && sup_ok))
}

fn lyapunov_spec(cfg: &ExperimentConfig, seed: u64) -> LyapunovSampleSpec {
    let l = &cfg.lyapunov;
    let mut freqs = LyapunovSampleSpec::log_spaced(cfg.frequencies.count, cfg.frequencies.min, cfg.frequencies.max);
    if l.include_zero {
        freqs.insert(0, 0.0);
    }
    LyapunovSampleSpec {
        freqs,
        states_per_freq: l.states_per_freq,
        horizon: l.horizon,
        snapshot_dt: l.snapshot_dt,
        seed,
        ell: l.ell,
        free_lambda: l.free_lambda,
        safety: l.safety,
    }
}

/// Fits the constants on `seed` and evaluates them on `seed + 1`.
fn lyapunov_verify(cfg: &ExperimentConfig, model: &KernelModel, tol: &Tolerances) -> Result<(Value, Table, bool)> {
    let m = assemble(model, cfg.grid.p_max, cfg.grid.n_per_axis, &cfg.grid, cfg.grid.max_defect)?;
    let ops = MacroOps::new(m.grid())?;
    let fit_spec = lyapunov_spec(cfg, cfg.seed);
    let fit_samples = collect_lyapunov_samples(&m, &ops, &fit_spec)?;
    let fit = fit_lyapunov_constants_from_samples(&fit_samples, fit_spec.free_lambda, fit_spec.safety)?;
    let check_samples = collect_lyapunov_samples(&m, &ops, &lyapunov_spec(cfg, cfg.seed.wrapping_add(1)))?;
    let c = &fit.constants;
    let mut table = Table::new(vec!["freq", "t", "min_margin", "max_norm2"]);
    let mut worst = f64::INFINITY;
    let mut row: Option<(f64, f64, f64, f64)> = None;
    for s in &check_samples {
        let v = c.lyapunov_margin(s);
        worst = worst.min(v);
        row = match row {
            Some(r) if r.0 == s.freq && r.1 == s.t => Some((r.0, r.1, r.2.min(v), r.3.max(s.norm2))),
            Some(r) => {
                table.push(vec![r.0, r.1, r.2, r.3]);
                Some((s.freq, s.t, v, s.norm2))
            }
            None => Some((s.freq, s.t, v, s.norm2)),
        };
    }
    if let Some(r) = row {
        table.push(vec![r.0, r.1, r.2, r.3]);
    }
    let growth = max_norm_growth(&fit_samples).max(max_norm_growth(&check_samples));
    let passed = fit.lyapunov_margin >= tol.margin_floor && worst >= tol.margin_floor && growth <= tol.norm_growth;
    let results = json!({
        "assembly": assembly_json(&m),
        "fit": fit,
        "verification_seed": cfg.seed.wrapping_add(1),
        "verification_margin": worst,
        "max_norm_growth": growth,
    });
    Ok((results, table, passed))
}

/// Lyapunov constant search only (the `fit-constants` subcommand).
pub fn fit_constants(cfg: &ExperimentConfig) -> Result<Value> {
    let model = cfg.kernel_model()?;
    let m = assemble(&model, cfg.grid.p_max, cfg.grid.n_per_axis, &cfg.grid, cfg.grid.max_defect)?;
    let ops = MacroOps::new(m.grid())?;
    let spec = lyapunov_spec(cfg, cfg.seed);
    let samples = collect_lyapunov_samples(&m, &ops, &spec)?;
    let fit = fit_lyapunov_constants_from_samples(&samples, spec.free_lambda, spec.safety)?;
    Ok(json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "assembly": assembly_json(&m),
        "fit": fit,
        "max_norm_growth": max_norm_growth(&samples),
    }))
}

fn vidav_initial(grid: &MomentumGrid) -> Vec<C64> {
    grid.energies()
        .iter()
        .zip(grid.coords())
        .map(|(e, c)| C64::new((-e / 3.0).exp() * (1.0 + c[0]), 0.2 * c[1] * (-e / 2.0).exp()))
        .collect()
}

fn vidav_check(cfg: &ExperimentConfig, model: &KernelModel, tol: &Tolerances) -> Result<(Value, Table, bool)> {
    let m = assemble(model, cfg.grid.p_max, cfg.grid.n_per_axis, &cfg.grid, cfg.grid.max_defect)?;
    let sys = VidavSystem::from_matrices(&m);
    let bare = VidavSystem::without_kernel(&m);
    let x0 = m.to_scaled(&vidav_initial(m.grid()));
    let v = &cfg.vidav;
    let mut table = Table::new(vec!["freq", "t", "steps", "residual", "budget", "h1", "h2", "h3", "h4", "h5"]);
    let mut within = true;
    let mut worst_order = f64::INFINITY;
    let mut bare_residual: f64 = 0.0;
    for &xi in &v.freqs {
        let freq = [0.6 * xi, 0.8 * xi, 0.0];
        for &t in &v.times {
            let mut prev: Option<f64> = None;
            for &per in &v.steps_per_unit {
                let steps = ((t * per as f64).round() as usize).max(4);
                let r = vidav_expand(&sys, &x0, freq, t, steps)?;
                within &= r.residual <= r.budget;
                if let Some(p) = prev {
                    // Rounding-level residuals carry no order information.
                    if p > 1e-12 {
                        worst_order = worst_order.min((p / r.residual).log2());
                    }
                }
                prev = Some(r.residual);
                let n = r.norms();
                table.push(vec![xi, t, steps as f64, r.residual, r.budget, n[0], n[1], n[2], n[3], n[4]]);
            }
            let steps = ((t * v.steps_per_unit[0] as f64).round() as usize).max(4);
            bare_residual = bare_residual.max(vidav_expand(&bare, &x0, freq, t, steps)?.residual);
        }
    }
    let order_ok = !worst_order.is_finite() || worst_order >= tol.vidav_min_order;
    let bare_ok = bare_residual <= 1e-12;
    let results = json!({
        "assembly": assembly_json(&m),
        "within_budget": within,
        "observed_order": if worst_order.is_finite() { Some(worst_order) } else { None },
        "kernel_free_residual": bare_residual,
        "budget_constant": crate::semigroup_vidav::VIDAV_BUDGET_CONST,
    });
    Ok((results, table, within && order_ok && bare_ok))
}

fn nonlinear_slab(cfg: &ExperimentConfig, model: &KernelModel, tol: &Tolerances) -> Result<(Value, Table, bool)> {
    let n = &cfg.nonlinear;
    let m = assemble(model, n.p_max, n.n_per_axis, &cfg.grid, n.max_defect)?;
    let nl = NonlinearOperator::new(&m)?;
    let grid = m.grid().clone();
    let profile = slab_profile(&grid, n.kappa, n.modes)?;
    let mut opts = PicardOptions { horizon: n.horizon, dt: n.dt, iterations: n.iterations, ell: n.ell, time_decay: 0.0, smallness: f64::INFINITY };
    let (a_star, norm_star) = calibrate_smallness(&m, &nl, &profile, &opts, n.amplitude_max, n.bisections)?;
    if a_star == 0.0 {
        return Err(Error::DataTooLarge(format!("no contracting amplitude found below {}", n.amplitude_max)));
    }
    opts.smallness = norm_star;
    let a = n.amplitude_fraction * a_star;
    let f0 = profile.map(|_, v| v.iter().map(|z| z * a).collect());
    let r = picard_iterate(&m, &nl, &f0, &opts)?;
    let zero = picard_iterate(&m, &nl, &SlabField::zeros(n.kappa, n.modes, grid.len()), &opts)?;
    let zero_exact = zero.increments.iter().all(|v| *v == 0.0) && zero.radius == 0.0;
    let (lin, nlr) = slab_decay_rates(&grid, &r, FitWindow::new(n.fit_t_lo, n.horizon)?)?;
    let gap = (nlr.exponent - lin.exponent).abs() / lin.exponent.abs();
    let mut table = Table::new(vec!["t", "linear_l2", "nonlinear_l2"]);
    for (a, b) in r.linear.iter().zip(&r.nonlinear) {
        table.push(vec![a.t, a.l2_sq(&grid), b.l2_sq(&grid)]);
    }
    let passed = r.max_ratio() < 1.0 && zero_exact && gap <= tol.slab_rate_rel;
    let results = json!({
        "assembly": assembly_json(&m),
        "calibrated_amplitude": a_star,
        "smallness": norm_star,
        "amplitude": a,
        "data_norm": r.data_norm,
        "increments": r.increments,
        "ratios": r.ratios,
        "radius": r.radius,
        "zero_data_exact": zero_exact,
        "linear_rate": lin,
        "nonlinear_rate": nlr,
        "relative_gap": gap,
    });
    Ok((results, table, passed))
}

fn homogeneous_relax(cfg: &ExperimentConfig, model: &KernelModel, tol: &Tolerances) -> Result<(Value, Table, bool)> {
    let h = &cfg.homogeneous;
    let m = assemble(model, h.p_max, h.n_per_axis, &cfg.grid, h.max_defect)?;
    let nl = NonlinearOperator::new(&m)?;
    let grid = m.grid().clone();
    let cadence = match h.cadence {
        CadenceKind::PerStep => Cadence::PerStep,
        CadenceKind::Full => Cadence::Full { max_outer: h.max_outer, tol: h.outer_tol },
    };
    let jm = grid.maxwellian().to_vec();
    let stat = positivity_iterate(&nl, &jm, h.dt, h.horizon, cadence)?;
    let stationarity = stat
        .trajectory
        .iter()
        .flat_map(|s| s.f.iter().zip(&jm).map(|(a, b)| (a - b).abs() / b))
        .fold(0.0, f64::max);
    let f0 = homogeneous_profile(&grid);
    let run = positivity_iterate(&nl, &f0, h.dt, h.horizon, cadence)?;
    let mut table = Table::new(vec!["t", "entropy", "min_value", "mass", "energy"]);
    let mut hs = Vec::with_capacity(run.trajectory.len());
    for s in &run.trajectory {
        let e = entropy(&grid, &s.f)?;
        let mo = crate::nonlinear_dynamics::moments(&grid, &s.f);
        let mn = s.f.iter().copied().fold(f64::INFINITY, f64::min);
        table.push(vec![s.t, e, mn, mo[0], mo[4]]);
        hs.push(e);
    }
    let worst_dh = hs.windows(2).map(|w| (w[1] - w[0]) / w[0].abs().max(1e-300)).fold(f64::INFINITY, f64::min);
    let ops = MacroOps::new(&grid)?;
    let hj = entropy(&grid, &jm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entropy_gap = f64::INFINITY;
    for _ in 0..h.entropy_trials {
        let f = moment_matched_sample(&grid, &ops, &mut rng, h.fill)?;
        entropy_gap = entropy_gap.min(hj - entropy(&grid, &f)?);
    }
    let positive = run.min_value >= 0.0 && stat.min_value >= 0.0;
    let monotone = worst_dh >= -tol.entropy_slack;
    let stationary = stationarity <= tol.stationarity;
    let maximal = h.entropy_trials == 0 || entropy_gap >= -tol.entropy_slack * hj.abs();
    let results = json!({
        "assembly": assembly_json(&m),
        "stationarity": stationarity,
        "min_value": run.min_value,
        "moment_drift": run.moment_drift,
        "outer_differences": run.outer_differences,
        "worst_relative_entropy_step": worst_dh,
        "entropy_gap_min": if entropy_gap.is_finite() { Some(entropy_gap) } else { None },
        "positive": positive,
        "entropy_monotone": monotone,
        "stationary": stationary,
        "equilibrium_maximal": maximal,
    });
    Ok((results, table, positive && monotone && stationary && maximal))
}

fn inequality_suite(cfg: &ExperimentConfig, model: &KernelModel) -> Result<(Value, Table, bool)> {
    let mut table = Table::new(vec!["check", "p1", "p2", "value", "bound"]);
    let mut passed = true;
    let mut decay = Vec::new();
    for &(l, mu) in &[(2.0, 1.0), (1.0, 1.0), (3.0, 0.5)] {
        let r = basic_decay_check(l, mu, 1e4, 400)?;
        passed &= r.finite && r.log_factor == (l == 1.0);
        table.push(vec![0.0, l, mu, r.sup_double, r.rho]);
        decay.push(r);
    }
    let mut worst_calc: f64 = 0.0;
    for &a in &[0.1, 0.5, 1.0, 2.0, 5.0] {
        for &k in &[0.25, 0.5, 1.0, 2.0, 4.0] {
            let r = calc_inequality_check(a, k, 50.0)?;
            worst_calc = worst_calc.max(r.violation);
            table.push(vec![1.0, a, k, r.sampled_max.max(r.maximizer_value), r.bound]);
        }
    }
    passed &= worst_calc <= 1e-12;
    let grid = Arc::new(build_grid(cfg.grid.p_max, cfg.grid.n_per_axis)?);
    let engine = crate::kernel_ops::CollisionEngine::new(
        *model,
        grid.clone(),
        AngularRule::new(cfg.grid.theta_nodes, cfg.grid.phi_nodes, model.angular_exponent)?,
    )?;
    let nu = engine.nu_nodes();
    let times: Vec<f64> = (0..400).map(|i| i as f64 * 0.25).collect();
    let mut worst_poly: f64 = 0.0;
    for &k in &[0.5, 1.0, 2.0, 4.0] {
        let w = poly_e_check(&nu, &grid, model.b_exponent, k, &times)?;
        worst_poly = worst_poly.max(w);
        table.push(vec![2.0, k, 0.0, w, 1.0]);
    }
    passed &= worst_poly <= 1.0;
    let results = json!({
        "basic_decay": decay,
        "elem_calc_worst_violation": worst_calc,
        "poly_e_worst_ratio": worst_poly,
        "check_codes": {"0": "basic decay sup (p1 = λ, p2 = μ)", "1": "elementary bound (p1 = a, p2 = k)", "2": "polynomial-exponential bound (p1 = k)"},
    });
    Ok((results, table, passed))
}

/// Plot script consuming the CSV of `kind`.
pub fn plot_script(kind: ExperimentKind) -> String {
    let (x, ys, log) = match kind {
        ExperimentKind::LinearDecay => ("t", vec!["norm2", "supnorm"], "loglog"),
        ExperimentKind::LyapunovVerify => ("t", vec!["min_margin"], "plot"),
        ExperimentKind::VidavCheck => ("steps", vec!["residual", "budget"], "loglog"),
        ExperimentKind::NonlinearSlab => ("t", vec!["linear_l2", "nonlinear_l2"], "semilogy"),
        ExperimentKind::HomogeneousRelax => ("t", vec!["entropy"], "plot"),
        ExperimentKind::InequalitySuite => ("p1", vec!["value", "bound"], "plot"),
    };
    let mut s = String::new();
    let _ = writeln!(s, "import csv, sys\nimport matplotlib.pyplot as plt\n");
    let _ = writeln!(s, "path = sys.argv[1] if len(sys.argv) > 1 else \"{}.csv\"", kind.name());
    let _ = writeln!(s, "with open(path) as fh:\n    rows = list(csv.DictReader(fh))");
    let _ = writeln!(s, "x = [float(r[\"{x}\"]) for r in rows]");
    for y in &ys {
        let _ = writeln!(s, "plt.{log}([v for v in x if v > 0] if \"{log}\" == \"loglog\" else x, [float(r[\"{y}\"]) for r, v in zip(rows, x) if v > 0 or \"{log}\" != \"loglog\"], label=\"{y}\")");
    }
    let _ = writeln!(s, "plt.xlabel(\"{x}\")\nplt.legend()\nplt.savefig(path.rsplit(\".\", 1)[0] + \".png\", dpi=150)");
    s
}

/// Writes manifest, CSV and plot script; returns the manifest path.
pub fn write_artifacts(out: &RunOutput, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{}.csv", out.kind.name())), out.table.to_csv())?;
    std::fs::write(dir.join("plot.py"), plot_script(out.kind))?;
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&out.manifest).map_err(|e| Error::Io(e.to_string()))? + "\n")?;
    Ok(path)
}

/// Manifest written when an inner numerical budget fails.
pub fn write_failure(cfg: &ExperimentConfig, err: &Error, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let (tol, overrides) = cfg.tolerances();
    let v = json!({
        "kind": cfg.kind.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "tolerances": tol,
        "tolerance_overrides": overrides,
        "passed": false,
        "error": err.to_string(),
        "error_report": format!("{err:?}"),
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).map_err(|e| Error::Io(e.to_string()))? + "\n")?;
    Ok(path)
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_budget_failure() {
        3
    } else {
        2
    }
}

/// One property of the quick verification suite.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Fast property suite on a 7³ grid (the `verify` subcommand).
pub fn verify_suite(seed: u64) -> Result<Vec<Check>> {
    use crate::kinematics::{post_collision, relative_invariants, Momentum3};
    use rand::Rng;
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (mut dmom, mut den, mut dg) = (0f64, 0f64, 0f64);
    for _ in 0..100_000 {
        let v: [f64; 9] = std::array::from_fn(|_| rng.gen_range(-10.0..10.0));
        let p = Momentum3::new([v[0], v[1], v[2]])?;
        let q = Momentum3::new([v[3], v[4], v[5]])?;
        let n = (v[6] * v[6] + v[7] * v[7] + v[8] * v[8]).sqrt();
        if n < 1e-3 {
            continue;
        }
        let pc = post_collision(&p, &q, [v[6] / n, v[7] / n, v[8] / n])?;
        let scale = p.energy() + q.energy();
        for i in 0..3 {
            dmom = dmom.max((pc.p_out.components()[i] + pc.q_out.components()[i] - p.components()[i] - q.components()[i]).abs() / scale);
        }
        den = den.max((pc.p_out.energy() + pc.q_out.energy() - scale).abs() / scale);
        let g0 = relative_invariants(&p, &q)?.g;
        dg = dg.max((relative_invariants(&pc.p_out, &pc.q_out)?.g - g0).abs() / g0.max(1.0));
    }
    out.push(Check {
        name: "collision conservation",
        passed: dmom <= 1e-12 && den <= 1e-12 && dg <= 1e-10,
        detail: format!("momentum {dmom:.2e}, energy {den:.2e}, g {dg:.2e}"),
    });

    let model = KernelModel::soft(1.0, 0.0)?;
    let gs = GridSection::default();
    let m = assemble(&model, 6.0, 7, &gs, 0.5)?;
    let grid = m.grid().clone();
    let asym = (&m.l - m.l.transpose()).abs().max();
    let sp = m.l_spectrum();
    let nnull = sp.iter().filter(|v| **v < 1e-6).count();
    out.push(Check {
        name: "linearized operator structure",
        passed: asym <= 1e-10 && sp[0] >= -1e-10 && nnull == 5,
        detail: format!("asymmetry {asym:.1e}, λ_min {:.2e}, null count {nnull}, δ₀ {:.3}", sp[0], m.coercivity_constant()),
    });

    let jm = grid.maxwellian().to_vec();
    let gl = m.engine.gain_loss(&jm, &jm)?;
    let q = gl.collision();
    let ann = q.iter().zip(&m.nu).zip(&jm).map(|((q, n), j)| q.abs() / (n * j)).fold(0.0, f64::max);
    out.push(Check { name: "equilibrium annihilation", passed: ann <= 1e-4, detail: format!("max |Q(J,J)|/(νJ) {ann:.2e}") });

    let ops = MacroOps::new(&grid)?;
    let f0 = linear_profile(&grid);
    let st = ModeState::new([0.3, -0.5, 0.7], f0.clone())?;
    let mut res = Vec::new();
    for dt in [0.02, 0.01] {
        let tr = evolve_mode(&m, &st, 1.0, dt, Integrator::Exponential)?;
        res.push(balance_residuals(&ops, &m, &tr.states, dt, DerivativeMode::CentredDifference)?.worst().max_residual);
    }
    let ratio = res[0] / res[1];
    out.push(Check {
        name: "balance laws second order",
        passed: (3.5..=4.5).contains(&ratio),
        detail: format!("residuals {:.2e} → {:.2e}, ratio {ratio:.2}", res[0], res[1]),
    });

    let bare = VidavSystem::without_kernel(&m);
    let x0 = m.to_scaled(&f0);
    let r = vidav_expand(&bare, &x0, [0.6, 0.8, 0.0], 1.0, 16)?;
    out.push(Check { name: "kernel-free expansion exact", passed: r.residual <= 1e-12, detail: format!("residual {:.2e}", r.residual) });

    let nl = NonlinearOperator::new(&m)?;
    let stat = positivity_iterate(&nl, &jm, 0.1, 1.0, Cadence::PerStep)?;
    let dev = stat.trajectory.iter().flat_map(|s| s.f.iter().zip(&jm).map(|(a, b)| (a - b).abs() / b)).fold(0.0, f64::max);
    out.push(Check { name: "equilibrium stationary", passed: dev <= 1e-10, detail: format!("max relative change {dev:.2e}") });

    let mut worst: f64 = 0.0;
    for &a in &[0.1, 1.0, 5.0] {
        for &k in &[0.5, 1.0, 3.0] {
            worst = worst.max(calc_inequality_check(a, k, 50.0)?.violation);
        }
    }
    out.push(Check { name: "elementary inequality", passed: worst <= 1e-12, detail: format!("worst violation {worst:.2e}") });
    for (l, mu) in [(2.0, 1.0), (1.0, 1.0), (3.0, 0.5)] {
        let r = basic_decay_check(l, mu, 1e4, 200)?;
        out.push(Check {
            name: "basic decay",
            passed: r.finite && r.log_factor == (l == 1.0),
            detail: format!("λ = {l}, μ = {mu}: sup ratio {:.4}", r.sup_double),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_printf() {
        assert_eq!(format_g17(0.1), "0.10000000000000001");
        assert_eq!(format_g17(1.0), "1");
        assert_eq!(format_g17(100.0), "100");
        assert_eq!(format_g17(1.5e-7), "1.4999999999999999e-07");
        assert_eq!(format_g17(1e17), "1e+17");
        assert_eq!(format_g17(-2.5), "-2.5");
        assert_eq!(format_g17(12345678901234567.0), "12345678901234568");
    }

    #[test]
    fn unknown_key_is_located() {
        let src = "kind = \"linear_decay\"\n[grid]\np_max = 8.0\nbogus = 1\n";
        let e = ExperimentConfig::parse(src, "c.toml").unwrap_err().to_string();
        assert!(e.contains("c.toml:4:"), "{e}");
    }

    #[test]
    fn soft_b_out_of_range_points_at_b() {
        let src = "kind = \"linear_decay\"\n\n[kernel]\nkind = \"soft\"\nb = 5.0\n";
        let e = ExperimentConfig::parse(src, "c.toml").unwrap_err();
        assert_eq!(exit_code(&e), 2);
        let s = e.to_string();
        assert!(s.contains("c.toml:5:1") && s.contains("0 < b < min(4, 4+γ)"), "{s}");
    }

    #[test]
    fn tolerance_overrides_are_listed() {
        let src = "kind = \"linear_decay\"\n[tolerances]\nexponent_rel_band = 0.3\n";
        let c = ExperimentConfig::parse(src, "c").unwrap();
        let (t, o) = c.tolerances();
        assert_eq!(t.exponent_rel_band, 0.3);
        assert_eq!(o, vec!["exponent_rel_band"]);
    }
}
