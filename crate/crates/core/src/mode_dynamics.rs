//! Per-frequency linear evolution `∂_t f̂ = −(i p̂·k + L) f̂`, the free
//! energy, the time-frequency Lyapunov functional and whole-space norms.

use crate::error::{invalid, Error, Result};
use crate::kernel_ops::OperatorMatrices;
use crate::kinematics::WeightSpec;
use crate::linalg::{expm, rk4_step, EigenPropagator, SplitMatrix};
use crate::macro_moments::MacroOps;
use crate::par;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

type C64 = Complex64;
const I: C64 = C64::new(0.0, 1.0);

/// Nodal values of `f̂(t, k, ·)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeState {
    pub freq: [f64; 3],
    pub values: Vec<C64>,
    pub t: f64,
}

impl ModeState {
    pub fn new(freq: [f64; 3], values: Vec<C64>) -> Result<Self> {
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return invalid("mode values must be finite");
        }
        Ok(Self { freq, values, t: 0.0 })
    }

    pub fn freq_norm(&self) -> f64 {
        self.freq.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `−(i diag(p̂·k) + L̃)` on scaled vectors.
pub fn assemble_mode_generator(m: &OperatorMatrices, freq: [f64; 3]) -> SplitMatrix {
    let n = m.len();
    let grid = m.grid();
    let mut im = DMatrix::zeros(n, n);
    for (i, c) in grid.coords().iter().enumerate() {
        let e = grid.energies()[i];
        im[(i, i)] = -(c[0] * freq[0] + c[1] * freq[1] + c[2] * freq[2]) / e;
    }
    SplitMatrix { re: -&m.l, im }
}

/// Time integrator for [`evolve_mode`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Rk4,
    /// Exact step propagator `e^{A dt}` by scaling and squaring.
    Exponential,
    /// Diagonalization through the complex Schur form.
    Eigen,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<ModeState>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }
}

/// Relative norm growth tolerated between snapshots before declaring instability.
pub const NORM_GROWTH_TOL: f64 = 1e-9;

/// Evolves `state` to `t_final` in steps of `dt`, storing every snapshot.
pub fn evolve_mode(
    m: &OperatorMatrices,
    state: &ModeState,
    t_final: f64,
    dt: f64,
    integrator: Integrator,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return invalid(format!("need dt > 0 and t_final ≥ 0, got dt = {dt}, t_final = {t_final}"));
    }
    let steps = (t_final / dt).round() as usize;
    if ((steps as f64) * dt - t_final).abs() > 1e-9 * t_final.max(1.0) {
        return invalid(format!("t_final {t_final} is not a multiple of dt {dt}"));
    }
    let a = assemble_mode_generator(m, state.freq);
    let x0 = SplitMatrix::from_columns(&[m.to_scaled(&state.values)]);
    let xs: Vec<SplitMatrix> = match integrator {
        Integrator::Exponential => {
            let u = expm(&a.scale(dt));
            let mut out = vec![x0];
            for _ in 0..steps {
                let next = u.mul(out.last().unwrap());
                out.push(next);
            }
            out
        }
        Integrator::Rk4 => {
            let apply = |x: &SplitMatrix| a.mul(x);
            let mut out = vec![x0];
            for _ in 0..steps {
                let next = rk4_step(&apply, out.last().unwrap(), dt);
                out.push(next);
            }
            out
        }
        Integrator::Eigen => {
            let ep = EigenPropagator::new(&a.to_complex())?;
            let x = x0.column(0);
            (0..=steps).map(|s| SplitMatrix::from_columns(&[ep.propagate(&x, s as f64 * dt)])).collect()
        }
    };
    let mut states = Vec::with_capacity(xs.len());
    let mut prev = f64::INFINITY;
    for (s, x) in xs.iter().enumerate() {
        let col = x.column(0);
        let nrm: f64 = col.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if !nrm.is_finite() || nrm > prev * (1.0 + NORM_GROWTH_TOL) + 1e-300 {
            return Err(Error::StepSize(format!(
                "norm grew from {prev:e} to {nrm:e} at t = {}; reduce dt = {dt}",
                s as f64 * dt
            )));
        }
        prev = nrm;
        states.push(ModeState { freq: state.freq, values: m.from_scaled(&col), t: state.t + s as f64 * dt });
    }
    Ok(Trajectory { states })
}

/// Propagates a batch of scaled states with the exact step propagator,
/// returning the batch at every multiple of `dt` up to `steps`.
pub fn propagate_batch(m: &OperatorMatrices, freq: [f64; 3], x0: &SplitMatrix, dt: f64, steps: usize) -> Vec<SplitMatrix> {
    let u = expm(&assemble_mode_generator(m, freq).scale(dt));
    let mut out = vec![x0.clone()];
    for _ in 0..steps {
        let next = u.mul(out.last().unwrap());
        out.push(next);
    }
    out
}

/// `∂_t f̂` from the generator, on nodal values.
pub fn time_derivative(m: &OperatorMatrices, state: &ModeState) -> Result<Vec<C64>> {
    let lf = m.apply_l(&state.values)?;
    let grid = m.grid();
    let k = state.freq;
    Ok((0..lf.len())
        .map(|i| {
            let c = grid.coords()[i];
            let kv = (c[0] * k[0] + c[1] * k[1] + c[2] * k[2]) / grid.energies()[i];
            -(I * kv * state.values[i]) - lf[i]
        })
        .collect())
}

/// The free energy split as `κ₁·kappa_part + cross`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyParts {
    pub kappa_part: C64,
    pub cross: C64,
}

impl FreeEnergyParts {
    pub fn value(&self, kappa1: f64) -> C64 {
        self.kappa_part * kappa1 + self.cross
    }
}

/// Sesquilinear free energy with the moment side taken from `x` and the
/// macro side from `y`; the functional itself is `parts(f, f)`.
pub fn free_energy_parts(ops: &MacroOps, freq: [f64; 3], x: &[C64], y: &[C64]) -> Result<FreeEnergyParts> {
    let px = ops.project(x)?;
    let mx = ops.moments(&px.micro)?;
    let my = ops.coefficients(y);
    let bx = px.coeffs.b;
    let k2: f64 = freq.iter().map(|v| v * v).sum();
    let ik: [C64; 3] = std::array::from_fn(|m| I * freq[m] / (1.0 + k2));
    let beta = ops.mu.beta;
    let pair = |u: C64, v: C64| u * v.conj();
    let mut kp = C64::new(0.0, 0.0);
    for m in 0..3 {
        let s: C64 = (0..3).map(|j| ik[j] * mx.theta[j][m]).sum();
        kp += pair(s, -my.b[m]);
        kp += pair(ik[m] * mx.theta[m][m] * beta, -my.b[m]);
        kp += pair(ik[m] * mx.a_func * ((beta + 1.0) / 3.0), -my.b[m]);
        kp += pair(mx.lambda[m], ik[m] * my.a);
    }
    let mut cross = C64::new(0.0, 0.0);
    for m in 0..3 {
        cross += pair(bx[m], ik[m] * (my.a * ops.mu.mu11_0 + my.c * ops.mu.mu11));
    }
    Ok(FreeEnergyParts { kappa_part: kp, cross })
}

pub fn free_energy(ops: &MacroOps, state: &ModeState, kappa1: f64) -> Result<C64> {
    Ok(free_energy_parts(ops, state.freq, &state.values, &state.values)?.value(kappa1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConstants {
    pub kappa1: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub kappa5: f64,
    pub lambda_rate: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Returns `(E, E_ℓ)`.
pub fn lyapunov_energy(
    m: &OperatorMatrices,
    ops: &MacroOps,
    state: &ModeState,
    weight: &WeightSpec,
    k: &LyapunovConstants,
) -> Result<(f64, f64)> {
    let grid = m.grid();
    let n2 = grid.norm_sq(&state.values);
    let fe = free_energy(ops, state, k.kappa1)?.re;
    let e = n2 + k.kappa3 * fe;
    let w2: Vec<f64> = grid.energies().iter().map(|en| weight.momentum_weight(*en).powi(2)).collect();
    let wn = |h: &[C64]| -> f64 { h.iter().zip(grid.quad_weights()).zip(&w2).map(|((v, q), w)| v.norm_sqr() * q * w).sum() };
    let el = if state.freq_norm() <= 1.0 {
        let pr = ops.project(&state.values)?;
        e + k.kappa4 * wn(&pr.micro)
    } else {
        e + k.kappa5 * wn(&state.values)
    };
    Ok((e, el))
}

/// Scalar ingredients of every inequality at one `(k, state, t)` sample.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LyapunovSample {
    /// Index of the trajectory the sample belongs to.
    pub run: usize,
    pub freq: f64,
    pub t: f64,
    pub norm2: f64,
    pub d_norm2: f64,
    pub f_kappa: f64,
    pub f_cross: f64,
    pub df_kappa: f64,
    pub df_cross: f64,
    pub micro_nu: f64,
    pub macro2: f64,
    pub w_micro: f64,
    pub dw_micro: f64,
    pub w_full: f64,
    pub dw_full: f64,
    pub nu_w_full: f64,
}

fn sample_from_state(
    m: &OperatorMatrices,
    ops: &MacroOps,
    w2: &[f64],
    state: &ModeState,
    fdot: &[C64],
) -> Result<LyapunovSample> {
    let grid = m.grid();
    let q = grid.quad_weights();
    let f = &state.values;
    let re_inner = |a: &[C64], b: &[C64], wt: &dyn Fn(usize) -> f64| -> f64 {
        (0..a.len()).map(|i| (a[i] * b[i].conj()).re * q[i] * wt(i)).sum()
    };
    let one = |_i: usize| 1.0;
    let ww = |i: usize| w2[i];
    let nuw = |i: usize| m.nu[i] * w2[i];
    let nu1 = |i: usize| m.nu[i];
    let pr = ops.project(f)?;
    let prd = ops.project(fdot)?;
    let fe = free_energy_parts(ops, state.freq, f, f)?;
    let d1 = free_energy_parts(ops, state.freq, fdot, f)?;
    let d2 = free_energy_parts(ops, state.freq, f, fdot)?;
    Ok(LyapunovSample {
        run: 0,
        freq: state.freq_norm(),
        t: state.t,
        norm2: re_inner(f, f, &one),
        d_norm2: 2.0 * re_inner(fdot, f, &one),
        f_kappa: fe.kappa_part.re,
        f_cross: fe.cross.re,
        df_kappa: (d1.kappa_part + d2.kappa_part).re,
        df_cross: (d1.cross + d2.cross).re,
        micro_nu: re_inner(&pr.micro, &pr.micro, &nu1),
        macro2: pr.coeffs.norm_sq(),
        w_micro: re_inner(&pr.micro, &pr.micro, &ww),
        dw_micro: 2.0 * re_inner(&prd.micro, &pr.micro, &ww),
        w_full: re_inner(f, f, &ww),
        dw_full: 2.0 * re_inner(fdot, f, &ww),
        nu_w_full: re_inner(f, f, &nuw),
    })
}

/// Sampling plan for the constant search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LyapunovSampleSpec {
    pub freqs: Vec<f64>,
    pub states_per_freq: usize,
    pub horizon: f64,
    pub snapshot_dt: f64,
    pub seed: u64,
    pub ell: f64,
    /// Rate used in the free-energy inequality when fitting `κ₁`.
    pub free_lambda: f64,
    /// Fraction of the largest feasible rate kept as `λ_rate`.
    pub safety: f64,
}

impl LyapunovSampleSpec {
    pub fn log_spaced(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
    }
}

/// Random complex state with a `e^{-p⁰/4}` envelope, scaled to unit norm.
pub fn random_state(m: &OperatorMatrices, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let grid = m.grid();
    let v: Vec<C64> = grid
        .energies()
        .iter()
        .map(|e| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)) * (-e / 4.0).exp())
        .collect();
    let n = grid.norm_sq(&v).sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Evolves random states at every sample frequency and records samples.
pub fn collect_lyapunov_samples(
    m: &OperatorMatrices,
    ops: &MacroOps,
    spec: &LyapunovSampleSpec,
) -> Result<Vec<LyapunovSample>> {
    let grid = m.grid();
    let weight = WeightSpec::new(spec.ell, m.engine.model().b_exponent, 0.0)?;
    let w2: Vec<f64> = grid.energies().iter().map(|e| weight.momentum_weight(*e).powi(2)).collect();
    let steps = (spec.horizon / spec.snapshot_dt).round() as usize;
    let per_freq = par::map_indexed(spec.freqs.len(), |fi| -> Result<Vec<LyapunovSample>> {
        let xi = spec.freqs[fi];
        let freq = [xi, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (fi as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let cols: Vec<Vec<C64>> = (0..spec.states_per_freq).map(|_| m.to_scaled(&random_state(m, &mut rng))).collect();
        let x0 = SplitMatrix::from_columns(&cols);
        let traj = propagate_batch(m, freq, &x0, spec.snapshot_dt, steps);
        let a = assemble_mode_generator(m, freq);
        let mut out = Vec::with_capacity((steps + 1) * spec.states_per_freq);
        for (s, x) in traj.iter().enumerate() {
            let dx = a.mul(x);
            for c in 0..spec.states_per_freq {
                let st = ModeState { freq, values: m.from_scaled(&x.column(c)), t: s as f64 * spec.snapshot_dt };
                let fd = m.from_scaled(&dx.column(c));
                let mut smp = sample_from_state(m, ops, &w2, &st, &fd)?;
                smp.run = fi * spec.states_per_freq + c;
                out.push(smp);
            }
        }
        Ok(out)
    });
    let mut all = Vec::new();
    for r in per_freq {
        all.extend(r?);
    }
    Ok(all)
}

/// Largest `‖f̂(t_{n+1})‖ / ‖f̂(t_n)‖ − 1` over consecutive snapshots of every run.
pub fn max_norm_growth(samples: &[LyapunovSample]) -> f64 {
    let mut by_run: std::collections::BTreeMap<usize, Vec<(f64, f64)>> = Default::default();
    for s in samples {
        by_run.entry(s.run).or_default().push((s.t, s.norm2));
    }
    let mut worst = f64::NEG_INFINITY;
    for v in by_run.values_mut() {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in v.windows(2) {
            worst = worst.max((w[1].1 / w[0].1).sqrt() - 1.0);
        }
    }
    worst
}

/// Fitted constants plus the worst margins on the fitting sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LyapunovFit {
    pub constants: LyapunovConstants,
    /// Constant `C` of the free-energy inequality.
    pub free_c: f64,
    pub free_lambda: f64,
    /// Worst normalized margins (≥ 0 means the inequality holds).
    pub free_margin: f64,
    pub lyapunov_margin: f64,
    pub zero_freq_margin: f64,
    pub samples: usize,
}

/// Relative size below which a dissipation term is rounding noise; such
/// samples only have to satisfy the inequality to the same relative level.
pub const DEGENERATE_REL: f64 = 1e-10;

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    LyapunovSampleSpec::log_spaced(n, lo, hi)
}

impl LyapunovConstants {
    fn e_parts(&self, s: &LyapunovSample) -> (f64, f64, f64) {
        let fe = self.kappa1 * s.f_kappa + s.f_cross;
        let dfe = self.kappa1 * s.df_kappa + s.df_cross;
        let e = s.norm2 + self.kappa3 * fe;
        let de = s.d_norm2 + self.kappa3 * dfe;
        let (el, del) = if s.freq <= 1.0 {
            (e + self.kappa4 * s.w_micro, de + self.kappa4 * s.dw_micro)
        } else {
            (e + self.kappa5 * s.w_full, de + self.kappa5 * s.dw_full)
        };
        (el, del, e)
    }

    /// Normalized margin of `∂_t E_ℓ + λ(1∧|k|²)‖ν^{1/2} w_ℓ f̂‖² ≤ 0`.
    pub fn lyapunov_margin(&self, s: &LyapunovSample) -> f64 {
        let (_, del, _) = self.e_parts(s);
        let k2 = (s.freq * s.freq).min(1.0);
        -(del + self.lambda_rate * k2 * s.nu_w_full) / s.nu_w_full.max(f64::MIN_POSITIVE)
    }

    /// `E_ℓ / ‖w_ℓ f̂‖²`.
    pub fn equivalence_ratio(&self, s: &LyapunovSample) -> f64 {
        self.e_parts(s).0 / s.w_full
    }
}

/// Normalized margin of the free-energy inequality.
pub fn free_energy_margin(s: &LyapunovSample, kappa1: f64, lambda: f64, c: f64) -> f64 {
    let lhs = kappa1 * s.df_kappa + s.df_cross + lambda * s.freq * s.freq / (1.0 + s.freq * s.freq) * s.macro2;
    (c * s.micro_nu - lhs) / s.norm2.max(f64::MIN_POSITIVE)
}

/// Constant search in the dependency order κ₁ → κ₃ → κ₄, κ₅ → λ.
pub fn fit_lyapunov_constants_from_samples(samples: &[LyapunovSample], free_lambda: f64, safety: f64) -> Result<LyapunovFit> {
    if samples.is_empty() {
        return invalid("no samples");
    }
    let usable: Vec<&LyapunovSample> = samples.iter().filter(|s| s.norm2 > 1e-200).collect();
    // κ₁: minimize the free-energy constant C.
    let c_of = |k1: f64| -> f64 {
        usable
            .iter()
            .map(|s| {
                let lhs = k1 * s.df_kappa + s.df_cross + free_lambda * s.freq * s.freq / (1.0 + s.freq * s.freq) * s.macro2;
                if s.micro_nu > DEGENERATE_REL * s.norm2 {
                    lhs / s.micro_nu
                } else if lhs > DEGENERATE_REL * s.norm2 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    };
    let (mut kappa1, mut free_c) = (1.0, f64::INFINITY);
    for k1 in log_grid(1e-3, 1e3, 61) {
        let c = c_of(k1);
        if c < free_c {
            free_c = c;
            kappa1 = k1;
        }
    }
    if !free_c.is_finite() {
        return Err(Error::Infeasible("free-energy inequality has no finite constant".into()));
    }
    // κ₃: equivalence bound, then maximize the macro-micro dissipation rate.
    let fe = |s: &LyapunovSample| kappa1 * s.f_kappa + s.f_cross;
    let dfe = |s: &LyapunovSample| kappa1 * s.df_kappa + s.df_cross;
    let k3_eq = usable
        .iter()
        .filter(|s| fe(s).abs() > 0.0)
        .map(|s| 0.5 * s.norm2 / fe(s).abs())
        .fold(f64::INFINITY, f64::min)
        .min(1e6);
    let lambda3 = |k3: f64| -> f64 {
        usable
            .iter()
            .filter_map(|s| {
                let den = s.micro_nu + s.freq * s.freq / (1.0 + s.freq * s.freq) * s.macro2;
                let de = s.d_norm2 + k3 * dfe(s);
                if den > DEGENERATE_REL * s.norm2 {
                    Some(-de / den)
                } else if de > DEGENERATE_REL * s.norm2 {
                    Some(f64::NEG_INFINITY)
                } else {
                    None
                }
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (mut kappa3, mut best3) = (0.0, f64::NEG_INFINITY);
    for k3 in log_grid(1e-6 * k3_eq, k3_eq, 61) {
        let l = lambda3(k3);
        if l > best3 {
            best3 = l;
            kappa3 = k3;
        }
    }
    if !(best3 > 0.0) {
        return Err(Error::Infeasible(format!("no κ₃ gives positive macro dissipation (best {best3:e})")));
    }
    let base = LyapunovConstants { kappa1, kappa3, kappa4: 0.0, kappa5: 0.0, lambda_rate: 0.0, c1: 0.0, c2: 0.0 };
    // κ₄ on |k| ≤ 1, κ₅ on |k| > 1.
    let rate_for = |low: bool, kk: f64| -> f64 {
        let mut c = base;
        if low {
            c.kappa4 = kk;
        } else {
            c.kappa5 = kk;
        }
        usable
            .iter()
            .filter(|s| (s.freq <= 1.0) == low)
            .filter_map(|s| {
                let (_, del, _) = c.e_parts(s);
                let k2 = (s.freq * s.freq).min(1.0);
                let den = k2 * s.nu_w_full;
                if den > DEGENERATE_REL * s.norm2 {
                    Some(-del / den)
                } else if del > DEGENERATE_REL * s.norm2 {
                    Some(f64::NEG_INFINITY)
                } else {
                    None
                }
            })
            .fold(f64::INFINITY, f64::min)
    };
    let pick = |low: bool| -> (f64, f64) {
        let mut best = (0.0, rate_for(low, 0.0));
        for kk in log_grid(1e-6, 1e2, 81) {
            let r = rate_for(low, kk);
            if r > best.1 {
                best = (kk, r);
            }
        }
        best
    };
    let (kappa4, r4) = pick(true);
    let (kappa5, r5) = pick(false);
    let rmax = r4.min(r5);
    if !(rmax > 0.0) {
        return Err(Error::Infeasible(format!("weighted dissipation rate not positive: low {r4:e}, high {r5:e}")));
    }
    let mut constants = LyapunovConstants { kappa1, kappa3, kappa4, kappa5, lambda_rate: safety * rmax, c1: 0.0, c2: 0.0 };
    let ratios: Vec<f64> = usable.iter().map(|s| constants.equivalence_ratio(s)).collect();
    constants.c1 = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    constants.c2 = ratios.iter().copied().fold(0.0, f64::max);
    let lyapunov_margin = usable.iter().map(|s| constants.lyapunov_margin(s)).fold(f64::INFINITY, f64::min);
    let free_margin = usable.iter().map(|s| free_energy_margin(s, kappa1, free_lambda, free_c)).fold(f64::INFINITY, f64::min);
    let zero_freq_margin = usable
        .iter()
        .filter(|s| s.freq == 0.0)
        .map(|s| -constants.e_parts(s).1 / s.norm2)
        .fold(f64::INFINITY, f64::min);
    Ok(LyapunovFit {
        constants,
        free_c,
        free_lambda,
        free_margin,
        lyapunov_margin,
        zero_freq_margin,
        samples: usable.len(),
    })
}

pub fn fit_lyapunov_constants(m: &OperatorMatrices, ops: &MacroOps, spec: &LyapunovSampleSpec) -> Result<LyapunovFit> {
    let samples = collect_lyapunov_samples(m, ops, spec)?;
    fit_lyapunov_constants_from_samples(&samples, spec.free_lambda, spec.safety)
}

/// `σ_{r,m} = (3/2)(1/r − 1/2) + m/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    pub r: f64,
    pub m: f64,
    pub sigma_rm: f64,
}

impl RateSpec {
    pub fn new(r: f64, m: f64) -> Result<Self> {
        if !(1.0..=2.0).contains(&r) || !(m >= 0.0) {
            return invalid(format!("rate spec needs r ∈ [1,2] and m ≥ 0, got r = {r}, m = {m}"));
        }
        Ok(Self { r, m, sigma_rm: 1.5 * (1.0 / r - 0.5) + m / 2.0 })
    }
}

/// Initial-data surrogate classes on the frequency side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum DataClass {
    /// `|freq|`-independent profile below `cutoff`, zero above.
    Flat { cutoff: f64 },
    /// `|f̂₀|² ∝ |freq|^{−3+ε}` below `cutoff`: square integrable but
    /// carrying no extra low-frequency integrability.
    Critical { cutoff: f64, epsilon: f64 },
}

impl DataClass {
    pub fn amplitude(&self, xi: f64) -> f64 {
        match *self {
            DataClass::Flat { cutoff } => (xi <= cutoff) as u8 as f64,
            DataClass::Critical { cutoff, epsilon } => {
                if xi <= cutoff {
                    xi.powf((-3.0 + epsilon) / 2.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// `4π ∫₀^{x} |amp|² ξ² dξ`.
    pub fn mass_below(&self, x: f64) -> f64 {
        let fp = 4.0 * std::f64::consts::PI;
        match *self {
            DataClass::Flat { cutoff } => fp * x.min(cutoff).powi(3) / 3.0,
            DataClass::Critical { cutoff, epsilon } => fp * x.min(cutoff).powf(epsilon) / epsilon,
        }
    }
}

/// Mode trajectories on a radial frequency grid.
#[derive(Clone, Debug)]
pub struct ModeSweep {
    pub freqs: Vec<f64>,
    /// Radial quadrature weights with `|f̂₀|²` folded in.
    pub radial_weights: Vec<f64>,
    pub times: Vec<f64>,
    /// `trajectories[j][n]` are nodal values of the unit-amplitude mode `j` at `times[n]`.
    pub trajectories: Vec<Vec<Vec<C64>>>,
    pub data: DataClass,
    pub profile_norm2: f64,
}

/// Radial weights for `4π∫ g(ξ)|amp|²ξ² dξ` on a log-spaced grid, with the
/// band `[0, ξ₀]` lumped onto the first node.
pub fn radial_weights(freqs: &[f64], data: &DataClass) -> Result<Vec<f64>> {
    if freqs.len() < 2 || freqs.windows(2).any(|w| !(w[1] > w[0])) || freqs[0] <= 0.0 {
        return invalid("radial grid must be positive and strictly increasing");
    }
    let n = freqs.len();
    let mut w = vec![0.0; n];
    let fp = 4.0 * std::f64::consts::PI;
    for j in 0..n - 1 {
        let (u0, u1) = (freqs[j].ln(), freqs[j + 1].ln());
        let du = u1 - u0;
        for (idx, x) in [(j, freqs[j]), (j + 1, freqs[j + 1])] {
            w[idx] += 0.5 * du * fp * x.powi(3) * data.amplitude(x).powi(2);
        }
    }
    w[0] += data.mass_below(freqs[0]);
    Ok(w)
}

/// Evolves `profile·amp(ξ)` at every frequency (parallel over frequencies).
pub fn run_mode_sweep(
    m: &OperatorMatrices,
    freqs: &[f64],
    data: DataClass,
    profile: &[C64],
    horizon: f64,
    snapshot_dt: f64,
) -> Result<ModeSweep> {
    let steps = (horizon / snapshot_dt).round() as usize;
    let radial = radial_weights(freqs, &data)?;
    let x0 = SplitMatrix::from_columns(&[m.to_scaled(profile)]);
    let trajectories = par::map_slice(freqs, |&xi| {
        propagate_batch(m, [xi, 0.0, 0.0], &x0, snapshot_dt, steps)
            .iter()
            .map(|x| m.from_scaled(&x.column(0)))
            .collect::<Vec<_>>()
    });
    // Amplitudes are folded into the radial weights, so trajectories are unit-amplitude.
    let profile_norm2 = m.grid().norm_sq(profile);
    Ok(ModeSweep {
        freqs: freqs.to_vec(),
        radial_weights: radial,
        times: (0..=steps).map(|s| s as f64 * snapshot_dt).collect(),
        trajectories,
        data,
        profile_norm2,
    })
}

/// Largest `|ξ_min|²·T` for which modes below the grid are treated as frozen.
pub const LOW_FREQ_THRESHOLD: f64 = 0.05;

impl ModeSweep {
    pub fn check_resolution(&self) -> Result<()> {
        let t = *self.times.last().unwrap_or(&0.0);
        let v = self.freqs[0] * self.freqs[0] * t;
        if v > LOW_FREQ_THRESHOLD {
            return Err(Error::Resolution(format!(
                "|freq|_min² · T = {v:.3e} exceeds {LOW_FREQ_THRESHOLD}; lower the smallest frequency"
            )));
        }
        Ok(())
    }

    /// Analytic `‖f₀‖²` of the surrogate data (before truncation to the grid).
    pub fn exact_initial_norm2(&self) -> f64 {
        let top = *self.freqs.last().unwrap();
        self.data.mass_below(top) * self.profile_norm2
    }
}

/// `‖w_ℓ f‖²_{L²_p L²_x}` (Ḣ^m with `|ξ|^{2m}`) per snapshot via Parseval.
pub fn synthesize_norm(sweep: &ModeSweep, rate: &RateSpec, ell: f64, b_exponent: f64, grid: &crate::discretization::MomentumGrid) -> Result<Vec<(f64, f64)>> {
    sweep.check_resolution()?;
    let ws = WeightSpec::new(ell, b_exponent, 0.0)?;
    let w2: Vec<f64> = grid.energies().iter().zip(grid.quad_weights()).map(|(e, q)| ws.momentum_weight(*e).powi(2) * q).collect();
    Ok(sweep
        .times
        .iter()
        .enumerate()
        .map(|(n, &t)| {
            let mut acc = 0.0;
            for (j, xi) in sweep.freqs.iter().enumerate() {
                let v = &sweep.trajectories[j][n];
                let nn: f64 = v.iter().zip(&w2).map(|(a, w)| a.norm_sqr() * w).sum();
                acc += sweep.radial_weights[j] * xi.powf(2.0 * rate.m) * nn;
            }
            (t, acc)
        })
        .collect())
}

/// Outcome of the interpolation argument on one mode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub freq: f64,
    pub j: f64,
    /// Largest `‖w_ℓ f‖² / (‖w_{ℓ−1} f‖^{2j/(j+1)} ‖w_{ℓ+j} f‖^{2/(j+1)})`; Hölder gives ≤ 1.
    pub holder_ratio: f64,
    /// `max_p w_{ℓ−1}/(ν^{1/2} w_ℓ)`, converting `w_{ℓ−1}` into the dissipation norm.
    pub nu_constant: f64,
    /// Smallest `C` with `‖w_ℓ f(t)‖² ≤ C ‖w_{ℓ+j} f₀‖² (1 + tρ̂/j)^{−j}`.
    pub decay_constant: f64,
    pub rho_hat: f64,
}

pub fn interpolation_decay_check(
    m: &OperatorMatrices,
    traj: &Trajectory,
    ell: f64,
    j: f64,
    lambda_rate: f64,
) -> Result<InterpolationReport> {
    if !(j > 0.0) {
        return invalid("interpolation order must be positive");
    }
    let grid = m.grid();
    let b = m.engine.model().b_exponent;
    let w = |l: f64| -> Result<Vec<f64>> {
        let s = WeightSpec::new(l, b, 0.0)?;
        Ok(grid.energies().iter().map(|e| s.momentum_weight(*e)).collect())
    };
    let (wl, wlm, wlj) = (w(ell)?, w(ell - 1.0)?, w(ell + j)?);
    let norm = |h: &[C64], wt: &[f64]| -> f64 {
        h.iter().zip(wt).zip(grid.quad_weights()).map(|((v, w), q)| v.norm_sqr() * w * w * q).sum()
    };
    let xi = traj.states[0].freq_norm();
    let rho_hat = lambda_rate * (xi * xi).min(1.0);
    let e0 = norm(&traj.states[0].values, &wlj);
    let mut holder_ratio = 0f64;
    let mut decay_constant = 0f64;
    for s in &traj.states {
        let a = norm(&s.values, &wl);
        let lo = norm(&s.values, &wlm);
        let hi = norm(&s.values, &wlj);
        if a > 0.0 {
            holder_ratio = holder_ratio.max(a / (lo.powf(j / (j + 1.0)) * hi.powf(1.0 / (j + 1.0))));
        }
        decay_constant = decay_constant.max(a * (1.0 + s.t * rho_hat / j).powf(j) / e0);
    }
    let nu_constant = (0..grid.len()).map(|i| wlm[i] / (m.nu[i].sqrt() * wl[i])).fold(0.0, f64::max);
    Ok(InterpolationReport { freq: xi, j, holder_ratio, nu_constant, decay_constant, rho_hat })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_arithmetic() {
        assert!((RateSpec::new(1.0, 0.0).unwrap().sigma_rm - 0.75).abs() < 1e-15);
        assert_eq!(RateSpec::new(2.0, 0.0).unwrap().sigma_rm, 0.0);
        assert!((RateSpec::new(1.0, 1.0).unwrap().sigma_rm - 1.25).abs() < 1e-15);
        assert!(RateSpec::new(3.0, 0.0).is_err());
    }

    #[test]
    fn radial_weights_integrate_data() {
        let freqs = LyapunovSampleSpec::log_spaced(400, 1e-3, 10.0);
        let d = DataClass::Flat { cutoff: 10.0 };
        let w = radial_weights(&freqs, &d).unwrap();
        let s: f64 = w.iter().sum();
        let exact = d.mass_below(10.0);
        assert!((s / exact - 1.0).abs() < 1e-3);
    }
}
