//! Nonlinear layer: Picard iteration of the mild perturbation equation in
//! slab geometry, the positivity-preserving gain/loss scheme for
//! homogeneous `F`, and entropy.

use crate::analysis::{fit_exponential_rate, DecayFit, FitWindow};
use crate::discretization::MomentumGrid;
use crate::error::{invalid, Error, Result};
use crate::kernel_ops::{loss_matrix, GainTensor, OperatorMatrices};
use crate::kinematics::WeightSpec;
use crate::linalg::{expm, SplitMatrix};
use crate::mode_dynamics::assemble_mode_generator;
use crate::par;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

type C64 = Complex64;
const ZERO: C64 = C64::new(0.0, 0.0);

/// Modes `n κ e₁`, `n = −M..M`, of a field depending on `x₁` only.
#[derive(Clone, Debug, PartialEq)]
pub struct SlabField {
    pub kappa: f64,
    pub modes: usize,
    /// `values[n + M]` holds the nodal values at frequency `n κ`.
    pub values: Vec<Vec<C64>>,
    pub t: f64,
}

/// Relative tolerance of the Hermitian-symmetry check.
pub const HERMITIAN_TOL: f64 = 1e-12;

impl SlabField {
    pub fn new(kappa: f64, modes: usize, values: Vec<Vec<C64>>) -> Result<Self> {
        if !(kappa > 0.0) || values.len() != 2 * modes + 1 {
            return invalid(format!("slab needs κ > 0 and {} modes, got {}", 2 * modes + 1, values.len()));
        }
        let f = Self { kappa, modes, values, t: 0.0 };
        let scale = f.values.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        if f.hermitian_defect() > HERMITIAN_TOL * scale {
            return invalid("slab values violate values(−k) = conj(values(k))");
        }
        Ok(f)
    }

    /// Builds the field from the modes `n = 0..M`; mode 0 keeps its real part.
    pub fn from_nonnegative(kappa: f64, half: Vec<Vec<C64>>) -> Result<Self> {
        if half.is_empty() {
            return invalid("need at least the zero mode");
        }
        let modes = half.len() - 1;
        let mut values = vec![Vec::new(); 2 * modes + 1];
        for (n, v) in half.into_iter().enumerate() {
            if n == 0 {
                values[modes] = v.iter().map(|z| C64::new(z.re, 0.0)).collect();
            } else {
                values[modes - n] = v.iter().map(|z| z.conj()).collect();
                values[modes + n] = v;
            }
        }
        Self::new(kappa, modes, values)
    }

    pub fn zeros(kappa: f64, modes: usize, len: usize) -> Self {
        Self { kappa, modes, values: vec![vec![ZERO; len]; 2 * modes + 1], t: 0.0 }
    }

    pub fn freq(&self, n: i64) -> [f64; 3] {
        [n as f64 * self.kappa, 0.0, 0.0]
    }

    pub fn mode(&self, n: i64) -> &[C64] {
        &self.values[(n + self.modes as i64) as usize]
    }

    pub fn hermitian_defect(&self) -> f64 {
        let m = self.modes as i64;
        (0..=m)
            .flat_map(|n| {
                let (a, b) = (self.mode(n), self.mode(-n));
                a.iter().zip(b).map(|(x, y)| (x - y.conj()).norm()).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// `sup_p w(p) Σ_n |f̂_n(p)|`, which bounds `sup_{x,p} w|f|`.
    pub fn weighted_sup(&self, w: &[f64]) -> f64 {
        (0..w.len())
            .map(|p| w[p] * self.values.iter().map(|v| v[p].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `Σ_n ‖f̂_n‖²` (Parseval for the periodic slab).
    pub fn l2_sq(&self, grid: &MomentumGrid) -> f64 {
        self.values.iter().map(|v| grid.norm_sq(v)).sum()
    }

    /// Applies `f` to every mode `(index, values)`.
    pub fn map(&self, f: impl Fn(usize, &[C64]) -> Vec<C64>) -> Self {
        Self { kappa: self.kappa, modes: self.modes, values: self.values.iter().enumerate().map(|(i, v)| f(i, v)).collect(), t: self.t }
    }

    fn diff_sup(&self, o: &Self, w: &[f64]) -> f64 {
        let d = self.map(|i, v| v.iter().zip(&o.values[i]).map(|(a, b)| a - b).collect());
        d.weighted_sup(w)
    }
}

/// Tables for the quadratic term on one grid.
#[derive(Clone, Debug)]
pub struct NonlinearOperator {
    pub tensor: GainTensor,
    /// `R(G) = loss · G`.
    pub loss: DMatrix<f64>,
    grid: std::sync::Arc<MomentumGrid>,
    sqrt_w: Vec<f64>,
    null_basis: DMatrix<f64>,
}

impl NonlinearOperator {
    pub fn new(m: &OperatorMatrices) -> Result<Self> {
        Ok(Self {
            tensor: m.engine.gain_tensor()?,
            loss: loss_matrix(&m.engine),
            grid: m.grid().clone(),
            sqrt_w: m.sqrt_w.clone(),
            null_basis: m.null_basis.clone(),
        })
    }

    pub fn grid(&self) -> &MomentumGrid {
        &self.grid
    }

    fn remove_invariants(&self, h: &[C64]) -> Vec<C64> {
        let n = h.len();
        let xr = DVector::from_iterator(n, h.iter().zip(&self.sqrt_w).map(|(v, s)| v.re * s));
        let xi = DVector::from_iterator(n, h.iter().zip(&self.sqrt_w).map(|(v, s)| v.im * s));
        let yr = &xr - &self.null_basis * (self.null_basis.tr_mul(&xr));
        let yi = &xi - &self.null_basis * (self.null_basis.tr_mul(&xi));
        (0..n).map(|i| C64::new(yr[i], yi[i]) / self.sqrt_w[i]).collect()
    }

    /// `Γ̂(n) = Σ_{n'} Γ(f̂(n'), f̂(n−n'))` with invariants removed, for all modes.
    pub fn gamma_hat(&self, f: &SlabField) -> SlabField {
        let n = self.grid.len();
        let m = f.modes as i64;
        let sj = self.grid.sqrt_maxwellian();
        let rho: Vec<Vec<C64>> = f.values.iter().map(|v| v.iter().zip(sj).map(|(a, b)| a / b).collect()).collect();
        let sqf: Vec<Vec<C64>> = f.values.iter().map(|v| v.iter().zip(sj).map(|(a, b)| a * b).collect()).collect();
        // Loss collision rates R(√J f̂(m)) for every mode.
        let rates: Vec<Vec<C64>> = par::map_slice(&sqf, |v| {
            let re = DVector::from_iterator(n, v.iter().map(|z| z.re));
            let im = DVector::from_iterator(n, v.iter().map(|z| z.im));
            let (a, b) = (&self.loss * re, &self.loss * im);
            (0..n).map(|i| C64::new(a[i], b[i])).collect()
        });
        let idx = |k: i64| (k + m) as usize;
        let pairs = |k: i64| ((-m).max(k - m)..=m.min(k + m)).map(move |a| (a, k - a));
        let cols = (m + 1) as usize;
        let mut br = DMatrix::zeros(n * n, cols);
        let mut bi = DMatrix::zeros(n * n, cols);
        for k in 0..=m {
            let (mut cr, mut ci) = (vec![0.0; n * n], vec![0.0; n * n]);
            for (a, b) in pairs(k) {
                let (x, y) = (&rho[idx(a)], &rho[idx(b)]);
                for r in 0..n {
                    if x[r] == ZERO {
                        continue;
                    }
                    for s in 0..n {
                        let z = x[r] * y[s];
                        cr[r * n + s] += z.re;
                        ci[r * n + s] += z.im;
                    }
                }
            }
            br.set_column(k as usize, &DVector::from_vec(cr));
            bi.set_column(k as usize, &DVector::from_vec(ci));
        }
        let (gr, gi) = self.tensor.contract_batch(&br, &bi);
        let mut half = Vec::with_capacity(cols);
        for k in 0..=m {
            let mut out: Vec<C64> = (0..n).map(|i| C64::new(gr[(i, k as usize)], gi[(i, k as usize)]) * sj[i]).collect();
            for (a, b) in pairs(k) {
                let (x, r) = (&f.values[idx(a)], &rates[idx(b)]);
                for i in 0..n {
                    out[i] -= x[i] * r[i];
                }
            }
            half.push(self.remove_invariants(&out));
        }
        let mut g = SlabField::from_nonnegative(f.kappa, half).expect("mode count matches");
        // Mode 0 of a Hermitian field is already real up to rounding.
        g.t = f.t;
        g
    }

    /// `Q₊(F,G)` for nonnegative physical distributions.
    pub fn q_plus(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        self.tensor.q_plus(f, g)
    }

    pub fn loss_rate(&self, g: &[f64]) -> Vec<f64> {
        (&self.loss * DVector::from_column_slice(g)).iter().copied().collect()
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PicardOptions {
    pub horizon: f64,
    pub dt: f64,
    pub iterations: usize,
    pub ell: f64,
    /// Exponent `k` of the time weight `(1+t)^k` in the iteration norm.
    pub time_decay: f64,
    /// Largest admissible `sup_p w_{ℓ+k} Σ|f̂₀|`.
    pub smallness: f64,
}

#[derive(Clone, Debug)]
pub struct PicardReport {
    pub data_norm: f64,
    pub smallness: f64,
    /// Weighted sup norm of successive iterate differences.
    pub increments: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Largest weighted sup norm of the final iterate (ball radius).
    pub radius: f64,
    pub linear: Vec<SlabField>,
    pub nonlinear: Vec<SlabField>,
}

impl PicardReport {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }
}

struct SlabPropagator {
    /// Scaled-coordinate `U(dt)` for modes `n = 0..M`.
    steps: Vec<SplitMatrix>,
    sqrt_w: Vec<f64>,
}

impl SlabPropagator {
    fn new(m: &OperatorMatrices, kappa: f64, modes: usize, dt: f64) -> Self {
        let steps = par::map_indexed(modes + 1, |n| expm(&assemble_mode_generator(m, [n as f64 * kappa, 0.0, 0.0]).scale(dt)));
        Self { steps, sqrt_w: m.sqrt_w.clone() }
    }

    fn apply(&self, f: &SlabField) -> SlabField {
        let m = f.modes as i64;
        let half: Vec<Vec<C64>> = (0..=m)
            .map(|n| {
                let x: Vec<C64> = f.mode(n).iter().zip(&self.sqrt_w).map(|(v, s)| v * s).collect();
                let y = self.steps[n as usize].matvec(&x);
                y.iter().zip(&self.sqrt_w).map(|(v, s)| v / s).collect()
            })
            .collect();
        let mut g = SlabField::from_nonnegative(f.kappa, half).expect("mode count matches");
        g.t = f.t;
        g
    }
}

fn axpy(a: &SlabField, s: f64, b: &SlabField) -> SlabField {
    a.map(|i, v| v.iter().zip(&b.values[i]).map(|(x, y)| x + y * s).collect())
}

fn weights(grid: &MomentumGrid, ell: f64, b: f64) -> Result<Vec<f64>> {
    let ws = WeightSpec::new(ell, b, 0.0)?;
    Ok(grid.energies().iter().map(|e| ws.momentum_weight(*e)).collect())
}

/// Runs the iteration without enforcing contraction.
pub fn picard_run(m: &OperatorMatrices, nl: &NonlinearOperator, f0: &SlabField, opts: &PicardOptions) -> Result<PicardReport> {
    let steps = (opts.horizon / opts.dt).round() as usize;
    if steps == 0 || opts.iterations == 0 {
        return invalid("Picard iteration needs a positive horizon and iteration count");
    }
    let grid = m.grid();
    let b = m.engine.model().b_exponent;
    let w = weights(grid, opts.ell, b)?;
    let wk = weights(grid, opts.ell + opts.time_decay, b)?;
    let data_norm = f0.weighted_sup(&wk);
    let prop = SlabPropagator::new(m, f0.kappa, f0.modes, opts.dt);
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * opts.dt).collect();
    let tw: Vec<f64> = times.iter().map(|t| (1.0 + t).powf(opts.time_decay)).collect();
    let mut linear = vec![f0.clone()];
    for i in 0..steps {
        let mut next = prop.apply(&linear[i]);
        next.t = times[i + 1];
        linear.push(next);
    }
    let norm_diff = |a: &[SlabField], c: &[SlabField]| -> f64 {
        (0..a.len()).map(|i| tw[i] * a[i].diff_sup(&c[i], &w)).fold(0.0, f64::max)
    };
    let mut current = linear.clone();
    let mut increments = Vec::new();
    let half_dt = 0.5 * opts.dt;
    for _ in 0..opts.iterations {
        let g: Vec<SlabField> = current.iter().map(|f| nl.gamma_hat(f)).collect();
        // Trapezoid Duhamel: I_{i+1} = U(dt)[I_i + dt/2 g_i] + dt/2 g_{i+1}.
        let mut integral = SlabField::zeros(f0.kappa, f0.modes, grid.len());
        let mut next = vec![linear[0].clone()];
        for i in 0..steps {
            integral = axpy(&prop.apply(&axpy(&integral, half_dt, &g[i])), half_dt, &g[i + 1]);
            let mut f = axpy(&linear[i + 1], 1.0, &integral);
            f.t = times[i + 1];
            next.push(f);
        }
        increments.push(norm_diff(&next, &current));
        current = next;
    }
    let ratios = increments.windows(2).map(|p| if p[0] > 0.0 { p[1] / p[0] } else { 0.0 }).collect();
    let radius = current.iter().zip(&tw).map(|(f, t)| t * f.weighted_sup(&w)).fold(0.0, f64::max);
    Ok(PicardReport { data_norm, smallness: opts.smallness, increments, ratios, radius, linear, nonlinear: current })
}

/// [`picard_run`] with the smallness precondition and the contraction test.
pub fn picard_iterate(m: &OperatorMatrices, nl: &NonlinearOperator, f0: &SlabField, opts: &PicardOptions) -> Result<PicardReport> {
    let b = m.engine.model().b_exponent;
    let data_norm = f0.weighted_sup(&weights(m.grid(), opts.ell + opts.time_decay, b)?);
    if data_norm > opts.smallness {
        return Err(Error::DataTooLarge(format!("data norm {data_norm:e} exceeds the smallness threshold {:e}", opts.smallness)));
    }
    let r = picard_run(m, nl, f0, opts)?;
    if let Some(bad) = r.ratios.iter().find(|v| **v >= 1.0) {
        return Err(Error::DataTooLarge(format!(
            "contraction ratio {bad:.3} ≥ 1 at data norm {data_norm:e} (threshold {:e})",
            opts.smallness
        )));
    }
    Ok(r)
}

/// Largest amplitude `a ≤ a_max` (by bisection) for which `a·profile`
/// contracts; returns `(a, data norm at a)`.
pub fn calibrate_smallness(
    m: &OperatorMatrices,
    nl: &NonlinearOperator,
    profile: &SlabField,
    opts: &PicardOptions,
    a_max: f64,
    bisections: usize,
) -> Result<(f64, f64)> {
    let test = |a: f64| -> Result<bool> {
        let f = profile.map(|_, v| v.iter().map(|z| z * a).collect());
        let r = picard_run(m, nl, &f, opts)?;
        Ok(r.ratios.iter().all(|v| *v < 1.0))
    };
    let (mut lo, mut hi) = (0.0, a_max);
    if test(hi)? {
        lo = hi;
    } else {
        for _ in 0..bisections {
            let mid = 0.5 * (lo + hi);
            if test(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let b = m.engine.model().b_exponent;
    let wk = weights(m.grid(), opts.ell + opts.time_decay, b)?;
    Ok((lo, profile.weighted_sup(&wk) * lo))
}

/// Exponential rates of `Σ‖f̂_n‖²` for the linear and nonlinear trajectories.
pub fn slab_decay_rates(grid: &MomentumGrid, r: &PicardReport, window: FitWindow) -> Result<(DecayFit, DecayFit)> {
    let series = |tr: &[SlabField]| -> Vec<(f64, f64)> { tr.iter().map(|f| (f.t, f.l2_sq(grid))).collect() };
    Ok((fit_exponential_rate(&series(&r.linear), window)?, fit_exponential_rate(&series(&r.nonlinear), window)?))
}

/// Spatially homogeneous distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct HomogeneousState {
    pub f: Vec<f64>,
    pub t: f64,
}

/// Outer/inner cadence of [`positivity_iterate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cadence {
    /// One outer update per time step.
    PerStep,
    /// Whole-trajectory outer iterations, seeded with `F₀` at all times,
    /// until the sup difference is below `tol`.
    Full { max_outer: usize, tol: f64 },
}

#[derive(Clone, Debug)]
pub struct PositivityReport {
    pub trajectory: Vec<HomogeneousState>,
    /// `max_{t,p} |F^{n+1} − F^n|` for `Full`; empty for `PerStep`.
    pub outer_differences: Vec<f64>,
    pub min_value: f64,
    /// Largest relative drift of mass, momentum, energy.
    pub moment_drift: [f64; 3],
}

/// `(1 − e^{−x})/x` with the limit 1 at 0.
fn phi1(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `F(t+dt) = e^{−R dt} F(t) + dt φ₁(R dt) Q₊`, nonnegative by construction.
fn gain_loss_step(nl: &NonlinearOperator, frozen: &[f64], f: &[f64], dt: f64) -> Vec<f64> {
    let q = nl.q_plus(frozen, frozen);
    let r = nl.loss_rate(frozen);
    (0..f.len()).map(|i| (-r[i] * dt).exp() * f[i] + dt * phi1(r[i] * dt) * q[i]).collect()
}

/// Gain and loss of the previous outer iterate at one time level.
struct Frozen {
    q: Vec<f64>,
    r: Vec<f64>,
}

impl Frozen {
    fn new(nl: &NonlinearOperator, f: &[f64]) -> Self {
        Self { q: nl.q_plus(f, f), r: nl.loss_rate(f) }
    }
}

/// One step with `R` averaged over the step and `Q₊` trapezoidal in `s`.
fn trapezoid_step(a: &Frozen, b: &Frozen, f: &[f64], dt: f64) -> Vec<f64> {
    (0..f.len())
        .map(|i| {
            let e = (-0.5 * (a.r[i] + b.r[i]) * dt).exp();
            e * f[i] + 0.5 * dt * (e * a.q[i] + b.q[i])
        })
        .collect()
}

pub fn moments(grid: &MomentumGrid, f: &[f64]) -> [f64; 5] {
    let mut out = [0.0; 5];
    for i in 0..f.len() {
        let w = grid.quad_weights()[i] * f[i];
        let c = grid.coords()[i];
        out[0] += w;
        out[1] += w * c[0];
        out[2] += w * c[1];
        out[3] += w * c[2];
        out[4] += w * grid.energies()[i];
    }
    out
}

pub fn positivity_iterate(nl: &NonlinearOperator, f0: &[f64], dt: f64, horizon: f64, cadence: Cadence) -> Result<PositivityReport> {
    let grid = nl.grid();
    if f0.len() != grid.len() {
        return invalid("initial distribution has the wrong length");
    }
    if let Some((i, v)) = f0.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return invalid(format!("initial distribution is negative ({v}) at node {i}"));
    }
    if !(dt > 0.0) || !(horizon > 0.0) {
        return invalid("need dt > 0 and horizon > 0");
    }
    let steps = (horizon / dt).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
    let mut outer_differences = Vec::new();
    let traj: Vec<Vec<f64>> = match cadence {
        Cadence::PerStep => {
            let mut out = vec![f0.to_vec()];
            for i in 0..steps {
                let next = gain_loss_step(nl, &out[i], &out[i], dt);
                out.push(next);
            }
            out
        }
        Cadence::Full { max_outer, tol } => {
            let mut prev: Vec<Vec<f64>> = vec![f0.to_vec(); steps + 1];
            for _ in 0..max_outer {
                let frozen: Vec<Frozen> = prev.iter().map(|f| Frozen::new(nl, f)).collect();
                let mut next = vec![f0.to_vec()];
                for i in 0..steps {
                    let v = trapezoid_step(&frozen[i], &frozen[i + 1], &next[i], dt);
                    next.push(v);
                }
                let d = next
                    .iter()
                    .zip(&prev)
                    .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                    .fold(0.0, f64::max);
                outer_differences.push(d);
                prev = next;
                if d < tol {
                    break;
                }
            }
            prev
        }
    };
    let min_value = traj.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let m0 = moments(grid, f0);
    let scale = [m0[0].abs(), (m0[1].powi(2) + m0[2].powi(2) + m0[3].powi(2)).sqrt().max(m0[0].abs()), m0[4].abs()];
    let mut drift = [0f64; 3];
    for f in &traj {
        let m = moments(grid, f);
        drift[0] = drift[0].max((m[0] - m0[0]).abs() / scale[0]);
        drift[1] = drift[1].max(((m[1] - m0[1]).powi(2) + (m[2] - m0[2]).powi(2) + (m[3] - m0[3]).powi(2)).sqrt() / scale[1]);
        drift[2] = drift[2].max((m[4] - m0[4]).abs() / scale[2]);
    }
    Ok(PositivityReport {
        trajectory: traj.into_iter().zip(times).map(|(f, t)| HomogeneousState { f, t }).collect(),
        outer_differences,
        min_value,
        moment_drift: drift,
    })
}

/// `−Σ w F ln F` with `0 ln 0 = 0`.
pub fn entropy(grid: &MomentumGrid, f: &[f64]) -> Result<f64> {
    if f.len() != grid.len() {
        return invalid("distribution has the wrong length");
    }
    let mut h = 0.0;
    for (v, w) in f.iter().zip(grid.quad_weights()) {
        if *v < 0.0 || !v.is_finite() {
            return invalid(format!("entropy needs F ≥ 0, got {v}"));
        }
        if *v > 0.0 {
            h -= w * v * v.ln();
        }
    }
    Ok(h)
}

/// Random `F ≥ 0` with the discrete mass, momentum and energy of `J`:
/// `J + s√J g` with `g ⊥` invariants and `s` keeping `F` nonnegative.
pub fn moment_matched_sample<R: Rng>(grid: &MomentumGrid, ops: &crate::macro_moments::MacroOps, rng: &mut R, fill: f64) -> Result<Vec<f64>> {
    let sj = grid.sqrt_maxwellian();
    let h: Vec<C64> = (0..grid.len()).map(|i| C64::new(rng.gen_range(-1.0..1.0) * sj[i].sqrt(), 0.0)).collect();
    let g: Vec<f64> = ops.project(&h)?.micro.iter().map(|z| z.re).collect();
    let jm = grid.maxwellian();
    let smax = (0..grid.len())
        .filter(|i| g[*i] * sj[*i] < 0.0)
        .map(|i| jm[i] / (-g[i] * sj[i]))
        .fold(f64::INFINITY, f64::min);
    let s = fill * if smax.is_finite() { smax } else { 1.0 };
    Ok((0..grid.len()).map(|i| (jm[i] + s * sj[i] * g[i]).max(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi1_limits() {
        assert_eq!(phi1(0.0), 1.0);
        assert!((phi1(1e-3) - (1.0 - 5e-4 + 1e-6 / 6.0 - 1e-9 / 24.0)).abs() < 1e-14);
        assert!((phi1(2.0) - (1.0 - (-2f64).exp()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn hermitian_completion() {
        let half = vec![vec![C64::new(1.0, 0.0)], vec![C64::new(0.5, 0.25)]];
        let f = SlabField::from_nonnegative(0.5, half).unwrap();
        assert_eq!(f.mode(-1)[0], C64::new(0.5, -0.25));
        assert_eq!(f.hermitian_defect(), 0.0);
        let bad = vec![vec![C64::new(1.0, 0.0)], vec![C64::new(0.0, 1.0)], vec![C64::new(0.0, 1.0)]];
        assert!(SlabField::new(0.5, 1, bad).is_err());
    }
}
