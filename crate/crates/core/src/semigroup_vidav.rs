//! Damped transport `Ĝ(t)`, the twice-iterated Duhamel expansion of the
//! full semigroup into `H₁..H₅`, and the weighted sup-norm surrogate.

use crate::analysis::{fit_decay_exponent, poly_e_constant, DecayFit, FitWindow};
use crate::discretization::MomentumGrid;
use crate::error::{invalid, Error, Result};
use crate::kernel_ops::OperatorMatrices;
use crate::kinematics::WeightSpec;
use crate::linalg::{expm, SplitMatrix};
use crate::mode_dynamics::{ModeState, ModeSweep, RateSpec};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

type C64 = Complex64;

/// `values(p) ↦ e^{−(ν(p) + i p̂·k)t} values(p)`.
pub fn apply_g(m: &OperatorMatrices, state: &ModeState, t: f64) -> Result<ModeState> {
    if !(t >= 0.0) {
        return invalid(format!("G(t) needs t ≥ 0, got {t}"));
    }
    let sym = transport_symbol(m.grid(), &m.nu, state.freq);
    let values = state.values.iter().zip(&sym).map(|(v, s)| v * (-s * t).exp()).collect();
    Ok(ModeState { freq: state.freq, values, t: state.t + t })
}

fn transport_symbol(grid: &MomentumGrid, nu: &[f64], k: [f64; 3]) -> Vec<C64> {
    grid.coords()
        .iter()
        .zip(grid.energies())
        .zip(nu)
        .map(|((c, e), n)| C64::new(*n, (c[0] * k[0] + c[1] * k[1] + c[2] * k[2]) / e))
        .collect()
}

/// Operators entering the expansion, in scaled coordinates.
#[derive(Clone, Debug)]
pub struct VidavSystem {
    pub grid: Arc<MomentumGrid>,
    pub nu: Vec<f64>,
    pub k_one_minus_chi: DMatrix<f64>,
    pub k_chi: DMatrix<f64>,
}

impl VidavSystem {
    pub fn from_matrices(m: &OperatorMatrices) -> Self {
        Self {
            grid: m.grid().clone(),
            nu: m.nu.clone(),
            k_one_minus_chi: m.k_one_minus_chi.clone(),
            k_chi: m.k_chi.clone(),
        }
    }

    /// Same transport and damping with the compact part removed.
    pub fn without_kernel(m: &OperatorMatrices) -> Self {
        let n = m.len();
        Self { grid: m.grid().clone(), nu: m.nu.clone(), k_one_minus_chi: DMatrix::zeros(n, n), k_chi: DMatrix::zeros(n, n) }
    }

    fn generator(&self, k: [f64; 3]) -> SplitMatrix {
        let sym = transport_symbol(&self.grid, &self.nu, k);
        let mut re = &self.k_one_minus_chi + &self.k_chi;
        let mut im = DMatrix::zeros(self.nu.len(), self.nu.len());
        for (i, s) in sym.iter().enumerate() {
            re[(i, i)] -= s.re;
            im[(i, i)] = -s.im;
        }
        SplitMatrix { re, im }
    }
}

/// Terms of the expansion at one `(freq, t)`.
#[derive(Clone, Debug)]
pub struct VidavTerms {
    pub freq: [f64; 3],
    pub t: f64,
    pub steps: usize,
    /// Scaled-coordinate values of `H₁..H₅`.
    pub h: [Vec<C64>; 5],
    pub u: Vec<C64>,
    pub residual: f64,
    pub one_level_residual: f64,
    pub budget: f64,
}

impl VidavTerms {
    pub fn norms(&self) -> [f64; 5] {
        std::array::from_fn(|i| l2(&self.h[i]))
    }

    pub fn dominant_term(&self) -> usize {
        let n = self.norms();
        (0..5).max_by(|a, b| n[*a].total_cmp(&n[*b])).unwrap() + 1
    }
}

fn l2(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// `∫₀^{s_i} Ĝ(s_i − τ) X(τ) dτ` at every node `s_i = ih`, for the columns
/// of `xs`. Even nodes use composite Simpson, odd nodes a 3/8 first panel
/// (or the four-point rule at `i = 1`), advanced by the exact shift `Ĝ(2h)`.
fn cumulative_convolution(sym: &[C64], h: f64, xs: &SplitMatrix) -> SplitMatrix {
    let (n, m) = (xs.nrows(), xs.ncols());
    let gt = |j: f64| -> Vec<C64> { sym.iter().map(|s| (-s * (j * h)).exp()).collect() };
    let g: Vec<Vec<C64>> = (0..=3).map(|j| gt(j as f64)).collect();
    let gm = [gt(-1.0), gt(-2.0)];
    let x = |j: usize, p: usize| C64::new(xs.re[(p, j)], xs.im[(p, j)]);
    let mut out = SplitMatrix::zeros(n, m);
    let put = |i: usize, v: &[C64], o: &mut SplitMatrix| {
        for p in 0..n {
            o.re[(p, i)] = v[p].re;
            o.im[(p, i)] = v[p].im;
        }
    };
    let mut prev: [Vec<C64>; 2] = [vec![C64::new(0.0, 0.0); n], vec![C64::new(0.0, 0.0); n]];
    for i in 1..m {
        let v: Vec<C64> = (0..n)
            .map(|p| match i {
                1 => {
                    let w = [9.0, 19.0, -5.0, 1.0];
                    let gs = [g[1][p], g[0][p], gm[0][p], gm[1][p]];
                    (0..4.min(m)).map(|j| gs[j] * x(j, p) * w[j]).sum::<C64>() * (h / 24.0)
                }
                2 => (g[2][p] * x(0, p) + g[1][p] * x(1, p) * 4.0 + x(2, p)) * (h / 3.0),
                3 => (g[3][p] * x(0, p) + (g[2][p] * x(1, p) + g[1][p] * x(2, p)) * 3.0 + x(3, p)) * (3.0 * h / 8.0),
                _ => {
                    g[2][p] * prev[i % 2][p]
                        + (g[2][p] * x(i - 2, p) + g[1][p] * x(i - 1, p) * 4.0 + x(i, p)) * (h / 3.0)
                }
            })
            .collect();
        put(i, &v, &mut out);
        prev[i % 2] = v;
    }
    out
}

/// Budget constant `C` in `residual ≤ C h⁴ t ν_max⁴ ‖f̂₀‖ / 180`.
pub const VIDAV_BUDGET_CONST: f64 = 1.0;

/// Computes `H₁..H₅` by composite fourth-order time quadrature with
/// `steps` intervals on `[0, t]`; no budget check.
pub fn vidav_expand(sys: &VidavSystem, f0: &[C64], freq: [f64; 3], t: f64, steps: usize) -> Result<VidavTerms> {
    if steps < 4 || !(t > 0.0) {
        return invalid("need t > 0 and at least 4 quadrature steps");
    }
    let n = sys.nu.len();
    if f0.len() != n {
        return invalid(format!("expected {n} values, got {}", f0.len()));
    }
    let h = t / steps as f64;
    let sym = transport_symbol(&sys.grid, &sys.nu, freq);
    let step = expm(&sys.generator(freq).scale(h));
    let mut cols = vec![f0.to_vec()];
    for _ in 0..steps {
        let x = SplitMatrix::from_columns(&[cols.last().unwrap().clone()]);
        cols.push(step.mul(&x).column(0));
    }
    let us = SplitMatrix::from_columns(&cols);
    let gs = SplitMatrix::from_columns(
        &(0..=steps)
            .map(|j| sym.iter().zip(f0).map(|(s, v)| (-s * (j as f64 * h)).exp() * v).collect())
            .collect::<Vec<_>>(),
    );
    let k_omc_u = us.mul_real_left(&sys.k_one_minus_chi);
    let k_chi_u = us.mul_real_left(&sys.k_chi);
    let inner_omc = cumulative_convolution(&sym, h, &k_omc_u);
    let inner_chi = cumulative_convolution(&sym, h, &k_chi_u);
    let last = |x: &SplitMatrix| x.column(steps);
    let h1 = last(&gs);
    let h2 = last(&inner_omc);
    let h3 = last(&cumulative_convolution(&sym, h, &gs.mul_real_left(&sys.k_chi)));
    let h4 = last(&cumulative_convolution(&sym, h, &inner_omc.mul_real_left(&sys.k_chi)));
    let h5 = last(&cumulative_convolution(&sym, h, &inner_chi.mul_real_left(&sys.k_chi)));
    let u = last(&us);
    let h_chi = last(&inner_chi);
    let diff = |parts: &[&Vec<C64>]| -> f64 {
        l2(&(0..n).map(|p| u[p] - parts.iter().map(|v| v[p]).sum::<C64>()).collect::<Vec<_>>())
    };
    let residual = diff(&[&h1, &h2, &h3, &h4, &h5]);
    let one_level_residual = diff(&[&h1, &h2, &h_chi]);
    let nu_max = sys.nu.iter().copied().fold(0.0, f64::max);
    let budget = VIDAV_BUDGET_CONST * h.powi(4) * t * nu_max.powi(4) * l2(f0) / 180.0;
    Ok(VidavTerms { freq, t, steps, h: [h1, h2, h3, h4, h5], u, residual, one_level_residual, budget })
}

/// [`vidav_expand`] followed by the budget check.
pub fn vidav_terms(sys: &VidavSystem, f0: &[C64], freq: [f64; 3], t: f64, steps: usize) -> Result<VidavTerms> {
    let v = vidav_expand(sys, f0, freq, t, steps)?;
    if v.residual > v.budget {
        return Err(Error::ExpansionMismatch(format!(
            "residual {:e} exceeds budget {:e} at |k| = {}, t = {}; dominant term H{}",
            v.residual,
            v.budget,
            (freq[0] * freq[0] + freq[1] * freq[1] + freq[2] * freq[2]).sqrt(),
            t,
            v.dominant_term()
        )));
    }
    Ok(v)
}

/// Sup-norm surrogate series and its fitted exponent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupNormReport {
    pub series: Vec<(f64, f64)>,
    pub fit: DecayFit,
    pub decay_order: f64,
    pub target: f64,
}

/// `sup_p w_ℓ(p) (∫|f̂(t,k,p)|² dk)^{1/2}` per snapshot.
pub fn supnorm_series(sweep: &ModeSweep, grid: &MomentumGrid, ell: f64, b_exponent: f64) -> Result<Vec<(f64, f64)>> {
    sweep.check_resolution()?;
    let ws = WeightSpec::new(ell, b_exponent, 0.0)?;
    let w: Vec<f64> = grid.energies().iter().map(|e| ws.momentum_weight(*e)).collect();
    Ok(sweep
        .times
        .iter()
        .enumerate()
        .map(|(n, &t)| {
            let mut acc = vec![0.0; grid.len()];
            for (j, rw) in sweep.radial_weights.iter().enumerate() {
                for (p, v) in sweep.trajectories[j][n].iter().enumerate() {
                    acc[p] += rw * v.norm_sqr();
                }
            }
            let s = acc.iter().zip(&w).map(|(a, w)| w * a.sqrt()).fold(0.0, f64::max);
            (t, s)
        })
        .collect())
}

pub fn weighted_supnorm_decay(
    sweep: &ModeSweep,
    grid: &MomentumGrid,
    ell: f64,
    b_exponent: f64,
    rate: &RateSpec,
    decay_order: f64,
    window: FitWindow,
) -> Result<SupNormReport> {
    let sigma0 = 1.5 * (1.0 / rate.r - 0.5);
    if !(ell >= 0.0) || !(0.0..=sigma0 + 1e-12).contains(&decay_order) {
        return invalid(format!("need ℓ ≥ 0 and decay order in [0, {sigma0}]"));
    }
    let series = supnorm_series(sweep, grid, ell, b_exponent)?;
    let fit = fit_decay_exponent(&series, window)?;
    Ok(SupNormReport { series, fit, decay_order, target: sigma0 })
}

/// Largest sampled `e^{−ν t}(1+t)^k / (C_k w_k)`, with `C_k` from the
/// closed-form maximizer maximized over nodes; at most 1.
pub fn poly_e_check(nu: &[f64], grid: &MomentumGrid, b_exponent: f64, k: f64, times: &[f64]) -> Result<f64> {
    let ws = WeightSpec::new(k, b_exponent, 0.0)?;
    let w: Vec<f64> = grid.energies().iter().map(|e| ws.momentum_weight(*e)).collect();
    let ck = nu.iter().zip(&w).map(|(n, w)| poly_e_constant(*n, *w, k)).fold(0.0, f64::max);
    let mut worst = 0f64;
    for &t in times {
        for (n, wp) in nu.iter().zip(&w) {
            worst = worst.max((-n * t).exp() * (1.0 + t).powf(k) / (ck * wp));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_convolution_matches_closed_form() {
        // X(τ) = e^{cτ} with scalar symbol s: ∫₀ᵗ e^{−s(t−τ)} e^{cτ} dτ = (e^{ct} − e^{−st})/(c + s).
        let sym = [C64::new(0.7, 0.3)];
        let c = C64::new(-0.2, 0.5);
        let h = 0.01;
        let m = 301;
        let xs = SplitMatrix::from_columns(&(0..m).map(|j| vec![(c * (j as f64 * h)).exp()]).collect::<Vec<_>>());
        let out = cumulative_convolution(&sym, h, &xs);
        for i in [1, 2, 3, 4, 7, 300] {
            let t = i as f64 * h;
            let exact = ((c * t).exp() - (-sym[0] * t).exp()) / (c + sym[0]);
            let got = C64::new(out.re[(0, i)], out.im[(0, i)]);
            assert!((got - exact).norm() < 1e-9, "i={i}: {got} vs {exact}");
        }
    }
}
